import importlib
import json
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from cgdreg import InvalidArgument, NonFiniteLoss, PointCloud, RigidTransform
from cgdreg.embedder import checkpoint
from cgdreg.geometry import apply, euler_from_rotation, rotation_rmse, translation_rmse
from cgdreg.harness import (
    AugmentSpec,
    augment,
    dump_config,
    evaluate,
    from_pairs,
    generate_shape,
    icp,
    make_eval_pair,
    make_pair,
    make_training_pair,
    parse_config_text,
    partial_view,
    read_cloud,
    train,
    write_cloud,
)
from cgdreg.harness import config as config_mod
from cgdreg.harness.data import id_match

train_mod = importlib.import_module("cgdreg.harness.train")

from conftest import rz

SMALL = {"num_shapes": "3", "num_points": "128", "epochs": "5", "eval_pairs": "3"}


# ---------------------------------------------------------------------------
# shapes


@pytest.mark.parametrize("kind", ["torus", "bent_l", "blob", "stair"])
def test_shapes_are_normalized_and_seeded(kind):
    a = generate_shape(kind, 256, 7)
    b = generate_shape(kind, 256, 7)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, generate_shape(kind, 256, 8).points)
    assert np.linalg.norm(a.points.mean(axis=0)) < 1e-9
    assert abs(np.linalg.norm(a.points, axis=1).max() - 1) < 1e-9
    assert np.array_equal(a.ids, np.arange(256))


def test_torus_points_lie_on_the_surface():
    from cgdreg.harness.data import normalize, torus_surface

    raw = torus_surface(512, np.random.default_rng(0))
    ring = np.sqrt(raw[:, 0] ** 2 + raw[:, 1] ** 2)
    assert np.abs((ring - 1.0) ** 2 + raw[:, 2] ** 2 - 0.35**2).max() < 1e-9
    # the dataset shape is exactly the normalized raw sample
    assert np.array_equal(generate_shape("torus", 512, 0).points, normalize(raw)[0])


def test_generate_shape_errors():
    with pytest.raises(InvalidArgument):
        generate_shape("cube", 128, 0)
    with pytest.raises(InvalidArgument):
        generate_shape("blob", 10, 0)


# ---------------------------------------------------------------------------
# views and augmentation


def test_partial_view_examples():
    line = PointCloud(np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)]), np.arange(10))
    assert np.array_equal(partial_view(line, [1.0, 0, 0], 1.0).points, line.points)
    assert np.array_equal(partial_view(line, [1.0, 0, 0], 0.6).ids, np.arange(4, 10))
    uniform = PointCloud(np.column_stack([np.linspace(0, 1, 101), np.zeros(101), np.zeros(101)]),
                         np.arange(101))
    a = partial_view(uniform, [1.0, 0, 0], 0.6)
    b = partial_view(uniform, [-1.0, 0, 0], 0.6)
    assert np.intersect1d(a.ids, b.ids).size <= 0.4 * 101
    with pytest.raises(InvalidArgument):
        partial_view(line, [2.0, 0, 0], 0.5)
    with pytest.raises(InvalidArgument):
        partial_view(line, [1.0, 0, 0], 0.0)


def test_augment_examples(rng):
    cloud = generate_shape("blob", 128, 0)
    out, T = augment(cloud, AugmentSpec(0, 0, 0, 1), rng)
    assert np.array_equal(out.points, cloud.points) and np.allclose(T.matrix(), np.eye(4))
    out, T = augment(cloud, AugmentSpec(), rng)
    assert np.array_equal(out.points, apply(T, cloud).points)
    assert np.array_equal(out.ids, cloud.ids)
    noisy, T = augment(cloud, AugmentSpec(noise_sigma=0.05), rng)
    resid = noisy.points - T.transform_points(cloud.points)
    assert 0.04 < resid.std() < 0.06


def test_augment_angles_are_uniform():
    from cgdreg.harness.data import random_transform

    rng = np.random.default_rng(0)
    spec = AugmentSpec(rot_max_deg=60.0, trans_range=0.5)
    draws = [random_transform(spec, rng) for _ in range(10_000)]
    angles = np.array([euler_from_rotation(T.rotation) for T in draws])
    trans = np.array([T.translation for T in draws])
    assert angles.min() >= 0 and angles.max() <= 60
    assert np.abs(trans).max() <= 0.5
    for axis in range(3):
        assert stats.kstest(angles[:, axis], stats.uniform(0, 60).cdf).pvalue > 0.01
        assert stats.kstest(trans[:, axis], stats.uniform(-0.5, 1.0).cdf).pvalue > 0.01


def test_training_pair_modes(rng):
    base = generate_shape("bent_l", 256, 1)
    spec = AugmentSpec(noise_sigma=0.01)
    for mode in ("partial", "full"):
        pair = make_training_pair(base, spec, rng, mode)
        assert len(pair.x) == len(pair.y) == (256 if mode == "full" else int(np.ceil(0.6 * 256)))
        assert np.array_equal(pair.x.ids, pair.y.ids)
        assert np.array_equal(pair.partner(), np.arange(len(pair.x)))
        resid = pair.y.points - pair.t_gt.transform_points(pair.x.points)
        assert np.abs(resid).max() < 6 * 0.01
    pair = make_training_pair(base, spec, rng, "two_views")
    m = pair.partner()
    has = m >= 0
    assert np.array_equal(pair.x.ids[has], pair.y.ids[m[has]])
    assert not np.isin(pair.x.ids[~has], pair.y.ids).any()
    with pytest.raises(InvalidArgument):
        make_training_pair(base, spec, rng, "three_views")
    assert isinstance(make_pair(base, spec, rng, "train").t_gt, RigidTransform)


def test_id_match():
    x = PointCloud(np.zeros((3, 3)) + np.arange(3)[:, None], np.array([4, 7, 9]))
    y = PointCloud(np.zeros((2, 3)) + np.arange(2)[:, None], np.array([9, 4]))
    assert id_match(x, y).tolist() == [1, -1, 0]


@pytest.mark.parametrize("sigma", [0.0, 0.01])
def test_eval_pair_truth_is_consistent(sigma):
    rng = np.random.default_rng(3)
    spec = AugmentSpec(noise_sigma=sigma)
    for seed in range(10):
        pair = make_eval_pair(generate_shape("stair", 256, seed), spec, rng)
        m = id_match(pair.x, pair.y)
        has = m >= 0
        assert has.sum() >= 3
        err = np.linalg.norm(pair.t_gt.transform_points(pair.x.points[has]) - pair.y.points[m[has]], axis=1)
        assert err.max() < max(3 * sigma * np.sqrt(2) * 3, 1e-12)


def test_eval_pair_full_overlap():
    base = generate_shape("blob", 128, 0)
    pair = make_pair(base, AugmentSpec(keep_fraction=1.0), np.random.default_rng(0), "eval")
    assert np.array_equal(np.sort(pair.x.ids), np.sort(pair.y.ids))
    m = id_match(pair.x, pair.y)
    assert np.allclose(pair.t_gt.transform_points(pair.x.points), pair.y.points[m], atol=1e-12)
    with pytest.raises(InvalidArgument):
        make_pair(base, AugmentSpec(), np.random.default_rng(0), "test")


# ---------------------------------------------------------------------------
# configuration and io


def test_config_round_trip():
    cfg = from_pairs({"seed": "3", "gamma": "1.5", "shape_kinds": "blob, stair", "eval_oracle": "false",
                      "input_norm": "cloud", "ri_k": "8", "train_pairs": "two_views"})
    assert cfg.consensus.gamma == 1.5 and cfg.consensus.seed == 3
    assert cfg.trainer.shape_kinds == ("blob", "stair") and cfg.eval.eval_oracle is False
    assert cfg.arch.in_dim == 12 and cfg.arch.input_norm == "cloud"
    assert parse_config_text(dump_config(cfg)) == cfg
    assert parse_config_text(dump_config(config_mod.Config())) == config_mod.Config()


def test_config_errors(tmp_path):
    with pytest.raises(InvalidArgument):
        from_pairs({"learning_rate": "1"})
    with pytest.raises(InvalidArgument):
        parse_config_text("seed = 1\nseed = 2\n")
    with pytest.raises(InvalidArgument):
        parse_config_text("just words\n")
    with pytest.raises(InvalidArgument):
        from_pairs({"eval_oracle": "maybe"})
    with pytest.raises(InvalidArgument):
        from_pairs({"train_pairs": "all"})
    path = tmp_path / "c.txt"
    path.write_text("# comment\nepochs = 3  # trailing\n\n")
    assert config_mod.load_config(path).trainer.epochs == 3


def test_learning_rate_schedule():
    t = config_mod.Config().trainer
    assert t.learning_rate(0) == 5e-4 and t.learning_rate(9) == 5e-4
    assert t.learning_rate(10) == pytest.approx(4.5e-4) and t.learning_rate(25) == pytest.approx(5e-4 * 0.81)


@pytest.mark.parametrize("suffix", [".xyz", ".ply"])
def test_cloud_io_round_trip(tmp_path, suffix, rng):
    cloud = PointCloud(rng.normal(size=(50, 3)))
    path = tmp_path / f"c{suffix}"
    write_cloud(cloud, path)
    assert np.array_equal(read_cloud(path).points, cloud.points)


def test_cloud_io_errors(tmp_path):
    bad = tmp_path / "bad.xyz"
    bad.write_text("1 2\n")
    with pytest.raises(InvalidArgument):
        read_cloud(bad)
    ply = tmp_path / "bin.ply"
    ply.write_text("ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(InvalidArgument):
        read_cloud(ply)
    extra = tmp_path / "extra.ply"
    extra.write_text("ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty float y\n"
                     "property float x\nproperty float z\nproperty uchar red\nend_header\n"
                     "1 2 3 255\n4 5 6 0\n")
    assert np.array_equal(read_cloud(extra).points, [[2, 1, 3], [5, 4, 6]])


# ---------------------------------------------------------------------------
# ICP


def test_icp_examples(rng):
    x = generate_shape("blob", 512, 0)
    T = icp(x, x)
    assert np.allclose(T.matrix(), np.eye(4))
    shifted = x.points + [0.01, 0, 0]
    T = icp(x, shifted)
    assert np.allclose(T.translation, [0.01, 0, 0], atol=1e-6) and rotation_rmse(T, RigidTransform.identity()) < 1e-6


def test_icp_often_fails_on_large_rotations_with_low_overlap():
    spec = AugmentSpec(rot_max_deg=60.0, keep_fraction=0.6)
    rng = np.random.default_rng(0)
    errs = []
    for seed in range(10):
        pair = make_eval_pair(generate_shape("bent_l", 256, seed), spec, rng)
        errs.append(rotation_rmse(icp(pair.x, pair.y), pair.t_gt))
    assert np.mean(np.array(errs) > 10) >= 0.3


# ---------------------------------------------------------------------------
# training and evaluation


def _small(**extra):
    return from_pairs({**SMALL, **extra})


def test_training_loss_decreases_on_a_fixed_batch():
    cfg = _small(epochs="5")
    rows = []
    train(cfg, progress=lambda row, p: rows.append(row["loss"]))
    assert len(rows) == 5
    assert rows[-1] < rows[0]


def test_training_is_deterministic(tmp_path):
    cfg = _small(epochs="2")
    train(cfg, out_dir=tmp_path / "a")
    train(cfg, out_dir=tmp_path / "b")
    a = (tmp_path / "a" / "checkpoint.cgdn").read_bytes()
    assert a == (tmp_path / "b" / "checkpoint.cgdn").read_bytes()
    curve = (tmp_path / "a" / "training_curve.csv").read_text().splitlines()
    assert curve[0] == "epoch,loss,loss_r,loss_sim,loss_c,lr" and len(curve) == 3


def test_zero_loss_weights_leave_params_unchanged():
    from cgdreg.embedder import init_params

    cfg = _small(epochs="2", lambda_r="0", lambda_sim="0", lambda_c="0")
    out = train(cfg)
    ref = init_params(cfg.arch, int(np.random.SeedSequence([cfg.seed, 2]).generate_state(1)[0]))
    assert all(np.array_equal(out.tensors[k], ref.tensors[k]) for k in ref.names())


def test_non_finite_loss_writes_a_dump(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        hx = args[0]
        return float("nan"), np.zeros_like(hx), np.zeros_like(args[1])

    monkeypatch.setattr(train_mod.losses, "contrastive", broken)
    with pytest.raises(NonFiniteLoss):
        train(_small(epochs="1"), out_dir=tmp_path)
    dump = json.loads((tmp_path / "nonfinite_dump.json").read_text())
    assert dump["epoch"] == 0 and len(dump["x"]) > 0


def test_evaluate_schema_and_determinism(tmp_path):
    cfg = _small(epochs="1")
    params = train(cfg, out_dir=tmp_path)
    a = evaluate(cfg, tmp_path / "checkpoint.cgdn")
    b = evaluate(cfg, params)
    assert set(a.methods) == {"cgd", "ransac", "chamfer", "icp", "oracle"}
    assert a.to_json() == b.to_json()
    for m, row in a.methods.items():
        assert row["aggregate"]["count"] == 3 and len(row["per_pair"]) == 3
    assert a.mean_rmse_r("oracle") < 1e-4
    path = a.write(tmp_path, "r.json")
    assert json.loads(path.read_text())["version"] == 1
    assert (tmp_path / "r_timings.json").exists()
    with pytest.raises(FileNotFoundError):
        evaluate(cfg, None)
    only_icp = evaluate(replace(cfg, eval=replace(cfg.eval, eval_oracle=False)), None, methods=("icp",))
    assert list(only_icp.methods) == ["icp"]
