"""Command line entry point: ``cgdreg {synth,train,register,eval,ablate}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .consensus import register
from .embedder import checkpoint
from .errors import RegistrationError
from .geometry import apply
from .harness import config as config_mod
from .harness.data import dataset, make_eval_pair
from .harness.evaluate import METHODS, evaluate
from .harness.io import read_cloud, write_cloud
from .harness.train import train

log = logging.getLogger("cgdreg")


def _config(args) -> config_mod.Config:
    cfg = config_mod.load_config(args.config) if args.config else config_mod.Config()
    pairs = dict(kv.split("=", 1) for kv in args.set)
    if args.seed is not None:
        pairs["seed"] = str(args.seed)
    return config_mod.from_pairs({k.strip(): v.strip() for k, v in pairs.items()}, cfg)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _progress_eval(i, row):
    log.info("pair %d: %s", i, " ".join(f"{m}={v:.2f}" for m, v in row.items()))


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = _out(args)
    kinds = tuple(args.kinds.split(",")) if args.kinds else cfg.trainer.shape_kinds
    shapes = dataset(kinds, args.count, cfg.trainer.num_points, cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    manifest = []
    for i, shape in enumerate(shapes):
        name = f"shape_{i:03d}_{kinds[i % len(kinds)]}"
        write_cloud(shape, out / f"{name}.{args.format}")
        entry = {"shape": f"{name}.{args.format}"}
        if args.pairs:
            pair = make_eval_pair(shape, cfg.augment, rng)
            write_cloud(pair.x, out / f"{name}_src.{args.format}")
            write_cloud(pair.y, out / f"{name}_tgt.{args.format}")
            entry.update(source=f"{name}_src.{args.format}", target=f"{name}_tgt.{args.format}",
                         rotation=pair.t_gt.rotation.tolist(), translation=pair.t_gt.translation.tolist())
        manifest.append(entry)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(shapes)} shapes to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(args)
    (out / "config.txt").write_text(config_mod.dump_config(cfg))
    train(cfg, out_dir=out)
    print(f"checkpoint: {out / 'checkpoint.cgdn'}")
    return 0


def cmd_register(args) -> int:
    cfg = _config(args)
    params = checkpoint.load(args.checkpoint)
    x, y = read_cloud(args.source), read_cloud(args.target)
    cons = replace(cfg.consensus, metric=args.metric)
    reg = register(x, y, params, cons, sampling=args.sampling)
    result = {"rotation": reg.transform.rotation.tolist(),
              "translation": reg.transform.translation.tolist(),
              "matrix": reg.transform.matrix().tolist(),
              "diagnostics": reg.diagnostics}
    if args.out:
        out = _out(args)
        (out / "registration.json").write_text(json.dumps(result, indent=2) + "\n")
        if args.write_aligned:
            write_cloud(apply(reg.transform, x), out / f"aligned{Path(args.source).suffix}")
    print(json.dumps({k: result[k] for k in ("rotation", "translation")}, indent=2))
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = _out(args)
    methods = tuple(args.methods.split(",")) if args.methods else METHODS
    report = evaluate(cfg, args.checkpoint, methods=methods, progress=_progress_eval)
    path = report.write(out, args.name)
    for m, row in report.methods.items():
        agg = row["aggregate"]
        print(f"{m:8s} mean RMSE(R) {agg['mean_rmse_r']:8.3f}  median {agg['median_rmse_r']:8.3f}  "
              f"mean RMSE(t) {agg['mean_rmse_t']:.4f}  failures {agg['failures']}")
    print(f"report: {path}")
    return 0


def cmd_ablate(args) -> int:
    """Full method, chamfer-consensus variant, uniform sampling, and the two loss ablations."""
    cfg = _config(args)
    out = _out(args)
    rows = {}
    if args.checkpoint:
        full = checkpoint.load(args.checkpoint)
    else:
        full = train(cfg, out_dir=out / "full")
    rep = evaluate(cfg, full, methods=("cgd", "chamfer", "ransac"), progress=_progress_eval)
    rep.write(out, "ablate_full.json")
    rows["full"] = rep.methods["cgd"]["aggregate"]
    rows["(i) chamfer consensus"] = rep.methods["chamfer"]["aggregate"]
    rows["uniform sampling"] = rep.methods["ransac"]["aggregate"]
    variants = {"(ii) no repulsion": {"lambda_r": 0.0}, "(iii) no similarity": {"lambda_sim": 0.0}}
    for name, change in variants.items():
        vcfg = replace(cfg, loss=replace(cfg.loss, **change))
        tag = "no_repulsion" if "lambda_r" in change else "no_similarity"
        params = train(vcfg, out_dir=out / tag)
        vrep = evaluate(vcfg, params, methods=("cgd",))
        vrep.write(out, f"ablate_{tag}.json")
        rows[name] = vrep.methods["cgd"]["aggregate"]
    (out / "ablation.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    for name, agg in rows.items():
        print(f"{name:24s} mean RMSE(R) {agg['mean_rmse_r']:8.3f}  mean RMSE(t) {agg['mean_rmse_t']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cgdreg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write synthetic shapes (and eval pairs)")
    s.add_argument("--count", type=int, default=4)
    s.add_argument("--kinds", help="comma separated shape kinds")
    s.add_argument("--format", choices=("xyz", "ply"), default="xyz")
    s.add_argument("--pairs", action="store_true", help="also write a source/target eval pair per shape")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train the embedder")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("register", parents=[common], help="register two cloud files")
    s.add_argument("source")
    s.add_argument("target")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--metric", choices=("cgd", "chamfer"), default="cgd")
    s.add_argument("--sampling", choices=("confidence", "uniform"), default="confidence")
    s.add_argument("--write-aligned", action="store_true")
    s.set_defaults(func=cmd_register, out=None)

    s = sub.add_parser("eval", parents=[common], help="evaluate all methods on the seeded eval set")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--methods", help=f"comma separated subset of {','.join(METHODS)}")
    s.add_argument("--name", default="eval_report.json")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", parents=[common], help="loss and consensus ablations")
    s.add_argument("--checkpoint", help="reuse a trained full model instead of training one")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (RegistrationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
