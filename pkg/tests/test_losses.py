import numpy as np
import pytest

from cgdreg import InvalidArgument, RigidTransform
from cgdreg.geometry import knn
from cgdreg.losses import (
    LossConfig,
    contrastive,
    repulsion_layer,
    repulsion_total,
    similarity,
    total,
    transform_discrepancy,
)

from conftest import rz
from gradcheck import STEP, agrees, central_difference

CFG = LossConfig()


# ---------------------------------------------------------------------------
# examples


def test_repulsion_examples():
    pts = np.array([[0.0, 0, 0], [2.0, 0, 0]])
    h = np.array([[1.0, 1.0], [2.0, 2.0]])
    assert repulsion_layer(pts, h, 2.0)[0] == pytest.approx(4.0)
    assert repulsion_layer(pts, np.eye(2), 2.0)[0] == 0.0
    assert repulsion_layer(np.zeros((2, 3)), h, 2.0)[0] == 0.0
    # anti-aligned embeddings are clamped, not rewarded
    assert repulsion_layer(pts, np.array([[1.0, 0], [-1.0, 0]]), 2.0)[0] == 0.0


def test_repulsion_errors():
    with pytest.raises(InvalidArgument):
        repulsion_layer(np.zeros((1, 3)), np.ones((1, 2)))
    with pytest.raises(InvalidArgument):
        repulsion_layer(np.eye(3), np.array([[1.0, 0], [0, 0], [0, 1.0]]))
    with pytest.raises(InvalidArgument):
        repulsion_total([], CFG)


def test_repulsion_total_weights_levels_by_index():
    pts = np.array([[0.0, 0, 0], [2.0, 0, 0]])
    four = (pts, np.ones((2, 2)))
    one = (pts / 4, np.ones((2, 2)))
    assert repulsion_layer(*one)[0] == pytest.approx(1.0)
    val, grads = repulsion_total([four], CFG)
    assert val == pytest.approx(4.0) and len(grads) == 1
    assert repulsion_total([four, one], CFG)[0] == pytest.approx(6.0)
    ortho = (np.eye(3), np.eye(3))
    assert repulsion_total([ortho, ortho], CFG)[0] == 0.0


def test_similarity_examples():
    pts = np.array([[0.0, 0, 0], [0.1, 0, 0], [5.0, 0, 0]])
    graph = np.array([[1], [0], [1]])  # 2 -> 1 is the only other edge
    h = np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 0, 1.0]])
    # neighbor pair (2,1) is orthogonal and attracts at 1/4.9
    val, _ = similarity(pts, h, graph, CFG)
    assert val == pytest.approx(1 / 4.9)
    pair = np.array([[0.0, 0, 0], [0.1, 0, 0]])
    mask = np.array([[False, True], [False, False]])
    assert similarity(pair, np.eye(2), mask, CFG)[0] == pytest.approx(10.0)
    # the non-neighbor direction (1,0) is orthogonal and adds nothing
    assert similarity(np.zeros((2, 3)), np.eye(2), mask, CFG)[0] == pytest.approx(1000.0)
    same = np.ones((2, 2))
    both = np.array([[False, True], [True, False]])
    assert similarity(pair, same, both, CFG)[0] == pytest.approx(0.0, abs=1e-12)


def test_contrastive_examples():
    eye = np.eye(4)
    empty = np.zeros((4, 0), dtype=int)
    assert contrastive(eye, eye, empty)[0] == 0.0
    # x rows orthogonal to all y rows: each i contributes |N_{y_i}| (self plus one neighbor)
    hx = np.hstack([np.zeros((4, 4)), np.eye(4)])
    hy = np.hstack([np.eye(4), np.zeros((4, 4))])
    ring = np.array([[1], [2], [3], [0]])
    assert contrastive(hx, hy, ring)[0] == pytest.approx(8.0)


def test_contrastive_sign_flip_of_a_repelled_pair():
    rng = np.random.default_rng(0)
    hx = rng.normal(size=(3, 4))
    hy = rng.normal(size=(3, 4))
    graph = np.zeros((3, 0), dtype=int)
    # reflect y_1 across the hyperplane orthogonal to x_0: only cos(x_0, y_1) changes sign
    u = hx[0] / np.linalg.norm(hx[0])
    c = hy[1] @ u / np.linalg.norm(hy[1])
    hy2 = hy.copy()
    hy2[1] = hy[1] - 2 * (hy[1] @ u) * u
    # the other two x rows are made orthogonal to u so they do not see the reflection
    hx2 = hx.copy()
    hx2[1:] = hx[1:] - np.outer(hx[1:] @ u, u)
    ref = contrastive(hx2, hy, graph)[0]
    flipped = contrastive(hx2, hy2, graph)[0]
    assert flipped == pytest.approx(ref - 2 * c, abs=1e-12)


def test_contrastive_errors_and_match():
    eye = np.eye(3)
    with pytest.raises(InvalidArgument):
        contrastive(eye, eye[:2], np.zeros((2, 0), dtype=int))
    with pytest.raises(InvalidArgument):
        contrastive(eye, eye, np.zeros((3, 0), dtype=int), match=[0, 1, 3])
    hy = np.eye(3)
    hx = hy[[2, 0, 1]]
    graph = np.zeros((3, 0), dtype=int)
    assert contrastive(hx, hy, graph, match=[2, 0, 1])[0] == 0.0
    # an unmatched row only repels: here its cosines are all zero
    hx2 = np.vstack([hx, [[1.0, -1.0, 0.0]]])
    val = contrastive(hx2, hy, graph, match=[2, 0, 1, -1])[0]
    assert val == pytest.approx((1 - 1) / np.sqrt(2), abs=1e-12)


def test_total_and_discrepancy():
    assert total(1, 2, 3, CFG) == 6
    assert total(1, 2, 3, LossConfig(lambda_r=0)) == 5
    assert total(1, 2, 3, LossConfig(lambda_sim=0)) == 4
    I = RigidTransform.identity()
    assert transform_discrepancy(I, I) == 0.0
    assert transform_discrepancy(RigidTransform(np.eye(3), [1.0, 0, 0]), I) == pytest.approx(1.0)
    assert transform_discrepancy(RigidTransform(rz(180), np.zeros(3)), I) == pytest.approx(8.0)


def test_loss_config_validation():
    with pytest.raises(InvalidArgument):
        LossConfig(beta=0.5)
    with pytest.raises(InvalidArgument):
        LossConfig(epsilon=0)
    with pytest.raises(InvalidArgument):
        LossConfig(lambda_c=-1)


# ---------------------------------------------------------------------------
# properties


def _instance(rng, n=20, d=6, k=4):
    pts = rng.normal(size=(n, 3))
    return pts, rng.normal(size=(n, d)), knn(pts, k)


def _all_losses(pts, h, hy, graph):
    return [
        repulsion_layer(pts, h)[0],
        similarity(pts, h, graph, CFG)[0],
        contrastive(h, hy, graph)[0],
    ]


def test_losses_ignore_row_scale(rng):
    for _ in range(20):
        pts, h, graph = _instance(rng)
        hy = rng.normal(size=h.shape)
        base = _all_losses(pts, h, hy, graph)
        h2 = h.copy()
        h2[rng.integers(len(h))] *= rng.uniform(0.1, 10)
        assert np.allclose(_all_losses(pts, h2, hy, graph), base, rtol=0, atol=1e-9)


def test_repulsion_and_similarity_are_permutation_equivariant(rng):
    pts, h, graph = _instance(rng)
    perm = rng.permutation(len(pts))
    inv = np.argsort(perm)
    nbr = inv[graph.neighbors[perm]]
    v1, g1 = repulsion_layer(pts, h)
    v2, g2 = repulsion_layer(pts[perm], h[perm])
    assert v1 == pytest.approx(v2) and np.allclose(g1[perm], g2)
    s1, gs1 = similarity(pts, h, graph, CFG)
    s2, gs2 = similarity(pts[perm], h[perm], nbr, CFG)
    assert s1 == pytest.approx(s2) and np.allclose(gs1[perm], gs2)


def _crosses_clamp(cos_fn, t, idx):
    old = t[idx]
    t[idx] = old + STEP
    hi = cos_fn()
    t[idx] = old - STEP
    lo = cos_fn()
    t[idx] = old
    return bool(np.any((hi > 0) != (lo > 0)))


def _cos(a, b):
    an = a / np.linalg.norm(a, axis=1, keepdims=True)
    bn = b / np.linalg.norm(b, axis=1, keepdims=True)
    return an @ bn.T


def _check(loss_fn, grad, t, cos_fn, clamped):
    checked = passed = 0
    bad = []
    for idx in np.ndindex(t.shape):
        checked += 1
        if agrees(grad[idx], central_difference(loss_fn, t, idx)):
            passed += 1
        elif not (clamped and _crosses_clamp(cos_fn, t, idx)):
            bad.append(idx)
    return checked, passed, bad


def loss_gradient_suite(seeds=range(10)):
    """Finite-difference check of every loss on random small instances; returns (checked, passed, bad)."""
    checked = passed = 0
    bad = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 33))
        d = int(rng.integers(2, 9))
        pts, h, graph = _instance(rng, n, d, min(4, n - 1))
        hy = rng.normal(size=(n, d))
        beta = float(rng.choice([1.0, 2.0, 2.5]))
        cfg = LossConfig(beta=beta)
        cases = [
            (lambda: repulsion_layer(pts, h, beta)[0], repulsion_layer(pts, h, beta)[1], h,
             lambda: _cos(h, h), True),
            (lambda: similarity(pts, h, graph, cfg)[0], similarity(pts, h, graph, cfg)[1], h,
             lambda: _cos(h, h), True),
            (lambda: contrastive(h, hy, graph, cfg)[0], contrastive(h, hy, graph, cfg)[1], h,
             None, False),
            (lambda: contrastive(h, hy, graph, cfg)[0], contrastive(h, hy, graph, cfg)[2], hy,
             None, False),
        ]
        levels = [(pts, h), (pts[: max(2, n // 2)], h[: max(2, n // 2)])]
        _, lgrads = repulsion_total(levels, cfg)
        cases.append((lambda: repulsion_total(levels, cfg)[0], lgrads[0] + np.vstack(
            [lgrads[1], np.zeros((n - lgrads[1].shape[0], d))]), h, lambda: _cos(h, h), True))
        for fn, grad, t, cos_fn, clamped in cases:
            c, p, b = _check(fn, grad, t, cos_fn, clamped)
            checked += c
            passed += p
            bad += b
    return checked, passed, bad


def test_loss_gradients_match_finite_differences():
    checked, passed, bad = loss_gradient_suite(range(6))
    assert not bad
    assert passed / checked >= 0.99
