"""Hierarchical EdgeConv embedder with hand-written reverse mode.

Layout (N input points):

    enc0: EdgeConv over the input descriptors                    -> N  x w0
    FPS to ceil(p1 * N), enc1: EdgeConv                          -> n1 x w1
    FPS to ceil(p2 * n1), enc2: EdgeConv                         -> n2 x w2
    up to n1 (3-NN inverse distance) || enc1 skip, dec1          -> n1 x d1
    up to N || enc0 skip, dec0                                   -> N  x d0
    [dec0 || descriptors] -> head0 -> head1 -> head2             -> N  x D

Every EdgeConv block is a two-layer perceptron with leaky-ReLU on the edge
feature [h_i || h_j - h_i], a max over the neighbors of i and a per-point
layer normalization over the feature axis.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from ..errors import InvalidArgument
from ..geometry import NeighborhoodGraph, fps, knn

MIN_POINTS = 16
BLOCK_NAMES = ("enc0", "enc1", "enc2", "dec1", "dec0", "head0", "head1", "head2")
PARAM_SUFFIXES = ("W1", "b1", "W2", "b2", "gamma", "beta")


INPUT_NORMS = ("none", "cloud")


def standardize_columns(ri: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance columns; constant columns are only centered."""
    sd = ri.std(axis=0)
    return (ri - ri.mean(axis=0)) / np.where(sd > 1e-12, sd, 1.0)


@dataclass(frozen=True)
class Architecture:
    """Widths, pooling and neighborhood sizes of the network."""

    in_dim: int = 14
    k: int = 10
    enc_widths: tuple = (64, 128, 256)
    dec_widths: tuple = (128, 64)
    head_widths: tuple = (128, 128)
    out_dim: int = 128
    pool_factors: tuple = (0.5, 0.25)
    negative_slope: float = 0.2
    norm_eps: float = 1e-5
    # "cloud": standardize each descriptor column over the cloud before the first block
    input_norm: str = "none"

    def __post_init__(self):
        for name in ("enc_widths", "dec_widths", "head_widths", "pool_factors"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.enc_widths) != 3 or len(self.dec_widths) != 2 or len(self.head_widths) != 2:
            raise InvalidArgument("architecture needs 3 encoder, 2 decoder and 2 head widths")
        if len(self.pool_factors) != 2 or not all(0 < p <= 1 for p in self.pool_factors):
            raise InvalidArgument("pool_factors must be two values in (0, 1]")
        widths = (self.in_dim, self.k, self.out_dim) + self.enc_widths + self.dec_widths + self.head_widths
        if any(int(w) != w or w < 1 for w in widths):
            raise InvalidArgument("all widths and k must be positive integers")
        if not 0 <= self.negative_slope <= 1 or self.norm_eps <= 0:
            raise InvalidArgument("invalid activation or normalization constant")
        if self.input_norm not in INPUT_NORMS:
            raise InvalidArgument(f"input_norm must be one of {INPUT_NORMS}")

    def block_shapes(self) -> dict[str, tuple[int, int]]:
        e0, e1, e2 = self.enc_widths
        d1, d0 = self.dec_widths
        h0, h1 = self.head_widths
        return {
            "enc0": (self.in_dim, e0),
            "enc1": (e0, e1),
            "enc2": (e1, e2),
            "dec1": (e2 + e1, d1),
            "dec0": (d1 + e0, d0),
            "head0": (d0 + self.in_dim, h0),
            "head1": (h0, h1),
            "head2": (h1, self.out_dim),
        }

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for block, (din, dout) in self.block_shapes().items():
            shapes[f"{block}.W1"] = (2 * din, dout)
            shapes[f"{block}.b1"] = (dout,)
            shapes[f"{block}.W2"] = (dout, dout)
            shapes[f"{block}.b2"] = (dout,)
            shapes[f"{block}.gamma"] = (dout,)
            shapes[f"{block}.beta"] = (dout,)
        return shapes

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Architecture":
        return cls(**json.loads(text))


@dataclass
class EmbedderParams:
    arch: Architecture
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.arch.param_shapes()
        if set(shapes) != set(self.tensors):
            missing = sorted(set(shapes) ^ set(self.tensors))
            raise InvalidArgument(f"parameter names do not match architecture: {missing[:4]}")
        for name, shape in shapes.items():
            arr = np.asarray(self.tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise InvalidArgument(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidArgument(f"{name} contains non-finite values")
            self.tensors[name] = arr

    def names(self) -> list[str]:
        return list(self.arch.param_shapes())

    def block(self, name: str) -> dict:
        return {s: self.tensors[f"{name}.{s}"] for s in PARAM_SUFFIXES}

    def copy(self) -> "EmbedderParams":
        return EmbedderParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))


def init_params(arch: Architecture, seed: int) -> EmbedderParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, unit norm scale."""
    if not isinstance(arch, Architecture):
        raise InvalidArgument("init_params expects an Architecture")
    rng = np.random.default_rng(seed)
    tensors = {}
    for block, (din, dout) in arch.block_shapes().items():
        for w, b, fan_in, shape in (("W1", "b1", 2 * din, (2 * din, dout)), ("W2", "b2", dout, (dout, dout))):
            bound = 1.0 / math.sqrt(fan_in)
            tensors[f"{block}.{w}"] = rng.uniform(-bound, bound, size=shape)
            tensors[f"{block}.{b}"] = rng.uniform(-bound, bound, size=(dout,))
        tensors[f"{block}.gamma"] = np.ones(dout)
        tensors[f"{block}.beta"] = np.zeros(dout)
    return EmbedderParams(arch, tensors)


# ---------------------------------------------------------------------------
# EdgeConv block


def _lrelu_(x, slope):
    """In-place leaky ReLU (0 <= slope <= 1)."""
    tmp = np.multiply(x, slope)
    np.maximum(x, tmp, out=x)
    return x


def _lrelu_grad_(g, act, slope):
    """Multiply ``g`` in place by the leaky ReLU derivative, read off the activation sign."""
    np.multiply(g, slope, out=g, where=act <= 0)
    return g


def _max_over_neighbors(a: np.ndarray):
    """Max over axis 1 with the first (lowest slot) argmax on ties."""
    m = a.max(axis=1)
    arg = np.full(m.shape, a.shape[1] - 1, dtype=np.int64)
    for j in range(a.shape[1] - 2, -1, -1):
        np.copyto(arg, j, where=a[:, j, :] == m)
    return m, arg


def _scatter_rows(index: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    """out[i] = sum of values[e] over all e with index[e] == i."""
    m = index.size
    S = sparse.csr_matrix((np.ones(m), (index, np.arange(m))), shape=(n, m))
    return np.asarray(S @ values)


def edgeconv_forward(p: dict, h: np.ndarray, nbr: np.ndarray, slope: float = 0.2, eps: float = 1e-5,
                     normalize: bool = True):
    """Return ``(out, cache)`` for one EdgeConv block.

    ``nbr`` is the n x k neighbor index matrix of the graph over the rows of ``h``.
    With ``normalize=False`` the max-pooled activations are returned unnormalized.
    """
    h = np.asarray(h, dtype=np.float64)
    nbr = np.asarray(nbr)
    d = h.shape[1]
    W1 = p["W1"]
    if W1.shape[0] != 2 * d or nbr.ndim != 2 or nbr.shape[0] != h.shape[0]:
        raise InvalidArgument("edgeconv: feature width or graph size does not match the weights")
    n, k = nbr.shape
    Wab = W1[:d] - W1[d:]
    a1 = (h @ W1[d:])[nbr]
    a1 += (h @ Wab + p["b1"])[:, None, :]
    _lrelu_(a1, slope)
    w1 = a1.shape[2]
    a2 = a1.reshape(n * k, w1) @ p["W2"]
    a2 += p["b2"]
    # the activation is monotone, so it commutes with the max over neighbors
    m, arg = _max_over_neighbors(a2.reshape(n, k, -1))
    _lrelu_(m, slope)
    cache = {"h": h, "nbr": nbr, "Wab": Wab, "a1": a1, "m": m, "arg": arg, "slope": slope}
    if not normalize:
        return m, cache
    mu = m.mean(axis=1, keepdims=True)
    xc = m - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    cache.update(xhat=xhat, inv=inv)
    return xhat * p["gamma"] + p["beta"], cache


def edgeconv_backward(p: dict, cache: dict, dout: np.ndarray):
    """Gradients ``(dparams, dh)`` of an EdgeConv block given d(loss)/d(out)."""
    h, nbr, slope = cache["h"], cache["nbr"], cache["slope"]
    n, k = nbr.shape
    d = h.shape[1]
    if dout.shape != cache["m"].shape:
        raise InvalidArgument("edgeconv_backward: gradient shape does not match the output")
    grads = {}
    if "xhat" in cache:
        xhat, inv = cache["xhat"], cache["inv"]
        grads["gamma"] = np.sum(dout * xhat, axis=0)
        grads["beta"] = np.sum(dout, axis=0)
        dx = dout * p["gamma"]
        dm = inv * (dx - dx.mean(axis=1, keepdims=True) - xhat * (dx * xhat).mean(axis=1, keepdims=True))
    else:
        grads["gamma"] = np.zeros_like(p["gamma"])
        grads["beta"] = np.zeros_like(p["beta"])
        dm = np.array(dout, dtype=np.float64)
    m, arg = cache["m"], cache["arg"]
    w2 = m.shape[1]
    # only the argmax neighbor of each (point, channel) receives gradient
    dz2_sel = _lrelu_grad_(dm.copy(), m, slope)
    dz2 = np.zeros((n, k, w2))
    np.put_along_axis(dz2, arg[:, None, :], dz2_sel[:, None, :], axis=1)
    a1 = cache["a1"]
    w1 = a1.shape[2]
    dz2f = dz2.reshape(n * k, w2)
    grads["W2"] = a1.reshape(n * k, w1).T @ dz2f
    grads["b2"] = dz2_sel.sum(axis=0)
    dz1 = (dz2f @ p["W2"].T).reshape(n, k, w1)
    _lrelu_grad_(dz1, a1, slope)
    grads["b1"] = dz1.sum(axis=(0, 1))
    dA = dz1.sum(axis=1)
    dB = _scatter_rows(nbr.reshape(-1), dz1.reshape(n * k, w1), n)
    dWab = h.T @ dA
    grads["W1"] = np.vstack([dWab, h.T @ dB - dWab])
    dh = dA @ cache["Wab"].T + dB @ p["W1"][d:].T
    return grads, dh


# ---------------------------------------------------------------------------
# Interpolation between levels


@dataclass(frozen=True)
class Interpolation:
    """Inverse-distance weights from up to 3 coarse neighbors for every fine point."""

    index: np.ndarray
    weight: np.ndarray
    n_coarse: int

    def apply(self, coarse: np.ndarray) -> np.ndarray:
        return np.einsum("fk,fkd->fd", self.weight, coarse[self.index])

    def transpose(self, dfine: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_coarse, dfine.shape[1]))
        contrib = self.weight[:, :, None] * dfine[:, None, :]
        np.add.at(out, self.index.reshape(-1), contrib.reshape(-1, dfine.shape[1]))
        return out


def interpolation_weights(fine_pts: np.ndarray, coarse_pts: np.ndarray, k: int = 3) -> Interpolation:
    kk = min(k, coarse_pts.shape[0])
    diff = fine_pts[:, None, :] - coarse_pts[None, :, :]
    d2 = np.sum(diff * diff, axis=2)
    if kk < coarse_pts.shape[0]:
        # the kk nearest by (distance, index); rows with a tie at the cut fall back to a full sort
        cut = np.partition(d2, kk - 1, axis=1)[:, kk - 1:kk]
        inside = d2 <= cut
        ok = inside.sum(axis=1) == kk
        idx = np.empty((d2.shape[0], kk), dtype=np.int64)
        cols = np.nonzero(inside[ok])[1].reshape(-1, kk)
        vals = np.take_along_axis(d2[ok], cols, axis=1)
        idx[ok] = np.take_along_axis(cols, np.lexsort((cols, vals), axis=1), axis=1)
        if not ok.all():
            idx[~ok] = np.argsort(d2[~ok], axis=1, kind="stable")[:, :kk]
    else:
        idx = np.argsort(d2, axis=1, kind="stable")[:, :kk]
    dist = np.sqrt(np.take_along_axis(d2, idx, axis=1))
    exact = dist[:, 0] == 0.0
    with np.errstate(divide="ignore"):
        w = np.where(exact[:, None], 0.0, 1.0 / np.where(dist > 0, dist, 1.0))
    w[exact, 0] = 1.0
    w /= w.sum(axis=1, keepdims=True)
    return Interpolation(idx, w, coarse_pts.shape[0])


# ---------------------------------------------------------------------------
# Full network


@dataclass
class Level:
    """Embeddings produced after one pooling or interpolation step."""

    points: np.ndarray
    h: np.ndarray
    parent_index: Optional[np.ndarray]
    kind: str


@dataclass
class LevelEmbeddings:
    levels: list
    final: np.ndarray
    final_graph: NeighborhoodGraph

    @property
    def sizes(self) -> list[int]:
        return [lv.points.shape[0] for lv in self.levels]


@dataclass
class EmbedderTrace:
    """Everything needed to replay the forward pass and to run reverse mode."""

    arch: Architecture
    ri: np.ndarray
    points: list
    graphs: list
    fps_index: list
    interps: list
    caches: dict
    outputs: dict


def _graph(points: np.ndarray, k: int) -> NeighborhoodGraph:
    return knn(points, min(k, points.shape[0] - 1))


def level_sizes(n: int, pool_factors) -> list[int]:
    sizes = [n]
    for f in pool_factors:
        sizes.append(int(math.ceil(f * sizes[-1])))
    return sizes


def _structure(arch: Architecture, points: np.ndarray):
    n0, n1, n2 = level_sizes(points.shape[0], arch.pool_factors)
    idx1 = fps(points, n1, 0)
    pts1 = points[idx1]
    idx2 = fps(pts1, n2, 0)
    pts2 = pts1[idx2]
    pts = [points, pts1, pts2]
    graphs = [_graph(p, arch.k) for p in pts]
    interps = [interpolation_weights(pts1, pts2), interpolation_weights(points, pts1)]
    return pts, graphs, [idx1, idx2], interps


def _run(params: EmbedderParams, ri, pts, graphs, fps_index, interps):
    arch = params.arch
    slope, eps = arch.negative_slope, arch.norm_eps
    caches = {}

    def ec(name, h, g):
        out, caches[name] = edgeconv_forward(params.block(name), h, g.neighbors, slope, eps)
        return out

    g0, g1, g2 = graphs
    idx1, idx2 = fps_index
    e0 = ec("enc0", ri, g0)
    e1 = ec("enc1", e0[idx1], g1)
    e2 = ec("enc2", e1[idx2], g2)
    u1 = ec("dec1", np.hstack([interps[0].apply(e2), e1]), g1)
    u0 = ec("dec0", np.hstack([interps[1].apply(u1), e0]), g0)
    f0 = ec("head0", np.hstack([u0, ri]), g0)
    f1 = ec("head1", f0, g0)
    out = ec("head2", f1, g0)
    outputs = {"enc0": e0, "enc1": e1, "enc2": e2, "dec1": u1, "dec0": u0, "final": out}
    return outputs, caches


LEVEL_BLOCKS = ("enc1", "enc2", "dec1", "dec0")


def embed(params: EmbedderParams, cloud, ri: np.ndarray):
    """Embed one cloud; returns ``(LevelEmbeddings, EmbedderTrace)``."""
    points = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)
    ri = np.asarray(ri, dtype=np.float64)
    arch = params.arch
    if points.shape[0] < MIN_POINTS:
        raise InvalidArgument(f"embed needs at least {MIN_POINTS} points, got {points.shape[0]}")
    if ri.shape != (points.shape[0], arch.in_dim):
        raise InvalidArgument(f"descriptor matrix has shape {ri.shape}, expected {(points.shape[0], arch.in_dim)}")
    if arch.input_norm == "cloud":
        ri = standardize_columns(ri)
    pts, graphs, fps_index, interps = _structure(arch, points)
    outputs, caches = _run(params, ri, pts, graphs, fps_index, interps)
    trace = EmbedderTrace(arch, ri, pts, graphs, fps_index, interps, caches, outputs)
    return _levels(trace), trace


def _levels(trace: EmbedderTrace) -> LevelEmbeddings:
    pts, out = trace.points, trace.outputs
    idx1, idx2 = trace.fps_index
    levels = [
        Level(pts[1], out["enc1"], idx1, "down"),
        Level(pts[2], out["enc2"], idx2, "down"),
        Level(pts[1], out["dec1"], None, "up"),
        Level(pts[0], out["dec0"], None, "up"),
    ]
    return LevelEmbeddings(levels, out["final"], trace.graphs[0])


def replay(params: EmbedderParams, trace: EmbedderTrace) -> LevelEmbeddings:
    """Re-run the forward pass on the recorded graphs, pooling and interpolation."""
    outputs, _ = _run(params, trace.ri, trace.points, trace.graphs, trace.fps_index, trace.interps)
    replayed = EmbedderTrace(trace.arch, trace.ri, trace.points, trace.graphs, trace.fps_index,
                             trace.interps, {}, outputs)
    return _levels(replayed)


def backward(params: EmbedderParams, trace: EmbedderTrace, final_grad=None, level_grads=None) -> dict:
    """Reverse-mode gradients of a scalar loss with respect to every parameter.

    ``final_grad`` is d(loss)/d(final embeddings); ``level_grads`` is an optional
    sequence aligned with ``LevelEmbeddings.levels`` (entries may be None).
    """
    out = trace.outputs
    level_grads = list(level_grads) if level_grads is not None else [None] * len(LEVEL_BLOCKS)
    if len(level_grads) != len(LEVEL_BLOCKS):
        raise InvalidArgument(f"expected {len(LEVEL_BLOCKS)} level gradients")
    acc = {name: np.zeros_like(out[name]) for name in out}
    if final_grad is not None:
        if final_grad.shape != out["final"].shape:
            raise InvalidArgument("final gradient shape does not match the embeddings")
        acc["final"] += final_grad
    for name, g in zip(LEVEL_BLOCKS, level_grads):
        if g is not None:
            if g.shape != out[name].shape:
                raise InvalidArgument(f"gradient for level {name} has the wrong shape")
            acc[name] += g

    grads = {}
    ri_dim = trace.arch.in_dim

    def back(name, dout):
        g, dh = edgeconv_backward(params.block(name), trace.caches[name], dout)
        for s, v in g.items():
            grads[f"{name}.{s}"] = v
        return dh

    idx1, idx2 = trace.fps_index
    d_f1 = back("head2", acc["final"])
    d_f0 = back("head1", d_f1)
    d_cat = back("head0", d_f0)
    acc["dec0"] += d_cat[:, : d_cat.shape[1] - ri_dim]

    d_cat = back("dec0", acc["dec0"])
    w_up = out["dec1"].shape[1]
    acc["dec1"] += trace.interps[1].transpose(d_cat[:, :w_up])
    acc["enc0"] += d_cat[:, w_up:]

    d_cat = back("dec1", acc["dec1"])
    w_up = out["enc2"].shape[1]
    acc["enc2"] += trace.interps[0].transpose(d_cat[:, :w_up])
    acc["enc1"] += d_cat[:, w_up:]

    d_in = back("enc2", acc["enc2"])
    np.add.at(acc["enc1"], idx2, d_in)
    d_in = back("enc1", acc["enc1"])
    np.add.at(acc["enc0"], idx1, d_in)
    back("enc0", acc["enc0"])
    return {name: grads[name] for name in params.names()}
