"""Self-supervised embedding losses with analytic gradients.

Each loss returns ``(value, grad)`` where ``grad`` has the shape of the
embedding matrix it was computed from. Only cosine similarities of embedding
rows enter the losses, so positive rescaling of a row changes nothing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .geometry import RigidTransform


@dataclass(frozen=True)
class LossConfig:
    beta: float = 2.0
    epsilon: float = 1e-3
    lambda_r: float = 1.0
    lambda_sim: float = 1.0
    lambda_c: float = 1.0

    def __post_init__(self):
        if self.beta < 1:
            raise InvalidArgument("beta must be >= 1")
        if not self.epsilon > 0:
            raise InvalidArgument("epsilon must be positive")
        if min(self.lambda_r, self.lambda_sim, self.lambda_c) < 0:
            raise InvalidArgument("loss weights must be non-negative")

    @staticmethod
    def level_weight(level: int) -> float:
        return float(level)


def _normalize_rows(h: np.ndarray):
    h = np.asarray(h, dtype=np.float64)
    norms = np.linalg.norm(h, axis=1)
    if np.any(norms == 0):
        raise InvalidArgument("embedding row with zero norm; cosine undefined")
    return h / norms[:, None], norms


def _unnormalize_grad(dhn: np.ndarray, hn: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d(h/|h|) projected onto the tangent space of the unit sphere
    return (dhn - hn * np.sum(dhn * hn, axis=1, keepdims=True)) / norms[:, None]


def _pairwise_distance(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def _clamped_power(c: np.ndarray, beta: float):
    """max(c, 0)**beta and its derivative in c."""
    cp = np.maximum(c, 0.0)
    val = cp**beta
    der = np.where(c > 0, beta * cp ** (beta - 1.0), 0.0)
    return val, der


def _self_loss_grad(dC: np.ndarray, hn: np.ndarray, norms: np.ndarray) -> np.ndarray:
    return _unnormalize_grad((dC + dC.T) @ hn, hn, norms)


def repulsion_layer(points, h, beta: float = 2.0):
    """Sum over ordered pairs i != j of |x_i - x_j| * max(cos(h_i, h_j), 0)**beta."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 2 or np.shape(h)[0] != points.shape[0]:
        raise InvalidArgument("repulsion needs >= 2 points with one embedding row each")
    hn, norms = _normalize_rows(h)
    C = hn @ hn.T
    D = _pairwise_distance(points)
    np.fill_diagonal(D, 0.0)
    val, der = _clamped_power(C, beta)
    loss = float(np.sum(D * val))
    return loss, _self_loss_grad(D * der, hn, norms)


def repulsion_total(levels, cfg: LossConfig):
    """Level-weighted repulsion; level ``l`` (counting from 1) has weight ``l``."""
    levels = list(getattr(levels, "levels", levels))
    if not levels:
        raise InvalidArgument("repulsion_total needs at least one level")
    total = 0.0
    grads = []
    for l, lv in enumerate(levels, start=1):
        pts, h = (lv.points, lv.h) if hasattr(lv, "points") else lv
        v, g = repulsion_layer(pts, h, cfg.beta)
        w = cfg.level_weight(l)
        total += w * v
        grads.append(w * g)
    return total, grads


def _neighbor_mask(graph, n: int) -> np.ndarray:
    """Boolean n x n mask; ``graph`` is a NeighborhoodGraph, an index matrix or a mask."""
    nbr = np.asarray(getattr(graph, "neighbors", graph))
    if nbr.dtype == bool:
        if nbr.shape != (n, n):
            raise InvalidArgument("neighbor mask must be n x n")
        return nbr.copy()
    if nbr.shape[0] != n:
        raise InvalidArgument("neighborhood graph does not match the number of points")
    mask = np.zeros((n, n), dtype=bool)
    if nbr.size:
        mask[np.repeat(np.arange(n), nbr.shape[1]), nbr.reshape(-1)] = True
    return mask


def similarity(points, h, graph, cfg: LossConfig):
    """Attract graph neighbors (weighted by 1/max(d, eps)) and repel everything else."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if np.shape(h)[0] != n:
        raise InvalidArgument("one embedding row per point required")
    hn, norms = _normalize_rows(h)
    C = hn @ hn.T
    D = _pairwise_distance(points)
    nb = _neighbor_mask(graph, n)
    far = ~nb
    np.fill_diagonal(far, False)
    rep_val, rep_der = _clamped_power(C, cfg.beta)
    one_minus = np.maximum(1.0 - C, 0.0)
    att_val = one_minus**cfg.beta
    att_der = -cfg.beta * one_minus ** (cfg.beta - 1.0)
    inv_d = 1.0 / np.maximum(D, cfg.epsilon)
    loss = float(np.sum(D[far] * rep_val[far]) + np.sum(inv_d[nb] * att_val[nb]))
    dC = np.where(far, D * rep_der, 0.0) + np.where(nb, inv_d * att_der, 0.0)
    return loss, _self_loss_grad(dC, hn, norms)


def contrastive(h_x, h_y, graph_y, cfg: LossConfig | None = None, match=None):
    """Pull x_i toward its partner y_pi(i) and the partner's neighbors, push it from every other y_j.

    ``match[i]`` is the partner index of x_i in Y (-1 when x_i has none); the default
    is the identity map of index-aligned clouds. Unmatched rows only repel.
    Returns ``(loss, grad_x, grad_y)``.
    """
    nx, ny = np.shape(h_x)[0], np.shape(h_y)[0]
    if match is None:
        if nx != ny:
            raise InvalidArgument("contrastive loss needs index-aligned clouds of equal size")
        match = np.arange(nx)
    match = np.asarray(match, dtype=np.int64)
    if match.shape != (nx,) or np.any(match >= ny):
        raise InvalidArgument("match must give one partner index (or -1) per source row")
    xn, xnorm = _normalize_rows(h_x)
    yn, ynorm = _normalize_rows(h_y)
    C = xn @ yn.T
    nb_y = _neighbor_mask(graph_y, ny)
    np.fill_diagonal(nb_y, True)
    near = np.zeros((nx, ny), dtype=bool)
    has = match >= 0
    near[has] = nb_y[match[has]]
    loss = float(np.sum(1.0 - C[near]) + np.sum(C[~near]))
    dC = np.where(near, -1.0, 1.0)
    gx = _unnormalize_grad(dC @ yn, xn, xnorm)
    gy = _unnormalize_grad(dC.T @ xn, yn, ynorm)
    return loss, gx, gy


def total(loss_r: float, loss_sim: float, loss_c: float, cfg: LossConfig) -> float:
    return cfg.lambda_r * loss_r + cfg.lambda_sim * loss_sim + cfg.lambda_c * loss_c


def transform_discrepancy(pred: RigidTransform, gt: RigidTransform) -> float:
    """||R_pred^T R_gt - I||_F^2 + ||t_pred - t_gt||^2 (evaluation only)."""
    M = pred.rotation.T @ gt.rotation - np.eye(3)
    dt = pred.translation - gt.translation
    return float(np.sum(M * M) + np.dot(dt, dt))
