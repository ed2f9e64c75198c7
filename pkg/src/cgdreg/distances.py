"""Shape distances: outlier-filtered Chamfer and the confidence guided distance.

Both measures sum squared nearest-neighbor distances in the two directions,
skipping matches whose (Euclidean, not squared) distance is at least
``cutoff_multiplier * d_s``. ``d_s`` is the largest gap between a point and
its nearest same-cloud neighbor over both clouds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgument
from .geometry import PointCloud, _as_points

DEFAULT_GAMMA = 2.0


@dataclass(frozen=True)
class FilterParams:
    d_s: float
    cutoff_multiplier: float = 2.0

    def __post_init__(self):
        if not self.d_s > 0:
            raise InvalidArgument("d_s must be positive")
        if not self.cutoff_multiplier > 0:
            raise InvalidArgument("cutoff_multiplier must be positive")

    @property
    def cutoff(self) -> float:
        return self.cutoff_multiplier * self.d_s


@dataclass(frozen=True)
class CgdParams:
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise InvalidArgument("gamma must be finite and non-negative")


def nn_distance(p, cloud) -> tuple[int, float]:
    """Index of and squared distance to the nearest point of ``cloud``."""
    pts = _as_points(cloud)
    diff = pts - np.asarray(p, dtype=np.float64)
    d2 = np.sum(diff * diff, axis=1)
    i = int(np.argmin(d2))
    return i, float(d2[i])


class NearestNeighborIndex:
    """Batched exact nearest-neighbor lookup into a fixed cloud (ties to lower index)."""

    def __init__(self, cloud):
        self.points = _as_points(cloud)
        self.tree = cKDTree(self.points)

    def query(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        q = np.asarray(queries, dtype=np.float64)
        n = self.points.shape[0]
        kk = min(2, n)
        _, cand = self.tree.query(q, k=kk)
        cand = np.asarray(cand).reshape(q.shape[0], kk)
        diff = self.points[cand] - q[:, None, :]
        d2 = np.sum(diff * diff, axis=2)
        best = d2.min(axis=1)
        # lowest index among exact ties in the candidate window
        tied = d2 == best[:, None]
        idx = np.where(tied, cand, np.iinfo(np.int64).max).min(axis=1)
        if kk < n:
            # a tie may extend past the window; settle those rows by brute force
            for r in np.flatnonzero(tied.all(axis=1)):
                idx[r], best[r] = nn_distance(q[r], self.points)
        return idx.astype(np.int64), best


def max_sampling_distance(a, b) -> float:
    gaps = []
    for cloud in (a, b):
        pts = _as_points(cloud)
        if pts.shape[0] < 2:
            raise InvalidArgument("each cloud needs at least 2 points to define d_s")
        d, _ = cKDTree(pts).query(pts, k=2)
        gaps.append(d[:, 1].max())
    return float(max(gaps))


def _directional_terms(tx: np.ndarray, y: np.ndarray, y_index=None, tx_index=None):
    y_index = y_index or NearestNeighborIndex(y)
    tx_index = tx_index or NearestNeighborIndex(tx)
    q, fwd = y_index.query(tx)
    r, bwd = tx_index.query(y)
    return q, fwd, r, bwd


def chamfer(tx, y, f: FilterParams) -> float:
    tx_pts, y_pts = _as_points(tx), _as_points(y)
    _, fwd, _, bwd = _directional_terms(tx_pts, y_pts)
    c2 = f.cutoff * f.cutoff
    # sqrt(d2) < cutoff  <=>  d2 < cutoff^2 for non-negative values
    return float(fwd[fwd < c2].sum() + bwd[bwd < c2].sum())


def cgd(tx, y, P, g: CgdParams, f: FilterParams, y_index: NearestNeighborIndex | None = None) -> float:
    """Chamfer with every matched pair (i, j) weighted by exp(-gamma * P[i, j]).

    Rows of ``P`` follow the point order of ``tx`` (the transformed source), columns
    the order of ``y``.
    """
    tx_pts, y_pts = _as_points(tx), _as_points(y)
    P = np.asarray(getattr(P, "P", P), dtype=np.float64)
    if P.shape != (tx_pts.shape[0], y_pts.shape[0]):
        raise InvalidArgument(f"P has shape {P.shape}, expected {(tx_pts.shape[0], y_pts.shape[0])}")
    q, fwd, r, bwd = _directional_terms(tx_pts, y_pts, y_index=y_index)
    c2 = f.cutoff * f.cutoff
    keep_f = fwd < c2
    keep_b = bwd < c2
    rows = np.arange(tx_pts.shape[0])
    cols = np.arange(y_pts.shape[0])
    wf = np.exp(-g.gamma * P[rows[keep_f], q[keep_f]])
    wb = np.exp(-g.gamma * P[r[keep_b], cols[keep_b]])
    return float(np.dot(wf, fwd[keep_f]) + np.dot(wb, bwd[keep_b]))
