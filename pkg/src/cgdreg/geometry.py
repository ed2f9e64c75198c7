"""Geometric kernels: point clouds, rigid transforms, neighbor search, sampling,
closed-form rigid solving and registration error metrics.

Rotations use the intrinsic X-Y-Z Euler convention in degrees throughout:
``R = Rx(a) @ Ry(b) @ Rz(c)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometry, InvalidArgument

ORTHO_TOL = 1e-9
BRUTE_FORCE_BELOW = 32


@dataclass(frozen=True)
class PointCloud:
    """Ordered set of 3D points with optional stable per-point ids."""

    points: np.ndarray
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidArgument(f"points must be N x 3, got {pts.shape}")
        if pts.shape[0] < 1:
            raise InvalidArgument("point cloud must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgument("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.ids is not None:
            ids = np.asarray(self.ids, dtype=np.int64)
            if ids.shape != (pts.shape[0],):
                raise InvalidArgument("ids must have one entry per point")
            if np.unique(ids).size != ids.size:
                raise InvalidArgument("ids must be unique")
            object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, index) -> "PointCloud":
        index = np.asarray(index, dtype=np.int64)
        ids = None if self.ids is None else self.ids[index]
        return PointCloud(self.points[index], ids)


@dataclass(frozen=True)
class RigidTransform:
    """T(p) = rotation @ p + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise InvalidArgument("rotation must be 3x3 and translation a 3-vector")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidArgument("transform entries must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL:
            raise InvalidArgument("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise InvalidArgument("rotation must have determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def transform_points(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M


def apply(T: RigidTransform, cloud: PointCloud) -> PointCloud:
    return PointCloud(T.transform_points(cloud.points), cloud.ids)


def compose(A: RigidTransform, B: RigidTransform) -> RigidTransform:
    """Return the transform p -> A(B(p))."""
    return RigidTransform(A.rotation @ B.rotation, A.rotation @ B.translation + A.translation)


def invert(T: RigidTransform) -> RigidTransform:
    Rt = T.rotation.T
    return RigidTransform(Rt, -Rt @ T.translation)


# ---------------------------------------------------------------------------
# Euler angles


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def _ry(b):
    c, s = np.cos(b), np.sin(b)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def _rz(c_):
    c, s = np.cos(c_), np.sin(c_)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def rotation_from_euler(angles_deg: Sequence[float]) -> np.ndarray:
    """Intrinsic X-Y-Z rotation matrix from angles in degrees."""
    a, b, c = np.radians(np.asarray(angles_deg, dtype=np.float64))
    return _rx(a) @ _ry(b) @ _rz(c)


def euler_from_rotation(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rotation_from_euler`; at gimbal lock the X angle is set to 0."""
    R = np.asarray(R, dtype=np.float64)
    sb = np.clip(R[0, 2], -1.0, 1.0)
    b = np.arcsin(sb)
    if np.hypot(R[0, 0], R[0, 1]) < 1e-12:
        a = 0.0
        c = np.arctan2(R[1, 0], R[1, 1])
    else:
        a = np.arctan2(-R[1, 2], R[2, 2])
        c = np.arctan2(-R[0, 1], R[0, 0])
    return np.degrees(np.array([a, b, c]))


def wrap_degrees(x):
    """Map angles to (-180, 180]."""
    y = np.mod(np.asarray(x, dtype=np.float64) + 180.0, 360.0) - 180.0
    return np.where(y == -180.0, 180.0, y)


def rotation_rmse(pred: RigidTransform, gt: RigidTransform) -> float:
    """RMS over the three wrapped Euler angle residuals, in degrees."""
    res = wrap_degrees(euler_from_rotation(pred.rotation) - euler_from_rotation(gt.rotation))
    return float(np.sqrt(np.mean(res**2)))


def translation_rmse(pred: RigidTransform, gt: RigidTransform) -> float:
    d = pred.translation - gt.translation
    return float(np.sqrt(np.mean(d**2)))


# ---------------------------------------------------------------------------
# Neighbor search and sampling


@dataclass(frozen=True)
class NeighborhoodGraph:
    k: int
    neighbors: np.ndarray

    def __post_init__(self):
        nb = np.array(self.neighbors, dtype=np.int64)
        nb.setflags(write=False)
        object.__setattr__(self, "neighbors", nb)

    def __len__(self) -> int:
        return self.neighbors.shape[0]


def _as_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64)


def _sqdist_rows(points: np.ndarray, i: int, cand: np.ndarray) -> np.ndarray:
    diff = points[cand] - points[i]
    return np.sum(diff * diff, axis=1)


def knn(cloud, k: int) -> NeighborhoodGraph:
    """Exact k nearest neighbors of every point, self excluded, ties to lower index."""
    pts = _as_points(cloud)
    n = pts.shape[0]
    if not 1 <= k < n:
        raise InvalidArgument(f"knn requires 1 <= k < N (k={k}, N={n})")
    if n < BRUTE_FORCE_BELOW:
        diff = pts[:, None, :] - pts[None, :, :]
        d2 = np.sum(diff * diff, axis=2)
        np.fill_diagonal(d2, np.inf)
        order = np.argsort(d2, axis=1, kind="stable")
        return NeighborhoodGraph(k, order[:, :k])

    tree = cKDTree(pts)
    m = min(k + 2, n)
    _, cand = tree.query(pts, k=m)
    diff = pts[cand] - pts[:, None, :]
    d2 = np.sum(diff * diff, axis=2)
    d2[cand == np.arange(n)[:, None]] = np.inf
    order = np.lexsort((cand, d2), axis=1)
    cand = np.take_along_axis(cand, order, axis=1)
    d2 = np.take_along_axis(d2, order, axis=1)
    out = cand[:, :k].copy()
    # rows whose k-th distance is (nearly) tied with the first excluded candidate may
    # have equally near points the tree did not return; redo those exactly
    if m == n:
        unsure = np.zeros(n, dtype=bool)
    else:
        unsure = ~(d2[:, k] > d2[:, k - 1] * (1.0 + 1e-9) + 1e-300)
    for i in np.flatnonzero(unsure):
        radius = np.sqrt(d2[i, k - 1]) * (1.0 + 1e-9) + 1e-12
        ball = np.sort(np.asarray(tree.query_ball_point(pts[i], radius), dtype=np.int64))
        ball = ball[ball != i]
        out[i] = ball[np.argsort(_sqdist_rows(pts, i, ball), kind="stable")[:k]]
    return NeighborhoodGraph(k, out)


def fps(cloud, m: int, start: int = 0) -> np.ndarray:
    """Greedy farthest point sampling starting from ``start``; ties to lower index."""
    pts = _as_points(cloud)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise InvalidArgument(f"fps requires 1 <= m <= N (m={m}, N={n})")
    if not 0 <= start < n:
        raise InvalidArgument(f"start index {start} out of range")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    diff = pts - pts[start]
    mind = np.sum(diff * diff, axis=1)
    mind[start] = -1.0
    for s in range(1, m):
        nxt = int(np.argmax(mind))
        chosen[s] = nxt
        diff = pts - pts[nxt]
        mind = np.minimum(mind, np.sum(diff * diff, axis=1))
        mind[chosen[: s + 1]] = -1.0
    return chosen


# ---------------------------------------------------------------------------
# Closed-form rigid solve


def kabsch(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform mapping ``src`` rows onto ``dst`` rows."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise InvalidArgument("src and dst must both be M x 3")
    if src.shape[0] < 3:
        raise InvalidArgument("kabsch needs at least 3 correspondences")
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, S, Vt = np.linalg.svd(H)
    scale = max(np.max(np.abs(src - cs)), np.max(np.abs(dst - cd)), 1.0)
    if S[1] <= 1e-10 * scale * scale:
        raise DegenerateGeometry("cross-covariance rank < 2 (collinear or coincident points)")
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = Vt.T @ D @ U.T
    # re-orthonormalize against accumulated rounding
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return RigidTransform(R, cd - R @ cs)
