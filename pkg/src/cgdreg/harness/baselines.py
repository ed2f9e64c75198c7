"""Point-to-point ICP baseline."""
from __future__ import annotations

import numpy as np

from ..distances import NearestNeighborIndex
from ..geometry import RigidTransform, _as_points, kabsch


def transform_delta(a: RigidTransform, b: RigidTransform) -> float:
    """Rotation angle (radians) between a and b plus translation distance."""
    cos = (np.trace(a.rotation.T @ b.rotation) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)) + np.linalg.norm(a.translation - b.translation))


def icp(x, y, max_iters: int = 50, tol: float = 1e-10, init: RigidTransform | None = None) -> RigidTransform:
    """Alternate nearest-neighbor matching and a closed-form rigid solve until the update stalls."""
    x_pts, y_pts = _as_points(x), _as_points(y)
    index = NearestNeighborIndex(y_pts)
    T = init or RigidTransform.identity()
    for _ in range(max_iters):
        match, _ = index.query(T.transform_points(x_pts))
        new = kabsch(x_pts, y_pts[match])
        done = transform_delta(new, T) < tol
        T = new
        if done:
            break
    return T
