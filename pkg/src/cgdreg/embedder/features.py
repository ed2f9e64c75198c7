"""Per-point descriptors that do not change under rigid motion of the cloud."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidArgument
from ..geometry import _as_points, knn


def ri_features(cloud, k: int) -> np.ndarray:
    """Rotation/translation invariant descriptors, one row of ``k + 4`` values per point.

    Columns: distance to the centroid, the ``k`` sorted neighbor distances, the
    cosine between (centroid - p) and (nearest neighbor - p), then the mean and
    standard deviation of the neighbor distances. Distances are in model units,
    so a uniform scaling of the cloud scales every column except the cosine.
    """
    pts = _as_points(cloud)
    n = pts.shape[0]
    if not 1 <= k < n:
        raise InvalidArgument(f"ri_features requires 1 <= k < N (k={k}, N={n})")
    nbr = knn(pts, k).neighbors
    centroid = pts.mean(axis=0)
    to_c = centroid - pts
    d_c = np.linalg.norm(to_c, axis=1)
    offs = pts[nbr] - pts[:, None, :]
    d_nb = np.linalg.norm(offs, axis=2)
    d_nb = np.sort(d_nb, axis=1)
    to_nn = offs[:, 0, :]
    denom = d_c * np.linalg.norm(to_nn, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.where(denom > 0, np.sum(to_c * to_nn, axis=1) / np.where(denom > 0, denom, 1.0), 0.0)
    cosang = np.clip(cosang, -1.0, 1.0)
    return np.column_stack([d_c, d_nb, cosang, d_nb.mean(axis=1), d_nb.std(axis=1)])
