"""Synthetic shapes, partial views, rigid augmentation and training/evaluation pairs."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import InvalidArgument, RegistrationError
from ..geometry import PointCloud, RigidTransform, apply, compose, invert, rotation_from_euler

SHAPE_KINDS = ("torus", "bent_l", "blob", "stair")
# the torus is rotationally symmetric about its axis, so it is left out of datasets
ASYMMETRIC_KINDS = ("bent_l", "blob", "stair")
MIN_SHAPE_POINTS = 64
MAX_VIEW_RETRIES = 50


@dataclass(frozen=True)
class AugmentSpec:
    rot_max_deg: float = 60.0
    trans_range: float = 0.5
    noise_sigma: float = 0.0
    keep_fraction: float = 0.6

    def __post_init__(self):
        if not 0 < self.keep_fraction <= 1:
            raise InvalidArgument("keep_fraction must be in (0, 1]")
        if min(self.rot_max_deg, self.trans_range, self.noise_sigma) < 0:
            raise InvalidArgument("augmentation bounds must be non-negative")


@dataclass(frozen=True)
class TrainingPair:
    """``match[i]`` is the row of y corresponding to x_i, or -1."""

    x: PointCloud
    y: PointCloud
    t_gt: RigidTransform
    match: Optional[np.ndarray] = None

    def partner(self) -> np.ndarray:
        if self.match is None:
            return np.arange(len(self.x))
        return self.match


@dataclass(frozen=True)
class EvalPair:
    x: PointCloud
    y: PointCloud
    t_gt: RigidTransform

    def shared_ids(self) -> np.ndarray:
        return np.intersect1d(self.x.ids, self.y.ids)


# ---------------------------------------------------------------------------
# Shapes


def normalize(points: np.ndarray):
    """Center on the centroid and scale to unit max radius; returns (points, centroid, scale)."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    scale = np.linalg.norm(centered, axis=1).max()
    out = centered / scale
    # one correction pass pins the centroid to rounding level
    out -= out.mean(axis=0)
    out /= np.linalg.norm(out, axis=1).max()
    return out, centroid, scale


def torus_surface(n: int, rng: np.random.Generator, major: float = 1.0, minor: float = 0.35) -> np.ndarray:
    """Area-uniform samples on the torus (sqrt(x^2+y^2) - major)^2 + z^2 = minor^2."""
    u = rng.uniform(0.0, 2 * np.pi, n)
    v = np.empty(n)
    filled = 0
    while filled < n:
        cand = rng.uniform(0.0, 2 * np.pi, n)
        accept = rng.uniform(0.0, 1.0, n) < (major + minor * np.cos(cand)) / (major + minor)
        take = cand[accept][: n - filled]
        v[filled:filled + take.size] = take
        filled += take.size
    ring = major + minor * np.cos(v)
    return np.column_stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)])


def _sample_rects(rects, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform samples on a union of parallelograms given as (origin, edge_u, edge_v)."""
    origins = np.array([r[0] for r in rects], dtype=np.float64)
    eu = np.array([r[1] for r in rects], dtype=np.float64)
    ev = np.array([r[2] for r in rects], dtype=np.float64)
    area = np.linalg.norm(np.cross(eu, ev), axis=1)
    which = rng.choice(len(rects), size=n, p=area / area.sum())
    st = rng.uniform(0.0, 1.0, (n, 2))
    return origins[which] + st[:, :1] * eu[which] + st[:, 1:] * ev[which]


def _box_faces(lo, hi):
    lo = np.asarray(lo, dtype=np.float64)
    d = np.asarray(hi, dtype=np.float64) - lo
    ex, ey, ez = np.diag(d)
    return [
        (lo, ex, ey), (lo + ez, ex, ey),
        (lo, ex, ez), (lo + ey, ex, ez),
        (lo, ey, ez), (lo + ex, ey, ez),
    ]


def _bent_l(n: int, rng: np.random.Generator) -> np.ndarray:
    long_arm = rng.uniform(1.6, 2.4)
    short_arm = rng.uniform(0.8, 1.3)
    thick = rng.uniform(0.25, 0.45)
    depth = rng.uniform(0.5, 0.9)
    # L cross-section as two boxes glued along y = thick; the glued patch is interior
    a = _box_faces((0, 0, 0), (long_arm, thick, depth))
    b = _box_faces((0, thick, 0), (thick, thick + short_arm, depth))
    top_rest = ((thick, thick, 0), (long_arm - thick, 0, 0), (0, 0, depth))
    rects = a[:3] + [top_rest] + a[4:] + b[:2] + b[3:]
    pts = _sample_rects(rects, n, rng)
    # bend the long arm about the y axis
    kappa = rng.uniform(0.3, 0.6)
    x, y, z = pts.T
    radius = 1.0 / kappa
    ang = kappa * x
    return np.column_stack([(radius - z) * np.sin(ang), y, radius - (radius - z) * np.cos(ang)])


def _blob(n: int, rng: np.random.Generator) -> np.ndarray:
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radius = np.ones(n)
    for freq in (1, 2, 3):
        for _ in range(2):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            amp = rng.uniform(0.1, 0.3) / freq
            phase = rng.uniform(0, 2 * np.pi)
            radius += amp * np.cos(freq * np.pi * (dirs @ axis) + phase)
    stretch = np.array([1.0, rng.uniform(0.6, 0.9), rng.uniform(0.4, 0.7)])
    return dirs * radius[:, None] * stretch


def _stair(n: int, rng: np.random.Generator) -> np.ndarray:
    steps = int(rng.integers(3, 6))
    runs = rng.uniform(0.25, 0.6, steps)
    rises = rng.uniform(0.15, 0.4, steps)
    width = rng.uniform(0.6, 1.2)
    rects = []
    x = 0.0
    z = 0.0
    for run, rise in zip(runs, rises):
        rects.append(((x, 0, z), (0, 0, rise), (0, width, 0)))  # riser
        z += rise
        rects.append(((x, 0, z), (run, 0, 0), (0, width, 0)))  # tread
        for yy in (0.0, width):
            rects.append(((x, yy, 0), (run, 0, 0), (0, 0, z)))  # side wall column
        x += run
    rects.append(((x, 0, 0), (0, 0, z), (0, width, 0)))  # back wall
    rects.append(((0, 0, 0), (x, 0, 0), (0, width, 0)))  # floor
    return _sample_rects(rects, n, rng)


_GENERATORS = {"torus": torus_surface, "bent_l": _bent_l, "blob": _blob, "stair": _stair}


def generate_shape(kind: str, n: int, seed: int) -> PointCloud:
    """``n`` surface samples of a parametric shape, normalized to centroid 0 and radius 1."""
    if kind not in _GENERATORS:
        raise InvalidArgument(f"unknown shape kind {kind!r}; choose from {SHAPE_KINDS}")
    if n < MIN_SHAPE_POINTS:
        raise InvalidArgument(f"shapes need at least {MIN_SHAPE_POINTS} points")
    rng = np.random.default_rng(seed)
    pts, _, _ = normalize(_GENERATORS[kind](n, rng))
    return PointCloud(pts, np.arange(n))


# ---------------------------------------------------------------------------
# Views, augmentation, pairs


def partial_view(cloud: PointCloud, direction, keep_fraction: float) -> PointCloud:
    """Keep the ceil(keep_fraction * N) points furthest along ``direction`` (original order)."""
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise InvalidArgument("view direction must be a unit vector")
    if not 0 < keep_fraction <= 1:
        raise InvalidArgument("keep_fraction must be in (0, 1]")
    n = len(cloud)
    m = int(math.ceil(keep_fraction * n - 1e-12))
    order = np.argsort(-(cloud.points @ d), kind="stable")
    return cloud.subset(np.sort(order[:m]))


def random_direction(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def random_transform(spec: AugmentSpec, rng: np.random.Generator) -> RigidTransform:
    angles = rng.uniform(0.0, spec.rot_max_deg, 3)
    t = rng.uniform(-spec.trans_range, spec.trans_range, 3)
    return RigidTransform(rotation_from_euler(angles), t)


def augment(cloud: PointCloud, spec: AugmentSpec, rng: np.random.Generator):
    """Random rigid motion plus optional iid Gaussian noise; returns (cloud, exact T)."""
    T = random_transform(spec, rng)
    pts = T.transform_points(cloud.points)
    if spec.noise_sigma > 0:
        pts = pts + rng.normal(0.0, spec.noise_sigma, pts.shape)
    return PointCloud(pts, cloud.ids), T


TRAIN_PAIR_MODES = ("partial", "full", "two_views")


def id_match(x: PointCloud, y: PointCloud) -> np.ndarray:
    """Row of y carrying the same id as each row of x, -1 where absent."""
    pos = {int(i): j for j, i in enumerate(y.ids)}
    return np.array([pos.get(int(i), -1) for i in x.ids], dtype=np.int64)


def make_training_pair(base: PointCloud, spec: AugmentSpec, rng: np.random.Generator,
                       mode: str = "partial") -> TrainingPair:
    """Training pair with a known dense map.

    ``partial``: one partial view X and Y = T(X) + noise (identity map);
    ``full``: the same on the whole shape; ``two_views``: X and Y from two
    independent viewpoints, matched through shared point ids.
    """
    if mode not in TRAIN_PAIR_MODES:
        raise InvalidArgument(f"training pair mode must be one of {TRAIN_PAIR_MODES}")
    if mode == "two_views":
        ev = make_eval_pair(base, spec, rng)
        return TrainingPair(ev.x, ev.y, ev.t_gt, id_match(ev.x, ev.y))
    view = base if mode == "full" else partial_view(base, random_direction(rng), spec.keep_fraction)
    x, _ = augment(view, spec, rng)
    y, T = augment(x, spec, rng)
    return TrainingPair(x, y, T)


def make_eval_pair(base: PointCloud, spec: AugmentSpec, rng: np.random.Generator,
                   min_shared: int = 3) -> EvalPair:
    """Two independent viewpoints, each independently augmented; truth is the relative motion."""
    for _ in range(MAX_VIEW_RETRIES):
        vx = partial_view(base, random_direction(rng), spec.keep_fraction)
        vy = partial_view(base, random_direction(rng), spec.keep_fraction)
        if np.intersect1d(vx.ids, vy.ids).size >= min_shared:
            break
    else:
        raise RegistrationError(f"no viewpoint pair with {min_shared} shared points")
    x, tx = augment(vx, spec, rng)
    y, ty = augment(vy, spec, rng)
    return EvalPair(x, y, compose(ty, invert(tx)))


def make_pair(base: PointCloud, spec: AugmentSpec, rng: np.random.Generator, mode: str = "train"):
    if mode == "train":
        return make_training_pair(base, spec, rng)
    if mode == "eval":
        return make_eval_pair(base, spec, rng)
    raise InvalidArgument("mode must be 'train' or 'eval'")


def dataset(kinds, count: int, n_points: int, seed: int) -> list:
    """``count`` shapes cycling through ``kinds`` with per-shape seeds derived from ``seed``."""
    ss = np.random.SeedSequence(seed)
    seeds = ss.generate_state(count)
    return [generate_shape(kinds[i % len(kinds)], n_points, int(seeds[i])) for i in range(count)]
