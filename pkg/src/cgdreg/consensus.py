"""Soft correspondence, confidence guided sampling and CGD consensus.

Pipeline for a source ``x`` and target ``y``:

1. embed both clouds and form the cosine matrix ``P`` (|x| x |y|);
2. turn ``P`` into a per-source-point confidence and a sampling pmf;
3. draw ``Q`` source points, cut them into ``V = Q // r`` groups and solve one
   rigid transform per group from the argmax correspondences;
4. keep the candidate with the lowest confidence guided distance.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .distances import (CgdParams, FilterParams, NearestNeighborIndex, cgd, chamfer,
                        max_sampling_distance)
from .embedder import EmbedderParams, embed, ri_features
from .errors import (DegenerateConfidence, DegenerateGeometry, DegenerateSampling,
                     InvalidArgument, NoConsensus)
from .geometry import PointCloud, RigidTransform, _as_points, kabsch

MAX_RESAMPLE_FACTOR = 100


@dataclass(frozen=True)
class CorrespondenceMatrix:
    P: np.ndarray

    @property
    def shape(self):
        return self.P.shape


@dataclass(frozen=True)
class ConfidenceDistribution:
    c: np.ndarray
    s: np.ndarray


@dataclass(frozen=True)
class ConsensusConfig:
    q_fraction: float = 0.1
    r: int = 3
    gamma: float = 2.0
    cutoff_multiplier: float = 2.0
    seed: int = 0
    metric: str = "cgd"
    workers: int = 1

    def __post_init__(self):
        if self.r < 3:
            raise InvalidArgument("experiment size r must be >= 3")
        if not 0 < self.q_fraction <= 1:
            raise InvalidArgument("q_fraction must be in (0, 1]")
        if self.metric not in ("cgd", "chamfer"):
            raise InvalidArgument("metric must be 'cgd' or 'chamfer'")
        if self.workers < 1:
            raise InvalidArgument("workers must be >= 1")
        CgdParams(self.gamma)

    def num_draws(self, n_source: int) -> int:
        return int(math.ceil(self.q_fraction * n_source))


@dataclass
class ExperimentSet:
    """Groups, their candidate transforms (None when dropped) and scores (inf when dropped)."""

    groups: list
    candidates: list
    scores: np.ndarray
    best: int

    @property
    def transform(self) -> RigidTransform:
        return self.candidates[self.best]


class Registration(NamedTuple):
    transform: RigidTransform
    experiments: ExperimentSet
    diagnostics: dict


def soft_correspondence(h_x, h_y) -> CorrespondenceMatrix:
    """Cosine similarity of every source/target embedding pair."""
    hx = np.asarray(h_x, dtype=np.float64)
    hy = np.asarray(h_y, dtype=np.float64)
    nx, ny = np.linalg.norm(hx, axis=1), np.linalg.norm(hy, axis=1)
    if np.any(nx == 0) or np.any(ny == 0):
        raise InvalidArgument("zero-norm embedding row")
    P = (hx / nx[:, None]) @ (hy / ny[:, None]).T
    return CorrespondenceMatrix(np.clip(P, -1.0, 1.0))


def confidence(P) -> ConfidenceDistribution:
    """Column-normalize the shifted similarities, take row maxima, normalize to a pmf.

    Cosines are first mapped to [0, 1] by ``(P + 1) / 2`` so that column sums are
    non-negative; the raw ``P`` is still what weights the distance.
    """
    P = np.asarray(getattr(P, "P", P), dtype=np.float64)
    shifted = (P + 1.0) / 2.0
    col = shifted.sum(axis=0)
    if np.any(np.abs(col) < 1e-9):
        raise DegenerateConfidence("a column of the correspondence matrix sums to ~0")
    c = (shifted / col).max(axis=1)
    if not np.any(c > 0):
        raise DegenerateConfidence("no source point has positive confidence")
    c = np.maximum(c, 0.0)
    return ConfidenceDistribution(c, c / c.sum())


def uniform_distribution(n: int) -> ConfidenceDistribution:
    return ConfidenceDistribution(np.ones(n), np.full(n, 1.0 / n))


def sample_experiments(dist: ConfidenceDistribution, cfg: ConsensusConfig, rng: np.random.Generator) -> list:
    """Draw Q source indices from ``dist.s`` and split them into V groups of r distinct indices."""
    s = np.asarray(dist.s, dtype=np.float64)
    n = s.size
    q = cfg.num_draws(n)
    if q < cfg.r or n < cfg.r:
        raise InvalidArgument(f"Q={q} draws cannot fill a group of r={cfg.r}")
    if np.count_nonzero(s > 0) < cfg.r:
        raise DegenerateSampling("fewer than r source points have non-zero probability")
    cdf = np.cumsum(s)
    cdf /= cdf[-1]

    def draw():
        return min(int(np.searchsorted(cdf, rng.random(), side="right")), n - 1)

    groups = []
    for _ in range(q // cfg.r):
        group = []
        attempts = 0
        while len(group) < cfg.r:
            i = draw()
            if i in group:
                attempts += 1
                if attempts > MAX_RESAMPLE_FACTOR * cfg.r:
                    raise DegenerateSampling("could not draw r distinct indices for a group")
                continue
            group.append(i)
        groups.append(group)
    for _ in range(q % cfg.r):
        draw()  # leftover draws are discarded
    return groups


def solve_experiment(group, P, x, y) -> RigidTransform:
    P = np.asarray(getattr(P, "P", P))
    group = np.asarray(group, dtype=np.int64)
    if group.size < 3:
        raise InvalidArgument("an experiment needs at least 3 points")
    match = np.argmax(P[group], axis=1)
    return kabsch(_as_points(x)[group], _as_points(y)[match])


def _score_fn(x_pts, y_pts, P, cfg: ConsensusConfig):
    f = FilterParams(max_sampling_distance(x_pts, y_pts), cfg.cutoff_multiplier)
    g = CgdParams(cfg.gamma)
    y_index = NearestNeighborIndex(y_pts)

    def score(T: RigidTransform) -> float:
        tx = T.transform_points(x_pts)
        if cfg.metric == "chamfer":
            return chamfer(tx, y_pts, f)
        return cgd(tx, y_pts, P, g, f, y_index=y_index)

    return score


def select_best(candidates, x, y, P, cfg: ConsensusConfig, groups=None) -> ExperimentSet:
    """Score every candidate (None entries are dropped ones) and keep the argmin."""
    x_pts, y_pts = _as_points(x), _as_points(y)
    P = np.asarray(getattr(P, "P", P))
    candidates = list(candidates)
    valid = [i for i, T in enumerate(candidates) if T is not None]
    if not valid:
        raise NoConsensus("no valid candidate transform")
    score = _score_fn(x_pts, y_pts, P, cfg)
    todo = [candidates[i] for i in valid]
    if cfg.workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            values = list(pool.map(score, todo))
    else:
        values = [score(T) for T in todo]
    scores = np.full(len(candidates), np.inf)
    scores[valid] = values
    best = int(np.argmin(scores))
    if groups is None:
        groups = [[] for _ in candidates]
    return ExperimentSet(list(groups), candidates, scores, best)


def run_consensus(x, y, P, dist: ConfidenceDistribution, cfg: ConsensusConfig,
                  rng: np.random.Generator) -> ExperimentSet:
    groups = sample_experiments(dist, cfg, rng)
    candidates = []
    for g in groups:
        try:
            candidates.append(solve_experiment(g, P, x, y))
        except DegenerateGeometry:
            candidates.append(None)
    return select_best(candidates, x, y, P, cfg, groups=groups)


def embed_pair(params: EmbedderParams, x, y):
    k_ri = params.arch.in_dim - 4
    out = []
    for cloud in (x, y):
        levels, _ = embed(params, cloud, ri_features(cloud, k_ri))
        out.append(levels.final)
    return out


def _histogram(s: np.ndarray, bins: int = 10) -> dict:
    counts, edges = np.histogram(s, bins=bins)
    return {"counts": counts.tolist(), "edges": edges.tolist()}


def register(x, y, params: Optional[EmbedderParams], cfg: ConsensusConfig, P=None,
             sampling: str = "confidence") -> Registration:
    """Estimate the rigid transform taking ``x`` onto ``y``.

    ``P`` overrides the learned correspondence matrix (oracle runs); then
    ``params`` may be None. ``sampling="uniform"`` replaces the confidence pmf by
    the uniform one (RANSAC-style baseline).
    """
    x_pts, y_pts = _as_points(x), _as_points(y)
    for pts in (x_pts, y_pts):
        if pts.shape[0] < 16:
            raise InvalidArgument("register needs at least 16 points per cloud")
    t0 = time.perf_counter()
    if P is None:
        if params is None:
            raise InvalidArgument("register needs embedder params or an explicit P")
        hx, hy = embed_pair(params, x_pts, y_pts)
        P = soft_correspondence(hx, hy).P
    else:
        P = np.asarray(getattr(P, "P", P), dtype=np.float64)
        if P.shape != (x_pts.shape[0], y_pts.shape[0]):
            raise InvalidArgument("P does not match the cloud sizes")
    t1 = time.perf_counter()
    if sampling == "confidence":
        dist = confidence(P)
    elif sampling == "uniform":
        dist = uniform_distribution(x_pts.shape[0])
    else:
        raise InvalidArgument(f"unknown sampling mode {sampling!r}")
    rng = np.random.default_rng(cfg.seed)
    exps = run_consensus(x_pts, y_pts, P, dist, cfg, rng)
    t2 = time.perf_counter()
    diagnostics = {
        "sampling": sampling,
        "metric": cfg.metric,
        "num_groups": len(exps.groups),
        "num_valid": int(np.isfinite(exps.scores).sum()),
        "groups": [list(map(int, g)) for g in exps.groups],
        "scores": [float(v) if np.isfinite(v) else None for v in exps.scores],
        "best": exps.best,
        "confidence_histogram": _histogram(dist.s),
        "embed_seconds": t1 - t0,
        "consensus_seconds": t2 - t1,
    }
    return Registration(exps.transform, exps, diagnostics)


def ransac_register(x, y, params, cfg: ConsensusConfig, P=None) -> Registration:
    return register(x, y, params, cfg, P=P, sampling="uniform")


def oracle_correspondence(x: PointCloud, y: PointCloud) -> np.ndarray:
    """Ground-truth correspondence matrix built from shared point ids.

    Matched source rows are one-hot (+1 at the partner, 0 elsewhere); rows of
    source points without a partner are -1, so they receive zero confidence.
    """
    if x.ids is None or y.ids is None:
        raise InvalidArgument("oracle correspondence needs point ids on both clouds")
    P = np.full((len(x), len(y)), -1.0)
    pos = {int(i): j for j, i in enumerate(y.ids)}
    for i, pid in enumerate(x.ids):
        j = pos.get(int(pid))
        if j is not None:
            P[i] = 0.0
            P[i, j] = 1.0
    return P
