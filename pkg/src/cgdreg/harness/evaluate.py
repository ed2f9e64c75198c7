"""Evaluation campaigns over seeded held-out pairs."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..consensus import oracle_correspondence, register
from ..embedder import EmbedderParams, checkpoint
from ..errors import RegistrationError
from ..geometry import RigidTransform, rotation_rmse, translation_rmse
from .baselines import icp
from .config import Config
from .data import dataset, make_eval_pair

METHODS = ("cgd", "ransac", "chamfer", "icp")
REPORT_VERSION = 1


@dataclass
class EvalReport:
    """Per-pair errors and aggregates for every method; timings are kept apart."""

    config: dict
    pairs: list = field(default_factory=list)
    methods: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def mean_rmse_r(self, method: str) -> float:
        return self.methods[method]["mean_rmse_r"]

    def to_json(self) -> str:
        return json.dumps({"version": REPORT_VERSION, "config": self.config, "pairs": self.pairs,
                           "methods": self.methods}, indent=2, sort_keys=True)

    def write(self, out_dir, name: str = "eval_report.json") -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / name
        path.write_text(self.to_json() + "\n")
        (out / name.replace(".json", "_timings.json")).write_text(json.dumps(self.timings, indent=2) + "\n")
        return path


def _aggregate(rows: list) -> dict:
    r = np.array([row["rmse_r"] for row in rows])
    t = np.array([row["rmse_t"] for row in rows])
    return {
        "mean_rmse_r": float(r.mean()),
        "median_rmse_r": float(np.median(r)),
        # RMS over all per-pair residuals
        "rmse_r": float(np.sqrt(np.mean(r**2))),
        "mean_rmse_t": float(t.mean()),
        "rmse_t": float(np.sqrt(np.mean(t**2))),
        "failures": int(sum(row["failed"] for row in rows)),
        "count": len(rows),
    }


def eval_pairs(config: Config):
    ecfg = config.eval
    shapes = dataset(config.trainer.shape_kinds, ecfg.eval_pairs, config.trainer.num_points, ecfg.eval_seed)
    rng = np.random.default_rng(np.random.SeedSequence([ecfg.eval_seed, 7]))
    return [make_eval_pair(s, config.augment, rng) for s in shapes]


def _run_method(method: str, pair, params, config: Config, pair_index: int) -> RigidTransform:
    cons = replace(config.consensus, seed=int(np.random.SeedSequence([config.seed, pair_index]).generate_state(1)[0]))
    if method == "cgd":
        return register(pair.x, pair.y, params, cons).transform
    if method == "ransac":
        return register(pair.x, pair.y, params, cons, sampling="uniform").transform
    if method == "chamfer":
        return register(pair.x, pair.y, params, replace(cons, metric="chamfer")).transform
    if method == "oracle":
        return register(pair.x, pair.y, None, cons, P=oracle_correspondence(pair.x, pair.y)).transform
    if method == "icp":
        return icp(pair.x, pair.y, config.eval.icp_max_iters, config.eval.icp_tol)
    raise ValueError(f"unknown method {method}")


def evaluate(config: Config, params: EmbedderParams | str | Path | None, methods=METHODS,
             pairs=None, progress=None) -> EvalReport:
    """Run every method on the seeded evaluation set.

    ``params`` may be loaded parameters or a checkpoint path.
    """
    if isinstance(params, (str, Path)):
        params = checkpoint.load(params)
    methods = list(methods)
    if config.eval.eval_oracle and "oracle" not in methods:
        methods.append("oracle")
    if params is None and any(m in ("cgd", "ransac", "chamfer") for m in methods):
        raise FileNotFoundError("learned methods need a checkpoint")
    pairs = eval_pairs(config) if pairs is None else pairs
    report = EvalReport(config={"seed": config.seed, "eval_seed": config.eval.eval_seed,
                                "eval_pairs": len(pairs), "noise_sigma": config.augment.noise_sigma})
    rows = {m: [] for m in methods}
    for i, pair in enumerate(pairs):
        report.pairs.append({"index": i, "n_x": len(pair.x), "n_y": len(pair.y),
                             "shared": int(pair.shared_ids().size)})
        for m in methods:
            t0 = time.perf_counter()
            failed = False
            try:
                T = _run_method(m, pair, params, config, i)
            except RegistrationError:
                T, failed = RigidTransform.identity(), True
            report.timings.setdefault(m, []).append(time.perf_counter() - t0)
            rows[m].append({"index": i, "rmse_r": rotation_rmse(T, pair.t_gt),
                            "rmse_t": translation_rmse(T, pair.t_gt), "failed": failed})
        if progress is not None:
            progress(i, {m: rows[m][-1]["rmse_r"] for m in methods})
    for m in methods:
        agg = _aggregate(rows[m])
        report.methods[m] = {"aggregate": agg, "per_pair": rows[m], "mean_rmse_r": agg["mean_rmse_r"]}
    report.timings = {m: {"mean_seconds": float(np.mean(v)), "max_seconds": float(np.max(v))}
                      for m, v in report.timings.items()}
    return report
