"""Self-supervised training loop for the embedder."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import losses
from ..embedder import EmbedderParams, backward, checkpoint, embed, init_params, ri_features
from ..errors import NonFiniteLoss
from .config import Config
from .data import TrainingPair, dataset, make_training_pair

log = logging.getLogger(__name__)

CURVE_FIELDS = ("epoch", "loss", "loss_r", "loss_sim", "loss_c", "lr")


@dataclass
class TrainerState:
    params: EmbedderParams
    m: dict
    v: dict
    step: int = 0
    epoch: int = 0
    lr: float = 5e-4
    curve: list = field(default_factory=list)

    @classmethod
    def fresh(cls, params: EmbedderParams, lr: float) -> "TrainerState":
        zeros = {k: np.zeros_like(t) for k, t in params.tensors.items()}
        return cls(params, zeros, {k: z.copy() for k, z in zeros.items()}, lr=lr)


def pair_loss(params: EmbedderParams, pair: TrainingPair, cfg: losses.LossConfig, ri_k: int,
              with_grad: bool = True):
    """Unified loss on one training pair; returns (terms dict, param grads or None)."""
    terms = {"loss_r": 0.0, "loss_sim": 0.0, "loss_c": 0.0}
    embs = []
    for cloud in (pair.x, pair.y):
        levels, trace = embed(params, cloud, ri_features(cloud, ri_k))
        embs.append((levels, trace))
    (lx, tx), (ly, ty) = embs
    final_g = []
    level_g = []
    for levels in (lx, ly):
        if cfg.lambda_r > 0:
            v, g = losses.repulsion_total(levels, cfg)
            terms["loss_r"] += v
            level_g.append([cfg.lambda_r * gi for gi in g])
        else:
            level_g.append(None)
        if cfg.lambda_sim > 0:
            pts = levels.levels[-1].points
            v, g = losses.similarity(pts, levels.final, levels.final_graph, cfg)
            terms["loss_sim"] += v
            final_g.append(cfg.lambda_sim * g)
        else:
            final_g.append(np.zeros_like(levels.final))
    if cfg.lambda_c > 0:
        v, gx, gy = losses.contrastive(lx.final, ly.final, ly.final_graph, cfg, match=pair.match)
        terms["loss_c"] = v
        final_g[0] = final_g[0] + cfg.lambda_c * gx
        final_g[1] = final_g[1] + cfg.lambda_c * gy
    terms["loss"] = losses.total(terms["loss_r"], terms["loss_sim"], terms["loss_c"], cfg)
    if not with_grad:
        return terms, None
    grads = None
    for (levels, trace), fg, lg in zip(embs, final_g, level_g):
        g = backward(params, trace, fg, lg)
        grads = g if grads is None else {k: grads[k] + g[k] for k in grads}
    return terms, grads


def adam_update(state: TrainerState, grads: dict, beta1: float, beta2: float, eps: float) -> None:
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        state.params.tensors[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def _dump_failure(out_dir, epoch, step, terms, pair) -> Path | None:
    if out_dir is None:
        return None
    path = Path(out_dir) / "nonfinite_dump.json"
    path.write_text(json.dumps({
        "epoch": epoch, "step": step, "terms": {k: repr(v) for k, v in terms.items()},
        "x": pair.x.points.tolist(), "y": pair.y.points.tolist(),
    }))
    return path


def train(config: Config, out_dir=None, shapes=None, progress=None) -> EmbedderParams:
    """Train from scratch; writes ``checkpoint.cgdn`` and ``training_curve.csv`` under ``out_dir``."""
    tcfg = config.trainer
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    params = init_params(config.arch, int(np.random.SeedSequence([config.seed, 2]).generate_state(1)[0]))
    if shapes is None:
        shapes = dataset(tcfg.shape_kinds, tcfg.num_shapes, tcfg.num_points, config.seed)
    state = TrainerState.fresh(params, tcfg.learning_rate(0))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    for epoch in range(tcfg.epochs):
        state.epoch = epoch
        state.lr = tcfg.learning_rate(epoch)
        sums = {"loss": 0.0, "loss_r": 0.0, "loss_sim": 0.0, "loss_c": 0.0}
        acc = None
        order = rng.permutation(len(shapes))
        for i, si in enumerate(order):
            pair = make_training_pair(shapes[si], config.augment, rng, mode=tcfg.train_pairs)
            terms, grads = pair_loss(state.params, pair, config.loss, config.ri_k)
            if not all(np.isfinite(v) for v in terms.values()):
                dump = _dump_failure(out_dir, epoch, state.step, terms, pair)
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, pair {i}; dump: {dump}")
            for k in sums:
                sums[k] += terms[k]
            acc = grads if acc is None else {k: acc[k] + grads[k] for k in acc}
            if (i + 1) % tcfg.accumulate == 0 or i == len(order) - 1:
                adam_update(state, acc, tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps)
                acc = None
        row = {"epoch": epoch, **{k: v / len(order) for k, v in sums.items()}, "lr": state.lr}
        state.curve.append(row)
        log.info("epoch %d loss %.4f (R %.4f Sim %.4f C %.4f) lr %.3g", epoch, row["loss"],
                 row["loss_r"], row["loss_sim"], row["loss_c"], row["lr"])
        if progress is not None:
            progress(row, state.params)

    if out_dir is not None:
        checkpoint.save(state.params, Path(out_dir) / "checkpoint.cgdn")
        write_curve(state.curve, Path(out_dir) / "training_curve.csv")
    return state.params


def write_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        w.writeheader()
        for row in curve:
            w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in CURVE_FIELDS})
