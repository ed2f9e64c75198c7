"""Flat ``key = value`` configuration covering every tunable of the pipeline.

Lines are ``key = value``; ``#`` starts a comment. Tuples are comma separated.
Unknown keys are an error.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..consensus import ConsensusConfig
from ..embedder import Architecture
from ..errors import InvalidArgument
from ..losses import LossConfig
from .data import ASYMMETRIC_KINDS, TRAIN_PAIR_MODES, AugmentSpec


@dataclass(frozen=True)
class TrainerSettings:
    epochs: int = 50
    num_shapes: int = 200
    num_points: int = 512
    shape_kinds: tuple = ASYMMETRIC_KINDS
    lr: float = 5e-4
    lr_decay: float = 0.9
    lr_step: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    accumulate: int = 1
    train_pairs: str = "partial"

    def __post_init__(self):
        if self.epochs < 0 or self.num_shapes < 1 or self.accumulate < 1 or self.lr_step < 1:
            raise InvalidArgument("invalid trainer settings")
        if self.train_pairs not in TRAIN_PAIR_MODES:
            raise InvalidArgument(f"train_pairs must be one of {TRAIN_PAIR_MODES}")

    def learning_rate(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.lr_step)


@dataclass(frozen=True)
class EvalSettings:
    eval_pairs: int = 50
    eval_seed: int = 1_000_003
    icp_max_iters: int = 50
    icp_tol: float = 1e-10
    eval_oracle: bool = True


@dataclass(frozen=True)
class Config:
    seed: int = 0
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)
    arch: Architecture = field(default_factory=Architecture)
    trainer: TrainerSettings = field(default_factory=TrainerSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    @property
    def ri_k(self) -> int:
        return self.arch.in_dim - 4

    def consensus_for(self, **overrides) -> ConsensusConfig:
        return replace(self.consensus, seed=overrides.pop("seed", self.consensus.seed), **overrides)


_SECTIONS = ("augment", "loss", "consensus", "arch", "trainer", "eval")
_SKIP = {("consensus", "seed"), ("arch", "in_dim")}


def _registry(cfg: Config) -> dict:
    reg = {"seed": (None, "seed"), "ri_k": ("arch", "ri_k")}
    for section in _SECTIONS:
        for f in fields(getattr(cfg, section)):
            if (section, f.name) in _SKIP:
                continue
            if f.name in reg:
                raise AssertionError(f"duplicate config key {f.name}")
            reg[f.name] = (section, f.name)
    return reg


def _coerce(raw: str, current):
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise InvalidArgument(f"not a boolean: {raw!r}")
    if isinstance(current, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        sample = current[0] if current else ""
        return tuple(_coerce(s, sample) for s in items)
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def from_pairs(pairs: dict, base: Config | None = None) -> Config:
    cfg = base or Config()
    reg = _registry(cfg)
    updates = {s: {} for s in _SECTIONS}
    top = {}
    for key, raw in pairs.items():
        if key not in reg:
            raise InvalidArgument(f"unknown config key {key!r}")
        section, name = reg[key]
        if section is None:
            top[name] = int(raw) if isinstance(raw, str) else raw
            continue
        if name == "ri_k":
            updates["arch"]["in_dim"] = (int(raw) if isinstance(raw, str) else raw) + 4
            continue
        current = getattr(getattr(cfg, section), name)
        updates[section][name] = _coerce(raw, current) if isinstance(raw, str) else raw
    kwargs = {s: replace(getattr(cfg, s), **u) for s, u in updates.items() if u}
    out = replace(cfg, **kwargs, **top)
    # the consensus RNG follows the global seed
    return replace(out, consensus=replace(out.consensus, seed=out.seed))


def parse_config_text(text: str, base: Config | None = None) -> Config:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise InvalidArgument(f"config line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return from_pairs(pairs, base)


def load_config(path, base: Config | None = None) -> Config:
    return parse_config_text(Path(path).read_text(), base)


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: Config) -> str:
    lines = [f"seed = {cfg.seed}", f"ri_k = {cfg.ri_k}"]
    for section in _SECTIONS:
        lines.append(f"# {section}")
        obj = getattr(cfg, section)
        for f in fields(obj):
            if (section, f.name) in _SKIP:
                continue
            lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def as_dict(cfg: Config) -> dict:
    return dataclasses.asdict(cfg)
