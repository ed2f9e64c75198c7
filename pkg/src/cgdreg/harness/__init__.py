"""Synthetic data, training, evaluation, baselines, file I/O and configuration."""

from .config import Config, dump_config, from_pairs, load_config, parse_config_text
from .data import (
    ASYMMETRIC_KINDS,
    SHAPE_KINDS,
    TRAIN_PAIR_MODES,
    AugmentSpec,
    EvalPair,
    TrainingPair,
    augment,
    dataset,
    generate_shape,
    make_eval_pair,
    make_pair,
    make_training_pair,
    partial_view,
)
from .evaluate import METHODS, EvalReport, evaluate
from .io import read_cloud, write_cloud
from .baselines import icp
from .train import train

__all__ = [
    "ASYMMETRIC_KINDS", "SHAPE_KINDS", "TRAIN_PAIR_MODES", "METHODS",
    "AugmentSpec", "Config", "EvalPair", "EvalReport", "TrainingPair",
    "augment", "dataset", "dump_config", "evaluate", "from_pairs", "generate_shape", "icp",
    "load_config", "make_eval_pair", "make_pair", "make_training_pair", "parse_config_text",
    "partial_view", "read_cloud", "train", "write_cloud",
]
