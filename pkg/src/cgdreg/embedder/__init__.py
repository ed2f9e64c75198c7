from .checkpoint import load, save
from .features import ri_features
from .network import (
    Architecture,
    EmbedderParams,
    EmbedderTrace,
    LevelEmbeddings,
    backward,
    edgeconv_backward,
    edgeconv_forward,
    embed,
    init_params,
    interpolation_weights,
    level_sizes,
    replay,
)

__all__ = [
    "Architecture",
    "EmbedderParams",
    "EmbedderTrace",
    "LevelEmbeddings",
    "backward",
    "edgeconv_backward",
    "edgeconv_forward",
    "embed",
    "init_params",
    "interpolation_weights",
    "level_sizes",
    "load",
    "replay",
    "ri_features",
    "save",
]
