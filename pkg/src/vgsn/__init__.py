"""Glyph generation with a variational grid setting network."""

from .corpus import PairedCorpus, load_paired_corpus, load_pgm, save_pgm
from .estimator import GlyphTransfer
from .model import GridSpec, ModelConfig, default_config, init_params, vae_forward, vgsn_forward
from .serialization import load_model, save_model
from .training import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "GlyphTransfer",
    "GridSpec",
    "ModelConfig",
    "PairedCorpus",
    "TrainConfig",
    "default_config",
    "fit",
    "init_params",
    "load_model",
    "load_paired_corpus",
    "load_pgm",
    "save_model",
    "save_pgm",
    "vae_forward",
    "vgsn_forward",
]
