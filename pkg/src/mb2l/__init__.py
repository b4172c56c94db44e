"""Multi-level bidirectional biomimetic EEG-image alignment, desk scale.

The package is organized by pipeline stage:

- :mod:`mb2l.foveation` — image degradations and learnable radial gates
- :mod:`mb2l.eeg` — channel priors, temporal encoders, cross-attention
- :mod:`mb2l.images` — trainable image tower plus the frozen reference encoder
- :mod:`mb2l.alignment` — projection heads and the bidirectional InfoNCE loss
- :mod:`mb2l.datasets` — synthetic paired data and the on-disk format
- :mod:`mb2l.model` / :mod:`mb2l.trainer` — the assembled model and its loop
- :mod:`mb2l.evaluator` — retrieval metrics, similarity exports, ablation grid
- :mod:`mb2l.cli` — ``mb2l`` command-line entry points
"""

from .alignment import ContrastiveConfig, info_nce_bidirectional
from .datasets import generate_synthetic, load_things_format, save_things_format
from .eeg import ChannelPrior, EEGEpoch, default_channel_prior, encode_eeg
from .errors import DataFormatError, InvalidParameterError, NumericalError
from .evaluator import (
    SimilarityMatrix,
    retrieval_metrics,
    run_ablation_grid,
    similarity_matrix,
    table4_specs,
    top_k_accuracy,
)
from .foveation import FoveaPrior, apply_abvp, degrade_image, gating_weight
from .model import AlignmentModel, ModelConfig, build_model, config_for_samples
from .trainer import TrainConfig, load_checkpoint, preset, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AlignmentModel",
    "ChannelPrior",
    "ContrastiveConfig",
    "DataFormatError",
    "EEGEpoch",
    "FoveaPrior",
    "InvalidParameterError",
    "ModelConfig",
    "NumericalError",
    "SimilarityMatrix",
    "TrainConfig",
    "apply_abvp",
    "build_model",
    "config_for_samples",
    "default_channel_prior",
    "degrade_image",
    "encode_eeg",
    "gating_weight",
    "generate_synthetic",
    "info_nce_bidirectional",
    "load_checkpoint",
    "load_things_format",
    "preset",
    "retrieval_metrics",
    "run_ablation_grid",
    "save_checkpoint",
    "save_things_format",
    "similarity_matrix",
    "table4_specs",
    "top_k_accuracy",
    "train",
    "__version__",
]
