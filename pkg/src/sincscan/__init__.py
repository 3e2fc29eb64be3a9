"""Raw-waveform anti-spoofing toolkit.

A learnable sinc filterbank frontend feeds a bidirectional selective
state-space backbone; utterance scores are evaluated with EER and the
normalized tandem detection cost.  Everything runs on a self-contained
float64 reverse-mode autodiff core, so results are reproducible
bit-for-bit for a fixed seed on one platform.
"""

from .autodiff import Tensor, backward, finite_difference_check
from .config import TrainConfig, full_config, preset_config, tiny_config
from .estimator import SpoofDetector
from .metrics import (ScoreRecord, compute_eer, compute_min_tdcf,
                      read_score_file, write_score_file)
from .model import Detector, load_checkpoint, save_checkpoint
from .rng import Rng
from .training import (TrainResult, embed_arrays, score_arrays,
                       train_on_arrays, train_on_corpus)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "finite_difference_check", "Rng",
    "TrainConfig", "full_config", "preset_config", "tiny_config",
    "SpoofDetector", "Detector", "load_checkpoint", "save_checkpoint",
    "ScoreRecord", "compute_eer", "compute_min_tdcf",
    "read_score_file", "write_score_file",
    "TrainResult", "embed_arrays", "score_arrays",
    "train_on_arrays", "train_on_corpus",
    "__version__",
]
