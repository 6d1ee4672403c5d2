"""Model architectures, training loops, and checkpoint persistence."""

from .architectures import (BaselineLm, EnhancedLm, FvPredictor, MODEL_KINDS,
                            MultiTaskLm, ReversedLm, enhanced_forward,
                            extract_future_vectors, extract_fv_matrix,
                            greedy_continue, lm_forward, mt_forward,
                            score_sequence)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import LmConfig, TrainConfig
from .training import (ce_loss, clamp_warning_count, corpus_ce, mse_loss,
                       reset_clamp_warnings, train_enhanced, train_fv_predictor,
                       train_lm, train_mt)

__all__ = [
    "BaselineLm", "ReversedLm", "FvPredictor", "EnhancedLm", "MultiTaskLm",
    "MODEL_KINDS", "LmConfig", "TrainConfig",
    "lm_forward", "enhanced_forward", "mt_forward",
    "extract_future_vectors", "extract_fv_matrix",
    "score_sequence", "greedy_continue",
    "ce_loss", "mse_loss", "corpus_ce",
    "clamp_warning_count", "reset_clamp_warnings",
    "train_lm", "train_fv_predictor", "train_enhanced", "train_mt",
    "save_checkpoint", "load_checkpoint",
]
