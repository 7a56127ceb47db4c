"""Review-augmented contrastive training engine for implicit-feedback
recommenders: corpus preparation, collaborative backbones (inner-product MF
and LightGCN), review-view and alignment contrastive losses, training,
evaluation, robustness, and pilot analysis."""

import os as _os

__version__ = "0.1.0"

# RECAFR_THREADS caps worker threads; the BLAS pools read these variables at
# import time, so the hint must land before numpy loads below.
_cap = _os.environ.get("RECAFR_THREADS", "")
if _cap.isdigit() and int(_cap) >= 1:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _cap)

from .backbone import BackboneKind, ParameterSet, load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config
from .corpus import (
    InteractionTable,
    RawInteraction,
    ReviewEmbeddingStore,
    load_embedding_file,
    load_interactions,
    write_embedding_file,
)
from .evaluation import MetricsReport, evaluate, pilot_distributions, robustness_sweep
from .trainer import TrainResult, train
from .views import ReviewSets, ViewAssignment, build_review_sets, sample_views

__all__ = [
    "BackboneKind",
    "InteractionTable",
    "MetricsReport",
    "ParameterSet",
    "RawInteraction",
    "ReviewEmbeddingStore",
    "ReviewSets",
    "TrainConfig",
    "TrainResult",
    "ViewAssignment",
    "build_review_sets",
    "evaluate",
    "load_checkpoint",
    "load_config",
    "load_embedding_file",
    "load_interactions",
    "pilot_distributions",
    "robustness_sweep",
    "sample_views",
    "save_checkpoint",
    "train",
    "write_embedding_file",
]
