"""From-scratch tree ensembles: histogram gradient boosting, random forest
and extremely randomized trees, with per-feature gain accounting."""

from .binning import Binner, bin_matrix, fit_binner
from .config import SELECTOR_CONFIG, SELECTOR_SEED, VARIANTS, ForestConfig
from .model import (
    Ensemble,
    TreeNode,
    feature_gains,
    load,
    logistic_grad_hess,
    predict_proba,
    raw_scores,
    save,
    staged_scores,
    train,
)

__all__ = [
    "Binner", "bin_matrix", "fit_binner",
    "SELECTOR_CONFIG", "SELECTOR_SEED", "VARIANTS", "ForestConfig",
    "Ensemble", "TreeNode", "feature_gains", "load", "logistic_grad_hess",
    "predict_proba", "raw_scores", "save", "staged_scores", "train",
]
