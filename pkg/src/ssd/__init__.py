"""Feature-space outlier detection with cluster-conditioned Mahalanobis scores."""

from .detector import (
    Calibration,
    ClusterGaussian,
    DetectorModel,
    FewShotModel,
    calibrate,
    classify,
    eigen_discrimination_report,
    euclid_score,
    euclid_scores,
    fewshot_fit,
    fit,
    ssd_k_score,
    ssd_k_scores,
    ssd_score,
    ssd_scores,
)
from .metrics import EvalReport, LabeledScores, aupr, auroc, evaluate_scores, fpr_at_tpr

__version__ = "0.1.0"
