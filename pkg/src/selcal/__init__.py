"""Soft-rank AURC losses, weighted risks and calibration metrics with exact oracles."""

from .core import argmax_predict, empirical_error, load_predictions, softmax
from .csf import CsfKind, csf_gradient, csf_score
from .losses import (
    FocusConfig,
    LossGrad,
    RAurcConfig,
    cross_entropy,
    focal,
    inverse_focal,
    inverse_focal_critical_gamma,
    mc_aurc_loss,
    r_aurc_loss,
    weight_curves,
)
from .metrics import (
    BinKind,
    BinningScheme,
    aurc_curve,
    binned_cwece,
    binned_ece,
    brier,
    mc_aurc,
    reliability_bins,
    risk_coverage_curve,
)
from .softrank import SoftRankConfig, hard_rank_ascending, soft_rank_ascending, soft_rank_vjp

__version__ = "0.1.0"
