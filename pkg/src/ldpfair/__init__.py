"""Discrimination-free insurance pricing with locally privatized sensitive attributes."""

__version__ = "0.1.0"

from .correction import CorrectionMatrices, corrected_risk_weights, pi_inverse, recover_marginal, t_inverse
from .data import Dataset, Record, SplitConfig, empirical_marginal, load_csv, split
from .fair import (
    GroupModelSet,
    PremiumReport,
    ReferenceWeights,
    evaluate,
    mptp,
    mptp_ldp,
    premium_report,
    train_transformation,
    unawareness_model,
)
from .models import FeedForwardNet, LinearModel, TrainConfig, TrainingDiverged, loss, train_weighted
from .noise import AnchorEstimate, c1_map, c1_procedure, estimate_pi_anchor, fit_posterior, perturb_pi
from .privacy import RRParams, pi_from_target, privatize, privatize_dataset, rr_params
