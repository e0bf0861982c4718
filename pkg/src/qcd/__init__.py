"""Bayesian quickest changepoint detection: Shiryaev and Shiryaev-Roberts
procedures for non-iid models, with a Monte Carlo harness for their operating
characteristics."""

__version__ = "0.1.0"

from .detectors import (
    DetectorState,
    posterior,
    run_detector,
    shiryaev_threshold,
    shiryaev_update,
    sr_threshold,
    sr_update,
)
from .errors import (
    CensoringExceeded,
    ConfigError,
    DegenerateFit,
    DegeneratePrior,
    InvalidBudget,
    InvalidIndex,
    InvalidModel,
    NoSurvivors,
)
from .models import (
    AR1Correlation,
    ARSignal,
    ConstantLLR,
    IIDGaussianMean,
    PathRecord,
    VarianceInvariant,
    generate_path,
    information_rate,
    llr_increment,
    llr_path,
    make_model,
)
from .priors import Prior
