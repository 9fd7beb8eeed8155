"""Rating-fraud detection: a Dirichlet-multinomial mixture over per-user
star-rating and inter-arrival histograms, plus a posterior-averaged
suspiciousness score."""

from .errors import BirdnestError, DataError, DegenerateModelError, DomainError
from .fit import BirdModel, ClusterParams, FitLimits, fit_bird, log_joint, select_k
from .ingest import (
    BucketingConfig,
    Histograms,
    RatingEvent,
    UserHistogram,
    build_histograms,
    choose_base,
    parse_ratings,
)
from .kernels import (
    dirichlet_log_pdf,
    dirmult_log_marginal,
    fixed_point_update,
    sample_dirichlet,
)
from .score import SuspiciousnessRecord, expected_surprise, log_global_density, nest_scores
from .synth import FraudSpec, SynthSpec, generate, generate_events

__all__ = [
    "BirdnestError", "DataError", "DegenerateModelError", "DomainError",
    "BirdModel", "ClusterParams", "FitLimits", "fit_bird", "log_joint", "select_k",
    "BucketingConfig", "Histograms", "RatingEvent", "UserHistogram",
    "build_histograms", "choose_base", "parse_ratings",
    "dirichlet_log_pdf", "dirmult_log_marginal", "fixed_point_update", "sample_dirichlet",
    "SuspiciousnessRecord", "expected_surprise", "log_global_density", "nest_scores",
    "FraudSpec", "SynthSpec", "generate", "generate_events",
]

__version__ = "0.1.0"
