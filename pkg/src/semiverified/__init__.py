"""Semi-verified mean estimation and Byzantine-robust distributed gradient descent."""

__version__ = "0.1.0"

from .estimator import (  # noqa: E402
    EstimateResult,
    EstimatorParams,
    EstimatorTrace,
    PointSet,
    SpectralState,
    filter_once,
    recommend_params,
    sample_covariance,
    sample_mean,
    semi_verified_mean,
    tau_scores,
    top_spectrum,
)

__all__ = [
    "EstimateResult",
    "EstimatorParams",
    "EstimatorTrace",
    "PointSet",
    "SpectralState",
    "filter_once",
    "recommend_params",
    "sample_covariance",
    "sample_mean",
    "semi_verified_mean",
    "tau_scores",
    "top_spectrum",
]
