"""Semi-verified mean estimation by iterative spectral filtering.

The estimator receives a large untrusted point set ``S0`` and a small trusted
set ``A``. It repeatedly whitens the untrusted set inside its top-``p``
eigenspace, removes points with large whitened residuals, and stops once the
``p``-th eigenvalue of the surviving covariance falls below ``lambda_c``. The
final estimate uses ``A`` inside the top-``p`` subspace and the surviving
untrusted points everywhere else.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    AllFiltered,
    DegenerateEigenvalue,
    DimensionMismatch,
    EmptySet,
    InvalidAlpha,
    InvalidParams,
    NotSymmetric,
    RankRequest,
)

SYM_TOL = 1e-10
EIG_REL_TOL = 1e-12


class PrefilterMode(str, enum.Enum):
    OFF = "off"
    PAPER_NORM = "paper_norm"
    CENTERED = "centered"


class RemovalMode(str, enum.Enum):
    RANDOMIZED = "randomized"
    TOP_K = "top_k"


class Termination(str, enum.Enum):
    EIGENVALUE_BELOW_THRESHOLD = "eigenvalue_below_threshold"
    MAX_ITERATIONS = "max_iterations"
    SURVIVOR_FLOOR = "survivor_floor"


class PointSet:
    """Vectors keyed by stable integer ids.

    Values are stored as an ``(n, d)`` float64 array next to an int64 id
    array. Subsetting keeps the original ids, so removal never renumbers.
    """

    __slots__ = ("ids", "values")

    def __init__(self, values, ids=None):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(1, -1)
        if values.ndim != 2:
            raise DimensionMismatch(f"expected a 2-d array of points, got shape {values.shape}")
        if values.shape[1] < 1:
            raise DimensionMismatch("dimension must be at least 1")
        if not np.all(np.isfinite(values)):
            raise ValueError("point values must be finite")
        if ids is None:
            ids = np.arange(values.shape[0], dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64).reshape(-1)
            if ids.shape[0] != values.shape[0]:
                raise DimensionMismatch("ids and values disagree in length")
            if np.unique(ids).shape[0] != ids.shape[0]:
                raise ValueError("ids must be unique")
        self.values = values
        self.ids = ids

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    def __repr__(self) -> str:
        return f"PointSet(n={len(self)}, dim={self.dim})"

    def subset(self, keep: np.ndarray) -> "PointSet":
        """Return the points selected by a boolean mask, ids preserved."""
        keep = np.asarray(keep, dtype=bool)
        return PointSet(self.values[keep], self.ids[keep])

    def without(self, ids) -> "PointSet":
        drop = np.isin(self.ids, np.asarray(list(ids), dtype=np.int64))
        return self.subset(~drop)

    def as_dict(self) -> dict:
        return {int(i): self.values[k] for k, i in enumerate(self.ids)}


def _as_pointset(points) -> PointSet:
    return points if isinstance(points, PointSet) else PointSet(points)


def sample_mean(points) -> np.ndarray:
    points = _as_pointset(points)
    if len(points) == 0:
        raise EmptySet("cannot take the mean of an empty set")
    return points.values.mean(axis=0)


def sample_covariance(points, mean) -> np.ndarray:
    """Population covariance (divisor ``|S|``) around ``mean``, symmetrized."""
    points = _as_pointset(points)
    if len(points) == 0:
        raise EmptySet("cannot take the covariance of an empty set")
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    if mean.shape[0] != points.dim:
        raise DimensionMismatch(f"mean has dimension {mean.shape[0]}, points have {points.dim}")
    centered = points.values - mean
    cov = centered.T @ centered / len(points)
    return (cov + cov.T) / 2.0


@dataclass
class SpectralState:
    eigenvalues: np.ndarray
    basis: np.ndarray
    p: int
    projector: np.ndarray

    @property
    def lambda_p(self) -> float:
        return float(self.eigenvalues[self.p - 1])

    @property
    def top_basis(self) -> np.ndarray:
        return self.basis[:, : self.p]


def top_spectrum(cov, p: int) -> SpectralState:
    """Eigendecomposition sorted descending, with the rank-``p`` projector."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {cov.shape}")
    d = cov.shape[0]
    if p < 1 or p > d:
        raise RankRequest(f"rank p={p} outside [1, {d}]")
    scale = max(1.0, float(np.max(np.abs(cov))) if cov.size else 1.0)
    if np.max(np.abs(cov - cov.T)) > 1e-8 * scale:
        raise NotSymmetric("covariance is not symmetric within 1e-8")
    vals, vecs = np.linalg.eigh((cov + cov.T) / 2.0)
    # eigh returns ascending order; flip, keeping solver order inside ties
    order = np.arange(d)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    up = vecs[:, :p]
    projector = up @ up.T
    projector = (projector + projector.T) / 2.0
    return SpectralState(eigenvalues=vals, basis=vecs, p=p, projector=projector)


def eigen_floor(eigenvalues) -> float:
    return EIG_REL_TOL * max(float(eigenvalues[0]), 1.0)


def tau_scores(points, mean, spectrum: SpectralState) -> np.ndarray:
    """Squared norm of each residual whitened inside the top-``p`` eigenspace.

    Returns an array aligned with ``points.ids``. Components whose eigenvalue
    is at or below ``eigen_floor`` are dropped from the sum.
    """
    points = _as_pointset(points)
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    if mean.shape[0] != points.dim:
        raise DimensionMismatch("mean dimension does not match points")
    lam = spectrum.eigenvalues[: spectrum.p]
    floor = eigen_floor(spectrum.eigenvalues)
    if lam[-1] <= floor:
        raise DegenerateEigenvalue(
            f"lambda_p={lam[-1]:.3e} is at or below the eigenvalue floor {floor:.3e}"
        )
    coords = (points.values - mean) @ spectrum.top_basis
    return np.sum(coords * coords / lam, axis=1)


@dataclass
class EstimatorParams:
    p: int
    lambda_c: float
    prefilter_mode: PrefilterMode = PrefilterMode.OFF
    prefilter_threshold: Optional[float] = None
    removal_mode: RemovalMode = RemovalMode.RANDOMIZED
    top_k: int = 1
    max_iterations: Optional[int] = None
    min_survivors: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        self.prefilter_mode = PrefilterMode(self.prefilter_mode)
        self.removal_mode = RemovalMode(self.removal_mode)
        if self.min_survivors is None:
            self.min_survivors = self.p + 1
        self.validate()

    def validate(self):
        if int(self.p) != self.p or self.p < 1:
            raise InvalidParams(f"p must be a positive integer, got {self.p}")
        if not (self.lambda_c > 0) or not math.isfinite(self.lambda_c):
            raise InvalidParams(f"lambda_c must be positive, got {self.lambda_c}")
        if self.min_survivors < self.p + 1:
            raise InvalidParams("min_survivors must be at least p+1")
        if self.top_k < 1:
            raise InvalidParams("top_k must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise InvalidParams("max_iterations must be positive")
        if not (0 <= self.seed < 2**64):
            raise InvalidParams("seed must be a 64-bit unsigned integer")

    def rescaled(self, c: float) -> "EstimatorParams":
        """Parameters for data scaled by ``c``: variance thresholds scale by c^2."""
        thr = None if self.prefilter_threshold is None else self.prefilter_threshold * c
        return EstimatorParams(
            p=self.p,
            lambda_c=self.lambda_c * c * c,
            prefilter_mode=self.prefilter_mode,
            prefilter_threshold=thr,
            removal_mode=self.removal_mode,
            top_k=self.top_k,
            max_iterations=self.max_iterations,
            min_survivors=self.min_survivors,
            seed=self.seed,
        )


@dataclass
class IterationRecord:
    surviving_count: int
    lambda_p_value: float
    removed_ids: list
    tau_mean: float
    tau_max: float

    def to_dict(self) -> dict:
        return {
            "surviving_count": self.surviving_count,
            "lambda_p": self.lambda_p_value,
            "removed_ids": list(self.removed_ids),
            "tau_mean": self.tau_mean,
            "tau_max": self.tau_max,
        }


@dataclass
class EstimatorTrace:
    iterations: list = field(default_factory=list)
    final_projector: Optional[SpectralState] = None
    prefiltered_ids: list = field(default_factory=list)
    terminated_by: Optional[Termination] = None
    survivor_ids: list = field(default_factory=list)

    @property
    def removed_total(self) -> int:
        return sum(len(it.removed_ids) for it in self.iterations)

    @property
    def final_lambda_p(self) -> float:
        if self.final_projector is None:
            return float("nan")
        return self.final_projector.lambda_p

    def to_dict(self) -> dict:
        fp = self.final_projector
        return {
            "iterations": [it.to_dict() for it in self.iterations],
            "prefiltered_ids": list(self.prefiltered_ids),
            "terminated_by": None if self.terminated_by is None else self.terminated_by.value,
            "final_p": None if fp is None else fp.p,
            "final_lambda_p": None if fp is None else fp.lambda_p,
            "final_eigenvalues": None if fp is None else [float(v) for v in fp.eigenvalues],
            "removed_total": self.removed_total,
        }


@dataclass
class EstimateResult:
    mu_hat: np.ndarray
    trace: EstimatorTrace


@dataclass
class FilterStep:
    removed_ids: list
    spectrum: SpectralState
    lambda_p_value: float
    tau: Optional[np.ndarray] = None
    floor_reached: bool = False

    @property
    def done(self) -> bool:
        return self.tau is None


def filter_once(S, params: EstimatorParams, rng: np.random.Generator) -> FilterStep:
    """One pass of the filter loop.

    If the ``p``-th eigenvalue is below ``lambda_c`` nothing is removed and
    ``tau`` is None. Otherwise points are removed by the configured rule. A
    removal that would push ``|S|`` under ``min_survivors`` is truncated to
    the floor (largest scores kept for removal first) and flagged.
    """
    S = _as_pointset(S)
    if len(S) < params.min_survivors:
        raise InvalidParams(f"|S|={len(S)} is below min_survivors={params.min_survivors}")
    mu = sample_mean(S)
    spectrum = top_spectrum(sample_covariance(S, mu), params.p)
    lam_p = spectrum.lambda_p
    if lam_p < params.lambda_c:
        return FilterStep([], spectrum, lam_p)

    tau = tau_scores(S, mu, spectrum)
    budget = len(S) - params.min_survivors
    # ascending-id processing order for both the random stream and tie-breaks
    order = np.argsort(S.ids, kind="stable")
    if params.removal_mode is RemovalMode.RANDOMIZED:
        tau_max = float(tau.max())
        ratio = tau[order] / tau_max
        draws = rng.random(len(S))
        chosen = order[draws < ratio]
        # guard against round-off in the argmax ratio
        top = int(order[np.argmax(tau[order])])
        if top not in chosen:
            chosen = np.append(chosen, top)
    else:
        k = min(params.top_k, budget)
        ranked = order[np.lexsort((S.ids[order], -tau[order]))]
        chosen = ranked[:k]

    floor_reached = False
    if len(chosen) > budget:
        by_score = chosen[np.lexsort((S.ids[chosen], -tau[chosen]))]
        chosen = by_score[:budget]
        floor_reached = True
    elif params.removal_mode is RemovalMode.TOP_K and budget < params.top_k:
        floor_reached = True
    removed = sorted(int(i) for i in S.ids[chosen])
    return FilterStep(removed, spectrum, lam_p, tau=tau, floor_reached=floor_reached)


def prefilter(S0: PointSet, A: PointSet, params: EstimatorParams):
    """Drop far-away points before filtering; returns (kept, removed_ids)."""
    mode = params.prefilter_mode
    if mode is PrefilterMode.OFF:
        return S0, []
    threshold = params.prefilter_threshold
    if threshold is None:
        threshold = len(S0) ** (1.0 / 3.0)
    if mode is PrefilterMode.PAPER_NORM:
        norms = np.linalg.norm(S0.values, axis=1)
    else:
        norms = np.linalg.norm(S0.values - sample_mean(A), axis=1)
    drop = norms > threshold
    return S0.subset(~drop), sorted(int(i) for i in S0.ids[drop])


def semi_verified_mean(S0, A, params: EstimatorParams) -> EstimateResult:
    """Estimate the clean mean from an untrusted set ``S0`` and a trusted set ``A``."""
    S0 = _as_pointset(S0)
    A = _as_pointset(A)
    if len(S0) == 0 or len(A) == 0:
        raise EmptySet("both S0 and A must be non-empty")
    if S0.dim != A.dim:
        raise DimensionMismatch(f"S0 has dimension {S0.dim}, A has {A.dim}")
    if params.p > S0.dim:
        raise RankRequest(f"p={params.p} exceeds dimension {S0.dim}")

    trace = EstimatorTrace()
    S, trace.prefiltered_ids = prefilter(S0, A, params)
    if len(S) == 0:
        raise AllFiltered("prefilter removed every point")

    rng = np.random.default_rng(params.seed)
    max_iter = params.max_iterations if params.max_iterations is not None else len(S0)
    spectrum = None
    terminated = Termination.MAX_ITERATIONS
    for _ in range(max_iter):
        if len(S) < params.min_survivors:
            terminated = Termination.SURVIVOR_FLOOR
            spectrum = None
            break
        try:
            step = filter_once(S, params, rng)
        except DegenerateEigenvalue as exc:
            exc.trace = trace
            raise
        spectrum = step.spectrum
        if step.done:
            terminated = Termination.EIGENVALUE_BELOW_THRESHOLD
            break
        trace.iterations.append(
            IterationRecord(
                surviving_count=len(S),
                lambda_p_value=step.lambda_p_value,
                removed_ids=step.removed_ids,
                tau_mean=float(step.tau.mean()),
                tau_max=float(step.tau.max()),
            )
        )
        if step.removed_ids:
            S = S.without(step.removed_ids)
            spectrum = None
        if step.floor_reached:
            terminated = Termination.SURVIVOR_FLOOR
            break

    mu_S = sample_mean(S)
    if spectrum is None:
        spectrum = top_spectrum(sample_covariance(S, mu_S), min(params.p, S.dim))
    P = spectrum.projector
    mu_A = sample_mean(A)
    mu_hat = P @ mu_A + (mu_S - P @ mu_S)
    trace.final_projector = spectrum
    trace.terminated_by = terminated
    trace.survivor_ids = [int(i) for i in np.sort(S.ids)]
    return EstimateResult(mu_hat=mu_hat, trace=trace)


@dataclass(frozen=True)
class Recommendation:
    p: int
    lambda_c: float


def recommend_params(sigma, alpha, N, d, model="additive", margin=0.01) -> Recommendation:
    """Smallest ``p`` and ``lambda_c`` admitted by the error guarantees.

    ``p = floor(8/alpha) + 1``. For the additive model
    ``lambda_c = 32 sigma^2 (1 + 2d/(alpha N))``; for the strong model
    ``lambda_c = (8 sigma^2/alpha) (1 + sqrt(16 d ln^2 N / (3 alpha N)))^2``.
    Both are inflated by ``1 + margin`` because the guarantees need strict
    inequalities.
    """
    if not (0 < alpha <= 1):
        raise InvalidAlpha(f"alpha must lie in (0, 1], got {alpha}")
    if sigma <= 0 or N < 1 or d < 1:
        raise InvalidParams("need sigma > 0, N >= 1, d >= 1")
    p = int(math.floor(8.0 / alpha)) + 1
    s2 = sigma * sigma
    if model == "additive":
        base = 32.0 * s2 * (1.0 + 2.0 * d / (alpha * N))
    elif model == "strong":
        root = math.sqrt(16.0 * d * math.log(N) ** 2 / (3.0 * alpha * N))
        base = (8.0 * s2 / alpha) * (1.0 + root) ** 2
    else:
        raise InvalidParams(f"unknown contamination model {model!r}")
    return Recommendation(p=p, lambda_c=(1.0 + margin) * base)


def theorem_bound(sigma, p, N_A, lambda_c, alpha) -> float:
    """Right-hand side of the mean-squared-error guarantee, without the vanishing term."""
    return 3.0 * sigma * sigma * p / N_A + 15.0 * lambda_c / (2.0 * alpha)
