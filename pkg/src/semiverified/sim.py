"""Synchronous distributed gradient descent with Byzantine workers.

A master holds a few trusted samples, ``m`` workers hold ``n`` samples each.
Each round every worker reports its local mean gradient; workers in a fixed
Byzantine set report attacker-chosen vectors instead. The master aggregates
the messages and takes a gradient step.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .aggregators import AggregatorSpec, GradientBatch, MasterOnly, SemiVerified, aggregate
from .contamination import (
    ContaminationSpec,
    replacement_values,
    select_corrupted,
    substream,
)
from .errors import DimensionMismatch, InvalidSpec, SemiVerifiedError, UnsupportedLoss
from .estimator import EstimatorParams, PointSet


@dataclass
class LinearData:
    U: np.ndarray  # (N, d)
    V: np.ndarray  # (N,)
    w_star: np.ndarray


def gen_linear_regression(
    d: int,
    N: int,
    rng: np.random.Generator,
    w_star=None,
    w_star_rng: Optional[np.random.Generator] = None,
    w_star_var: float = 2.0,
    noise_std: float = 1.0,
) -> LinearData:
    """Samples ``V = <U, w*> + W`` with standard normal ``U`` and ``W ~ N(0, noise_std^2)``.

    When ``w_star`` is not given its coordinates are drawn with variance
    ``w_star_var`` from ``w_star_rng`` (or ``rng``).
    """
    if d < 1 or N < 1:
        raise InvalidSpec("need d >= 1 and N >= 1")
    if w_star is None:
        src = rng if w_star_rng is None else w_star_rng
        w_star = np.sqrt(w_star_var) * src.standard_normal(d)
    w_star = np.asarray(w_star, dtype=np.float64)
    U = rng.standard_normal((N, d))
    V = U @ w_star
    if noise_std:
        V = V + noise_std * rng.standard_normal(N)
    return LinearData(U, V, w_star)


@dataclass
class LinearRegressionLoss:
    """Squared loss ``0.5 (<U, w> - V)^2`` on per-worker shards plus a trusted shard."""

    worker_U: np.ndarray  # (m, n, d)
    worker_V: np.ndarray  # (m, n)
    aux_U: np.ndarray  # (N_A, d)
    aux_V: np.ndarray  # (N_A,)
    w_star: np.ndarray
    kind: str = "linear_regression"


@dataclass
class QuadraticLoss:
    """``F(w) = 0.5 ||w - w*||^2``; every sample gradient equals ``w - w*``."""

    w_star: np.ndarray
    m: int = 1
    n_aux: int = 1
    kind: str = "quadratic"


LossModel = Union[LinearRegressionLoss, QuadraticLoss]


def local_gradient(worker_data, w, loss: LossModel) -> np.ndarray:
    """Mean gradient over one worker's samples.

    ``worker_data`` is a ``(U, V)`` pair for linear regression and ignored for
    the quadratic loss.
    """
    w = np.asarray(w, dtype=np.float64)
    if isinstance(loss, QuadraticLoss):
        if w.shape != loss.w_star.shape:
            raise DimensionMismatch("w and w* differ in dimension")
        return w - loss.w_star
    U, V = worker_data
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    V = np.atleast_1d(np.asarray(V, dtype=np.float64))
    if U.shape[1] != w.shape[0] or U.shape[0] != V.shape[0]:
        raise DimensionMismatch("worker data does not match w")
    if U.shape[0] < 1:
        raise InvalidSpec("worker has no samples")
    return (U @ w - V) @ U / U.shape[0]


def true_gradient(loss: LossModel, w) -> np.ndarray:
    """Population gradient; both synthetic models reduce to ``w - w*``."""
    if isinstance(loss, (QuadraticLoss, LinearRegressionLoss)):
        return np.asarray(w, dtype=np.float64) - loss.w_star
    raise UnsupportedLoss(f"no closed-form population gradient for {loss!r}")


def worker_gradients(loss: LossModel, w: np.ndarray) -> np.ndarray:
    if isinstance(loss, QuadraticLoss):
        return np.tile(w - loss.w_star, (loss.m, 1))
    resid = np.einsum("mnd,d->mn", loss.worker_U, w) - loss.worker_V
    return np.einsum("mn,mnd->md", resid, loss.worker_U) / loss.worker_U.shape[1]


def aux_gradients(loss: LossModel, w: np.ndarray) -> np.ndarray:
    """Per-sample gradients on the master's trusted samples."""
    if isinstance(loss, QuadraticLoss):
        return np.tile(w - loss.w_star, (loss.n_aux, 1))
    resid = loss.aux_U @ w - loss.aux_V
    return resid[:, None] * loss.aux_U


@dataclass
class TrainConfig:
    d: int = 50
    m: int = 100
    n_per_worker: int = 20
    N_A: int = 20
    T: int = 30
    eta: Optional[float] = None  # None: 0.1 for quadratic, 0.05 for linear regression
    w0: Optional[list] = None
    aggregator: AggregatorSpec = field(default_factory=MasterOnly)
    contamination: ContaminationSpec = field(default_factory=lambda: ContaminationSpec(alpha_clean=1.0))
    loss: str = "linear_regression"
    master_seed: int = 0
    w_star_var: float = 2.0
    noise_std: float = 1.0

    def resolved_eta(self) -> float:
        if self.eta is not None:
            return self.eta
        return 0.1 if self.loss == "quadratic" else 0.05

    def validate(self):
        for name in ("d", "m", "n_per_worker", "N_A", "T"):
            if getattr(self, name) < 1:
                raise InvalidSpec(f"{name} must be at least 1")
        if not self.resolved_eta() > 0:
            raise InvalidSpec("eta must be positive")
        if self.loss not in ("linear_regression", "quadratic"):
            raise InvalidSpec(f"unknown loss {self.loss!r}")
        if self.w0 is not None and len(self.w0) != self.d:
            raise InvalidSpec("w0 has the wrong dimension")
        self.contamination.validate()


@dataclass
class RoundRecord:
    round: int
    dist_to_wstar: float
    agg_error: float
    filter_iterations: int
    removed_total: int
    lambda_p_final: float
    wall_ms: float


@dataclass
class RunMetrics:
    rounds: list
    final_w: np.ndarray
    w_star: np.ndarray
    initial_dist: float
    byzantine_ids: list
    error: Optional[dict] = None

    @property
    def final_dist(self) -> float:
        return self.rounds[-1].dist_to_wstar if self.rounds else self.initial_dist


def build_loss(config: TrainConfig) -> LossModel:
    seed = config.master_seed
    w_star = np.sqrt(config.w_star_var) * substream(seed, "w_star").standard_normal(config.d)
    if config.loss == "quadratic":
        return QuadraticLoss(w_star=w_star, m=config.m, n_aux=config.N_A)
    workers = gen_linear_regression(
        config.d, config.m * config.n_per_worker, substream(seed, "worker_data"),
        w_star=w_star, noise_std=config.noise_std,
    )
    aux = gen_linear_regression(
        config.d, config.N_A, substream(seed, "aux_data"), w_star=w_star, noise_std=config.noise_std
    )
    return LinearRegressionLoss(
        worker_U=workers.U.reshape(config.m, config.n_per_worker, config.d),
        worker_V=workers.V.reshape(config.m, config.n_per_worker),
        aux_U=aux.U,
        aux_V=aux.V,
        w_star=w_star,
    )


def _round_seed(master_seed: int, base_seed: int, t: int) -> int:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(zlib.crc32(b"estimator"), int(base_seed), t))
    return int(ss.generate_state(1, np.uint64)[0])


def run_training(config: TrainConfig, loss: Optional[LossModel] = None) -> RunMetrics:
    """Run ``T`` rounds of robust distributed gradient descent.

    The Byzantine set is drawn once (additive: uniformly; strong: by the
    adversarial rule on round-0 gradients) and persists for every round.
    Aggregator failures stop the run; the metrics gathered so far are
    returned with ``error`` set.
    """
    config.validate()
    if loss is None:
        loss = build_loss(config)
    eta = config.resolved_eta()
    seed = config.master_seed
    d, m = config.d, config.m
    w = np.zeros(d) if config.w0 is None else np.asarray(config.w0, dtype=np.float64).copy()
    w_star = loss.w_star
    ids = np.arange(m, dtype=np.int64)
    cont = config.contamination

    X0 = worker_gradients(loss, w)
    bad = select_corrupted(PointSet(X0, ids), cont, substream(seed, "byzantine"))

    metrics = RunMetrics([], w, w_star, float(np.linalg.norm(w - w_star)), [int(i) for i in ids[bad]])
    for t in range(config.T):
        start = time.perf_counter()
        X = X0 if t == 0 else worker_gradients(loss, w)
        Y = X.copy()
        if bad.any():
            grad_true = true_gradient(loss, w)
            Y[bad] = replacement_values(X[bad], cont.strategy, substream(seed, "attack", t), grad_true)
        batch = GradientBatch(
            PointSet(Y, ids), PointSet(aux_gradients(loss, w)), config.n_per_worker, t
        )
        spec = config.aggregator
        if isinstance(spec, SemiVerified):
            p = spec.params
            spec = SemiVerified(
                EstimatorParams(
                    p=p.p, lambda_c=p.lambda_c, prefilter_mode=p.prefilter_mode,
                    prefilter_threshold=p.prefilter_threshold, removal_mode=p.removal_mode,
                    top_k=p.top_k, max_iterations=p.max_iterations, min_survivors=p.min_survivors,
                    seed=_round_seed(seed, p.seed, t),
                )
            )
        try:
            g, trace = aggregate(batch, spec, step_size=eta)
        except SemiVerifiedError as exc:
            metrics.error = {"round": t, "error": type(exc).__name__, "message": str(exc)}
            break
        agg_error = float(np.linalg.norm(g - true_gradient(loss, w)))
        w = w - eta * g
        metrics.rounds.append(
            RoundRecord(
                round=t,
                dist_to_wstar=float(np.linalg.norm(w - w_star)),
                agg_error=agg_error,
                filter_iterations=0 if trace is None else len(trace.iterations),
                removed_total=0 if trace is None else trace.removed_total,
                lambda_p_final=float("nan") if trace is None else trace.final_lambda_p,
                wall_ms=(time.perf_counter() - start) * 1000.0,
            )
        )
    metrics.final_w = w
    return metrics


__all__ = [
    "LinearData",
    "LinearRegressionLoss",
    "QuadraticLoss",
    "RoundRecord",
    "RunMetrics",
    "TrainConfig",
    "aux_gradients",
    "build_loss",
    "gen_linear_regression",
    "local_gradient",
    "run_training",
    "true_gradient",
    "worker_gradients",
]
