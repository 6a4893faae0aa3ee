"""Gradient aggregation rules that combine worker messages with trusted gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import EmptySet, InvalidQ, InvalidSpec
from .estimator import EstimatorParams, EstimatorTrace, PointSet, sample_mean, semi_verified_mean


@dataclass
class GradientBatch:
    worker_gradients: PointSet
    aux_gradients: PointSet
    n_per_worker: int = 1
    round_index: int = 0

    def __post_init__(self):
        if not isinstance(self.worker_gradients, PointSet):
            self.worker_gradients = PointSet(self.worker_gradients)
        if not isinstance(self.aux_gradients, PointSet):
            self.aux_gradients = PointSet(self.aux_gradients)
        if len(self.worker_gradients) and len(self.aux_gradients):
            if self.worker_gradients.dim != self.aux_gradients.dim:
                raise InvalidSpec("worker and aux gradients differ in dimension")

    @property
    def m(self) -> int:
        return len(self.worker_gradients)

    @property
    def n_aux(self) -> int:
        return len(self.aux_gradients)


@dataclass
class MasterOnly:
    kind: str = "master_only"


@dataclass
class DistanceFilter:
    q: int = 0
    kind: str = "distance_filter"


@dataclass
class Zeno:
    q: int = 0
    gamma: Optional[float] = None  # None: use the step size
    rho_reg: float = 0.001
    kind: str = "zeno"


@dataclass
class SemiVerified:
    params: EstimatorParams = field(default_factory=lambda: EstimatorParams(p=1, lambda_c=1.0))
    kind: str = "semi_verified"


AggregatorSpec = Union[MasterOnly, DistanceFilter, Zeno, SemiVerified]


def _check_q(q: int, m: int):
    if int(q) != q or not 0 <= q < m:
        raise InvalidQ(f"q must satisfy 0 <= q < m={m}, got {q}")


def _worker_order(batch: GradientBatch, key: np.ndarray) -> np.ndarray:
    """Indices sorted by ``key`` ascending, ties broken by ascending worker id."""
    return np.lexsort((batch.worker_gradients.ids, key))


def aggregate_master_only(batch: GradientBatch) -> np.ndarray:
    if batch.n_aux == 0:
        raise EmptySet("no trusted gradients")
    return sample_mean(batch.aux_gradients)


def aggregate_distance_filter(batch: GradientBatch, q: int) -> np.ndarray:
    """Blend the trusted mean with the ``m - q`` worker gradients nearest to it.

    Weights are ``N_A`` for the trusted mean and ``n`` for each kept worker.
    """
    _check_q(q, batch.m)
    g0 = aggregate_master_only(batch)
    Y = batch.worker_gradients.values
    dist = np.linalg.norm(Y - g0, axis=1)
    keep = _worker_order(batch, dist)[: batch.m - q]
    n, na = batch.n_per_worker, batch.n_aux
    return (na * g0 + n * Y[keep].sum(axis=0)) / (na + n * (batch.m - q))


def zeno_scores(batch: GradientBatch, gamma: float, rho_reg: float) -> np.ndarray:
    g0 = aggregate_master_only(batch)
    Y = batch.worker_gradients.values
    return gamma * (Y @ g0) - rho_reg * np.sum(Y * Y, axis=1)


def zeno_selection(batch: GradientBatch, q: int, gamma: float, rho_reg: float) -> np.ndarray:
    _check_q(q, batch.m)
    scores = zeno_scores(batch, gamma, rho_reg)
    return _worker_order(batch, -scores)[: batch.m - q]


def aggregate_zeno(batch: GradientBatch, q: int, gamma: float, rho_reg: float) -> np.ndarray:
    """Average of the ``m - q`` workers with the highest first-order descent score."""
    keep = zeno_selection(batch, q, gamma, rho_reg)
    return batch.worker_gradients.values[keep].mean(axis=0)


def aggregate_semi_verified(batch: GradientBatch, params: EstimatorParams):
    """Returns ``(gradient, trace)``."""
    result = semi_verified_mean(batch.worker_gradients, batch.aux_gradients, params)
    return result.mu_hat, result.trace


def aggregate(batch: GradientBatch, spec: AggregatorSpec, step_size: float = 1.0):
    """Dispatch on ``spec``; returns ``(gradient, trace_or_None)``."""
    if isinstance(spec, MasterOnly):
        return aggregate_master_only(batch), None
    if isinstance(spec, DistanceFilter):
        return aggregate_distance_filter(batch, spec.q), None
    if isinstance(spec, Zeno):
        gamma = step_size if spec.gamma is None else spec.gamma
        return aggregate_zeno(batch, spec.q, gamma, spec.rho_reg), None
    if isinstance(spec, SemiVerified):
        return aggregate_semi_verified(batch, spec.params)
    raise InvalidSpec(f"unknown aggregator {spec!r}")


__all__ = [
    "AggregatorSpec",
    "DistanceFilter",
    "EstimatorTrace",
    "GradientBatch",
    "MasterOnly",
    "SemiVerified",
    "Zeno",
    "aggregate",
    "aggregate_distance_filter",
    "aggregate_master_only",
    "aggregate_semi_verified",
    "aggregate_zeno",
    "zeno_scores",
    "zeno_selection",
]
