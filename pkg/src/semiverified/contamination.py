"""Clean data generators, contamination models and attack strategies.

Every generator takes an explicit ``numpy.random.Generator``. Use
:func:`substream` to derive independent, reproducible streams from a master
seed and a purpose tag.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import InvalidAlpha, InvalidSpec
from .estimator import PointSet

ADDITIVE = "additive"
STRONG = "strong"
MODELS = (ADDITIVE, STRONG)


def substream(master_seed: int, tag: str, *index: int) -> np.random.Generator:
    """Independent generator keyed by (master_seed, tag, *index)."""
    key = (zlib.crc32(tag.encode("utf-8")),) + tuple(int(i) for i in index)
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=key))


@dataclass
class CleanDataset:
    points: PointSet
    true_mean: np.ndarray
    sigma: float
    generator_spec: dict = field(default_factory=dict)


@dataclass
class CorruptionMask:
    corrupted_ids: list
    alpha_realized: float

    def to_dict(self) -> dict:
        return {"corrupted_ids": list(self.corrupted_ids), "alpha_realized": self.alpha_realized}


# attack strategies


@dataclass
class GaussianNoise:
    """Replacement vectors with i.i.d. zero-mean normal coordinates.

    ``level`` is read as a per-coordinate variance by default; set
    ``interpretation="std"`` to read it as a standard deviation.
    """

    level: float = 0.2
    interpretation: str = "variance"
    kind: str = "gaussian_noise"

    @property
    def std(self) -> float:
        return math.sqrt(self.level) if self.interpretation == "variance" else self.level


@dataclass
class MeanShift:
    """Move each corrupted point by ``magnitude`` along a fixed unit direction."""

    magnitude: float = 10.0
    axis: Optional[int] = 0
    direction: Optional[list] = None
    kind: str = "mean_shift"

    def unit(self, d: int) -> np.ndarray:
        if self.direction is not None:
            v = np.asarray(self.direction, dtype=np.float64)
            if v.shape != (d,):
                raise InvalidSpec(f"mean_shift direction must have length {d}")
            norm = np.linalg.norm(v)
            if norm == 0:
                raise InvalidSpec("mean_shift direction must be non-zero")
            return v / norm
        axis = 0 if self.axis is None else int(self.axis)
        if not 0 <= axis < d:
            raise InvalidSpec(f"mean_shift axis {axis} outside [0, {d})")
        v = np.zeros(d)
        v[axis] = 1.0
        return v


@dataclass
class SymmetricFlip:
    """Reflect corrupted points through ``pivot``: Y = 2 pivot - X.

    Stress test only: a realistic adversary never sees the trusted mean.
    """

    pivot: Optional[list] = None
    kind: str = "symmetric_flip"


@dataclass
class Clusters:
    num_clusters: int = 4
    spread: float = 0.5
    radius: float = 10.0
    kind: str = "clusters"


@dataclass
class LowerBoundNoise:
    """Replacement drawn from the three-point product law used by the hard instance."""

    beta: float = 0.25
    sigma: float = 1.0
    kind: str = "lower_bound_instance"


AttackStrategy = Union[GaussianNoise, MeanShift, SymmetricFlip, Clusters, LowerBoundNoise]

STRATEGIES = {
    "gaussian_noise": GaussianNoise,
    "mean_shift": MeanShift,
    "symmetric_flip": SymmetricFlip,
    "clusters": Clusters,
    "lower_bound_instance": LowerBoundNoise,
}


def strategy_from_dict(data: dict) -> AttackStrategy:
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in STRATEGIES:
        raise InvalidSpec(f"unknown attack strategy {kind!r}")
    try:
        return STRATEGIES[kind](**data)
    except TypeError as exc:
        raise InvalidSpec(str(exc)) from None


def strategy_to_dict(strategy: AttackStrategy) -> dict:
    out = {"kind": strategy.kind}
    out.update({k: v for k, v in strategy.__dict__.items() if k != "kind"})
    return out


@dataclass
class ContaminationSpec:
    model: str = ADDITIVE
    alpha_clean: float = 1.0
    strategy: AttackStrategy = field(default_factory=GaussianNoise)

    def validate(self):
        if self.model not in MODELS:
            raise InvalidSpec(f"unknown contamination model {self.model!r}")
        if not (0 < self.alpha_clean <= 1):
            raise InvalidSpec(f"alpha_clean must lie in (0, 1], got {self.alpha_clean}")
        s = self.strategy
        if isinstance(s, GaussianNoise):
            if not s.level > 0 or s.interpretation not in ("variance", "std"):
                raise InvalidSpec("gaussian_noise needs level > 0 and interpretation variance|std")
        elif isinstance(s, MeanShift):
            if not math.isfinite(s.magnitude):
                raise InvalidSpec("mean_shift magnitude must be finite")
        elif isinstance(s, Clusters):
            if s.num_clusters < 1 or s.spread < 0 or s.radius <= 0:
                raise InvalidSpec("clusters needs num_clusters >= 1, spread >= 0, radius > 0")
        elif isinstance(s, LowerBoundNoise):
            if not 0 < s.beta <= 0.5 or not s.sigma > 0:
                raise InvalidSpec("lower_bound_instance needs beta in (0, 0.5] and sigma > 0")


def corruption_budget(n: int, alpha_clean: float) -> int:
    """Number of corrupted samples: floor((1 - alpha) n), robust to round-off."""
    return int(math.floor((1.0 - alpha_clean) * n + 1e-9))


def selection_direction(values: np.ndarray, strategy: AttackStrategy) -> np.ndarray:
    """Direction the strong adversary ranks samples along."""
    d = values.shape[1]
    if isinstance(strategy, MeanShift):
        return strategy.unit(d)
    centered = values - values.mean(axis=0)
    _, vecs = np.linalg.eigh(centered.T @ centered)
    v = vecs[:, -1]
    # fix the eigenvector sign so the choice is reproducible
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


def select_corrupted(
    points: PointSet, spec: ContaminationSpec, rng: np.random.Generator
) -> np.ndarray:
    """Boolean mask (aligned with ``points``) of samples the adversary replaces.

    Additive: a uniformly random subset drawn before any value is read.
    Strong: the samples with largest projection on the attack direction.
    """
    n = len(points)
    k = corruption_budget(n, spec.alpha_clean)
    mask = np.zeros(n, dtype=bool)
    if k == 0:
        return mask
    if spec.model == ADDITIVE:
        mask[rng.permutation(n)[:k]] = True
        return mask
    proj = points.values @ selection_direction(points.values, spec.strategy)
    ranked = np.lexsort((points.ids, -proj))
    mask[ranked[:k]] = True
    return mask


def replacement_values(
    originals: np.ndarray,
    strategy: AttackStrategy,
    rng: np.random.Generator,
    center: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Values the adversary substitutes for ``originals``.

    ``center`` is the clean mean the adversary knows; clusters are placed
    around it.
    """
    k, d = originals.shape
    if isinstance(strategy, GaussianNoise):
        return rng.normal(0.0, strategy.std, size=(k, d))
    if isinstance(strategy, MeanShift):
        return originals + strategy.magnitude * strategy.unit(d)
    if isinstance(strategy, SymmetricFlip):
        if strategy.pivot is None:
            raise InvalidSpec("symmetric_flip requires an explicit pivot")
        pivot = np.asarray(strategy.pivot, dtype=np.float64)
        if pivot.shape != (d,):
            raise InvalidSpec(f"symmetric_flip pivot must have length {d}")
        return 2.0 * pivot - originals
    if isinstance(strategy, Clusters):
        c = np.zeros(d) if center is None else np.asarray(center, dtype=np.float64)
        raw = rng.normal(size=(d, strategy.num_clusters))
        if strategy.num_clusters <= d:
            dirs, _ = np.linalg.qr(raw)
        else:
            dirs = raw / np.linalg.norm(raw, axis=0)
        centers = c + strategy.radius * dirs.T
        assign = np.arange(k) % strategy.num_clusters
        return centers[assign] + rng.normal(0.0, strategy.spread, size=(k, d)) if k else centers[:0]
    if isinstance(strategy, LowerBoundNoise):
        scale = strategy.sigma / math.sqrt(2.0 * strategy.beta)
        return three_point(rng, (k, d), strategy.beta, scale)
    raise InvalidSpec(f"unsupported strategy {strategy!r}")


def corrupt(clean: CleanDataset, spec: ContaminationSpec, rng: np.random.Generator):
    """Apply a contamination model; returns ``(PointSet, CorruptionMask)``.

    Unselected samples keep their values bitwise.
    """
    spec.validate()
    points = clean.points
    mask = select_corrupted(points, spec, rng)
    values = points.values.copy()
    if mask.any():
        values[mask] = replacement_values(values[mask], spec.strategy, rng, clean.true_mean)
    corrupted = sorted(int(i) for i in points.ids[mask])
    n = len(points)
    out = PointSet(values, points.ids.copy())
    return out, CorruptionMask(corrupted, 1.0 - len(corrupted) / n)


def gen_clean_gaussian(d: int, N: int, mu, sigma: float, rng: np.random.Generator) -> CleanDataset:
    """N i.i.d. draws from N(mu, sigma^2 I)."""
    if sigma < 0 or not math.isfinite(sigma):
        raise InvalidSpec("sigma must be non-negative and finite")
    if d < 1 or N < 1:
        raise InvalidSpec("need d >= 1 and N >= 1")
    mu = np.zeros(d) if mu is None else np.asarray(mu, dtype=np.float64).reshape(-1)
    if mu.shape[0] != d:
        raise InvalidSpec("mu has the wrong dimension")
    values = mu + sigma * rng.standard_normal((N, d))
    return CleanDataset(
        points=PointSet(values),
        true_mean=mu.copy(),
        sigma=float(sigma),
        generator_spec={"family": "gaussian", "d": d, "N": N, "sigma": float(sigma)},
    )


# minimax hard instances


def three_point(rng: np.random.Generator, shape, beta: float, scale: float) -> np.ndarray:
    """Entries equal to 0 w.p. 1-2beta and to +scale / -scale w.p. beta each."""
    u = rng.random(shape)
    out = np.zeros(shape)
    out[u < beta] = scale
    out[(u >= beta) & (u < 2 * beta)] = -scale
    return out


@dataclass
class LowerBoundInstance:
    points: PointSet
    hidden_index: int
    mu_star: np.ndarray
    mask: CorruptionMask
    model: str
    beta: float
    sigma: float

    def clean_draws(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Fresh samples from the hidden hypothesis, e.g. for the trusted set."""
        return hypothesis_draws(rng, n, self.points.dim, self.hidden_index, self.beta, self.sigma, self.model)


def hypothesis_draws(rng, n, d, z, beta, sigma, model) -> np.ndarray:
    """Samples from hypothesis ``z`` (0-based) of the hard family."""
    if model == ADDITIVE:
        scale = sigma / math.sqrt(2.0 * beta)
        x = three_point(rng, (n, d), beta, scale)
        x[:, z] = scale
        return x
    big = sigma / (2.0 * beta)
    small = sigma / (2.0 * math.sqrt(beta))
    u = rng.random(n) < beta  # one auxiliary flag per sample, shared across coordinates
    x = three_point(rng, (n, d), beta, 1.0)
    x *= np.where(u, big, small)[:, None]
    x[:, z] = big
    return x


def gen_lower_bound_instance(d: int, alpha: float, sigma: float, N: int, model: str, rng):
    """Draw a hidden hypothesis and N observations whose law does not depend on it.

    Each sample is kept clean with probability ``beta = alpha/2``. Additive
    model: corrupted samples come from the residual law that makes every
    observation exactly three-point distributed in each coordinate. Strong
    model: corrupted samples come from the three-point law at scale
    ``sigma/(2 beta)``.
    """
    if not (0 < alpha <= 1):
        raise InvalidAlpha(f"alpha must lie in (0, 1], got {alpha}")
    if d < 2:
        raise InvalidSpec("the hard instance needs d >= 2")
    if model not in MODELS:
        raise InvalidSpec(f"unknown contamination model {model!r}")
    beta = alpha / 2.0
    z = int(rng.integers(d))
    clean = rng.random(N) < beta
    values = np.empty((N, d))
    n_clean = int(clean.sum())
    values[clean] = hypothesis_draws(rng, n_clean, d, z, beta, sigma, model)
    n_bad = N - n_clean
    if model == ADDITIVE:
        scale = sigma / math.sqrt(2.0 * beta)
        bad = three_point(rng, (n_bad, d), beta, scale)
        # coordinate z: residual law with no mass at +scale
        u = rng.random(n_bad)
        bad[:, z] = np.where(u < beta / (1.0 - beta), -scale, 0.0)
    else:
        bad = three_point(rng, (n_bad, d), beta, sigma / (2.0 * beta))
    values[~clean] = bad
    if model == ADDITIVE:
        mu = np.zeros(d)
        mu[z] = sigma / math.sqrt(2.0 * beta)
    else:
        mu = np.zeros(d)
        mu[z] = sigma / (2.0 * beta)
    ids = np.arange(N)
    mask = CorruptionMask(sorted(int(i) for i in ids[~clean]), n_clean / N)
    return LowerBoundInstance(PointSet(values), z, mu, mask, model, beta, float(sigma))
