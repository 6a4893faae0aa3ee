"""JSON experiment configuration: schema, parsing, and conversion to engine objects."""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Annotated, Any, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import aggregators as agg
from .contamination import (
    Clusters,
    ContaminationSpec,
    GaussianNoise,
    LowerBoundNoise,
    MeanShift,
    SymmetricFlip,
)
from .errors import ConfigError
from .estimator import EstimatorParams, recommend_params
from .sim import TrainConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# attack strategies


class GaussianNoiseCfg(_Strict):
    kind: Literal["gaussian_noise"]
    level: float = Field(0.2, gt=0)
    interpretation: Literal["variance", "std"] = "variance"


class MeanShiftCfg(_Strict):
    kind: Literal["mean_shift"]
    magnitude: float = 10.0
    axis: Optional[int] = 0
    direction: Optional[List[float]] = None


class SymmetricFlipCfg(_Strict):
    kind: Literal["symmetric_flip"]
    pivot: List[float]


class ClustersCfg(_Strict):
    kind: Literal["clusters"]
    num_clusters: int = Field(4, ge=1)
    spread: float = Field(0.5, ge=0)
    radius: float = Field(10.0, gt=0)


class LowerBoundCfg(_Strict):
    kind: Literal["lower_bound_instance"]
    beta: float = Field(0.25, gt=0, le=0.5)
    sigma: float = Field(1.0, gt=0)


AttackCfg = Annotated[
    Union[GaussianNoiseCfg, MeanShiftCfg, SymmetricFlipCfg, ClustersCfg, LowerBoundCfg],
    Field(discriminator="kind"),
]


# estimator and aggregators


class EstimatorCfg(_Strict):
    """Estimator settings; ``p``/``lambda_c`` left unset are recommended per run."""

    p: Optional[int] = Field(None, ge=1)
    lambda_c: Optional[float] = Field(None, gt=0)
    prefilter_mode: Literal["off", "paper_norm", "centered"] = "off"
    prefilter_threshold: Optional[float] = None
    removal_mode: Literal["randomized", "top_k"] = "randomized"
    top_k: int = Field(1, ge=1)
    max_iterations: Optional[int] = Field(None, ge=1)
    min_survivors: Optional[int] = Field(None, ge=2)
    margin: float = Field(0.01, ge=0)


class MasterOnlyCfg(_Strict):
    kind: Literal["master_only"]


class DistanceFilterCfg(_Strict):
    kind: Literal["distance_filter"]
    q: int = Field(..., ge=0)


class ZenoCfg(_Strict):
    kind: Literal["zeno"]
    q: int = Field(..., ge=0)
    gamma: Optional[float] = None
    rho_reg: float = 0.001


class SemiVerifiedCfg(EstimatorCfg):
    kind: Literal["semi_verified"]
    gradient_sigma: float = Field(1.0, gt=0)


AggregatorCfg = Annotated[
    Union[MasterOnlyCfg, DistanceFilterCfg, ZenoCfg, SemiVerifiedCfg],
    Field(discriminator="kind"),
]


class SweepAxis(_Strict):
    path: str
    values: List[Any] = Field(..., min_length=1)


class ExperimentConfig(_Strict):
    mode: Literal["estimate", "train", "sweep"]
    target: Optional[Literal["estimate", "train"]] = None
    master_seed: int = Field(0, ge=0, lt=2**64)
    replications: int = Field(1, ge=1)
    output_dir: str = "out"
    output_format: Literal["csv", "json", "both"] = "both"
    record_timing: bool = False
    save_datasets: bool = False
    sweep: List[SweepAxis] = Field(default_factory=list)

    # shared
    d: int = Field(..., ge=1)
    N_A: int = Field(20, ge=1)
    alpha_clean: float = Field(..., gt=0, le=1)
    model: Literal["additive", "strong"] = "additive"
    attack: AttackCfg

    # estimate mode
    N: Optional[int] = Field(None, ge=1)
    sigma: float = Field(1.0, gt=0)
    mu: Optional[List[float]] = None
    estimator: EstimatorCfg = Field(default_factory=EstimatorCfg)

    # train mode
    m: Optional[int] = Field(None, ge=1)
    n_per_worker: int = Field(20, ge=1)
    T: int = Field(30, ge=1)
    eta: Optional[float] = Field(None, gt=0)
    w0: Optional[List[float]] = None
    loss: Literal["linear_regression", "quadratic"] = "linear_regression"
    aggregator: AggregatorCfg = Field(default_factory=lambda: SemiVerifiedCfg(kind="semi_verified"))
    w_star_var: float = Field(2.0, gt=0)
    noise_std: float = Field(1.0, ge=0)

    @field_validator("sweep")
    @classmethod
    def _known_paths(cls, axes):
        for axis in axes:
            head = axis.path.split(".")[0]
            if head not in cls.model_fields or head in ("mode", "target", "sweep"):
                raise ValueError(f"sweep path {axis.path!r} does not name a config field")
        return axes

    @model_validator(mode="after")
    def _mode_requirements(self):
        run_mode = self.run_mode
        if self.mode == "sweep" and self.target is None:
            raise ValueError("sweep mode requires target: estimate or train")
        if self.mode != "sweep" and self.sweep:
            raise ValueError("sweep axes are only allowed in sweep mode")
        if run_mode == "estimate" and self.N is None:
            raise ValueError("estimate mode requires N")
        if run_mode == "train" and self.m is None:
            raise ValueError("train mode requires m")
        if self.mu is not None and len(self.mu) != self.d:
            raise ValueError("mu must have length d")
        if self.w0 is not None and len(self.w0) != self.d:
            raise ValueError("w0 must have length d")
        q = getattr(self.aggregator, "q", None)
        if run_mode == "train" and q is not None and q >= self.m:
            raise ValueError("aggregator q must be smaller than m")
        return self

    @property
    def run_mode(self) -> str:
        return self.target if self.mode == "sweep" else self.mode

    def to_json_dict(self) -> dict:
        return self.model_dump(mode="json")


def _field_of(err: dict) -> str:
    loc = [str(p) for p in err.get("loc", ()) if not isinstance(p, int)]
    # drop discriminator tags pydantic inserts into the location
    loc = [p for p in loc if p not in _TAGS]
    return ".".join(loc) if loc else "<root>"


_TAGS = {
    "gaussian_noise", "mean_shift", "symmetric_flip", "clusters", "lower_bound_instance",
    "master_only", "distance_filter", "zeno", "semi_verified",
}


def config_from_dict(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = _field_of(first)
        msg = f"{field}: {first['msg']}"
        raise ConfigError(msg, kind="validation", field=field) from None


def parse_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}", kind="parse") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}", kind="parse", line=exc.lineno
        ) from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object", kind="parse", line=1)
    return config_from_dict(data)


def dump_config(config: ExperimentConfig) -> str:
    return json.dumps(config.to_json_dict(), indent=2, sort_keys=True)


def with_override(config: ExperimentConfig, path: str, value) -> ExperimentConfig:
    """Copy of ``config`` with the dotted ``path`` set to ``value``, revalidated."""
    data = copy.deepcopy(config.to_json_dict())
    keys = path.split(".")
    node = data
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise ConfigError(f"sweep path {path!r} does not exist", field=path)
        node = node[key]
    node[keys[-1]] = copy.deepcopy(value)
    return config_from_dict(data)


# conversion to engine objects


def build_strategy(cfg):
    data = cfg.model_dump()
    kind = data.pop("kind")
    return {
        "gaussian_noise": GaussianNoise,
        "mean_shift": MeanShift,
        "symmetric_flip": SymmetricFlip,
        "clusters": Clusters,
        "lower_bound_instance": LowerBoundNoise,
    }[kind](**data)


def contamination_spec(config: ExperimentConfig) -> ContaminationSpec:
    return ContaminationSpec(config.model, config.alpha_clean, build_strategy(config.attack))


def resolve_estimator(cfg: EstimatorCfg, sigma, alpha, N, d, model, seed) -> EstimatorParams:
    p, lambda_c = cfg.p, cfg.lambda_c
    if p is None or lambda_c is None:
        rec = recommend_params(sigma, alpha, N, d, model, cfg.margin)
        # a recommended rank cannot exceed the dimension
        p = min(rec.p, d) if p is None else p
        lambda_c = rec.lambda_c if lambda_c is None else lambda_c
    return EstimatorParams(
        p=p,
        lambda_c=lambda_c,
        prefilter_mode=cfg.prefilter_mode,
        prefilter_threshold=cfg.prefilter_threshold,
        removal_mode=cfg.removal_mode,
        top_k=cfg.top_k,
        max_iterations=cfg.max_iterations,
        min_survivors=cfg.min_survivors,
        seed=seed,
    )


def estimator_params(config: ExperimentConfig, seed: int) -> EstimatorParams:
    return resolve_estimator(
        config.estimator, config.sigma, config.alpha_clean, config.N, config.d, config.model, seed
    )


def build_aggregator(config: ExperimentConfig, seed: int):
    a = config.aggregator
    if isinstance(a, MasterOnlyCfg):
        return agg.MasterOnly()
    if isinstance(a, DistanceFilterCfg):
        return agg.DistanceFilter(a.q)
    if isinstance(a, ZenoCfg):
        return agg.Zeno(a.q, a.gamma, a.rho_reg)
    # gradient noise of an n-sample worker mean has variance sigma^2 / n
    sigma_eff = a.gradient_sigma / config.n_per_worker**0.5
    params = resolve_estimator(a, sigma_eff, config.alpha_clean, config.m, config.d, config.model, seed)
    return agg.SemiVerified(params)


def train_config(config: ExperimentConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        d=config.d,
        m=config.m,
        n_per_worker=config.n_per_worker,
        N_A=config.N_A,
        T=config.T,
        eta=config.eta,
        w0=config.w0,
        aggregator=build_aggregator(config, seed),
        contamination=contamination_spec(config),
        loss=config.loss,
        master_seed=seed,
        w_star_var=config.w_star_var,
        noise_std=config.noise_std,
    )
