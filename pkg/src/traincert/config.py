"""Experiment configuration: one serializable description of a full run.

The config is a tree of small dataclasses that mirrors the CLI flags.
``from_dict`` validates everything up front and raises ConfigError with
the offending field named, so a bad run dies before touching data.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

from .errors import ConfigError
from .nn import LossKind, TrainConfig
from .training import BoundedPerturbation, PerturbationModel, Removal, Substitution

__all__ = [
    "ArchSpec",
    "CertifySpec",
    "DatasetSpec",
    "EncodeSpec",
    "EnumerateSpec",
    "ExperimentConfig",
    "PerturbSpec",
    "PipelineSpec",
    "PrivacySpec",
    "config_hash",
]

DATASET_KINDS = ("halfmoons", "blobs", "csv")
PERTURBATION_KINDS = ("bounded", "removal", "substitution")
ENUMERATE_KINDS = ("label_flips", "removals")
METHODS = ("ibp", "crown")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "halfmoons"
    n_samples: int = 128
    noise_sd: float = 0.1
    centers: tuple[tuple[float, float], ...] = ((-1.0, -1.0), (1.0, 1.0))
    cluster_sd: float = 0.3
    path: str | None = None
    label_column: str = "label"

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset.kind must be one of {DATASET_KINDS}")
        if self.kind == "csv" and not self.path:
            raise ConfigError("dataset.path is required for kind 'csv'")
        if self.kind != "csv" and self.n_samples < 2:
            raise ConfigError("dataset.n_samples must be at least 2")


@dataclass(frozen=True)
class PipelineSpec:
    poly_degree: int | None = None
    standardize: bool = False

    def __post_init__(self):
        if self.poly_degree is not None and self.poly_degree < 1:
            raise ConfigError("pipeline.poly_degree must be at least 1")


@dataclass(frozen=True)
class ArchSpec:
    """Hidden layer widths; the input width comes from the data."""

    hidden: tuple[int, ...] = ()
    n_outputs: int = 1

    def __post_init__(self):
        if any(h < 1 for h in self.hidden):
            raise ConfigError("arch.hidden widths must be positive")
        if self.n_outputs < 1:
            raise ConfigError("arch.n_outputs must be positive")

    def layer_sizes(self, n_features: int) -> tuple[int, ...]:
        return (n_features, *self.hidden, self.n_outputs)


@dataclass(frozen=True)
class PerturbSpec:
    """Threat model plus an optional ladder of adversary strengths."""

    model: str = "bounded"
    n: int = 1
    epsilon: float = 0.0
    nu: float = 1.0
    p: float = math.inf
    q: float = 0.0
    ladder: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.model not in PERTURBATION_KINDS:
            raise ConfigError(f"perturbation.model must be one of {PERTURBATION_KINDS}")
        if self.n < 0:
            raise ConfigError("perturbation.n must be nonnegative")
        if self.epsilon < 0 or self.nu < 0:
            raise ConfigError("perturbation.epsilon and nu must be nonnegative")
        if self.ladder is not None:
            if not self.ladder or any(n < 1 for n in self.ladder):
                raise ConfigError("perturbation.ladder entries must be positive")
            if list(self.ladder) != sorted(set(self.ladder)):
                raise ConfigError("perturbation.ladder must be strictly increasing")

    def build(self, n: int | None = None) -> PerturbationModel:
        n = self.n if n is None else n
        if self.model == "bounded":
            return BoundedPerturbation(
                n=n, epsilon=self.epsilon, nu=self.nu, p=self.p, q=self.q
            )
        if self.model == "removal":
            return Removal(n=n)
        return Substitution(n=n)


@dataclass(frozen=True)
class PrivacySpec:
    epsilon: float = 1.0
    delta: float = 1e-5
    beta: float | None = None  # None means the largest admissible, epsilon/6
    mechanism: str = "cauchy_smooth"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError("privacy.epsilon must be positive")
        if not 0 <= self.delta < 1:
            raise ConfigError("privacy.delta must lie in [0, 1)")
        if self.beta is not None and self.beta <= 0:
            raise ConfigError("privacy.beta must be positive")
        if self.mechanism not in ("laplace_global", "cauchy_smooth"):
            raise ConfigError("privacy.mechanism must be laplace_global or cauchy_smooth")


@dataclass(frozen=True)
class CertifySpec:
    method: str = "ibp"
    grid_resolution: tuple[int, int] = (100, 100)
    grid_inflate: float = 0.2
    backdoor_epsilon: float | None = None
    privacy: PrivacySpec | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"certify.method must be one of {METHODS}")
        if self.backdoor_epsilon is not None and self.backdoor_epsilon < 0:
            raise ConfigError("certify.backdoor_epsilon must be nonnegative")


@dataclass(frozen=True)
class EnumerateSpec:
    kind: str = "label_flips"
    cap: int = 10_000

    def __post_init__(self):
        if self.kind not in ENUMERATE_KINDS:
            raise ConfigError(f"enumerate.kind must be one of {ENUMERATE_KINDS}")
        if self.cap < 1:
            raise ConfigError("enumerate.cap must be positive")


@dataclass(frozen=True)
class EncodeSpec:
    relaxation: str = "miqcp"
    horizon_w: int = 1
    step_p: int = 1
    bigM_margin: float = 1.0

    def __post_init__(self):
        if self.relaxation not in ("miqcp", "milp", "qcp", "lp"):
            raise ConfigError("encode.relaxation must be miqcp, milp, qcp or lp")
        if not 1 <= self.step_p <= self.horizon_w:
            raise ConfigError("encode requires 1 <= step_p <= horizon_w")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    pipeline: PipelineSpec = field(default_factory=PipelineSpec)
    arch: ArchSpec = field(default_factory=ArchSpec)
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            alpha=0.1, batch_size=32, epochs=1, loss=LossKind.BINARY_CROSS_ENTROPY
        )
    )
    perturbation: PerturbSpec = field(default_factory=PerturbSpec)
    certify: CertifySpec = field(default_factory=CertifySpec)
    enumerate_oracle: EnumerateSpec | None = None
    encode: EncodeSpec | None = None
    seed: int = 0
    output_path: str | None = None

    def __post_init__(self):
        if self.perturbation.model == "substitution" and self.train.clip_kappa is None:
            raise ConfigError(
                "substitution certification requires train.clip_kappa to be set"
            )

    def perturbation_model(self, n: int | None = None) -> PerturbationModel:
        return self.perturbation.build(n)


_SPEC_TYPES = {
    "dataset": DatasetSpec,
    "pipeline": PipelineSpec,
    "arch": ArchSpec,
    "train": TrainConfig,
    "perturbation": PerturbSpec,
    "certify": CertifySpec,
    "enumerate_oracle": EnumerateSpec,
    "encode": EncodeSpec,
}

_OPTIONAL_SECTIONS = ("enumerate_oracle", "encode")


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _build(cls, payload: dict, where: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - names
    if unknown:
        raise ConfigError(f"{where}: unknown fields {sorted(unknown)}")
    kwargs = {}
    for key, value in payload.items():
        if key == "privacy" and isinstance(value, dict):
            value = _build(PrivacySpec, value, f"{where}.privacy")
        elif key == "loss" and cls is TrainConfig:
            try:
                value = LossKind(value)
            except ValueError:
                valid = sorted(k.value for k in LossKind)
                raise ConfigError(f"{where}.loss: must be one of {valid}") from None
        elif key == "p" and value in ("inf", "Infinity"):
            value = math.inf
        else:
            value = _tupled(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def from_dict(payload: dict) -> ExperimentConfig:
    """Build a validated config from plain JSON data."""
    if not isinstance(payload, dict):
        raise ConfigError("config: expected an object at the top level")
    known = set(_SPEC_TYPES) | {"seed", "output_path"}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"config: unknown sections {sorted(unknown)}")
    kwargs = {}
    for section, cls in _SPEC_TYPES.items():
        if section in payload:
            if payload[section] is None and section in _OPTIONAL_SECTIONS:
                kwargs[section] = None
            else:
                kwargs[section] = _build(cls, payload[section], section)
    if "seed" in payload:
        kwargs["seed"] = int(payload["seed"])
    if "output_path" in payload:
        kwargs["output_path"] = payload["output_path"]
    return ExperimentConfig(**kwargs)


def to_dict(cfg: ExperimentConfig) -> dict:
    """Plain-JSON form of a config; inverse of from_dict."""
    payload = dataclasses.asdict(cfg)
    payload["train"]["loss"] = cfg.train.loss.value
    if math.isinf(payload["perturbation"]["p"]):
        payload["perturbation"]["p"] = "inf"
    return payload


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 over the canonical JSON form; stable across field order."""
    canonical = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(canonical.encode()).hexdigest()


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return from_dict(payload)
