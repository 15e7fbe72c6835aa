"""End-to-end experiment runner and its results document.

``run_experiment`` wires the stages together: data, feature pipeline,
interval training, certification, optional enumeration-based validation,
optional solver encoding, serialization.  Every stage failure is
re-raised with the stage name prefixed so the CLI can report where a run
died.  Runs are deterministic given the config; two runs of the same
config produce identical documents up to the timestamp field.
"""

from __future__ import annotations

import dataclasses
import datetime
import json
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .boundprop import ParamIntervals
from .certify import (
    PrivacyParams,
    StabilityLadder,
    certified_accuracy,
    certify_backdoor,
    certify_stable,
    loss_bounds,
    max_stable_n,
    noise_scale,
    smooth_sensitivity_bound,
)
from .config import (
    ExperimentConfig,
    config_hash,
    to_dict,
)
from .data import (
    CsvSchema,
    Dataset,
    atomic_write_text,
    gen_blobs,
    gen_halfmoons,
    grid_points,
    load_csv,
    poly_features,
    standardize,
)
from .encoding import EncodeOptions, TrainingEncoder, rolling_horizon_plan
from .errors import ConfigError, DataError, InvariantError
from .intervals import IntervalTensor
from .lp_io import emit_lp_file
from .nn import Architecture, Params
from .oracle import (
    EnumerationPlan,
    LabelFlips,
    Removals,
    check_trajectory_containment,
    empirical_reachable_trajectories,
)
from .training import (
    CONTAINMENT_TOL,
    IntervalTrajectory,
    interval_train,
    make_schedule,
)

__all__ = [
    "ResultsDocument",
    "SCHEMA_VERSION",
    "bounds_from_payload",
    "bounds_to_payload",
    "build_stability_ladder",
    "params_from_payload",
    "params_to_payload",
    "run_experiment",
]

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# parameter (de)serialization: exact float round trip via repr/JSON


def params_to_payload(params: Params) -> dict:
    return {
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_payload(payload: dict) -> Params:
    return Params(
        tuple(np.asarray(w, dtype=np.float64) for w in payload["weights"]),
        tuple(np.asarray(b, dtype=np.float64) for b in payload["biases"]),
    )


def bounds_to_payload(pi: ParamIntervals) -> dict:
    return {
        "weights": [{"lo": w.lo.tolist(), "hi": w.hi.tolist()} for w in pi.weights],
        "biases": [{"lo": b.lo.tolist(), "hi": b.hi.tolist()} for b in pi.biases],
    }


def bounds_from_payload(payload: dict) -> ParamIntervals:
    def tensor(entry):
        return IntervalTensor(
            np.asarray(entry["lo"], dtype=np.float64),
            np.asarray(entry["hi"], dtype=np.float64),
        )

    return ParamIntervals(
        tuple(tensor(w) for w in payload["weights"]),
        tuple(tensor(b) for b in payload["biases"]),
    )


@dataclass(frozen=True)
class ResultsDocument:
    """Schema-versioned record of one experiment run.

    The document is plain JSON with sorted keys.  ``created_at`` is the
    only field that varies between identical runs.
    """

    config: dict
    config_hash: str
    created_at: str
    train: dict
    certify: dict | None = None
    enumeration: dict | None = None
    privacy: dict | None = None
    encode: dict | None = None
    schema_version: int = SCHEMA_VERSION
    tool_version: str = __version__

    def to_payload(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_payload(), sort_keys=True, indent=2) + "\n"

    def write(self, path: str):
        atomic_write_text(path, self.to_json())

    @staticmethod
    def from_payload(payload: dict) -> "ResultsDocument":
        version = payload.get("schema_version")
        if version != SCHEMA_VERSION:
            raise DataError(
                f"results document has schema version {version!r}, "
                f"this build reads {SCHEMA_VERSION}"
            )
        names = {f.name for f in dataclasses.fields(ResultsDocument)}
        unknown = set(payload) - names
        if unknown:
            raise DataError(f"results document has unknown fields {sorted(unknown)}")
        return ResultsDocument(**payload)

    @staticmethod
    def read(path: str) -> "ResultsDocument":
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except OSError as e:
            raise DataError(f"cannot read results {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: invalid JSON: {e}") from e
        return ResultsDocument.from_payload(payload)

    def final_bounds(self) -> ParamIntervals:
        return bounds_from_payload(self.train["final_bounds"])

    def final_params(self) -> Params:
        return params_from_payload(self.train["final_params"])


class _Stage:
    """Context manager prefixing the stage name onto raised errors."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None:
            return False
        if isinstance(exc, (ConfigError, DataError, InvariantError)):
            raise type(exc)(f"[{self.name}] {exc}") from exc
        if isinstance(exc, ValueError):
            raise ConfigError(f"[{self.name}] {exc}") from exc
        return False


# ---------------------------------------------------------------------------
# stages


def _load_dataset(cfg: ExperimentConfig) -> Dataset:
    spec = cfg.dataset
    if spec.kind == "halfmoons":
        return gen_halfmoons(spec.n_samples, spec.noise_sd, cfg.seed)
    if spec.kind == "blobs":
        return gen_blobs(spec.n_samples, spec.centers, spec.cluster_sd, cfg.seed)
    return load_csv(spec.path, CsvSchema(label_column=spec.label_column))


@dataclass(frozen=True)
class Pipeline:
    """Fitted feature transform: optional poly expansion, then scaling."""

    poly_degree: int | None
    mean: np.ndarray | None
    sd: np.ndarray | None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.poly_degree is not None:
            x = poly_features(x, self.poly_degree)
        if self.mean is not None:
            x = (x - self.mean) / self.sd
        return x

    def to_payload(self) -> dict:
        return {
            "poly_degree": self.poly_degree,
            "mean": None if self.mean is None else self.mean.tolist(),
            "sd": None if self.sd is None else self.sd.tolist(),
        }

    @staticmethod
    def from_payload(payload: dict) -> "Pipeline":
        mean = payload.get("mean")
        sd = payload.get("sd")
        return Pipeline(
            payload.get("poly_degree"),
            None if mean is None else np.asarray(mean, dtype=np.float64),
            None if sd is None else np.asarray(sd, dtype=np.float64),
        )


def _fit_pipeline(cfg: ExperimentConfig, features: np.ndarray) -> tuple[Pipeline, np.ndarray]:
    x = features
    degree = cfg.pipeline.poly_degree
    if degree is not None:
        x = poly_features(x, degree)
    if cfg.pipeline.standardize:
        x, mean, sd = standardize(x)
        return Pipeline(degree, mean, sd), x
    return Pipeline(degree, None, None), x


def build_stability_ladder(
    features: np.ndarray,
    labels: np.ndarray,
    arch: Architecture,
    cfg: ExperimentConfig,
    schedule,
) -> tuple[StabilityLadder, dict[int, IntervalTrajectory]]:
    """Interval-train once per ladder rung, sharing init and schedule."""
    rungs = cfg.perturbation.ladder
    if not rungs:
        raise ConfigError("perturbation.ladder is required to build a ladder")
    runs = {}
    entries = []
    for n in rungs:
        traj = interval_train(
            features,
            labels,
            arch,
            cfg.train,
            cfg.perturbation_model(n),
            schedule=schedule,
            method=cfg.certify.method,
        )
        runs[n] = traj
        entries.append((n, traj.final_bounds))
    return StabilityLadder(tuple(entries)), runs


def _certify_section(
    cfg: ExperimentConfig,
    raw_features: np.ndarray,
    pipeline: Pipeline,
    features: np.ndarray,
    labels: np.ndarray,
    runs: dict[int, IntervalTrajectory],
) -> dict:
    spec = cfg.certify
    method = spec.method
    primary = runs[min(runs)]
    grid_raw = grid_points(raw_features, spec.grid_resolution, spec.grid_inflate)
    grid = pipeline(grid_raw)
    stable_per_n = {}
    for n, traj in sorted(runs.items()):
        pi = traj.final_bounds
        nominal = traj.final_params
        stable_per_n[str(n)] = int(
            sum(certify_stable(pi, nominal, g, method) for g in grid)
        )
    section = {
        "method": method,
        "grid": {
            "resolution": list(spec.grid_resolution),
            "inflate": spec.grid_inflate,
            "n_points": int(grid.shape[0]),
            "bbox": [grid_raw.min(axis=0).tolist(), grid_raw.max(axis=0).tolist()],
            "stable_per_n": stable_per_n,
        },
        "certified_accuracy": certified_accuracy(
            primary.final_bounds, primary.final_params, features, labels, method
        ),
    }
    lb = loss_bounds(
        primary.final_bounds, features, labels, cfg.train.loss, method
    )
    section["train_loss_bounds"] = {"lo": float(lb.lo), "hi": float(lb.hi)}
    if spec.backdoor_epsilon is not None:
        stable = sum(
            certify_backdoor(
                primary.final_bounds,
                primary.final_params,
                features[i],
                labels[i],
                spec.backdoor_epsilon,
                method,
            )
            for i in range(features.shape[0])
        )
        section["backdoor"] = {
            "epsilon_test": spec.backdoor_epsilon,
            "certified": int(stable),
            "out_of": int(features.shape[0]),
        }
    return section


def _privacy_section(
    cfg: ExperimentConfig,
    pipeline: Pipeline,
    runs: dict[int, IntervalTrajectory],
    grid_raw: np.ndarray,
) -> dict:
    spec = cfg.certify.privacy
    beta = spec.beta if spec.beta is not None else spec.epsilon / 6.0
    pp = PrivacyParams(spec.epsilon, spec.delta, beta)
    ladder = StabilityLadder(
        tuple((n, runs[n].final_bounds) for n in sorted(runs))
    )
    nominal = runs[min(runs)].final_params
    grid = pipeline(grid_raw)
    records = []
    histogram: dict[str, int] = {}
    for point_raw, point in zip(grid_raw, grid):
        n_prime = max_stable_n(ladder, nominal, point, cfg.certify.method)
        histogram[str(n_prime)] = histogram.get(str(n_prime), 0) + 1
        ss = smooth_sensitivity_bound(n_prime, pp.beta)
        records.append(
            {
                "point": [float(v) for v in point_raw],
                "stable_n": n_prime,
                "ss_bound": ss,
                "scale": noise_scale(ss, pp, spec.mechanism),
            }
        )
    return {
        "epsilon": pp.epsilon,
        "delta": pp.delta,
        "beta": pp.beta,
        "mechanism": spec.mechanism,
        "ladder": list(ladder.sizes),
        "stable_n_histogram": histogram,
        "points": records,
    }


def _enumeration_section(
    cfg: ExperimentConfig,
    features: np.ndarray,
    labels: np.ndarray,
    arch: Architecture,
    schedule,
    trajectory: IntervalTrajectory,
) -> dict:
    spec = cfg.enumerate_oracle
    n = cfg.perturbation.n
    kind = LabelFlips(n) if spec.kind == "label_flips" else Removals(n)
    plan = EnumerationPlan(kind, features, labels, cap=spec.cap)
    trajectories = empirical_reachable_trajectories(
        plan, arch, cfg.train, schedule
    )
    report = check_trajectory_containment(trajectories, trajectory, CONTAINMENT_TOL)
    return {
        "kind": spec.kind,
        "n": n,
        "total": report.total,
        "contained": report.contained,
        "worst_excess": report.worst_excess,
        "all_contained": report.all_contained,
    }


def _encode_section(
    cfg: ExperimentConfig,
    features: np.ndarray,
    labels: np.ndarray,
    arch: Architecture,
    schedule,
    trajectory: IntervalTrajectory,
) -> dict:
    spec = cfg.encode
    opts = EncodeOptions(
        relaxation=spec.relaxation,
        horizon_w=spec.horizon_w,
        step_p=spec.step_p,
        bigM_margin=spec.bigM_margin,
    )
    encoder = TrainingEncoder(
        features, labels, arch, cfg.train, cfg.perturbation_model(), opts,
        schedule=schedule,
    )
    plan = rolling_horizon_plan(
        trajectory.n_iterations, spec.horizon_w, spec.step_p
    )
    out_dir = None
    if cfg.output_path:
        out_dir = os.path.dirname(os.path.abspath(cfg.output_path))
    windows = []
    for t0, t1 in plan:
        cs = encoder.encode((t0, t1), trajectory.bounds[t0])
        entry = {
            "window": [t0, t1],
            "relaxation": spec.relaxation,
            "n_variables": cs.n_variables,
            "n_binaries": cs.n_binaries,
            "n_linear": cs.n_linear,
            "n_quadratic": cs.n_quadratic,
        }
        if out_dir is not None:
            stem, _ = os.path.splitext(os.path.basename(cfg.output_path))
            path = os.path.join(out_dir, f"{stem}_w{t0}_{t1}.lp")
            atomic_write_text(path, emit_lp_file(cs))
            entry["path"] = path
        windows.append(entry)
    return {"windows": windows}


# ---------------------------------------------------------------------------
# the runner


def run_experiment(cfg: ExperimentConfig) -> ResultsDocument:
    """Run every configured stage and return the results document."""
    with _Stage("dataset"):
        dataset = _load_dataset(cfg)
        raw_features = dataset.features

    with _Stage("pipeline"):
        pipeline, features = _fit_pipeline(cfg, raw_features)
        labels = dataset.labels
        arch = Architecture(cfg.arch.layer_sizes(features.shape[1]))

    with _Stage("train"):
        schedule = make_schedule(
            features.shape[0],
            cfg.train.batch_size,
            cfg.train.epochs,
            cfg.train.seed,
        )
        rungs = cfg.perturbation.ladder or (cfg.perturbation.n,)
        runs: dict[int, IntervalTrajectory] = {}
        for n in rungs:
            runs[n] = interval_train(
                features,
                labels,
                arch,
                cfg.train,
                cfg.perturbation_model(n),
                schedule=schedule,
                method=cfg.certify.method,
            )
        primary = runs[min(runs)]
        train_section = {
            "layer_sizes": list(arch.layer_sizes),
            "n_iterations": primary.n_iterations,
            "pipeline": pipeline.to_payload(),
            "widths_per_n": {
                str(n): traj.widths() for n, traj in sorted(runs.items())
            },
            "final_bounds": bounds_to_payload(primary.final_bounds),
            "final_params": params_to_payload(primary.final_params),
        }

    certify_section = None
    privacy_section = None
    with _Stage("certify"):
        if raw_features.shape[1] == 2:
            certify_section = _certify_section(
                cfg, raw_features, pipeline, features, labels, runs
            )
            if cfg.certify.privacy is not None:
                grid_raw = grid_points(
                    raw_features,
                    cfg.certify.grid_resolution,
                    cfg.certify.grid_inflate,
                )
                privacy_section = _privacy_section(cfg, pipeline, runs, grid_raw)
        else:
            certify_section = {
                "method": cfg.certify.method,
                "certified_accuracy": certified_accuracy(
                    primary.final_bounds,
                    primary.final_params,
                    features,
                    labels,
                    cfg.certify.method,
                ),
            }

    enumeration_section = None
    if cfg.enumerate_oracle is not None:
        with _Stage("enumerate"):
            enumeration_section = _enumeration_section(
                cfg, features, labels, arch, schedule,
                runs.get(cfg.perturbation.n, primary),
            )

    encode_section = None
    if cfg.encode is not None:
        with _Stage("encode"):
            encode_section = _encode_section(
                cfg, features, labels, arch, schedule, primary
            )

    with _Stage("serialize"):
        doc = ResultsDocument(
            config=to_dict(cfg),
            config_hash=config_hash(cfg),
            created_at=datetime.datetime.now(datetime.timezone.utc).isoformat(),
            train=train_section,
            certify=certify_section,
            enumeration=enumeration_section,
            privacy=privacy_section,
            encode=encode_section,
        )
        if cfg.output_path:
            doc.write(cfg.output_path)
    return doc
