"""Ground-truth enumeration: retrain under every concrete perturbation.

For instances small enough to enumerate, this module builds every
admissible perturbed dataset, retrains on each with the shared seed and
schedule, and checks that the resulting parameters actually land inside
the abstract enclosure.  It also provides an exact brute-force envelope
over batch descent directions, used to validate the aggregation rules.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .boundprop import ParamIntervals
from .errors import ConfigError
from .intervals import IntervalTensor
from .nn import Architecture, Params, TrainConfig, params_flatten, params_unflatten, train_nominal
from .training import BatchSchedule, IntervalTrajectory, Removal, Substitution

__all__ = [
    "ContainmentReport",
    "EnumerationPlan",
    "FeatureGrid",
    "LabelFlips",
    "PerturbedDataset",
    "Removals",
    "brute_force_descent_envelope",
    "check_containment",
    "check_trajectory_containment",
    "empirical_reachable_params",
    "empirical_reachable_trajectories",
    "enumerate_perturbed_datasets",
]

DEFAULT_CAP = 10_000


@dataclass(frozen=True)
class LabelFlips:
    """Flip the binary labels of every index set of exactly n points."""

    n: int


@dataclass(frozen=True)
class Removals:
    """Remove every index set of exactly n points."""

    n: int


@dataclass(frozen=True)
class FeatureGrid:
    """Move n points' features within their epsilon-box.

    Candidate placements per perturbed sample are a full axis grid with
    ``points_per_axis`` points per dimension, always including the exact
    centre.  This is a sampling oracle: continuous feature perturbations
    cannot be enumerated, so containment of the sampled retrainings is a
    soundness check, not an exactness check.
    """

    n: int
    epsilon: float
    points_per_axis: int = 2


@dataclass(frozen=True)
class EnumerationPlan:
    kind: LabelFlips | Removals | FeatureGrid
    features: np.ndarray
    labels: np.ndarray
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        object.__setattr__(
            self, "features", np.asarray(self.features, dtype=np.float64)
        )
        object.__setattr__(self, "labels", np.asarray(self.labels))
        n = self.kind.n
        if n < 0:
            raise ConfigError("perturbation size must be nonnegative")
        if n > self.n_samples:
            raise ConfigError("perturbation size exceeds dataset size")
        if isinstance(self.kind, LabelFlips):
            if not np.all(np.isin(self.labels, (0, 1))):
                raise ConfigError("label flips require binary {0,1} labels")
        if isinstance(self.kind, FeatureGrid):
            if self.kind.epsilon < 0:
                raise ConfigError("epsilon must be nonnegative")
            if self.kind.points_per_axis < 2:
                raise ConfigError("points_per_axis must be at least 2")
        if self.count() > self.cap:
            raise ConfigError(
                f"enumeration would need {self.count()} trainings, cap is {self.cap}"
            )

    @property
    def n_samples(self) -> int:
        return int(self.features.shape[0])

    def _candidates_per_sample(self) -> int:
        kind = self.kind
        assert isinstance(kind, FeatureGrid)
        d = int(self.features.shape[1])
        m = kind.points_per_axis**d
        # the centre is on the grid only when points_per_axis is odd
        return m if kind.points_per_axis % 2 == 1 else m + 1

    def count(self) -> int:
        """Total number of datasets the plan yields, nominal included."""
        n = self.kind.n
        subsets = math.comb(self.n_samples, n)
        if isinstance(self.kind, FeatureGrid):
            return 1 + subsets * self._candidates_per_sample() ** n
        return 1 + subsets


@dataclass(frozen=True)
class PerturbedDataset:
    """One enumerated dataset plus the bookkeeping retraining needs."""

    description: str
    features: np.ndarray
    labels: np.ndarray
    removed: tuple[int, ...] = field(default=())


def _grid_candidates(x: np.ndarray, epsilon: float, points_per_axis: int) -> np.ndarray:
    axes = [np.linspace(v - epsilon, v + epsilon, points_per_axis) for v in x]
    grid = np.array(list(itertools.product(*axes)))
    if points_per_axis % 2 == 0:
        grid = np.vstack([grid, x[None, :]])
    return grid


def enumerate_perturbed_datasets(plan: EnumerationPlan):
    """Yield every admissible dataset, the unperturbed one first.

    Index sets are enumerated in lexicographic order; grid placements in
    row-major axis order with the centre last.
    """
    yield PerturbedDataset("nominal", plan.features, plan.labels)
    indices = range(plan.n_samples)
    n = plan.kind.n
    if isinstance(plan.kind, LabelFlips):
        for subset in itertools.combinations(indices, n):
            labels = plan.labels.copy()
            labels[list(subset)] = 1 - labels[list(subset)]
            yield PerturbedDataset(f"flip{subset}", plan.features, labels)
    elif isinstance(plan.kind, Removals):
        for subset in itertools.combinations(indices, n):
            yield PerturbedDataset(
                f"remove{subset}", plan.features, plan.labels, removed=subset
            )
    elif isinstance(plan.kind, FeatureGrid):
        cands = [
            _grid_candidates(plan.features[i], plan.kind.epsilon, plan.kind.points_per_axis)
            for i in indices
        ]
        for subset in itertools.combinations(indices, n):
            for choice in itertools.product(
                *(range(cands[i].shape[0]) for i in subset)
            ):
                features = plan.features.copy()
                for i, c in zip(subset, choice):
                    features[i] = cands[i][c]
                yield PerturbedDataset(
                    f"move{subset}@{choice}", features, plan.labels
                )
    else:
        raise ConfigError(f"unknown enumeration kind {plan.kind!r}")


def empirical_reachable_trajectories(
    plan: EnumerationPlan,
    arch: Architecture,
    cfg: TrainConfig,
    schedule: BatchSchedule,
) -> list[list[Params]]:
    """Retrain on every enumerated dataset; full iterate lists.

    All retrainings share the schedule and the seeded initialisation.
    Removal retrainings keep the batch order but delete the removed
    indices from each batch in place, shrinking that batch's size.
    """
    out = []
    for ds in enumerate_perturbed_datasets(plan):
        sched = schedule.filtered(ds.removed) if ds.removed else schedule
        out.append(train_nominal(ds.features, ds.labels, arch, cfg, sched))
    return out


def empirical_reachable_params(
    plan: EnumerationPlan,
    arch: Architecture,
    cfg: TrainConfig,
    schedule: BatchSchedule,
) -> list[Params]:
    """Final parameters of every retraining under the plan."""
    return [traj[-1] for traj in empirical_reachable_trajectories(plan, arch, cfg, schedule)]


@dataclass(frozen=True)
class ContainmentReport:
    """Outcome of checking retrained parameters against an enclosure."""

    total: int
    contained: int
    worst_excess: float
    envelope: ParamIntervals
    flags: tuple[bool, ...]

    @property
    def all_contained(self) -> bool:
        return self.contained == self.total


def _envelope_from_flat(flat: np.ndarray, arch) -> ParamIntervals:
    lo = params_unflatten(flat.min(axis=0), arch)
    hi = params_unflatten(flat.max(axis=0), arch)
    return ParamIntervals(
        tuple(IntervalTensor(wl, wh) for wl, wh in zip(lo.weights, hi.weights)),
        tuple(IntervalTensor(bl, bh) for bl, bh in zip(lo.biases, hi.biases)),
    )


def check_containment(
    params: list[Params], theta: ParamIntervals, tol: float
) -> ContainmentReport:
    """Check every parameter vector against the enclosure.

    ``worst_excess`` is the largest elementwise escape distance over all
    runs (0 when everything is inside); a run counts as contained when
    its escape distance is at most tol.
    """
    if not params:
        raise ValueError("no parameters to check")
    violations = [theta.max_violation(p) for p in params]
    flags = tuple(v <= tol for v in violations)
    return ContainmentReport(
        total=len(params),
        contained=sum(flags),
        worst_excess=float(max(violations)),
        envelope=_envelope_from_flat(
            np.stack([params_flatten(p) for p in params]), params[0].architecture()
        ),
        flags=flags,
    )


def check_trajectory_containment(
    trajectories: list[list[Params]],
    abstract: IntervalTrajectory,
    tol: float,
) -> ContainmentReport:
    """Containment of whole retraining trajectories, iterate by iterate.

    A run is contained when every one of its iterates (initialisation
    included) lies in the matching step's enclosure; the envelope in the
    report covers final iterates only.
    """
    steps = len(abstract.bounds)
    if any(len(traj) != steps for traj in trajectories):
        raise ValueError("trajectory length does not match the abstract run")
    violations = []
    for traj in trajectories:
        worst = 0.0
        for t, p in enumerate(traj):
            worst = max(worst, abstract.bounds[t].max_violation(p))
        violations.append(worst)
    flags = tuple(v <= tol for v in violations)
    finals = [traj[-1] for traj in trajectories]
    return ContainmentReport(
        total=len(trajectories),
        contained=sum(flags),
        worst_excess=float(max(violations)),
        envelope=_envelope_from_flat(
            np.stack([params_flatten(p) for p in finals]), finals[0].architecture()
        ),
        flags=flags,
    )


def brute_force_descent_envelope(
    sample_grads: list[Params],
    pm: Removal | Substitution,
    n: int | None = None,
    kappa: float | None = None,
) -> ParamIntervals:
    """Exact coordinate-wise envelope of the admissible batch means.

    Removal enumerates every subset of up to n samples to drop;
    substitution additionally replaces the dropped contributions with
    the per-coordinate extremes of [-kappa, kappa].  Bounded-perturbation
    models act on a continuum and cannot be enumerated here.

    Candidate sums are taken in ascending value order per coordinate so
    the extremal candidates reproduce the aggregation rules bit for bit.
    """
    b = len(sample_grads)
    if b == 0:
        raise ValueError("empty batch")
    if b > 12:
        raise ValueError("batch too large for exhaustive enumeration (max 12)")
    if n is None:
        n = pm.n
    if isinstance(pm, Substitution):
        if kappa is None:
            raise ValueError("substitution envelope requires kappa")
        if kappa < 0:
            raise ValueError("kappa must be nonnegative")
    elif not isinstance(pm, Removal):
        raise ValueError(
            "only removal and substitution envelopes can be enumerated"
        )
    if isinstance(pm, Removal) and n >= b:
        raise ValueError("removal must leave at least one sample per batch")
    n = min(n, b)

    flat = np.stack([params_flatten(g) for g in sample_grads])
    lo_best = np.full(flat.shape[1], np.inf)
    hi_best = np.full(flat.shape[1], -np.inf)
    for k in range(n + 1):
        for subset in itertools.combinations(range(b), k):
            keep = np.delete(flat, subset, axis=0)
            kept_sum = np.sum(np.sort(keep, axis=0), axis=0)
            if isinstance(pm, Removal):
                cand_lo = kept_sum / (b - k)
                cand_hi = cand_lo
            else:
                cand_lo = (kept_sum + k * (-kappa)) / b
                cand_hi = (kept_sum + k * kappa) / b
            lo_best = np.minimum(lo_best, cand_lo)
            hi_best = np.maximum(hi_best, cand_hi)

    arch = sample_grads[0].architecture()
    return _envelope_from_flat(np.stack([lo_best, hi_best]), arch)
