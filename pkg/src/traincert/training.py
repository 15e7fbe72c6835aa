"""Interval training: SGD with parameter-space enclosures per iteration.

:func:`interval_train` runs ordinary SGD and, alongside it, propagates a
box of parameters that soundly contains every trajectory an adversary
could produce under a declared perturbation model:

* ``BoundedPerturbation(n, epsilon, nu, p, q)``: up to n samples per
  batch may be perturbed in place, features within an epsilon-ball and
  labels within a nu-budget in the q-norm (q = 0 means label flips);
* ``Removal(n)``: up to n samples per batch may be deleted;
* ``Substitution(n)``: up to n samples per batch may be replaced by
  arbitrary points; requires clipped training.

The training process itself is deliberately rigid: one seeded
permutation fixed up front, contiguous batches with the last short batch
dropped, seeded uniform initialisation and a fixed learning-rate
schedule.  The guarantees are relative to this exact process.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .aggregation import (
    bounded_descent_bounds,
    clip_grad_bounds,
    removal_descent_bounds,
    substitution_descent_bounds,
)
from .boundprop import GradBoundsSample, ParamIntervals, per_sample_grad_bounds
from .errors import InvariantError
from .intervals import IntervalTensor
from .nn import (
    Architecture,
    LossKind,
    Params,
    TrainConfig,
    encode_label,
    init_params,
    lr_at,
    sample_gradient,
    sgd_step,
)

__all__ = [
    "BoundedPerturbation",
    "BatchSchedule",
    "IntervalTrajectory",
    "PerturbationModel",
    "Removal",
    "Substitution",
    "input_hull",
    "interval_train",
    "make_schedule",
    "target_hull",
]

logger = logging.getLogger("traincert")

CONTAINMENT_TOL = 1e-9


@dataclass(frozen=True)
class BoundedPerturbation:
    """Up to n samples perturbed in place.

    Features move within a p-norm ball of radius epsilon (only the
    infinity norm is represented exactly; other p are over-approximated
    by the enclosing box).  Labels move within a nu-budget in the q-norm;
    q = 0 counts discrete changes, so nu >= 1 allows a label flip.
    """

    n: int
    epsilon: float = 0.0
    nu: float = 0.0
    p: float = math.inf
    q: float = 0.0

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be nonnegative")
        if self.epsilon < 0 or self.nu < 0:
            raise ValueError("epsilon and nu must be nonnegative")
        if self.q != 0 and self.q < 1:
            raise ValueError("q must be 0 or >= 1")
        if self.p < 1:
            raise ValueError("p must be >= 1")


@dataclass(frozen=True)
class Removal:
    """Up to n samples deleted from each batch."""

    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be nonnegative")


@dataclass(frozen=True)
class Substitution:
    """Up to n samples per batch replaced by arbitrary data."""

    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be nonnegative")


PerturbationModel = BoundedPerturbation | Removal | Substitution


@dataclass(frozen=True)
class BatchSchedule:
    """Fixed ordered batches: one seeded permutation, contiguous slices.

    The same permutation is reused every epoch, so iteration t of epoch e
    sees exactly the same indices as iteration t of any other epoch.
    Samples beyond the last full batch are dropped.
    """

    batches: tuple[np.ndarray, ...]
    n_samples: int
    batch_size: int
    epochs: int
    seed: int

    def __len__(self) -> int:
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)

    def __getitem__(self, t: int) -> np.ndarray:
        return self.batches[t]

    def filtered(self, exclude: set[int]) -> "BatchSchedule":
        """Copy with the given dataset indices removed from every batch."""
        batches = tuple(
            np.array([i for i in batch if int(i) not in exclude], dtype=np.int64)
            for batch in self.batches
        )
        return BatchSchedule(
            batches, self.n_samples, self.batch_size, self.epochs, self.seed
        )


def make_schedule(
    n_samples: int, batch_size: int, epochs: int, seed: int
) -> BatchSchedule:
    if batch_size > n_samples:
        raise ValueError("batch size exceeds dataset size")
    if batch_size < 1 or epochs < 1:
        raise ValueError("batch_size and epochs must be >= 1")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n_samples)
    per_epoch = n_samples // batch_size
    slices = [
        perm[k * batch_size : (k + 1) * batch_size].copy()
        for k in range(per_epoch)
    ]
    batches = tuple(slices[k] for _ in range(epochs) for k in range(per_epoch))
    return BatchSchedule(batches, n_samples, batch_size, epochs, seed)


# ---------------------------------------------------------------------------
# admissible perturbation hulls


def input_hull(x: np.ndarray, pm: PerturbationModel) -> IntervalTensor | None:
    """Box of admissible perturbed inputs, or None when x cannot move."""
    if not isinstance(pm, BoundedPerturbation) or pm.epsilon == 0.0:
        return None
    if not math.isinf(pm.p):
        logger.warning(
            "p=%s feature ball is over-approximated by its bounding box", pm.p
        )
    x = np.asarray(x, dtype=np.float64)
    return IntervalTensor(x - pm.epsilon, x + pm.epsilon)


def target_hull(
    y, loss: LossKind, n_outputs: int, pm: PerturbationModel
) -> IntervalTensor | None:
    """Box of admissible encoded labels, or None when the label is fixed."""
    if not isinstance(pm, BoundedPerturbation) or pm.nu == 0.0:
        return None
    base = encode_label(y, loss, n_outputs)
    if pm.q == 0:
        # nu >= 1 allows the label to change discretely
        if pm.nu < 1:
            return None
        if loss is LossKind.CROSS_ENTROPY:
            return IntervalTensor(np.zeros(n_outputs), np.ones(n_outputs))
        if loss in (LossKind.HINGE, LossKind.BINARY_CROSS_ENTROPY):
            flipped = encode_label(1 - int(y), loss, n_outputs)
            return IntervalTensor(
                np.minimum(base, flipped), np.maximum(base, flipped)
            )
        if loss is LossKind.SQUARED_ERROR:
            yv = float(np.asarray(y).reshape(-1)[0]) if np.size(y) == 1 else None
            if yv in (0.0, 1.0) and n_outputs == 1:
                flipped = encode_label(1.0 - yv, loss, n_outputs)
                return IntervalTensor(
                    np.minimum(base, flipped), np.maximum(base, flipped)
                )
            raise ValueError("label flips need a binary scalar label")
        raise ValueError(f"unknown loss {loss}")
    if not math.isinf(pm.q):
        logger.warning(
            "q=%s label ball is over-approximated by its bounding box", pm.q
        )
    return IntervalTensor(base - pm.nu, base + pm.nu)


# ---------------------------------------------------------------------------
# the interval training loop


@dataclass(frozen=True)
class IntervalTrajectory:
    """Nominal iterates and their parameter-space enclosures, per iteration.

    Index t holds the state after t SGD updates; entry 0 is the shared
    initialisation.  The nominal iterate is contained in its box at every
    t (checked during training).
    """

    nominal: tuple[Params, ...]
    bounds: tuple[ParamIntervals, ...]

    def __post_init__(self):
        if len(self.nominal) != len(self.bounds):
            raise ValueError("trajectory lengths differ")

    @property
    def n_iterations(self) -> int:
        return len(self.nominal) - 1

    @property
    def final_params(self) -> Params:
        return self.nominal[-1]

    @property
    def final_bounds(self) -> ParamIntervals:
        return self.bounds[-1]

    def widths(self) -> list[float]:
        return [b.width_l1() for b in self.bounds]


def _sample_bounds(
    pi: ParamIntervals,
    x: np.ndarray,
    y,
    cfg: TrainConfig,
    pm: PerturbationModel,
    n_outputs: int,
    method: str,
) -> GradBoundsSample:
    x_point = IntervalTensor.point(x)
    target_point = IntervalTensor.point(encode_label(y, cfg.loss, n_outputs))
    grads = per_sample_grad_bounds(pi, x_point, target_point, cfg.loss, method)
    poisoned = None
    if isinstance(pm, BoundedPerturbation):
        x_hull = input_hull(x, pm)
        y_hull = target_hull(y, cfg.loss, n_outputs, pm)
        if x_hull is None and y_hull is None:
            poisoned = grads
        else:
            poisoned = per_sample_grad_bounds(
                pi,
                x_point if x_hull is None else x_hull,
                target_point if y_hull is None else y_hull,
                cfg.loss,
                method,
            )
    return GradBoundsSample(grads=grads, poisoned=poisoned)


def descent_bounds_for_batch(
    pi: ParamIntervals,
    batch: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    pm: PerturbationModel,
    method: str = "ibp",
) -> ParamIntervals:
    """Enclosure of the batch descent direction under the perturbation model."""
    n_outputs = pi.weights[-1].shape[0]
    samples = [
        _sample_bounds(pi, features[i], labels[i], cfg, pm, n_outputs, method)
        for i in batch
    ]
    if cfg.clip_kappa is not None:
        samples = [clip_grad_bounds(s, cfg.clip_kappa) for s in samples]
    b = len(samples)
    if isinstance(pm, Removal):
        return removal_descent_bounds(samples, pm.n)
    if isinstance(pm, Substitution):
        if cfg.clip_kappa is None:
            raise ValueError("substitution bounds require clip_kappa")
        return substitution_descent_bounds(samples, min(pm.n, b), cfg.clip_kappa)
    if isinstance(pm, BoundedPerturbation):
        return bounded_descent_bounds(samples, min(pm.n, b))
    raise TypeError(f"unknown perturbation model {pm!r}")


def interval_train(
    features: np.ndarray,
    labels: np.ndarray,
    arch: Architecture,
    cfg: TrainConfig,
    pm: PerturbationModel,
    schedule: BatchSchedule | None = None,
    method: str = "ibp",
) -> IntervalTrajectory:
    """Train nominally while propagating sound parameter enclosures.

    Returns the full trajectory (nominal iterates plus their boxes).  The
    nominal iterate is asserted to lie inside its box after every update;
    a violation raises :class:`traincert.errors.InvariantError` since it
    can only be caused by an implementation bug.
    """
    features = np.asarray(features, dtype=np.float64)
    if isinstance(pm, Substitution) and cfg.clip_kappa is None:
        raise ValueError("the substitution model requires clip_kappa")
    if method not in ("ibp", "crown"):
        raise ValueError(f"unknown forward method {method!r}")
    if schedule is None:
        schedule = make_schedule(
            features.shape[0], cfg.batch_size, cfg.epochs, cfg.seed
        )
    params = init_params(arch, cfg.seed, cfg.init_scale)
    pi = ParamIntervals.degenerate(params)
    nominal = [params]
    bounds = [pi]
    for t, batch in enumerate(schedule):
        if len(batch) == 0:
            raise ValueError(f"empty batch at iteration {t + 1}")
        alpha = lr_at(cfg, t)
        descent = descent_bounds_for_batch(
            pi, batch, features, labels, cfg, pm, method
        )
        pi = pi.step(descent, alpha)
        grads = [
            sample_gradient(params, features[i], labels[i], cfg.loss)
            for i in batch
        ]
        params = sgd_step(params, grads, alpha, cfg.clip_kappa)
        violation = pi.max_violation(params)
        if violation > CONTAINMENT_TOL:
            raise InvariantError(
                f"nominal iterate escaped its enclosure at iteration {t + 1} "
                f"by {violation:.3e}"
            )
        nominal.append(params)
        bounds.append(pi)
    return IntervalTrajectory(tuple(nominal), tuple(bounds))
