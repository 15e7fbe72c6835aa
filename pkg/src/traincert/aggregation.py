"""Sound batch aggregation of per-sample gradient enclosures.

Plain SGD averages per-sample gradients over a batch.  When up to ``n``
of the batch members may have been poisoned, removed or substituted by an
adversary, the achievable batch averages form a set; the functions here
compute coordinate-wise boxes around that set from per-sample gradient
enclosures.

The workhorses are ``sum_largest``/``sum_smallest`` (coordinate-wise sum
of the n largest/smallest entries across the batch axis).  The three
aggregation rules, with b the batch size and per-sample bounds
[dl_i, du_i]:

* removal of up to n samples (requires n < b):
  [ sum_smallest(b-n, dl) / (b-n),  sum_largest(b-n, du) / (b-n) ]
* substitution of up to n samples, gradients clipped to [-k, k]:
  [ (sum_smallest(b-n, dl) - n*k) / b,  (sum_largest(b-n, du) + n*k) / b ]
* in-place perturbation of up to n samples, where each sample also has a
  poisoned enclosure [pl_i, pu_i] covering its own admissible tampering:
  [ (sum_smallest(n, pl-dl) + sum(dl)) / b,
    (sum_largest(n, pu-du) + sum(du)) / b ]

With n = 0 all three reduce exactly to the interval batch mean, computed
with the same fixed-order summation as the nominal SGD step so that
degenerate inputs reproduce nominal training bit for bit.
"""

from __future__ import annotations

import numpy as np

from .boundprop import DescentBounds, GradBoundsSample, ParamIntervals
from .intervals import IntervalTensor
from .nn import fixed_order_mean

__all__ = [
    "bounded_descent_bounds",
    "clip_grad_bounds",
    "removal_descent_bounds",
    "substitution_descent_bounds",
    "sum_largest",
    "sum_smallest",
]


def sum_largest(n: int, stack: np.ndarray) -> np.ndarray:
    """Coordinate-wise sum of the n largest entries along axis 0."""
    b = stack.shape[0]
    if not 0 <= n <= b:
        raise ValueError(f"n={n} out of range for {b} values")
    if n == 0:
        return np.zeros(stack.shape[1:])
    if n == b:
        return np.sum(stack, axis=0)
    ordered = np.sort(stack, axis=0)
    return np.sum(ordered[b - n :], axis=0)


def sum_smallest(n: int, stack: np.ndarray) -> np.ndarray:
    """Coordinate-wise sum of the n smallest entries along axis 0."""
    b = stack.shape[0]
    if not 0 <= n <= b:
        raise ValueError(f"n={n} out of range for {b} values")
    if n == 0:
        return np.zeros(stack.shape[1:])
    if n == b:
        return np.sum(stack, axis=0)
    ordered = np.sort(stack, axis=0)
    return np.sum(ordered[:n], axis=0)


def clip_grad_bounds(sample: GradBoundsSample, kappa: float) -> GradBoundsSample:
    """Clip both endpoints of a gradient enclosure to [-kappa, kappa].

    Clipping is monotone, so the clipped box encloses the clipped
    gradients whenever the original box enclosed the originals.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    return GradBoundsSample(
        grads=sample.grads.clip(kappa),
        poisoned=None if sample.poisoned is None else sample.poisoned.clip(kappa),
    )


def _slots(parts: list[ParamIntervals]):
    depth = parts[0].depth
    for which in ("weights", "biases"):
        for k in range(depth):
            ivs = [getattr(p, which)[k] for p in parts]
            lo = np.stack([iv.lo for iv in ivs])
            hi = np.stack([iv.hi for iv in ivs])
            yield which, k, lo, hi


def _assemble(template: ParamIntervals, slot_values: dict) -> DescentBounds:
    depth = template.depth
    weights = tuple(
        IntervalTensor(*slot_values[("weights", k)]) for k in range(depth)
    )
    biases = tuple(
        IntervalTensor(*slot_values[("biases", k)]) for k in range(depth)
    )
    return ParamIntervals(weights, biases)


def _batch_mean(parts: list[ParamIntervals]) -> DescentBounds:
    out = {}
    for which, k, lo, hi in _slots(parts):
        out[(which, k)] = (fixed_order_mean(lo), fixed_order_mean(hi))
    return _assemble(parts[0], out)


def removal_descent_bounds(
    samples: list[GradBoundsSample], n: int
) -> DescentBounds:
    """Descent-direction box when up to n batch members may be removed."""
    b = len(samples)
    if b == 0:
        raise ValueError("empty batch")
    if n < 0 or n >= b:
        raise ValueError(f"removal bound requires 0 <= n < batch size, got n={n}, b={b}")
    parts = [s.grads for s in samples]
    if n == 0:
        return _batch_mean(parts)
    keep = b - n
    out = {}
    for which, k, lo, hi in _slots(parts):
        out[(which, k)] = (
            sum_smallest(keep, lo) / keep,
            sum_largest(keep, hi) / keep,
        )
    return _assemble(parts[0], out)


def substitution_descent_bounds(
    samples: list[GradBoundsSample], n: int, kappa: float
) -> DescentBounds:
    """Descent-direction box when up to n members may be replaced.

    Valid only for clipped training: every per-sample enclosure must
    already lie inside [-kappa, kappa] (a replaced sample can contribute
    any clipped gradient, which is what the n*kappa terms account for).
    """
    b = len(samples)
    if b == 0:
        raise ValueError("empty batch")
    if not 0 <= n <= b:
        raise ValueError(f"substitution bound requires 0 <= n <= batch size, got n={n}")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    parts = [s.grads for s in samples]
    for which, k, lo, hi in _slots(parts):
        if np.any(lo < -kappa) or np.any(hi > kappa):
            raise ValueError(
                "per-sample gradient bounds exceed the clipping range; "
                "clip them with clip_grad_bounds first"
            )
    if n == 0:
        return _batch_mean(parts)
    keep = b - n
    shift = n * kappa
    out = {}
    for which, k, lo, hi in _slots(parts):
        out[(which, k)] = (
            (sum_smallest(keep, lo) - shift) / b,
            (sum_largest(keep, hi) + shift) / b,
        )
    return _assemble(parts[0], out)


def bounded_descent_bounds(
    samples: list[GradBoundsSample], n: int
) -> DescentBounds:
    """Descent-direction box when up to n members are perturbed in place.

    Each sample must carry a ``poisoned`` enclosure (its gradient bound
    under the sample's own admissible input/label tampering) that
    contains its nominal enclosure.
    """
    b = len(samples)
    if b == 0:
        raise ValueError("empty batch")
    if not 0 <= n <= b:
        raise ValueError(f"bounded-perturbation rule requires 0 <= n <= batch size, got n={n}")
    for idx, s in enumerate(samples):
        if s.poisoned is None:
            raise ValueError(f"sample {idx} lacks a poisoned gradient enclosure")
        if not s.poisoned.encloses(s.grads):
            raise ValueError(
                f"sample {idx}: poisoned enclosure does not contain the nominal one"
            )
    nominal = [s.grads for s in samples]
    if n == 0:
        return _batch_mean(nominal)
    poisoned = [s.poisoned for s in samples]
    nom_slots = {(which, k): (lo, hi) for which, k, lo, hi in _slots(nominal)}
    out = {}
    for which, k, plo, phi in _slots(poisoned):
        lo, hi = nom_slots[(which, k)]
        out[(which, k)] = (
            (sum_smallest(n, plo - lo) + np.sum(lo, axis=0)) / b,
            (sum_largest(n, phi - hi) + np.sum(hi, axis=0)) / b,
        )
    return _assemble(nominal[0], out)
