"""Elementwise interval boxes over float64 arrays.

An ``IntervalTensor`` stores a lower and an upper endpoint array of equal
shape and guarantees ``lo <= hi`` everywhere.  All operations return
enclosures of the exact image set: for every pointwise selection of the
operands, the true result lies inside the returned box.

Arithmetic is evaluated in ordinary round-to-nearest float64.  For the
endpoint rules used here (addition, subtraction, elementwise products,
monotone maps) round-to-nearest keeps the enclosure property because
rounding is monotone.  Matrix products use a midpoint-radius enclosure
whose floating-point slack is far below the tolerances used by callers.
When a guaranteed outward bound is wanted anyway, the module-level
``outward_rounding`` switch nudges every computed endpoint one ulp
outward.

Two invariants that callers rely on:

* degenerate in, degenerate out: when every operand has ``lo == hi`` the
  result endpoints are bit-identical to plain float64 arithmetic on the
  point values;
* no interval division is provided, by design.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Interval",
    "IntervalTensor",
    "heaviside",
    "monotone_function",
    "outward_rounding",
    "relu",
    "set_outward_rounding",
    "sigmoid",
]

_OUTWARD = False


def set_outward_rounding(enabled: bool) -> None:
    """Globally enable or disable the one-ulp outward nudge on op results."""
    global _OUTWARD
    _OUTWARD = bool(enabled)


@contextlib.contextmanager
def outward_rounding(enabled: bool = True):
    """Context manager form of :func:`set_outward_rounding`."""
    global _OUTWARD
    previous = _OUTWARD
    _OUTWARD = bool(enabled)
    try:
        yield
    finally:
        _OUTWARD = previous


def _nudged(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if _OUTWARD:
        lo = np.nextafter(lo, -np.inf)
        hi = np.nextafter(hi, np.inf)
    return lo, hi


# ---------------------------------------------------------------------------
# monotone scalar maps shared with the model code
#
# The model evaluates these on point arrays and the interval code applies
# them endpoint-wise; using one implementation keeps degenerate interval
# results bit-identical to the nominal computation.


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def heaviside(x: np.ndarray) -> np.ndarray:
    """Derivative of relu with the subgradient 0 at the kink."""
    return (x > 0.0).astype(np.float64)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # evaluate on the side that cannot overflow
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def monotone_function(name: str, kappa: float | None = None):
    """Return the named nondecreasing scalar map as an array function.

    ``clip`` truncates to ``[-kappa, kappa]`` and is the only map that
    takes a parameter.
    """
    if name == "relu":
        return relu
    if name == "heaviside":
        return heaviside
    if name == "sigmoid":
        return sigmoid
    if name == "exp":
        return np.exp
    if name == "clip":
        if kappa is None or not kappa > 0:
            raise ValueError("clip requires kappa > 0")
        return lambda x: np.clip(x, -kappa, kappa)
    raise ValueError(f"unknown monotone function {name!r}")


def _as_endpoint(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64, copy=True)
    return arr


def _validate(lo: np.ndarray, hi: np.ndarray) -> None:
    if lo.shape != hi.shape:
        raise ValueError(f"endpoint shapes differ: {lo.shape} vs {hi.shape}")
    # NaN endpoints make the comparison False, so they are rejected here too
    if not bool(np.all(lo <= hi)):
        raise ValueError("interval endpoints violate lo <= hi")


@dataclass(frozen=True)
class IntervalTensor:
    """Axis-aligned box of float64 arrays with ``lo <= hi`` elementwise."""

    lo: np.ndarray
    hi: np.ndarray

    def __init__(self, lo, hi):
        lo = _as_endpoint(lo)
        hi = _as_endpoint(hi)
        _validate(lo, hi)
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    # -- constructors -------------------------------------------------------

    @staticmethod
    def point(values) -> "IntervalTensor":
        """Degenerate interval [x, x]."""
        arr = _as_endpoint(values)
        if np.any(np.isnan(arr)):
            raise ValueError("NaN is not a valid interval endpoint")
        return IntervalTensor._wrap(arr, arr.copy())

    @staticmethod
    def from_center(center, radius) -> "IntervalTensor":
        center = _as_endpoint(center)
        radius = np.broadcast_to(np.asarray(radius, dtype=np.float64), center.shape)
        if np.any(radius < 0):
            raise ValueError("radius must be nonnegative")
        return IntervalTensor(center - radius, center + radius)

    @staticmethod
    def _wrap(lo: np.ndarray, hi: np.ndarray) -> "IntervalTensor":
        # internal: endpoints are freshly computed arrays we own
        obj = object.__new__(IntervalTensor)
        _validate(lo, hi)
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(obj, "lo", lo)
        object.__setattr__(obj, "hi", hi)
        return obj

    # -- structure ----------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.lo.shape

    @property
    def T(self) -> "IntervalTensor":
        return IntervalTensor._wrap(self.lo.T.copy(), self.hi.T.copy())

    def reshape(self, *shape) -> "IntervalTensor":
        return IntervalTensor._wrap(
            self.lo.reshape(*shape).copy(), self.hi.reshape(*shape).copy()
        )

    def __getitem__(self, key) -> "IntervalTensor":
        return IntervalTensor._wrap(
            np.array(self.lo[key]), np.array(self.hi[key])
        )

    def is_degenerate(self) -> bool:
        return bool(np.all(self.lo == self.hi))

    @property
    def mid(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0

    @property
    def rad(self) -> np.ndarray:
        return (self.hi - self.lo) / 2.0

    # -- queries ------------------------------------------------------------

    def contains(self, values, tol: float = 0.0) -> bool:
        """True when ``lo - tol <= values <= hi + tol`` everywhere."""
        if tol < 0:
            raise ValueError("tol must be nonnegative")
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != self.shape:
            raise ValueError(f"shape mismatch: {arr.shape} vs {self.shape}")
        if np.any(np.isnan(arr)):
            return False
        return bool(np.all(arr >= self.lo - tol) and np.all(arr <= self.hi + tol))

    def encloses(self, other: "IntervalTensor", tol: float = 0.0) -> bool:
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch: {other.shape} vs {self.shape}")
        return bool(
            np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol)
        )

    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def width_l1(self) -> float:
        """Total width: sum of (hi - lo) over all entries."""
        return float(np.sum(self.hi - self.lo))

    # -- arithmetic ----------------------------------------------------------

    def add(self, other: "IntervalTensor") -> "IntervalTensor":
        other = _coerce(other)
        lo, hi = _nudged(self.lo + other.lo, self.hi + other.hi)
        return IntervalTensor._wrap(lo, hi)

    def sub(self, other: "IntervalTensor") -> "IntervalTensor":
        other = _coerce(other)
        lo, hi = _nudged(self.lo - other.hi, self.hi - other.lo)
        return IntervalTensor._wrap(lo, hi)

    def elemmul(self, other: "IntervalTensor") -> "IntervalTensor":
        """Exact elementwise interval product (min/max of the 4 endpoint products)."""
        other = _coerce(other)
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch: {self.shape} vs {other.shape}")
        return _elemmul_raw(self, other)

    def scale(self, alpha: float) -> "IntervalTensor":
        """Multiply by a real scalar, swapping endpoints when alpha < 0."""
        alpha = float(alpha)
        if alpha >= 0:
            lo, hi = alpha * self.lo, alpha * self.hi
        else:
            lo, hi = alpha * self.hi, alpha * self.lo
        lo, hi = _nudged(lo, hi)
        return IntervalTensor._wrap(lo, hi)

    def matmul(self, other: "IntervalTensor") -> "IntervalTensor":
        """Interval matrix product.

        Uses the midpoint-radius enclosure (four real matmuls): the result
        is centred at ``mid_a @ mid_b`` with radius
        ``|mid_a| @ rad_b + rad_a @ |mid_b| + rad_a @ rad_b``.  Products
        whose contraction axis has length one involve no summation, so they
        are computed exactly from the four endpoint products instead; this
        keeps scalar products and outer products tight.
        """
        other = _coerce(other)
        a_lo, a_hi, b_lo, b_hi = self.lo, self.hi, other.lo, other.hi
        inner = a_lo.shape[-1] if a_lo.ndim >= 1 else 1
        if b_lo.ndim >= 2:
            k = b_lo.shape[-2]
        else:
            k = b_lo.shape[0] if b_lo.ndim == 1 else 1
        if inner != k:
            raise ValueError(
                f"matmul shape mismatch: {a_lo.shape} @ {b_lo.shape}"
            )
        if inner == 1:
            # no summation: each output entry is one scalar interval product
            ll = np.matmul(a_lo, b_lo)
            lh = np.matmul(a_lo, b_hi)
            hl = np.matmul(a_hi, b_lo)
            hh = np.matmul(a_hi, b_hi)
            lo = np.minimum(np.minimum(ll, lh), np.minimum(hl, hh))
            hi = np.maximum(np.maximum(ll, lh), np.maximum(hl, hh))
            lo, hi = _nudged(lo, hi)
            return IntervalTensor._wrap(lo, hi)
        mid_a = (a_lo + a_hi) / 2.0
        rad_a = (a_hi - a_lo) / 2.0
        mid_b = (b_lo + b_hi) / 2.0
        rad_b = (b_hi - b_lo) / 2.0
        mid = np.matmul(mid_a, mid_b)
        rad = (
            np.matmul(np.abs(mid_a), rad_b)
            + np.matmul(rad_a, np.abs(mid_b))
            + np.matmul(rad_a, rad_b)
        )
        lo, hi = _nudged(mid - rad, mid + rad)
        return IntervalTensor._wrap(lo, hi)

    def map_monotone(self, fn, kappa: float | None = None) -> "IntervalTensor":
        """Apply a nondecreasing scalar map to both endpoints.

        ``fn`` is either a callable or one of the registered names
        (relu, heaviside, sigmoid, exp, clip).
        """
        if isinstance(fn, str):
            fn = monotone_function(fn, kappa=kappa)
        lo, hi = _nudged(fn(self.lo), fn(self.hi))
        return IntervalTensor._wrap(lo, hi)

    def clip(self, kappa: float) -> "IntervalTensor":
        # exact lattice op, no nudge: padding here would push endpoints
        # past kappa and violate the substitution rule's precondition
        if not kappa > 0:
            raise ValueError("kappa must be positive")
        return IntervalTensor._wrap(
            np.clip(self.lo, -kappa, kappa), np.clip(self.hi, -kappa, kappa)
        )

    def hull(self, other: "IntervalTensor") -> "IntervalTensor":
        """Smallest box containing both operands."""
        other = _coerce(other)
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch: {self.shape} vs {other.shape}")
        return IntervalTensor._wrap(
            np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi)
        )

    def intersect(self, other: "IntervalTensor") -> "IntervalTensor":
        other = _coerce(other)
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            raise ValueError("empty intersection")
        return IntervalTensor._wrap(lo, hi)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return self.add(other)

    def __sub__(self, other):
        return self.sub(other)

    def __matmul__(self, other):
        return self.matmul(other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        return self.elemmul(other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        return NotImplemented

    def __neg__(self):
        return self.scale(-1.0)

    def __repr__(self) -> str:
        return f"IntervalTensor(lo={self.lo!r}, hi={self.hi!r})"


def _coerce(value) -> IntervalTensor:
    if isinstance(value, IntervalTensor):
        return value
    return IntervalTensor.point(value)


def _elemmul_raw(a: IntervalTensor, b: IntervalTensor) -> IntervalTensor:
    ll = a.lo * b.lo
    lh = a.lo * b.hi
    hl = a.hi * b.lo
    hh = a.hi * b.hi
    lo = np.minimum(np.minimum(ll, lh), np.minimum(hl, hh))
    hi = np.maximum(np.maximum(ll, lh), np.maximum(hl, hh))
    lo, hi = _nudged(lo, hi)
    return IntervalTensor._wrap(lo, hi)


def scale_columns(a: IntervalTensor, d: IntervalTensor) -> IntervalTensor:
    """Multiply each column j of interval matrix ``a`` by scalar interval d_j.

    Equivalent to the exact elementwise product with ``d`` broadcast along
    rows; used for diagonal scalings where a full matmul would be loose.
    """
    if a.lo.ndim != 2 or d.lo.ndim != 1 or a.shape[1] != d.shape[0]:
        raise ValueError(f"cannot column-scale {a.shape} by {d.shape}")
    d_lo = np.broadcast_to(d.lo, a.shape)
    d_hi = np.broadcast_to(d.hi, a.shape)
    return _elemmul_raw(a, IntervalTensor._wrap(d_lo.copy(), d_hi.copy()))


@dataclass(frozen=True)
class Interval:
    """Scalar interval; a thin convenience wrapper around two floats."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.hi):
            raise ValueError("interval endpoints violate lo <= hi")

    @staticmethod
    def point(x: float) -> "Interval":
        x = float(x)
        return Interval(x, x)

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol

    def width(self) -> float:
        return self.hi - self.lo

    def add(self, other: "Interval") -> "Interval":
        return Interval(self.lo + other.lo, self.hi + other.hi)

    def sub(self, other: "Interval") -> "Interval":
        return Interval(self.lo - other.hi, self.hi - other.lo)

    def mul(self, other: "Interval") -> "Interval":
        products = (
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        )
        return Interval(min(products), max(products))

    def scale(self, alpha: float) -> "Interval":
        alpha = float(alpha)
        if alpha >= 0:
            return Interval(alpha * self.lo, alpha * self.hi)
        return Interval(alpha * self.hi, alpha * self.lo)

    def hull(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def __add__(self, other):
        return self.add(other)

    def __sub__(self, other):
        return self.sub(other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        return self.mul(other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        return NotImplemented
