"""Prediction certificates, loss bounds and private prediction.

Everything here consumes a parameter enclosure (a ``ParamIntervals`` box
produced by interval training) and asks what every model inside the box
agrees on.

Prediction conventions: a single-logit classifier predicts class 1 when
its logit is strictly positive; a multi-logit classifier predicts the
argmax with ties going to the lowest index.  A prediction is *stable*
when every parameter choice in the box yields the nominal model's
prediction, and *certifiably correct* when it is stable and the nominal
prediction matches the label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boundprop import ParamIntervals, crown_forward, interval_forward
from .intervals import Interval, IntervalTensor
from .nn import LossKind, Params, encode_label, forward, loss_value

__all__ = [
    "Certificate",
    "PrivacyParams",
    "StabilityLadder",
    "certified_accuracy",
    "certify_backdoor",
    "certify_correct",
    "certify_stable",
    "loss_bounds",
    "max_stable_n",
    "noise_scale",
    "output_bounds",
    "predicted_class",
    "private_predict",
    "smooth_sensitivity_bound",
]


def output_bounds(
    pi: ParamIntervals, x, method: str = "ibp"
) -> IntervalTensor:
    """Logit enclosure for a fixed input (or an input box)."""
    x_iv = x if isinstance(x, IntervalTensor) else IntervalTensor.point(x)
    if method == "crown":
        return crown_forward(pi, x_iv).logits
    if method == "ibp":
        return interval_forward(pi, x_iv).logits
    raise ValueError(f"unknown forward method {method!r}")


def predicted_class(logits: np.ndarray) -> int:
    logits = np.asarray(logits)
    if logits.shape[0] == 1:
        return int(logits[0] > 0.0)
    return int(np.argmax(logits))


def _stable_for_prediction(bounds: IntervalTensor, pred: int) -> bool:
    if bounds.shape[0] == 1:
        if pred == 1:
            return bool(bounds.lo[0] > 0.0)
        return bool(bounds.hi[0] <= 0.0)
    lo_t = bounds.lo[pred]
    others = np.delete(bounds.hi, pred)
    return bool(np.all(lo_t >= others))


def certify_stable(
    pi: ParamIntervals, nominal: Params, x, method: str = "ibp"
) -> bool:
    """True when every model in the box predicts the nominal class at x."""
    bounds = output_bounds(pi, x, method)
    pred = predicted_class(forward(nominal, np.asarray(x, dtype=np.float64)).logits)
    return _stable_for_prediction(bounds, pred)


def certify_correct(
    pi: ParamIntervals, nominal: Params, x, y, method: str = "ibp"
) -> bool:
    """Stable and the nominal prediction equals the label."""
    pred = predicted_class(forward(nominal, np.asarray(x, dtype=np.float64)).logits)
    if pred != int(y):
        return False
    bounds = output_bounds(pi, x, method)
    return _stable_for_prediction(bounds, pred)


def certified_accuracy(
    pi: ParamIntervals,
    nominal: Params,
    features: np.ndarray,
    labels: np.ndarray,
    method: str = "ibp",
) -> float:
    """Fraction of points whose prediction is certifiably correct."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == 0:
        raise ValueError("empty dataset")
    hits = sum(
        certify_correct(pi, nominal, features[i], labels[i], method)
        for i in range(features.shape[0])
    )
    return hits / features.shape[0]


def certify_backdoor(
    pi: ParamIntervals,
    nominal: Params,
    x,
    y,
    epsilon_test: float,
    method: str = "ibp",
) -> bool:
    """Certified correctness jointly over the box and a test-time ball.

    The logit enclosure is taken over all parameters in the box *and* all
    inputs within an infinity-ball of radius ``epsilon_test`` around x;
    the reference class is the nominal prediction at the centre.
    """
    if epsilon_test < 0:
        raise ValueError("epsilon_test must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    pred = predicted_class(forward(nominal, x).logits)
    if pred != int(y):
        return False
    x_iv = IntervalTensor(x - epsilon_test, x + epsilon_test)
    bounds = output_bounds(pi, x_iv, method)
    return _stable_for_prediction(bounds, pred)


@dataclass(frozen=True)
class Certificate:
    """Per-point certification outcome."""

    predicted: int
    stable: bool
    correct: bool | None = None


# ---------------------------------------------------------------------------
# interval loss evaluation


def _squared_error_interval(logits: IntervalTensor, target: np.ndarray) -> Interval:
    lo_d = logits.lo - target
    hi_d = logits.hi - target
    sq_lo = np.where(
        (lo_d <= 0.0) & (hi_d >= 0.0),
        0.0,
        np.minimum(lo_d * lo_d, hi_d * hi_d),
    )
    sq_hi = np.maximum(lo_d * lo_d, hi_d * hi_d)
    return Interval(float(np.sum(sq_lo)), float(np.sum(sq_hi)))


def _point_loss_interval(
    logits: IntervalTensor, target: np.ndarray, loss: LossKind
) -> Interval:
    if loss is LossKind.SQUARED_ERROR:
        return _squared_error_interval(logits, target)
    if loss is LossKind.BINARY_CROSS_ENTROPY:
        # strictly monotone in the logit: decreasing for y=1, increasing for y=0
        at_lo = loss_value(logits.lo, target, loss)
        at_hi = loss_value(logits.hi, target, loss)
        return Interval(min(at_lo, at_hi), max(at_lo, at_hi))
    if loss is LossKind.HINGE:
        at_lo = loss_value(logits.lo, target, loss)
        at_hi = loss_value(logits.hi, target, loss)
        return Interval(min(at_lo, at_hi), max(at_lo, at_hi))
    if loss is LossKind.CROSS_ENTROPY:
        # increasing in every off-class logit, decreasing in the class logit
        t = int(np.argmax(target))
        worst = logits.hi.copy()
        worst[t] = logits.lo[t]
        best = logits.lo.copy()
        best[t] = logits.hi[t]
        return Interval(
            loss_value(best, target, loss), loss_value(worst, target, loss)
        )
    raise ValueError(f"unsupported loss for interval evaluation: {loss}")


def loss_bounds(
    pi: ParamIntervals,
    features: np.ndarray,
    labels: np.ndarray,
    loss: LossKind,
    method: str = "ibp",
) -> Interval:
    """Enclosure of the mean loss over a dataset.

    BCE and hinge are monotone in their single logit, so endpoint
    evaluation is exact given the logit enclosure; squared error uses the
    interval square; cross-entropy evaluates its monotone pieces at the
    worst and best corner.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    n_outputs = pi.weights[-1].shape[0]
    lows = np.empty(n)
    highs = np.empty(n)
    for i in range(n):
        logits = output_bounds(pi, features[i], method)
        target = encode_label(labels[i], loss, n_outputs)
        iv = _point_loss_interval(logits, target, loss)
        lows[i] = iv.lo
        highs[i] = iv.hi
    return Interval(float(np.sum(lows) / n), float(np.sum(highs) / n))


# ---------------------------------------------------------------------------
# stability ladder and private prediction


@dataclass(frozen=True)
class StabilityLadder:
    """Parameter enclosures for an increasing ladder of adversary strengths.

    ``entries`` maps perturbation size n (strictly increasing, >= 1) to
    the enclosure produced by interval training at that n, all runs
    sharing the same data, initialisation and schedule.
    """

    entries: tuple[tuple[int, ParamIntervals], ...]

    def __post_init__(self):
        ns = [n for n, _ in self.entries]
        if not ns:
            raise ValueError("empty ladder")
        if any(n < 1 for n in ns) or any(a >= b for a, b in zip(ns, ns[1:])):
            raise ValueError("ladder sizes must be strictly increasing and >= 1")

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(n for n, _ in self.entries)


def max_stable_n(
    ladder: StabilityLadder, nominal: Params, x, method: str = "ibp"
) -> int:
    """Largest ladder size whose enclosure still certifies x as stable.

    Returns 0 when even the smallest rung fails.  The scan is linear and
    does not assume monotonicity, although nested enclosures make the
    holds-set an initial segment in practice.
    """
    best = 0
    for n, pi in ladder.entries:
        if certify_stable(pi, nominal, x, method):
            best = n
    return best


def smooth_sensitivity_bound(n_prime: int, beta: float) -> float:
    """Upper bound exp(-beta * n') on the beta-smooth sensitivity of a
    prediction whose output is stable to every n'-fold substitution.

    The classifier output lies in [0, 1], so its global sensitivity is 1;
    a point certified stable at distance n' therefore has local
    sensitivity 0 up to n' substitutions away, giving the exponential
    decay bound.
    """
    if n_prime < 0:
        raise ValueError("n_prime must be nonnegative")
    if not beta > 0:
        raise ValueError("beta must be positive")
    return float(math.exp(-beta * n_prime))


@dataclass(frozen=True)
class PrivacyParams:
    """(epsilon, delta) target with the smoothing parameter beta.

    beta must not exceed epsilon / 6, the admissibility condition of the
    Cauchy smooth-sensitivity mechanism.
    """

    epsilon: float
    delta: float
    beta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must be in [0, 1)")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.beta > self.epsilon / 6.0:
            raise ValueError("beta must satisfy beta <= epsilon / 6")


def noise_scale(
    ss_bound: float, pp: PrivacyParams, mechanism: str
) -> float:
    """Noise scale calibrating the named mechanism to the privacy target.

    ``laplace_global`` calibrates to the global sensitivity of a
    [0, 1]-valued response (scale 1/epsilon, ignores ``ss_bound``);
    ``cauchy_smooth`` calibrates to a beta-smooth sensitivity bound
    (scale 6 * ss / epsilon, requiring beta <= epsilon / 6).
    """
    if ss_bound < 0:
        raise ValueError("ss_bound must be nonnegative")
    if mechanism == "laplace_global":
        return 1.0 / pp.epsilon
    if mechanism == "cauchy_smooth":
        if pp.beta > pp.epsilon / 6.0:
            raise ValueError("cauchy mechanism requires beta <= epsilon / 6")
        return 6.0 * ss_bound / pp.epsilon
    raise ValueError(f"unknown mechanism {mechanism!r}")


def _noise_from_uniform(u, scale: float, mechanism: str):
    """Inverse-CDF transform of uniform draws for the supported mechanisms."""
    u = np.asarray(u, dtype=np.float64)
    if mechanism == "laplace_global":
        return np.where(
            u < 0.5,
            scale * np.log(2.0 * u),
            -scale * np.log(2.0 * (1.0 - u)),
        )
    if mechanism == "cauchy_smooth":
        return scale * np.tan(np.pi * (u - 0.5))
    raise ValueError(f"unknown mechanism {mechanism!r}")


def private_predict(
    score: float, scale: float, mechanism: str, seed: int
) -> int:
    """Randomised binary response: 1 iff score + noise > 1/2.

    ``score`` is the model's [0, 1]-valued output for the query point.
    The noise is drawn by inverse-CDF transform of a single uniform
    variate, so a fixed seed gives a reproducible response.
    """
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    if scale == 0.0:
        return int(score > 0.5)
    u = np.random.Generator(np.random.PCG64(seed)).random()
    z = float(_noise_from_uniform(u, scale, mechanism))
    return int(score + z > 0.5)
