"""Interval bound propagation through network forward and backward passes.

Given a box of parameters (one interval per weight and bias) and boxes on
the input and the training label, these routines compute sound elementwise
enclosures of every quantity a training step touches: activations, logits,
loss gradients and per-sample parameter gradients.  Soundness means: for
every pointwise choice of parameters, input and admissible label from
their boxes, the exact value lies inside the returned enclosure.

Two forward modes are available: plain interval propagation (``ibp``) and
a backward linear relaxation in the CROWN style (``crown``) that composes
interval-valued affine layers with relaxed ReLUs.  The backward
(gradient) pass always uses the interval activations from the plain
forward pass; the crown mode only sharpens the logit box fed into the
loss-gradient rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .intervals import IntervalTensor, scale_columns
from .nn import LossKind, Params

__all__ = [
    "CrownState",
    "GradBoundsSample",
    "IntervalTrace",
    "ParamIntervals",
    "SampleBoundDetails",
    "crown_forward",
    "hinge_margin_interval",
    "interval_backward",
    "interval_forward",
    "loss_grad_interval",
    "per_sample_grad_bounds",
]


@dataclass(frozen=True)
class ParamIntervals:
    """A box of network parameters: one IntervalTensor per layer slot."""

    weights: tuple[IntervalTensor, ...]
    biases: tuple[IntervalTensor, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for w, b in zip(self.weights, self.biases):
            if w.lo.ndim != 2 or b.lo.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError("layer shape mismatch")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @staticmethod
    def degenerate(params: Params) -> "ParamIntervals":
        return ParamIntervals(
            tuple(IntervalTensor.point(w) for w in params.weights),
            tuple(IntervalTensor.point(b) for b in params.biases),
        )

    def contains(self, params: Params, tol: float = 0.0) -> bool:
        return all(
            iv.contains(arr, tol)
            for iv, arr in zip(
                self.weights + self.biases, params.weights + params.biases
            )
        )

    def max_violation(self, params: Params) -> float:
        """Largest distance by which a parameter escapes its box (0 if inside)."""
        worst = 0.0
        for iv, arr in zip(
            self.weights + self.biases, params.weights + params.biases
        ):
            below = np.max(iv.lo - arr, initial=0.0)
            above = np.max(arr - iv.hi, initial=0.0)
            worst = max(worst, float(below), float(above))
        return worst

    def width_l1(self) -> float:
        return sum(iv.width_l1() for iv in self.weights + self.biases)

    def is_degenerate(self) -> bool:
        return all(iv.is_degenerate() for iv in self.weights + self.biases)

    def clip(self, kappa: float) -> "ParamIntervals":
        return ParamIntervals(
            tuple(w.clip(kappa) for w in self.weights),
            tuple(b.clip(kappa) for b in self.biases),
        )

    def step(self, descent: "ParamIntervals", alpha: float) -> "ParamIntervals":
        """Interval SGD update: theta - alpha * descent, per layer slot."""
        return ParamIntervals(
            tuple(
                w.sub(d.scale(alpha))
                for w, d in zip(self.weights, descent.weights)
            ),
            tuple(
                b.sub(d.scale(alpha))
                for b, d in zip(self.biases, descent.biases)
            ),
        )

    def encloses(self, other: "ParamIntervals", tol: float = 0.0) -> bool:
        return all(
            a.encloses(b, tol)
            for a, b in zip(
                self.weights + self.biases, other.weights + other.biases
            )
        )

    def midpoint(self) -> Params:
        return Params(
            tuple(w.mid for w in self.weights),
            tuple(b.mid for b in self.biases),
        )


# descent-direction boxes share the Params-shaped interval container
DescentBounds = ParamIntervals


@dataclass(frozen=True)
class IntervalTrace:
    """Interval version of :class:`traincert.nn.ForwardTrace`."""

    pre: tuple[IntervalTensor, ...]
    post: tuple[IntervalTensor, ...]

    @property
    def logits(self) -> IntervalTensor:
        return self.pre[-1]


def interval_forward(pi: ParamIntervals, x_iv: IntervalTensor) -> IntervalTrace:
    """Propagate input and parameter boxes through the network."""
    if x_iv.lo.ndim != 1:
        raise ValueError("expected a 1-d input box")
    depth = pi.depth
    pre = []
    post = [x_iv]
    z = x_iv
    for k in range(depth):
        zhat = pi.weights[k].matmul(z).add(pi.biases[k])
        pre.append(zhat)
        z = zhat.map_monotone("relu") if k < depth - 1 else zhat
        post.append(z)
    return IntervalTrace(tuple(pre), tuple(post))


# ---------------------------------------------------------------------------
# CROWN-style backward substitution with interval coefficients


@dataclass(frozen=True)
class CrownState:
    """Result of one backward linear-relaxation pass.

    ``logits`` is the output enclosure.  ``input_coeff`` is the interval
    matrix A such that the logits lie in ``A x + bias_term`` for every
    admissible parameter choice; ``slopes``/``intercepts`` record the
    ReLU relaxation used at each hidden layer (entry k applies to the
    k-th pre-activation).
    """

    logits: IntervalTensor
    input_coeff: IntervalTensor
    bias_term: IntervalTensor
    slopes: tuple[IntervalTensor, ...]
    intercepts: tuple[IntervalTensor, ...]


def _relu_relaxation(bounds: IntervalTensor) -> tuple[IntervalTensor, IntervalTensor]:
    """Interval slope and intercept enclosing relu over the given box.

    For a crossing neuron with pre-activation in [l, u] the upper line has
    slope u/(u-l) and intercept -l*u/(u-l); the lower line passes through
    the origin with slope 0 when |l| >= |u| and slope 1 otherwise.  Any
    point of relu between the two lines is a convex combination of them,
    so relu(x) = d*x + e with d in the slope hull and e in [0, intercept].
    Stable neurons use the exact line (slope 0 or 1, intercept 0).
    """
    l, u = bounds.lo, bounds.hi
    crossing = (l < 0.0) & (u > 0.0)
    active = l >= 0.0
    denom = np.where(crossing, u - l, 1.0)
    upper_slope = np.where(crossing, u / denom, 0.0)
    upper_icept = np.where(crossing, -l * u / denom, 0.0)
    lower_slope = np.where(np.abs(l) >= np.abs(u), 0.0, 1.0)
    slope_lo = np.where(
        crossing, np.minimum(lower_slope, upper_slope), np.where(active, 1.0, 0.0)
    )
    slope_hi = np.where(
        crossing, np.maximum(lower_slope, upper_slope), np.where(active, 1.0, 0.0)
    )
    icept_hi = np.where(crossing, upper_icept, 0.0)
    return (
        IntervalTensor(slope_lo, slope_hi),
        IntervalTensor(np.zeros_like(icept_hi), icept_hi),
    )


def crown_forward(
    pi: ParamIntervals, x_iv: IntervalTensor, trace: IntervalTrace | None = None
) -> CrownState:
    """Logit enclosure by backward substitution through interval layers.

    Starting from an identity coefficient on the logits, each step
    substitutes the affine layer (interval weights) and the diagonal ReLU
    relaxation (interval slope and intercept derived from the plain
    interval forward bounds).  All products are interval products, which
    keeps the substitution sound when weight signs are ambiguous.
    """
    if trace is None:
        trace = interval_forward(pi, x_iv)
    depth = pi.depth
    n_out = pi.weights[-1].shape[0]
    eye = np.eye(n_out)
    coeff = IntervalTensor(eye, eye)            # coefficient on pre[k]
    bias = IntervalTensor.point(np.zeros(n_out))
    slopes = []
    intercepts = []
    for k in range(depth - 1, 0, -1):
        # pre[k] = W[k] @ post[k] + b[k]; post[k] = relu(pre[k-1])
        m = coeff.matmul(pi.weights[k])
        bias = bias.add(coeff.matmul(pi.biases[k]))
        slope, icept = _relu_relaxation(trace.pre[k - 1])
        slopes.append(slope)
        intercepts.append(icept)
        bias = bias.add(m.matmul(icept))
        coeff = scale_columns(m, slope)
    input_coeff = coeff.matmul(pi.weights[0])
    bias = bias.add(coeff.matmul(pi.biases[0]))
    logits = input_coeff.matmul(x_iv).add(bias)
    return CrownState(
        logits=logits,
        input_coeff=input_coeff,
        bias_term=bias,
        slopes=tuple(reversed(slopes)),
        intercepts=tuple(reversed(intercepts)),
    )


# ---------------------------------------------------------------------------
# loss gradients


def hinge_margin_interval(
    logits_iv: IntervalTensor, target_iv: IntervalTensor
) -> IntervalTensor:
    """Enclosure of the hinge margin 1 - y * logit."""
    one = IntervalTensor.point(np.ones(logits_iv.shape))
    return one.sub(target_iv.elemmul(logits_iv))


def loss_grad_interval(
    logits_iv: IntervalTensor, target_iv: IntervalTensor, loss: LossKind
) -> IntervalTensor:
    """Enclosure of the loss gradient w.r.t. the logits.

    ``target_iv`` is the box of admissible encoded labels: degenerate for
    a trusted label, or the hull of the admissible perturbed labels.
    """
    if loss is LossKind.SQUARED_ERROR:
        return logits_iv.sub(target_iv).scale(2.0)
    if loss is LossKind.BINARY_CROSS_ENTROPY:
        _require_single(logits_iv)
        return logits_iv.map_monotone("sigmoid").sub(target_iv)
    if loss is LossKind.CROSS_ENTROPY:
        if logits_iv.shape[0] < 2:
            raise ValueError("cross-entropy needs >= 2 logits")
        return _softmax_bounds(logits_iv).sub(target_iv)
    if loss is LossKind.HINGE:
        _require_single(logits_iv)
        margin = hinge_margin_interval(logits_iv, target_iv)
        neg_target = target_iv.scale(-1.0)
        if float(margin.hi[0]) <= 0.0:
            zero = np.zeros(1)
            return IntervalTensor(zero, zero)
        if float(margin.lo[0]) > 0.0:
            return neg_target
        # margin sign is ambiguous: gradient is 0 or -y
        return IntervalTensor(
            np.minimum(neg_target.lo, 0.0), np.maximum(neg_target.hi, 0.0)
        )
    raise ValueError(f"unknown loss {loss}")


def _require_single(iv: IntervalTensor) -> None:
    if iv.shape != (1,):
        raise ValueError("this loss expects a single output logit")


def _softmax_bounds(logits_iv: IntervalTensor) -> IntervalTensor:
    """Elementwise softmax probability bounds from logit bounds.

    p_i is bounded below by 1/(1 + sum_{j!=i} exp(hi_j - lo_i)) and above
    by 1/(1 + sum_{j!=i} exp(lo_j - hi_i)).  Logits are shifted by the
    maximum upper endpoint first; softmax is shift-invariant so this is
    sound, and it keeps the exponentials from overflowing.  Loop order
    mirrors :func:`traincert.nn.softmax_probs` so degenerate boxes
    reproduce the nominal probabilities exactly.
    """
    c = np.max(logits_iv.hi)
    z_lo = logits_iv.lo - c
    z_hi = logits_iv.hi - c
    n = z_lo.shape[0]
    p_lo = np.empty(n)
    p_hi = np.empty(n)
    for i in range(n):
        acc_hi = 0.0
        acc_lo = 0.0
        for j in range(n):
            if j != i:
                acc_hi += np.exp(z_hi[j] - z_lo[i])
                acc_lo += np.exp(z_lo[j] - z_hi[i])
        p_lo[i] = 1.0 / (1.0 + acc_hi)
        p_hi[i] = 1.0 / (1.0 + acc_lo)
    return IntervalTensor(p_lo, p_hi)


# ---------------------------------------------------------------------------
# backward pass


@dataclass(frozen=True)
class GradBoundsSample:
    """Per-sample gradient enclosure; ``poisoned`` additionally accounts
    for the sample's own admissible perturbation (input and label hulls)."""

    grads: ParamIntervals
    poisoned: ParamIntervals | None = None


@dataclass(frozen=True)
class SampleBoundDetails:
    """Every intermediate enclosure of one per-sample bound computation.

    ``d_pre[k]`` bounds the loss gradient w.r.t. the k-th pre-activation,
    ``d_post[k]`` w.r.t. the k-th post-activation (``d_post[0]`` is None;
    the input gradient is never needed).  ``margin`` is only set for the
    hinge loss.
    """

    trace: IntervalTrace
    logits: IntervalTensor
    grad_logits: IntervalTensor
    d_pre: tuple[IntervalTensor, ...]
    d_post: tuple[IntervalTensor | None, ...]
    grads: ParamIntervals
    margin: IntervalTensor | None = None


def interval_backward(
    pi: ParamIntervals, trace: IntervalTrace, grad_logits_iv: IntervalTensor
) -> tuple[ParamIntervals, tuple, tuple]:
    """Backpropagate an interval logit gradient to parameter gradients.

    Mirrors :func:`traincert.nn.backward` in interval arithmetic: the
    ReLU derivative is the Heaviside image of the pre-activation box, and
    weight gradients are interval outer products (exact, since no
    summation is involved).  Returns gradient boxes plus the per-layer
    pre- and post-activation gradient boxes.
    """
    depth = pi.depth
    gw: list[IntervalTensor | None] = [None] * depth
    gb: list[IntervalTensor | None] = [None] * depth
    d_pre: list[IntervalTensor | None] = [None] * depth
    d_post: list[IntervalTensor | None] = [None] * depth
    dhat = grad_logits_iv
    for k in range(depth - 1, -1, -1):
        d_pre[k] = dhat
        n = dhat.shape[0]
        m = trace.post[k].shape[0]
        gw[k] = dhat.reshape(n, 1).matmul(trace.post[k].reshape(1, m))
        gb[k] = dhat
        if k > 0:
            dz = pi.weights[k].T.matmul(dhat)
            d_post[k] = dz
            dhat = trace.pre[k - 1].map_monotone("heaviside").elemmul(dz)
    grads = ParamIntervals(tuple(gw), tuple(gb))
    return grads, tuple(d_pre), tuple(d_post)


def per_sample_grad_bounds(
    pi: ParamIntervals,
    x_iv: IntervalTensor,
    target_iv: IntervalTensor,
    loss: LossKind,
    method: str = "ibp",
) -> ParamIntervals:
    """Enclosure of one sample's parameter gradient.

    ``method`` selects how the logits are bounded: plain interval
    propagation (``ibp``) or the backward linear relaxation (``crown``).
    The gradient pass itself always uses the interval activations.
    """
    return sample_bound_details(pi, x_iv, target_iv, loss, method).grads


def sample_bound_details(
    pi: ParamIntervals,
    x_iv: IntervalTensor,
    target_iv: IntervalTensor,
    loss: LossKind,
    method: str = "ibp",
) -> SampleBoundDetails:
    """Like :func:`per_sample_grad_bounds` but keeps all intermediates."""
    if method not in ("ibp", "crown"):
        raise ValueError(f"unknown forward method {method!r}")
    trace = interval_forward(pi, x_iv)
    if method == "crown":
        logits_iv = crown_forward(pi, x_iv, trace).logits
    else:
        logits_iv = trace.logits
    grad_logits = loss_grad_interval(logits_iv, target_iv, loss)
    margin = (
        hinge_margin_interval(logits_iv, target_iv)
        if loss is LossKind.HINGE
        else None
    )
    grads, d_pre, d_post = interval_backward(pi, trace, grad_logits)
    return SampleBoundDetails(
        trace=trace,
        logits=logits_iv,
        grad_logits=grad_logits,
        d_pre=d_pre,
        d_post=d_post,
        grads=grads,
        margin=margin,
    )
