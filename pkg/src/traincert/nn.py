"""Fully connected ReLU networks, losses and plain SGD.

This is the concrete (point-valued) training path.  The interval code in
:mod:`traincert.boundprop` mirrors every formula here operation for
operation; several implementation choices below (shared activation
helpers, the reciprocal form of softmax, summing per-sample gradients
before dividing by the batch size) exist so that interval computations on
degenerate inputs reproduce these results bit for bit.

Conventions:

* ``Architecture.layer_sizes = (n_0, ..., n_K)`` describes K affine
  layers; hidden layers use ReLU, the output layer is affine.
* binary labels are canonically {0, 1}; :func:`encode_label` converts to
  the representation a loss consumes (hinge uses -1/+1, cross-entropy a
  one-hot vector).
* hinge and binary cross-entropy expect a single output logit;
  cross-entropy expects at least two.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .intervals import heaviside, relu, sigmoid

__all__ = [
    "Architecture",
    "ForwardTrace",
    "LossKind",
    "Params",
    "TrainConfig",
    "backward",
    "encode_label",
    "fixed_order_mean",
    "forward",
    "init_params",
    "loss_grad",
    "loss_value",
    "params_flatten",
    "params_unflatten",
    "sgd_step",
    "softmax_probs",
    "train_nominal",
]


class LossKind(enum.Enum):
    SQUARED_ERROR = "squared_error"
    BINARY_CROSS_ENTROPY = "binary_cross_entropy"
    CROSS_ENTROPY = "cross_entropy"
    HINGE = "hinge"


@dataclass(frozen=True)
class Architecture:
    """Layer sizes (n_0, ..., n_K) of a fully connected ReLU network."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError("architecture needs >= 2 layer sizes, all >= 1")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def depth(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]


@dataclass(frozen=True)
class Params:
    """Weights and biases, one pair per affine layer."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError("layer shape mismatch")

    @property
    def depth(self) -> int:
        return len(self.weights)

    def architecture(self) -> Architecture:
        sizes = [self.weights[0].shape[1]]
        sizes += [w.shape[0] for w in self.weights]
        return Architecture(tuple(sizes))

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one fixed training run.

    ``alpha`` is the base learning rate and ``eta`` the decay coefficient
    of the schedule ``alpha / (1 + eta * t)`` with t counting completed
    iterations (the first update uses exactly ``alpha``).  ``clip_kappa``
    enables elementwise gradient truncation to [-kappa, kappa] before the
    batch average; it must be set when training is analysed under the
    substitution perturbation model.
    """

    alpha: float
    batch_size: int
    epochs: int
    loss: LossKind
    eta: float = 0.0
    clip_kappa: float | None = None
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.clip_kappa is not None and not self.clip_kappa > 0:
            raise ValueError("clip_kappa must be positive when set")
        if self.init_scale < 0:
            raise ValueError("init_scale must be nonnegative")

    def with_(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


def lr_at(cfg: TrainConfig, t: int) -> float:
    """Learning rate used by the update after t completed iterations."""
    if t < 0:
        raise ValueError("iteration index must be nonnegative")
    return cfg.alpha / (1.0 + cfg.eta * t)


@dataclass(frozen=True)
class ForwardTrace:
    """Pre- and post-activation values of one forward pass.

    ``post[0]`` is the input; ``pre[k]`` and ``post[k]`` for k >= 1 are
    the k-th layer pre-activation and activation.  The final entry of
    ``pre`` holds the logits (the output layer applies no activation).
    """

    pre: tuple[np.ndarray, ...]
    post: tuple[np.ndarray, ...]

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]


def init_params(arch: Architecture, seed: int, init_scale: float = 1.0) -> Params:
    """Deterministic uniform init: W ~ U(-s/sqrt(fan_in), s/sqrt(fan_in)), b = 0."""
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = []
    biases = []
    sizes = arch.layer_sizes
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = init_scale / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return Params(tuple(weights), tuple(biases))


def forward(params: Params, x: np.ndarray) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    pre = []
    post = [x]
    z = x
    depth = params.depth
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        zhat = w @ z + b
        pre.append(zhat)
        z = relu(zhat) if k < depth - 1 else zhat
        post.append(z)
    return ForwardTrace(tuple(pre), tuple(post))


def encode_label(y, loss: LossKind, n_outputs: int):
    """Convert a canonical label to the representation the loss consumes."""
    if loss is LossKind.HINGE:
        y = int(y)
        if y not in (0, 1):
            raise ValueError("hinge expects binary labels in {0, 1}")
        return np.array([2.0 * y - 1.0])
    if loss is LossKind.BINARY_CROSS_ENTROPY:
        y = float(y)
        if not (0.0 <= y <= 1.0):
            raise ValueError("binary cross-entropy expects labels in [0, 1]")
        return np.array([y])
    if loss is LossKind.CROSS_ENTROPY:
        y = int(y)
        if not (0 <= y < n_outputs):
            raise ValueError("class index out of range")
        onehot = np.zeros(n_outputs)
        onehot[y] = 1.0
        return onehot
    if loss is LossKind.SQUARED_ERROR:
        arr = np.atleast_1d(np.asarray(y, dtype=np.float64))
        if arr.shape != (n_outputs,):
            raise ValueError("squared error target shape mismatch")
        return arr
    raise ValueError(f"unknown loss {loss}")


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Softmax via the pairwise-difference reciprocal form.

    p_i = 1 / (1 + sum_{j != i} exp(z_j - z_i)), evaluated after shifting
    by the maximum logit.  This mirrors the interval bound computation so
    that degenerate interval enclosures reproduce these values exactly.
    """
    z = logits - np.max(logits)
    n = z.shape[0]
    p = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            if j != i:
                acc += np.exp(z[j] - z[i])
        p[i] = 1.0 / (1.0 + acc)
    return p


def loss_grad(logits: np.ndarray, target: np.ndarray, loss: LossKind) -> np.ndarray:
    """Gradient of the per-sample loss with respect to the logits.

    ``target`` must already be encoded via :func:`encode_label`.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if loss is LossKind.SQUARED_ERROR:
        return 2.0 * (logits - target)
    if loss is LossKind.BINARY_CROSS_ENTROPY:
        _require_single_logit(logits)
        return sigmoid(logits) - target
    if loss is LossKind.CROSS_ENTROPY:
        if logits.shape[0] < 2:
            raise ValueError("cross-entropy needs >= 2 logits")
        return softmax_probs(logits) - target
    if loss is LossKind.HINGE:
        _require_single_logit(logits)
        margin = 1.0 - target * logits
        # subgradient 0 at the kink
        return np.where(margin > 0.0, -target, 0.0)
    raise ValueError(f"unknown loss {loss}")


def loss_value(logits: np.ndarray, target: np.ndarray, loss: LossKind) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if loss is LossKind.SQUARED_ERROR:
        d = logits - target
        return float(np.sum(d * d))
    if loss is LossKind.BINARY_CROSS_ENTROPY:
        _require_single_logit(logits)
        z, y = float(logits[0]), float(target[0])
        # stable logit form of -[y log s + (1-y) log(1-s)]
        return float(max(z, 0.0) - z * y + np.log1p(np.exp(-abs(z))))
    if loss is LossKind.CROSS_ENTROPY:
        t = int(np.argmax(target))
        z = logits - np.max(logits)
        acc = 0.0
        for j in range(z.shape[0]):
            if j != t:
                acc += np.exp(z[j] - z[t])
        return float(np.log1p(acc))
    if loss is LossKind.HINGE:
        _require_single_logit(logits)
        return float(max(0.0, 1.0 - float(target[0]) * float(logits[0])))
    raise ValueError(f"unknown loss {loss}")


def _require_single_logit(logits: np.ndarray) -> None:
    if logits.shape != (1,):
        raise ValueError("this loss expects a single output logit")


def backward(params: Params, trace: ForwardTrace, grad_logits: np.ndarray) -> Params:
    """Per-sample parameter gradient by backpropagation.

    Returns a Params-shaped container of gradients.
    """
    depth = params.depth
    d_weights: list[np.ndarray | None] = [None] * depth
    d_biases: list[np.ndarray | None] = [None] * depth
    dhat = np.asarray(grad_logits, dtype=np.float64)
    for k in range(depth - 1, -1, -1):
        d_weights[k] = np.outer(dhat, trace.post[k])
        d_biases[k] = dhat
        if k > 0:
            dz = params.weights[k].T @ dhat
            dhat = heaviside(trace.pre[k - 1]) * dz
    return Params(tuple(d_weights), tuple(d_biases))


def fixed_order_mean(stack: np.ndarray) -> np.ndarray:
    """Mean over axis 0, summing in index order before one division.

    Both the nominal SGD step and the interval aggregation code use this
    helper so that a zero-perturbation interval run reproduces nominal
    training bit for bit.
    """
    return np.sum(stack, axis=0) / stack.shape[0]


def sgd_step(
    params: Params,
    sample_grads: list[Params],
    alpha_t: float,
    clip_kappa: float | None = None,
) -> Params:
    """One SGD update from per-sample gradients.

    Gradients are optionally clipped elementwise to [-kappa, kappa], then
    averaged in fixed order, then applied: theta - alpha_t * mean.
    """
    if not sample_grads:
        raise ValueError("empty batch")
    if not alpha_t > 0:
        raise ValueError("alpha_t must be positive")
    new_w = []
    new_b = []
    for k in range(params.depth):
        w_stack = np.stack([g.weights[k] for g in sample_grads])
        b_stack = np.stack([g.biases[k] for g in sample_grads])
        if clip_kappa is not None:
            w_stack = np.clip(w_stack, -clip_kappa, clip_kappa)
            b_stack = np.clip(b_stack, -clip_kappa, clip_kappa)
        new_w.append(params.weights[k] - alpha_t * fixed_order_mean(w_stack))
        new_b.append(params.biases[k] - alpha_t * fixed_order_mean(b_stack))
    return Params(tuple(new_w), tuple(new_b))


def sample_gradient(
    params: Params, x: np.ndarray, y, loss: LossKind
) -> Params:
    """Forward + backward for one sample with a canonical label."""
    trace = forward(params, x)
    target = encode_label(y, loss, trace.logits.shape[0])
    return backward(params, trace, loss_grad(trace.logits, target, loss))


def train_nominal(
    features: np.ndarray,
    labels: np.ndarray,
    arch: Architecture,
    cfg: TrainConfig,
    schedule,
) -> list[Params]:
    """Run plain SGD over a fixed batch schedule; returns all iterates.

    ``schedule`` is a sequence of index arrays (see
    :func:`traincert.training.make_schedule`).  Batches are taken as
    given, so callers may pre-filter indices (e.g. to retrain with
    samples removed).
    """
    params = init_params(arch, cfg.seed, cfg.init_scale)
    trajectory = [params]
    for t, batch in enumerate(schedule):
        if len(batch) == 0:
            raise ValueError(f"empty batch at iteration {t + 1}")
        grads = [
            sample_gradient(params, features[i], labels[i], cfg.loss)
            for i in batch
        ]
        params = sgd_step(params, grads, lr_at(cfg, t), cfg.clip_kappa)
        trajectory.append(params)
    return trajectory


# -- flat parameter vector helpers -------------------------------------------
# order: per layer ascending, weights row-major then bias


def params_flatten(params: Params) -> np.ndarray:
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def params_unflatten(vector: np.ndarray, arch: Architecture) -> Params:
    vector = np.asarray(vector, dtype=np.float64)
    weights = []
    biases = []
    pos = 0
    sizes = arch.layer_sizes
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weights.append(vector[pos : pos + n_out * n_in].reshape(n_out, n_in))
        pos += n_out * n_in
        biases.append(vector[pos : pos + n_out])
        pos += n_out
    if pos != vector.size:
        raise ValueError("vector length does not match architecture")
    return Params(tuple(weights), tuple(biases))
