"""Mixed-integer encodings of the training dynamics.

``encode_training`` turns a window of SGD iterations into a constraint
system whose feasible points are exactly (for the MIQCP form) the
trajectories reachable under the chosen perturbation model: poison
selector binaries, Big-M ReLU logic, bilinear backward-pass rows and
per-iteration parameter-update rows.  Relaxations replace bilinear terms
with McCormick envelopes (milp), binaries with [0,1] boxes (qcp), or
both (lp).  Solving is out of scope; systems are emitted as LP files and
validated by evaluating concrete trajectories against every row.

All intermediate variable bounds and Big-M constants come from interval
bound propagation under the window's parameter enclosures, so no
enumerated trajectory can ever bind a Big-M row spuriously.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .aggregation import (
    bounded_descent_bounds,
    removal_descent_bounds,
    sum_largest,
    sum_smallest,
)
from .boundprop import GradBoundsSample, ParamIntervals, sample_bound_details
from .errors import ConfigError
from .intervals import IntervalTensor
from .lp_io import (
    BINARY,
    CONTINUOUS,
    ConstraintSystem,
    LinearConstraint,
    SystemBuilder,
    SystemMetadata,
    complete_assignment,
)
from .nn import (
    Architecture,
    LossKind,
    Params,
    TrainConfig,
    encode_label,
    forward,
    heaviside,
    loss_grad,
    lr_at,
)
from .training import (
    BatchSchedule,
    BoundedPerturbation,
    PerturbationModel,
    Removal,
    Substitution,
    input_hull,
    make_schedule,
    target_hull,
)

__all__ = [
    "EncodeOptions",
    "Face",
    "ParamMax",
    "ParamMin",
    "SystemSize",
    "TrainingEncoder",
    "encode_training",
    "estimate_system_size",
    "mccormick",
    "rolling_horizon_plan",
]

RELAXATIONS = ("miqcp", "milp", "qcp", "lp")


@dataclass(frozen=True)
class ParamMin:
    """Minimize one flattened parameter coordinate at the window end."""

    index: int


@dataclass(frozen=True)
class ParamMax:
    index: int


@dataclass(frozen=True)
class Face:
    """Maximize a linear functional of the final parameters.

    The direction is normalized to unit Euclidean length so polytope
    faces are scale-free.
    """

    direction: tuple[float, ...]

    def __post_init__(self):
        vec = np.asarray(self.direction, dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if not math.isfinite(norm) or norm == 0.0:
            raise ValueError("face direction must be finite and nonzero")
        object.__setattr__(self, "direction", tuple(float(v) for v in vec / norm))


ObjectiveSpec = ParamMin | ParamMax | Face


@dataclass(frozen=True)
class EncodeOptions:
    relaxation: str = "miqcp"
    horizon_w: int = 1
    step_p: int = 1
    bigM_margin: float = 1.0
    objective: ObjectiveSpec = ParamMin(0)

    def __post_init__(self):
        if self.relaxation not in RELAXATIONS:
            raise ConfigError(f"unknown relaxation {self.relaxation!r}")
        if not 1 <= self.step_p <= self.horizon_w:
            raise ConfigError("need 1 <= step_p <= horizon_w")
        if not self.bigM_margin > 0:
            raise ConfigError("bigM_margin must be positive")


def rolling_horizon_plan(T: int, w: int, p: int) -> list[tuple[int, int]]:
    """Window starts advance by p, each window spans w iterations.

    Windows are [0,w], [p,p+w], ..., clipped at T; consecutive windows
    chain through the seed interval produced at each window's end.
    """
    if not 1 <= p <= w <= T:
        raise ConfigError("need 1 <= p <= w <= T")
    windows = []
    t0 = 0
    while True:
        t1 = min(t0 + w, T)
        windows.append((t0, t1))
        if t1 >= T:
            return windows
        t0 += p


def mccormick(
    term: tuple[str, str, str],
    bounds: tuple[float, float, float, float],
    prefix: str,
) -> tuple[LinearConstraint, ...]:
    """The four envelope rows for product_var = a * b on a bound box.

    Exact (zero gap) whenever one factor has degenerate bounds; any true
    product point satisfies all four rows.
    """
    a, b, w = term
    aL, aU, bL, bU = (float(v) for v in bounds)
    if a == b:
        raise ValueError("square terms are not supported")
    if not all(math.isfinite(v) for v in (aL, aU, bL, bU)):
        raise ValueError("McCormick requires finite factor bounds")
    if aL > aU or bL > bU:
        raise ValueError("invalid factor bounds")
    return (
        LinearConstraint(
            f"{prefix}_ll", ((1.0, w), (-aL, b), (-bL, a)), ">=", -aL * bL
        ),
        LinearConstraint(
            f"{prefix}_uu", ((1.0, w), (-aU, b), (-bU, a)), ">=", -aU * bU
        ),
        LinearConstraint(
            f"{prefix}_ul", ((1.0, w), (-aU, b), (-bL, a)), "<=", -aU * bL
        ),
        LinearConstraint(
            f"{prefix}_lu", ((1.0, w), (-aL, b), (-bU, a)), "<=", -aL * bU
        ),
    )


# ---------------------------------------------------------------------------
# variable naming
#
# theta_t{t}_l{k}_i{i}_j{j}   weight (layer k, row i, column j), 1-based k
# theta_t{t}_l{k}_i{i}_bias   bias
# s_{i}                       poison / removal selector for dataset sample i
# f_{i}                       label-flip selector when features also move
# x_s{i}_n{j}                 perturbed input feature
# ytil_s{i}                   perturbed encoded label
# z / zhat / r / dz / dzhat   activations and their gradients, per
#                             (iteration t, sample s or slot q, layer l)
# gw_t{t}_s{i}_l{k}_i{r}_j{c} per-sample weight gradient (bias gradients
#                             alias dzhat and get no variable)
# a_t{t}_m{q}, xs/ys_...      substitution slot selector, features, label


def _w_name(t, k, i, j):
    return f"theta_t{t}_l{k}_i{i}_j{j}"


def _b_name(t, k, i):
    return f"theta_t{t}_l{k}_i{i}_bias"


class TrainingEncoder:
    """Builds constraint systems for one training run's windows.

    The encoder owns the dataset, schedule and perturbation model, so it
    can both encode windows and mechanically translate concrete
    retraining trajectories into candidate assignments.

    Gradient clipping has no exact mixed-integer form and is rejected;
    cross-entropy cannot be encoded exactly (its gradient is not
    piecewise polynomial), leaving squared error and hinge.
    """

    def __init__(
        self,
        features: np.ndarray,
        labels: np.ndarray,
        arch: Architecture,
        cfg: TrainConfig,
        pm: PerturbationModel,
        opts: EncodeOptions,
        schedule: BatchSchedule | None = None,
    ):
        if cfg.loss not in (LossKind.SQUARED_ERROR, LossKind.HINGE):
            raise ConfigError(f"loss {cfg.loss.value} cannot be encoded exactly")
        if cfg.clip_kappa is not None:
            raise ConfigError("clipped updates cannot be encoded")
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels)
        self.arch = arch
        self.cfg = cfg
        self.pm = pm
        self.opts = opts
        self.schedule = schedule or make_schedule(
            self.features.shape[0], cfg.batch_size, cfg.epochs, cfg.seed
        )
        self.n_outputs = arch.n_outputs
        if isinstance(pm, BoundedPerturbation):
            probe = target_hull(self.labels[0], cfg.loss, self.n_outputs, pm)
            self.label_perturbed = probe is not None
            self.feature_perturbed = pm.epsilon > 0.0
        else:
            self.label_perturbed = False
            self.feature_perturbed = False
        # substitute points live in the observed feature box inflated 10%
        if isinstance(pm, Substitution):
            if self.n_outputs != 1:
                raise ConfigError("substitution encoding needs a single output")
            lo = self.features.min(axis=0)
            hi = self.features.max(axis=0)
            pad = 0.1 * np.maximum(hi - lo, 1.0)
            self.sub_domain = IntervalTensor(lo - pad, hi + pad)
            targets = np.stack(
                [
                    encode_label(y, cfg.loss, self.n_outputs)
                    for y in np.unique(self.labels)
                ]
            )
            self.sub_labels = IntervalTensor(
                targets.min(axis=0), targets.max(axis=0)
            )
        else:
            self.sub_domain = None
            self.sub_labels = None

    # -- interval groundwork -------------------------------------------------

    def _window_bounds(self, window, seed_interval):
        """Parameter enclosures and per-sample IBP details for the window."""
        t0, t1 = window
        if not 0 <= t0 < t1 <= len(self.schedule):
            raise ConfigError(f"window {window} outside 0..{len(self.schedule)}")
        pis = {t0: seed_interval}
        details = {}
        slot_details = {}
        pi = seed_interval
        for t in range(t0 + 1, t1 + 1):
            batch = self.schedule.batches[t - 1]
            samples = []
            for i in batch:
                x = self.features[i]
                y = self.labels[i]
                x_pt = IntervalTensor.point(x)
                y_pt = IntervalTensor.point(
                    encode_label(y, self.cfg.loss, self.n_outputs)
                )
                det_point = sample_bound_details(pi, x_pt, y_pt, self.cfg.loss)
                if isinstance(self.pm, BoundedPerturbation):
                    x_h = input_hull(x, self.pm)
                    y_h = target_hull(y, self.cfg.loss, self.n_outputs, self.pm)
                    if x_h is None and y_h is None:
                        det_hull = det_point
                    else:
                        det_hull = sample_bound_details(
                            pi,
                            x_pt if x_h is None else x_h,
                            y_pt if y_h is None else y_h,
                            self.cfg.loss,
                        )
                else:
                    det_hull = det_point
                details[(t, int(i))] = det_hull
                samples.append(
                    GradBoundsSample(
                        grads=det_point.grads,
                        poisoned=det_hull.grads
                        if isinstance(self.pm, BoundedPerturbation)
                        else None,
                    )
                )
            alpha = lr_at(self.cfg, t - 1)
            b = len(batch)
            if isinstance(self.pm, BoundedPerturbation):
                descent = bounded_descent_bounds(samples, min(self.pm.n, b))
            elif isinstance(self.pm, Removal):
                descent = removal_descent_bounds(samples, self.pm.n)
            else:
                slot_det = sample_bound_details(
                    pi, self.sub_domain, self.sub_labels, self.cfg.loss
                )
                slot_details[t] = slot_det
                descent = _substitution_descent(
                    samples, slot_det.grads, min(self.pm.n, b)
                )
            pi = pi.step(descent, alpha)
            pis[t] = pi
        return pis, details, slot_details

    # -- encoding ------------------------------------------------------------

    def encode(self, window, seed_interval: ParamIntervals) -> ConstraintSystem:
        t0, t1 = window
        pis, details, slot_details = self._window_bounds(window, seed_interval)
        depth = self.arch.depth
        sizes = self.arch.layer_sizes
        sb = SystemBuilder()

        # parameters, iteration by iteration
        for t in range(t0, t1 + 1):
            pi = pis[t]
            for k in range(depth):
                wl, wu = pi.weights[k].lo, pi.weights[k].hi
                for i in range(sizes[k + 1]):
                    for j in range(sizes[k]):
                        sb.add_variable(
                            _w_name(t, k + 1, i, j), CONTINUOUS, wl[i, j], wu[i, j]
                        )
                    sb.add_variable(
                        _b_name(t, k + 1, i),
                        CONTINUOUS,
                        pi.biases[k].lo[i],
                        pi.biases[k].hi[i],
                    )

        window_samples = sorted(
            {int(i) for t in range(t0 + 1, t1 + 1) for i in self.schedule.batches[t - 1]}
        )
        needs_selectors = isinstance(self.pm, (Removal, Substitution)) or (
            isinstance(self.pm, BoundedPerturbation)
            and (self.label_perturbed or self.feature_perturbed)
        )
        separate_flip = self.label_perturbed and self.feature_perturbed
        if needs_selectors:
            for i in window_samples:
                sb.add_variable(f"s_{i}", BINARY, 0.0, 1.0)
            if separate_flip:
                for i in window_samples:
                    sb.add_variable(f"f_{i}", BINARY, 0.0, 1.0)
        if self.feature_perturbed:
            for i in window_samples:
                x = self.features[i]
                for j in range(sizes[0]):
                    sb.add_variable(
                        f"x_s{i}_n{j}",
                        CONTINUOUS,
                        x[j] - self.pm.epsilon,
                        x[j] + self.pm.epsilon,
                    )
        if self.label_perturbed:
            for i in window_samples:
                hull = target_hull(
                    self.labels[i], self.cfg.loss, self.n_outputs, self.pm
                )
                sb.add_variable(f"ytil_s{i}", CONTINUOUS, hull.lo[0], hull.hi[0])

        for t in range(t0 + 1, t1 + 1):
            for i in self.schedule.batches[t - 1]:
                self._sample_variables(sb, t, f"s{int(i)}", details[(t, int(i))])
            if isinstance(self.pm, Substitution):
                n_slots = min(self.pm.n, len(self.schedule.batches[t - 1]))
                for q in range(n_slots):
                    sb.add_variable(f"a_t{t}_m{q}", BINARY, 0.0, 1.0)
                    for j in range(sizes[0]):
                        sb.add_variable(
                            f"xs_t{t}_m{q}_n{j}",
                            CONTINUOUS,
                            self.sub_domain.lo[j],
                            self.sub_domain.hi[j],
                        )
                    sb.add_variable(
                        f"ys_t{t}_m{q}",
                        CONTINUOUS,
                        self.sub_labels.lo[0],
                        self.sub_labels.hi[0],
                    )
                    self._sample_variables(sb, t, f"q{q}", slot_details[t])

        # rows
        if needs_selectors:
            sb.add_linear(
                "card",
                [(1.0, f"s_{i}") for i in window_samples],
                "<=",
                float(self.pm.n),
            )
            if separate_flip:
                for i in window_samples:
                    sb.add_linear(
                        f"flipsel_{i}", [(1.0, f"f_{i}"), (-1.0, f"s_{i}")], "<=", 0.0
                    )
        if self.label_perturbed:
            flip_var = "f" if separate_flip else "s"
            for i in window_samples:
                base = float(
                    encode_label(self.labels[i], self.cfg.loss, self.n_outputs)[0]
                )
                if self.pm.q == 0:
                    flipped = float(
                        encode_label(
                            1 - int(self.labels[i]), self.cfg.loss, self.n_outputs
                        )[0]
                    )
                    sb.add_linear(
                        f"lbl_{i}",
                        [(1.0, f"ytil_s{i}"), (base - flipped, f"{flip_var}_{i}")],
                        "=",
                        base,
                    )
                else:
                    sb.add_linear(
                        f"lbl_lo_{i}",
                        [(1.0, f"ytil_s{i}"), (self.pm.nu, f"{flip_var}_{i}")],
                        ">=",
                        base,
                    )
                    sb.add_linear(
                        f"lbl_hi_{i}",
                        [(1.0, f"ytil_s{i}"), (-self.pm.nu, f"{flip_var}_{i}")],
                        "<=",
                        base,
                    )

        for t in range(t0 + 1, t1 + 1):
            batch = self.schedule.batches[t - 1]
            for i in batch:
                i = int(i)
                self._sample_rows(
                    sb,
                    t,
                    f"s{i}",
                    details[(t, i)],
                    input_values=None if self.feature_perturbed else self.features[i],
                    input_names=[f"x_s{i}_n{j}" for j in range(sizes[0])]
                    if self.feature_perturbed
                    else None,
                    label_name=f"ytil_s{i}" if self.label_perturbed else None,
                    label_value=None
                    if self.label_perturbed
                    else encode_label(self.labels[i], self.cfg.loss, self.n_outputs),
                )
            if isinstance(self.pm, Substitution):
                n_slots = min(self.pm.n, len(batch))
                for q in range(n_slots):
                    self._sample_rows(
                        sb,
                        t,
                        f"q{q}",
                        slot_details[t],
                        input_values=None,
                        input_names=[
                            f"xs_t{t}_m{q}_n{j}" for j in range(sizes[0])
                        ],
                        label_name=f"ys_t{t}_m{q}",
                        label_value=None,
                    )
                sb.add_linear(
                    f"match_t{t}",
                    [(1.0, f"s_{int(i)}") for i in batch]
                    + [(-1.0, f"a_t{t}_m{q}") for q in range(n_slots)],
                    "=",
                    0.0,
                )
            self._update_rows(sb, t, batch)

        # objective over the window-final parameters
        flat_names = self._flat_theta_names(t1)
        obj = self.opts.objective
        if isinstance(obj, ParamMin):
            sb.set_objective("minimize", [(1.0, flat_names[obj.index])])
        elif isinstance(obj, ParamMax):
            sb.set_objective("maximize", [(1.0, flat_names[obj.index])])
        else:
            if len(obj.direction) != len(flat_names):
                raise ConfigError("face direction has wrong dimension")
            sb.set_objective(
                "maximize",
                [(c, name) for c, name in zip(obj.direction, flat_names) if c != 0.0],
            )

        aux = ()
        if self.opts.relaxation in ("milp", "lp"):
            aux = _linearize_products(sb)
        if self.opts.relaxation in ("qcp", "lp"):
            sb.relax_binaries()
        return sb.seal(
            SystemMetadata(
                window=(t0, t1), relaxation=self.opts.relaxation, aux_products=aux
            )
        )

    # -- per-sample variables and rows ----------------------------------------

    def _sample_variables(self, sb, t, tag, det):
        """Forward and backward variables for one (iteration, sample)."""
        depth = self.arch.depth
        sizes = self.arch.layer_sizes
        for k in range(1, depth + 1):
            pre = det.trace.pre[k - 1]
            for j in range(sizes[k]):
                sb.add_variable(
                    f"zhat_t{t}_{tag}_l{k}_n{j}", CONTINUOUS, pre.lo[j], pre.hi[j]
                )
            if k < depth:
                post = det.trace.post[k]
                for j in range(sizes[k]):
                    sb.add_variable(
                        f"z_t{t}_{tag}_l{k}_n{j}", CONTINUOUS, post.lo[j], post.hi[j]
                    )
                    sb.add_variable(f"r_t{t}_{tag}_l{k}_n{j}", BINARY, 0.0, 1.0)
        if self.cfg.loss is LossKind.HINGE:
            sb.add_variable(
                f"u_t{t}_{tag}", CONTINUOUS, det.margin.lo[0], det.margin.hi[0]
            )
            sb.add_variable(f"g_t{t}_{tag}", BINARY, 0.0, 1.0)
        for k in range(depth, 0, -1):
            d_pre = det.d_pre[k - 1]
            for j in range(sizes[k]):
                sb.add_variable(
                    f"dzhat_t{t}_{tag}_l{k}_n{j}", CONTINUOUS, d_pre.lo[j], d_pre.hi[j]
                )
            if k < depth:
                d_post = det.d_post[k]
                for j in range(sizes[k]):
                    sb.add_variable(
                        f"dz_t{t}_{tag}_l{k}_n{j}",
                        CONTINUOUS,
                        d_post.lo[j],
                        d_post.hi[j],
                    )
        gw = det.grads.weights
        for k in range(1, depth + 1):
            g = gw[k - 1]
            for r in range(sizes[k]):
                for c in range(sizes[k - 1]):
                    sb.add_variable(
                        f"gw_t{t}_{tag}_l{k}_i{r}_j{c}",
                        CONTINUOUS,
                        g.lo[r, c],
                        g.hi[r, c],
                    )

    def _sample_rows(
        self,
        sb,
        t,
        tag,
        det,
        input_values,
        input_names,
        label_name,
        label_value,
    ):
        """Forward, activation, loss-gradient and gradient rows."""
        depth = self.arch.depth
        sizes = self.arch.layer_sizes
        m = self.opts.bigM_margin
        loss = self.cfg.loss

        for k in range(1, depth + 1):
            for r in range(sizes[k]):
                terms = [
                    (1.0, f"zhat_t{t}_{tag}_l{k}_n{r}"),
                    (-1.0, _b_name(t - 1, k, r)),
                ]
                bil = []
                for j in range(sizes[k - 1]):
                    w = _w_name(t - 1, k, r, j)
                    if k == 1:
                        if input_values is not None:
                            terms.append((-float(input_values[j]), w))
                        else:
                            bil.append((-1.0, w, input_names[j]))
                    else:
                        bil.append((-1.0, w, f"z_t{t}_{tag}_l{k - 1}_n{j}"))
                sb.add_row(f"fwd_t{t}_{tag}_l{k}_n{r}", terms, bil, "=", 0.0)
            if k < depth:
                pre = det.trace.pre[k - 1]
                for r in range(sizes[k]):
                    z = f"z_t{t}_{tag}_l{k}_n{r}"
                    zh = f"zhat_t{t}_{tag}_l{k}_n{r}"
                    rb = f"r_t{t}_{tag}_l{k}_n{r}"
                    lo_eff = min(float(pre.lo[r]), 0.0) - m
                    hi_eff = max(float(pre.hi[r]), 0.0) + m
                    base = f"relu_t{t}_{tag}_l{k}_n{r}"
                    sb.add_linear(f"{base}_a", [(1.0, z), (-1.0, zh)], ">=", 0.0)
                    sb.add_linear(f"{base}_b", [(1.0, z)], ">=", 0.0)
                    sb.add_linear(
                        f"{base}_c",
                        [(1.0, z), (-1.0, zh), (-lo_eff, rb)],
                        "<=",
                        -lo_eff,
                    )
                    sb.add_linear(f"{base}_d", [(1.0, z), (-hi_eff, rb)], "<=", 0.0)

        yhat = f"zhat_t{t}_{tag}_l{depth}_n0"
        dyhat0 = f"dzhat_t{t}_{tag}_l{depth}_n0"
        if loss is LossKind.HINGE:
            u = f"u_t{t}_{tag}"
            g = f"g_t{t}_{tag}"
            if label_name is not None:
                sb.add_quadratic(
                    f"mar_t{t}_{tag}",
                    [(1.0, u)],
                    [(1.0, label_name, yhat)],
                    "=",
                    1.0,
                )
                sb.add_quadratic(
                    f"gl_t{t}_{tag}",
                    [(1.0, dyhat0)],
                    [(1.0, label_name, g)],
                    "=",
                    0.0,
                )
            else:
                y = float(label_value[0])
                sb.add_linear(
                    f"mar_t{t}_{tag}", [(1.0, u), (y, yhat)], "=", 1.0
                )
                sb.add_linear(
                    f"gl_t{t}_{tag}", [(1.0, dyhat0), (y, g)], "=", 0.0
                )
            u_lo = min(float(det.margin.lo[0]), 0.0) - m
            u_hi = max(float(det.margin.hi[0]), 0.0) + m
            sb.add_linear(f"hu_t{t}_{tag}", [(1.0, u), (-u_hi, g)], "<=", 0.0)
            sb.add_linear(f"hl_t{t}_{tag}", [(1.0, u), (u_lo, g)], ">=", u_lo)
        else:
            for r in range(sizes[depth]):
                dy = f"dzhat_t{t}_{tag}_l{depth}_n{r}"
                zh = f"zhat_t{t}_{tag}_l{depth}_n{r}"
                terms = [(1.0, dy), (-2.0, zh)]
                if label_name is not None:
                    terms.append((2.0, label_name))
                    sb.add_linear(f"gl_t{t}_{tag}_n{r}", terms, "=", 0.0)
                else:
                    sb.add_linear(
                        f"gl_t{t}_{tag}_n{r}",
                        terms,
                        "=",
                        -2.0 * float(label_value[r]),
                    )

        for k in range(depth - 1, 0, -1):
            for j in range(sizes[k]):
                dz = f"dz_t{t}_{tag}_l{k}_n{j}"
                bil = [
                    (-1.0, _w_name(t - 1, k + 1, r, j), f"dzhat_t{t}_{tag}_l{k + 1}_n{r}")
                    for r in range(sizes[k + 1])
                ]
                sb.add_quadratic(f"bwd_t{t}_{tag}_l{k}_n{j}", [(1.0, dz)], bil, "=", 0.0)
                sb.add_quadratic(
                    f"act_t{t}_{tag}_l{k}_n{j}",
                    [(1.0, f"dzhat_t{t}_{tag}_l{k}_n{j}")],
                    [(-1.0, dz, f"r_t{t}_{tag}_l{k}_n{j}")],
                    "=",
                    0.0,
                )

        for k in range(1, depth + 1):
            for r in range(sizes[k]):
                dzh = f"dzhat_t{t}_{tag}_l{k}_n{r}"
                for c in range(sizes[k - 1]):
                    gwv = f"gw_t{t}_{tag}_l{k}_i{r}_j{c}"
                    if k == 1:
                        if input_values is not None:
                            sb.add_linear(
                                f"grd_t{t}_{tag}_l{k}_i{r}_j{c}",
                                [(1.0, gwv), (-float(input_values[c]), dzh)],
                                "=",
                                0.0,
                            )
                        else:
                            sb.add_quadratic(
                                f"grd_t{t}_{tag}_l{k}_i{r}_j{c}",
                                [(1.0, gwv)],
                                [(-1.0, dzh, input_names[c])],
                                "=",
                                0.0,
                            )
                    else:
                        sb.add_quadratic(
                            f"grd_t{t}_{tag}_l{k}_i{r}_j{c}",
                            [(1.0, gwv)],
                            [(-1.0, dzh, f"z_t{t}_{tag}_l{k - 1}_n{c}")],
                            "=",
                            0.0,
                        )

    def _update_rows(self, sb, t, batch):
        """One row per parameter slot linking theta(t-1) to theta(t)."""
        alpha = lr_at(self.cfg, t - 1)
        b = float(len(batch))
        depth = self.arch.depth
        sizes = self.arch.layer_sizes
        n_slots = (
            min(self.pm.n, len(batch)) if isinstance(self.pm, Substitution) else 0
        )

        def slot_rows(grad_name_fn, cur, prev, rowname):
            terms = [(b, cur), (-b, prev)]
            bil = []
            for i in batch:
                gname = grad_name_fn(f"s{int(i)}")
                terms.append((alpha, gname))
                if isinstance(self.pm, (Removal, Substitution)):
                    bil.append((-alpha, f"s_{int(i)}", gname))
                    if isinstance(self.pm, Removal):
                        bil.append((-1.0, cur, f"s_{int(i)}"))
                        bil.append((1.0, prev, f"s_{int(i)}"))
            for q in range(n_slots):
                bil.append((alpha, f"a_t{t}_m{q}", grad_name_fn(f"q{q}")))
            sb.add_row(rowname, terms, bil, "=", 0.0)

        for k in range(1, depth + 1):
            for r in range(sizes[k]):
                for c in range(sizes[k - 1]):
                    slot_rows(
                        lambda tag, k=k, r=r, c=c: f"gw_t{t}_{tag}_l{k}_i{r}_j{c}",
                        _w_name(t, k, r, c),
                        _w_name(t - 1, k, r, c),
                        f"upd_t{t}_l{k}_i{r}_j{c}",
                    )
                slot_rows(
                    lambda tag, k=k, r=r: f"dzhat_t{t}_{tag}_l{k}_n{r}",
                    _b_name(t, k, r),
                    _b_name(t - 1, k, r),
                    f"upd_t{t}_l{k}_i{r}_bias",
                )

    def _flat_theta_names(self, t) -> list[str]:
        """Variable names in flat parameter order (weights row-major, bias)."""
        names = []
        sizes = self.arch.layer_sizes
        for k in range(1, self.arch.depth + 1):
            for i in range(sizes[k]):
                for j in range(sizes[k - 1]):
                    names.append(_w_name(t, k, i, j))
            for i in range(sizes[k]):
                names.append(_b_name(t, k, i))
        return names

    # -- mechanical assignments ------------------------------------------------

    def assignment_from_run(
        self,
        cs: ConstraintSystem,
        variant_features: np.ndarray,
        variant_labels: np.ndarray,
        removed: tuple[int, ...],
        trajectory: list[Params],
    ) -> dict[str, float]:
        """Translate a concrete retraining into a candidate assignment.

        ``trajectory`` is indexed by global iteration (entry 0 is the
        initialisation) and must come from the same seed and schedule.
        Selector binaries are read off the dataset difference; ReLU and
        hinge indicators from the recomputed activations; McCormick
        products are completed from their factors.
        """
        t0, t1 = cs.metadata.window
        variant_features = np.asarray(variant_features, dtype=np.float64)
        depth = self.arch.depth
        sizes = self.arch.layer_sizes
        asn: dict[str, float] = {}

        for t in range(t0, t1 + 1):
            p = trajectory[t]
            for k in range(depth):
                for i in range(sizes[k + 1]):
                    for j in range(sizes[k]):
                        asn[_w_name(t, k + 1, i, j)] = float(p.weights[k][i, j])
                    asn[_b_name(t, k + 1, i)] = float(p.biases[k][i])

        window_samples = sorted(
            {int(i) for t in range(t0 + 1, t1 + 1) for i in self.schedule.batches[t - 1]}
        )
        removed_set = set(removed)
        for i in window_samples:
            flipped = variant_labels[i] != self.labels[i]
            moved = bool(np.any(variant_features[i] != self.features[i]))
            if isinstance(self.pm, (Removal, Substitution)):
                sel = i in removed_set
            else:
                sel = flipped or moved
            asn[f"s_{i}"] = 1.0 if sel else 0.0
            if self.label_perturbed and self.feature_perturbed:
                asn[f"f_{i}"] = 1.0 if flipped else 0.0
            if self.feature_perturbed:
                for j in range(sizes[0]):
                    asn[f"x_s{i}_n{j}"] = float(variant_features[i, j])
            if self.label_perturbed:
                asn[f"ytil_s{i}"] = float(
                    encode_label(variant_labels[i], self.cfg.loss, self.n_outputs)[0]
                )

        for t in range(t0 + 1, t1 + 1):
            params = trajectory[t - 1]
            batch = self.schedule.batches[t - 1]
            for i in batch:
                i = int(i)
                target = encode_label(
                    variant_labels[i], self.cfg.loss, self.n_outputs
                )
                self._sample_assignment(
                    asn, t, f"s{i}", params, variant_features[i], target
                )
            if isinstance(self.pm, Substitution):
                n_slots = min(self.pm.n, len(batch))
                center = self.sub_domain.mid
                label = float(self.sub_labels.hi[0])
                for q in range(n_slots):
                    asn[f"a_t{t}_m{q}"] = 0.0
                    for j in range(sizes[0]):
                        asn[f"xs_t{t}_m{q}_n{j}"] = float(center[j])
                    asn[f"ys_t{t}_m{q}"] = label
                    self._sample_assignment(
                        asn, t, f"q{q}", params, center, np.array([label])
                    )

        if cs.metadata.aux_products:
            asn = complete_assignment(cs, asn)
        missing = [v.name for v in cs.variables if v.name not in asn]
        if missing:
            raise ConfigError(f"assignment missing {missing[:5]} (+{len(missing)})")
        return {v.name: asn[v.name] for v in cs.variables}

    def _sample_assignment(self, asn, t, tag, params, x, target):
        """Forward/backward values of one sample under concrete params."""
        depth = self.arch.depth
        sizes = self.arch.layer_sizes
        tr = forward(params, x)
        for k in range(1, depth + 1):
            for j in range(sizes[k]):
                asn[f"zhat_t{t}_{tag}_l{k}_n{j}"] = float(tr.pre[k - 1][j])
            if k < depth:
                for j in range(sizes[k]):
                    asn[f"z_t{t}_{tag}_l{k}_n{j}"] = float(tr.post[k][j])
                    asn[f"r_t{t}_{tag}_l{k}_n{j}"] = float(tr.pre[k - 1][j] > 0.0)
        dyhat = loss_grad(tr.logits, target, self.cfg.loss)
        if self.cfg.loss is LossKind.HINGE:
            margin = 1.0 - float(target[0]) * float(tr.logits[0])
            asn[f"u_t{t}_{tag}"] = margin
            asn[f"g_t{t}_{tag}"] = float(margin > 0.0)
        dhat = dyhat
        for k in range(depth, 0, -1):
            for j in range(sizes[k]):
                asn[f"dzhat_t{t}_{tag}_l{k}_n{j}"] = float(dhat[j])
            gw = np.outer(dhat, tr.post[k - 1])
            for r in range(sizes[k]):
                for c in range(sizes[k - 1]):
                    asn[f"gw_t{t}_{tag}_l{k}_i{r}_j{c}"] = float(gw[r, c])
            if k > 1:
                dz = params.weights[k - 1].T @ dhat
                for j in range(sizes[k - 1]):
                    asn[f"dz_t{t}_{tag}_l{k - 1}_n{j}"] = float(dz[j])
                dhat = heaviside(tr.pre[k - 2]) * dz


def _substitution_descent(samples, slot_grads, n):
    """Descent enclosure when up to n batch members are replaced by
    points from the substitute domain (no gradient clipping)."""
    b = len(samples)
    lo_parts = []
    hi_parts = []
    for which in ("weights", "biases"):
        lo_layers = []
        hi_layers = []
        n_layers = len(getattr(samples[0].grads, which))
        for k in range(n_layers):
            lo_stack = np.stack([getattr(s.grads, which)[k].lo for s in samples])
            hi_stack = np.stack([getattr(s.grads, which)[k].hi for s in samples])
            slot_lo = getattr(slot_grads, which)[k].lo
            slot_hi = getattr(slot_grads, which)[k].hi
            lo_best = np.full(lo_stack.shape[1:], np.inf)
            hi_best = np.full(hi_stack.shape[1:], -np.inf)
            for kk in range(n + 1):
                lo_best = np.minimum(
                    lo_best, (sum_smallest(b - kk, lo_stack) + kk * slot_lo) / b
                )
                hi_best = np.maximum(
                    hi_best, (sum_largest(b - kk, hi_stack) + kk * slot_hi) / b
                )
            lo_layers.append(lo_best)
            hi_layers.append(hi_best)
        lo_parts.append(lo_layers)
        hi_parts.append(hi_layers)
    return ParamIntervals(
        tuple(
            IntervalTensor(lo, hi) for lo, hi in zip(lo_parts[0], hi_parts[0])
        ),
        tuple(
            IntervalTensor(lo, hi) for lo, hi in zip(lo_parts[1], hi_parts[1])
        ),
    )


def _linearize_products(sb: SystemBuilder) -> tuple[tuple[str, str, str], ...]:
    """Replace every bilinear term with a product variable + McCormick rows."""
    bounds = {v.name: (v.lower, v.upper) for v in sb._variables}
    products: dict[tuple[str, str], str] = {}
    mc_rows: list[LinearConstraint] = []
    new_linear = []
    for row in sb._quadratic:
        terms = list(row.terms)
        for c, a, bvar in row.bilinear:
            key = (a, bvar) if a <= bvar else (bvar, a)
            if key not in products:
                w = f"w__{key[0]}__{key[1]}"
                aL, aU = bounds[key[0]]
                bL, bU = bounds[key[1]]
                corners = (aL * bL, aL * bU, aU * bL, aU * bU)
                sb.add_variable(w, CONTINUOUS, min(corners), max(corners))
                mc_rows.extend(
                    mccormick((key[0], key[1], w), (aL, aU, bL, bU), f"mc_{w}")
                )
                products[key] = w
            terms.append((c, products[key]))
        new_linear.append(LinearConstraint(row.name, tuple(terms), row.sense, row.rhs))
    sb._quadratic = []
    sb._linear.extend(new_linear)
    sb._linear.extend(mc_rows)
    return tuple((w, a, b) for (a, b), w in products.items())


def encode_training(
    features,
    labels,
    arch: Architecture,
    cfg: TrainConfig,
    pm: PerturbationModel,
    window: tuple[int, int],
    seed_interval: ParamIntervals,
    opts: EncodeOptions,
    schedule: BatchSchedule | None = None,
) -> ConstraintSystem:
    """One-shot encoding of a training window.  See TrainingEncoder."""
    enc = TrainingEncoder(features, labels, arch, cfg, pm, opts, schedule)
    return enc.encode(window, seed_interval)


# ---------------------------------------------------------------------------
# closed-form size accounting


@dataclass(frozen=True)
class SystemSize:
    n_variables: int
    n_binaries: int
    n_linear: int
    n_quadratic: int


def estimate_system_size(
    arch: Architecture,
    batch_size: int,
    n_iterations: int,
    loss: LossKind,
    pm: PerturbationModel,
    label_perturbed: bool,
) -> SystemSize:
    """Closed-form size of the miqcp encoding for one single-epoch window.

    Covers Bounded perturbations with fixed features (label flips or
    untouched labels) and Removal.  The counts mirror how the rows and
    variables scale with the architecture; they are checked against the
    built systems in tests rather than against any external reference.
    """
    if isinstance(pm, Substitution):
        raise ConfigError("no closed form for substitution systems")
    if isinstance(pm, BoundedPerturbation) and pm.epsilon > 0:
        raise ConfigError("no closed form for perturbed-feature systems")
    sizes = arch.layer_sizes
    depth = arch.depth
    hinge = loss is LossKind.HINGE
    B, T = batch_size, n_iterations
    S = B * T  # distinct samples: single-epoch windows only
    n_params = sum(sizes[k + 1] * sizes[k] + sizes[k + 1] for k in range(depth))
    n_weights = sum(sizes[k + 1] * sizes[k] for k in range(depth))
    hidden = sum(sizes[1:depth])
    units = sum(sizes[1 : depth + 1])
    removal = isinstance(pm, Removal)
    selectors = removal or label_perturbed

    per_sample_vars = (
        units  # zhat
        + 2 * hidden  # z and r
        + units  # dzhat
        + hidden  # dz
        + n_weights  # gw
        + (2 if hinge else 0)  # u, g
    )
    n_vars = (
        (T + 1) * n_params
        + (S if selectors else 0)  # s
        + (S if label_perturbed else 0)  # ytil
        + S * per_sample_vars
    )
    n_bins = (S if selectors else 0) + S * (hidden + (1 if hinge else 0))

    fwd_linear = sizes[1]  # first layer, constant inputs
    fwd_quad = units - sizes[1]
    grd_linear = sizes[1] * sizes[0]
    grd_quad = n_weights - grd_linear
    per_sample_linear = (
        fwd_linear
        + 4 * hidden  # relu logic
        + grd_linear
        + (2 if hinge else 0)  # indicator rows
        + (
            # margin and loss-gradient rows are linear with fixed labels
            (0 if label_perturbed else 2)
            if hinge
            else sizes[depth]
        )
    )
    per_sample_quad = (
        fwd_quad
        + 2 * hidden  # bwd and act rows
        + grd_quad
        + ((2 if label_perturbed else 0) if hinge else 0)
    )
    n_linear = (
        (1 if selectors else 0)  # cardinality
        + (S if label_perturbed else 0)  # lbl rows
        + S * per_sample_linear
        + (0 if removal else T * n_params)  # update rows
    )
    n_quad = S * per_sample_quad + (T * n_params if removal else 0)
    return SystemSize(n_vars, n_bins, n_linear, n_quad)
