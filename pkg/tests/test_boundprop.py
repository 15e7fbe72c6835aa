"""Soundness of interval and CROWN bounds via Monte Carlo membership."""

import numpy as np
import pytest

from traincert.boundprop import (
    ParamIntervals,
    crown_forward,
    hinge_margin_interval,
    interval_forward,
    loss_grad_interval,
    per_sample_grad_bounds,
)
from traincert.intervals import IntervalTensor
from traincert.nn import (
    LossKind,
    encode_label,
    forward,
    loss_grad,
    params_flatten,
    sample_gradient,
)

from _helpers import make_net, member_point, random_arch, random_box, sample_params

TOL = 1e-9


def test_degenerate_forward_equals_concrete():
    arch, params = make_net((2, 3, 1), seed=5)
    x = np.array([0.7, -1.2])
    pi = ParamIntervals.degenerate(params)
    trace = interval_forward(pi, IntervalTensor.point(x))
    concrete = forward(params, x)
    assert np.array_equal(trace.logits.lo, concrete.logits)
    assert np.array_equal(trace.logits.hi, concrete.logits)


def test_forward_bounds_contain_members():
    rng = np.random.Generator(np.random.PCG64(0))
    for trial in range(10):
        arch = random_arch(rng)
        _, params = make_net(arch.layer_sizes, seed=trial)
        pi = random_box(params, rng, radius=0.2)
        x = rng.normal(size=arch.n_inputs)
        box = interval_forward(pi, IntervalTensor.point(x)).logits
        for _ in range(50):
            member = sample_params(pi, rng)
            assert box.contains(forward(member, x).logits, tol=TOL)


def test_crown_contains_members_and_never_looser_than_needed():
    rng = np.random.Generator(np.random.PCG64(1))
    for trial in range(10):
        arch = random_arch(rng, max_depth=3, max_width=6)
        _, params = make_net(arch.layer_sizes, seed=100 + trial)
        pi = random_box(params, rng, radius=0.15)
        x_iv = IntervalTensor.from_center(rng.normal(size=arch.n_inputs), 0.05)
        state = crown_forward(pi, x_iv)
        for _ in range(50):
            member = sample_params(pi, rng)
            point = member_point(x_iv, rng)
            assert state.logits.contains(forward(member, point).logits, tol=TOL)


def test_crown_equals_affine_image_for_linear_model():
    # no ReLU layer: backward substitution terminates at the input box
    _, params = make_net((4, 1), seed=2)
    pi = ParamIntervals.degenerate(params)
    x_iv = IntervalTensor.from_center(np.array([1.0, -2.0, 0.5, 3.0]), 0.1)
    crown = crown_forward(pi, x_iv).logits
    ibp = interval_forward(pi, x_iv).logits
    assert np.allclose(crown.lo, ibp.lo) and np.allclose(crown.hi, ibp.hi)


def test_loss_grad_interval_contains_pointwise_gradients():
    rng = np.random.Generator(np.random.PCG64(3))
    cases = [
        (LossKind.SQUARED_ERROR, 1),
        (LossKind.BINARY_CROSS_ENTROPY, 1),
        (LossKind.HINGE, 1),
        (LossKind.CROSS_ENTROPY, 3),
    ]
    for loss, n_out in cases:
        for _ in range(20):
            center = rng.normal(size=n_out)
            logits_iv = IntervalTensor.from_center(center, 0.3)
            y = int(rng.integers(0, max(2, n_out)))
            target = encode_label(y, loss, n_out)
            giv = loss_grad_interval(logits_iv, IntervalTensor.point(target), loss)
            for _ in range(30):
                z = member_point(logits_iv, rng)
                assert giv.contains(loss_grad(z, target, loss), tol=TOL)


def test_hinge_margin_interval():
    # margin is 1 - y * z
    logits = IntervalTensor(np.array([-1.0]), np.array([2.0]))
    target = IntervalTensor.point(np.array([1.0]))
    m = hinge_margin_interval(logits, target)
    assert (m.lo[0], m.hi[0]) == (-1.0, 2.0)
    # label hull [-1, 1] makes y * z range over [-2, 2]
    hull = IntervalTensor(np.array([-1.0]), np.array([1.0]))
    m2 = hinge_margin_interval(logits, hull)
    assert (m2.lo[0], m2.hi[0]) == (-1.0, 3.0)


@pytest.mark.parametrize("method", ["ibp", "crown"])
@pytest.mark.parametrize(
    "loss,n_out",
    [
        (LossKind.SQUARED_ERROR, 1),
        (LossKind.BINARY_CROSS_ENTROPY, 1),
        (LossKind.HINGE, 1),
        (LossKind.CROSS_ENTROPY, 3),
    ],
)
def test_per_sample_grad_bounds_contain_member_gradients(method, loss, n_out):
    rng = np.random.Generator(np.random.PCG64(11))
    for trial in range(4):
        arch = random_arch(rng, max_depth=2, max_width=5, n_outputs=n_out)
        _, params = make_net(arch.layer_sizes, seed=trial)
        pi = random_box(params, rng, radius=0.1)
        x = rng.normal(size=arch.n_inputs)
        y = int(rng.integers(0, max(2, n_out)))
        target = encode_label(y, loss, n_out)
        gi = per_sample_grad_bounds(
            pi, IntervalTensor.point(x), IntervalTensor.point(target), loss, method
        )
        for _ in range(40):
            member = sample_params(pi, rng)
            g = sample_gradient(member, x, y, loss)
            for slot, ref in zip(gi.weights + gi.biases, g.weights + g.biases):
                assert slot.contains(ref, tol=TOL)


def test_grad_bounds_degenerate_box_is_exact():
    arch, params = make_net((3, 2, 1), seed=8)
    pi = ParamIntervals.degenerate(params)
    x = np.array([0.3, -0.4, 1.1])
    target = encode_label(1, LossKind.BINARY_CROSS_ENTROPY, 1)
    gi = per_sample_grad_bounds(
        pi,
        IntervalTensor.point(x),
        IntervalTensor.point(target),
        LossKind.BINARY_CROSS_ENTROPY,
    )
    g = sample_gradient(params, x, 1, LossKind.BINARY_CROSS_ENTROPY)
    for slot, ref in zip(gi.weights + gi.biases, g.weights + g.biases):
        assert np.array_equal(slot.lo, ref)
        assert np.array_equal(slot.hi, ref)


def test_param_intervals_structure():
    arch, params = make_net((2, 2, 1), seed=0)
    pi = ParamIntervals.degenerate(params)
    assert pi.depth == 2
    assert pi.max_violation(params) == 0.0
    assert pi.width_l1() == 0.0
    assert pi.is_degenerate()
    flat = params_flatten(params)
    flat[0] += 1.0
    from traincert.nn import params_unflatten

    moved = params_unflatten(flat, arch)
    assert pi.max_violation(moved) == 1.0
