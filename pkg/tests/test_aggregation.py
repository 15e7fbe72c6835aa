"""Descent aggregators against exhaustive subset enumeration."""

import itertools

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from traincert.aggregation import (
    bounded_descent_bounds,
    clip_grad_bounds,
    removal_descent_bounds,
    substitution_descent_bounds,
    sum_largest,
    sum_smallest,
)
from traincert.boundprop import GradBoundsSample, ParamIntervals
from traincert.intervals import IntervalTensor
from traincert.nn import Params, fixed_order_mean
from traincert.oracle import brute_force_descent_envelope
from traincert.training import Removal, Substitution


def scalar_params(value: float) -> Params:
    return Params((np.array([[float(value)]]),), (np.zeros(1),))


def vector_params(vec: np.ndarray) -> Params:
    return Params((vec.reshape(1, -1).astype(float),), (np.zeros(1),))


def degenerate_sample(params: Params) -> GradBoundsSample:
    pi = ParamIntervals.degenerate(params)
    return GradBoundsSample(grads=pi, poisoned=pi)


def test_sum_largest_smallest_against_sort():
    rng = np.random.Generator(np.random.PCG64(0))
    stack = rng.normal(size=(7, 3))
    s = np.sort(stack, axis=0)
    for n in range(1, 7):
        assert np.array_equal(sum_largest(n, stack), s[7 - n :].sum(axis=0))
        assert np.array_equal(sum_smallest(n, stack), s[:n].sum(axis=0))
    # boundary cases are defined to match the plain sum / zero exactly
    assert np.array_equal(sum_largest(0, stack), np.zeros(3))
    assert np.array_equal(sum_largest(7, stack), np.sum(stack, axis=0))
    assert np.array_equal(sum_smallest(7, stack), np.sum(stack, axis=0))


def test_sum_zero_is_positive_zero():
    # all-negative entries must not leak -0.0 into the n=0 case
    stack = np.array([[-1.0], [-2.0]])
    z = sum_largest(0, stack)
    assert z[0] == 0.0 and np.signbit(z[0]) == False  # noqa: E712


def test_removal_matches_brute_force_scalars_exactly():
    rng = np.random.Generator(np.random.PCG64(1))
    for b, n in itertools.product((4, 6, 8), (1, 2)):
        for _ in range(25):
            values = rng.normal(size=b)
            grads = [scalar_params(v) for v in values]
            samples = [degenerate_sample(g) for g in grads]
            agg = removal_descent_bounds(samples, n)
            env = brute_force_descent_envelope(grads, Removal(n))
            for a, e in zip(
                agg.weights + agg.biases, env.weights + env.biases
            ):
                assert np.array_equal(a.lo, e.lo)
                assert np.array_equal(a.hi, e.hi)


def test_substitution_matches_brute_force_scalars_exactly():
    rng = np.random.Generator(np.random.PCG64(2))
    kappa = 0.75
    for b, n in itertools.product((4, 6), (1, 2)):
        for _ in range(25):
            values = np.clip(rng.normal(size=b), -kappa, kappa)
            grads = [scalar_params(v) for v in values]
            samples = [degenerate_sample(g) for g in grads]
            agg = substitution_descent_bounds(samples, n, kappa)
            env = brute_force_descent_envelope(
                grads, Substitution(n), kappa=kappa
            )
            for a, e in zip(
                agg.weights + agg.biases, env.weights + env.biases
            ):
                assert np.array_equal(a.lo, e.lo)
                assert np.array_equal(a.hi, e.hi)


def test_vector_aggregators_dominate_brute_force():
    # coordinate-wise bounds may be looser than the true envelope but
    # must never cut into it
    rng = np.random.Generator(np.random.PCG64(3))
    kappa = 1.0
    for _ in range(20):
        vecs = [np.clip(rng.normal(size=5), -kappa, kappa) for _ in range(6)]
        grads = [vector_params(v) for v in vecs]
        samples = [degenerate_sample(g) for g in grads]
        for n in (1, 2):
            agg = removal_descent_bounds(samples, n)
            env = brute_force_descent_envelope(grads, Removal(n))
            for a, e in zip(agg.weights + agg.biases, env.weights + env.biases):
                assert a.encloses(e)
            agg = substitution_descent_bounds(samples, n, kappa)
            env = brute_force_descent_envelope(grads, Substitution(n), kappa=kappa)
            for a, e in zip(agg.weights + agg.biases, env.weights + env.biases):
                assert a.encloses(e)


def test_bounded_n_zero_is_plain_batch_mean():
    rng = np.random.Generator(np.random.PCG64(4))
    vecs = [rng.normal(size=3) for _ in range(5)]
    samples = [degenerate_sample(vector_params(v)) for v in vecs]
    agg = bounded_descent_bounds(samples, 0)
    mean = fixed_order_mean(np.stack([v.reshape(1, 3) for v in vecs]))
    slot = agg.weights[0]
    assert np.array_equal(slot.lo, mean)
    assert np.array_equal(slot.hi, mean)
    assert slot.is_degenerate()


def test_bounded_contains_any_n_poisoned_means():
    rng = np.random.Generator(np.random.PCG64(5))
    b, n = 6, 2
    clean = [rng.normal(size=4) for _ in range(b)]
    radius = 0.5
    samples = []
    for v in clean:
        grads = ParamIntervals.degenerate(vector_params(v))
        poisoned = ParamIntervals(
            (IntervalTensor(v.reshape(1, -1) - radius, v.reshape(1, -1) + radius),),
            (IntervalTensor(np.zeros(1), np.zeros(1)),),
        )
        samples.append(GradBoundsSample(grads=grads, poisoned=poisoned))
    agg = bounded_descent_bounds(samples, n)
    slot = agg.weights[0]
    for _ in range(300):
        subset = rng.choice(b, size=rng.integers(0, n + 1), replace=False)
        stack = np.stack(clean).copy()
        for i in subset:
            stack[i] = clean[i] + rng.uniform(-radius, radius, size=4)
        mean = stack.mean(axis=0)
        assert slot.contains(mean.reshape(1, -1), tol=1e-9)


def test_clip_grad_bounds_truncates_boxes():
    pi = ParamIntervals(
        (IntervalTensor(np.array([[-5.0]]), np.array([[3.0]])),),
        (IntervalTensor(np.array([-0.2]), np.array([0.1])),),
    )
    clipped = clip_grad_bounds(GradBoundsSample(grads=pi, poisoned=pi), 1.0)
    w = clipped.grads.weights[0]
    assert (w.lo[0, 0], w.hi[0, 0]) == (-1.0, 1.0)
    b = clipped.grads.biases[0]
    assert (b.lo[0], b.hi[0]) == (-0.2, 0.1)


@given(
    st.lists(st.floats(-10, 10, allow_nan=False, width=64), min_size=3, max_size=8),
    st.integers(1, 2),
)
@settings(max_examples=60)
def test_removal_envelope_contains_all_leave_k_out_means(values, n):
    b = len(values)
    if n >= b:
        return
    grads = [scalar_params(v) for v in values]
    samples = [degenerate_sample(g) for g in grads]
    agg = removal_descent_bounds(samples, n)
    slot = agg.weights[0]
    for k in range(n + 1):
        for subset in itertools.combinations(range(b), k):
            kept = [values[i] for i in range(b) if i not in subset]
            mean = sum(kept) / len(kept)
            assert slot.contains(np.array([[mean]]), tol=1e-9)
