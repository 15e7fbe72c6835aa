"""Interval arithmetic: frozen oracles, member containment, exactness."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from traincert.intervals import Interval, IntervalTensor, outward_rounding


def iv(lo, hi):
    return IntervalTensor(np.asarray(lo, float), np.asarray(hi, float))


# ---------------------------------------------------------------------------
# frozen scalar oracles


def test_add_sub_endpoints():
    a, b = iv([1.0], [2.0]), iv([10.0], [20.0])
    s = a.add(b)
    assert (s.lo[0], s.hi[0]) == (11.0, 22.0)
    d = a.sub(b)
    assert (d.lo[0], d.hi[0]) == (-19.0, -8.0)


def test_elemmul_endpoint_products():
    r = iv([-1.0], [2.0]).elemmul(iv([-3.0], [4.0]))
    assert (r.lo[0], r.hi[0]) == (-6.0, 8.0)
    r = iv([1.0], [2.0]).elemmul(iv([-3.0], [4.0]))
    assert (r.lo[0], r.hi[0]) == (-6.0, 8.0)
    # sign-definite operands: plain endpoint products
    r = iv([2.0], [3.0]).elemmul(iv([5.0], [7.0]))
    assert (r.lo[0], r.hi[0]) == (10.0, 21.0)


def test_scale_negative_swaps_endpoints():
    r = iv([1.0], [2.0]).scale(-2.0)
    assert (r.lo[0], r.hi[0]) == (-4.0, -2.0)


def test_matmul_degenerate_is_exact_linear_image():
    w = IntervalTensor.point(np.array([[1.0, -2.0], [0.5, 4.0]]))
    x = IntervalTensor.point(np.array([3.0, -1.0]))
    r = w.matmul(x)
    expected = np.array([[1.0, -2.0], [0.5, 4.0]]) @ np.array([3.0, -1.0])
    assert np.array_equal(r.lo, expected) and np.array_equal(r.hi, expected)


def test_matmul_inner_dim_one_is_exact():
    # outer products involve no summation and must stay tight
    a = iv([[-1.0], [2.0]], [[1.0], [3.0]])
    b = iv([[-2.0, 0.0]], [[1.0, 5.0]])
    r = a.matmul(b)
    corners = []
    for alo_hi in (a.lo, a.hi):
        for blo_hi in (b.lo, b.hi):
            corners.append(alo_hi @ blo_hi)
    stack = np.stack(corners)
    assert np.array_equal(r.lo, stack.min(axis=0))
    assert np.array_equal(r.hi, stack.max(axis=0))


def test_validation_rejects_bad_boxes():
    with pytest.raises(ValueError):
        iv([2.0], [1.0])
    with pytest.raises(ValueError):
        IntervalTensor(np.array([np.nan]), np.array([1.0]))
    with pytest.raises(ValueError):
        IntervalTensor.point(np.array([np.nan]))


def test_contains_and_encloses():
    box = iv([0.0, -1.0], [1.0, 1.0])
    assert box.contains(np.array([0.5, 0.0]))
    assert not box.contains(np.array([1.5, 0.0]))
    assert box.contains(np.array([1.0 + 5e-10, 0.0]), tol=1e-9)
    assert box.encloses(iv([0.2, -0.5], [0.8, 0.5]))
    assert not box.encloses(iv([0.2, -2.0], [0.8, 0.5]))


def test_hull_and_intersect():
    a, b = iv([0.0], [1.0]), iv([0.5], [3.0])
    h = a.hull(b)
    assert (h.lo[0], h.hi[0]) == (0.0, 3.0)
    x = a.intersect(b)
    assert (x.lo[0], x.hi[0]) == (0.5, 1.0)
    with pytest.raises(ValueError):
        iv([0.0], [1.0]).intersect(iv([2.0], [3.0]))


def test_scalar_interval_class():
    a = Interval(1.0, 2.0)
    assert (a * Interval(-3.0, 4.0)).lo == -6.0
    assert a.scale(-1.0) == Interval(-2.0, -1.0)
    assert Interval.point(5.0).width() == 0.0
    with pytest.raises(ValueError):
        Interval(2.0, 1.0)


# ---------------------------------------------------------------------------
# member containment properties

finite = st.floats(min_value=-50, max_value=50, allow_nan=False, width=64)


@st.composite
def box_and_member(draw, shape=(3,)):
    lo = draw(arrays(np.float64, shape, elements=finite))
    width = draw(arrays(np.float64, shape, elements=st.floats(0, 10, width=64)))
    u = draw(arrays(np.float64, shape, elements=st.floats(0, 1, width=64)))
    hi = lo + width
    return IntervalTensor(lo, hi), lo + u * width


@given(box_and_member(), box_and_member())
def test_binary_ops_contain_members(ab, cd):
    (a, x), (b, y) = ab, cd
    assert a.add(b).contains(x + y, tol=1e-12)
    assert a.sub(b).contains(x - y, tol=1e-12)
    assert a.elemmul(b).contains(x * y, tol=1e-9)


@given(box_and_member(), st.floats(-5, 5, width=64))
def test_scale_and_monotone_maps_contain_members(am, alpha):
    a, x = am
    assert a.scale(alpha).contains(alpha * x, tol=1e-12)
    assert a.map_monotone("relu").contains(np.maximum(x, 0.0))
    assert a.map_monotone("sigmoid").contains(1.0 / (1.0 + np.exp(-x)), tol=1e-12)
    assert a.clip(2.5).contains(np.clip(x, -2.5, 2.5))


@given(box_and_member())
def test_heaviside_image_is_contained(am):
    a, x = am
    img = a.map_monotone("heaviside")
    assert img.contains((x > 0).astype(float))


@st.composite
def matmul_case(draw):
    n, k, m = draw(st.integers(1, 3)), draw(st.integers(1, 3)), draw(st.integers(1, 3))
    a_lo = draw(arrays(np.float64, (n, k), elements=finite))
    a_w = draw(arrays(np.float64, (n, k), elements=st.floats(0, 5, width=64)))
    b_lo = draw(arrays(np.float64, (k, m), elements=finite))
    b_w = draw(arrays(np.float64, (k, m), elements=st.floats(0, 5, width=64)))
    ua = draw(arrays(np.float64, (n, k), elements=st.floats(0, 1, width=64)))
    ub = draw(arrays(np.float64, (k, m), elements=st.floats(0, 1, width=64)))
    return (
        IntervalTensor(a_lo, a_lo + a_w),
        IntervalTensor(b_lo, b_lo + b_w),
        a_lo + ua * a_w,
        b_lo + ub * b_w,
    )


@given(matmul_case())
def test_matmul_contains_member_products(case):
    a, b, x, y = case
    assert a.matmul(b).contains(x @ y, tol=1e-8)


@given(box_and_member(), box_and_member())
def test_hull_encloses_both_operands(ab, cd):
    (a, _), (b, _) = ab, cd
    h = a.hull(b)
    assert h.encloses(a) and h.encloses(b)


# ---------------------------------------------------------------------------
# exactness on dyadic data: no spurious widening


def test_degenerate_ops_stay_degenerate_and_bit_exact():
    x = np.array([0.5, -1.25, 3.0])
    y = np.array([2.0, 0.75, -0.5])
    a, b = IntervalTensor.point(x), IntervalTensor.point(y)
    for op, ref in [
        (a.add(b), x + y),
        (a.sub(b), x - y),
        (a.elemmul(b), x * y),
        (a.scale(0.25), 0.25 * x),
    ]:
        assert op.is_degenerate()
        assert np.array_equal(op.lo, ref)


def test_outward_rounding_only_widens():
    a, b = iv([1.0, -2.0], [2.0, -1.0]), iv([0.1, 0.3], [0.2, 0.4])
    plain = a.add(b)
    with outward_rounding():
        padded = a.add(b)
    assert np.all(padded.lo <= plain.lo) and np.all(padded.hi >= plain.hi)
    assert padded.encloses(plain)
    # one-ulp nudge, not a blowup
    assert float(np.max(padded.width() - plain.width())) < 1e-12


def test_clip_is_exact_even_under_outward_rounding():
    a = iv([-2.0, 0.5], [2.0, 3.0])
    with outward_rounding():
        c = a.clip(1.0)
    assert np.all(c.lo >= -1.0) and np.all(c.hi <= 1.0)
    assert np.array_equal(c.lo, [-1.0, 0.5]) and np.array_equal(c.hi, [1.0, 1.0])
