import numpy as np
import pytest
import scipy.interpolate
from hypothesis import given, settings, strategies as st

from smoothcolloc.bspline import (Interpolator, basis_matrices, basis_matrix, eval_basis,
                                  eval_knots, evaluate, find_span, greville_points, insert_knot,
                                  make_space)

CASES = [(9, 4, 3), (8, 3, 2), (7, 3, 5), (3, 1, 0), (9, 4, 0)]


@pytest.mark.parametrize("p,r,k", CASES)
def test_dimension_and_knots(p, r, k):
    S = make_space(p, r, k)
    assert S.dim == p + 1 + k * (p - r)
    assert len(S.knots) == S.dim + p + 1
    assert np.all(np.diff(S.knots) >= 0)
    assert S.h == pytest.approx(1 / (k + 1))


def test_invalid_space():
    with pytest.raises(ValueError):
        make_space(4, 4, 1)
    with pytest.raises(ValueError):
        make_space(4, 1, -1)


@pytest.mark.parametrize("p,r,k", CASES)
def test_matches_scipy(p, r, k):
    S = make_space(p, r, k)
    x = np.linspace(0, 1, 53)
    M = basis_matrices(S, x, min(4, p))
    for j in range(S.dim):
        c = np.zeros(S.dim)
        c[j] = 1
        b = scipy.interpolate.BSpline(S.knots, c, p, extrapolate=True)
        for d in range(min(4, p) + 1):
            ref = b.derivative(d)(x) if d else b(x)
            assert np.allclose(M[d, :, j], ref, atol=1e-9 * max(1, np.abs(ref).max()))


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(CASES), st.floats(0, 1))
def test_partition_of_unity(case, x):
    S = make_space(*case)
    ev = eval_basis(S, x, min(4, S.p))
    assert ev.values[0, 0].sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(ev.values[0, 0] >= -1e-15)
    for d in range(1, min(4, S.p) + 1):
        assert abs(ev.values[0, d].sum()) <= 1e-9 * (S.p * (S.k + 1)) ** d


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(CASES), st.floats(0.01, 0.99))
def test_derivative_finite_differences(case, x):
    S = make_space(*case)
    # stay inside one span so the central difference sees a polynomial
    bp = S.breakpoints
    i = min(np.searchsorted(bp, x, side="right") - 1, S.k)
    eps = 1e-5 * S.h
    x = min(max(x, bp[i] + 2 * eps), bp[i + 1] - 2 * eps)
    for d in range(min(4, S.p)):
        hi = basis_matrix(S, x + eps, d)
        lo = basis_matrix(S, x - eps, d)
        fd = (hi - lo) / (2 * eps)
        ex = basis_matrix(S, x, d + 1)
        assert np.allclose(fd, ex, rtol=1e-4, atol=1e-4 * np.abs(ex).max())


def test_span_clamping_and_domain():
    S = make_space(9, 4, 3)
    assert find_span(S, 1.0) == len(S.knots) - S.p - 2
    assert find_span(S, 0.0) == S.p
    with pytest.raises(ValueError):
        find_span(S, 1.5)
    with pytest.raises(ValueError):
        eval_basis(S, 0.5, S.p + 1)


def test_greville_points():
    S = make_space(9, 4, 3)
    g = greville_points(S)
    assert len(g) == S.dim
    assert g[0] == 0 and g[-1] == 1
    assert np.all(np.diff(g) > 0)
    assert np.allclose(g + g[::-1], 1)
    kv = S.knots
    assert g[3] == pytest.approx(kv[4:4 + S.p].mean())


def test_interpolator_reproduces_splines():
    S = make_space(9, 4, 2)
    rng = np.random.default_rng(0)
    c = rng.standard_normal(S.dim)
    I = Interpolator(S)
    vals = evaluate(S, c, I.nodes)
    assert np.allclose(I.coefficients(vals), c, atol=1e-10)


def test_knot_insertion_preserves_spline():
    S = make_space(5, 2, 2)
    rng = np.random.default_rng(1)
    c = rng.standard_normal(S.dim)
    kv, c2 = insert_knot(S.knots, S.p, c, 0.4)
    x = np.linspace(0, 1, 31)
    assert np.allclose(eval_knots(kv, S.p, c2, x), evaluate(S, c, x), atol=1e-12)
