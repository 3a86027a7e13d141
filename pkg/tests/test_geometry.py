import math

import numpy as np
import pytest
import oracles
import sympy
from hypothesis import given, settings, strategies as st

from smoothcolloc.geometry import (BUILTINS, BUILTIN_SCALE, GeometryError, GeometryMap, bilinear,
                                   build_domain, chain_matrix, compute_gluing, dump_domain,
                                   get_domain, inverse_chain_matrix, jacobian, load_domain,
                                   multi_indices, outward_normal, validate_bilinear_like)

MI = multi_indices(4)


@pytest.mark.parametrize("name,patches,inner,boundary,inner_valency", [
    ("one-patch", 1, 0, 4, None),
    ("three-patch", 3, 3, 6, 3),
    ("five-patch", 5, 5, 10, 5),
    ("l-shape", 2, 1, 6, None),
    ("two-squares", 2, 1, 6, None),
])
def test_builtin_topology(name, patches, inner, boundary, inner_valency):
    d = get_domain(name)
    assert len(d.patches) == patches
    assert len(d.inner_edges) == inner
    assert len(d.boundary_edges) == boundary
    inner_v = [v for v in d.vertices if v.kind == "inner"]
    if inner_valency is None:
        assert not inner_v
    else:
        assert [v.valency for v in inner_v] == [inner_valency]
    validate_bilinear_like(d)


def test_builtin_scale():
    P = get_domain("one-patch").patches[0]
    assert np.allclose(P(1.0, 0.0), [BUILTIN_SCALE, 0.0])
    assert np.allclose(P(1.0, 1.0), [1.2 * BUILTIN_SCALE, 1.1 * BUILTIN_SCALE])


def test_unknown_domain():
    with pytest.raises(GeometryError):
        get_domain("no-such-domain")


def test_json_roundtrip():
    d = get_domain("three-patch")
    d2 = load_domain(dump_domain(d))
    assert len(d2.edges) == len(d.edges) and len(d2.vertices) == len(d.vertices)
    for a, b in zip(d.patches, d2.patches):
        assert np.array_equal(a.control, b.control)


@pytest.mark.parametrize("text", ["{", '{"patches": [{"degree": 1}]}',
                                  '{"patches": [{"degree": 1, "control": [[0,0],[1,0]]}]}'])
def test_malformed_json(text):
    with pytest.raises(GeometryError):
        load_domain(text)


def test_bad_topology():
    P = bilinear((0, 0), (1, 0), (0, 1), (1, 1))
    with pytest.raises(GeometryError):
        build_domain([P], [(0, 1, 0, 3, "same")])
    with pytest.raises(GeometryError):
        build_domain([], [])


def test_jacobian_finite_differences():
    P = get_domain("one-patch").patches[0]
    x1, x2, eps = 0.3, 0.7, 1e-6
    jd = jacobian(P, x1, x2)
    fd1 = (P(x1 + eps, x2) - P(x1 - eps, x2)) / (2 * eps)
    fd2 = (P(x1, x2 + eps) - P(x1, x2 - eps)) / (2 * eps)
    assert np.allclose(jd.J[0][:, 0], fd1[0], rtol=1e-8)
    assert np.allclose(jd.J[0][:, 1], fd2[0], rtol=1e-8)
    assert np.allclose(jd.inv[0] @ jd.J[0], np.eye(2))


def test_chain_matrix_inverse():
    P = get_domain("three-patch").patches[1]
    x = np.array([0.1, 0.5, 0.9])
    T = chain_matrix(P, x, x[::-1])
    Ti = inverse_chain_matrix(P, x, x[::-1])
    for a, b in zip(T, Ti):
        assert np.allclose(a @ b, np.eye(len(MI)), atol=1e-10)


def test_chain_rule_against_sympy():
    X1, X2 = sympy.symbols("x1 x2")
    ctrl = np.array([[[0.0, 0.0], [-0.2, 1.0]], [[1.1, 0.1], [1.3, 1.2]]])
    P = GeometryMap(ctrl)
    Fx = sum(ctrl[i, j, 0] * (X1 if i else 1 - X1) * (X2 if j else 1 - X2)
             for i in range(2) for j in range(2))
    Fy = sum(ctrl[i, j, 1] * (X1 if i else 1 - X1) * (X2 if j else 1 - X2)
             for i in range(2) for j in range(2))
    x, y = sympy.symbols("x y")
    u = x**3 * y**2 - 2 * x * y**3 + sympy.sin(x) * y
    composed = u.subs({x: Fx, y: Fy})
    pt = (0.37, 0.61)
    phys = np.array([float(sympy.diff(u, x, a, y, b).subs({x: float(P(*pt)[0, 0]),
                                                          y: float(P(*pt)[0, 1])}))
                     for a, b in MI])
    param = np.array([float(sympy.diff(composed, X1, a, X2, b).subs({X1: pt[0], X2: pt[1]}))
                      for a, b in MI])
    T = chain_matrix(P, *pt)[0]
    assert np.allclose(T @ phys, param, rtol=1e-10, atol=1e-10)


@pytest.fixture(scope="module")
def divergence_bilaplacian():
    return oracles.divergence_bilaplacian()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-0.15, 0.15), min_size=8, max_size=8),
       st.lists(st.floats(-1, 1), min_size=21, max_size=21),
       st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.5, 10.0))
def test_bilaplacian_chain_rule_vs_divergence_form(divergence_bilaplacian, pert, coef, a, b, size):
    assert oracles.bilaplacian_mismatch(divergence_bilaplacian, pert, coef, a, b, size) <= 1e-9


def test_gluing_two_squares():
    d = get_domain("two-squares")
    g = compute_gluing(d, d.inner_edges[0].index)
    assert g.lam > 0
    # for a straight symmetric interface alpha is constant and beta vanishes
    for t in range(2):
        assert abs(g.alpha[t][1]) < 1e-12 and abs(g.beta[t][0]) < 1e-12
    assert g.alpha[0][0] < 0 < g.alpha[1][0]


def test_non_bilinear_like_rejected():
    # a curved interface breaks the linear gluing functions
    c0 = np.array([[[0, 0], [0, 0.5], [0, 1]], [[0.5, 0], [0.7, 0.5], [0.5, 1]],
                   [[1, 0], [1.2, 0.5], [1, 1]]], dtype=float)
    c1 = c0.copy()
    c1[..., 0] += 1.0
    c1[0] = c0[2]
    c1[1, :, 0] = c1[0, :, 0] + 0.5 + np.array([0.0, 0.3, 0.0])
    c1[2, :, 0] = 2.0
    d = build_domain([GeometryMap(c0), GeometryMap(c1)], [(0, 1, 1, 3, "same")])
    with pytest.raises(GeometryError):
        validate_bilinear_like(d)


@pytest.mark.parametrize("name", list(BUILTINS))
def test_outward_normals(name):
    d = get_domain(name)
    center = np.mean([P(0.5, 0.5)[0] for P in d.patches], axis=0)
    t = np.linspace(0.05, 0.95, 7)
    for e in d.boundary_edges:
        f = e.frames[0]
        x1, x2 = f.to_xi(np.zeros_like(t), t)
        n = outward_normal(d, f.patch, f.side, x1, x2)
        assert np.allclose(np.linalg.norm(n, axis=1), 1)
        pts = d.patches[f.patch](x1, x2)
        # normals point away from the patch
        inner = d.patches[f.patch](*f.to_xi(np.full_like(t, 0.05), t))
        assert np.all(np.einsum("ij,ij->i", n, pts - inner) > 0)
    assert np.isfinite(center).all()


def test_multi_indices_order():
    assert multi_indices(2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert len(multi_indices(4)) == 15
    assert math.comb(6, 2) == len(multi_indices(4))
