"""Independent reference computations shared by the unit and acceptance tests."""
import numpy as np
import sympy

from smoothcolloc.geometry import GeometryMap, inverse_chain_matrix, multi_indices

MI = multi_indices(4)
IDX = {mi: i for i, mi in enumerate(MI)}


def divergence_bilaplacian():
    """Bilaplacian of v(xi) on a generic bilinear map, applied twice in divergence form

    L v = det^-1 sum_ab d_a (det K_ab d_b v), K = J^-1 J^-T; returned as a
    function of the point, the map coefficients and the parametric derivatives.
    """
    x1, x2 = sympy.symbols("x1 x2")
    c = sympy.symbols("c0:8")
    F = [c[0] + c[1] * x1 + c[2] * x2 + c[3] * x1 * x2, c[4] + c[5] * x1 + c[6] * x2 + c[7] * x1 * x2]
    U = sympy.Function("U")(x1, x2)
    J = sympy.Matrix([[sympy.diff(F[i], v) for v in (x1, x2)] for i in range(2)])
    det = J.det()
    Ji = J.adjugate() / det
    K = Ji * Ji.T

    def lap(v):
        g = [sympy.diff(v, x1), sympy.diff(v, x2)]
        return sum(sympy.diff(det * sum(K[a, b] * g[b] for b in range(2)), (x1, x2)[a])
                   for a in range(2)) / det

    expr = lap(lap(U))
    mis = [mi for mi in MI if sum(mi)]
    derivs = [sympy.Derivative(U, *([x1] * a + [x2] * b)) for a, b in mis]
    syms = sympy.symbols(f"d0:{len(mis)}")
    expr = expr.xreplace(dict(zip(derivs, syms)))
    assert not expr.has(sympy.Derivative)
    f = sympy.lambdify((x1, x2) + c + syms, expr, "math", cse=True)
    return f, mis


def _bilinear_coeffs(ctrl):
    p00, p01, p10, p11 = ctrl[0, 0], ctrl[0, 1], ctrl[1, 0], ctrl[1, 1]
    cx = [p00, p10 - p00, p01 - p00, p11 - p10 - p01 + p00]
    return [v[0] for v in cx] + [v[1] for v in cx]


def bilaplacian_mismatch(oracle, pert, coef, a, b, size):
    """Scaled difference between the chain-rule and divergence-form bilaplacian.

    pert: 8 control point perturbations, coef: 21 coefficients of a degree-5
    polynomial in (xi1, xi2), (a, b): evaluation point, size: map scale.
    """
    f, mis = oracle
    base = np.array([[[0, 0], [0, 1]], [[1, 0], [1, 1]]], dtype=float)
    ctrl = size * (base + np.asarray(pert, float).reshape(2, 2, 2))
    P = GeometryMap(ctrl)
    C = np.zeros((6, 6))
    it = iter(coef)
    for i in range(6):
        for j in range(6 - i):
            C[i, j] = next(it)
    pv = np.polynomial.polynomial
    param = np.empty(len(MI))
    for m, (i, j) in enumerate(MI):
        cc = pv.polyder(pv.polyder(C, i, axis=0), j, axis=1) if i or j else C
        param[m] = pv.polyval2d(a, b, cc)
    phys = inverse_chain_matrix(P, a, b)[0] @ param
    chain = phys[IDX[(4, 0)]] + 2 * phys[IDX[(2, 2)]] + phys[IDX[(0, 4)]]
    div = f(a, b, *_bilinear_coeffs(ctrl), *[param[IDX[mi]] for mi in mis])
    scale = max(1.0, np.abs(param).max() / size**4)
    return abs(chain - div) / scale


def superconvergent_closed_forms():
    """Reference roots on [-1, 1] for (7,3) and (8,3), from their radical expressions."""
    s70, s4741 = sympy.sqrt(70), sympy.sqrt(4741)
    a, b = sympy.sqrt((65 - 6 * s70) / 165), sympy.sqrt((65 + 6 * s70) / 165)
    r73 = np.array([float(sympy.N(v, 30)) for v in (-b, -a, a, b)])
    a, b = sympy.sqrt(5 * (253 - 2 * s4741) / 3003), sympy.sqrt(5 * (253 + 2 * s4741) / 3003)
    r83 = np.array([float(sympy.N(v, 30)) for v in (-b, -a, 0, a, b)])
    return {(7, 3): r73, (8, 3): r83}
