"""Univariate and tensor-product B-spline spaces on [0, 1].

Spaces use uniform open knot vectors: the end knots have multiplicity p+1
and each of the k inner knots i/(k+1) has multiplicity p-r, so that the
splines are C^r across inner knots.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

MAX_DERIV = 4


@dataclass(frozen=True)
class SplineSpace1D:
    """Spline space S_h^{p,r} on [0,1] with k uniformly spaced inner knots."""

    degree: int
    regularity: int
    inner_knot_count: int
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p, r, k = self.degree, self.regularity, self.inner_knot_count
        if p < 1 or k < 0 or r < 0:
            raise ValueError(f"invalid spline space (p={p}, r={r}, k={k})")
        if r >= p:
            raise ValueError(f"regularity r={r} must be below the degree p={p}")
        inner = np.repeat(np.arange(1, k + 1) / (k + 1), p - r)
        kv = np.concatenate([np.zeros(p + 1), inner, np.ones(p + 1)])
        kv.setflags(write=False)
        object.__setattr__(self, "knots", kv)

    @property
    def p(self) -> int:
        return self.degree

    @property
    def r(self) -> int:
        return self.regularity

    @property
    def k(self) -> int:
        return self.inner_knot_count

    @property
    def mesh_size(self) -> float:
        return 1.0 / (self.k + 1)

    h = mesh_size

    @property
    def dim(self) -> int:
        return self.p + 1 + self.k * (self.p - self.r)

    @cached_property
    def breakpoints(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.k + 2)

    def __len__(self) -> int:
        return self.dim


def make_space(p: int, r: int, k: int) -> SplineSpace1D:
    return SplineSpace1D(p, r, k)


@dataclass
class BasisEval:
    """Nonzero basis functions at one or more points.

    ``first[i]`` is the index of the first of the p+1 functions that may be
    nonzero at point i, and ``values[i, d, j]`` is the d-th derivative of
    function ``first[i] + j`` there.
    """

    first: np.ndarray
    values: np.ndarray

    @property
    def span(self) -> np.ndarray:
        return self.first + self.values.shape[-1] - 1


def find_span(space: SplineSpace1D, x) -> np.ndarray:
    """Knot span index (right-continuous; x = 1 uses the last span)."""
    x = np.asarray(x, dtype=float)
    if np.any((x < 0.0) | (x > 1.0)) or np.any(np.isnan(x)):
        raise ValueError("evaluation points must lie in [0, 1]")
    p, kv = space.p, space.knots
    span = np.searchsorted(kv, x, side="right") - 1
    return np.clip(span, p, len(kv) - p - 2)


def eval_basis(space: SplineSpace1D, x, max_deriv: int = 0) -> BasisEval:
    """Values and derivatives of the nonzero B-splines at the points ``x``.

    Vectorised form of the classical derivative recurrence (Piegl & Tiller,
    algorithm A2.3).  Works for scalar or 1D array input; the leading axis of
    the result is always the point axis.
    """
    if not 0 <= max_deriv <= space.p:
        raise ValueError("max_deriv must lie in [0, p]")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p, kv = space.p, space.knots
    span = find_span(space, x)
    m = x.size

    ndu = np.zeros((m, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.zeros((m, p + 1))
    right = np.zeros((m, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - kv[span + 1 - j]
        right[:, j] = kv[span + j] - x
        saved = np.zeros(m)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    ders = np.zeros((m, max_deriv + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]
    for r in range(p + 1):
        a = np.zeros((m, 2, p + 1))
        a[:, 0, 0] = 1.0
        s1, s2 = 0, 1
        for k in range(1, max_deriv + 1):
            d = np.zeros(m)
            rk, pk = r - k, p - k
            if r >= k:
                a[:, s2, 0] = a[:, s1, 0] / ndu[:, pk + 1, rk]
                d = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / ndu[:, pk + 1, rk + j]
                d = d + a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[:, s2, k] = -a[:, s1, k - 1] / ndu[:, pk + 1, r]
                d = d + a[:, s2, k] * ndu[:, r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, max_deriv + 1):
        ders[:, k, :] *= fac
        fac *= p - k
    return BasisEval(first=span - p, values=ders)


def basis_matrix(space: SplineSpace1D, x, deriv: int = 0) -> np.ndarray:
    """Dense matrix ``M[i, j] = d^deriv N_j(x_i)``."""
    ev = eval_basis(space, x, deriv)
    x = np.atleast_1d(x)
    M = np.zeros((x.size, space.dim))
    rows = np.repeat(np.arange(x.size), space.p + 1)
    cols = (ev.first[:, None] + np.arange(space.p + 1)).ravel()
    M[rows, cols] = ev.values[:, deriv, :].ravel()
    return M


def basis_matrices(space: SplineSpace1D, x, max_deriv: int) -> np.ndarray:
    """Stack of dense matrices ``M[d, i, j] = d^d N_j(x_i)`` for d <= max_deriv."""
    ev = eval_basis(space, x, max_deriv)
    x = np.atleast_1d(x)
    M = np.zeros((max_deriv + 1, x.size, space.dim))
    rows = np.repeat(np.arange(x.size), space.p + 1)
    cols = (ev.first[:, None] + np.arange(space.p + 1)).ravel()
    for d in range(max_deriv + 1):
        M[d, rows, cols] = ev.values[:, d, :].ravel()
    return M


def greville_points(space: SplineSpace1D) -> np.ndarray:
    """Knot averages (t_{j+1} + ... + t_{j+p}) / p, j = 0..n-1."""
    p, kv = space.p, space.knots
    csum = np.concatenate([[0.0], np.cumsum(kv)])
    g = (csum[p + 1: p + 1 + space.dim] - csum[1: 1 + space.dim]) / p
    g[0], g[-1] = 0.0, 1.0
    return g


class Interpolator:
    """Spline interpolation at the Greville abscissae of a space.

    The collocation matrix is nonsingular by Schoenberg-Whitney; it is
    factored once and reused for every right-hand side.
    """

    def __init__(self, space: SplineSpace1D):
        import scipy.linalg

        self.space = space
        self.nodes = greville_points(space)
        self._lu = scipy.linalg.lu_factor(basis_matrix(space, self.nodes))
        self._solve = scipy.linalg.lu_solve

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        return self._solve(self._lu, values)


def evaluate(space: SplineSpace1D, coeffs: np.ndarray, x, deriv: int = 0) -> np.ndarray:
    """Evaluate the spline with the given coefficients (last axis = points)."""
    return basis_matrix(space, x, deriv) @ coeffs


def insert_knot(space_knots: np.ndarray, p: int, coeffs: np.ndarray, t: float):
    """Boehm knot insertion; returns the refined knot vector and coefficients."""
    kv = np.asarray(space_knots, dtype=float)
    c = np.asarray(coeffs, dtype=float)
    s = np.searchsorted(kv, t, side="right") - 1
    new_c = np.zeros((c.shape[0] + 1,) + c.shape[1:])
    new_c[: s - p + 1] = c[: s - p + 1]
    new_c[s + 1:] = c[s:]
    for i in range(s - p + 1, s + 1):
        a = (t - kv[i]) / (kv[i + p] - kv[i])
        new_c[i] = a * c[i] + (1.0 - a) * c[i - 1]
    return np.insert(kv, s + 1, t), new_c


def eval_knots(kv: np.ndarray, p: int, coeffs: np.ndarray, x) -> np.ndarray:
    """Evaluate a spline on an arbitrary open knot vector (de Boor)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    kv = np.asarray(kv, dtype=float)
    out = np.empty(x.size)
    last = len(kv) - p - 2
    for i, xi in enumerate(x):
        s = min(max(np.searchsorted(kv, xi, side="right") - 1, p), last)
        d = [coeffs[j + s - p] for j in range(p + 1)]
        for r in range(1, p + 1):
            for j in range(p, r - 1, -1):
                a = (xi - kv[j + s - p]) / (kv[j + 1 + s - r] - kv[j + s - p])
                d[j] = (1.0 - a) * d[j - 1] + a * d[j]
        out[i] = d[p]
    return out
