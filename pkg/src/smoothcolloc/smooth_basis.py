"""C^s-smooth multi-patch spline spaces (s = 4, or s = 3) as patch, edge and vertex subspaces.

Every basis function is stored by its tensor B-spline coefficients on the
patches it touches.  Index conventions inside an edge frame: ``j1`` counts
coefficient layers away from the edge, ``j2`` runs along it.

Edge functions of an inner edge have the traces

    f_L = c_L * sum_{l=L}^{s} binom(l, L) alpha^L beta^(l-L) d^(l-L) g(eta2) M_l(eta1)

with g a B-spline of S^{p-L, r+s-L}, c_L = p!/(p-L)!/h^L and M_l the jet basis
of the first s+1 B-splines (d^m M_l(0) = delta_{ml}).  Vertex functions near a
vertex of valency >= 3 come from the kernel of a small homogeneous system that
forces the contributions of neighbouring edges to agree on the shared
(s+1) x (s+1) corner block of coefficients.
"""
from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from fractions import Fraction

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .bspline import Interpolator, basis_matrices, eval_basis, make_space, SplineSpace1D
from .geometry import (MultiPatchDomain, inverse_chain_matrix, multi_indices, CORNER_XI,
                       EdgeFrame)

log = logging.getLogger(__name__)

DROP_TOL = 1e-14
KIND_ORDER = {"patch": 0, "edge": 1, "vertex": 2}


class SpaceError(ValueError):
    """The smooth space cannot be built for the given inputs."""


@dataclass
class SmoothBasisFunction:
    """One global basis function.

    ``support`` maps patch index -> (flat indices, values) of the nonzero
    coefficients on the n x n tensor grid (flat index = i1 * n + i2).
    ``key`` identifies the function for deduplication.
    """

    origin: tuple
    key: tuple
    support: dict
    id: int = -1

    @property
    def kind(self) -> str:
        return self.origin[0]

    def grid(self, patch: int, n: int) -> np.ndarray:
        g = np.zeros(n * n)
        if patch in self.support:
            idx, val = self.support[patch]
            g[idx] = val
        return g.reshape(n, n)


def _sparse_support(grids: dict) -> dict:
    out = {}
    for patch, g in grids.items():
        flat = g.ravel()
        m = np.abs(flat).max() if flat.size else 0.0
        if m == 0.0:
            continue
        idx = np.flatnonzero(np.abs(flat) > DROP_TOL * m)
        out[patch] = (idx, flat[idx].copy())
    return out


def _bspline_function(origin, patch, i1, i2, n) -> SmoothBasisFunction:
    idx = np.array([i1 * n + i2])
    return SmoothBasisFunction(origin=origin, key=("B", patch, int(i1), int(i2)),
                               support={patch: (idx, np.ones(1))})


# ---------------------------------------------------------------------------
# edge functions


def jet_basis(space: SplineSpace1D, s: int) -> np.ndarray:
    """Coefficients ``M[i, j]`` of M_i = sum_j M[i, j] N_j, j <= s, with d^m M_i(0) = delta."""
    D = eval_basis(space, 0.0, s).values[0][:, : s + 1]  # D[m, j] = d^m N_j(0)
    return np.linalg.inv(D).T


def jet_basis_closed_form(p: int, s: int, h: float) -> np.ndarray:
    """Closed form M_i = sum_{j>=i} binom(j, i) h^i / (p (p-1) ... (p-i+1)) N_j."""
    M = np.zeros((s + 1, s + 1))
    for i in range(s + 1):
        for j in range(i, s + 1):
            M[i, j] = math.comb(j, i) * h**i / math.perm(p, i)
    return M


@functools.lru_cache(maxsize=None)
def exact_end_jets(p: int, r: int, k: int, order: int) -> tuple:
    """Exact d^m N_j(0+) for m, j <= order as nested tuples of Fractions.

    The knot vectors are symmetric, so d^m N_j(1-) = (-1)^m d^m N_{n-1-j}(0+).
    """
    t = [Fraction(0)] * (p + 1)
    for i in range(1, k + 1):
        t += [Fraction(i, k + 1)] * (p - r)
    t += [Fraction(1)] * (p + 1)

    @functools.lru_cache(maxsize=None)
    def der(j: int, q: int, m: int) -> Fraction:
        if m > q:
            return Fraction(0)
        if q == 0:
            return Fraction(1) if t[j] <= 0 < t[j + 1] else Fraction(0)
        d1, d2 = t[j + q] - t[j], t[j + q + 1] - t[j + 1]
        out = Fraction(0)
        if m == 0:
            # Cox-de Boor at x = 0
            if d1:
                out += (0 - t[j]) / d1 * der(j, q - 1, 0)
            if d2:
                out += t[j + q + 1] / d2 * der(j + 1, q - 1, 0)
        else:
            if d1:
                out += q / d1 * der(j, q - 1, m - 1)
            if d2:
                out -= q / d2 * der(j + 1, q - 1, m - 1)
        return out

    n = p + 1 + k * (p - r)
    return tuple(tuple(der(j, p, m) if j < n else Fraction(0) for j in range(order + 1))
                 for m in range(order + 1))


def _exact_poly(coeffs) -> list:
    return [Fraction(float(c)) for c in coeffs]


def _poly_mul(a: list, b: list) -> list:
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] += x * y
    return out


def _poly_der_at(c: list, q: int, x0: int) -> Fraction:
    """q-th derivative of sum c_i x^i at x0 in {0, 1}."""
    if x0 == 0:
        return c[q] * math.factorial(q) if q < len(c) else Fraction(0)
    return sum((ci * math.perm(i, q) for i, ci in enumerate(c) if i >= q), Fraction(0))


def _lower_solve(T, F) -> list:
    """Exact forward substitution T X = F (T lower triangular, lists of Fractions)."""
    m = len(T)
    X = []
    for i in range(m):
        row = [F[i][c] - sum((T[i][q] * X[q][c] for q in range(i)), Fraction(0))
               for c in range(len(F[i]))]
        X.append([v / T[i][i] for v in row])
    return X


class EdgeFunctionFactory:
    """Builds the coefficient grids of the edge functions of one inner edge."""

    def __init__(self, space: "SmoothSpaceBuilder", edge_index: int):
        self.sb = space
        self.edge = edge_index
        self.gluing = space.domain.gluing(edge_index)
        self._cache = {}

    def trace_space(self, L: int) -> SplineSpace1D:
        sb = self.sb
        return make_space(sb.p - L, sb.r + sb.s - L, sb.k)

    def trace_dim(self, L: int) -> int:
        return self.trace_space(L).dim

    def along_coefficients(self, L: int, tau: int) -> np.ndarray:
        """A[l - L][j, j2]: S^{p,r} coefficients of c_L binom alpha^L beta^(l-L) d^(l-L) g_j2."""
        key = (L, tau)
        if key in self._cache:
            return self._cache[key]
        sb = self.sb
        tsp = self.trace_space(L)
        out = []
        # structural zeros: N_i and g_j2 with disjoint supports
        T, t, q = sb.space.knots, tsp.knots, tsp.degree
        mask = ((T[: sb.n, None] < t[None, q + 1: q + 1 + tsp.dim])
                & (T[sb.p + 1: sb.p + 1 + sb.n, None] > t[None, : tsp.dim]))
        for l in range(L, sb.s + 1):
            vals = self.along_values(L, l, tau, sb.nodes)
            A = sb.interp.coefficients(vals) * mask
            A += sb.interp.coefficients(vals - sb.node_matrix @ A) * mask
            # coefficients next to the edge ends from endpoint jets: relative
            # accuracy there matters for the vertex systems
            for end, rows in ((0, slice(0, sb.s + 1)), (1, slice(sb.n - 1, sb.n - sb.s - 2, -1))):
                A[rows] = scipy.linalg.solve_triangular(
                    sb.end_jets[end], self._end_derivatives(L, l, tau, float(end)), lower=True)
            chk = self.along_values(L, l, tau, sb.check_points)
            res = np.abs(sb.check_matrix @ A - chk).max()
            scale = max(1.0, np.abs(chk).max())
            if res > 1e-9 * scale:
                raise SpaceError(
                    f"edge {self.edge}: trace level {L} leaves the spline space "
                    f"(residual {res:.2e}); geometry is not bilinear-like")
            out.append(A)
        self._cache[key] = out
        return out

    def exact_end_coefficients(self, L: int, tau: int, end: int) -> list:
        """Exact A[l - L][i][jj]: coefficient of the i-th B-spline from edge end ``end``
        in the along factor of g_jj (jj counted from the same end), i <= s, jj <= 2s."""
        key = ("exact", L, tau, end)
        if key in self._cache:
            return self._cache[key]
        sb = self.sb
        s, tsp = sb.s, self.trace_space(L)
        sign = -1 if end else 1
        main = exact_end_jets(sb.p, sb.r, sb.k, s)
        T = [[sign**m * main[m][i] for i in range(s + 1)] for m in range(s + 1)]
        G = exact_end_jets(tsp.degree, tsp.regularity, sb.k, 2 * s)
        ncol = min(2 * s + 1, tsp.dim)
        a = _exact_poly(self.gluing.alpha[tau])
        b = _exact_poly(self.gluing.beta[tau])
        h = Fraction(1, sb.k + 1)
        out = []
        for l in range(L, s + 1):
            d0 = l - L
            P = [Fraction(1)]
            for _ in range(L):
                P = _poly_mul(P, a)
            for _ in range(d0):
                P = _poly_mul(P, b)
            c = Fraction(math.perm(sb.p, L) * math.comb(l, L)) / h**L
            F = []
            for m in range(s + 1):
                row = [Fraction(0)] * ncol
                for q in range(m + 1):
                    d = d0 + m - q
                    if d > 2 * s:
                        continue
                    pq = _poly_der_at(P, q, end) * math.comb(m, q)
                    if pq == 0:
                        continue
                    for jj in range(ncol):
                        gd = G[d][jj]
                        if gd:
                            row[jj] += pq * sign**d * gd
                F.append([c * v for v in row])
            out.append(_lower_solve(T, F))
        self._cache[key] = out
        return out

    def _end_derivatives(self, L: int, l: int, tau: int, x0: float) -> np.ndarray:
        """d^m of the along factor at x0 (rows m = 0..s, columns j2), product rule."""
        sb = self.sb
        tsp = self.trace_space(L)
        d0 = l - L
        top = min(d0 + sb.s, tsp.degree)
        G = basis_matrices(tsp, x0, top)[:, 0, :]
        poly = np.polynomial.polynomial
        pc = poly.polymul(poly.polypow(self.gluing.alpha[tau], L),
                          poly.polypow(self.gluing.beta[tau], d0))
        c = math.perm(sb.p, L) / sb.h**L * math.comb(l, L)
        out = np.zeros((sb.s + 1, tsp.dim))
        for m in range(sb.s + 1):
            for q in range(m + 1):
                if d0 + m - q > top:
                    continue
                pq = poly.polyval(x0, poly.polyder(pc, q)) if q else poly.polyval(x0, pc)
                out[m] += math.comb(m, q) * pq * G[d0 + m - q]
        return c * out

    def along_values(self, L: int, l: int, tau: int, x) -> np.ndarray:
        sb = self.sb
        tsp = self.trace_space(L)
        G = basis_matrices(tsp, x, l - L)[l - L]
        a = self.gluing.alpha_at(tau, x)
        b = self.gluing.beta_at(tau, x)
        c = math.perm(sb.p, L) / sb.h**L * math.comb(l, L)
        return (c * a**L * b ** (l - L))[:, None] * G

    def functions(self, L: int, j2s) -> list:
        """Per-patch coefficient grids of f_{L, j2} for every j2 in ``j2s``."""
        sb = self.sb
        n = sb.n
        res = []
        frames = self.gluing.frames
        coeffs = [self.along_coefficients(L, tau) for tau in (0, 1)]
        for j2 in j2s:
            grids = {}
            for tau, f in enumerate(frames):
                e = np.zeros((n, n))
                for l in range(L, sb.s + 1):
                    e[: sb.s + 1, :] += np.outer(sb.M[l], coeffs[tau][l - L][:, j2])
                grids[f.patch] = f.grid_to_xi(e)
            res.append(grids)
        return res

    def formula(self, L: int, j2: int, tau: int, eta1, eta2, d1: int = 0, d2: int = 0):
        """Direct evaluation of d_eta1^d1 d_eta2^d2 f_{L,j2} in the frame of side tau."""
        sb = self.sb
        eta1 = np.atleast_1d(np.asarray(eta1, float))
        eta2 = np.atleast_1d(np.asarray(eta2, float))
        Mv = basis_matrices(sb.space, eta1, d1)[d1][:, : sb.s + 1] @ sb.M.T  # (npts, s+1)
        out = np.zeros(eta1.size)
        tsp = self.trace_space(L)
        for l in range(L, sb.s + 1):
            # product rule in eta2 on the along factor
            total = np.zeros(eta1.size)
            c = math.perm(sb.p, L) / sb.h**L * math.comb(l, L)
            a0, a1 = self.gluing.alpha[tau]
            b0, b1 = self.gluing.beta[tau]
            G = basis_matrices(tsp, eta2, l - L + d2)
            for q in range(d2 + 1):
                # q derivatives on the polynomial part alpha^L beta^(l-L)
                poly = np.polynomial.polynomial
                pc = poly.polymul(poly.polypow([a0, a1], L), poly.polypow([b0, b1], l - L))
                pv = poly.polyval(eta2, poly.polyder(pc, q)) if q else poly.polyval(eta2, pc)
                total += math.comb(d2, q) * pv * G[l - L + d2 - q][:, j2]
            out += c * total * Mv[:, l]
        return out


# ---------------------------------------------------------------------------
# space construction


@dataclass
class SmoothSpace:
    domain: MultiPatchDomain
    s: int
    p: int
    r: int
    k: int
    functions: list
    kernel_dims: dict = field(default_factory=dict)
    vertex_residuals: dict = field(default_factory=dict)

    @cached_property
    def space1d(self) -> SplineSpace1D:
        return make_space(self.p, self.r, self.k)

    @property
    def n(self) -> int:
        return self.space1d.dim

    @property
    def h(self) -> float:
        return self.space1d.h

    @property
    def dim(self) -> int:
        return len(self.functions)

    def __len__(self):
        return self.dim

    def counts(self) -> dict:
        out = {}
        for f in self.functions:
            key = f.origin[:2]
            out[key] = out.get(key, 0) + 1
        return out

    def summary(self) -> dict:
        by_kind = {"patch": 0, "edge": 0, "vertex": 0}
        for f in self.functions:
            by_kind[f.kind] += 1
        return by_kind

    def patch_matrix(self, patch: int) -> sp.csc_matrix:
        """Sparse matrix C (n^2 x dim) with patch coefficients of every function."""
        cache = self.__dict__.setdefault("_pm", {})
        if patch not in cache:
            rows, cols, vals = [], [], []
            for f in self.functions:
                if patch in f.support:
                    idx, v = f.support[patch]
                    rows.append(idx)
                    cols.append(np.full(idx.size, f.id))
                    vals.append(v)
            if rows:
                rows, cols, vals = map(np.concatenate, (rows, cols, vals))
            C = sp.csc_matrix((vals, (rows, cols)), shape=(self.n * self.n, self.dim))
            cache[patch] = C
        return cache[patch]

    def coefficient_matrix(self) -> sp.csc_matrix:
        return sp.vstack([self.patch_matrix(i) for i in range(len(self.domain.patches))]).tocsc()

    def tensor_rows(self, x1, x2, order: int) -> list:
        """Sparse tensor B-spline derivative matrices (npts x n^2), one per multi-index."""
        return tensor_rows(self.space1d, x1, x2, order)

    def evaluate(self, patch: int, x1, x2, order: int = 0, columns=None) -> np.ndarray:
        """Parametric derivatives of all basis functions: array (npts, nmi, dim)."""
        rows = self.tensor_rows(x1, x2, order)
        C = self.patch_matrix(patch)
        if columns is not None:
            C = C[:, columns]
        return np.stack([(B @ C).toarray() for B in rows], axis=1)

    def evaluate_coefficients(self, patch: int, c: np.ndarray, x1, x2, order: int = 0):
        """Parametric derivatives of u_h = sum c_i phi_i: array (npts, nmi)."""
        rows = self.tensor_rows(x1, x2, order)
        g = self.patch_matrix(patch) @ c
        return np.stack([B @ g for B in rows], axis=1)


def tensor_rows(space: SplineSpace1D, x1, x2, order: int) -> list:
    x1 = np.atleast_1d(np.asarray(x1, float))
    x2 = np.atleast_1d(np.asarray(x2, float))
    p, n = space.p, space.dim
    m = min(order, p)
    e1, e2 = eval_basis(space, x1, m), eval_basis(space, x2, m)
    npts = x1.size
    i1 = e1.first[:, None, None] + np.arange(p + 1)[None, :, None]
    i2 = e2.first[:, None, None] + np.arange(p + 1)[None, None, :]
    cols = (i1 * n + i2).reshape(npts, -1)
    rows = np.repeat(np.arange(npts), (p + 1) ** 2)
    out = []
    for a1, a2 in multi_indices(order):
        if a1 > m or a2 > m:
            out.append(sp.csr_matrix((npts, n * n)))
            continue
        vals = (e1.values[:, a1, :, None] * e2.values[:, a2, None, :]).reshape(npts, -1)
        out.append(sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(npts, n * n)))
    return out


def eval_smooth(fn: SmoothBasisFunction, space: SmoothSpace, patch: int, xi1, xi2,
                max_deriv: int = 0) -> np.ndarray:
    """Value and parametric derivatives of one basis function on one patch.

    Returns (npts, nmi) in :func:`multi_indices` order; zeros off the support.
    """
    x1 = np.atleast_1d(np.asarray(xi1, float))
    if patch not in fn.support:
        return np.zeros((x1.size, len(multi_indices(max_deriv))))
    g = fn.grid(patch, space.n).ravel()
    return np.stack([B @ g for B in tensor_rows(space.space1d, x1, xi2, max_deriv)], axis=1)


class ParameterError(SpaceError):
    """Unsupported (s, p, r) combination or domain topology."""


def check_parameters(domain: MultiPatchDomain | None, s: int, p: int, r: int) -> None:
    if s == 4:
        if p < 9 or not 4 <= r <= p - 5:
            raise ParameterError("C^4 spaces need p >= 9 and 4 <= r <= p-5")
    elif s == 3:
        if p < 7 or r != 3:
            raise ParameterError("C^3 spaces need p >= 7 and r = 3")
        if domain is not None and any(v.valency >= 3 for v in domain.vertices):
            raise ParameterError("C^3 spaces are only supported without vertices of valency >= 3")
    else:
        raise ParameterError(f"unsupported smoothness s={s}")


class SmoothSpaceBuilder:
    """Holds shared data while the subspaces of a smooth space are built."""

    def __init__(self, domain: MultiPatchDomain, s: int, p: int, r: int, k: int):
        check_parameters(domain, s, p, r)
        self.domain, self.s, self.p, self.r, self.k = domain, s, p, r, k
        self.space = make_space(p, r, k)
        self.n = self.space.dim
        self.h = self.space.h
        if self.n < 2 * s + 2:
            raise SpaceError(f"mesh too coarse: n={self.n} < {2 * s + 2}")
        self.interp = Interpolator(self.space)
        self.nodes = self.interp.nodes
        self.node_matrix = basis_matrices(self.space, self.nodes, 0)[0]
        # end_jets[e][m, i] = d^m of the i-th B-spline counted from end e, at that end
        self.end_jets = (basis_matrices(self.space, 0.0, s)[:, 0, : s + 1],
                         basis_matrices(self.space, 1.0, s)[:, 0, ::-1][:, : s + 1])
        # check points: 3 per element, off the interpolation nodes
        bp = self.space.breakpoints
        self.check_points = np.concatenate(
            [bp[i] + (bp[i + 1] - bp[i]) * np.array([0.17, 0.53, 0.91]) for i in range(len(bp) - 1)])
        self.check_matrix = basis_matrices(self.space, self.check_points, 0)[0]
        self.M = jet_basis_closed_form(p, s, self.h)
        self.M_exact = [[Fraction(math.comb(j, i)) / (k + 1)**i / math.perm(p, i) if j >= i
                         else Fraction(0) for j in range(s + 1)] for i in range(s + 1)]
        self.factories = {e.index: EdgeFunctionFactory(self, e.index) for e in domain.inner_edges}
        self.reserved = self._reserved_keys()
        self.kernel_dims, self.vertex_residuals = {}, {}

    # -- index helpers ------------------------------------------------------

    def frame_of(self, edge, patch) -> EdgeFrame:
        for f in self.domain.edges[edge].frames:
            if f.patch == patch:
                return f
        raise KeyError((edge, patch))

    def along_index(self, dim: int, j: int, end: int) -> int:
        """Frame along index of the j-th coefficient counted from edge end ``end``."""
        return j if end == 0 else dim - 1 - j

    def slot_keys(self, edge_index: int, end: int) -> list:
        """Atomic keys of the functions of one edge near one of its ends."""
        e = self.domain.edges[edge_index]
        s = self.s
        keys = []
        if e.kind == "inner":
            fac = self.factories[edge_index]
            for L in range(s + 1):
                dim = fac.trace_dim(L)
                for j in range(2 * s - L + 1):
                    keys.append(("E", edge_index, L, self.along_index(dim, j, end)))
        else:
            f = e.frames[0]
            for t in range(s + 1):
                for j in range(2 * s - t + 1):
                    i1, i2 = f.index_to_xi(t, self.along_index(self.n, j, end), self.n)
                    keys.append(("B", f.patch, int(i1), int(i2)))
        return keys

    def _reserved_keys(self) -> dict:
        owner = {}
        for v in self.domain.vertices:
            if v.valency < 3:
                continue
            for ei, end in v.edges:
                for key in self.slot_keys(ei, end):
                    if key in owner and owner[key] != v.index:
                        raise SpaceError(
                            "mesh too coarse: vertex subspaces overlap; refine the mesh")
                    owner[key] = v.index
        return owner

    def edge_function(self, origin, edge_index, L, j2) -> SmoothBasisFunction:
        grids = self.factories[edge_index].functions(L, [j2])[0]
        return SmoothBasisFunction(origin=origin, key=("E", edge_index, L, j2),
                                   support=_sparse_support(grids))

    def keep(self, key) -> bool:
        return key not in self.reserved


def build_patch_subspace(sb: SmoothSpaceBuilder, patch: int) -> list:
    s, n = sb.s, sb.n
    rng = range(s + 1, n - s - 1)
    return [_bspline_function(("patch", patch, i1, i2), patch, i1, i2, n)
            for i1 in rng for i2 in rng]


def build_boundary_edge_subspace(sb: SmoothSpaceBuilder, edge_index: int) -> list:
    e = sb.domain.edges[edge_index]
    if e.kind != "boundary":
        raise SpaceError(f"edge {edge_index} is not a boundary edge")
    f = e.frames[0]
    s, n = sb.s, sb.n
    out = []
    for j1 in range(s + 1):
        for j2 in range(2 * s + 1 - j1, n + j1 - 2 * s - 1):
            i1, i2 = f.index_to_xi(j1, j2, n)
            fn = _bspline_function(("edge", edge_index, j1, j2), f.patch, i1, i2, n)
            if sb.keep(fn.key):
                out.append(fn)
    return out


def build_inner_edge_subspace(sb: SmoothSpaceBuilder, edge_index: int) -> list:
    e = sb.domain.edges[edge_index]
    if e.kind != "inner":
        raise SpaceError(f"edge {edge_index} is not an inner edge")
    fac = sb.factories[edge_index]
    s = sb.s
    out = []
    for L in range(s + 1):
        dim = fac.trace_dim(L)
        j2s = [j for j in range(2 * s + 1 - L, dim - (2 * s + 1 - L))
               if sb.keep(("E", edge_index, L, j))]
        for j2, grids in zip(j2s, fac.functions(L, j2s)):
            out.append(SmoothBasisFunction(origin=("edge", edge_index, L, j2),
                                           key=("E", edge_index, L, j2),
                                           support=_sparse_support(grids)))
    return out


def build_boundary_vertex_subspace(sb: SmoothSpaceBuilder, vertex_index: int) -> list:
    v = sb.domain.vertices[vertex_index]
    if v.kind != "boundary":
        raise SpaceError(f"vertex {vertex_index} is not a boundary vertex")
    if v.valency >= 3:
        return _kernel_subspace(sb, vertex_index)
    s, n = sb.s, sb.n
    out = []
    if v.valency == 1:
        (patch, corner), = v.corners
        c1, c2 = CORNER_XI[corner]
        for a in range(2 * s + 1):
            for b in range(2 * s + 1 - a):
                i1 = n - 1 - a if c1 else a
                i2 = n - 1 - b if c2 else b
                fn = _bspline_function(("vertex", vertex_index, a, b), patch, i1, i2, n)
                if sb.keep(fn.key):
                    out.append(fn)
        return out
    # valency 2: the single inner edge through the vertex
    inner = [(ei, end) for ei, end in v.edges if sb.domain.edges[ei].kind == "inner"]
    if len(inner) != 1:
        raise SpaceError(f"vertex {vertex_index}: unexpected edge configuration")
    ei, end = inner[0]
    fac = sb.factories[ei]
    for L in range(s + 1):
        dim = fac.trace_dim(L)
        for j in range(2 * s - L + 1):
            j2 = sb.along_index(dim, j, end)
            if sb.keep(("E", ei, L, j2)):
                out.append(sb.edge_function(("vertex", vertex_index, "E", L, j2), ei, L, j2))
    for f in sb.domain.edges[ei].frames:
        for j1 in range(s + 1, 2 * s + 1):
            for j in range(2 * s - j1 + 1):
                i1, i2 = f.index_to_xi(j1, sb.along_index(n, j, end), n)
                fn = _bspline_function(("vertex", vertex_index, "B", f.patch, j1, j), f.patch,
                                       i1, i2, n)
                if sb.keep(fn.key):
                    out.append(fn)
    return out


def build_inner_vertex_subspace(sb: SmoothSpaceBuilder, vertex_index: int) -> list:
    v = sb.domain.vertices[vertex_index]
    if v.kind != "inner":
        raise SpaceError(f"vertex {vertex_index} is not an inner vertex")
    if v.valency < 3:
        raise SpaceError(f"inner vertex {vertex_index} has valency {v.valency} < 3")
    return _kernel_subspace(sb, vertex_index)


def _slot_grids(sb: SmoothSpaceBuilder, edge_index: int, end: int) -> list:
    """(key, {patch: grid}) for every unknown of one edge near one end."""
    e = sb.domain.edges[edge_index]
    s, n = sb.s, sb.n
    out = []
    if e.kind == "inner":
        fac = sb.factories[edge_index]
        for L in range(s + 1):
            dim = fac.trace_dim(L)
            j2s = [sb.along_index(dim, j, end) for j in range(2 * s - L + 1)]
            for j2, grids in zip(j2s, fac.functions(L, j2s)):
                out.append((("E", edge_index, L, j2), grids))
    else:
        for key in sb.slot_keys(edge_index, end):
            g = np.zeros((n, n))
            g[key[2], key[3]] = 1.0
            out.append((key, {key[1]: g}))
    return out


def _corner_box(grid: np.ndarray, corner: int, s: int) -> np.ndarray:
    c1, c2 = CORNER_XI[corner]
    g = grid[::-1, :] if c1 else grid
    g = g[:, ::-1] if c2 else g
    return g[: s + 1, : s + 1]


def _exact_box(sb: SmoothSpaceBuilder, key, patch: int, corner: int, end: int) -> np.ndarray:
    """Exact corner block (Fractions) of one unknown on one patch."""
    s, n = sb.s, sb.n
    c1, c2 = CORNER_XI[corner]
    box = np.full((s + 1, s + 1), Fraction(0), dtype=object)
    if key[0] == "B":
        i1, i2 = key[2], key[3]
        b1, b2 = (n - 1 - i1 if c1 else i1), (n - 1 - i2 if c2 else i2)
        if b1 <= s and b2 <= s:
            box[b1, b2] = Fraction(1)
        return box
    _, ei, L, j2 = key
    fac = sb.factories[ei]
    frames = fac.gluing.frames
    tau = next(t for t, f in enumerate(frames) if f.patch == patch)
    f = frames[tau]
    jj = j2 if end == 0 else fac.trace_dim(L) - 1 - j2
    X = fac.exact_end_coefficients(L, tau, end)
    for i in range(s + 1):
        for j in range(s + 1):
            val = sum((sb.M_exact[l][i] * X[l - L][j][jj] for l in range(L, s + 1)), Fraction(0))
            i1, i2 = f.index_to_xi(i, sb.along_index(n, j, end), n)
            box[n - 1 - i1 if c1 else i1, n - 1 - i2 if c2 else i2] = val
    return box


def vertex_system(sb: SmoothSpaceBuilder, vertex_index: int, exact: bool = False):
    """Homogeneous system E x = 0 over the unknowns of a vertex.

    Returns (E, unknowns, slot_of[, E_exact]) where unknowns is a list of
    (key, {patch: grid}).  One block of (s+1)^2 equations per patch corner:
    the corner coefficients contributed by the two edges of that corner must
    agree.  With ``exact`` the same matrix is also returned in Fractions.
    """
    v = sb.domain.vertices[vertex_index]
    s = sb.s
    unknowns, slot_of = [], []
    for si, (ei, end) in enumerate(v.edges):
        for item in _slot_grids(sb, ei, end):
            unknowns.append(item)
            slot_of.append(si)
    slot_of = np.array(slot_of)
    nb = (s + 1) ** 2
    blocks, xblocks = [], []
    for patch, corner in v.corners:
        sides = [si for si, (ei, _) in enumerate(v.edges)
                 if any(f.patch == patch for f in sb.domain.edges[ei].frames)]
        if len(sides) != 2:
            raise SpaceError(f"vertex {vertex_index}: corner of patch {patch} needs two edges")
        B = np.zeros((nb, len(unknowns)))
        X = np.full((nb, len(unknowns)), Fraction(0), dtype=object)
        for u, (key, grids) in enumerate(unknowns):
            if patch in grids and slot_of[u] in sides:
                sign = 1 if slot_of[u] == sides[0] else -1
                B[:, u] = sign * _corner_box(grids[patch], corner, s).ravel()
                if exact:
                    end = v.edges[slot_of[u]][1]
                    X[:, u] = sign * _exact_box(sb, key, patch, corner, end).ravel()
        blocks.append(B)
        xblocks.append(X)
    if exact:
        return np.vstack(blocks), unknowns, slot_of, np.vstack(xblocks)
    return np.vstack(blocks), unknowns, slot_of


def _kernel_subspace(sb: SmoothSpaceBuilder, vertex_index: int) -> list:
    E, unknowns, slot_of, E_exact = vertex_system(sb, vertex_index, exact=True)
    v = sb.domain.vertices[vertex_index]
    K = kernel_basis(E, E_exact=E_exact)
    sb.kernel_dims[vertex_index] = K.shape[1]
    s, n = sb.s, sb.n
    out = []
    for j in range(K.shape[1]):
        x = K[:, j]
        grids = {}
        boxes = {}
        for u in np.flatnonzero(x):
            for patch, g in unknowns[u][1].items():
                grids[patch] = grids.get(patch, 0.0) + x[u] * g
        for patch, corner in v.corners:
            if patch in grids:
                g = grids[patch]
                c1, c2 = CORNER_XI[corner]
                sl1 = slice(n - 1 - s, n) if c1 else slice(0, s + 1)
                sl2 = slice(n - 1 - s, n) if c2 else slice(0, s + 1)
                g[sl1, sl2] *= 0.5  # both corner edges contributed the same block
        out.append(SmoothBasisFunction(origin=("vertex", vertex_index, j),
                                       key=("V", vertex_index, j),
                                       support=_sparse_support(grids)))
    if K.size:
        Eh = E_exact.astype(float)
        El = (E_exact - np.vectorize(Fraction)(Eh)).astype(float)
        sb.vertex_residuals[vertex_index] = float(np.abs(_accurate_product(Eh, El, K)).max())
    else:
        sb.vertex_residuals[vertex_index] = 0.0
    return out


def _split(a: np.ndarray):
    c = 134217729.0 * a
    hi = c - (c - a)
    return hi, a - hi


def _accurate_product(Eh: np.ndarray, El: np.ndarray, X: np.ndarray) -> np.ndarray:
    """(Eh + El) @ X with error-free products and exact summation."""
    P = Eh[:, :, None] * X[None, :, :]
    ah, al = _split(Eh[:, :, None])
    bh, bl = _split(X[None, :, :])
    err = ((ah * bh - P) + ah * bl + al * bh) + al * bl
    terms = np.concatenate([P, err, El[:, :, None] * X[None, :, :]], axis=1)
    out = np.empty((Eh.shape[0], X.shape[1]))
    for i in range(out.shape[0]):
        for c in range(out.shape[1]):
            out[i, c] = math.fsum(terms[i, :, c])
    return out


def kernel_basis(E: np.ndarray, rtol: float = 1e-10, E_exact=None) -> np.ndarray:
    """Canonical kernel basis of E (columns), reduced echelon form with pivoting.

    With ``E_exact`` (Fractions) the basis is refined against the exact
    matrix; double precision alone leaves it off by eps / sigma_min(E).
    """
    m, nunk = E.shape
    U, sig, Vt = np.linalg.svd(E, full_matrices=True)
    smax = sig[0] if sig.size else 0.0
    cutoff = rtol * smax
    near = sig[(sig > cutoff / 10) & (sig < cutoff * 10)]
    if near.size:
        raise SpaceError(f"ambiguous vertex system rank: singular values {near} near cutoff "
                         f"{cutoff:.2e}")
    rank = int(np.sum(sig > cutoff))
    K = Vt[rank:].T  # orthonormal, nunk x dimker
    if K.shape[1] == 0:
        return K
    _, _, piv = scipy.linalg.qr(K.T, pivoting=True, mode="economic")
    cols = np.sort(piv[: K.shape[1]])
    B = np.linalg.solve(K.T[:, cols], K.T).T
    B[cols] = np.eye(len(cols))
    if E_exact is None:
        B[np.abs(B) < 1e-13] = 0.0
        return B
    Eh = E_exact.astype(float)
    El = (E_exact - np.vectorize(Fraction)(Eh)).astype(float)
    bound = np.setdiff1d(np.arange(nunk), cols)
    Q, R = np.linalg.qr(Eh[:, bound])
    for _ in range(5):
        res = _accurate_product(Eh, El, B)
        dx = scipy.linalg.solve_triangular(R, Q.T @ res)
        B[bound] -= dx
        if np.abs(dx).max() <= 1e-17 * np.abs(B).max():
            break
    return B


def assemble_space(domain: MultiPatchDomain, s: int, p: int, r: int, k: int) -> SmoothSpace:
    """Build the smooth space as the union of patch, edge and vertex subspaces."""
    sb = SmoothSpaceBuilder(domain, s, p, r, k)
    funcs = []
    for i in range(len(domain.patches)):
        funcs += build_patch_subspace(sb, i)
    for e in domain.edges:
        if e.kind == "inner":
            funcs += build_inner_edge_subspace(sb, e.index)
        else:
            funcs += build_boundary_edge_subspace(sb, e.index)
    for v in domain.vertices:
        if v.kind == "inner":
            funcs += build_inner_vertex_subspace(sb, v.index)
        else:
            funcs += build_boundary_vertex_subspace(sb, v.index)
    seen, unique = set(), []
    for f in funcs:
        if f.key in seen:
            continue
        seen.add(f.key)
        unique.append(f)
    unique.sort(key=lambda f: (KIND_ORDER[f.kind], _sort_key(f.origin[1:])))
    for i, f in enumerate(unique):
        f.id = i
    space = SmoothSpace(domain=domain, s=s, p=p, r=r, k=k, functions=unique,
                        kernel_dims=dict(sb.kernel_dims),
                        vertex_residuals=dict(sb.vertex_residuals))
    log.info("space: %d functions (%s)", space.dim, space.summary())
    return space


def _sort_key(t):
    return tuple((0, x, "") if isinstance(x, (int, np.integer)) else (1, 0, str(x)) for x in t)


# ---------------------------------------------------------------------------
# checks


def smoothness_jumps(space: SmoothSpace, samples: int = 30, order: int | None = None,
                     columns=None) -> np.ndarray:
    """Relative jumps of physical derivatives across every inner edge.

    Returns an array (dim, order+1): for each function and derivative order d,
    the largest jump of any order-d partial over all sampled edge points,
    divided by max(1, max |order-d partial| along the edge).
    """
    order = space.s if order is None else order
    dom = space.domain
    mis = multi_indices(order)
    deg = np.array([a + b for a, b in mis])
    t = (np.arange(samples) + 0.5) / samples
    cols = np.arange(space.dim) if columns is None else np.asarray(columns)
    out = np.zeros((cols.size, order + 1))
    for e in dom.inner_edges:
        vals = []
        for f in e.frames:
            x1, x2 = f.to_xi(np.zeros_like(t), t)
            par = space.evaluate(f.patch, x1, x2, order, columns=cols)
            Tinv = inverse_chain_matrix(dom.patches[f.patch], x1, x2, order)
            vals.append(np.einsum("pab,pbf->paf", Tinv, par))
        jump = np.abs(vals[0] - vals[1])
        mag = np.maximum(np.abs(vals[0]), np.abs(vals[1]))
        for d in range(order + 1):
            sel = deg == d
            scale = np.maximum(1.0, mag[:, sel].max(axis=(0, 1)))
            out[:, d] = np.maximum(out[:, d], jump[:, sel].max(axis=(0, 1)) / scale)
    return out


def check_independence(space: SmoothSpace, rtol: float = 1e-10) -> float:
    """Ratio of extreme Gram eigenvalues of the coefficient vectors; raises if dependent."""
    C = space.coefficient_matrix()
    G = (C.T @ C).toarray()
    ev = scipy.linalg.eigvalsh(G)
    ratio = ev[0] / ev[-1]
    if ratio <= rtol:
        raise SpaceError(f"basis functions are linearly dependent (Gram ratio {ratio:.2e})")
    return float(ratio)


def export_space(space: SmoothSpace) -> str:
    """Text listing: one block per function with origin tag and per-patch grids."""
    lines = [f"# smooth space s={space.s} p={space.p} r={space.r} k={space.k} "
             f"n={space.n} dim={space.dim}"]
    for f in space.functions:
        lines.append(f"function {f.id} origin {' '.join(map(str, f.origin))}")
        for patch in sorted(f.support):
            g = f.grid(patch, space.n)
            lines.append(f"patch {patch}")
            lines.extend(" ".join(f"{v:.17g}" for v in row) for row in g)
    return "\n".join(lines) + "\n"
