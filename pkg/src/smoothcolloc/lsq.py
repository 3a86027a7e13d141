"""Least-squares solvers for collocation systems and 2-norm condition estimates.

Both solvers first equilibrate the rows (unit 2-norm).  PDE rows scale like
h^-4 while value rows are O(1); without the weighting the boundary
conditions are drowned by roundoff in the PDE rows.  For square systems the
weighting does not change the solution.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DENSE_MAX_COLS = 2000


class SolveError(RuntimeError):
    pass


@dataclass
class SolveReport:
    coefficients: np.ndarray
    residual: float
    condition: float
    method: str
    shape: tuple = ()

    def as_dict(self) -> dict:
        return {"residual": self.residual, "condition": self.condition, "method": self.method,
                "rows": self.shape[0], "cols": self.shape[1]}


def _as_system(system):
    if hasattr(system, "A"):
        A, b = system.A, system.b
    else:
        A, b = system
    return sp.csr_matrix(A, dtype=float), np.asarray(b, dtype=float)


def _norms(A: sp.spmatrix, axis: int) -> np.ndarray:
    return np.sqrt(np.asarray(A.multiply(A).sum(axis=axis)).ravel())


def equilibrate_rows(A: sp.csr_matrix, b: np.ndarray):
    """Scale every row (and rhs entry) to unit row 2-norm."""
    rn = _norms(A, 1)
    if np.any(rn == 0):
        raise SolveError("matrix has zero rows")
    W = sp.diags(1.0 / rn)
    return (W @ A).tocsr(), b / rn


def _column_scaling(A: sp.csr_matrix) -> np.ndarray:
    cn = _norms(A, 0)
    if np.any(cn == 0):
        raise SolveError("matrix has zero columns")
    return cn


def _extreme_eigs(matvec, solve, n: int) -> tuple[float, float]:
    """Largest and smallest eigenvalue of an SPD operator given matvec and inverse."""
    if n <= 2:
        M = np.column_stack([matvec(e) for e in np.eye(n)])
        ev = np.linalg.eigvalsh((M + M.T) / 2)
        return float(ev[-1]), float(ev[0])
    op = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
    inv = spla.LinearOperator((n, n), matvec=solve, dtype=float)
    v0 = np.ones(n) / np.sqrt(n)
    lmax = spla.eigsh(op, k=1, which="LM", v0=v0, tol=1e-6, return_eigenvectors=False)[0]
    imax = spla.eigsh(inv, k=1, which="LM", v0=v0, tol=1e-6, return_eigenvectors=False)[0]
    return float(lmax), float(1.0 / imax)


class _AugmentedLU:
    """Sparse LU of [[a I, A D], [D A^T, 0]] with D the inverse column norms.

    Solves least-squares problems (with iterative refinement) and applies
    (A^T A)^{-1} for condition estimates.
    """

    def __init__(self, A: sp.csr_matrix, alpha: float = 1e-6):
        self.m, self.n = A.shape
        self.cn = _column_scaling(A)
        AD = (A @ sp.diags(1.0 / self.cn)).tocsc()
        # AD has unit columns; a small identity block keeps the factorization
        # close to the least-squares problem, refinement recovers the accuracy
        self.alpha = alpha
        self.K = sp.bmat([[alpha * sp.identity(self.m), AD], [AD.T, None]], format="csc")
        self.lu = spla.splu(self.K, permc_spec="COLAMD", diag_pivot_thresh=1.0)

    def _solve(self, rhs: np.ndarray, max_refine: int = 20) -> np.ndarray:
        z = self.lu.solve(rhs)
        last = np.inf
        for _ in range(max_refine):
            dz = self.lu.solve(rhs - self.K @ z)
            z = z + dz
            step = np.linalg.norm(dz) / max(np.linalg.norm(z), 1e-300)
            if not np.isfinite(step) or step < 1e-15 or step > 0.9 * last:
                break
            last = step
        return z

    def lstsq(self, b: np.ndarray) -> np.ndarray:
        y = self._solve(np.concatenate([b, np.zeros(self.n)]))[self.m:]
        if not np.all(np.isfinite(y)):
            raise SolveError("sparse factorization failed (rank deficient matrix?)")
        return y / self.cn

    def normal_inverse(self, x: np.ndarray) -> np.ndarray:
        """(A^T A)^{-1} x."""
        y = self._solve(np.concatenate([np.zeros(self.m), x / self.cn]))[self.m:]
        return -y / self.alpha / self.cn


def condition_qr(A, R=None, factor: _AugmentedLU | None = None) -> float:
    """2-norm condition number sigma_max / sigma_min of A (via A^T A)."""
    A = sp.csr_matrix(A)
    n = A.shape[1]
    if R is not None:
        def solve(x):
            y = scipy.linalg.solve_triangular(R, x, trans="T")
            return scipy.linalg.solve_triangular(R, y)
    else:
        solve = (factor or _AugmentedLU(A)).normal_inverse
    lmax, lmin = _extreme_eigs(lambda x: A.T @ (A @ x), solve, n)
    return float(np.sqrt(lmax / lmin))


def solve_qr(system, rank_tol: float = 1e-12, condition: bool = True,
             dense_max_cols: int = DENSE_MAX_COLS, row_scaling: bool = True) -> SolveReport:
    """Least-squares solution of min ||W (A c - b)|| with W the row equilibration.

    Small systems use a dense Householder QR with column pivoting.  Larger
    ones use a sparse LU factorization of the column-scaled augmented system
    (equivalent to the QR solution in exact arithmetic) followed by iterative
    refinement; the method tag records which path was taken.  ``condition``
    is kappa_2 of the matrix that is factored (W A).
    """
    A0, b0 = _as_system(system)
    m, n = A0.shape
    if m < n:
        raise SolveError(f"underdetermined system {m} x {n}")
    A, b = equilibrate_rows(A0, b0) if row_scaling else (A0, b0)
    cond = np.nan
    if n < dense_max_cols:
        Ad = A.toarray()
        Q, R, piv = scipy.linalg.qr(Ad, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        bad = np.flatnonzero(d < rank_tol * d[0]) if d.size else []
        if len(bad):
            raise SolveError(f"rank deficient matrix; near-dependent columns {sorted(piv[bad])[:10]}")
        c = np.empty(n)
        c[piv] = scipy.linalg.solve_triangular(R, Q.T @ b)
        if condition:
            # A P = Q R, so sigma(A) = sigma(R)
            cond = float(np.linalg.cond(Ad)) if n <= 2 else condition_qr(Ad[:, piv], R)
        method = "QR"
    else:
        fac = _AugmentedLU(A)
        c = fac.lstsq(b)
        if condition:
            cond = condition_qr(A, factor=fac)
        method = "augmented-LU"
    res = float(np.linalg.norm(A0 @ c - b0))
    return SolveReport(c, res, cond, method, (m, n))


def solve_scaled_normal(system, condition: bool = True, row_scaling: bool = True) -> SolveReport:
    """Diagonally scaled normal equations D A^T A D y = D A^T b, c = D y.

    ``condition`` is kappa_2(D A^T A D) (rows equilibrated as in solve_qr).
    """
    A0, b0 = _as_system(system)
    m, n = A0.shape
    if m < n:
        raise SolveError(f"underdetermined system {m} x {n}")
    A, b = equilibrate_rows(A0, b0) if row_scaling else (A0, b0)
    cn = _column_scaling(A)
    AD = (A @ sp.diags(1.0 / cn)).tocsr()
    N = (AD.T @ AD).tocsc()
    rhs = AD.T @ b
    if n < DENSE_MAX_COLS:
        try:
            cf = scipy.linalg.cho_factor(N.toarray())
        except np.linalg.LinAlgError as exc:
            raise SolveError(f"normal matrix is not positive definite: {exc}") from None
        y = scipy.linalg.cho_solve(cf, rhs)
        solve = lambda x: scipy.linalg.cho_solve(cf, x)  # noqa: E731
    else:
        lu = spla.splu(N)
        y = lu.solve(rhs)
        solve = lu.solve
    if not np.all(np.isfinite(y)):
        raise SolveError("normal equations could not be solved")
    c = y / cn
    cond = np.nan
    if condition:
        lmax, lmin = _extreme_eigs(lambda x: N @ x, solve, n)
        if lmin <= 0:
            raise SolveError("normal matrix is not positive definite")
        cond = lmax / lmin
    res = float(np.linalg.norm(A0 @ c - b0))
    return SolveReport(c, res, float(cond), "scaled-normal", (m, n))


def solve(system, method: str = "qr", **kw) -> SolveReport:
    if method == "qr":
        return solve_qr(system, **kw)
    if method in ("normal", "scaled-normal"):
        return solve_scaled_normal(system, **kw)
    raise SolveError(f"unknown method {method!r}")
