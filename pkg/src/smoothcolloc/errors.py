"""Relative error measures (L2 and Laplacian-based H^s equivalents) and convergence orders."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import BILAP, GRAD_LAP, IDX, LAP, ManufacturedSolution
from .geometry import inverse_chain_matrix, jacobian, MAX_ORDER
from .smooth_basis import SmoothSpace

MEASURES = ("L2", "H1", "H2", "H3", "H4")
CSV_HEADER = "h,eL2,eH1,eH2,eH3,eH4,oL2,oH1,oH2,oH3,oH4"


@dataclass
class ErrorReport:
    h: float
    errors: dict
    orders: dict = field(default_factory=dict)

    def row(self) -> list:
        return [self.h] + [self.errors[m] for m in MEASURES] + \
            [self.orders.get(m, float("nan")) for m in MEASURES]


def gauss_points(space1d, npts: int | None = None):
    """Gauss-Legendre nodes/weights on every knot span of [0,1]."""
    q = space1d.p + 1 if npts is None else npts
    x, w = np.polynomial.legendre.leggauss(q)
    bp = space1d.breakpoints
    a, b = bp[:-1, None], bp[1:, None]
    X = (a + (b - a) * (x + 1) / 2).ravel()
    W = ((b - a) / 2 * w).ravel()
    return X, W


def _apply(Tinv_der, op):
    return sum(c * Tinv_der[:, IDX[mi]] for mi, c in op.items())


def relative_errors(space: SmoothSpace, c: np.ndarray, exact: ManufacturedSolution,
                    h: float | None = None) -> ErrorReport:
    """||e|| / ||u|| for u, grad u, Laplace u, grad Laplace u and the bilaplacian.

    Patchwise Gauss quadrature with p+1 points per element and direction,
    weighted by |det J|; sums use compensated summation.
    """
    dom = space.domain
    X, W = gauss_points(space.space1d)
    X1, X2 = np.meshgrid(X, X, indexing="ij")
    W2 = np.outer(W, W).ravel()
    x1, x2 = X1.ravel(), X2.ravel()
    num = {m: [] for m in MEASURES}
    den = {m: [] for m in MEASURES}
    for patch, gmap in enumerate(dom.patches):
        jd = jacobian(gmap, x1, x2)
        w = W2 * np.abs(jd.det)
        Tinv = inverse_chain_matrix(gmap, x1, x2, MAX_ORDER)
        par = space.evaluate_coefficients(patch, c, x1, x2, MAX_ORDER)
        D = np.einsum("pab,pb->pa", Tinv, par)
        xy = gmap(x1, x2)
        x, y = xy[:, 0], xy[:, 1]
        uh = {
            "L2": D[:, [0]],
            "H1": D[:, [IDX[(1, 0)], IDX[(0, 1)]]],
            "H2": _apply(D, LAP)[:, None],
            "H3": np.stack([_apply(D, GRAD_LAP[0]), _apply(D, GRAD_LAP[1])], axis=1),
            "H4": _apply(D, BILAP)[:, None],
        }
        ue = {
            "L2": exact.u(x, y)[:, None],
            "H1": exact.grad(x, y),
            "H2": exact.lap(x, y)[:, None],
            "H3": exact.grad_lap(x, y),
            "H4": exact.bilap(x, y)[:, None],
        }
        for m in MEASURES:
            num[m].append(w * np.sum((ue[m] - uh[m]) ** 2, axis=1))
            den[m].append(w * np.sum(ue[m] ** 2, axis=1))
    errs = {}
    for m in MEASURES:
        d = math.fsum(np.concatenate(den[m]))
        if d < 1e-28:
            raise ValueError(f"exact solution has vanishing {m} measure")
        errs[m] = math.sqrt(math.fsum(np.concatenate(num[m])) / d)
    return ErrorReport(h=space.h if h is None else h, errors=errs)


def convergence_orders(reports: list) -> list:
    """Fill ``orders`` with log2(e(h)/e(h/2)) between consecutive halvings of h."""
    for prev, cur in zip(reports, reports[1:]):
        ratio = prev.h / cur.h
        for m in MEASURES:
            a, b = prev.errors[m], cur.errors[m]
            if a > 0 and b > 0 and ratio > 1:
                cur.orders[m] = math.log(a / b) / math.log(ratio)
            else:
                cur.orders[m] = float("nan")
    return reports


def _fmt(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{v:.10g}"


def to_csv(reports: list) -> str:
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    for r in reports:
        out.write(",".join(_fmt(v) for v in r.row()) + "\n")
    return out.getvalue()
