"""Collocation system for the biharmonic equation with Dirichlet and normal-derivative data.

Rows: bilaplacian at PDE points, values at boundary points, outward normal
derivatives at boundary points (averaged over the two points next to each
boundary vertex).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .geometry import (MultiPatchDomain, inverse_chain_matrix, multi_indices, outward_normal,
                       MAX_ORDER)
from .points import GlobalPointSet, NORMAL, NORMAL_AVG, PDE, OMIT_INTERFACE
from .smooth_basis import SmoothSpace, SmoothBasisFunction, eval_smooth

MI = multi_indices(MAX_ORDER)
IDX = {mi: i for i, mi in enumerate(MI)}
BILAP = {(4, 0): 1.0, (2, 2): 2.0, (0, 4): 1.0}
LAP = {(2, 0): 1.0, (0, 2): 1.0}
GRAD_LAP = ({(3, 0): 1.0, (1, 2): 1.0}, {(2, 1): 1.0, (0, 3): 1.0})


class AssemblyError(ValueError):
    pass


@dataclass
class ManufacturedSolution:
    """Exact solution with the derivatives needed for data and error measures.

    Each callable maps physical coordinates (x, y) to values; ``grad`` and
    ``grad_lap`` return arrays of shape (npts, 2).
    """

    u: Callable
    grad: Callable
    lap: Callable
    grad_lap: Callable
    bilap: Callable
    name: str = "custom"

    @classmethod
    def trig(cls) -> "ManufacturedSolution":
        """u = cos(x/2) sin(y/2); then Laplace u = -u/2 and the bilaplacian is u/4."""
        def u(x, y):
            return np.cos(x / 2) * np.sin(y / 2)

        def grad(x, y):
            return np.stack([-0.5 * np.sin(x / 2) * np.sin(y / 2),
                             0.5 * np.cos(x / 2) * np.cos(y / 2)], axis=-1)

        return cls(u=u, grad=grad, lap=lambda x, y: -0.5 * u(x, y),
                   grad_lap=lambda x, y: -0.5 * grad(x, y),
                   bilap=lambda x, y: 0.25 * u(x, y), name="trig")

    @classmethod
    def polynomial(cls, coeffs) -> "ManufacturedSolution":
        """u = sum_ij coeffs[i, j] x^i y^j."""
        P = np.polynomial.polynomial
        c = np.asarray(coeffs, dtype=float)

        def d(a, b):
            cc = c
            if a:
                cc = P.polyder(cc, a, axis=0)
            if b:
                cc = P.polyder(cc, b, axis=1)
            return lambda x, y: P.polyval2d(x, y, cc)

        dx, dy = d(1, 0), d(0, 1)
        lx, ly = d(3, 0), d(1, 2)
        mx, my = d(2, 1), d(0, 3)
        d20, d02 = d(2, 0), d(0, 2)
        d40, d22, d04 = d(4, 0), d(2, 2), d(0, 4)
        return cls(u=d(0, 0),
                   grad=lambda x, y: np.stack([dx(x, y), dy(x, y)], axis=-1),
                   lap=lambda x, y: d20(x, y) + d02(x, y),
                   grad_lap=lambda x, y: np.stack([lx(x, y) + ly(x, y), mx(x, y) + my(x, y)], axis=-1),
                   bilap=lambda x, y: d40(x, y) + 2 * d22(x, y) + d04(x, y),
                   name="polynomial")

    def normal_derivative(self, x, y, normal):
        return np.einsum("ij,ij->i", self.grad(x, y), normal)


def get_solution(spec: str) -> ManufacturedSolution:
    """``trig`` / ``builtin:trig``, or ``poly:<file>`` with a JSON coefficient matrix."""
    import json
    from pathlib import Path

    if spec in ("trig", "builtin:trig"):
        return ManufacturedSolution.trig()
    if spec.startswith("poly:"):
        path = Path(spec[5:])
        if not path.is_file():
            raise AssemblyError(f"coefficient file {path} not found")
        return ManufacturedSolution.polynomial(json.loads(path.read_text()))
    raise AssemblyError(f"unknown solution {spec!r}")


@dataclass
class CollocationSystem:
    A: sp.csr_matrix
    b: np.ndarray
    row_point: np.ndarray
    row_kind: list
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.A.shape


def physical_derivatives(space: SmoothSpace, patch: int, xi1, xi2, order: int = MAX_ORDER,
                         coeffs=None, columns=None) -> np.ndarray:
    """Physical partials of the basis functions (or of sum c_i phi_i) at patch points.

    Returns (npts, nmi, ncols) for basis functions, (npts, nmi) with ``coeffs``;
    the multi-index axis follows :func:`multi_indices`.
    """
    Tinv = inverse_chain_matrix(space.domain.patches[patch], xi1, xi2, order)
    if coeffs is not None:
        par = space.evaluate_coefficients(patch, coeffs, xi1, xi2, order)
        return np.einsum("pab,pb->pa", Tinv, par)
    par = space.evaluate(patch, xi1, xi2, order, columns=columns)
    return np.einsum("pab,pbf->paf", Tinv, par)


def physical_derivatives_fn(fn: SmoothBasisFunction, space: SmoothSpace, patch: int, xi1, xi2,
                            order: int = MAX_ORDER) -> np.ndarray:
    """Physical partials (npts, nmi) of one basis function."""
    Tinv = inverse_chain_matrix(space.domain.patches[patch], xi1, xi2, order)
    par = eval_smooth(fn, space, patch, xi1, xi2, order)
    return np.einsum("pab,pb->pa", Tinv, par)


def _combine(weights: np.ndarray, rows: list) -> sp.csr_matrix:
    """sum_a diag(weights[:, a]) @ rows[a]."""
    out = None
    for a, B in enumerate(rows):
        w = weights[:, a]
        if not np.any(w) or B.nnz == 0:
            continue
        term = sp.diags(w) @ B
        out = term if out is None else out + term
    return out.tocsr()


def _op_weights(Tinv: np.ndarray, op: dict) -> np.ndarray:
    return sum(c * Tinv[:, IDX[mi], :] for mi, c in op.items())


def pde_rows(space: SmoothSpace, patch: int, zeta: np.ndarray) -> sp.csr_matrix:
    """Bilaplacian of every basis function at patch points (rows) ."""
    Tinv = inverse_chain_matrix(space.domain.patches[patch], zeta[:, 0], zeta[:, 1], MAX_ORDER)
    rows = space.tensor_rows(zeta[:, 0], zeta[:, 1], MAX_ORDER)
    return (_combine(_op_weights(Tinv, BILAP), rows) @ space.patch_matrix(patch)).tocsr()


def value_rows(space: SmoothSpace, patch: int, zeta: np.ndarray) -> sp.csr_matrix:
    B = space.tensor_rows(zeta[:, 0], zeta[:, 1], 0)[0]
    return (B @ space.patch_matrix(patch)).tocsr()


def normal_rows(space: SmoothSpace, patch: int, side: int, zeta: np.ndarray):
    """Outward normal derivative rows n . J^{-T} grad; returns (rows, normals)."""
    dom = space.domain
    nrm = outward_normal(dom, patch, side, zeta[:, 0], zeta[:, 1])
    Tinv = inverse_chain_matrix(dom.patches[patch], zeta[:, 0], zeta[:, 1], 1)
    w = nrm[:, 0:1] * Tinv[:, 1, :] + nrm[:, 1:2] * Tinv[:, 2, :]
    rows = space.tensor_rows(zeta[:, 0], zeta[:, 1], 1)
    return (_combine(w, rows) @ space.patch_matrix(patch)).tocsr(), nrm


def _normal_zeta(pts: GlobalPointSet, g: int):
    """Local coordinates of point g in the patch of its boundary side."""
    patch, side = pts.normal_side[g]
    z = pts.uni.points
    for p, i1, i2 in pts.incarnations[g]:
        if p == patch:
            return patch, side, np.array([z[i1], z[i2]])
    raise AssemblyError(f"point {g} has no incarnation on patch {patch}")


def assemble(domain: MultiPatchDomain, space: SmoothSpace, pts: GlobalPointSet,
             data: ManufacturedSolution) -> CollocationSystem:
    """Assemble all rows: PDE rows by point id, then value rows, then normal rows."""
    if pts.uni.p != space.p or len(pts.uni) != space.n:
        raise AssemblyError("point set and space do not match")
    blocks, rhs, rpt, kinds = [], [], [], []

    pde = np.array(pts.pde_ids(), dtype=int)
    value = np.array([g for g in range(len(pts))
                      if pts.on_boundary[g] and pts.role[g] != OMIT_INTERFACE], dtype=int)
    for kind, ids in (("pde", pde), ("value", value)):
        if ids.size == 0:
            continue
        mats = {}
        for patch in np.unique(pts.owner[ids]):
            sel = ids[pts.owner[ids] == patch]
            z = pts.zeta[sel]
            M = pde_rows(space, patch, z) if kind == "pde" else value_rows(space, patch, z)
            mats[patch] = (sel, M)
        # restore point-id order
        allsel = np.concatenate([s for s, _ in mats.values()])
        M = sp.vstack([m for _, m in mats.values()]).tocsr()
        order = np.argsort(allsel, kind="stable")
        blocks.append(M[order])
        xy = pts.xy[allsel[order]]
        rhs.append(data.bilap(xy[:, 0], xy[:, 1]) if kind == "pde" else data.u(xy[:, 0], xy[:, 1]))
        rpt.append(allsel[order])
        kinds += [kind] * ids.size

    # normal rows (single or averaged pair, emitted at the lower id of a pair)
    nrows, nrhs, npt = [], [], []
    for g in range(len(pts)):
        role = pts.role[g]
        if role == NORMAL:
            members = [g]
        elif role == NORMAL_AVG and g < pts.partner[g]:
            members = [g, int(pts.partner[g])]
        else:
            continue
        row, val = None, 0.0
        wgt = 1.0 / len(members)
        for m in members:
            patch, side, z = _normal_zeta(pts, m)
            R, nrm = normal_rows(space, patch, side, z[None, :])
            xy = domain.patches[patch](z[0:1], z[1:2])
            row = wgt * R if row is None else row + wgt * R
            val += wgt * data.normal_derivative(xy[:, 0], xy[:, 1], nrm)[0]
        nrows.append(row)
        nrhs.append(val)
        npt.append(g)
    if nrows:
        blocks.append(sp.vstack(nrows).tocsr())
        rhs.append(np.array(nrhs))
        rpt.append(np.array(npt))
        kinds += ["normal"] * len(nrows)
    A = sp.vstack(blocks).tocsr()
    A.eliminate_zeros()
    b = np.concatenate(rhs)
    if A.shape[1] != space.dim:
        raise AssemblyError("column count differs from the space dimension")
    return CollocationSystem(A=A, b=b, row_point=np.concatenate(rpt), row_kind=kinds,
                             meta={"domain": domain.name, "family": pts.uni.family,
                                   "p": space.p, "r": space.r, "k": space.k, "s": space.s})


def dump_system(system: CollocationSystem, matrix_path, rhs_path) -> None:
    """Coordinate-format matrix text (row col value) and rhs vector, 17 significant digits."""
    C = system.A.tocoo()
    with open(matrix_path, "w") as fh:
        fh.write(f"% {C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for i, j, v in zip(C.row, C.col, C.data):
            fh.write(f"{i} {j} {v:.17g}\n")
    np.savetxt(rhs_path, system.b, fmt="%.17g")
