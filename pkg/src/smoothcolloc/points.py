"""Collocation points: univariate families, tensor grids, global points and equation roles."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .bspline import greville_points, make_space
from .geometry import MultiPatchDomain, SIDE_AXIS

FAMILIES = ("greville", "superconvergent")

# equation roles of global points
PDE = "pde"
VALUE = "boundary-value"
NORMAL = "boundary-normal"
NORMAL_AVG = "normal-averaged-pair"
OMIT_RING = "omitted-ring"
OMIT_CORNER = "omitted-corner-normal"
OMIT_INTERFACE = "omitted-interface"


class PointError(ValueError):
    pass


@dataclass(frozen=True)
class UnivariatePoints:
    family: str
    p: int
    r: int
    k: int
    points: np.ndarray
    provenance: tuple

    def __len__(self):
        return len(self.points)

    def is_symmetric(self, tol: float = 1e-14) -> bool:
        return bool(np.all(np.abs(self.points + self.points[::-1] - 1.0) <= tol))


def greville_1d(p: int, r: int, k: int) -> UnivariatePoints:
    pts = greville_points(make_space(p, r, k))
    return UnivariatePoints("greville", p, r, k, pts, ("greville",) * len(pts))


def _sextic_roots() -> np.ndarray:
    # 4823 y^3 - 5915 y^2 + 1665 y - 61 with y = x^2, then one Newton polish in x
    y = np.sort(np.roots([4823.0, -5915.0, 1665.0, -61.0]).real)
    x = np.sqrt(y)
    poly = np.polynomial.Polynomial([-61.0, 0.0, 1665.0, 0.0, -5915.0, 0.0, 4823.0])
    dpoly = poly.deriv()
    for _ in range(3):
        x = x - poly(x) / dpoly(x)
    return np.concatenate([-x[::-1], x])


def reference_roots(p: int, r: int) -> np.ndarray:
    """Superconvergent points on the reference interval [-1, 1]."""
    if (p, r) == (9, 4):
        return _sextic_roots()
    if (p, r) == (8, 3):
        s = np.sqrt(4741.0)
        a, b = np.sqrt(5 * (253 - 2 * s) / 3003), np.sqrt(5 * (253 + 2 * s) / 3003)
        return np.array([-b, -a, 0.0, a, b])
    if (p, r) == (7, 3):
        s = np.sqrt(70.0)
        a, b = np.sqrt((65 - 6 * s) / 165), np.sqrt((65 + 6 * s) / 165)
        return np.array([-b, -a, a, b])
    raise PointError(f"no superconvergent points known for (p, r) = ({p}, {r})")


def superconvergent_1d(p: int, r: int, k: int) -> UnivariatePoints:
    """Superconvergent points mapped to every knot span, adjusted to n = dim S^{p,r}."""
    ref = reference_roots(p, r)
    h = 1.0 / (k + 1)
    pts, tags = [], []
    removed = set()
    adjacent = set()
    if (p, r) == (9, 4) and k >= 2:
        # drop the first root right of each knot at least two spans from the ends
        for i in range(2, k):
            removed.add((i, 0))
            adjacent.add((i, 1))
    for i in range(k + 1):
        a = i * h
        for j, x in enumerate(ref):
            if (i, j) in removed:
                continue
            pts.append(a + h * (x + 1) / 2)
            tags.append("removed-adjacent" if (i, j) in adjacent else "root")
    extra = []
    if (p, r) == (9, 4):
        extra += [(0.0, "added-boundary"), (1.0, "added-boundary")]
        if k == 1:
            extra.append((0.5, "added-knot"))
        elif k == 0:
            g = greville_points(make_space(p, r, k))
            extra += [(g[1], "greville"), (g[-2], "greville")]
    else:
        g = greville_points(make_space(p, r, k))
        extra += [(g[0], "added-boundary"), (g[1], "greville"),
                  (g[-2], "greville"), (g[-1], "added-boundary")]
    for x, t in extra:
        pts.append(x)
        tags.append(t)
    order = np.argsort(pts, kind="stable")
    pts = np.asarray(pts)[order]
    tags = tuple(tags[i] for i in order)
    n = make_space(p, r, k).dim
    if len(pts) != n or np.any(np.diff(pts) <= 0):
        raise PointError(f"superconvergent set for ({p},{r},{k}) is inconsistent")
    return UnivariatePoints("superconvergent", p, r, k, pts, tags)


def univariate_points(family: str, p: int, r: int, k: int) -> UnivariatePoints:
    if family == "greville":
        return greville_1d(p, r, k)
    if family == "superconvergent":
        return superconvergent_1d(p, r, k)
    raise PointError(f"unknown point family {family!r}")


# ---------------------------------------------------------------------------
# global points


@dataclass
class GlobalPointSet:
    """Deduplicated global collocation points.

    Per point: owner patch (lowest index containing it), local indices and
    coordinates in the owner, physical position, all incarnations
    (patch, i1, i2), role and, for averaged normal rows, the partner point.
    """

    domain: MultiPatchDomain
    uni: UnivariatePoints
    owner: np.ndarray
    index: np.ndarray
    zeta: np.ndarray
    xy: np.ndarray
    incarnations: list
    on_boundary: np.ndarray
    role: list = field(default_factory=list)
    partner: np.ndarray | None = None
    normal_side: list = field(default_factory=list)

    def __len__(self):
        return len(self.owner)

    def role_counts(self) -> dict:
        out = {}
        for r in self.role:
            out[r] = out.get(r, 0) + 1
        return out

    def row_counts(self) -> dict:
        """Number of rows of each kind the point set generates."""
        c = self.role_counts()
        pde = c.get(PDE, 0)
        value = sum(1 for i in range(len(self)) if self.on_boundary[i] and self.role[i] != OMIT_INTERFACE)
        normal = c.get(NORMAL, 0) + c.get(NORMAL_AVG, 0) // 2
        return {"pde": pde, "value": value, "normal": normal, "total": pde + value + normal}

    def pde_ids(self):
        return [i for i, r in enumerate(self.role) if r == PDE]


def tensor_and_globalize(domain: MultiPatchDomain, uni: UnivariatePoints) -> GlobalPointSet:
    """Tensor grids on every patch, with points shared by patches kept once."""
    z = np.asarray(uni.points)
    n = len(z)
    npatch = len(domain.patches)
    parent = {}

    def find(x):
        while parent.get(x, x) != x:
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            lo, hi = min(ra, rb), max(ra, rb)
            parent[hi] = lo

    for e in domain.inner_edges:
        fa, fb = e.frames
        for j in range(n):
            ia = fa.index_to_xi(0, j, n)
            ib = fb.index_to_xi(0, j, n)
            # along parameter of both incarnations in the common frame
            ta = _frame_along(fa, z[ia[0]], z[ia[1]])
            tb = _frame_along(fb, z[ib[0]], z[ib[1]])
            if abs(ta - tb) <= 1e-14:
                union((fa.patch,) + tuple(map(int, ia)), (fb.patch,) + tuple(map(int, ib)))
    groups = {}
    for p in range(npatch):
        for i1 in range(n):
            for i2 in range(n):
                node = (p, i1, i2)
                groups.setdefault(find(node), []).append(node)
    reps = sorted(groups)
    owner = np.array([r[0] for r in reps])
    index = np.array([(r[1], r[2]) for r in reps])
    zeta = z[index]
    xy = np.empty((len(reps), 2))
    for p in range(npatch):
        sel = owner == p
        if np.any(sel):
            xy[sel] = domain.patches[p](zeta[sel, 0], zeta[sel, 1])
    boundary_sides = {(f.patch, f.side) for e in domain.boundary_edges for f in e.frames}
    incarnations = [sorted(groups[r]) for r in reps]
    on_b = np.array([any(_on_sides(i1, i2, n, p, boundary_sides) for p, i1, i2 in inc)
                     for inc in incarnations])
    return GlobalPointSet(domain=domain, uni=uni, owner=owner, index=index, zeta=zeta, xy=xy,
                          incarnations=incarnations, on_boundary=on_b)


def _frame_along(frame, x1, x2) -> float:
    """Along coordinate in ``frame`` of the patch point (x1, x2) on the frame's edge."""
    swap = frame.swap
    f1, f2 = frame.flips
    v1 = 1.0 - x1 if f1 else x1
    v2 = 1.0 - x2 if f2 else x2
    return v1 if swap else v2


def _sides_of(i1, i2, n):
    out = []
    if i2 == 0:
        out.append(0)
    if i1 == n - 1:
        out.append(1)
    if i2 == n - 1:
        out.append(2)
    if i1 == 0:
        out.append(3)
    return out


def _on_sides(i1, i2, n, patch, sides) -> bool:
    return any((patch, s) in sides for s in _sides_of(i1, i2, n))


def assign_roles(domain: MultiPatchDomain, pts: GlobalPointSet, smoothness: int = 4) -> GlobalPointSet:
    """Split the global points into PDE, boundary and omitted points.

    * boundary points give a value row each; normal rows exist except at
      boundary vertices, and the two points next to a boundary vertex share
      one averaged normal row;
    * interior points one layer away from a physical boundary side (in any
      patch containing them) are omitted, all other interior points get a
      PDE row;
    * for smoothness 3, points on inner edges are not used at all.
    """
    n = len(pts.uni)
    if n < 4:
        raise PointError("need at least 4 points per direction")
    boundary_sides = {(f.patch, f.side) for e in domain.boundary_edges for f in e.frames}
    where = {}
    for g, inc in enumerate(pts.incarnations):
        for node in inc:
            where[node] = g
    m = len(pts)
    role = [None] * m
    partner = np.full(m, -1)
    normal_side = [None] * m

    interface_pts = set()
    if smoothness < 4:
        for e in domain.inner_edges:
            f = e.frames[0]
            for j in range(n):
                interface_pts.add(where[(f.patch,) + tuple(map(int, f.index_to_xi(0, j, n)))])

    for g in range(m):
        if g in interface_pts:
            role[g] = OMIT_INTERFACE
            continue
        if pts.on_boundary[g]:
            role[g] = NORMAL
            for p, i1, i2 in pts.incarnations[g]:
                for s in _sides_of(i1, i2, n):
                    if (p, s) in boundary_sides and normal_side[g] is None:
                        normal_side[g] = (p, s)
            continue
        ring = False
        for p, i1, i2 in pts.incarnations[g]:
            for s, (a, b) in ((0, (None, 1)), (1, (n - 2, None)), (2, (None, n - 2)), (3, (1, None))):
                if (p, s) in boundary_sides and ((a is not None and i1 == a) or (b is not None and i2 == b)):
                    ring = True
        role[g] = OMIT_RING if ring else PDE

    # corners and averaged pairs at every boundary vertex
    for v in domain.vertices:
        if v.kind != "boundary":
            continue
        p, c = v.corners[0]
        ci = {0: (0, 0), 1: (n - 1, 0), 2: (n - 1, n - 1), 3: (0, n - 1)}[c]
        gc = where[(p,) + ci]
        if role[gc] != OMIT_INTERFACE:
            role[gc] = OMIT_CORNER
        nbrs = []
        for ei, end in v.edges:
            e = domain.edges[ei]
            if e.kind != "boundary":
                continue
            f = e.frames[0]
            j = 1 if end == 0 else n - 2
            nbrs.append(where[(f.patch,) + tuple(map(int, f.index_to_xi(0, j, n)))])
        if len(nbrs) != 2:
            raise PointError(f"boundary vertex {v.index} needs two boundary edges")
        a, b = nbrs
        if role[a] == OMIT_INTERFACE or role[b] == OMIT_INTERFACE:
            continue
        role[a] = role[b] = NORMAL_AVG
        partner[a], partner[b] = b, a
    return dataclasses.replace(pts, role=role, partner=partner, normal_side=normal_side)


def avoid_nonsmooth_loci(pts: GlobalPointSet, space) -> GlobalPointSet:
    """Reject PDE points where the discrete solution may lack fourth derivatives.

    Only relevant for C^3 spaces: PDE points must avoid inner knot lines and
    inner edges.  C^4 spaces are returned unchanged.
    """
    if space.s >= 4:
        return pts
    knots = space.space1d.breakpoints[1:-1]
    z = pts.zeta
    for g in pts.pde_ids():
        if knots.size and np.min(np.abs(z[g][:, None] - knots[None, :])) < 1e-12:
            raise PointError(f"PDE point {g} lies on an inner knot line")
        if len(pts.incarnations[g]) > 1:
            raise PointError(f"PDE point {g} lies on an inner edge of a C^3 space")
    return pts


def collocation_points(domain: MultiPatchDomain, family: str, p: int, r: int, k: int,
                       smoothness: int = 4) -> GlobalPointSet:
    uni = univariate_points(family, p, r, k)
    return assign_roles(domain, tensor_and_globalize(domain, uni), smoothness)
