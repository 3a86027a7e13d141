"""Multi-patch planar domains: geometry maps, topology and interface gluing data.

Patch sides are numbered S0..S3 counterclockwise starting at xi2 = 0:

    S0: xi2 = 0,  S1: xi1 = 1,  S2: xi2 = 1,  S3: xi1 = 0

and each side is parameterized by the free coordinate in increasing order.
Corners are c0 = (0,0), c1 = (1,0), c2 = (1,1), c3 = (0,1).

Every edge is looked at through an :class:`EdgeFrame`, a signed permutation of
the parametric axes after which the edge is the image of {0} x [0,1], the
first frame coordinate points into the patch and the second runs along the
edge.  For inner edges both incident patches share the along coordinate.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .bspline import eval_basis, make_space

MAX_ORDER = 4


class GeometryError(ValueError):
    """Invalid geometry or topology."""


def multi_indices(order: int = MAX_ORDER) -> list[tuple[int, int]]:
    """Multi-indices (a1, a2) with a1 + a2 <= order, graded, a1 descending."""
    return [(a, d - a) for d in range(order + 1) for a in range(d, -1, -1)]


# ---------------------------------------------------------------------------
# geometry maps


@dataclass(frozen=True)
class GeometryMap:
    """Tensor Bernstein patch of bi-degree d; ``control[i1, i2]`` is a 2D point."""

    control: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.control, dtype=float)
        if c.ndim != 3 or c.shape[0] != c.shape[1] or c.shape[2] != 2 or c.shape[0] < 2:
            raise GeometryError("control net must have shape (d+1, d+1, 2) with d >= 1")
        c.setflags(write=False)
        object.__setattr__(self, "control", c)

    @property
    def degree(self) -> int:
        return self.control.shape[0] - 1

    @cached_property
    def _space(self):
        d = self.degree
        return make_space(d, d - 1, 0)

    def _basis(self, x, order):
        m = min(order, self.degree)
        B = eval_basis(self._space, x, m).values  # (npts, m+1, d+1)
        if m < order:
            B = np.concatenate([B, np.zeros((B.shape[0], order - m, B.shape[2]))], axis=1)
        return B

    def derivatives(self, xi1, xi2, order: int = 1) -> np.ndarray:
        """Parametric derivatives ``D[i, m, :]`` for multi-index m of multi_indices(order)."""
        x1 = np.atleast_1d(np.asarray(xi1, dtype=float))
        x2 = np.atleast_1d(np.asarray(xi2, dtype=float))
        B1, B2 = self._basis(x1, order), self._basis(x2, order)
        out = np.empty((x1.size, (order + 1) * (order + 2) // 2, 2))
        for m, (a1, a2) in enumerate(multi_indices(order)):
            out[:, m, :] = np.einsum("pi,pj,ijc->pc", B1[:, a1], B2[:, a2], self.control)
        return out

    def __call__(self, xi1, xi2) -> np.ndarray:
        return self.derivatives(xi1, xi2, 0)[:, 0, :]


@dataclass
class JacobianData:
    J: np.ndarray
    det: np.ndarray
    inv: np.ndarray
    second: np.ndarray  # (npts, 3, 2): d11 F, d12 F, d22 F


def jacobian(gmap: GeometryMap, xi1, xi2) -> JacobianData:
    """Jacobian, determinant, inverse and second derivatives of a patch map."""
    D = gmap.derivatives(xi1, xi2, 2)
    J = np.stack([D[:, 1, :], D[:, 2, :]], axis=-1)  # J[:, c, a] = d_a F_c
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(np.abs(det) < 1e-14):
        raise GeometryError("singular geometry Jacobian")
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    return JacobianData(J=J, det=det, inv=inv, second=D[:, 3:6, :])


# ---------------------------------------------------------------------------
# frames

SIDE_AXIS = {0: (1, 0.0), 1: (0, 1.0), 2: (1, 1.0), 3: (0, 0.0)}  # fixed axis, value
SIDE_CORNERS = {0: (0, 1), 1: (1, 2), 2: (3, 2), 3: (0, 3)}  # corner at along = 0, 1
CORNER_XI = {0: (0.0, 0.0), 1: (1.0, 0.0), 2: (1.0, 1.0), 3: (0.0, 1.0)}
_FRAME_BASE = {3: (False, False, False), 1: (False, True, False),
               0: (True, False, False), 2: (True, False, True)}


@dataclass(frozen=True)
class EdgeFrame:
    """Signed axis permutation putting side ``side`` of ``patch`` at eta1 = 0.

    ``reversed`` flips the along coordinate relative to the side's natural
    direction.
    """

    patch: int
    side: int
    reversed: bool = False

    @property
    def swap(self) -> bool:
        return _FRAME_BASE[self.side][0]

    @property
    def flips(self) -> tuple[bool, bool]:
        swap, f1, f2 = _FRAME_BASE[self.side]
        if swap:
            f1 ^= self.reversed
        else:
            f2 ^= self.reversed
        return f1, f2

    def to_xi(self, eta1, eta2):
        e1, e2 = np.asarray(eta1, dtype=float), np.asarray(eta2, dtype=float)
        v1, v2 = (e2, e1) if self.swap else (e1, e2)
        f1, f2 = self.flips
        return (1.0 - v1 if f1 else v1), (1.0 - v2 if f2 else v2)

    @property
    def matrix(self) -> np.ndarray:
        """P with d xi / d eta = P."""
        P = np.array([[0.0, 1.0], [1.0, 0.0]]) if self.swap else np.eye(2)
        f1, f2 = self.flips
        return np.diag([-1.0 if f1 else 1.0, -1.0 if f2 else 1.0]) @ P

    @property
    def orientation(self) -> float:
        return float(np.linalg.det(self.matrix))

    def grid_to_xi(self, e: np.ndarray) -> np.ndarray:
        """Map a coefficient grid indexed in frame order to patch (xi) order."""
        c = e.T if self.swap else e
        f1, f2 = self.flips
        if f1:
            c = c[::-1, :]
        if f2:
            c = c[:, ::-1]
        return c

    def index_to_xi(self, j1, j2, n: int):
        """Patch indices of the frame coefficient (j1, j2) for an n x n grid."""
        v1, v2 = (j2, j1) if self.swap else (j1, j2)
        f1, f2 = self.flips
        return (n - 1 - v1 if f1 else v1), (n - 1 - v2 if f2 else v2)

    def corner_at(self, along_end: int) -> int:
        """Patch corner at frame along-coordinate 0 (along_end=0) or 1."""
        lo, hi = SIDE_CORNERS[self.side]
        if self.reversed:
            lo, hi = hi, lo
        return hi if along_end else lo

    def geometry_derivs(self, gmap: GeometryMap, eta2, order: int = 1) -> np.ndarray:
        """Derivatives d_eta1^l F(xi(0, eta2)), l = 0..order, and d_eta2 F."""
        eta2 = np.atleast_1d(np.asarray(eta2, dtype=float))
        x1, x2 = self.to_xi(np.zeros_like(eta2), eta2)
        D = gmap.derivatives(x1, x2, order)
        P = self.matrix
        out = np.zeros((eta2.size, order + 2, 2))
        idx = {mi: m for m, mi in enumerate(multi_indices(order))}
        # d_eta1 acts as P[0,0] d_xi1 + P[1,0] d_xi2 (one of them is zero)
        a = 0 if P[0, 0] != 0 else 1
        sgn = P[a, 0]
        for l in range(order + 1):
            mi = (l, 0) if a == 0 else (0, l)
            out[:, l, :] = sgn**l * D[:, idx[mi], :]
        b = 1 - a
        out[:, order + 1, :] = P[b, 1] * D[:, idx[(1, 0) if b == 0 else (0, 1)], :]
        return out


# ---------------------------------------------------------------------------
# topology


@dataclass
class Edge:
    index: int
    kind: str  # "inner" | "boundary"
    frames: tuple  # EdgeFrame per incident patch
    vertices: tuple = (None, None)  # vertex index at along = 0, 1


@dataclass
class Vertex:
    index: int
    kind: str  # "inner" | "boundary"
    corners: tuple  # (patch, corner) pairs
    edges: tuple  # (edge index, along end) pairs

    @property
    def valency(self) -> int:
        return len(self.corners)


@dataclass
class MultiPatchDomain:
    patches: list
    edges: list
    vertices: list
    name: str = "domain"
    _gluing: dict = field(default_factory=dict, repr=False)

    @property
    def inner_edges(self) -> list:
        return [e for e in self.edges if e.kind == "inner"]

    @property
    def boundary_edges(self) -> list:
        return [e for e in self.edges if e.kind == "boundary"]

    def side_edge(self, patch: int, side: int) -> Edge:
        for e in self.edges:
            for f in e.frames:
                if f.patch == patch and f.side == side:
                    return e
        raise KeyError((patch, side))

    def side_is_boundary(self, patch: int, side: int) -> bool:
        return self.side_edge(patch, side).kind == "boundary"

    def gluing(self, edge_index: int) -> "InterfaceGluing":
        if edge_index not in self._gluing:
            self._gluing[edge_index] = compute_gluing(self, edge_index)
        return self._gluing[edge_index]


def _side_points(gmap: GeometryMap, side: int, t: np.ndarray) -> np.ndarray:
    axis, val = SIDE_AXIS[side]
    v = np.full_like(t, val)
    return gmap(v, t) if axis == 0 else gmap(t, v)


def build_domain(patches: Sequence[GeometryMap], interfaces, boundary=None,
                 name: str = "domain") -> MultiPatchDomain:
    """Validate topology and derive edges and vertices.

    ``interfaces`` holds tuples (patchA, sideA, patchB, sideB, orientation)
    with orientation "same" or "reversed".  ``boundary`` lists (patch, side)
    pairs; when omitted, every side not used by an interface is a boundary.
    """
    patches = list(patches)
    npatch = len(patches)
    if npatch == 0:
        raise GeometryError("domain has no patches")
    used = {}
    edges = []
    for a, sa, b, sb, orient in interfaces:
        if orient not in ("same", "reversed"):
            raise GeometryError(f"unknown orientation {orient!r}")
        for p, s in ((a, sa), (b, sb)):
            if not (0 <= p < npatch and 0 <= s < 4):
                raise GeometryError(f"invalid incidence (patch {p}, side {s})")
            if (p, s) in used:
                raise GeometryError(f"side S{s} of patch {p} used twice")
            used[(p, s)] = len(edges)
        if a == b:
            raise GeometryError("a patch cannot be glued to itself")
        edges.append(Edge(len(edges), "inner",
                          (EdgeFrame(a, sa, False), EdgeFrame(b, sb, orient == "reversed"))))
    free = [(p, s) for p in range(npatch) for s in range(4) if (p, s) not in used]
    if boundary is None:
        boundary = free
    boundary = [tuple(x) for x in boundary]
    if sorted(boundary) != sorted(free):
        raise GeometryError("boundary sides must be exactly the sides without an interface")
    for p, s in sorted(boundary):
        edges.append(Edge(len(edges), "boundary", (EdgeFrame(p, s, False),)))

    # regularity: uniform sign of det J on a 50x50 grid
    g = np.linspace(0.0, 1.0, 50)
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    for i, P in enumerate(patches):
        try:
            det = jacobian(P, X1.ravel(), X2.ravel()).det
        except GeometryError:
            raise GeometryError(f"patch {i} has a singular Jacobian") from None
        if not (np.all(det > 0) or np.all(det < 0)):
            raise GeometryError(f"patch {i} is not regular (det J changes sign)")

    # shared edge consistency
    t = np.linspace(0.0, 1.0, 21)
    for e in edges:
        if e.kind != "inner":
            continue
        fa, fb = e.frames
        pa = _side_points(patches[fa.patch], fa.side, t)
        pb = _side_points(patches[fb.patch], fb.side, 1.0 - t if fb.reversed else t)
        scale = 1.0 + np.abs(pa).max()
        if np.abs(pa - pb).max() > 1e-12 * scale:
            raise GeometryError(
                f"interface {e.index}: sides of patches {fa.patch} and {fb.patch} do not match")

    # vertices by union-find over patch corners
    parent = {(p, c): (p, c) for p in range(npatch) for c in range(4)}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in edges:
        if e.kind == "inner":
            fa, fb = e.frames
            for end in (0, 1):
                ra, rb = find((fa.patch, fa.corner_at(end))), find((fb.patch, fb.corner_at(end)))
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for node in sorted(parent):
        groups.setdefault(find(node), []).append(node)
    vertices = []
    for root in sorted(groups):
        corners = tuple(sorted(groups[root]))
        vertices.append(Vertex(len(vertices), "inner", corners, ()))
    corner_vertex = {c: v.index for v in vertices for c in v.corners}
    for e in edges:
        f = e.frames[0]
        e.vertices = (corner_vertex[(f.patch, f.corner_at(0))],
                      corner_vertex[(f.patch, f.corner_at(1))])
        if e.vertices[0] == e.vertices[1]:
            raise GeometryError(f"edge {e.index} is closed (both ends at one vertex)")
    for v in vertices:
        inc = tuple((e.index, end) for e in edges for end in (0, 1) if e.vertices[end] == v.index)
        v.edges = inc
        if any(edges[ei].kind == "boundary" for ei, _ in inc):
            v.kind = "boundary"
        patches_at = {p for p, _ in v.corners}
        if len(patches_at) != len(v.corners):
            raise GeometryError(f"vertex {v.index} touches a patch at two corners")
    # two patches share at most one edge
    seen = set()
    for e in edges:
        if e.kind == "inner":
            key = tuple(sorted(f.patch for f in e.frames))
            if key in seen:
                raise GeometryError(f"patches {key} share more than one edge")
            seen.add(key)
    return MultiPatchDomain(patches=patches, edges=edges, vertices=vertices, name=name)


def load_domain(text: str) -> MultiPatchDomain:
    """Parse a JSON domain description (see README for the format)."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GeometryError(f"malformed domain file: {exc}") from None
    try:
        patches = []
        for p in data["patches"]:
            d = int(p["degree"])
            pts = np.asarray(p["control"], dtype=float)
            if pts.shape != ((d + 1) ** 2, 2):
                raise GeometryError(f"patch needs {(d + 1) ** 2} control points")
            patches.append(GeometryMap(pts.reshape(d + 1, d + 1, 2)))
        interfaces = [(int(i["patchA"]), _side(i["sideA"]), int(i["patchB"]),
                       _side(i["sideB"]), i.get("orientation", "same"))
                      for i in data.get("interfaces", [])]
        boundary = data.get("boundary")
        if boundary is not None:
            boundary = [(int(b["patch"]), _side(b["side"])) for b in boundary]
    except (KeyError, TypeError) as exc:
        raise GeometryError(f"malformed domain file: missing or bad field {exc}") from None
    return build_domain(patches, interfaces, boundary, name=data.get("name", "domain"))


def _side(s) -> int:
    if isinstance(s, str) and s.upper().startswith("S"):
        s = s[1:]
    s = int(s)
    if not 0 <= s < 4:
        raise GeometryError(f"invalid side {s}")
    return s


def dump_domain(domain: MultiPatchDomain) -> str:
    out = {"name": domain.name, "patches": [], "interfaces": [], "boundary": []}
    for P in domain.patches:
        out["patches"].append({"degree": P.degree,
                               "control": P.control.reshape(-1, 2).tolist()})
    for e in domain.edges:
        if e.kind == "inner":
            fa, fb = e.frames
            out["interfaces"].append({"patchA": fa.patch, "sideA": f"S{fa.side}",
                                      "patchB": fb.patch, "sideB": f"S{fb.side}",
                                      "orientation": "reversed" if fb.reversed else "same"})
        else:
            f = e.frames[0]
            out["boundary"].append({"patch": f.patch, "side": f"S{f.side}"})
    return json.dumps(out, indent=1)


# ---------------------------------------------------------------------------
# built-in domains


def bilinear(p00, p10, p01, p11) -> GeometryMap:
    """Bilinear patch with F(0,0)=p00, F(1,0)=p10, F(0,1)=p01, F(1,1)=p11."""
    return GeometryMap(np.array([[p00, p01], [p10, p11]], dtype=float))


# Builtin coordinates below are multiplied by this factor.  With the trig
# solution the domains then cover about one period, so errors at the finest
# study levels stay well above roundoff.
BUILTIN_SCALE = 10.0


def _quad(p00, p10, p01, p11) -> GeometryMap:
    return bilinear(*(BUILTIN_SCALE * np.asarray(q, dtype=float) for q in (p00, p10, p01, p11)))


def _star_domain(center, outer, mids, name):
    """Patches around an inner vertex; patch i is (c, m_i, T_i, m_{i+1})."""
    v = len(outer)
    patches = [_quad(center, mids[i], mids[(i + 1) % v], outer[i]) for i in range(v)]
    interfaces = [(i, 3, (i + 1) % v, 0, "same") for i in range(v)]
    return build_domain(patches, interfaces, name=name)


def _on_segment(a, b, t):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return tuple(a + t * (b - a))


def one_patch() -> MultiPatchDomain:
    P = _quad((0.0, 0.0), (1.0, 0.0), (-0.1, 0.9), (1.2, 1.1))
    return build_domain([P], [], name="one-patch")


def three_patch() -> MultiPatchDomain:
    T = [(2.0, 0.0), (0.3, 1.7), (0.0, 0.0)]
    mids = [_on_segment(T[2], T[0], 0.45), _on_segment(T[0], T[1], 0.45),
            _on_segment(T[1], T[2], 0.55)]
    return _star_domain((0.8, 0.55), T, mids, "three-patch")


def five_patch() -> MultiPatchDomain:
    ang = np.pi / 2 + 2 * np.pi * np.arange(5) / 5 + np.array([0.0, 0.05, -0.04, 0.03, 0.0])
    rad = np.array([1.0, 1.1, 0.95, 1.05, 0.9])
    T = [tuple(r * np.array([math.cos(a), math.sin(a)])) for r, a in zip(rad, ang)]
    frac = [0.5, 0.45, 0.55, 0.48, 0.52]
    mids = [_on_segment(T[i - 1], T[i], frac[i]) for i in range(5)]
    return _star_domain((0.05, -0.03), T, mids, "five-patch")


def l_shape() -> MultiPatchDomain:
    P0 = _quad((0.0, 0.0), (2.0, 0.0), (1.0, 1.0), (2.0, 1.0))
    P1 = _quad((0.0, 0.0), (1.0, 1.0), (0.0, 2.0), (1.0, 2.0))
    return build_domain([P0, P1], [(0, 3, 1, 0, "same")], name="l-shape")


def two_squares() -> MultiPatchDomain:
    P0 = _quad((-1.0, 0.0), (0.0, 0.0), (-1.0, 1.0), (0.0, 1.0))
    P1 = _quad((0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0))
    return build_domain([P0, P1], [(0, 1, 1, 3, "same")], name="two-squares")


BUILTINS = {
    "one-patch": one_patch,
    "three-patch": three_patch,
    "five-patch": five_patch,
    "l-shape": l_shape,
    "two-squares": two_squares,
}


def get_domain(spec: str) -> MultiPatchDomain:
    """Built-in domain by name, or a path to a JSON domain file."""
    if spec in BUILTINS:
        return BUILTINS[spec]()
    path = Path(spec)
    if not path.is_file():
        raise GeometryError(f"unknown domain {spec!r} (builtins: {', '.join(BUILTINS)})")
    return load_domain(path.read_text())


# ---------------------------------------------------------------------------
# gluing data


@dataclass(frozen=True)
class InterfaceGluing:
    """Linear gluing functions of an inner edge.

    Index 0 refers to the patch with negative frame orientation (alpha < 0),
    index 1 to the other.  ``alpha[t]`` and ``beta[t]`` are coefficient pairs
    (c0, c1) of c0 + c1 * xi.
    """

    edge: int
    frames: tuple
    alpha: tuple
    beta: tuple
    lam: float

    def alpha_at(self, tau: int, xi) -> np.ndarray:
        c0, c1 = self.alpha[tau]
        return c0 + c1 * np.asarray(xi, dtype=float)

    def beta_at(self, tau: int, xi) -> np.ndarray:
        c0, c1 = self.beta[tau]
        return c0 + c1 * np.asarray(xi, dtype=float)


def _fit_linear(x, y, what, tol=1e-10):
    A = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = np.abs(A @ coef - y).max()
    if res > tol * max(1.0, np.abs(y).max()):
        raise GeometryError(f"{what} is not linear along the edge (deviation {res:.2e})")
    return float(coef[0]), float(coef[1])


def compute_gluing(domain: MultiPatchDomain, edge_index: int) -> InterfaceGluing:
    e = domain.edges[edge_index]
    if e.kind != "inner":
        raise GeometryError(f"edge {edge_index} is not an inner edge")
    xs = np.linspace(0.0, 1.0, 20)
    dets, betas = [], []
    for f in e.frames:
        D = f.geometry_derivs(domain.patches[f.patch], xs, 1)
        d1, d2 = D[:, 1, :], D[:, 2, :]
        dets.append(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        betas.append(np.einsum("ij,ij->i", d1, d2) / np.einsum("ij,ij->i", d2, d2))
    order = (0, 1) if dets[0][0] < 0 else (1, 0)
    frames = tuple(e.frames[t] for t in order)
    a = [_fit_linear(xs, dets[t], "det J") for t in order]
    b = [_fit_linear(xs, betas[t], "beta") for t in order]
    if not (np.all(dets[order[0]] < 0) and np.all(dets[order[1]] > 0)):
        raise GeometryError(f"edge {edge_index}: patches do not lie on opposite sides")

    def integ(c):  # integral of a linear polynomial
        return c[0] + c[1] / 2

    def integ2(c):  # integral of its square
        return c[0] ** 2 + c[0] * c[1] + c[1] ** 2 / 3

    lam = (integ(a[1]) - integ(a[0])) / (integ2(a[0]) + integ2(a[1]))
    if not lam > 0:
        raise GeometryError(f"edge {edge_index}: non-positive gluing scale {lam}")
    alpha = tuple((lam * c[0], lam * c[1]) for c in a)
    return InterfaceGluing(edge=edge_index, frames=frames, alpha=alpha, beta=tuple(b), lam=lam)


# truncated Taylor series in one variable, coefficient arrays of length m+1

def _ser_mul(a, b):
    m = a.shape[-1]
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
    for i in range(m):
        out[..., i:] += a[..., i:i + 1] * b[..., : m - i]
    return out


def _ser_inv(a):
    m = a.shape[-1]
    out = np.zeros_like(a)
    out[..., 0] = 1.0 / a[..., 0]
    for k in range(1, m):
        out[..., k] = -np.sum(a[..., 1: k + 1] * out[..., k - 1:: -1][..., :k], axis=-1) / a[..., 0]
    return out


def _ser_deriv(a, times=1):
    m = a.shape[-1]
    out = a.copy()
    for _ in range(times):
        out = np.concatenate([out[..., 1:] * np.arange(1, m), np.zeros(out.shape[:-1] + (1,))], axis=-1)
    return out


def transversal_traces(domain: MultiPatchDomain, edge_index: int, xs, tau: int,
                       order: int = MAX_ORDER) -> np.ndarray:
    """Geometry traces F_l(xs), l = 0..order, computed from patch ``tau`` alone.

    Returned as Taylor series in the along coordinate, shape
    (len(xs), order+1, 2, order+1); the last axis holds normalized Taylor
    coefficients so derivatives of the traces are available.
    """
    gl = domain.gluing(edge_index)
    f = gl.frames[tau]
    gmap = domain.patches[f.patch]
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    m = order
    # Taylor series in eta2 of d_eta1^l G(0, eta2): differentiate in xi along the edge
    x1, x2 = f.to_xi(np.zeros_like(xs), xs)
    D = gmap.derivatives(x1, x2, 2 * m)
    idx = {mi: k for k, mi in enumerate(multi_indices(2 * m))}
    P = f.matrix
    a = 0 if P[0, 0] != 0 else 1
    s1, s2 = P[a, 0], P[1 - a, 1]
    G = np.zeros((xs.size, m + 1, 2, m + 1))
    for l in range(m + 1):
        for k in range(m + 1):
            mi = (l, k) if a == 0 else (k, l)
            G[:, l, :, k] = (s1**l) * (s2**k) * D[:, idx[mi], :] / math.factorial(k)
    al = np.zeros((xs.size, m + 1))
    be = np.zeros((xs.size, m + 1))
    al[:, 0], al[:, 1] = gl.alpha_at(tau, xs), gl.alpha[tau][1]
    be[:, 0], be[:, 1] = gl.beta_at(tau, xs), gl.beta[tau][1]
    inv_al = _ser_inv(al)
    ratio = _ser_mul(be, inv_al)
    F = np.zeros_like(G)
    for l in range(m + 1):
        term = G[:, l]
        for _ in range(l):
            term = _ser_mul(term, inv_al[:, None, :])
        for i in range(l):
            r = ratio
            for _ in range(l - i - 1):
                r = _ser_mul(r, ratio)
            term = term - math.comb(l, i) * _ser_mul(r[:, None, :], _ser_deriv(F[:, i], l - i))
        F[:, l] = term
    return F


def validate_bilinear_like(domain: MultiPatchDomain, order: int = MAX_ORDER,
                           samples: int = 20, tol: float = 1e-8) -> dict:
    """Check the transversal geometry traces of every inner edge agree from both sides.

    Returns a report with the maximal residual; raises GeometryError when it
    exceeds ``tol``.
    """
    xs = np.linspace(0.0, 1.0, samples)
    worst, per_edge = 0.0, {}
    for e in domain.inner_edges:
        F0 = transversal_traces(domain, e.index, xs, 0, order)[..., 0]
        F1 = transversal_traces(domain, e.index, xs, 1, order)[..., 0]
        scale = max(1.0, np.abs(F0).max(), np.abs(F1).max())
        res = float(np.abs(F0 - F1).max() / scale)
        per_edge[e.index] = res
        worst = max(worst, res)
    report = {"max_residual": worst, "per_edge": per_edge, "ok": worst <= tol}
    if worst > tol:
        raise GeometryError(f"geometry is not bilinear-like (trace residual {worst:.2e})")
    return report


# ---------------------------------------------------------------------------
# higher-order chain rule


def _bimul(a, b, order):
    """Product of bivariate polynomials truncated to total degree ``order``."""
    out = np.zeros_like(a)
    for i in range(order + 1):
        for j in range(order + 1 - i):
            ai = a[:, i, j]
            if not np.any(ai):
                continue
            for k in range(order + 1 - i - j):
                for l in range(order + 1 - i - j - k):
                    out[:, i + k, j + l] += ai * b[:, k, l]
    return out


def chain_matrix(gmap: GeometryMap, xi1, xi2, order: int = MAX_ORDER) -> np.ndarray:
    """Matrix T with parametric derivatives = T @ physical derivatives.

    For f = u o F and multi-indices a, b of :func:`multi_indices`,
    d^a f = sum_b T[a, b] d^b u.  T[a, b] = a!/b! [t^a] X^b where X is the
    Taylor expansion of F(xi + t) - F(xi).
    """
    D = gmap.derivatives(xi1, xi2, order)
    npts = D.shape[0]
    mis = multi_indices(order)
    X = np.zeros((2, npts, order + 1, order + 1))
    for m, (a1, a2) in enumerate(mis):
        if a1 + a2 >= 1:
            X[:, :, a1, a2] = D[:, m, :].T / (math.factorial(a1) * math.factorial(a2))
    one = np.zeros((npts, order + 1, order + 1))
    one[:, 0, 0] = 1.0
    pw = [[one], [one]]
    for c in range(2):
        for _ in range(order):
            pw[c].append(_bimul(pw[c][-1], X[c], order))
    T = np.zeros((npts, len(mis), len(mis)))
    for b, (b1, b2) in enumerate(mis):
        prod = _bimul(pw[0][b1], pw[1][b2], order)
        fb = math.factorial(b1) * math.factorial(b2)
        for a, (a1, a2) in enumerate(mis):
            T[:, a, b] = prod[:, a1, a2] * math.factorial(a1) * math.factorial(a2) / fb
    return T


def inverse_chain_matrix(gmap: GeometryMap, xi1, xi2, order: int = MAX_ORDER) -> np.ndarray:
    """Matrix with physical derivatives = Tinv @ parametric derivatives."""
    T = chain_matrix(gmap, xi1, xi2, order)
    if np.any(np.abs(np.linalg.det(T[:, 1:3, 1:3])) < 1e-14):
        raise GeometryError("singular geometry Jacobian")
    return np.linalg.inv(T)


def outward_normal(domain: MultiPatchDomain, patch: int, side: int, xi1, xi2) -> np.ndarray:
    """Outward unit normal at points of a boundary side (pointing away from the patch)."""
    gmap = domain.patches[patch]
    jd = jacobian(gmap, xi1, xi2)
    axis = SIDE_AXIS[side][0]
    tangent = jd.J[:, :, 1 - axis]
    inward = jd.J[:, :, axis] * (1.0 if SIDE_AXIS[side][1] == 0.0 else -1.0)
    n = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1)
    n /= np.linalg.norm(n, axis=1)[:, None]
    flip = np.einsum("ij,ij->i", n, inward) > 0
    n[flip] *= -1.0
    return n
