import dataclasses

import numpy as np
import pytest
import sympy

from smoothcolloc.bspline import make_space
from smoothcolloc.geometry import get_domain
from smoothcolloc.points import (NORMAL, NORMAL_AVG, OMIT_CORNER, OMIT_INTERFACE, OMIT_RING, PDE,
                                 PointError, avoid_nonsmooth_loci, collocation_points,
                                 reference_roots, univariate_points)
from smoothcolloc.smooth_basis import assemble_space

PR = [(9, 4), (8, 3), (7, 3)]


def _sympy_roots(poly):
    x = sympy.symbols("x")
    return np.array(sorted(float(sympy.re(r)) for r in sympy.Poly(poly(x), x).nroots(n=30)))


def test_reference_roots_94():
    ref = np.array([-0.9098737952346008, -0.5963052503103114, -0.2072795685478027,
                    0.2072795685478027, 0.5963052503103114, 0.9098737952346008])
    assert np.allclose(reference_roots(9, 4), ref, atol=1e-12, rtol=0)
    exact = _sympy_roots(lambda x: 4823 * x**6 - 5915 * x**4 + 1665 * x**2 - 61)
    assert np.allclose(reference_roots(9, 4), exact, atol=1e-14, rtol=0)


def test_reference_roots_closed_forms():
    s70, s4741 = sympy.sqrt(70), sympy.sqrt(4741)
    a, b = sympy.sqrt((65 - 6 * s70) / 165), sympy.sqrt((65 + 6 * s70) / 165)
    ref73 = np.array([float(v) for v in (-b, -a, a, b)])
    assert np.allclose(reference_roots(7, 3), ref73, atol=1e-14, rtol=0)
    a, b = sympy.sqrt(5 * (253 - 2 * s4741) / 3003), sympy.sqrt(5 * (253 + 2 * s4741) / 3003)
    ref83 = np.array([float(v) for v in (-b, -a, 0, a, b)])
    assert np.allclose(reference_roots(8, 3), ref83, atol=1e-14, rtol=0)


def test_unknown_roots():
    with pytest.raises(PointError):
        reference_roots(6, 2)
    with pytest.raises(PointError):
        univariate_points("gauss", 9, 4, 3)


@pytest.mark.parametrize("p,r", PR)
@pytest.mark.parametrize("family", ["greville", "superconvergent"])
def test_cardinality(p, r, family):
    for k in range(33):
        u = univariate_points(family, p, r, k)
        assert len(u) == make_space(p, r, k).dim
        assert np.all(np.diff(u.points) > 0)
        assert u.points[0] == 0 and u.points[-1] == 1
        assert len(u.provenance) == len(u)


def test_superconvergent_94_tags():
    u = univariate_points("superconvergent", 9, 4, 4)
    assert len(u) == 30
    assert u.provenance.count("removed-adjacent") == 2
    u0 = univariate_points("superconvergent", 9, 4, 0)
    assert len(u0) == 10
    assert u0.provenance.count("root") == 6
    assert u0.provenance.count("greville") == 2
    assert u0.provenance.count("added-boundary") == 2
    u1 = univariate_points("superconvergent", 9, 4, 1)
    assert 0.5 in u1.points
    assert "added-knot" in u1.provenance


def test_greville_symmetric():
    for p, r in PR:
        assert univariate_points("greville", p, r, 5).is_symmetric()
    # removing the first root right of each knot breaks the mirror symmetry
    assert not univariate_points("superconvergent", 9, 4, 5).is_symmetric()
    assert univariate_points("superconvergent", 8, 3, 5).is_symmetric(1e-14)


@pytest.mark.parametrize("name,k,rows,cols", [
    ("one-patch", 3, 625, 625),
    ("three-patch", 3, 1795, 1309),
    ("five-patch", 3, 2991, 2166),
])
def test_row_counts(name, k, rows, cols):
    d = get_domain(name)
    pts = collocation_points(d, "greville", 9, 4, k)
    assert pts.row_counts()["total"] == rows
    # both families give the same counts
    assert collocation_points(d, "superconvergent", 9, 4, k).row_counts()["total"] == rows


def test_roles_one_patch():
    d = get_domain("one-patch")
    pts = collocation_points(d, "greville", 9, 4, 3)
    c = pts.role_counts()
    n = 25
    assert len(pts) == n * n
    assert c[OMIT_CORNER] == 4
    assert c[NORMAL_AVG] == 8
    assert c[NORMAL] == 4 * (n - 2) - 8
    assert c[OMIT_RING] == 4 * (n - 3)
    assert c[PDE] == (n - 4) ** 2
    # averaged pairs are mutual
    for g in range(len(pts)):
        if pts.role[g] == NORMAL_AVG:
            assert pts.partner[pts.partner[g]] == g


def test_global_dedup_three_patch():
    d = get_domain("three-patch")
    pts = collocation_points(d, "greville", 9, 4, 3)
    n = 25
    # three patches share three edges of n points and the centre once
    assert len(pts) == 3 * n * n - 3 * n + 1
    multi = [g for g in range(len(pts)) if len(pts.incarnations[g]) > 1]
    assert len(multi) == 3 * (n - 1) + 1
    for g in multi:
        xy = [d.patches[p](pts.uni.points[i1], pts.uni.points[i2])[0]
              for p, i1, i2 in pts.incarnations[g]]
        assert np.allclose(xy, xy[0], atol=1e-12)


def test_c3_interface_points_dropped():
    d = get_domain("l-shape")
    pts = collocation_points(d, "greville", 8, 3, 3, smoothness=3)
    n = make_space(8, 3, 3).dim
    assert pts.role_counts()[OMIT_INTERFACE] == n
    space = assemble_space(d, 3, 8, 3, 3)
    assert pts.row_counts()["total"] == 1102
    assert space.dim == 1014
    avoid_nonsmooth_loci(pts, space)


def test_c3_pde_point_on_knot_rejected():
    d = get_domain("l-shape")
    pts = collocation_points(d, "greville", 7, 3, 1, smoothness=3)
    space = assemble_space(d, 3, 7, 3, 1)
    avoid_nonsmooth_loci(pts, space)
    g = pts.pde_ids()[0]
    zeta = pts.zeta.copy()
    zeta[g, 0] = 0.5
    with pytest.raises(PointError):
        avoid_nonsmooth_loci(dataclasses.replace(pts, zeta=zeta), space)
