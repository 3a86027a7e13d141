import numpy as np
import pytest
import scipy.sparse as sp

from smoothcolloc.assembly import ManufacturedSolution, assemble
from smoothcolloc.geometry import get_domain
from smoothcolloc.lsq import (SolveError, condition_qr, equilibrate_rows, solve, solve_qr,
                              solve_scaled_normal)
from smoothcolloc.points import collocation_points
from smoothcolloc.smooth_basis import assemble_space


def _random_system(m, n, seed=0, density=0.3):
    rng = np.random.default_rng(seed)
    A = sp.random(m, n, density=density, random_state=rng, format="csr")
    A = A + sp.eye(m, n)
    # rows of very different size, as PDE and boundary rows have
    A = sp.diags(10.0 ** rng.uniform(-2, 4, m)) @ A
    x = rng.standard_normal(n)
    return A.tocsr(), x


@pytest.fixture(scope="module")
def square_system():
    d = get_domain("one-patch")
    S = assemble_space(d, 4, 9, 4, 3)
    P = collocation_points(d, "greville", 9, 4, 3)
    return assemble(d, S, P, ManufacturedSolution.trig())


@pytest.mark.parametrize("dense_max_cols", [10_000, 10])
def test_consistent_overdetermined(dense_max_cols):
    A, x = _random_system(120, 80)
    rep = solve_qr((A, A @ x), dense_max_cols=dense_max_cols)
    assert np.allclose(rep.coefficients, x, rtol=1e-9, atol=1e-9)
    assert rep.method == ("QR" if dense_max_cols > 80 else "augmented-LU")
    assert rep.residual < 1e-8 * np.linalg.norm(A @ x)


def test_dense_and_sparse_paths_agree_inconsistent():
    A, x = _random_system(150, 60, seed=2)
    b = A @ x + np.random.default_rng(5).standard_normal(150)
    d = solve_qr((A, b), dense_max_cols=10_000)
    s = solve_qr((A, b), dense_max_cols=10)
    assert np.allclose(d.coefficients, s.coefficients, rtol=1e-8, atol=1e-8)
    assert d.condition == pytest.approx(s.condition, rel=1e-3)


def test_weighted_least_squares():
    # row equilibration: min ||W (A c - b)|| with W = diag(1 / ||row||)
    A, x = _random_system(50, 20, seed=3)
    b = A @ x + np.random.default_rng(1).standard_normal(50)
    rn = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    ref = np.linalg.lstsq(A.toarray() / rn[:, None], b / rn, rcond=None)[0]
    assert np.allclose(solve_qr((A, b)).coefficients, ref, rtol=1e-10, atol=1e-10)
    plain = np.linalg.lstsq(A.toarray(), b, rcond=None)[0]
    assert np.allclose(solve_qr((A, b), row_scaling=False).coefficients, plain, rtol=1e-8, atol=1e-8)


def test_qr_vs_normal_square(square_system):
    # on square systems both solvers target the same solution
    q = solve_qr(square_system)
    nrm = solve_scaled_normal(square_system)
    assert square_system.shape[0] == square_system.shape[1]
    err = np.abs(q.coefficients - nrm.coefficients).max() / np.abs(q.coefficients).max()
    assert err <= 1e-8
    assert q.condition <= nrm.condition


def test_condition_numbers():
    A, _ = _random_system(60, 30, seed=4)
    W, _ = equilibrate_rows(A, np.zeros(60))
    ref = np.linalg.cond(W.toarray())
    assert solve_qr((A, np.ones(60))).condition == pytest.approx(ref, rel=1e-6)
    assert condition_qr(W) == pytest.approx(ref, rel=1e-4)
    cn = np.sqrt(np.asarray(W.multiply(W).sum(axis=0)).ravel())
    AD = W.toarray() / cn
    ref_n = np.linalg.cond(AD.T @ AD)
    assert solve_scaled_normal((A, np.ones(60))).condition == pytest.approx(ref_n, rel=1e-4)


def test_errors():
    with pytest.raises(SolveError):
        solve_qr((np.ones((2, 3)), np.ones(2)))
    A = np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]])
    with pytest.raises(SolveError):
        solve_qr((A, np.ones(3)))
    with pytest.raises(SolveError):
        solve_scaled_normal((A, np.ones(3)))
    with pytest.raises(SolveError):
        solve_qr((np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]), np.ones(3)))
    with pytest.raises(SolveError):
        solve((np.eye(2), np.ones(2)), method="cg")


def test_report_serialization(square_system):
    rep = solve(square_system, "normal", condition=False)
    d = rep.as_dict()
    assert d["rows"] == d["cols"] == 625
    assert d["method"] == "scaled-normal"
    assert np.isnan(d["condition"])
