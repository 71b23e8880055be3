import json

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from src.config import CONFIG_PATH, SolverOptions, load_config
from src.linalg import (LinearSolver, SolverError, dense_lu_solve, direct_solve,
                        eigen_largest_generalized, eigen_smallest_generalized, gmres,
                        make_preconditioner, read_matrix_market, write_matrix_market)


def _laplacian_1d(n):
    return sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


@pytest.fixture
def nonsymmetric(rng):
    n = 200
    A = _laplacian_1d(n) + sp.diags([0.3 * np.ones(n - 1)], [1]) + 0.1 * sp.eye(n)
    b = rng.standard_normal(n)
    return A.tocsr(), b


@pytest.mark.parametrize("preconditioner", ["none", "jacobi", "ilu0", "ilu"])
def test_gmres_matches_sparse_lu(nonsymmetric, preconditioner):
    A, b = nonsymmetric
    x, report = gmres(A, b, tol=1e-11, restart=200, preconditioner=preconditioner)
    assert report.converged
    assert report.preconditioner == preconditioner
    assert np.linalg.norm(A @ x - b) <= 1e-11 * np.linalg.norm(b) * (1 + 1e-6)
    assert np.allclose(x, spla.spsolve(A.tocsc(), b), atol=1e-8)


def test_ilu_preconditioners_need_fewer_iterations(nonsymmetric):
    A, b = nonsymmetric
    _, plain = gmres(A, b, tol=1e-10, restart=30, preconditioner="none")
    _, ilu = gmres(A, b, tol=1e-10, restart=30, preconditioner="ilu")
    assert ilu.iterations < plain.iterations


def test_preconditioners_do_not_move_the_solution(rng):
    # diagonally dominant, condition number below 2
    n = 300
    A = (_laplacian_1d(n) + sp.diags([0.7 * np.ones(n - 1)], [1]) + 4.0 * sp.eye(n)).tocsr()
    b = rng.standard_normal(n)
    tol = 1e-10
    reference = spla.spsolve(A.tocsc(), b)
    solutions = {}
    for kind in ("none", "jacobi", "ilu0"):
        x, report = gmres(A, b, tol=tol, restart=60, preconditioner=kind)
        assert report.converged
        solutions[kind] = x
        assert np.linalg.norm(x - reference) <= 10 * tol * np.linalg.norm(reference)
    assert np.linalg.norm(solutions["ilu0"] - solutions["none"]) <= 10 * tol * np.linalg.norm(reference)


def test_default_solver_options_use_ilu0():
    assert SolverOptions().preconditioner == "ilu0"
    assert load_config("/nonexistent/config.json")["solver"]["preconditioner"] == "ilu0"
    with open(CONFIG_PATH, encoding="utf-8") as f:
        assert json.load(f)["solver"]["preconditioner"] == "ilu0"


def test_zero_rhs_short_circuits(nonsymmetric):
    A, b = nonsymmetric
    x, report = gmres(A, np.zeros_like(b))
    assert not np.any(x)
    assert report.iterations == 0 and report.converged


def test_non_finite_rhs_raises(nonsymmetric):
    A, b = nonsymmetric
    b = b.copy()
    b[3] = np.nan
    with pytest.raises(SolverError):
        gmres(A, b)


def test_shape_mismatch(nonsymmetric):
    A, b = nonsymmetric
    with pytest.raises(ValueError):
        gmres(A, b[:-1])


def test_non_convergence_is_reported_then_raised(nonsymmetric):
    A, b = nonsymmetric
    _, report = gmres(A, b, tol=1e-14, restart=2, max_iter=4, preconditioner="none", refinements=0)
    assert not report.converged
    options = SolverOptions(method="gmres", preconditioner="none", tol=1e-14, restart=2, max_iter=4)
    with pytest.raises(SolverError) as info:
        LinearSolver(A, options).solve(b)
    assert info.value.report is not None
    assert not info.value.report.converged


@pytest.mark.parametrize("method", ["direct", "dense", "gmres"])
def test_linear_solver_reuses_setup(nonsymmetric, method, rng):
    A, b = nonsymmetric
    solver = LinearSolver(A, SolverOptions(method=method, tol=1e-12, restart=200))
    for rhs in (b, rng.standard_normal(len(b))):
        x, report = solver.solve(rhs)
        assert report.method == method
        assert report.converged
        assert np.linalg.norm(A @ x - rhs) <= 1e-9 * np.linalg.norm(rhs)


def test_dense_lu_limits():
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    assert np.allclose(dense_lu_solve(A, [3.0, 4.0]), [1.0, 1.0])
    with pytest.raises(ValueError):
        dense_lu_solve(np.eye(5), np.ones(5), cap=4)
    with pytest.raises(np.linalg.LinAlgError):
        dense_lu_solve(np.array([[1.0, 2.0], [2.0, 4.0]]), np.ones(2))


def test_direct_solve_of_singular_matrix():
    A = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(np.linalg.LinAlgError):
        direct_solve(A, np.ones(2))


def test_preconditioner_errors():
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 2.0]]))
    with pytest.raises(np.linalg.LinAlgError):
        make_preconditioner(A, "jacobi")
    with pytest.raises(ValueError):
        make_preconditioner(A, "multigrid")
    assert make_preconditioner(A, "none") is None


@pytest.mark.parametrize("n", [50, 1600])
def test_extreme_eigenvalues_of_discrete_laplacian(n):
    S = _laplacian_1d(n)
    M = sp.eye(n, format="csr")
    smallest = 2.0 - 2.0 * np.cos(np.pi / (n + 1))
    assert eigen_smallest_generalized(S, M) == pytest.approx(smallest, rel=1e-8)
    if n <= 50:
        assert eigen_largest_generalized(S, M) == pytest.approx(2.0 + 2.0 * np.cos(np.pi / (n + 1)))


def test_matrix_market_file(tmp_path, nonsymmetric):
    A, _ = nonsymmetric
    path = write_matrix_market(tmp_path / "sub" / "a", A, comment="test matrix")
    assert path.exists() and path.suffix == ".mtx"
    assert "test matrix" in path.read_text()
    assert abs(read_matrix_market(path) - A).max() < 1e-12
