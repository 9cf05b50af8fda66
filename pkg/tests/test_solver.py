import numpy as np
import pytest
import scipy.sparse as sp

from ustflow.assembly import BCSpec, MaterialParams, SpaceTimeProblem
from ustflow.errors import LinearSolveFailure
from ustflow.solver import (LinearSolverConfig, NewtonConfig,
                            block_jacobi_preconditioner, direct_lu,
                            gmres_solve, newton_solve, solve_linear_system)


class ToyProblem:
    """Adapter exposing the assembler interface for a smooth vector map."""

    def __init__(self, residual, jacobian):
        self._res = residual
        self._jac = jacobian

    def system(self, U, tau_override=None, want_matrix=True):
        U = np.asarray(U, dtype=float).ravel()
        R = self._res(U)
        rhs = -R
        A = sp.csr_matrix(self._jac(U)) if want_matrix else None

        class S:
            matrix = A
        return S() if want_matrix else None, rhs, float(np.linalg.norm(R))

    def residual_norm(self, U, tau_override=None):
        return float(np.linalg.norm(self._res(np.asarray(U).ravel())))


class TestGmres:
    def test_identity_single_iteration(self, rng):
        n = 40
        b = rng.uniform(-1, 1, size=n)
        x, stats = gmres_solve(sp.eye(n, format="csr"), b,
                               LinearSolverConfig(preconditioner="none"))
        assert np.allclose(x, b, atol=1e-12)
        assert stats["iterations"] <= 1

    def test_diagonal_spd(self, rng):
        d = rng.uniform(0.5, 3.0, size=30)
        b = rng.uniform(-1, 1, size=30)
        A = sp.diags(d).tocsr()
        x, stats = gmres_solve(A, b,
                               LinearSolverConfig(preconditioner="none"))
        assert stats["relres"] < 1e-8
        assert np.allclose(x, b / d, rtol=1e-6, atol=1e-9)

    def test_random_system_vs_dense_lu_oracle(self, rng):
        n = 50
        A = rng.uniform(-1, 1, size=(n, n)) + n * np.eye(n)
        b = rng.uniform(-1, 1, size=n)
        x_oracle = np.linalg.solve(A, b)
        for precond in ("none", "jacobi_block", "ilu0"):
            x, _ = gmres_solve(sp.csr_matrix(A), b,
                               LinearSolverConfig(preconditioner=precond),
                               block_size=1)
            rel = np.linalg.norm(x - x_oracle) / np.linalg.norm(x_oracle)
            assert rel < 1e-8, precond

    def test_agreement_gmres_direct(self, rng):
        n = 60
        A = sp.random(n, n, density=0.2, random_state=7).tocsr() \
            + 5.0 * sp.eye(n, format="csr")
        b = rng.uniform(-1, 1, size=n)
        x1 = direct_lu(A, b)
        x2, _ = gmres_solve(A, b, LinearSolverConfig(preconditioner="ilu0"))
        assert np.linalg.norm(x1 - x2) / np.linalg.norm(x1) < 1e-8

    def test_stagnation_falls_back_to_direct(self, rng):
        # one restart cycle of 2 Krylov vectors cannot solve this system
        n = 50
        A = sp.random(n, n, density=0.3, random_state=3).tocsr() \
            + 2.0 * sp.eye(n, format="csr")
        b = rng.uniform(-1, 1, size=n)
        cfg = LinearSolverConfig(restart=2, max_krylov_iter=2,
                                 preconditioner="none")
        x = solve_linear_system(A, b, cfg)
        assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) < 1e-10

    def test_block_jacobi_blocks(self):
        A = sp.csr_matrix(np.array([[2.0, 1.0, 0.0, 0.0],
                                    [1.0, 3.0, 0.0, 0.0],
                                    [0.0, 0.0, 4.0, 0.0],
                                    [0.0, 0.0, 0.0, 5.0]]))
        M = block_jacobi_preconditioner(A, 2)
        x = M.matvec(np.array([1.0, 0.0, 4.0, 5.0]))
        expected = np.concatenate([
            np.linalg.solve([[2, 1], [1, 3]], [1, 0]),
            np.linalg.solve([[4, 0], [0, 5]], [4, 5])])
        assert np.allclose(x, expected)


class TestDirectLu:
    def test_residual_small(self, rng):
        n = 80
        A = sp.random(n, n, density=0.15, random_state=11).tocsr() \
            + 4.0 * sp.eye(n, format="csr")
        b = rng.uniform(-1, 1, size=n)
        x = direct_lu(A, b)
        assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) < 1e-10

    def test_singular_raises(self):
        A = sp.csr_matrix(np.zeros((3, 3)))
        with pytest.raises(LinearSolveFailure):
            direct_lu(A, np.ones(3))


class TestNewton:
    def test_linear_problem_one_iteration(self):
        A = np.array([[2.0, 1.0], [0.0, 3.0]])
        b = np.array([1.0, -2.0])
        toy = ToyProblem(lambda x: A @ x - b, lambda x: A)
        res = newton_solve(toy, np.zeros(2),
                           NewtonConfig(),
                           LinearSolverConfig(method="direct_lu"))
        assert res.converged
        assert res.iterations == 1
        assert np.allclose(res.values, np.linalg.solve(A, b), atol=1e-12)

    def test_zero_problem_converges_immediately(self):
        toy = ToyProblem(lambda x: x * 0.0, lambda x: np.eye(3))
        res = newton_solve(toy, np.zeros(3))
        assert res.converged
        assert res.iterations <= 1

    def test_quadratic_phase_on_smooth_problem(self):
        # R(x) = x + x^3 - b, componentwise
        b = np.array([0.7, -1.2, 2.0])

        def res(x):
            return x + x ** 3 - b

        def jac(x):
            return np.diag(1.0 + 3.0 * x ** 2)

        toy = ToyProblem(res, jac)
        out = newton_solve(toy, np.array([5.0, 5.0, 5.0]),
                           NewtonConfig(abs_tol=1e-14, rel_tol=1e-15,
                                        max_iter=50),
                           LinearSolverConfig(method="direct_lu"))
        assert out.converged
        r = out.trace
        for k in range(len(r) - 1):
            if 0.0 < r[k] < 1e-3 and r[k + 1] > 1e-15:
                assert r[k + 1] / r[k] ** 2 < 10.0

    def test_max_iterations_returns_best_iterate(self):
        b = np.array([2.0])
        toy = ToyProblem(lambda x: x + x ** 3 - b,
                         lambda x: np.diag(1.0 + 3.0 * x ** 2))
        out = newton_solve(toy, np.array([100.0]),
                           NewtonConfig(max_iter=2, abs_tol=1e-14,
                                        rel_tol=1e-16),
                           LinearSolverConfig(method="direct_lu"))
        assert not out.converged
        assert out.status == "max_iterations"
        assert len(out.trace) == 3

    def test_backtracking_helps_far_start(self):
        # undamped Newton diverges on atan from this start; the
        # backtracking line search keeps the iteration inside the basin
        b = np.array([1.0])
        toy = ToyProblem(lambda x: np.arctan(x) - np.arctan(b),
                         lambda x: np.diag(1.0 / (1.0 + x ** 2)))
        damped = newton_solve(toy, np.array([20.0]),
                              NewtonConfig(max_iter=60,
                                           linesearch="backtracking"),
                              LinearSolverConfig(method="direct_lu"))
        assert damped.converged
        assert np.allclose(damped.values, 1.0, atol=1e-6)

    def test_stokes_limit_single_newton_iteration(self, small_st_mesh_2d):
        mesh = small_st_mesh_2d

        def lid(x, t):
            x = np.atleast_2d(x)
            return np.column_stack([np.ones(len(x)), np.zeros(len(x))])

        def walls(x, t):
            return np.zeros_like(np.atleast_2d(x))

        bcs = BCSpec(dirichlet={"y1": lid, "y0": walls, "x0": walls,
                                "x1": walls},
                     initial=lambda x: np.zeros_like(np.atleast_2d(x)))
        # all-Dirichlet: pin one pressure dof at each of the three levels
        n_sp = mesh.n_nodes // 3
        problem = SpaceTimeProblem(mesh, MaterialParams(1.0, 0.1), bcs,
                                   convective=False,
                                   gauge=[(0, 0.0), (n_sp, 0.0),
                                          (2 * n_sp, 0.0)])
        res = newton_solve(problem, problem.initial_guess(),
                           NewtonConfig(rel_tol=1e-10),
                           LinearSolverConfig(method="direct_lu"))
        assert res.converged
        assert res.iterations == 1

    def test_deterministic_iterates(self, small_st_mesh_2d):
        mesh = small_st_mesh_2d

        def lid(x, t):
            x = np.atleast_2d(x)
            return np.column_stack([np.ones(len(x)), np.zeros(len(x))])

        bcs = BCSpec(dirichlet={"y1": lid},
                     initial=lambda x: np.zeros_like(np.atleast_2d(x)))

        def run():
            problem = SpaceTimeProblem(mesh, MaterialParams(1.0, 0.05), bcs,
                                       gauge=(0, 0.0))
            return newton_solve(problem, problem.initial_guess(),
                                NewtonConfig(max_iter=6, rel_tol=1e-10),
                                LinearSolverConfig(method="direct_lu"))

        r1, r2 = run(), run()
        assert np.array_equal(r1.values, r2.values)
        assert r1.trace == r2.trace
