import numpy as np
import pytest
import scipy.sparse as sp

from agglomg.agglomerate import CoarsenConfig
from agglomg.hierarchy import StopRule, build_hierarchy
from agglomg.mesh import MaterialProperties, generate_mesh
from agglomg.solver import (DivergenceError, ProblemSpec,
                            VCyclePreconditioner, apply_dirichlet,
                            assemble_operator, assemble_problem, fgmres,
                            mms_convergence, smooth, solve_problem)


def unit_material_table():
    # sigma_t = 1/3 makes the diffusion coefficient exactly 1
    props = MaterialProperties(source=0.0, sigma_t=1.0 / 3.0, sigma_s=1.0 / 3.0)
    return {0: props, 1: props}


@pytest.fixture(scope="module")
def poisson_problem():
    mesh = generate_mesh(2, 24, jitter=0.2, seed=6)
    spec = ProblemSpec("diffuse")
    A, b = assemble_problem(mesh, spec)
    return mesh, spec, A, b


class TestAssembly:
    def test_unit_triangle_stiffness(self, tri_single):
        spec = ProblemSpec("diffuse", materials=unit_material_table())
        A, _, _ = assemble_operator(tri_single, spec)
        expected = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])
        assert np.allclose(A.toarray(), expected, atol=1e-14)

    def test_diffuse_operator_symmetric(self, poisson_problem):
        _, _, A, _ = poisson_problem
        assert abs(A - A.T).max() <= 1e-12 * abs(A).max()

    def test_stiffness_rows_sum_to_zero_pre_bc(self):
        mesh = generate_mesh(2, 8, jitter=0.15, seed=3)
        spec = ProblemSpec("diffuse", materials=unit_material_table())
        A, _, _ = assemble_operator(mesh, spec)
        assert np.abs(A @ np.ones(mesh.n_nodes)).max() < 1e-12

    def test_linear_functions_in_kernel(self):
        mesh = generate_mesh(2, 8, jitter=0.15, seed=3)
        spec = ProblemSpec("diffuse", materials=unit_material_table())
        A, _, boundary = assemble_operator(mesh, spec)
        for axis in range(2):
            r = A @ mesh.node_coords[:, axis]
            assert np.abs(r[~boundary]).max() < 1e-11

    def test_zero_sigma_t_rejected(self, tri_single):
        table = {0: MaterialProperties(source=0.0, sigma_t=0.0, sigma_s=0.0)}
        with pytest.raises(ValueError, match="sigma_t"):
            assemble_operator(tri_single, ProblemSpec("diffuse", materials=table))

    def test_absorbing_nonsymmetric_with_advection(self):
        mesh = generate_mesh(2, 8, seed=1)
        A, b = assemble_problem(mesh, ProblemSpec("absorbing"))
        assert abs(A - A.T).max() > 1e-10

    def test_dirichlet_symmetric_elimination(self, poisson_problem):
        mesh, spec, A, b = poisson_problem
        assert abs(A - A.T).max() <= 1e-12 * abs(A).max()
        # boundary rows are decoupled
        _, _, boundary = assemble_operator(mesh, spec)
        idx = np.flatnonzero(boundary)[0]
        row = A.getrow(idx)
        assert row.nnz == 1 and row.indices[0] == idx
        assert b[idx] == 0.0


class TestFgmres:
    def test_identity_one_iteration(self):
        A = sp.eye(7, format="csr")
        b = np.arange(1.0, 8.0)
        x, res, it, conv = fgmres(A, b)
        assert it == 1 and conv
        assert np.allclose(x, b)

    def test_diagonal_krylov_dimension(self):
        A = sp.diags(np.arange(1.0, 6.0)).tocsr()
        x, res, it, conv = fgmres(A, np.ones(5))
        assert conv and it <= 5
        assert np.allclose(A @ x, np.ones(5), atol=1e-9)

    def test_zero_rhs(self):
        A = sp.eye(4, format="csr")
        x, res, it, conv = fgmres(A, np.zeros(4))
        assert conv and np.allclose(x, 0.0)

    def test_divergence_detected(self):
        A = sp.csr_matrix(np.array([[np.nan, 0.0], [0.0, 1.0]]))
        with pytest.raises(DivergenceError):
            fgmres(A, np.ones(2))

    def test_matches_plain_gmres_with_identity_preconditioner(self):
        # independent textbook GMRES(30) oracle
        rng = np.random.default_rng(3)
        n = 40
        M = rng.standard_normal((n, n)) * 0.3 + np.diag(np.arange(2.0, n + 2))
        A = sp.csr_matrix(M)
        b = rng.standard_normal(n)

        def plain_gmres(A, b, m=30, tol=1e-10, maxiter=200):
            x = np.zeros(n)
            history = [1.0]
            bnorm = np.linalg.norm(b)
            iters = 0
            while iters < maxiter:
                r = b - A @ x
                beta = np.linalg.norm(r)
                V = [r / beta]
                H = np.zeros((m + 1, m))
                residual = beta
                j_done = 0
                for j in range(m):
                    w = A @ V[j]
                    for i in range(j + 1):
                        H[i, j] = w @ V[i]
                        w -= H[i, j] * V[i]
                    H[j + 1, j] = np.linalg.norm(w)
                    V.append(w / H[j + 1, j])
                    j_done = j + 1
                    iters += 1
                    e1 = np.zeros(j + 2)
                    e1[0] = beta
                    y, res_, *_ = np.linalg.lstsq(H[:j + 2, :j + 1], e1, rcond=None)
                    residual = np.linalg.norm(H[:j + 2, :j + 1] @ y - e1)
                    history.append(residual / bnorm)
                    if residual <= tol * bnorm or residual <= tol or iters >= maxiter:
                        break
                y, *_ = np.linalg.lstsq(H[:j_done + 1, :j_done],
                                        np.eye(j_done + 1)[:, 0] * beta, rcond=None)
                x = x + np.stack(V[:j_done], axis=1) @ y
                if residual <= tol * bnorm or residual <= tol:
                    break
            return x, history

        x1, res1, it1, conv1 = fgmres(A, b, None, restart=30, tol=1e-10)
        x2, res2 = plain_gmres(A, b)
        assert conv1
        m = min(len(res1), len(res2))
        assert np.allclose(res1[:m], res2[:m], rtol=1e-8, atol=1e-12)


class TestSmoother:
    def test_exact_solution_unchanged(self):
        A = sp.diags(np.array([2.0, 3.0, 4.0])).tocsr()
        x = np.array([1.0, 1.0, 1.0])
        b = A @ x
        out = smooth(A, b, x.copy())
        assert np.allclose(out, x)

    def test_diagonal_system_one_step(self):
        A = sp.diags(np.array([2.0, 5.0, 9.0])).tocsr()
        b = np.array([2.0, 10.0, 27.0])
        out = smooth(A, b, np.zeros(3), inner=1)
        assert np.allclose(A @ out, b, atol=1e-12)

    def test_zero_diagonal_rejected(self):
        A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        with pytest.raises(ValueError):
            smooth(A, np.ones(2), np.zeros(2))

    def test_preconditioned_residual_monotone(self):
        rng = np.random.default_rng(5)
        B = rng.standard_normal((30, 30))
        A = sp.csr_matrix(B @ B.T + 30 * np.eye(30))
        d = A.diagonal()
        b = rng.standard_normal(30)
        x = rng.standard_normal(30)
        before = np.linalg.norm((b - A @ x) / d)
        x1 = smooth(A, b, x)
        after = np.linalg.norm((b - A @ x1) / d)
        assert after <= before + 1e-13


class TestVCycle:
    def test_single_level_is_direct_solve(self):
        mesh = generate_mesh(2, 5, extent=1.0)  # 36 nodes -> one level
        spec = ProblemSpec("diffuse")
        A, b = assemble_problem(mesh, spec)
        hier = build_hierarchy(mesh, CoarsenConfig("greedy", desired_size=4),
                               operator=A)
        assert hier.n_levels == 1
        M = VCyclePreconditioner(hier)
        z = M(b)
        assert np.allclose(A @ z, b, atol=1e-10)

    def test_zero_rhs_zero_correction(self, poisson_problem):
        mesh, spec, A, b = poisson_problem
        hier = build_hierarchy(mesh, CoarsenConfig("greedy", desired_size=8, seed=1),
                               materials=spec.materials, operator=A)
        M = VCyclePreconditioner(hier)
        assert np.allclose(M(np.zeros_like(b)), 0.0)

    def test_coarsest_size_guard(self):
        mesh = generate_mesh(2, 50, jitter=0.1, seed=1)  # 2601 nodes
        A, _ = assemble_problem(mesh, ProblemSpec("diffuse"))
        hier = build_hierarchy(mesh, CoarsenConfig("sizebased", desired_size=8,
                                                   seed=1),
                               operator=A, stop=StopRule(coarse_nodes=10 ** 6))
        # a single-level "hierarchy" of this size exceeds the LU budget
        assert hier.n_levels == 1
        with pytest.raises(ValueError, match="coarsest"):
            VCyclePreconditioner(hier)

    def test_galerkin_consistency_on_levels(self, poisson_problem):
        mesh, spec, A, b = poisson_problem
        hier = build_hierarchy(mesh, CoarsenConfig("sizebased", desired_size=8,
                                                   seed=2),
                               materials=spec.materials, operator=A)
        rng = np.random.default_rng(0)
        Af = A
        for lvl in hier.levels:
            P = lvl.prolongation
            Ac = lvl.operator
            for _ in range(5):
                xc = rng.standard_normal(P.shape[1])
                direct = Ac @ xc
                composed = P.T @ (Af @ (P @ xc))
                denom = max(np.abs(direct).max(), 1e-300)
                assert np.abs(direct - composed).max() <= 1e-12 * denom
            Af = Ac


class TestSolveProblem:
    def test_diffuse_report_contract(self):
        mesh = generate_mesh(2, 32, jitter=0.2, seed=8)
        x, report, hier = solve_problem(mesh, ProblemSpec("diffuse"),
                                        CoarsenConfig("sizebased", desired_size=24,
                                                      seed=1))
        assert report.converged
        # converged means relative or absolute residual under tolerance
        _, b = assemble_problem(mesh, ProblemSpec("diffuse"))
        rel = report.residuals[-1]
        assert rel <= 1e-10 or rel * np.linalg.norm(b) <= 1e-10
        assert report.setup_time_s > 0 and report.solve_time_s > 0
        assert report.levels == hier.n_levels
        assert report.meta["setup_includes_galerkin_products"] is True

    def test_preconditioning_beats_unpreconditioned(self):
        mesh = generate_mesh(2, 32, jitter=0.2, seed=8)
        spec = ProblemSpec("diffuse")
        A, b = assemble_problem(mesh, spec)
        hier = build_hierarchy(mesh, CoarsenConfig("sizebased", desired_size=24,
                                                   seed=1),
                               materials=spec.materials, operator=A)
        M = VCyclePreconditioner(hier)
        _, _, it_pre, conv_pre = fgmres(A, b, M)
        _, _, it_raw, conv_raw = fgmres(A, b, None, maxiter=400)
        assert conv_pre
        assert it_pre < it_raw or not conv_raw

    def test_absorbing_problem_properties(self):
        # the absorbing substitute is advection-diffusion-reaction: its
        # reaction term actually improves conditioning relative to the
        # pure-diffusion problem, so unlike the transport original its
        # iteration count is not required to exceed the diffuse one;
        # acceptance here is property-based
        mesh = generate_mesh(2, 48, jitter=0.2, seed=8)
        cfg = CoarsenConfig("sizebased", desired_size=24, seed=1)
        _, rep_d, _ = solve_problem(mesh, ProblemSpec("diffuse"), cfg)
        _, rep_a, _ = solve_problem(mesh, ProblemSpec("absorbing"), cfg)
        assert rep_d.converged and rep_a.converged
        assert rep_a.problem == "absorbing"
        A, _ = assemble_problem(mesh, ProblemSpec("absorbing"))
        assert abs(A - A.T).max() > 1e-10  # advection present

    def test_determinism(self):
        mesh = generate_mesh(2, 24, jitter=0.2, seed=4)
        cfg = CoarsenConfig("greedy", desired_size=8, seed=9)
        x1, r1, _ = solve_problem(mesh, ProblemSpec("diffuse"), cfg)
        x2, r2, _ = solve_problem(mesh, ProblemSpec("diffuse"), cfg)
        assert np.array_equal(x1, x2)
        assert r1.iterations == r2.iterations
        assert r1.residuals == r2.residuals


class TestMms:
    def test_2d_slope_near_two(self):
        slope, points = mms_convergence((8, 16, 32), dim=2)
        assert slope == pytest.approx(2.0, abs=0.2)
        errors = [e for _, e in points]
        assert errors[0] > errors[1] > errors[2]

    def test_zero_source_gives_zero_solution(self):
        # zero manufactured solution: zero load, zero discrete solution,
        # zero error
        import scipy.sparse.linalg as spla
        mesh = generate_mesh(2, 8, extent=1.0)
        spec = ProblemSpec("diffuse", materials=unit_material_table())
        A, _, boundary = assemble_operator(mesh, spec)
        A_bc, b_bc = apply_dirichlet(A, np.zeros(mesh.n_nodes), boundary)
        u = spla.spsolve(A_bc.tocsc(), b_bc)
        assert np.abs(u).max() == 0.0

    def test_slope_is_best_fit_line(self):
        hs = np.array([0.2, 0.1, 0.05])
        errs = 3.0 * hs ** 2
        slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
        assert slope == pytest.approx(2.0, abs=1e-12)
