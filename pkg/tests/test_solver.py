import numpy as np
import pytest

from curlplast.grid import FACES, BoundaryConfig, Grid, SingularBlock, TensorField
from curlplast.models import ModelVariant, SimState, sigma_nodal
from curlplast.oracles import radial_return_0d
from curlplast.solver import (
    DiscreteProblem,
    InfeasibleBC,
    LoadStep,
    NoConvergence,
    SolverConfig,
    accelerated_prox_gradient,
    prox_dissipation,
    shrink_magnitude,
    time_step,
)
from curlplast.tensors import MaterialParams, dev, norm, sym

PARAMS = MaterialParams(mu=80.0, lam=110.0, k1=0.5, k2=0.4, Lc=0.2, sigma_y=0.3)
KIN = ModelVariant("kin_spin", PARAMS)
ISO = ModelVariant("iso_spin", PARAMS)

TIGHT = SolverConfig(tol_outer=1e-14, tol_cg=1e-13, tol_fista=1e-12)

SHEAR01 = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def full_dirichlet():
    return BoundaryConfig(FACES, micro_hard_faces=())


def unit_direction(rng):
    n = dev(rng.standard_normal((3, 3)))
    return n / norm(n)


class TestProxDissipation:
    def test_inside_ball_returns_zero(self):
        rng = np.random.default_rng(0)
        tau = 0.37
        for _ in range(20):
            z = unit_direction(rng) * rng.uniform(0.0, tau * PARAMS.sigma_y)
            assert np.all(prox_dissipation(KIN, z, tau) == 0.0)

    def test_tie_at_threshold_returns_zero(self):
        tau = 0.5
        z = unit_direction(np.random.default_rng(1)) * tau * PARAMS.sigma_y
        assert np.all(prox_dissipation(KIN, z, tau) == 0.0)

    def test_kinematic_shrinkage(self):
        tau = 0.25
        n = unit_direction(np.random.default_rng(2))
        z = 2.0 * tau * PARAMS.sigma_y * n
        out = prox_dissipation(KIN, z, tau)
        assert np.allclose(out, tau * PARAMS.sigma_y * n, rtol=1e-13)

    def test_kinematic_prox_solves_first_order_condition(self):
        # z - p must lie in tau * sigma_y * subdifferential of |.| at p
        rng = np.random.default_rng(3)
        tau = 0.8
        for _ in range(20):
            z = dev(rng.standard_normal((3, 3)))
            p = prox_dissipation(KIN, z, tau)
            r = z - p
            if norm(p) > 0:
                assert np.allclose(r, tau * PARAMS.sigma_y * p / norm(p), rtol=1e-10)
            else:
                assert norm(r) <= tau * PARAMS.sigma_y * (1 + 1e-12)

    def test_isotropic_magnitude_against_scalar_brute_force(self):
        # refine a 1d grid on the magnitude down to 1e-8 and compare
        rng = np.random.default_rng(4)
        tau = 0.6
        for _ in range(5):
            zn = rng.uniform(0.0, 3.0)
            g0 = rng.uniform(0.0, 2.0)
            got = shrink_magnitude(ISO, zn, tau, g0)

            def f(m):
                return (0.5 * (m - zn) ** 2 / tau + PARAMS.sigma_y * m
                        + 0.5 * PARAMS.mu * PARAMS.k2 * (g0 + m) ** 2)

            lo, hi = 0.0, zn + 1.0
            for _ in range(12):
                ms = np.linspace(lo, hi, 2001)
                best = ms[np.argmin(f(ms))]
                span = (hi - lo) / 2000
                lo, hi = max(0.0, best - 2 * span), best + 2 * span
            assert got == pytest.approx(best, abs=1e-8)

    def test_requires_positive_tau(self):
        with pytest.raises(ValueError):
            prox_dissipation(KIN, np.zeros((3, 3)), 0.0)


class TestOneNodeMinimization:
    def test_fista_against_nested_grid_search(self):
        # single-node subproblem over the 8 trace-free coordinates: the
        # engine must agree with direct minimization refined to 1e-6
        rng = np.random.default_rng(5)
        n = 8
        Q = rng.standard_normal((n, n))
        A = Q @ Q.T + 0.5 * np.eye(n)
        b = rng.standard_normal(n) * 2.0
        w = np.full(n, 0.7)
        sy = 1.3

        def prox(z, t=None):
            nz = np.linalg.norm(z)
            m = max(0.0, nz - step * sy)
            return z * (m / nz) if nz > 0 else z

        step = 1.0 / (np.linalg.eigvalsh(A / 0.7).max() * 1.1)
        c, _ = accelerated_prox_gradient(
            matvec=lambda v: A @ v, b=b, w=w,
            prox=lambda z: prox(z), c0=np.zeros(n),
            step=step, tol=1e-13, maxiter=100000)

        def objective(x):
            quad = 0.5 * np.einsum("...i,ij,...j->...", x, A, x) - x @ b
            return quad + 0.7 * sy * np.linalg.norm(x, axis=-1)

        center = c.copy()
        span = 2.0 * max(1.0, np.abs(c).max())
        best = center
        while span > 1e-6:
            grids = [np.linspace(v - span, v + span, 5) for v in best]
            mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, n)
            best = mesh[np.argmin(objective(mesh))]
            span *= 0.55
        assert np.max(np.abs(c - best)) < 1e-5

    def test_huge_yield_stress_gives_smooth_minimizer(self):
        rng = np.random.default_rng(6)
        n = 6
        Q = rng.standard_normal((n, n))
        A = Q @ Q.T + np.eye(n)
        b = rng.standard_normal(n)
        w = np.ones(n)
        step = 1.0 / (np.linalg.eigvalsh(A).max() * 1.1)
        c, _ = accelerated_prox_gradient(
            matvec=lambda v: A @ v, b=b, w=w,
            prox=lambda z: z, c0=np.zeros(n),  # infinite threshold: identity prox
            step=step, tol=1e-14, maxiter=100000)
        assert np.allclose(c, np.linalg.solve(A, b), rtol=1e-10)

    def test_zero_data_returns_zero(self):
        A = np.eye(4)
        c, its = accelerated_prox_gradient(
            matvec=lambda v: A @ v, b=np.zeros(4), w=np.ones(4),
            prox=lambda z: np.maximum(0.0, 1 - 0.1 / max(np.linalg.norm(z), 1e-300)) * z,
            c0=np.zeros(4), step=0.5, tol=1e-12, maxiter=100)
        assert np.all(c == 0.0) and its == 1


class TestSolveU:
    def test_affine_reproduction_exact(self):
        grid = Grid.unit_cube(3)
        prob = DiscreteProblem(grid, full_dirichlet(), KIN, SHEAR01, TIGHT)
        U = prob.lift(2.5e-3)
        c = np.zeros(prob.basis.size)
        U, _ = prob.solve_u(U, c, np.zeros(3 * grid.node_count))
        want = 2.5e-3 * grid.node_coords() @ SHEAR01.T
        assert np.max(np.abs(U.reshape(-1, 3) - want)) < 1e-12

    def test_manufactured_trilinear_solution(self):
        grid = Grid((3, 2, 2), (1 / 3, 0.5, 0.5))
        bc = BoundaryConfig(("xmin", "xmax"))
        prob = DiscreteProblem(grid, bc, KIN, None, TIGHT)
        rng = np.random.default_rng(7)
        U_star = rng.standard_normal(3 * grid.node_count) * 1e-3
        F = np.asarray(prob.blocks.K_uu @ U_star)
        U = np.where(prob.presc, U_star, 0.0)
        U, _ = prob.solve_u(U, np.zeros(prob.basis.size), F)
        assert np.max(np.abs(U - U_star)) < 1e-10 * np.abs(U_star).max()

    def test_cg_contract(self):
        grid = Grid.unit_cube(2)
        prob = DiscreteProblem(grid, BoundaryConfig(("zmin",)), KIN, None, TIGHT)
        rng = np.random.default_rng(8)
        b = rng.standard_normal(prob.K_ff.shape[0])
        x, _ = prob.pcg(prob.K_ff, b, np.zeros_like(b), 1e-10, 10000, prob.jacobi_ff)
        assert np.linalg.norm(b - prob.K_ff @ x) <= 1e-10 * np.linalg.norm(b)


class TestSolveP:
    def test_vanishing_yield_stress_gives_smooth_minimizer(self):
        # with no dissipation threshold the prox is the identity and the
        # block solve returns the unconstrained quadratic minimizer
        import scipy.sparse.linalg as spla

        grid = Grid.unit_cube(2)
        params = MaterialParams(mu=80.0, lam=110.0, k1=0.5, Lc=0.1, sigma_y=1e-30)
        var = ModelVariant("kin_spin", params)
        prob = DiscreteProblem(grid, BoundaryConfig(FACES), var, SHEAR01,
                               SolverConfig(tol_fista=1e-13))
        U = prob.lift(1e-3)
        z = np.zeros(prob.basis.size)
        c, _ = prob.solve_p(U, z, z, np.zeros(grid.node_count))
        b = -np.asarray(prob.S_up.T @ U)
        c_direct = spla.spsolve(prob.A_hat.tocsc(), b)
        assert np.abs(c - c_direct).max() < 1e-10 * np.abs(c_direct).max()

    def test_huge_yield_stress_freezes_plastic_field(self):
        grid = Grid.unit_cube(2)
        params = MaterialParams(mu=80.0, lam=110.0, k1=0.5, Lc=0.1, sigma_y=1e12)
        var = ModelVariant("kin_spin", params)
        prob = DiscreteProblem(grid, full_dirichlet(), var, SHEAR01, SolverConfig())
        U = prob.lift(1e-3)
        z = np.zeros(prob.basis.size)
        c, _ = prob.solve_p(U, z, z, np.zeros(grid.node_count))
        assert np.all(c == 0.0)

    def test_no_force_no_motion(self):
        grid = Grid.unit_cube(2)
        prob = DiscreteProblem(grid, full_dirichlet(), KIN, SHEAR01, TIGHT)
        z = np.zeros(prob.basis.size)
        c, its = prob.solve_p(np.zeros(3 * grid.node_count), z, z, np.zeros(grid.node_count))
        assert np.all(c == 0.0)

    def test_elastic_below_yield(self):
        grid = Grid.unit_cube(2)
        prob = DiscreteProblem(grid, full_dirichlet(), KIN, SHEAR01, TIGHT)
        a = 0.3 * PARAMS.sigma_y / (np.sqrt(2) * PARAMS.mu)
        U = prob.lift(a)
        z = np.zeros(prob.basis.size)
        c, _ = prob.solve_p(U, z, z, np.zeros(grid.node_count))
        assert np.all(c == 0.0)


class TestTimeStep:
    def test_zero_load_keeps_zero_state(self):
        grid = Grid.unit_cube(2)
        prob = DiscreteProblem(grid, BoundaryConfig(("zmin", "zmax")), KIN, SHEAR01, TIGHT)
        state, rep = time_step(prob, SimState.zeros(grid), LoadStep(1.0, 0.0))
        assert np.all(state.u.values == 0.0) and np.all(state.p.values == 0.0)
        assert rep.dissipation_functional == 0.0

    def test_elastic_step_has_no_flow(self):
        grid = Grid.unit_cube(2)
        cfg = SolverConfig(tol_outer=1e-14, tol_cg=1e-13, tol_fista=1e-12, vi_probes=200)
        prob = DiscreteProblem(grid, full_dirichlet(), KIN, SHEAR01, cfg)
        a = 0.5 * PARAMS.sigma_y / (np.sqrt(2) * PARAMS.mu)
        state, rep = time_step(prob, SimState.zeros(grid), LoadStep(1.0, a))
        assert np.all(state.p.values == 0.0)
        assert rep.active_node_fraction == 0.0
        sig = sigma_nodal(grid, PARAMS, state.u, state.p)
        assert np.max(np.abs(sig[:, 0, 1] - PARAMS.mu * a)) < 1e-12
        # smooth optimality: the inequality holds essentially exactly
        assert rep.vi_residual >= -1e-12

    def test_single_cell_shear_matches_pointwise_update(self):
        params = MaterialParams(mu=80.0, lam=110.0, k1=0.5, Lc=0.0, sigma_y=0.3)
        var = ModelVariant("kin_spin", params)
        grid = Grid((1, 1, 1), (1.0, 1.0, 1.0))
        prob = DiscreteProblem(grid, full_dirichlet(), var, SHEAR01, TIGHT)
        amps = np.linspace(0, 4 * params.sigma_y / (np.sqrt(2) * params.mu), 9)[1:]
        oracle = radial_return_0d(params, [a * sym(SHEAR01) for a in amps], "kin")
        state = SimState.zeros(grid)
        scale = max(np.linalg.norm(s) for s, _, _ in oracle)
        for k, a in enumerate(amps):
            state, _ = time_step(prob, state, LoadStep(float(k + 1), float(a)))
            sig = sigma_nodal(grid, params, state.u, state.p)
            assert np.max(np.abs(sig - oracle[k][0])) < 1e-8 * scale
            assert np.max(np.abs(sym(state.p.values) - oracle[k][1])) < 1e-8

    @pytest.mark.parametrize("tag,hardening", [
        ("iso_spin", "iso"), ("kin_irrot", "kin"), ("iso_irrot", "iso"),
    ])
    def test_homogeneous_limit_matches_pointwise_update_all_variants(self, tag, hardening):
        params = MaterialParams(mu=80.0, lam=110.0, k1=0.5, k2=0.4, Lc=0.0, sigma_y=0.3)
        var = ModelVariant(tag, params)
        grid = Grid((2, 2, 2), (0.5, 0.5, 0.5))
        prob = DiscreteProblem(grid, full_dirichlet(), var, SHEAR01, TIGHT)
        amps = np.linspace(0, 4 * params.sigma_y / (np.sqrt(2) * params.mu), 9)[1:]
        oracle = radial_return_0d(params, [a * sym(SHEAR01) for a in amps], hardening)
        state = SimState.zeros(grid)
        scale = max(np.linalg.norm(s) for s, _, _ in oracle)
        for k, a in enumerate(amps):
            state, _ = time_step(prob, state, LoadStep(float(k + 1), float(a)))
            sig = sigma_nodal(grid, params, state.u, state.p)
            assert np.max(np.abs(sig - oracle[k][0])) < 1e-8 * scale
            assert np.max(np.abs(sym(state.p.values) - oracle[k][1])) < 1e-8
            assert np.max(np.abs(state.gamma.values - oracle[k][2])) < 1e-8
        if var.symmetric:
            assert TensorField(state.p.values).max_symmetry_violation() < 1e-14

    def test_symmetry_preserved_without_length_scale(self):
        params = MaterialParams(mu=80.0, lam=110.0, k1=0.5, Lc=0.0, sigma_y=0.3)
        var = ModelVariant("kin_spin", params)
        grid = Grid.unit_cube(2)
        prob = DiscreteProblem(grid, full_dirichlet(), var, SHEAR01, TIGHT)
        state = SimState.zeros(grid)
        for k, a in enumerate(np.linspace(0, 0.01, 6)[1:]):
            state, _ = time_step(prob, state, LoadStep(float(k + 1), float(a)))
        assert TensorField(state.p.values).max_symmetry_violation() < 1e-10
        assert np.abs(state.p.values).max() > 1e-4  # plastic flow happened

    def test_dissipation_and_kkt_on_gradient_run(self):
        grid = Grid.unit_cube(4)
        bc = BoundaryConfig(("zmin", "zmax"))
        D = np.zeros((3, 3))
        D[0, 2] = 1.0
        cfg = SolverConfig(tol_outer=1e-11, tol_cg=1e-11, tol_fista=1e-10, vi_probes=100)
        prob = DiscreteProblem(grid, bc, KIN, D, cfg)
        state = SimState.zeros(grid)
        a_y = PARAMS.sigma_y / (np.sqrt(2) * PARAMS.mu)
        for k, a in enumerate(np.linspace(0, 5 * a_y, 8)[1:]):
            state, rep = time_step(prob, state, LoadStep(float(k + 1), float(a)))
            scale = rep.energy.magnitude()
            assert rep.dissipation_increment >= -1e-12 * scale
            assert rep.kkt_max_violation <= 1e-6
            assert rep.kkt_max_misalignment <= 1e-6
            assert rep.vi_residual >= -1e-8
            # block descent: the objective never increases beyond tolerance
            assert rep.objective_increase <= 1e-9
        assert rep.active_node_fraction > 0.1

    def test_perturbed_state_violates_inequality(self):
        grid = Grid.unit_cube(3)
        bc = BoundaryConfig(("zmin", "zmax"))
        D = np.zeros((3, 3))
        D[0, 2] = 1.0
        prob = DiscreteProblem(grid, bc, KIN, D, TIGHT)
        state = SimState.zeros(grid)
        a = 4 * PARAMS.sigma_y / (np.sqrt(2) * PARAMS.mu)
        prev = SimState.zeros(grid)
        state, rep = time_step(prob, prev, LoadStep(1.0, a))
        U = state.u.values.reshape(-1)
        c = prob.basis.to_reduced(state.p.values.reshape(-1))
        c_prev = prob.basis.to_reduced(prev.p.values.reshape(-1))
        F = np.zeros(3 * grid.node_count)
        rng = np.random.default_rng(9)
        ok = prob.vi_residual(U, c, c_prev, prev.gamma.values, F, 500, rng)
        bad = prob.vi_residual(U, 1.1 * c, c_prev, prev.gamma.values, F, 500, rng)
        assert ok >= -1e-8
        assert bad < -1e-8  # detection of a non-minimizer

    def test_rate_independence_on_proportional_path(self):
        grid = Grid.unit_cube(3)
        prob = DiscreteProblem(grid, full_dirichlet(), KIN, SHEAR01, TIGHT)
        a_y = PARAMS.sigma_y / (np.sqrt(2) * PARAMS.mu)

        def run(nsteps):
            st = SimState.zeros(grid)
            out = {}
            for a in np.linspace(0, 4 * a_y, nsteps + 1)[1:]:
                st, _ = time_step(prob, st, LoadStep(float(a), float(a)))
                out[round(float(a), 14)] = st
            return out

        coarse, fine = run(4), run(8)
        scale = max(np.abs(st.p.values).max() for st in coarse.values())
        for lvl, st in coarse.items():
            st2 = fine[lvl]
            assert np.max(np.abs(st.p.values - st2.p.values)) < 1e-8 * scale

    def test_infeasible_bc(self):
        grid = Grid.unit_cube(2)
        prob = DiscreteProblem(grid, full_dirichlet(), KIN, SHEAR01, TIGHT)
        with pytest.raises(InfeasibleBC):
            time_step(prob, SimState.zeros(grid), LoadStep(1.0, np.inf))

    def test_no_convergence_is_reported(self):
        grid = Grid.unit_cube(2)
        cfg = SolverConfig(tol_outer=1e-16, tol_cg=1e-16, tol_fista=1e-16,
                           max_outer=1, max_cg=2, max_fista=3)
        prob = DiscreteProblem(grid, BoundaryConfig(("zmin", "zmax")), KIN, SHEAR01, cfg)
        with pytest.raises(NoConvergence):
            time_step(prob, SimState.zeros(grid), LoadStep(1.0, 0.05))

    def test_coercivity_guard(self):
        grid = Grid.unit_cube(2)
        bad = MaterialParams(mu=80.0, lam=110.0, k1=0.5, sigma_y=0.3)
        var = ModelVariant("kin_spin", bad)
        relaxed = object.__new__(ModelVariant)  # bypass admissibility to hit the guard
        object.__setattr__(relaxed, "tag", "kin_spin")
        object.__setattr__(relaxed, "params", MaterialParams(mu=80.0, lam=110.0, sigma_y=0.3))
        object.__setattr__(relaxed, "curl_route", "curlcurl")
        with pytest.raises(SingularBlock):
            DiscreteProblem(grid, BoundaryConfig(("zmin",)), relaxed, None, TIGHT)


class TestMicromorphic:
    def test_monolithic_solve_and_microbalance(self):
        grid = Grid.unit_cube(3)
        var = ModelVariant("micromorphic", PARAMS)
        bc = BoundaryConfig(("zmin",))
        cfg = SolverConfig(tol_cg=1e-12)
        prob = DiscreteProblem(grid, bc, var, None, cfg)
        state, rep = time_step(prob, SimState.zeros(grid), LoadStep(1.0, 0.0, (0.0, 0.0, -5.0)))
        assert rep.dissipation_functional == 0.0
        assert np.all(state.gamma.values == 0.0)
        F = prob.blocks.body_force_vector((0.0, 0.0, -5.0))
        c = prob.basis.to_reduced(state.p.values.reshape(-1))
        r_p = np.asarray(prob.S_up.T @ state.u.values.reshape(-1)) + np.asarray(prob.A_hat @ c)
        assert np.linalg.norm(r_p) <= 1e-9 * np.linalg.norm(F[prob.free])
        assert np.abs(state.p.values).max() > 0.0
