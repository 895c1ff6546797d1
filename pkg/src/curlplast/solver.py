"""Implicit stepping of the incremental variational inequality.

Each load step minimizes the jointly convex functional

    J(u, p) = 1/2 a((u,p),(u,p)) - <load, u> + sum_j w_j D_inc(p_j - p_j^prev)

by alternating exact block solves: a Jacobi-preconditioned conjugate
gradient solve in u and an accelerated proximal-gradient solve in p.  The
nonsmooth term is the lumped (nodal) quadrature of the one-homogeneous
dissipation, so its proximal map is an exact per-node shrinkage.  Because
the dissipation is one-homogeneous the time-step size cancels and steps are
parameterized by load increments.

The p iteration runs in the lumped-mass metric: gradients are divided by
the nodal weights and the shrinkage threshold becomes uniform across nodes,
which both preconditions the iteration and keeps the prox closed-form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import (
    BoundaryConfig,
    Grid,
    ScalarField,
    SingularBlock,
    TensorField,
    VectorField,
    build_blocks,
    build_p_basis,
    dirichlet_mask,
)
from .models import EnergySplit, ModelVariant, SimState, total_energy
from .tensors import norm as frob_norm


class NoConvergence(RuntimeError):
    def __init__(self, what, iterations, residual, tol):
        super().__init__(f"{what} did not converge in {iterations} iterations (residual {residual:.3e}, tol {tol:.3e})")
        self.what = what
        self.iterations = iterations
        self.residual = residual
        self.tol = tol


class InfeasibleBC(ValueError):
    """Dirichlet data is not finite or not representable on the grid."""


@dataclass(frozen=True)
class SolverConfig:
    tol_outer: float = 1e-10
    tol_cg: float = 1e-10
    tol_fista: float = 1e-9
    max_outer: int = 200
    max_cg: int = 20000
    max_fista: int = 100000
    lipschitz_safety: float = 1.1
    dt_schedule: tuple[float, ...] | None = None  # bookkeeping only; steps are load-driven
    vi_probes: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("tol_outer", "tol_cg", "tol_fista"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_outer", "max_cg", "max_fista"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.lipschitz_safety < 1.0:
            raise ValueError("lipschitz_safety must be >= 1")


@dataclass(frozen=True)
class LoadStep:
    """One entry of the load program: pseudo-time level and actual loading."""

    level: float
    amplitude: float = 0.0
    body_force: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class StepReport:
    energy: EnergySplit
    dissipation_increment: float  # discrete pairing of the generalized stress with dp
    dissipation_functional: float  # sigma_y * integral |dp|, the dissipated work
    vi_residual: float | None
    kkt_max_violation: float
    kkt_max_misalignment: float
    active_node_fraction: float
    outer_iterations: int
    cg_iterations: int
    fista_iterations: int
    objective: float
    objective_increase: float = 0.0  # worst uphill move of the alternation, if any


def shrink_magnitude(variant: ModelVariant, znorm, tau, gamma_prev):
    """Magnitude of the proximal map of tau * D_inc at radius znorm.

    Kinematic: plain shrinkage by tau * sigma_y.  Isotropic: the scalar
    optimality condition of the eliminated internal variable adds a linear
    drag, m = (|z| - tau sigma_y - tau mu k2 gamma) / (1 + tau mu k2).
    """
    sy = variant.params.sigma_y
    z = np.asarray(znorm, dtype=float)
    if variant.isotropic:
        h = variant.params.mu * variant.params.k2
        return np.maximum(0.0, (z - tau * sy - tau * h * np.asarray(gamma_prev)) / (1.0 + tau * h))
    return np.maximum(0.0, z - tau * sy)


def prox_dissipation(variant: ModelVariant, z, tau, gamma_prev=0.0):
    """Proximal map of tau * D_inc on 3x3 tensors (ties at the threshold give 0)."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    z = np.asarray(z, dtype=float)
    n = frob_norm(z)
    m = shrink_magnitude(variant, n, tau, gamma_prev)
    factor = np.where(n > 0.0, m / np.maximum(n, 1e-300), 0.0)
    return z * np.asarray(factor)[..., None, None]


def accelerated_prox_gradient(matvec, b, w, prox, c0, step, tol, maxiter, scale_floor=0.0):
    """Accelerated proximal-gradient iteration in the diagonal metric w.

    prox maps a point to the exact minimizer of the nonsmooth term plus half
    the squared w-distance scaled by the step.  The momentum restarts when it
    points uphill; convergence is the fixed-point residual of the plain
    proximal-gradient map relative to the iterate size.
    """
    c = c0.copy()
    y = c0.copy()
    tk = 1.0

    def mnorm(x):
        return float(np.sqrt(x @ (w * x))) if x.size else 0.0

    res = 0.0
    for it in range(maxiter):
        g = matvec(y) - b
        c_new = prox(y - step * g / w)
        g2 = matvec(c_new) - b
        c_fp = prox(c_new - step * g2 / w)
        res = mnorm(c_fp - c_new)
        scale = max(mnorm(c_new), scale_floor)
        if res <= tol * max(scale, 1e-300):
            return c_fp, it + 1
        if float(((y - c_new) * w) @ (c_new - c)) > 0.0:
            tk = 1.0  # adaptive restart: momentum points uphill
        tk_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        y = c_new + ((tk - 1.0) / tk_next) * (c_new - c)
        c, tk = c_new, tk_next
    raise NoConvergence("proximal gradient", maxiter, res, tol)


class DiscreteProblem:
    """Assembled, constraint-reduced operators for one variant on one grid.

    Plastic dofs live in reduced coordinates c with p = B c; displacement
    dofs are split into free and prescribed parts by the Dirichlet faces.
    """

    def __init__(self, grid: Grid, boundary: BoundaryConfig, variant: ModelVariant,
                 dirichlet_matrix=None, config: SolverConfig | None = None):
        self.grid = grid
        self.boundary = boundary
        self.variant = variant
        self.config = config or SolverConfig()
        if variant.tag in ("kin_spin", "kin_irrot", "micromorphic") and not variant.params.k1 > 0.0:
            raise SingularBlock(f"{variant.tag} needs k1 > 0 for a coercive bilinear form")

        self.blocks = build_blocks(grid, variant.params)
        self.basis = build_p_basis(grid, boundary.micro_hard_faces, "sym_sl" if variant.symmetric else "sl")
        mu = variant.params.mu
        A_pp = self.blocks.K_pp_el + mu * variant.params.Lc ** 2 * self.blocks.K_curl(variant.curl_route)
        if variant.k1_eff:
            A_pp = A_pp + mu * variant.k1_eff * self.blocks.K_sym
        self.A_pp_full = A_pp.tocsr()
        B = self.basis.B
        self.A_hat = 0.5 * ((B.T @ A_pp @ B) + (B.T @ A_pp @ B).T).tocsr()
        self.S_up = (self.blocks.K_up @ B).tocsr()  # u-rows, reduced p-columns

        self.presc = dirichlet_mask(grid, boundary)
        self.free = ~self.presc
        K_uu = self.blocks.K_uu.tocsr()
        self.K_ff = K_uu[self.free][:, self.free].tocsr()
        self.K_fg = K_uu[self.free][:, self.presc].tocsr()
        self.S_f = self.S_up[self.free].tocsr()
        self.S_g = self.S_up[self.presc].tocsr()
        d = self.K_ff.diagonal()
        self.jacobi_ff = 1.0 / np.where(d > 0.0, d, 1.0)

        self.w_node = self.blocks.fem.w_node
        self.w_seg = self.basis.scatter_per_node(self.w_node)
        self.dirichlet_matrix = None if dirichlet_matrix is None else np.asarray(dirichlet_matrix, dtype=float)
        self._coords = grid.node_coords()
        self._lipschitz = None
        self._monolithic = None

    # -- boundary data -----------------------------------------------------

    def lift(self, amplitude):
        """Full displacement vector holding the prescribed affine data."""
        U = np.zeros(3 * self.grid.node_count)
        if self.dirichlet_matrix is not None and amplitude != 0.0:
            vals = amplitude * (self._coords @ self.dirichlet_matrix.T)
            if not np.all(np.isfinite(vals)):
                raise InfeasibleBC("Dirichlet data is not finite")
            U = vals.reshape(-1)
        U = np.where(self.presc, U, 0.0)
        return U

    # -- linear algebra helpers --------------------------------------------

    def pcg(self, A, b, x0, tol, maxiter, precond):
        """Jacobi-preconditioned conjugate gradients with warm start."""
        nb = np.linalg.norm(b)
        if nb == 0.0:
            return np.zeros_like(b), 0
        x = x0.copy()
        r = b - A @ x
        z = precond * r
        p = z.copy()
        rz = float(r @ z)
        for it in range(maxiter):
            if np.linalg.norm(r) <= tol * nb:
                return x, it
            Ap = A @ p
            alpha = rz / float(p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            z = precond * r
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        res = np.linalg.norm(b - A @ x) / nb
        if res <= tol:
            return x, maxiter
        raise NoConvergence("conjugate gradients", maxiter, res, tol)

    def lipschitz(self):
        """Upper bound for the largest eigenvalue of the mass-scaled p operator."""
        if self._lipschitz is None:
            m = self.basis.size
            if m == 0:
                self._lipschitz = 1.0
            else:
                rng = np.random.default_rng(1234)
                v = rng.standard_normal(m)
                lam = 1.0
                for _ in range(30):
                    v = np.asarray(self.A_hat @ v) / self.w_seg
                    nv = np.linalg.norm(v)
                    if nv == 0.0:
                        break
                    v /= nv
                Av = np.asarray(self.A_hat @ v)
                denom = float(v @ (self.w_seg * v))
                lam = max(float(v @ Av) / denom, 1e-300) if denom > 0 else 1.0
                self._lipschitz = lam * self.config.lipschitz_safety
        return self._lipschitz

    # -- dissipation bookkeeping --------------------------------------------

    def node_increment_norms(self, dc):
        return self.basis.node_norms(dc)

    def dissipation_value(self, dc, gamma_prev):
        """Lumped-quadrature value of the incremental dissipation functional."""
        if not self.variant.has_dissipation:
            return 0.0
        n = self.node_increment_norms(dc)
        sy = self.variant.params.sigma_y
        val = sy * float(self.w_node @ n)
        if self.variant.isotropic:
            h = self.variant.params.mu * self.variant.params.k2
            val += 0.5 * h * float(self.w_node @ ((gamma_prev + n) ** 2 - gamma_prev ** 2))
        return val

    def _prox_reduced(self, x, c_prev, tau, gamma_prev):
        """Exact nodewise prox in reduced coordinates (uniform threshold tau)."""
        d = x - c_prev
        n = self.node_increment_norms(d)
        m = shrink_magnitude(self.variant, n, tau, gamma_prev)
        factor = np.where(n > 0.0, m / np.maximum(n, 1e-300), 0.0)
        return c_prev + d * self.basis.scatter_per_node(factor)

    # -- block solves --------------------------------------------------------

    def solve_u(self, U, c, F, tol=None, maxiter=None):
        """CG solve of the displacement block at fixed plastic field (in place)."""
        tol = tol or self.config.tol_cg
        maxiter = maxiter or self.config.max_cg
        rhs = F[self.free] - self.K_fg @ U[self.presc] - self.S_f @ c
        x, its = self.pcg(self.K_ff, rhs, U[self.free], tol, maxiter, self.jacobi_ff)
        U[self.free] = x
        return U, its

    def solve_p(self, U, c_prev, c0, gamma_prev, tol=None, maxiter=None):
        """Accelerated proximal-gradient solve of the plastic block.

        Runs in the lumped-mass metric, in which the nodal shrinkage has one
        uniform threshold; the prox is exact per node.
        """
        tol = tol or self.config.tol_fista
        maxiter = maxiter or self.config.max_fista
        b = -np.asarray(self.S_up.T @ U)
        t = 1.0 / self.lipschitz()
        # the size of one full gradient step off zero bounds the minimizer
        # scale; it floors the relative test when the increment is tiny
        data_scale = t * self._mnorm(b / self.w_seg) if b.size else 0.0
        return accelerated_prox_gradient(
            matvec=lambda v: np.asarray(self.A_hat @ v),
            b=b,
            w=self.w_seg,
            prox=lambda z: self._prox_reduced(z, c_prev, t, gamma_prev),
            c0=c0,
            step=t,
            tol=tol,
            maxiter=maxiter,
            scale_floor=max(self._mnorm(c_prev), data_scale),
        )

    def _mnorm(self, x):
        return float(np.sqrt(np.abs(x) @ (self.w_seg * np.abs(x)))) if x.size else 0.0

    # -- functional evaluation ------------------------------------------------

    def objective(self, U, c, c_prev, gamma_prev, F):
        smooth = (
            0.5 * float(U @ (self.blocks.K_uu @ U))
            + float(U @ (self.S_up @ c))
            + 0.5 * float(c @ (self.A_hat @ c))
            - float(F @ U)
        )
        return smooth + self.dissipation_value(c - c_prev, gamma_prev)

    def smooth_residual_reduced(self, U, c):
        """b - A c in reduced coordinates: the weighted weak generalized stress."""
        return -np.asarray(self.S_up.T @ U) - np.asarray(self.A_hat @ c)

    def eshelby_reduced(self, U, c):
        """Projected nodal generalized stress in reduced coordinates (per unit weight)."""
        return self.smooth_residual_reduced(U, c) / self.w_seg

    def kkt_check(self, U, c, dc, gamma_new, active_tol=1e-12):
        """Discrete complementarity of the flow law at every node.

        Returns (max radius violation / sigma_y, max sine of the flow
        misalignment, active fraction).  The generalized stress is the weak
        recovery projected on each node's admissible subspace, which is its
        deviator at unconstrained nodes.
        """
        if not self.variant.has_dissipation:
            return 0.0, 0.0, 0.0
        sy = self.variant.params.sigma_y
        T = self.eshelby_reduced(U, c)
        tn = self.basis.node_norms(T)
        dn = self.basis.node_norms(dc)
        radius = sy + self.variant.params.mu * self.variant.k2_eff * gamma_new
        active = dn > active_tol
        viol_in = np.maximum(0.0, tn - radius)[~active]
        viol_ac = np.abs(tn - radius)[active]
        worst = max(viol_in.max() / sy if viol_in.size else 0.0,
                    viol_ac.max() / sy if viol_ac.size else 0.0)
        starts, nodes = self.basis.segment_starts()
        dots = np.zeros(len(dn))
        if len(starts):
            dots[nodes] = np.add.reduceat(T * dc, starts)
        with np.errstate(invalid="ignore", divide="ignore"):
            cosang = dots / np.maximum(tn * dn, 1e-300)
        sin2 = np.maximum(0.0, 1.0 - np.minimum(cosang, 1.0) ** 2)
        mis = np.sqrt(sin2[active]).max() if active.any() else 0.0
        wrong_way = active & (cosang < 0.0)
        if wrong_way.any():
            mis = 1.0
        return float(worst), float(mis), float(active.mean())

    def vi_residual(self, U, c, c_prev, gamma_prev, F, probes=1000, rng=None):
        """Worst normalized violation of the incremental inequality.

        Random admissible directions (free displacement part, reduced plastic
        part) plus the two canonical probes along +/- the computed increment;
        nonnegative values up to roundoff certify the minimizer.
        """
        rng = rng or np.random.default_rng(self.config.seed)
        r_u = np.asarray(self.blocks.K_uu @ U) + np.asarray(self.S_up @ c) - F
        r_u = r_u[self.free]
        r_p = np.asarray(self.S_up.T @ U) + np.asarray(self.A_hat @ c)
        dc = c - c_prev
        j0 = self.dissipation_value(dc, gamma_prev)
        ref = np.sqrt(float(r_u @ r_u) + float(r_p @ r_p))
        size = max(self._mnorm(dc), 1e-8)
        worst = np.inf
        nf = int(self.free.sum())
        m = self.basis.size
        directions = []
        directions.append((np.zeros(nf), -dc))
        directions.append((np.zeros(nf), dc.copy()))
        for _ in range(probes):
            dv = rng.standard_normal(nf)
            dq = rng.standard_normal(m)
            nrm = np.sqrt(dv @ dv + dq @ dq)
            if nrm > 0:
                dv *= size / nrm
                dq *= size / nrm
            directions.append((dv, dq))
        for dv, dq in directions:
            lin = float(r_u @ dv) + float(r_p @ dq)
            jq = self.dissipation_value(dc + dq, gamma_prev)
            viol = lin + jq - j0
            scale = abs(lin) + jq + j0 + 1e-300
            worst = min(worst, viol / scale)
        return float(worst)

    # -- monolithic (micromorphic) path ----------------------------------------

    def monolithic_matrix(self):
        if self._monolithic is None:
            K = sp.bmat([[self.K_ff, self.S_f], [self.S_f.T, self.A_hat]], format="csr")
            d = K.diagonal()
            self._monolithic = (K, 1.0 / np.where(d > 0.0, d, 1.0))
        return self._monolithic


def time_step(problem: DiscreteProblem, state_prev: SimState, load: LoadStep,
              config: SolverConfig | None = None):
    """Advance one load step; returns the new state and its report."""
    cfg = config or problem.config
    variant = problem.variant
    if not np.all(np.isfinite([load.level, load.amplitude, *load.body_force])):
        raise InfeasibleBC("load step contains non-finite data")

    F = problem.blocks.body_force_vector(load.body_force)
    U = problem.lift(load.amplitude)
    U[problem.free] = state_prev.u.values.reshape(-1)[problem.free]
    c_prev = problem.basis.to_reduced(state_prev.p.values.reshape(-1))
    gamma_prev = state_prev.gamma.values
    c = c_prev.copy()
    cg_total = fista_total = 0
    uphill = 0.0

    if not variant.has_dissipation:
        # single monolithic SPD solve replaces the flow law
        K, precond = problem.monolithic_matrix()
        rhs = np.concatenate([
            F[problem.free] - problem.K_fg @ U[problem.presc],
            -np.asarray(problem.S_g.T @ U[problem.presc]),
        ])
        x0 = np.concatenate([U[problem.free], c])
        x, cg_total = problem.pcg(K, rhs, x0, cfg.tol_cg, cfg.max_cg, precond)
        nf = int(problem.free.sum())
        U[problem.free] = x[:nf]
        c = x[nf:]
        outer = 1
    else:
        J_prev = np.inf
        u_scale = None
        for outer in range(1, cfg.max_outer + 1):
            U, its_u = problem.solve_u(U, c, F, cfg.tol_cg, cfg.max_cg)
            cg_total += its_u
            c, its_p = problem.solve_p(U, c_prev, c, gamma_prev, cfg.tol_fista, cfg.max_fista)
            fista_total += its_p
            r_f = (problem.K_ff @ U[problem.free] + problem.K_fg @ U[problem.presc]
                   + problem.S_f @ c - F[problem.free])
            if u_scale is None:
                u_scale = max(np.linalg.norm(F[problem.free]),
                              np.linalg.norm(problem.K_fg @ U[problem.presc]),
                              np.linalg.norm(problem.S_f @ c), 1e-300)
            u_res = np.linalg.norm(r_f) / u_scale
            J = problem.objective(U, c, c_prev, gamma_prev, F)
            scale_J = abs(J) + problem.dissipation_value(c - c_prev, gamma_prev) + 1e-300
            if np.isfinite(J_prev):
                uphill = max(uphill, (J - J_prev) / scale_J)
            if u_res <= cfg.tol_cg and J_prev - J <= cfg.tol_outer * scale_J:
                break
            J_prev = J
        else:
            raise NoConvergence("outer alternation", cfg.max_outer, u_res, cfg.tol_cg)

    dc = c - c_prev
    dn = problem.node_increment_norms(dc)
    # gamma tracks the accumulated plastic multiplier; the micromorphic field
    # is elastic, so nothing accumulates there
    gamma_new = gamma_prev + dn if variant.has_dissipation else gamma_prev
    P = problem.basis.to_full(c)
    state = SimState(
        u=VectorField(U.reshape(-1, 3)),
        p=TensorField(P.reshape(-1, 3, 3)),
        gamma=ScalarField(gamma_new),
        t=load.level,
    )

    r_hat = problem.smooth_residual_reduced(U, c)
    diss_pairing = float(r_hat @ dc)
    diss_func = variant.params.sigma_y * float(problem.w_node @ dn) if variant.has_dissipation else 0.0
    kkt_viol, kkt_mis, active = problem.kkt_check(U, c, dc, gamma_new)
    energy = total_energy(problem.grid, variant, state, load.body_force)
    vi = None
    if cfg.vi_probes:
        rng = np.random.default_rng(cfg.seed + int(round(load.level * 1e6)) % (2 ** 31))
        vi = problem.vi_residual(U, c, c_prev, gamma_prev, F, cfg.vi_probes, rng)
    report = StepReport(
        energy=energy,
        dissipation_increment=diss_pairing,
        dissipation_functional=diss_func,
        vi_residual=vi,
        kkt_max_violation=kkt_viol,
        kkt_max_misalignment=kkt_mis,
        active_node_fraction=active,
        outer_iterations=outer,
        cg_iterations=cg_total,
        fista_iterations=fista_total,
        objective=problem.objective(U, c, c_prev, gamma_prev, F),
        objective_increase=uphill,
    )
    return state, report
