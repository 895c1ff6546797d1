"""Numerical study of the coercivity inequality for incompatible fields.

For tensor fields with vanishing tangential trace on part of the boundary,
the L2 norm of the field is controlled by the L2 norms of its symmetric
part and of its row-wise curl.  This module estimates the smallest discrete
Rayleigh quotient

    ( ||sym P||^2 + ls^2 ||Curl P||^2 ) / ||P||^2

over the nodal trilinear subspace with the tangential constraint imposed at
the nodes, and exhibits the failure of the inequality without boundary
conditions (constant skew fields lie in the kernel).  The estimate is an
upper bound for the infimum over the conforming subspace only; no certified
constant is claimed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, TensorField, build_blocks, build_p_basis
from .solver import NoConvergence
from .tensors import MaterialParams, cross_matrix

# material values are irrelevant for the unit-coefficient blocks; any
# admissible moduli give the same K_sym / K_curl / mass operators
_UNIT = MaterialParams(mu=1.0, lam=0.0)


class ZeroField(ValueError):
    """The probe field vanishes after the tangential constraint is applied."""


@dataclass(frozen=True)
class KornProblem:
    """Grid, constrained faces (possibly none) and the curl length scale."""

    grid: Grid
    gamma_faces: tuple[str, ...] = ()
    length_scale: float = 1.0

    def __post_init__(self):
        if not self.length_scale > 0.0:
            raise ValueError("length_scale must be positive")
        object.__setattr__(self, "gamma_faces", tuple(self.gamma_faces))


def _operators(problem: KornProblem):
    blocks = build_blocks(problem.grid, _UNIT)
    basis = build_p_basis(problem.grid, problem.gamma_faces, "none")
    ls2 = problem.length_scale ** 2
    K = blocks.K_sym + ls2 * blocks.K_curl_cc
    return blocks, basis, K.tocsr()


def _roundoff_floor(K, x):
    """Upper bound for the roundoff in x' K x; form values below it are zero."""
    ax = np.abs(x)
    return 64.0 * np.finfo(float).eps * float(ax @ np.abs(K) @ ax)


def korn_quotient(problem: KornProblem, P: TensorField) -> float:
    """Rayleigh quotient of a nodal field after applying the tangential mask.

    Quadratic-form values indistinguishable from zero at double precision
    (at or below the accumulated-roundoff floor) are flushed to exactly 0,
    so exact kernel members such as constant skew fields report 0.0.
    """
    blocks, basis, K = _operators(problem)
    x = basis.to_reduced(P.values.reshape(-1))
    M = basis.B.T @ blocks.M_cons @ basis.B
    denom = float(x @ (M @ x))
    if denom <= 0.0:
        raise ZeroField("field vanishes on the constrained space")
    Khat = basis.B.T @ K @ basis.B
    num = float(x @ (Khat @ x))
    if abs(num) <= _roundoff_floor(Khat, x):
        return 0.0
    return num / denom


def estimate_min_quotient(problem: KornProblem, tol: float = 1e-8,
                          max_iterations: int = 200, cg_tol: float = 1e-12,
                          seed: int = 0) -> float:
    """Smallest generalized eigenvalue of the constrained quotient.

    Inverse power iteration with zero shift and conjugate-gradient inner
    solves, stopped at relative eigenvalue tolerance tol.  Known kernel
    candidates (constant skew fields) are probed first: when one survives
    the constraint exactly, the infimum is 0 and no iteration is run.
    1/sqrt of the returned value estimates the constant in the inequality.
    """
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    blocks, basis, K = _operators(problem)
    Khat = (basis.B.T @ K @ basis.B).tocsr()
    Mhat = (basis.B.T @ blocks.M_cons @ basis.B).tocsr()
    n = Khat.shape[0]
    if n == 0:
        raise ZeroField("constrained space is empty")

    # exact kernel members survive only when no face is constrained
    for k in range(3):
        a = np.zeros(3)
        a[k] = 1.0
        cand = np.tile(cross_matrix(a).reshape(-1), problem.grid.node_count)
        x = basis.to_reduced(cand)
        mx = float(x @ (Mhat @ x))
        if mx <= 0.0:
            continue
        num = float(x @ (Khat @ x))
        if abs(num) <= _roundoff_floor(Khat, x):
            return 0.0

    d = Khat.diagonal()
    precond = 1.0 / np.where(d > 0.0, d, 1.0)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.sqrt(float(x @ (Mhat @ x)))
    lam_prev = np.inf
    for it in range(max_iterations):
        rhs = np.asarray(Mhat @ x)
        # x is M-normalized, so x' K x is the current Rayleigh quotient and
        # x / (x' K x) approximates K^-1 M x: a good warm start
        y = _cg(Khat, rhs, x / max(float(x @ (Khat @ x)), 1e-300), cg_tol, 50 * n + 1000, precond)
        my = float(y @ (Mhat @ y))
        if my <= 0.0:
            raise NoConvergence("inverse power iteration", it, np.inf, tol)
        x = y / np.sqrt(my)
        lam = float(x @ (Khat @ x)) / float(x @ (Mhat @ x))
        if abs(lam - lam_prev) <= tol * abs(lam):
            return lam
        lam_prev = lam
    raise NoConvergence("inverse power iteration", max_iterations, abs(lam - lam_prev) / abs(lam), tol)


def _cg(A, b, x0, tol, maxiter, precond):
    x = x0.copy()
    r = b - A @ x
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b)
    z = precond * r
    p = z.copy()
    rz = float(r @ z)
    for _ in range(maxiter):
        if np.linalg.norm(r) <= tol * nb:
            return x
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
        return x
    raise NoConvergence("inner conjugate gradients", maxiter, res, tol)
