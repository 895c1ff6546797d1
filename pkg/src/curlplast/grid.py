"""Structured hexahedral grid with nodal trilinear elements.

Displacements and the plastic distortion are stored at nodes; all nine
tensor components share one scalar trilinear space, which is H1-conforming
and therefore conforming for the row-wise curl.  Quadratic-form blocks are
assembled by composing sparse point-evaluation and point-gradient operators
with constant 9x9 (or 3x3) algebraic kernels, so every block is exact for
the 2x2x2 Gauss rule and trivially symmetric after one symmetrization pass.

Pointwise constraints on the plastic field (trace-free, symmetric, rows
parallel to the outward normal on micro-hard faces) are realized through a
per-node orthonormal basis of the admissible subspace; the sparse matrix B
stacking those bases converts between full nodal tensors (9 dofs per node)
and reduced coordinates, in which the Frobenius norm of a nodal tensor is
the plain Euclidean norm.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
import scipy.sparse as sp

from .tensors import PROJ_DEVSYM, PROJ_SYM, curl_from_gradient, elasticity_matrix

FACES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")


class IndexOutOfRange(IndexError):
    pass


class SingularBlock(ValueError):
    """Requested operator is singular on the admissible space."""


def face_axis_side(face):
    if face not in FACES:
        raise ValueError(f"unknown face {face!r}, expected one of {FACES}")
    idx = FACES.index(face)
    return idx // 2, idx % 2


@dataclass(frozen=True)
class Grid:
    """Axis-aligned box of n[d] identical cells of size h[d] per axis."""

    n: tuple[int, int, int]
    h: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        object.__setattr__(self, "h", tuple(float(v) for v in self.h))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        if any(v < 1 for v in self.n):
            raise ValueError("need at least one cell per axis")
        if any(v <= 0 for v in self.h):
            raise ValueError("cell sizes must be positive")

    @classmethod
    def unit_cube(cls, n):
        return cls((n, n, n), (1.0 / n, 1.0 / n, 1.0 / n))

    @property
    def node_shape(self):
        return (self.n[0] + 1, self.n[1] + 1, self.n[2] + 1)

    @property
    def node_count(self):
        nx, ny, nz = self.node_shape
        return nx * ny * nz

    @property
    def cell_count(self):
        return self.n[0] * self.n[1] * self.n[2]

    @property
    def volume(self):
        return float(np.prod(self.n) * np.prod(self.h))

    def node_index(self, ix, iy, iz):
        nx, ny, _ = self.node_shape
        return ix + nx * (iy + ny * iz)

    def node_ijk(self):
        """Integer lattice coordinates of every node, x fastest."""
        nx, ny, nz = self.node_shape
        iz, iy, ix = np.meshgrid(range(nz), range(ny), range(nx), indexing="ij")
        return np.stack([ix.ravel(), iy.ravel(), iz.ravel()], axis=1)

    def node_coords(self):
        return np.asarray(self.origin) + self.node_ijk() * np.asarray(self.h)

    def nodes_on_face(self, face):
        axis, side = face_axis_side(face)
        ijk = self.node_ijk()
        bound = 0 if side == 0 else self.n[axis]
        return np.nonzero(ijk[:, axis] == bound)[0]

    def cell_nodes(self):
        """(cell_count, 8) node indices, corner order bx + 2 by + 4 bz."""
        nxc, nyc, nzc = self.n
        cz, cy, cx = np.meshgrid(range(nzc), range(nyc), range(nxc), indexing="ij")
        cx, cy, cz = cx.ravel(), cy.ravel(), cz.ravel()
        corners = []
        for bz, by, bx in product((0, 1), (0, 1), (0, 1)):
            corners.append(self.node_index(cx + bx, cy + by, cz + bz))
        # product iterates bz slowest here; reorder to bx + 2by + 4bz
        order = [4 * bz + 2 * by + bx for bz, by, bx in product((0, 1), (0, 1), (0, 1))]
        out = np.empty((self.cell_count, 8), dtype=np.int64)
        for col, dest in enumerate(order):
            out[:, dest] = corners[col]
        return out


@dataclass(frozen=True)
class BoundaryConfig:
    """Dirichlet faces for the displacement and micro-hard faces for p.

    micro_hard_faces defaults to gamma_faces; pass an empty tuple to leave
    the plastic distortion unconstrained at the boundary.
    """

    gamma_faces: tuple[str, ...]
    micro_hard_faces: tuple[str, ...] | None = None

    def __post_init__(self):
        gamma = tuple(self.gamma_faces)
        if not gamma:
            raise ValueError("gamma_faces must be non-empty")
        for f in gamma:
            face_axis_side(f)
        hard = gamma if self.micro_hard_faces is None else tuple(self.micro_hard_faces)
        for f in hard:
            face_axis_side(f)
        object.__setattr__(self, "gamma_faces", gamma)
        object.__setattr__(self, "micro_hard_faces", hard)


# --------------------------------------------------------------------------
# nodal fields

@dataclass
class VectorField:
    values: np.ndarray  # (N, 3)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != 3:
            raise ValueError("VectorField expects shape (N, 3)")

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros((grid.node_count, 3)))


@dataclass
class TensorField:
    values: np.ndarray  # (N, 3, 3)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[1:] != (3, 3):
            raise ValueError("TensorField expects shape (N, 3, 3)")

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros((grid.node_count, 3, 3)))

    def max_trace_violation(self):
        t = np.abs(np.trace(self.values, axis1=1, axis2=2))
        scale = np.maximum(np.linalg.norm(self.values, axis=(1, 2)), 1e-300)
        return float(np.max(t / scale, initial=0.0))

    def max_symmetry_violation(self):
        s = np.linalg.norm(self.values - self.values.transpose(0, 2, 1), axis=(1, 2))
        scale = np.maximum(np.linalg.norm(self.values, axis=(1, 2)), 1e-300)
        return float(np.max(s / scale, initial=0.0))


@dataclass
class ScalarField:
    values: np.ndarray  # (N,)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("ScalarField expects shape (N,)")

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros(grid.node_count))


# --------------------------------------------------------------------------
# trilinear shape functions and point operators

_GP1 = 1.0 / np.sqrt(3.0)
_CORNERS = np.array([[bx, by, bz] for bz in (0, 1) for by in (0, 1) for bx in (0, 1)])
_CORNERS = _CORNERS[np.argsort(_CORNERS[:, 0] + 2 * _CORNERS[:, 1] + 4 * _CORNERS[:, 2])]
_SIGNS = 2 * _CORNERS - 1  # reference corners in {-1, 1}^3
_GAUSS = _GP1 * _SIGNS.astype(float)  # 2x2x2 points, same ordering as corners


def _shape_tables(h):
    """Values and physical gradients of the 8 trilinear shapes at the Gauss points."""
    vals = np.empty((8, 8))
    grads = np.empty((8, 8, 3))
    for g, xi in enumerate(_GAUSS):
        for a, s in enumerate(_SIGNS):
            f = 0.5 * (1.0 + xi * s)
            vals[g, a] = f.prod()
            for d in range(3):
                rest = np.prod([f[e] for e in range(3) if e != d])
                grads[g, a, d] = 0.5 * s[d] * rest * (2.0 / h[d])
    return vals, grads


def shape_gradients(grid: Grid, cell: int):
    """Physical trilinear shape gradients, (8 gauss points, 8 nodes, 3).

    Identical for every cell of the uniform grid; the cell index is only
    validated.  Exact for trilinear fields.
    """
    if not 0 <= int(cell) < grid.cell_count:
        raise IndexOutOfRange(f"cell {cell} outside 0..{grid.cell_count - 1}")
    return _shape_tables(grid.h)[1]


class FemOperators:
    """Sparse point-evaluation/gradient operators at the Gauss points.

    E0 maps nodal scalars to values at all cell_count * 8 Gauss points; D[k]
    maps to the k-th partial derivative.  w_gp are quadrature weights and
    w_node the lumped (row-sum) nodal weights.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        vals, grads = _shape_tables(grid.h)
        cells = grid.cell_nodes()
        ncell = grid.cell_count
        ngp = ncell * 8
        rows = np.repeat(np.arange(ngp), 8)
        cols = np.broadcast_to(cells[:, None, :], (ncell, 8, 8)).reshape(-1)

        def build(table):
            data = np.broadcast_to(table, (ncell, 8, 8)).reshape(-1)
            M = sp.coo_matrix((data, (rows, cols)), shape=(ngp, grid.node_count))
            return M.tocsr()

        self.E0 = build(vals)
        self.D = [build(grads[:, :, k]) for k in range(3)]
        self.w_gp = np.full(ngp, np.prod(grid.h) / 8.0)
        self.w_node = np.asarray(self.E0.T @ self.w_gp)
        # Gauss point coordinates (cell-major, corner ordering)
        base = grid.node_coords()[cells[:, 0]]
        local = (1.0 + _GAUSS) / 2.0 * np.asarray(grid.h)
        self.gp_coords = (base[:, None, :] + local[None, :, :]).reshape(ngp, 3)

    def values_at_gps(self, nodal):
        """Nodal (N, m) -> per-Gauss-point (G, m)."""
        return self.E0 @ nodal

    def gradients_at_gps(self, nodal):
        """Nodal (N, m) -> (G, m, 3) partial derivatives."""
        return np.stack([Dk @ nodal for Dk in self.D], axis=-1)


@lru_cache(maxsize=8)
def _fem_cache(grid: Grid):
    return FemOperators(grid)


def fem_operators(grid: Grid) -> FemOperators:
    return _fem_cache(grid)


def discrete_curl(grid: Grid, P: TensorField):
    """Row-wise curl of the trilinear interpolant at every Gauss point.

    Returns (cell_count * 8, 3, 3); exact whenever each component of P is a
    polynomial of degree at most one per variable.
    """
    fem = fem_operators(grid)
    flat = P.values.reshape(grid.node_count, 9)
    G = fem.gradients_at_gps(flat).reshape(-1, 3, 3, 3)
    return curl_from_gradient(G)


def apply_micro_hard_mask(grid: Grid, boundary: BoundaryConfig, P: TensorField) -> TensorField:
    """Zero the components of p not parallel to the face normal on micro-hard faces.

    On a face with outward normal e_k every row of p must be parallel to the
    normal, so all entries outside column k vanish.  Idempotent.
    """
    out = P.values.copy()
    for face in boundary.micro_hard_faces:
        axis, _ = face_axis_side(face)
        nodes = grid.nodes_on_face(face)
        keep = np.zeros(3, dtype=bool)
        keep[axis] = True
        out[np.ix_(nodes, [0, 1, 2], np.nonzero(~keep)[0])] = 0.0
    return TensorField(out)


# --------------------------------------------------------------------------
# constant algebraic kernels for the kron-composed assembly

def _curl_kernels():
    """C_a with (C_a)[3i+k, 3i+b] = eps_{kab}: curl from the a-th derivative."""
    eps = np.zeros((3, 3, 3))
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        eps[i, j, k] = 1.0
        eps[i, k, j] = -1.0
    out = []
    for a in range(3):
        C = np.zeros((9, 9))
        for i in range(3):
            for k in range(3):
                for b in range(3):
                    C[3 * i + k, 3 * i + b] = eps[k, a, b]
        out.append(C)
    return out


_CURL_K = _curl_kernels()


def _sel(b):
    """9x3 selector placing u-component i into tensor slot (i, b)."""
    S = np.zeros((9, 3))
    for i in range(3):
        S[3 * i + b, i] = 1.0
    return S


_SEL = [_sel(b) for b in range(3)]


def _symmetrized(K):
    K = K.tocsr()
    return 0.5 * (K + K.T)


class Blocks:
    """All assembled full-space operators for one grid and material.

    p-blocks act on row-major nodal tensors flattened to length 9N; u-blocks
    on nodal vectors flattened to length 3N.  Two assemblies of the defect
    (curl-curl) form are provided: 'curlcurl' composes the discrete row-wise
    curl with itself, 'skewgrad' uses the pointwise identity
    <Curl X, Curl Y> = 2 sum_i <skew grad X_i, grad Y_i>; they agree to
    roundoff and feed the formulation-equivalence tests.
    """

    def __init__(self, grid: Grid, params):
        self.grid = grid
        self.params = params
        fem = fem_operators(grid)
        self.fem = fem
        W = sp.diags(fem.w_gp)
        E0, D = fem.E0, fem.D
        self.M0 = _symmetrized((E0.T @ W @ E0).tocsr())
        A = [[(D[a].T @ W @ D[b]).tocsr() for b in range(3)] for a in range(3)]
        ME = [(D[b].T @ W @ E0).tocsr() for b in range(3)]

        Chat = elasticity_matrix(params)
        K_uu = sum(
            sp.kron(A[b][b2], sp.csr_matrix(_SEL[b].T @ Chat @ _SEL[b2]))
            for b in range(3)
            for b2 in range(3)
        )
        self.K_uu = _symmetrized(K_uu)
        self.K_up = -sum(sp.kron(ME[b], sp.csr_matrix(_SEL[b].T @ Chat)) for b in range(3)).tocsr()
        self.K_pp_el = _symmetrized(sp.kron(self.M0, sp.csr_matrix(Chat)))
        self.K_sym = _symmetrized(sp.kron(self.M0, sp.csr_matrix(PROJ_SYM)))
        self.K_devsym = _symmetrized(sp.kron(self.M0, sp.csr_matrix(PROJ_DEVSYM)))
        self.M_cons = _symmetrized(sp.kron(self.M0, sp.eye(9)))
        self.m_lump = np.repeat(fem.w_node, 9)

        K_cc = sum(
            sp.kron(A[a][a2], sp.csr_matrix(_CURL_K[a].T @ _CURL_K[a2]))
            for a in range(3)
            for a2 in range(3)
        )
        self.K_curl_cc = _symmetrized(K_cc)
        I3 = np.eye(3)
        K_sg = sum(sp.kron(A[b][b], sp.eye(9)) for b in range(3)) - sum(
            sp.kron(A[a][b], sp.csr_matrix(np.kron(I3, np.outer(I3[b], I3[a]))))
            for a in range(3)
            for b in range(3)
        )
        self.K_curl_sg = _symmetrized(K_sg)

    def K_curl(self, route="curlcurl"):
        if route == "curlcurl":
            return self.K_curl_cc
        if route == "skewgrad":
            return self.K_curl_sg
        raise ValueError(f"unknown curl assembly route {route!r}")

    def body_force_vector(self, f):
        """Assembled load for a constant body force, flattened (3N,)."""
        nodal = np.asarray(self.fem.E0.T @ self.fem.w_gp)
        return np.outer(nodal, np.asarray(f, dtype=float)).ravel()


@lru_cache(maxsize=8)
def _blocks_cache(grid: Grid, params):
    return Blocks(grid, params)


def build_blocks(grid: Grid, params) -> Blocks:
    return _blocks_cache(grid, params)


# --------------------------------------------------------------------------
# admissible-subspace bases and constraint handling

def allowed_columns(grid: Grid, micro_hard_faces) -> np.ndarray:
    """(N, 3) bool: which tensor columns may be nonzero at each node."""
    allowed = np.ones((grid.node_count, 3), dtype=bool)
    for face in micro_hard_faces:
        axis, _ = face_axis_side(face)
        nodes = grid.nodes_on_face(face)
        mask = np.zeros(3, dtype=bool)
        mask[axis] = True
        allowed[nodes] &= mask
    return allowed


def _node_basis(allowed, mode):
    """Orthonormal basis (list of 9-vectors) of the admissible subspace."""
    cols = [j for j in range(3) if allowed[j]]
    vecs = []

    def unit(i, j):
        v = np.zeros(9)
        v[3 * i + j] = 1.0
        return v

    if mode == "none":
        for j in cols:
            for i in range(3):
                vecs.append(unit(i, j))
        return vecs
    if mode == "sl":
        for j in cols:
            for i in range(3):
                if i != j:
                    vecs.append(unit(i, j))
    elif mode == "sym_sl":
        for a in range(3):
            for b in range(a + 1, 3):
                if allowed[a] and allowed[b]:
                    vecs.append((unit(a, b) + unit(b, a)) / np.sqrt(2.0))
    else:
        raise ValueError(f"unknown constraint mode {mode!r}")
    diag = [j for j in cols]
    if len(diag) == 3:
        vecs.append((unit(0, 0) - unit(1, 1)) / np.sqrt(2.0))
        vecs.append((unit(0, 0) + unit(1, 1) - 2.0 * unit(2, 2)) / np.sqrt(6.0))
    elif len(diag) == 2:
        a, b = diag
        vecs.append((unit(a, a) - unit(b, b)) / np.sqrt(2.0))
    return vecs


@dataclass
class PBasis:
    """Per-node orthonormal bases of the admissible plastic subspace.

    B is (9N, M) with orthonormal columns grouped node by node; offsets has
    length N + 1 and offsets[j]:offsets[j+1] indexes node j's coordinates.
    """

    B: sp.csr_matrix
    offsets: np.ndarray
    mode: str

    @property
    def size(self):
        return int(self.offsets[-1])

    def dims(self):
        return np.diff(self.offsets)

    def to_full(self, c):
        return np.asarray(self.B @ c)

    def to_reduced(self, p_flat):
        return np.asarray(self.B.T @ p_flat)

    def segment_starts(self):
        """Column starts of the nonempty per-node segments, plus their node ids."""
        dims = self.dims()
        nodes = np.nonzero(dims > 0)[0]
        return self.offsets[nodes], nodes

    def node_norms(self, c):
        """Frobenius norm of each node's tensor from reduced coordinates."""
        starts, nodes = self.segment_starts()
        out = np.zeros(len(self.offsets) - 1)
        if len(starts):
            out[nodes] = np.sqrt(np.add.reduceat(c * c, starts))
        return out

    def scatter_per_node(self, per_node):
        """Repeat a per-node array onto the reduced coordinates."""
        return np.repeat(per_node, self.dims())


def build_p_basis(grid: Grid, micro_hard_faces, mode="sl") -> PBasis:
    """Assemble the sparse basis matrix for the given pointwise constraints.

    mode 'sl' keeps trace-free tensors (8 dofs at free nodes), 'sym_sl'
    symmetric trace-free (5 dofs), 'none' only the micro-hard mask (9 dofs).
    """
    allowed = allowed_columns(grid, micro_hard_faces)
    cases = {}
    for j in range(grid.node_count):
        cases.setdefault(tuple(allowed[j]), []).append(j)
    dims = np.zeros(grid.node_count, dtype=np.int64)
    basis_for = {}
    for key in cases:
        basis_for[key] = _node_basis(np.asarray(key), mode)
        for j in cases[key]:
            dims[j] = len(basis_for[key])
    offsets = np.concatenate([[0], np.cumsum(dims)])
    rows, cols, data = [], [], []
    for key, nodes in cases.items():
        vecs = basis_for[key]
        if not vecs:
            continue
        V = np.asarray(vecs)  # (m, 9)
        nz = np.nonzero(V)
        for j in nodes:
            rows.append(9 * j + nz[1])
            cols.append(offsets[j] + nz[0])
            data.append(V[nz])
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        data = np.concatenate(data)
    B = sp.coo_matrix((data, (rows, cols)), shape=(9 * grid.node_count, int(offsets[-1])))
    return PBasis(B.tocsr(), offsets, mode)


def dirichlet_mask(grid: Grid, boundary: BoundaryConfig) -> np.ndarray:
    """(3N,) bool, True where a displacement dof is prescribed."""
    mask = np.zeros((grid.node_count, 3), dtype=bool)
    for face in boundary.gamma_faces:
        mask[grid.nodes_on_face(face)] = True
    return mask.ravel()


def assemble_block(grid: Grid, boundary: BoundaryConfig, which: str, params, symmetric=False):
    """One constrained block of the bilinear form.

    which is one of 'K_uu', 'K_up', 'K_pp_elastic', 'K_pp_curl', 'K_pp_sym',
    'M_p'.  u-blocks are restricted to the free displacement dofs, p-blocks
    to the admissible reduced coordinates ('M_p' returns the lumped weight of
    each reduced coordinate).
    """
    blocks = build_blocks(grid, params)
    basis = build_p_basis(grid, boundary.micro_hard_faces, "sym_sl" if symmetric else "sl")
    free = ~dirichlet_mask(grid, boundary)
    if which == "K_uu":
        return blocks.K_uu[np.ix_(free, free)].tocsr()
    if which == "K_up":
        return (blocks.K_up @ basis.B)[free].tocsr()
    if which == "K_pp_elastic":
        return _symmetrized(basis.B.T @ blocks.K_pp_el @ basis.B)
    if which == "K_pp_curl":
        return _symmetrized(basis.B.T @ blocks.K_curl_cc @ basis.B)
    if which == "K_pp_sym":
        return _symmetrized(basis.B.T @ blocks.K_sym @ basis.B)
    if which == "M_p":
        return basis.scatter_per_node(blocks.fem.w_node)
    raise ValueError(f"unknown block tag {which!r}")
