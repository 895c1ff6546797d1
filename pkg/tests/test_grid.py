import numpy as np
import pytest
import scipy.sparse as sp

from curlplast.grid import (
    FACES,
    BoundaryConfig,
    Grid,
    IndexOutOfRange,
    TensorField,
    allowed_columns,
    apply_micro_hard_mask,
    assemble_block,
    build_blocks,
    build_p_basis,
    dirichlet_mask,
    discrete_curl,
    fem_operators,
    shape_gradients,
)
from curlplast.tensors import MaterialParams, cross_matrix

PARAMS = MaterialParams(mu=80.0, lam=110.0, k1=0.5, k2=0.4, Lc=0.2, sigma_y=0.3)


class TestGrid:
    def test_counts(self):
        g = Grid((2, 3, 4), (0.5, 1.0, 0.25))
        assert g.node_count == 3 * 4 * 5
        assert g.cell_count == 24
        assert g.volume == pytest.approx(2 * 0.5 * 3 * 1.0 * 4 * 0.25)

    def test_validation(self):
        with pytest.raises(ValueError):
            Grid((0, 1, 1), (1.0, 1.0, 1.0))
        with pytest.raises(ValueError):
            Grid((1, 1, 1), (0.0, 1.0, 1.0))

    def test_face_nodes(self):
        g = Grid.unit_cube(2)
        for face in FACES:
            assert len(g.nodes_on_face(face)) == 9

    def test_boundary_config(self):
        with pytest.raises(ValueError):
            BoundaryConfig(())
        bc = BoundaryConfig(("zmin",))
        assert bc.micro_hard_faces == ("zmin",)  # defaults to gamma
        bc2 = BoundaryConfig(("zmin",), ())
        assert bc2.micro_hard_faces == ()


class TestShapeGradients:
    def test_linear_reproduction(self):
        g = Grid.unit_cube(1)
        fem = fem_operators(g)
        coords = g.node_coords()
        grad = fem.gradients_at_gps(coords[:, [0]])
        assert np.allclose(grad[:, 0, :], [1, 0, 0], rtol=0, atol=1e-14)

    def test_constant_field(self):
        g = Grid.unit_cube(2)
        fem = fem_operators(g)
        grad = fem.gradients_at_gps(np.ones((g.node_count, 1)))
        assert np.max(np.abs(grad)) < 1e-13

    def test_quadratic_refinement(self):
        # interpolation error of the gradient of a quadratic shrinks with h
        errs = []
        for n in (2, 4):
            g = Grid.unit_cube(n)
            fem = fem_operators(g)
            coords = g.node_coords()
            v = (coords[:, 0] ** 2 + 0.5 * coords[:, 1] * coords[:, 2])[:, None]
            grad = fem.gradients_at_gps(v)[:, 0, :]
            x = fem.gp_coords
            exact = np.stack([2 * x[:, 0], 0.5 * x[:, 2], 0.5 * x[:, 1]], axis=1)
            errs.append(np.max(np.abs(grad - exact)))
        assert errs[1] < 0.7 * errs[0]

    def test_index_validation(self):
        g = Grid.unit_cube(2)
        tab = shape_gradients(g, 0)
        assert tab.shape == (8, 8, 3)
        with pytest.raises(IndexOutOfRange):
            shape_gradients(g, 8)

    def test_lumped_weights(self):
        g = Grid((2, 2, 2), (0.5, 0.5, 0.5))
        fem = fem_operators(g)
        assert fem.w_node.sum() == pytest.approx(g.volume, rel=1e-14)
        # corner node supports one cell, center node eight
        assert fem.w_node.min() == pytest.approx(g.volume / 64, rel=1e-12)
        assert fem.w_node.max() == pytest.approx(g.volume / 8, rel=1e-12)


class TestDiscreteCurl:
    def test_constant_field(self):
        g = Grid.unit_cube(3)
        P = TensorField(np.tile(np.arange(9.0).reshape(3, 3), (g.node_count, 1, 1)))
        assert np.max(np.abs(discrete_curl(g, P))) < 1e-13

    def test_interpolated_gradient_of_quadratic(self):
        g = Grid.unit_cube(3)
        x = g.node_coords()
        G = np.zeros((g.node_count, 3, 3))
        G[:, 0, 0] = 2 * x[:, 0]
        G[:, 0, 1] = x[:, 2]
        G[:, 0, 2] = x[:, 1]
        G[:, 1, 1] = -3 * x[:, 1]
        G[:, 2, 0] = x[:, 0]
        G[:, 2, 2] = 0 * x[:, 2] + 1.0
        # rows of grad v for v = (x^2 + yz, -1.5 y^2, 0.5 x^2... ) are linear
        assert np.max(np.abs(discrete_curl(g, TensorField(G)))) < 1e-12

    def test_cross_product_rows(self):
        g = Grid((3, 2, 2), (1 / 3, 0.5, 0.5), origin=(-0.2, 0.1, 0.0))
        A = np.random.default_rng(0).standard_normal((3, 3))
        vals = np.einsum("iab,nb->nia", cross_matrix(A), g.node_coords())
        c = discrete_curl(g, TensorField(vals))
        assert np.max(np.abs(c - 2 * A)) < 1e-12


class TestAssembly:
    def test_exact_symmetry(self):
        bl = build_blocks(Grid.unit_cube(2), PARAMS)
        for K in (bl.K_uu, bl.K_pp_el, bl.K_curl_cc, bl.K_curl_sg, bl.K_sym, bl.M_cons):
            assert (K != K.T).nnz == 0

    def test_translation_invariance(self):
        bl = build_blocks(Grid.unit_cube(1), PARAMS)
        U = np.tile([0.3, -1.0, 2.0], 8)
        assert np.max(np.abs(bl.K_uu @ U)) < 1e-12 * np.abs(bl.K_uu).max()

    def test_curl_routes_agree(self):
        bl = build_blocks(Grid.unit_cube(2), PARAMS)
        diff = np.abs(bl.K_curl_cc - bl.K_curl_sg).max()
        assert diff < 1e-12 * np.abs(bl.K_curl_cc).max()

    def test_curl_block_on_constant_skew(self):
        bl = build_blocks(Grid.unit_cube(2), PARAMS)
        P = np.tile(cross_matrix([1.0, 2.0, 3.0]).reshape(-1), bl.grid.node_count)
        assert np.abs(bl.K_curl_cc @ P).max() < 1e-13

    def test_conformity_assembled_vs_quadrature(self):
        g = Grid.unit_cube(2)
        bl = build_blocks(g, PARAMS)
        fem = fem_operators(g)
        rng = np.random.default_rng(1)
        P = rng.standard_normal(9 * g.node_count)
        q_mat = P @ (bl.M_cons @ P) + P @ (bl.K_curl_cc @ P)
        vals = fem.values_at_gps(P.reshape(-1, 9))
        curls = discrete_curl(g, TensorField(P.reshape(-1, 3, 3))).reshape(-1, 9)
        q_dir = float(fem.w_gp @ (vals ** 2).sum(1) + fem.w_gp @ (curls ** 2).sum(1))
        assert q_mat == pytest.approx(q_dir, rel=1e-12)

    def test_full_form_positive_definite(self):
        # full Dirichlet boundary, k1 > 0: the constrained form is coercive
        g = Grid.unit_cube(2)
        bc = BoundaryConfig(FACES)
        K_uu = assemble_block(g, bc, "K_uu", PARAMS)
        K_up = assemble_block(g, bc, "K_up", PARAMS)
        A_pp = (assemble_block(g, bc, "K_pp_elastic", PARAMS)
                + PARAMS.mu * PARAMS.Lc ** 2 * assemble_block(g, bc, "K_pp_curl", PARAMS)
                + PARAMS.mu * PARAMS.k1 * assemble_block(g, bc, "K_pp_sym", PARAMS))
        A = sp.bmat([[K_uu, K_up], [K_up.T, A_pp]]).tocsr()
        rng = np.random.default_rng(2)
        for _ in range(20):
            z = rng.standard_normal(A.shape[0])
            assert z @ (A @ z) > 0.0

    def test_constraint_elimination_consistency(self):
        # reduced block equals unconstrained assembly then row/column elimination
        g = Grid.unit_cube(2)
        bc = BoundaryConfig(("xmin", "zmax"))
        bl = build_blocks(g, PARAMS)
        free = ~dirichlet_mask(g, bc)
        K_ff = assemble_block(g, bc, "K_uu", PARAMS)
        direct = bl.K_uu.toarray()[np.ix_(free, free)]
        assert np.allclose(K_ff.toarray(), direct, rtol=0, atol=0)

    def test_lumped_mass_block(self):
        g = Grid.unit_cube(2)
        bc = BoundaryConfig(("zmin",), ())
        w = assemble_block(g, bc, "M_p", PARAMS)
        assert w.shape == (8 * g.node_count,)
        assert np.all(w > 0)


class TestMicroHardMask:
    def test_zeroes_tangential_columns(self):
        g = Grid.unit_cube(2)
        bc = BoundaryConfig(("zmax",))
        P = TensorField(np.ones((g.node_count, 3, 3)))
        out = apply_micro_hard_mask(g, bc, P)
        nodes = g.nodes_on_face("zmax")
        assert np.all(out.values[nodes][:, :, :2] == 0.0)
        assert np.all(out.values[nodes][:, :, 2] == 1.0)
        interior = np.setdiff1d(np.arange(g.node_count), nodes)
        assert np.all(out.values[interior] == 1.0)

    def test_idempotent(self):
        g = Grid.unit_cube(2)
        bc = BoundaryConfig(("xmin", "ymax"))
        P = TensorField(np.random.default_rng(3).standard_normal((g.node_count, 3, 3)))
        once = apply_micro_hard_mask(g, bc, P)
        twice = apply_micro_hard_mask(g, bc, once)
        assert np.array_equal(once.values, twice.values)

    def test_allowed_columns_intersection(self):
        g = Grid.unit_cube(2)
        allowed = allowed_columns(g, ("xmin", "zmin"))
        face_only = g.node_index(0, 1, 1)  # on xmin only: rows parallel to e_x
        assert list(allowed[face_only]) == [True, False, False]
        assert not allowed[g.node_index(0, 1, 0)].any()  # on both faces
        assert allowed[g.node_index(1, 1, 1)].all()  # interior


class TestPBasis:
    def test_dimensions(self):
        g = Grid.unit_cube(2)
        assert set(build_p_basis(g, (), "sl").dims()) == {8}
        assert set(build_p_basis(g, (), "sym_sl").dims()) == {5}
        assert set(build_p_basis(g, (), "none").dims()) == {9}
        b = build_p_basis(g, ("zmin",), "sl")
        nodes = g.nodes_on_face("zmin")
        dims = b.dims()
        assert np.all(dims[nodes] == 2)
        b2 = build_p_basis(g, ("zmin",), "sym_sl")
        assert np.all(b2.dims()[nodes] == 0)  # symmetric + tangential pin -> zero

    def test_orthonormal_columns(self):
        g = Grid.unit_cube(2)
        for mode in ("sl", "sym_sl", "none"):
            b = build_p_basis(g, ("zmin", "xmax"), mode)
            Ident = sp.eye(b.size)
            assert np.abs(b.B.T @ b.B - Ident).max() < 1e-14

    def test_range_satisfies_constraints(self):
        g = Grid.unit_cube(2)
        rng = np.random.default_rng(4)
        b = build_p_basis(g, ("ymin",), "sl")
        P = b.to_full(rng.standard_normal(b.size)).reshape(-1, 3, 3)
        assert TensorField(P).max_trace_violation() < 1e-14
        bs = build_p_basis(g, ("ymin",), "sym_sl")
        Ps = bs.to_full(rng.standard_normal(bs.size)).reshape(-1, 3, 3)
        assert TensorField(Ps).max_trace_violation() < 1e-14
        assert TensorField(Ps).max_symmetry_violation() < 1e-14

    def test_node_norms_match_frobenius(self):
        g = Grid.unit_cube(2)
        b = build_p_basis(g, ("zmin",), "sl")
        rng = np.random.default_rng(5)
        c = rng.standard_normal(b.size)
        P = b.to_full(c).reshape(-1, 3, 3)
        assert np.allclose(b.node_norms(c), np.linalg.norm(P, axis=(1, 2)), rtol=1e-13, atol=1e-15)
