import numpy as np
import pytest

from pdekf import galerkin
from pdekf.galerkin import (DomainError, Mesh, NodalField, assemble_input_map,
                            assemble_mass_stiffness, assemble_operators,
                            assemble_output, interpolate,
                            interpolation_matrix, nodal_nonlinearity)
from pdekf.numerics import ShapeError, min_eigenvalue


def dense_quadrature_load_1d(mesh, c_e_vals, gamma, q_vals, n_gauss=10):
    """Refined-quadrature oracle for the 1D input-map column: per-element
    Gauss rule of order n_gauss on the integrand c_e * q * dphi_i."""
    pts, wts = np.polynomial.legendre.leggauss(n_gauss)
    h = mesh.spacing
    n = mesh.node_count
    out = np.zeros(n)
    for cell in range(mesh.cells_per_axis):
        x0 = -mesh.half_width + cell * h
        for xi, w in zip(pts, wts):
            x = x0 + (xi + 1.0) * h / 2.0
            theta = (x - x0) / h
            ce = c_e_vals[cell] * (1 - theta) + c_e_vals[cell + 1] * theta
            q = q_vals[cell] * (1 - theta) + q_vals[cell + 1] * theta
            jac = h / 2.0
            out[cell] += w * jac * gamma * ce * q * (-1.0 / h)
            out[cell + 1] += w * jac * gamma * ce * q * (1.0 / h)
    return out


class TestMassStiffness:
    def test_single_element_hand_values(self):
        mesh = Mesh(1, 1, 0.5)  # one element, h = 1
        m, k = assemble_mass_stiffness(mesh, 1.0)
        assert np.allclose(m, np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0)
        assert np.allclose(k, np.array([[1.0, -1.0], [-1.0, 1.0]]))

    @pytest.mark.parametrize("mesh", [Mesh(1, 16, 0.5), Mesh(2, 6, 0.01),
                                      Mesh(2, 34, 0.01)])
    def test_neumann_kernel(self, mesh):
        m, k = assemble_mass_stiffness(mesh, 2.5)
        ones = np.ones(mesh.node_count)
        assert np.linalg.norm(k @ ones) <= 1e-12 * np.linalg.norm(k)

    @pytest.mark.parametrize("mesh", [Mesh(1, 8, 0.5), Mesh(2, 10, 0.01),
                                      Mesh(2, 34, 0.01)])
    def test_mass_spd_and_partition_of_unity(self, mesh):
        m, _ = assemble_mass_stiffness(mesh, 1.0)
        assert min_eigenvalue(m) > 0
        assert m.sum() == pytest.approx(mesh.area, rel=1e-12)

    def test_nonpositive_diffusion(self):
        with pytest.raises(ValueError):
            assemble_mass_stiffness(Mesh(1, 4, 0.5), 0.0)


class TestOutput:
    def test_constant_field_2d(self):
        mesh = Mesh(2, 10, 0.01)  # the 2cm x 2cm domain
        c = assemble_output(mesh)
        y = c @ np.ones(mesh.node_count)
        assert abs(y[0]) < 1e-18 and abs(y[1]) < 1e-18
        assert y[2] == pytest.approx(4e-4, rel=1e-12)

    def test_coordinate_field_first_moment(self):
        mesh = Mesh(2, 8, 0.01)
        c = assemble_output(mesh)
        r = mesh.node_coords()[:, 0]
        # int r^2 dOmega = (2 L0) * (2 L0^3 / 3), exact for the quadrature
        exact = (2 * mesh.half_width) * (2 * mesh.half_width ** 3 / 3.0)
        assert c[0] @ r == pytest.approx(exact, rel=1e-12)

    def test_zero_field(self):
        mesh = Mesh(2, 5, 0.01)
        assert np.array_equal(assemble_output(mesh) @ np.zeros(mesh.node_count),
                              np.zeros(3))

    def test_row3_equals_mass_pairing(self):
        mesh = Mesh(2, 9, 0.01)
        m, _ = assemble_mass_stiffness(mesh, 1.0)
        c = assemble_output(mesh)
        assert np.max(np.abs(c[2] - m.sum(axis=0))) <= 1e-12 * np.abs(c[2]).max()

    def test_1d_reduction(self):
        mesh = Mesh(1, 8, 0.5)
        c = assemble_output(mesh)
        assert c.shape == (1, mesh.node_count)
        assert c[0] @ np.ones(mesh.node_count) == pytest.approx(mesh.area)


class TestInputMap:
    def test_zero_qc(self):
        mesh = Mesh(2, 4, 0.01)
        ce = NodalField(mesh, np.ones(mesh.node_count))
        b = assemble_input_map(mesh, ce, 1.0, np.zeros((mesh.node_count, 2, 3)))
        assert np.array_equal(b, np.zeros((mesh.node_count, 3)))

    def test_zero_carrier(self):
        mesh = Mesh(2, 4, 0.01)
        ce = NodalField(mesh, np.zeros(mesh.node_count))
        qc = np.ones((mesh.node_count, 2, 2))
        assert np.array_equal(assemble_input_map(mesh, ce, 1.0, qc),
                              np.zeros((mesh.node_count, 2)))

    def test_1d_against_refined_quadrature(self):
        mesh = Mesh(1, 6, 0.5)
        n = mesh.node_count
        ce_vals = 1.0 + 0.3 * mesh.axis_coords()
        q_vals = np.ones(n)
        qc = q_vals.reshape(n, 1, 1)
        b = assemble_input_map(mesh, NodalField(mesh, ce_vals), 0.7, qc)
        oracle = dense_quadrature_load_1d(mesh, ce_vals, 0.7, q_vals)
        assert np.allclose(b[:, 0], oracle, atol=1e-14)

    def test_1d_constant_case_closed_form(self):
        # constant carrier and unit field: only the boundary hats survive
        mesh = Mesh(1, 5, 0.5)
        n = mesh.node_count
        ce = NodalField(mesh, 2.0 * np.ones(n))
        b = assemble_input_map(mesh, ce, 0.5, np.ones((n, 1, 1)))
        expected = np.zeros(n)
        expected[0] = -0.5 * 2.0
        expected[-1] = 0.5 * 2.0
        assert np.allclose(b[:, 0], expected, atol=1e-14)

    def test_2d_refined_gauss_agreement(self):
        # integrands are at most cubic per variable: a 3x3 Gauss assembly must
        # reproduce the production 2x2 result to roundoff
        mesh = Mesh(2, 5, 0.01)
        n = mesh.node_count
        coords = mesh.node_coords()
        ce = NodalField(mesh, 1.0 + coords[:, 0] / 0.01)
        qc = np.stack([2 * coords[:, 0], 2 * coords[:, 1]], axis=1)[:, :, None]
        b22 = assemble_input_map(mesh, ce, 1.3, qc)
        b33 = _assemble_input_map_gauss3(mesh, ce, 1.3, qc)
        assert np.allclose(b22, b33, atol=1e-16)

    def test_flat_layout_matches(self):
        mesh = Mesh(2, 3, 0.01)
        n = mesh.node_count
        rng = np.random.default_rng(0)
        qc = rng.standard_normal((n, 2, 4))
        ce = NodalField(mesh, rng.standard_normal(n))
        flat = np.concatenate([qc[:, 0, :], qc[:, 1, :]], axis=0)
        assert np.array_equal(assemble_input_map(mesh, ce, 1.0, qc),
                              assemble_input_map(mesh, ce, 1.0, flat))

    def test_dimension_mismatch(self):
        mesh = Mesh(2, 3, 0.01)
        ce = NodalField(mesh, np.ones(mesh.node_count))
        with pytest.raises(ShapeError):
            assemble_input_map(mesh, ce, 1.0, np.zeros((5, 2, 3)))


def _assemble_input_map_gauss3(mesh, c_e, gamma, qc):
    """3x3-Gauss oracle assembly of the 2D input map."""
    pts, wts = np.polynomial.legendre.leggauss(3)
    h = mesh.spacing
    n = mesh.node_count
    m = qc.shape[2]
    cells = galerkin._cell_nodes_2d(mesh)
    jac = (h / 2.0) ** 2
    b = np.zeros((n, m))
    for xi, wx in zip(pts, wts):
        for eta, wy in zip(pts, wts):
            phi = galerkin._q1_basis(xi, eta)
            grad = galerkin._q1_grad(xi, eta) * (2.0 / h)
            ce_g = c_e.values[cells] @ phi
            q_g = np.einsum("a,cadk->cdk", phi, qc[cells])
            contrib = gamma * wx * wy * jac * ce_g[:, None, None] * np.einsum(
                "ad,cdk->cak", grad, q_g)
            np.add.at(b, cells.ravel(), contrib.reshape(-1, m))
    return b


class TestAssembledOperators:
    def test_bundle_invariants(self):
        mesh = Mesh(2, 6, 0.01)
        coords = mesh.node_coords()
        ce = NodalField(mesh, np.exp(-(coords ** 2).sum(axis=1) / 6.25e-5))
        qc = np.stack([2 * coords[:, 0], 2 * coords[:, 1]], axis=1)[:, :, None]
        ops = assemble_operators(mesh, 1e-8, c_e=ce, gamma=6.6e-5, qc=qc)
        ones = np.ones(mesh.node_count)
        assert min_eigenvalue(ops.mass) > 0
        assert np.linalg.norm(ops.stiffness @ ones) \
            <= 1e-12 * np.linalg.norm(ops.stiffness)
        assert ops.output[2] @ ones == pytest.approx(mesh.area, rel=1e-12)
        assert ops.input_map.shape == (mesh.node_count, 1)


class TestInterpolate:
    def test_same_mesh_identity(self):
        mesh = Mesh(2, 6, 0.01)
        rng = np.random.default_rng(1)
        f = NodalField(mesh, rng.standard_normal(mesh.node_count))
        assert np.allclose(interpolate(f, mesh).values, f.values)

    def test_constant_preserved(self):
        src = Mesh(2, 5, 0.01)
        tgt = Mesh(2, 11, 0.01)
        f = NodalField(src, 3.7 * np.ones(src.node_count))
        assert np.allclose(interpolate(f, tgt).values, 3.7)

    def test_linear_exact_on_nested_meshes(self):
        src = Mesh(2, 4, 0.01)
        tgt = Mesh(2, 8, 0.01)
        lin = lambda c: 2.0 * c[:, 0] - 0.5 * c[:, 1] + 1.0
        f = NodalField(src, lin(src.node_coords()))
        assert np.allclose(interpolate(f, tgt).values, lin(tgt.node_coords()),
                           atol=1e-14)

    def test_max_norm_contraction(self):
        src = Mesh(2, 9, 0.01)
        tgt = Mesh(2, 4, 0.01)
        rng = np.random.default_rng(2)
        f = NodalField(src, rng.standard_normal(src.node_count))
        out = interpolate(f, tgt)
        assert np.max(np.abs(out.values)) <= np.max(np.abs(f.values)) + 1e-15

    def test_projection_property(self):
        coarse = Mesh(1, 4, 0.5)
        fine = Mesh(1, 8, 0.5)
        rng = np.random.default_rng(3)
        f = NodalField(coarse, rng.standard_normal(coarse.node_count))
        up = interpolate(f, fine)
        back = interpolate(up, coarse)
        assert np.allclose(back.values, f.values, atol=1e-14)

    def test_domain_mismatch(self):
        with pytest.raises(DomainError):
            interpolation_matrix(Mesh(1, 4, 0.5), Mesh(1, 4, 0.6))


class TestNodalNonlinearity:
    def test_identity(self):
        mesh = Mesh(1, 4, 0.5)
        f = NodalField(mesh, np.arange(5.0))
        assert np.array_equal(nodal_nonlinearity(f, lambda v: v).values,
                              f.values)

    def test_quadratic_sink_reference_value(self):
        mesh = Mesh(2, 4, 0.01)
        kappa = 2.5e-7
        f = NodalField(mesh, np.ones(mesh.node_count))
        out = nodal_nonlinearity(f, lambda v: -kappa * v ** 2)
        assert np.allclose(out.values, -2.5e-7)

    def test_zero_map(self):
        mesh = Mesh(1, 3, 0.5)
        f = NodalField(mesh, np.linspace(-1, 1, 4))
        assert np.array_equal(nodal_nonlinearity(f, lambda v: 0.0 * v).values,
                              np.zeros(4))

    def test_non_finite_reports_node(self):
        mesh = Mesh(1, 3, 0.5)
        f = NodalField(mesh, np.array([1.0, 0.0, 1.0, 1.0]))
        with np.errstate(divide="ignore"):
            with pytest.raises(ValueError, match="node 1"):
                nodal_nonlinearity(f, lambda v: 1.0 / v)
