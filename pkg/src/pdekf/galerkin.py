"""Finite-element assembly on uniform 1D intervals and 2D squares.

Piecewise-linear (1D) / bilinear (2D) elements on [-L0, L0]^d with homogeneous
Neumann boundary conditions; 2x2 Gauss quadrature per square element, which is
exact for every product of bilinears appearing here. Node ordering is
x-fastest raster order: node id = iy * nodes_per_axis + ix.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError


class DomainError(ValueError):
    """Raised when meshes that must cover the same domain do not."""


# 2-point Gauss rule on [-1, 1]
_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)


@dataclass(frozen=True)
class Mesh:
    """Uniform tensor mesh on [-half_width, half_width]^dimension."""

    dimension: int
    cells_per_axis: int
    half_width: float

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ShapeError(f"dimension must be 1 or 2, got {self.dimension}")
        if self.cells_per_axis < 1:
            raise ShapeError("cells_per_axis must be >= 1")
        if not self.half_width > 0:
            raise ShapeError("half_width must be > 0")

    @property
    def spacing(self):
        return 2.0 * self.half_width / self.cells_per_axis

    @property
    def nodes_per_axis(self):
        return self.cells_per_axis + 1

    @property
    def node_count(self):
        return self.nodes_per_axis ** self.dimension

    @property
    def area(self):
        return (2.0 * self.half_width) ** self.dimension

    def axis_coords(self):
        return np.linspace(-self.half_width, self.half_width, self.nodes_per_axis)

    def node_coords(self):
        """(node_count, dimension) array of node coordinates."""
        ax = self.axis_coords()
        if self.dimension == 1:
            return ax[:, None]
        r, s = np.meshgrid(ax, ax, indexing="xy")
        return np.column_stack([r.ravel(), s.ravel()])


@dataclass
class NodalField:
    """One real value per mesh node."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.node_count,):
            raise ShapeError(
                f"field length {self.values.shape} does not match node count "
                f"{self.mesh.node_count}"
            )


@dataclass
class AssembledOperators:
    """The full operator bundle of one mesh: M (SPD), K (PSD, constants in
    its kernel), the output functionals, and the input load map."""

    mass: np.ndarray
    stiffness: np.ndarray
    output: np.ndarray
    input_map: np.ndarray


def assemble_operators(mesh, diffusion, c_e=None, gamma=0.0, qc=None):
    """Assemble every spatial operator of a model in one call."""
    mass, stiffness = assemble_mass_stiffness(mesh, diffusion)
    output = assemble_output(mesh)
    if qc is not None and c_e is not None:
        input_map = assemble_input_map(mesh, c_e, gamma, qc)
    else:
        input_map = np.zeros((mesh.node_count, 0))
    return AssembledOperators(mass, stiffness, output, input_map)


def _cell_nodes_2d(mesh):
    """(n_cells, 4) corner node ids per cell, counterclockwise from (0,0)."""
    npa = mesh.nodes_per_axis
    cx, cy = np.meshgrid(np.arange(mesh.cells_per_axis),
                         np.arange(mesh.cells_per_axis), indexing="xy")
    base = cy.ravel() * npa + cx.ravel()
    return np.column_stack([base, base + 1, base + npa + 1, base + npa])


def _q1_basis(xi, eta):
    """Bilinear basis values at reference point (xi, eta), corner order as above."""
    return 0.25 * np.array([
        (1 - xi) * (1 - eta),
        (1 + xi) * (1 - eta),
        (1 + xi) * (1 + eta),
        (1 - xi) * (1 + eta),
    ])


def _q1_grad(xi, eta):
    """Reference gradients, shape (4, 2)."""
    return 0.25 * np.array([
        [-(1 - eta), -(1 - xi)],
        [(1 - eta), -(1 + xi)],
        [(1 + eta), (1 + xi)],
        [-(1 + eta), (1 - xi)],
    ])


def _gauss_points_2d():
    for xi in _GAUSS:
        for eta in _GAUSS:
            yield xi, eta, 1.0  # weight 1 per point on [-1,1]^2


def assemble_mass_stiffness(mesh, diffusion):
    """Consistent mass matrix M and stiffness K for -div(D grad .), Neumann."""
    if not diffusion > 0:
        raise ValueError(f"diffusion coefficient must be > 0, got {diffusion}")
    h = mesh.spacing
    n = mesh.node_count
    if mesh.dimension == 1:
        me = (h / 6.0) * np.array([[2.0, 1.0], [1.0, 2.0]])
        ke = (diffusion / h) * np.array([[1.0, -1.0], [-1.0, 1.0]])
        cells = np.column_stack([np.arange(mesh.cells_per_axis),
                                 np.arange(mesh.cells_per_axis) + 1])
    else:
        jac = (h / 2.0) ** 2
        me = np.zeros((4, 4))
        ke = np.zeros((4, 4))
        for xi, eta, w in _gauss_points_2d():
            phi = _q1_basis(xi, eta)
            grad = _q1_grad(xi, eta) * (2.0 / h)  # physical gradients
            me += w * jac * np.outer(phi, phi)
            ke += w * jac * diffusion * (grad @ grad.T)
        cells = _cell_nodes_2d(mesh)

    mass = np.zeros((n, n))
    stiff = np.zeros((n, n))
    rows = np.repeat(cells, cells.shape[1], axis=1)
    cols = np.tile(cells, (1, cells.shape[1]))
    np.add.at(mass, (rows.ravel(), cols.ravel()),
              np.tile(me.ravel(), cells.shape[0]))
    np.add.at(stiff, (rows.ravel(), cols.ravel()),
              np.tile(ke.ravel(), cells.shape[0]))
    return mass, stiff


def assemble_output(mesh):
    """Output functionals by element quadrature.

    2D: 3 x n matrix computing [integral(r*c), integral(s*c), integral(c)].
    1D: the documented reduction, a 1 x n matrix computing [integral(c)].
    """
    n = mesh.node_count
    h = mesh.spacing
    if mesh.dimension == 1:
        row = np.zeros(n)
        row[:-1] += h / 2.0
        row[1:] += h / 2.0
        return row[None, :]

    coords = mesh.node_coords()
    cells = _cell_nodes_2d(mesh)
    jac = (h / 2.0) ** 2
    out = np.zeros((3, n))
    for xi, eta, w in _gauss_points_2d():
        phi = _q1_basis(xi, eta)
        # physical coordinates of this Gauss point in every cell
        pts = coords[cells].transpose(2, 0, 1) @ phi  # (2, n_cells)
        contrib = w * jac * phi  # (4,)
        np.add.at(out[0], cells.ravel(), (pts[0][:, None] * contrib).ravel())
        np.add.at(out[1], cells.ravel(), (pts[1][:, None] * contrib).ravel())
        np.add.at(out[2], cells.ravel(), np.tile(contrib, (cells.shape[0], 1)).ravel())
    return out


def assemble_input_map(mesh, c_e, gamma, qc):
    """Galerkin load map B of -div(gamma * c_e * Qc u), by integration by parts.

    B[i, k] = gamma * integral( c_e * (Qc column k) . grad phi_i ), so B @ u is
    the load vector. qc holds the nodal values of the column vector fields:
    shape (node_count, dimension, m), or the flat (dimension*node_count, m)
    layout with all r-components stacked above all s-components.
    """
    n = mesh.node_count
    qc = np.asarray(qc, dtype=float)
    if qc.ndim == 2:
        if qc.shape[0] != mesh.dimension * n:
            raise ShapeError(
                f"flat qc must have {mesh.dimension * n} rows, got {qc.shape[0]}"
            )
        qc = qc.reshape(mesh.dimension, n, -1).transpose(1, 0, 2)
    if qc.shape[:2] != (n, mesh.dimension):
        raise ShapeError(f"qc shape {qc.shape} does not match mesh")
    if c_e.mesh.node_count != n:
        raise ShapeError("c_e is defined on a different mesh")
    m = qc.shape[2]
    h = mesh.spacing
    b = np.zeros((n, m))

    if mesh.dimension == 1:
        cells = np.column_stack([np.arange(mesh.cells_per_axis),
                                 np.arange(mesh.cells_per_axis) + 1])
        jac = h / 2.0
        for xi in _GAUSS:
            phi = np.array([(1 - xi) / 2.0, (1 + xi) / 2.0])
            dphi = np.array([-1.0, 1.0]) / h  # physical hat derivatives
            ce_g = c_e.values[cells] @ phi  # (n_cells,)
            q_g = np.einsum("a,cak->ck", phi, qc[cells][:, :, 0, :])  # (n_cells, m)
            contrib = (gamma * jac) * ce_g[:, None, None] \
                * dphi[None, :, None] * q_g[:, None, :]
            np.add.at(b, cells.ravel(), contrib.reshape(-1, m))
    else:
        cells = _cell_nodes_2d(mesh)
        jac = (h / 2.0) ** 2
        for xi, eta, w in _gauss_points_2d():
            phi = _q1_basis(xi, eta)
            grad = _q1_grad(xi, eta) * (2.0 / h)  # (4, 2) physical
            ce_g = c_e.values[cells] @ phi  # (n_cells,)
            # vector field value at the Gauss point: (n_cells, 2, m)
            q_g = np.einsum("a,cadk->cdk", phi, qc[cells])
            # integrand per local dof: (n_cells, 4, m)
            contrib = gamma * w * jac * ce_g[:, None, None] * np.einsum(
                "ad,cdk->cak", grad, q_g
            )
            np.add.at(b, cells.ravel(), contrib.reshape(-1, m))
    return b


def interpolation_matrix(source, target):
    """Matrix T with (T @ v) the piecewise-(bi)linear interpolant at target nodes."""
    if source.dimension != target.dimension:
        raise DomainError("meshes have different dimensions")
    if abs(source.half_width - target.half_width) > 1e-14 * source.half_width:
        raise DomainError(
            f"meshes cover different domains: half widths "
            f"{source.half_width} vs {target.half_width}"
        )

    def axis_weights(src, tgt):
        h = src.spacing
        x = tgt.axis_coords()
        cell = np.clip(((x + src.half_width) / h).astype(int), 0,
                       src.cells_per_axis - 1)
        theta = (x - (-src.half_width + cell * h)) / h
        return cell, np.clip(theta, 0.0, 1.0)

    cell, theta = axis_weights(source, target)
    ns, nt = source.node_count, target.node_count
    t = np.zeros((nt, ns))
    if source.dimension == 1:
        rows = np.arange(nt)
        np.add.at(t, (rows, cell), 1.0 - theta)
        np.add.at(t, (rows, cell + 1), theta)
        return t

    npa_s = source.nodes_per_axis
    npa_t = target.nodes_per_axis
    iy, ix = np.divmod(np.arange(nt), npa_t)
    cx, thx = cell[ix], theta[ix]
    cy, thy = cell[iy], theta[iy]
    for dx, wx in ((0, 1.0 - thx), (1, thx)):
        for dy, wy in ((0, 1.0 - thy), (1, thy)):
            np.add.at(t, (np.arange(nt), (cy + dy) * npa_s + cx + dx), wx * wy)
    return t


def interpolate(fld, target):
    """Evaluate the piecewise-(bi)linear interpolant of fld at target's nodes."""
    t = interpolation_matrix(fld.mesh, target)
    return NodalField(target, t @ fld.values)


def nodal_nonlinearity(fld, f):
    """Apply f nodewise (collocation); the Galerkin pairing is the caller's M."""
    out = f(fld.values)
    out = np.asarray(out, dtype=float)
    if out.shape != fld.values.shape:
        out = np.broadcast_to(out, fld.values.shape).astype(float)
    bad = ~np.isfinite(out)
    if bad.any():
        idx = int(np.argmax(bad))
        raise ValueError(f"nonlinearity returned non-finite value at node {idx}")
    return NodalField(fld.mesh, out)
