"""Model catalog: linear heat, 1D semilinear heat, and the magnetic delivery models.

All models share one semi-discrete form,

    M dz/dt = drift_load @ z + f_load(z, t) + B u + G w,      y = C z,

with drift_load the (mass-weighted) linear part, f_load the Galerkin load of
the nonlinearity, and B, G load maps for inputs and disturbances. The
drift-space operators used by the Riccati equations are A = M^-1 drift_load
and df_drift, the Jacobian of f_drift = M^-1 f_load.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import galerkin
from .galerkin import Mesh, NodalField, _GAUSS, _cell_nodes_2d, _q1_basis, _q1_grad
from .numerics import RngStream, ShapeError

#: default parameters of the magnetic delivery example
MAGNETIC_PARAMS = {
    "diffusion": 1e-8,   # m^2/s
    "kappa": 2.5e-7,
    "gamma": 6.6e-5,
    "half_width": 0.01,  # m
    "ce_width": 6.25e-5, # m^2, squared-exponential width of the carrier profile
}

#: number of pairwise-current slots in the input vector
N_CURRENT_SLOTS = 45
#: active slots (0-based) of the input signal and the surrogate field columns
ACTIVE_SLOTS = (9, 14)


class ConfigurationError(ValueError):
    """Raised when a model build is missing required configuration."""


@dataclass
class DiscreteSemilinearModel:
    """Galerkin matrices plus nonlinearity callbacks for one model instance."""

    name: str
    mesh: Mesh
    mass: np.ndarray
    drift_load: np.ndarray
    f_load: callable = field(repr=False)
    f_drift: callable = field(repr=False)
    df_drift: callable = field(repr=False)
    input_map: np.ndarray = None
    disturbance_map: np.ndarray = None
    output: np.ndarray = None
    params: dict = field(default_factory=dict)
    linear: bool = False
    df_diag: callable = field(default=None, repr=False)  # diagonal-Jacobian fast path

    def __post_init__(self):
        n = self.mass.shape[0]
        if self.input_map is None:
            self.input_map = np.zeros((n, 0))
        if self.disturbance_map is None:
            self.disturbance_map = np.zeros((n, 0))
        if self.output is None:
            self.output = np.zeros((0, n))
        self._drift = None

    @property
    def order(self):
        return self.mass.shape[0]

    @property
    def drift(self):
        """Dense drift matrix A = M^-1 @ drift_load (cached)."""
        if self._drift is None:
            self._drift = sla.solve(self.mass, self.drift_load, assume_a="pos")
        return self._drift


@dataclass
class DisturbanceSpec:
    """Held-sample Gaussian disturbance streams for one run."""

    process_cov: np.ndarray  # covariance of omega
    output_cov: np.ndarray   # covariance of eta
    hold_steps: int          # draws held constant for this many grid steps
    seed: int

    def __post_init__(self):
        self.process_cov = np.atleast_2d(np.asarray(self.process_cov, dtype=float))
        self.output_cov = np.atleast_2d(np.asarray(self.output_cov, dtype=float))
        if self.hold_steps < 1:
            raise ShapeError("hold interval must be at least one step")


def disturbance_stream(spec, grid):
    """Per-node (omega, eta) arrays, shapes (steps+1, q) and (steps+1, p).

    One draw per hold interval, held constant in between; omega and eta use
    independent substreams so either can be regenerated alone.
    """
    from .numerics import psd_factor

    root = RngStream(spec.seed)
    streams = []
    n_draws = grid.steps // spec.hold_steps + 1
    for label, cov in ((0, spec.process_cov), (1, spec.output_cov)):
        rng = root.substream(label)
        factor = psd_factor(cov)
        draws = rng.standard_normal((n_draws, cov.shape[0])) @ factor.T
        held = np.repeat(draws, spec.hold_steps, axis=0)[:grid.steps + 1]
        streams.append(held)
    return tuple(streams)


def input_signal_it(t):
    """Pairwise-current input vector; two active sinusoidal slots, rest zero."""
    u = np.zeros(N_CURRENT_SLOTS)
    u[ACTIVE_SLOTS[0]] = 0.8 * np.sin(20.0 * t) / 20.0
    u[ACTIVE_SLOTS[1]] = 16.0 * np.sin(40.0 * t) / 40.0
    return u


def input_signal_ut(t):
    """Time derivative of input_signal_it (drives the augmented current block)."""
    u = np.zeros(N_CURRENT_SLOTS)
    u[ACTIVE_SLOTS[0]] = 0.8 * np.cos(20.0 * t)
    u[ACTIVE_SLOTS[1]] = 16.0 * np.cos(40.0 * t)
    return u


def _zero_f(n):
    zero = np.zeros(n)

    def f(z, t):
        return zero

    return f


def build_linear_heat(mesh, diffusion):
    """Pure diffusion with Neumann boundary; F = 0. The KF-equivalence substrate."""
    mass, stiff = galerkin.assemble_mass_stiffness(mesh, diffusion)
    n = mesh.node_count
    zero_mat = np.zeros((n, n))
    return DiscreteSemilinearModel(
        name="linear_heat",
        mesh=mesh,
        mass=mass,
        drift_load=-stiff,
        f_load=_zero_f(n),
        f_drift=_zero_f(n),
        df_drift=lambda z, t: zero_mat,
        df_diag=lambda z, t: np.zeros(n),
        disturbance_map=mass.copy(),
        output=galerkin.assemble_output(mesh),
        params={"diffusion": diffusion},
        linear=True,
    )


def build_semilinear_heat_1d(mesh, diffusion, kappa):
    """1D heat with the quadratic sink -kappa*z^2 by nodal collocation."""
    if mesh.dimension != 1:
        raise ShapeError("build_semilinear_heat_1d needs a 1D mesh")
    mass, stiff = galerkin.assemble_mass_stiffness(mesh, diffusion)
    n = mesh.node_count

    def f_drift(z, t):
        return -kappa * z * z

    def f_load(z, t):
        return mass @ (-kappa * z * z)

    def df_drift(z, t):
        return np.diag(-2.0 * kappa * z)

    return DiscreteSemilinearModel(
        name="semilinear_heat_1d",
        mesh=mesh,
        mass=mass,
        drift_load=-stiff,
        f_load=f_load,
        f_drift=f_drift,
        df_drift=df_drift,
        disturbance_map=mass.copy(),
        output=galerkin.assemble_output(mesh),
        params={"diffusion": diffusion, "kappa": kappa},
        linear=False,
        df_diag=lambda z, t: -2.0 * kappa * z,
    )


def carrier_profile(mesh, params):
    """Normalized squared-exponential carrier concentration c_e as a NodalField.

    The normalization constant makes the mesh-quadrature integral of c_e equal
    the domain area.
    """
    coords = mesh.node_coords()
    raw = np.exp(-(coords[:, 0] ** 2 + coords[:, 1] ** 2) / params["ce_width"])
    mass, _ = galerkin.assemble_mass_stiffness(mesh, 1.0)
    integral = float(np.sum(mass @ raw))
    return NodalField(mesh, (mesh.area / integral) * raw)


def make_qc_surrogate(mesh):
    """Synthetic current-to-field matrix: smooth gradient fields in the two
    active slots, zero elsewhere. Shape (node_count, 2, N_CURRENT_SLOTS)."""
    coords = mesh.node_coords()
    r, s = coords[:, 0], coords[:, 1]
    qc = np.zeros((mesh.node_count, 2, N_CURRENT_SLOTS))
    qc[:, 0, ACTIVE_SLOTS[0]] = 2.0 * r   # grad(r^2 + s^2)
    qc[:, 1, ACTIVE_SLOTS[0]] = 2.0 * s
    qc[:, 0, ACTIVE_SLOTS[1]] = s         # grad(r*s)
    qc[:, 1, ACTIVE_SLOTS[1]] = r
    return qc


def load_qc_file(path, mesh):
    """Read a Q_c override: 2n rows x m columns of whitespace-separated reals,
    r-components stacked above s-components in node order."""
    data = np.loadtxt(path, ndmin=2)
    n = mesh.node_count
    if data.shape[0] != 2 * n:
        raise ConfigurationError(
            f"Q_c file has {data.shape[0]} rows, expected {2 * n} "
            f"(r-components above s-components, one row per node)"
        )
    return data.reshape(2, n, -1).transpose(1, 0, 2)


def output_normalization(mesh):
    """Diagonal scaling to dimensionless outputs: normalized first moments and
    mean concentration."""
    if mesh.dimension == 1:
        return np.array([1.0 / mesh.area])
    return np.array([
        1.0 / (mesh.half_width * mesh.area),
        1.0 / (mesh.half_width * mesh.area),
        1.0 / mesh.area,
    ])


#: peak magnitudes of the two active input-signal slots over one period
_INPUT_PEAKS = {ACTIVE_SLOTS[0]: 0.8 / 20.0, ACTIVE_SLOTS[1]: 16.0 / 40.0}


def build_magnetic_simplified(mesh, params=None, qc=None, normalized_output=False,
                              input_drift_scale=0.2):
    """Reaction-diffusion model with the carrier-linearized current input.

    dz/dt = div(D grad z) - kappa z^2 - div(gamma c_e Qc u) + omega, with the
    quadratic sink by nodal collocation and the input assembled into a load
    map. The synthetic surrogate columns are rescaled so the peak input drift
    ||M^-1 B u||_2 over one signal period equals input_drift_scale (1/s); the
    raw diffusion load at D = 1e-8 would leave the input numerically
    invisible. With normalized_output=True the output map is scaled to
    dimensionless moments (the harness default); otherwise raw integrals.
    """
    if mesh.dimension != 2:
        raise ShapeError("build_magnetic_simplified needs a 2D mesh")
    p = dict(MAGNETIC_PARAMS)
    p.update(params or {})
    kappa = p["kappa"]
    mass, stiff = galerkin.assemble_mass_stiffness(mesh, p["diffusion"])
    c_e = carrier_profile(mesh, p)
    if qc is None:
        qc = make_qc_surrogate(mesh)
    b = galerkin.assemble_input_map(mesh, c_e, p["gamma"], qc)
    if input_drift_scale is not None:
        for k in range(b.shape[1]):
            drift_norm = np.linalg.norm(sla.solve(mass, b[:, k], assume_a="pos"))
            if drift_norm > 0:
                peak = _INPUT_PEAKS.get(k, 1.0)
                b[:, k] *= input_drift_scale / (drift_norm * peak)
    output = galerkin.assemble_output(mesh)
    if normalized_output:
        output = output_normalization(mesh)[:, None] * output

    def f_drift(z, t):
        return -kappa * z * z

    def f_load(z, t):
        return mass @ (-kappa * z * z)

    def df_drift(z, t):
        return np.diag(-2.0 * kappa * z)

    return DiscreteSemilinearModel(
        name="magnetic_simplified",
        mesh=mesh,
        mass=mass,
        drift_load=-stiff,
        f_load=f_load,
        f_drift=f_drift,
        df_drift=df_drift,
        input_map=b,
        disturbance_map=(mass @ np.ones((mesh.node_count, 1))),
        output=output,
        params=p,
        linear=False,
        df_diag=lambda z, t: -2.0 * kappa * z,
    )


def _advection_load(mesh, kappa, gamma, qc):
    """Helpers for the augmented model's divergence-form nonlinearity.

    Returns (f_load, df_blocks) where f_load(z1, z2) is the c-block load of
    -div(kappa z1^2 [1,1] + gamma z1 Qc z2) by integration by parts, and
    df_blocks(z1, z2) the Jacobian blocks (d/dz1 as an assembled matrix,
    d/dz2 delegated to the input-map assembly).
    """
    n = mesh.node_count
    h = mesh.spacing
    cells = _cell_nodes_2d(mesh)
    jac = (h / 2.0) ** 2
    gauss = [(xi, eta) for xi in _GAUSS for eta in _GAUSS]
    phis = [_q1_basis(xi, eta) for xi, eta in gauss]
    grads = [_q1_grad(xi, eta) * (2.0 / h) for xi, eta in gauss]
    qc_cells = qc[cells]  # (n_cells, 4, 2, m)

    def f_load(z1, z2):
        out = np.zeros(n)
        for phi, grad in zip(phis, grads):
            z1_g = z1[cells] @ phi
            q_g = np.einsum("a,cadk,k->cd", phi, qc_cells, z2)
            flux = kappa * z1_g[:, None] ** 2 + gamma * z1_g[:, None] * q_g
            contrib = jac * np.einsum("ad,cd->ca", grad, flux)
            np.add.at(out, cells.ravel(), contrib.ravel())
        return out

    def df_z1(z1, z2):
        d = np.zeros((n, n))
        for phi, grad in zip(phis, grads):
            z1_g = z1[cells] @ phi
            q_g = np.einsum("a,cadk,k->cd", phi, qc_cells, z2)
            vel = 2.0 * kappa * z1_g[:, None] + gamma * q_g  # (n_cells, 2)
            gv = jac * np.einsum("ad,cd->ca", grad, vel)     # (n_cells, 4)
            block = gv[:, :, None] * phi[None, None, :]      # (n_cells, 4, 4)
            rows = np.repeat(cells, 4, axis=1).ravel()
            cols = np.tile(cells, (1, 4)).ravel()
            np.add.at(d, (rows, cols), block.reshape(-1))
        return d

    def df_z2(z1):
        return galerkin.assemble_input_map(
            mesh, NodalField(mesh, z1), gamma, qc
        )

    return f_load, df_z1, df_z2


@dataclass
class OrthonormalTransform:
    """Cholesky change of coordinates x = G^T z with mass = G G^T.

    In x-coordinates the discrete L2 inner product is Euclidean, so the
    plain-transpose Riccati equations realize the operator-adjoint filter:
    gains act along Riesz representers of the output functionals instead of
    along quadrature-weight vectors.
    """

    chol: np.ndarray  # lower-triangular G

    def __post_init__(self):
        n = self.chol.shape[0]
        self.inv_chol_t = sla.solve_triangular(self.chol.T, np.eye(n),
                                               lower=False)

    def to_x(self, z):
        return self.chol.T @ z

    def to_nodal(self, x):
        return self.inv_chol_t @ x


def to_orthonormal(model):
    """Model re-expressed in mass-orthonormal coordinates; returns
    (transformed model, transform). The transformed model has identity mass;
    its drift is symmetric whenever the original drift is self-adjoint in the
    mass inner product."""
    g = sla.cholesky(model.mass, lower=True)
    transform = OrthonormalTransform(g)
    g_t = np.ascontiguousarray(g.T)
    inv_g_t = transform.inv_chol_t

    def left(mat):
        return sla.solve_triangular(g, mat, lower=True)

    a_x = left(left(model.drift_load).T).T  # G^-1 (drift_load) G^-T
    b_x = left(model.input_map) if model.input_map.size else model.input_map
    g_x = (left(model.disturbance_map) if model.disturbance_map.size
           else model.disturbance_map)
    c_x = left(model.output.T).T if model.output.size else model.output

    def f_x(x, t):
        return g_t @ model.f_drift(inv_g_t @ x, t)

    if model.df_diag is not None:
        def df_x(x, t):
            d = model.df_diag(inv_g_t @ x, t)
            return (g_t * d) @ inv_g_t  # G^T diag(d) G^-T
    else:
        def df_x(x, t):
            df = model.df_drift(inv_g_t @ x, t)
            return g_t @ (df @ inv_g_t)

    mx = DiscreteSemilinearModel(
        name=model.name,
        mesh=model.mesh,
        mass=np.eye(model.order),
        drift_load=a_x,
        f_load=f_x,
        f_drift=f_x,
        df_drift=df_x,
        input_map=b_x,
        disturbance_map=g_x,
        output=c_x,
        params={**model.params, "orthonormal_coords": True},
        linear=model.linear,
    )
    return mx, transform


def build_magnetic_augmented(mesh, params=None, m_currents=N_CURRENT_SLOTS,
                             qc=None, normalized_output=False):
    """Augmented-state model: concentration plus the current vector.

    State (z1, z2) with M dz1/dt = -K z1 + F_c(z1, z2) + omega_1-load and
    dz2/dt = u + omega_2 (omega_2 entering the first four current slots).
    The nonlinearity F(z1, z2) = -div(kappa z1^2 [1,1] + gamma z1 Qc z2) is
    Frechet differentiable but not globally Lipschitz on the product space;
    the catalog ships it for experiments beyond the smooth theory.
    """
    if mesh.dimension != 2:
        raise ShapeError("build_magnetic_augmented needs a 2D mesh")
    p = dict(MAGNETIC_PARAMS)
    p.update(params or {})
    mass_c, stiff = galerkin.assemble_mass_stiffness(mesh, p["diffusion"])
    if qc is None:
        qc = make_qc_surrogate(mesh)
    if qc.shape[2] != m_currents:
        raise ShapeError(
            f"qc has {qc.shape[2]} columns but m_currents={m_currents}"
        )
    n = mesh.node_count
    nt = n + m_currents
    mass = np.eye(nt)
    mass[:n, :n] = mass_c
    drift_load = np.zeros((nt, nt))
    drift_load[:n, :n] = -stiff

    fc_load, df_z1, df_z2 = _advection_load(mesh, p["kappa"], p["gamma"], qc)
    mass_lu = sla.lu_factor(mass_c)

    def f_load(z, t):
        out = np.zeros(nt)
        out[:n] = fc_load(z[:n], z[n:])
        return out

    def f_drift(z, t):
        out = np.zeros(nt)
        out[:n] = sla.lu_solve(mass_lu, fc_load(z[:n], z[n:]))
        return out

    def df_drift(z, t):
        d = np.zeros((nt, nt))
        d[:n, :n] = sla.lu_solve(mass_lu, df_z1(z[:n], z[n:]))
        d[:n, n:] = sla.lu_solve(mass_lu, df_z2(z[:n]))
        return d

    input_map = np.zeros((nt, m_currents))
    input_map[n:, :] = np.eye(m_currents)
    dist = np.zeros((nt, 5))
    dist[:n, 0] = mass_c @ np.ones(n)
    dist[n:n + 4, 1:5] = np.eye(4)
    output_c = galerkin.assemble_output(mesh)
    if normalized_output:
        output_c = output_normalization(mesh)[:, None] * output_c
    output = np.hstack([output_c, np.zeros((output_c.shape[0], m_currents))])

    return DiscreteSemilinearModel(
        name="magnetic_augmented",
        mesh=mesh,
        mass=mass,
        drift_load=drift_load,
        f_load=f_load,
        f_drift=f_drift,
        df_drift=df_drift,
        input_map=input_map,
        disturbance_map=dist,
        output=output,
        params=p,
        linear=False,
    )
