"""Coupled observer/covariance loop (the production EKF) and the linear KF oracle.

Per step, from (zhat_k, P_k): the gain is frozen from P_k, the innovation uses
y at the step start, the state advances one IMEX step, and the covariance one
differential-Riccati step with the linearization evaluated at zhat_k. The
shift alpha enters only the covariance propagation, never the observer drift.
"""

from dataclasses import dataclass, field

import numpy as np

from .evolution import DivergenceError, ImexStepper, TimeGrid, Trajectory, evolve_mild
from .galerkin import Mesh, interpolation_matrix
from .numerics import PSDError, ShapeError, min_eigenvalue, symmetrize
from .riccati import (NoiseSpec, PSDLossError, RiccatiDivergenceError,
                      RiccatiTrajectory, _check_p, _storage_plan, dre_step,
                      gain_matrix)
from .systems import DisturbanceSpec, disturbance_stream, to_orthonormal


class MisuseError(ValueError):
    """Raised when run_kf is handed a model with a nonzero nonlinearity."""


def gain(p, c, r, delta0=None):
    """Observer gain L = P C^T R^-1; rejects R below the coercivity floor."""
    r = np.asarray(r, dtype=float)
    if delta0 is not None and min_eigenvalue(r) < delta0 * (1.0 - 1e-12):
        raise PSDError(f"R violates the coercivity floor delta0={delta0}")
    return gain_matrix(np.asarray(p, dtype=float), np.asarray(c, dtype=float), r)


@dataclass
class ObserverConfig:
    """Filter parameters for one observer."""

    alpha: float
    spec: NoiseSpec
    observer_mesh: Mesh = None
    initial_estimate: np.ndarray = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ShapeError("alpha must be >= 0")


@dataclass
class ObserverRun:
    """Everything one coupled run produced, sufficient to reproduce it."""

    grid: TimeGrid
    truth: Trajectory
    estimate: Trajectory
    p: RiccatiTrajectory
    y: np.ndarray           # measured outputs fed to the observer, (steps+1, p)
    predicted: np.ndarray   # C_obs @ zhat at every node
    gain_norms: np.ndarray  # Frobenius norm of L at every node
    p_trace: np.ndarray
    omega: np.ndarray = None
    eta: np.ndarray = None
    seed: int = None
    truth_model: object = field(default=None, repr=False)
    observer_model: object = field(default=None, repr=False)


def state_interpolation(source_model, target_model):
    """Matrix mapping source-model states onto the target model's state space.

    Mesh fields are interpolated; any trailing non-mesh block (the augmented
    current vector) passes through unchanged and must have equal size.
    """
    t = interpolation_matrix(source_model.mesh, target_model.mesh)
    aux_s = source_model.order - source_model.mesh.node_count
    aux_t = target_model.order - target_model.mesh.node_count
    if aux_s or aux_t:
        if aux_s != aux_t:
            raise ShapeError("models carry different auxiliary state sizes")
        out = np.zeros((target_model.order, source_model.order))
        out[:t.shape[0], :t.shape[1]] = t
        out[t.shape[0]:, t.shape[1]:] = np.eye(aux_s)
        return out
    return t


def _observer_forcing(model, z, t, u_k, l_k, innovation):
    forcing = model.f_load(z, t)
    if l_k is not None:
        forcing = forcing + model.mass @ (l_k @ innovation)
    if u_k is not None and model.input_map.size:
        forcing = forcing + model.input_map @ u_k
    return forcing


def ekf_step(model, zhat, p, y_k, u_k, dt, alpha, spec, t=0.0):
    """One coupled step from (zhat, P); returns (zhat+, P+).

    The gain comes from the current P, both updates start from the current
    state: DF is evaluated at zhat before the state moves.
    """
    c = model.output
    r_k = spec.r_at(t)
    l_k = gain(p, c, r_k, spec.delta0) if c.size else None
    a_k = model.drift + alpha * np.eye(model.order) + model.df_drift(zhat, t)
    innovation = (y_k - c @ zhat) if c.size else None
    stepper = ImexStepper(model.mass, model.drift_load, dt)
    z_next = stepper.step(zhat, _observer_forcing(model, zhat, t, u_k, l_k,
                                                  innovation))
    p_next = dre_step(p, a_k, c, spec.w_at(t), r_k, dt)
    return z_next, p_next


def _resolve_inputs(inputs, grid):
    if inputs is None:
        return None
    if callable(inputs):
        return np.array([inputs(t) for t in grid.times()])
    arr = np.asarray(inputs, dtype=float)
    if arr.shape[0] < grid.steps:
        raise ShapeError("input array shorter than the grid")
    return arr


def _resolve_disturbances(disturbances, grid):
    if disturbances is None:
        return None, None, None
    if isinstance(disturbances, DisturbanceSpec):
        omega, eta = disturbance_stream(disturbances, grid)
        return omega, eta, disturbances.seed
    omega, eta = disturbances
    return omega, eta, None


def run_ekf(truth_model, observer_model, config, inputs, disturbances, grid,
            truth_z0=None, truth=None, norm_cap=1e12, p_store_max=None):
    """Full coupled run: truth simulation, measured outputs, observer loop.

    Outputs y are produced on the truth mesh (plus output disturbance) and fed
    to the observer unchanged; the observer's own output map lives on its
    mesh. The filter itself runs in mass-orthonormal coordinates (the
    covariance and noise spec live on that space; gains act along Riesz
    representers of the output functionals); recorded estimates are nodal.

    A precomputed truth Trajectory may be passed to share one truth (and one
    y stream) across several observers. p_store_max caps the number of stored
    covariance snapshots. On divergence the raised error carries the run up
    to the last valid step as exc.partial_run.
    """
    times = grid.times()
    dt = grid.dt
    spec = config.spec
    c_t = truth_model.output
    if c_t.shape[0] != observer_model.output.shape[0]:
        raise ShapeError(
            f"truth and observer output dimensions differ: "
            f"{c_t.shape[0]} vs {observer_model.output.shape[0]}"
        )
    u = _resolve_inputs(inputs, grid)
    omega, eta, seed = _resolve_disturbances(disturbances, grid)

    if truth is None:
        if truth_z0 is None:
            raise ShapeError("run_ekf needs truth_z0 or a precomputed truth")
        truth = evolve_mild(truth_model, truth_z0, u, omega, grid)
    y = truth.states @ c_t.T
    if eta is not None:
        y = y + eta

    obs, transform = to_orthonormal(observer_model)
    c_o = obs.output
    n = obs.order
    zhat0 = (np.zeros(n) if config.initial_estimate is None
             else np.asarray(config.initial_estimate, dtype=float))
    x = transform.to_x(zhat0)
    p = symmetrize(spec.p0)
    stepper = ImexStepper(None, obs.drift_load, dt)
    eye = np.eye(n)

    if p_store_max is None or grid.steps + 1 <= p_store_max:
        store_stride = 1
    else:
        store_stride = int(np.ceil((grid.steps + 1) / p_store_max))
    idx = _storage_plan(grid.steps, store_stride)
    stored = np.empty((len(idx), n, n))
    pos = 0
    estimates = np.empty((grid.steps + 1, n))
    estimates[0] = zhat0
    gain_norms = np.empty(grid.steps + 1)
    p_trace = np.empty(grid.steps + 1)

    def package(last):
        if last == grid.steps:
            g, tr = grid, truth
        else:
            g = TimeGrid(grid.t0, times[last], max(last, 1))
            tr = Trajectory(g, truth.states[:last + 1])
        keep = idx[idx <= last]
        return ObserverRun(
            grid=g,
            truth=tr,
            estimate=Trajectory(g, estimates[:last + 1]),
            p=RiccatiTrajectory(g, stored[:len(keep)], config.alpha, keep),
            y=y[:last + 1],
            predicted=estimates[:last + 1] @ observer_model.output.T,
            gain_norms=gain_norms[:last + 1],
            p_trace=p_trace[:last + 1],
            omega=omega,
            eta=eta,
            seed=seed,
            truth_model=truth_model,
            observer_model=observer_model,
        )

    for k in range(grid.steps + 1):
        t = times[k]
        r_k = spec.r_at(t)
        l_k = gain_matrix(p, c_o, r_k) if c_o.size else None
        gain_norms[k] = 0.0 if l_k is None else float(np.linalg.norm(l_k))
        p_trace[k] = float(np.trace(p))
        if pos < len(idx) and idx[pos] == k:
            stored[pos] = p
            pos += 1
        if k == grid.steps:
            break
        try:
            innovation = (y[k] - c_o @ x) if c_o.size else None
            a_k = obs.drift_load + config.alpha * eye + obs.df_drift(x, t)
            forcing = _observer_forcing(obs, x, t,
                                        None if u is None else u[k], l_k,
                                        innovation)
            x = stepper.step(x, forcing)
            if not np.all(np.isfinite(x)):
                raise DivergenceError(
                    f"observer state became non-finite at step {k + 1}", k + 1
                )
            p = dre_step(p, a_k, c_o, spec.w_at(t), r_k, dt)
            _check_p(p, k + 1, norm_cap)
        except (DivergenceError, PSDLossError, RiccatiDivergenceError) as exc:
            exc.partial_run = package(k)
            raise
        estimates[k + 1] = transform.to_nodal(x)

    return package(grid.steps)


def run_kf(linear_model, config, inputs, disturbances, grid, truth_z0,
           norm_cap=1e12):
    """Linear time-varying Kalman filter, written as its own plain loop.

    The EKF must reduce to this on linear models; keeping the loop separate
    (no linearization machinery at all) preserves it as an oracle. Raises
    MisuseError if the model has a nonzero nonlinearity.
    """
    probe = np.linspace(-1.0, 1.0, linear_model.order)
    if not linear_model.linear or np.any(linear_model.f_drift(probe, grid.t0)):
        raise MisuseError("run_kf requires a model with F = 0")

    times = grid.times()
    dt = grid.dt
    spec = config.spec
    u = _resolve_inputs(inputs, grid)
    omega, eta, seed = _resolve_disturbances(disturbances, grid)

    truth = evolve_mild(linear_model, truth_z0, u, omega, grid)
    y = truth.states @ linear_model.output.T
    if eta is not None:
        y = y + eta

    obs, transform = to_orthonormal(linear_model)
    c = obs.output
    n = obs.order
    a_d = obs.drift_load + config.alpha * np.eye(n)
    zhat0 = (np.zeros(n) if config.initial_estimate is None
             else np.asarray(config.initial_estimate, dtype=float))
    x = transform.to_x(zhat0)
    p = symmetrize(spec.p0)
    stepper = ImexStepper(None, obs.drift_load, dt)
    estimates = np.empty((grid.steps + 1, n))
    estimates[0] = zhat0
    stored = np.empty((grid.steps + 1, n, n))
    stored[0] = p
    gain_norms = np.empty(grid.steps + 1)
    p_trace = np.empty(grid.steps + 1)

    for k in range(grid.steps + 1):
        t = times[k]
        r_k = spec.r_at(t)
        l_k = gain_matrix(p, c, r_k)
        gain_norms[k] = float(np.linalg.norm(l_k))
        p_trace[k] = float(np.trace(p))
        if k == grid.steps:
            break
        forcing = l_k @ (y[k] - c @ x)
        if u is not None and obs.input_map.size:
            forcing = forcing + obs.input_map @ u[k]
        x = stepper.step(x, forcing)
        p = dre_step(p, a_d, c, spec.w_at(t), r_k, dt)
        _check_p(p, k + 1, norm_cap)
        stored[k + 1] = p
        estimates[k + 1] = transform.to_nodal(x)

    return ObserverRun(
        grid=grid,
        truth=truth,
        estimate=Trajectory(grid, estimates),
        p=RiccatiTrajectory(grid, stored, config.alpha),
        y=y,
        predicted=estimates @ linear_model.output.T,
        gain_norms=gain_norms,
        p_trace=p_trace,
        omega=omega,
        eta=eta,
        seed=seed,
        truth_model=linear_model,
        observer_model=linear_model,
    )
