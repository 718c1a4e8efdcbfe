"""Time integration of the semi-discrete systems and evolution-operator tables.

The scheme everywhere is first-order IMEX: the stiff linear part is treated
implicitly, everything else (nonlinearity, inputs, gains, disturbances) enters
explicitly, frozen at the step start,

    (M - dt*A_lin) z_{k+1} = M z_k + dt * forcing_k.

Evolution-operator tables store the per-step transition matrices; a table
entry U(t_i, t_j) is the ordered product of steps j..i-1, which is exactly
what propagating each column from the identity produces.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .numerics import ShapeError

#: order cap for dense oracle tables
TABLE_MAX_ORDER = 64
#: step cap for dense oracle tables
TABLE_MAX_STEPS = 4096


class StepFailure(RuntimeError):
    """Implicit step matrix is singular."""


class DivergenceError(RuntimeError):
    """Trajectory left the finite range; carries the failing step index."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class TableSizeError(ValueError):
    """Requested oracle table exceeds the documented caps."""


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    tf: float
    steps: int

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ShapeError("tf must exceed t0")
        if self.steps < 1:
            raise ShapeError("steps must be >= 1")

    @property
    def dt(self):
        return (self.tf - self.t0) / self.steps

    def times(self):
        return np.linspace(self.t0, self.tf, self.steps + 1)


@dataclass
class Trajectory:
    grid: TimeGrid
    states: np.ndarray  # (steps+1, n)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.shape[0] != self.grid.steps + 1:
            raise ShapeError(
                f"{self.states.shape[0]} states for {self.grid.steps + 1} grid nodes"
            )


class ImexStepper:
    """Prefactored solver for (M - dt*A_lin) z+ = M z + dt*forcing."""

    def __init__(self, mass, a_lin, dt):
        n = a_lin.shape[0] if a_lin is not None else mass.shape[0]
        self.mass = np.eye(n) if mass is None else np.asarray(mass, dtype=float)
        a_lin = np.zeros((n, n)) if a_lin is None else np.asarray(a_lin, dtype=float)
        self.dt = float(dt)
        lhs = self.mass - self.dt * a_lin
        try:
            self._lu = sla.lu_factor(lhs, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise StepFailure(
                f"implicit matrix (M - dt*A) is singular at dt={dt}; reduce dt"
            ) from exc
        diag = np.abs(np.diag(self._lu[0]))
        if not np.all(np.isfinite(self._lu[0])) or np.any(diag == 0.0):
            raise StepFailure(
                f"implicit matrix (M - dt*A) is singular at dt={dt}; reduce dt"
            )

    def step(self, state, forcing=None):
        rhs = self.mass @ state
        if forcing is not None:
            rhs = rhs + self.dt * forcing
        return sla.lu_solve(self._lu, rhs, check_finite=False)

    def transition_matrix(self):
        """S with z+ = S z when forcing is zero."""
        return sla.lu_solve(self._lu, self.mass, check_finite=False)


def imex_step(state, mass, a_lin, forcing, dt):
    """One semi-implicit step; see module docstring for the scheme."""
    state = np.asarray(state, dtype=float)
    stepper = ImexStepper(mass, a_lin, dt)
    return stepper.step(state, None if forcing is None else np.asarray(forcing, float))


def evolve_mild(model, z0, inputs, disturbance, grid):
    """Integrate M dz/dt = drift_load @ z + f_load(z) + B u + G w on the grid.

    inputs / disturbance: (steps, m) and (steps, q) arrays (or None), sampled
    at step starts. Raises DivergenceError with the step index if the state
    leaves the finite range.
    """
    z = np.asarray(z0, dtype=float).copy()
    stepper = ImexStepper(model.mass, model.drift_load, grid.dt)
    times = grid.times()
    out = np.empty((grid.steps + 1, z.shape[0]))
    out[0] = z
    for k in range(grid.steps):
        forcing = model.f_load(z, times[k])
        if inputs is not None and model.input_map.size:
            forcing = forcing + model.input_map @ inputs[k]
        if disturbance is not None and model.disturbance_map.size:
            forcing = forcing + model.disturbance_map @ disturbance[k]
        z = stepper.step(z, forcing)
        if not np.all(np.isfinite(z)):
            raise DivergenceError(f"state became non-finite at step {k + 1}", k + 1)
        out[k + 1] = z
    return Trajectory(grid, out)


@dataclass
class EvolutionTable:
    """Dense oracle representation of U(t_i, t_j), 0 <= j <= i <= steps.

    steps_matrices[k] maps t_k to t_{k+1}; U(t_i, t_j) is the ordered product
    of steps j..i-1 and U(t_i, t_i) = I.
    """

    grid: TimeGrid
    step_matrices: np.ndarray  # (steps, n, n)

    @property
    def order(self):
        return self.step_matrices.shape[1]

    def entry(self, i, j):
        """Materialize U(t_i, t_j)."""
        if not 0 <= j <= i <= self.grid.steps:
            raise IndexError(f"need 0 <= j <= i <= steps, got ({i}, {j})")
        u = np.eye(self.order)
        for k in range(j, i):
            u = self.step_matrices[k] @ u
        return u

    def column_norms(self, j, ord=2):
        """||U(t_i, t_j)|| for all i >= j, marching the column forward once."""
        u = np.eye(self.order)
        norms = np.empty(self.grid.steps - j + 1)
        norms[0] = np.linalg.norm(u, ord)
        for k in range(j, self.grid.steps):
            u = self.step_matrices[k] @ u
            norms[k - j + 1] = np.linalg.norm(u, ord)
        return norms


def _check_caps(order, steps):
    if order > TABLE_MAX_ORDER:
        raise TableSizeError(
            f"table order {order} above oracle cap {TABLE_MAX_ORDER}"
        )
    if steps > TABLE_MAX_STEPS:
        raise TableSizeError(
            f"table steps {steps} above oracle cap {TABLE_MAX_STEPS}"
        )


def evolution_table(a, d, grid, mass=None, check_caps=True):
    """Table of the evolution operator generated by A + D(t).

    a: fixed (n, n) matrix; d: None, a fixed matrix, or a callable (k, t) ->
    matrix evaluated at step starts. Columns are propagated from the identity
    by the implicit step (M - dt*(A + D(t_k))), so entries are products of the
    per-step transitions.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if check_caps:
        _check_caps(n, grid.steps)
    times = grid.times()
    dt = grid.dt
    mass = np.eye(n) if mass is None else np.asarray(mass, dtype=float)
    steps = np.empty((grid.steps, n, n))
    if d is None or not callable(d):
        gen = a if d is None else a + np.asarray(d, dtype=float)
        s = ImexStepper(mass, mass @ gen, dt).transition_matrix()
        steps[:] = s
    else:
        for k in range(grid.steps):
            gen = a + np.asarray(d(k, times[k]), dtype=float)
            steps[k] = ImexStepper(mass, mass @ gen, dt).transition_matrix()
    return EvolutionTable(grid, steps)


def perturb_table(base, feedback):
    """Left-rectangle Volterra perturbation of a table by a feedback term.

    feedback: None, a fixed (n, n) matrix, or a callable (k, t) -> matrix
    giving the perturbation D_k (e.g. -P(t_k) C^T R^-1 C). The discrete
    Volterra relation

        U_P(t_i, t_j) = U(t_i, t_j) + sum_k dt * U(t_i, t_k) D_k U_P(t_k, t_j)

    telescopes exactly onto per-step factors S_k (I + dt D_k).
    """
    if feedback is None:
        return EvolutionTable(base.grid, base.step_matrices.copy())
    n = base.order
    dt = base.grid.dt
    times = base.grid.times()
    eye = np.eye(n)
    out = np.empty_like(base.step_matrices)
    for k in range(base.grid.steps):
        d_k = feedback(k, times[k]) if callable(feedback) else feedback
        out[k] = base.step_matrices[k] @ (eye + dt * np.asarray(d_k, dtype=float))
    return EvolutionTable(base.grid, out)


def shift_table(base, beta):
    """Table with entries exp(beta*(t_i - t_j)) * U(t_i, t_j), exactly."""
    factor = float(np.exp(beta * base.grid.dt))
    return EvolutionTable(base.grid, factor * base.step_matrices)
