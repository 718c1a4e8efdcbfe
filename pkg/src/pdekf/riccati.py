"""Riccati covariance propagation and the integral-form fixed-point construction.

The production path is the differential filter Riccati equation

    dP/dt = A_d P + P A_d^T - P C^T R^-1 C P + W,    P(0) = P0,

stepped with the linear term one-sided implicit, quadratic and W terms
explicit, followed by exact symmetrization. The integral form (the perturbed
evolution operator coupled with the covariance update) is kept as an
independent oracle; its left-rectangle discretization telescopes onto
per-step factors, so the oracle marches forward in time and closes the
self-consistency loop by repeated sweeps.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .evolution import ImexStepper, TimeGrid, Trajectory
from .numerics import (PSDError, ShapeError, is_psd, min_eigenvalue, solve_spd,
                       symmetrize)


class PSDLossError(RuntimeError):
    """Covariance lost positive semidefiniteness; carries the step index."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class RiccatiDivergenceError(RuntimeError):
    """Covariance norm blew past the guard; carries the step index."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class FixedPointError(RuntimeError):
    """Iteration did not converge; carries the distance sequence."""

    def __init__(self, message, distances):
        super().__init__(message)
        self.distances = distances


def _as_time_fn(value):
    if callable(value):
        return value
    arr = np.asarray(value, dtype=float)
    return lambda t: arr


@dataclass
class NoiseSpec:
    """The (P0, W(t), R(t)) triple plus the coercivity floor of R.

    w and r may be constant matrices or callables of time. The theory wants
    P0 positive definite; numerically PSD is accepted (the scalar closed-form
    cases start from P0 = 0). W(t) must be PSD and min eig R(t) >= delta0 > 0.
    """

    p0: np.ndarray
    w: object
    r: object
    delta0: float = None

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float)
        if self.p0.ndim != 2 or self.p0.shape[0] != self.p0.shape[1]:
            raise ShapeError("P0 must be square")
        lam0 = min_eigenvalue(self.p0)
        if lam0 < -1e-12 * max(np.linalg.norm(self.p0, 2), 1e-300):
            raise PSDError(f"P0 must be PSD (min eigenvalue {lam0:.3e})")
        self._w_const = None if callable(self.w) else np.asarray(self.w, float)
        self._r_const = None if callable(self.r) else np.asarray(self.r, float)
        self._w_fn = _as_time_fn(self.w)
        self._r_fn = _as_time_fn(self.r)
        if self.delta0 is None:
            self.delta0 = float(min_eigenvalue(np.asarray(self._r_fn(0.0), float)))
        if not self.delta0 > 0:
            raise PSDError(f"coercivity floor delta0 = {self.delta0} must be > 0")
        if self._r_const is not None:
            self._validate_r(self._r_const, 0.0)

    def _validate_r(self, r, t):
        if min_eigenvalue(r) < self.delta0 * (1.0 - 1e-12):
            raise PSDError(
                f"R(t={t}) violates the coercivity floor delta0={self.delta0}"
            )
        return r

    def w_at(self, t):
        if self._w_const is not None:
            return self._w_const
        return np.asarray(self._w_fn(t), dtype=float)

    def r_at(self, t):
        if self._r_const is not None:
            return self._r_const
        return self._validate_r(np.asarray(self._r_fn(t), dtype=float), t)


@dataclass
class RiccatiTrajectory:
    """Stored covariance snapshots along a grid.

    stored_indices lists the grid nodes actually kept (always including the
    endpoints); stride-1 storage keeps every node.
    """

    grid: TimeGrid
    p: np.ndarray  # (n_stored, n, n)
    alpha: float
    stored_indices: np.ndarray = None

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.stored_indices is None:
            self.stored_indices = np.arange(self.grid.steps + 1)
        self.stored_indices = np.asarray(self.stored_indices, dtype=int)
        if len(self.stored_indices) != self.p.shape[0]:
            raise ShapeError("stored_indices length does not match snapshots")

    @property
    def full(self):
        return len(self.stored_indices) == self.grid.steps + 1

    def at_step(self, k):
        pos = np.searchsorted(self.stored_indices, k)
        if pos >= len(self.stored_indices) or self.stored_indices[pos] != k:
            raise IndexError(f"step {k} not stored (stride storage)")
        return self.p[pos]

    def final(self):
        return self.p[-1]

    def sup_distance(self, other):
        """max over common stored nodes of the spectral-norm difference."""
        if not np.array_equal(self.stored_indices, other.stored_indices):
            raise ShapeError("trajectories store different nodes")
        return max(
            float(np.linalg.norm(a - b, 2)) for a, b in zip(self.p, other.p)
        )


def gain_matrix(p, c, r):
    """Observer gain L = P C^T R^-1 (R symmetric coercive)."""
    return solve_spd(r, c @ p.T).T


def dre_step(p, a_k, c, w_k, r_k, dt):
    """One covariance step; see module docstring for the splitting."""
    n = p.shape[0]
    if c.size:
        quad = gain_matrix(p, c, r_k) @ (c @ p)
    else:
        quad = 0.0
    rhs = p + dt * (p @ a_k.T + w_k - quad)
    lhs = np.eye(n) - dt * a_k
    return symmetrize(np.linalg.solve(lhs, rhs))


def _check_p(p, k, norm_cap, psd_tol=1e-8):
    # Frobenius norm here: cheap, and an upper bound on the spectral norm,
    # so the blow-up guard stays conservative.
    norm = float(np.linalg.norm(p))
    if not np.isfinite(norm) or norm > norm_cap:
        raise RiccatiDivergenceError(
            f"||P|| = {norm:.3e} exceeded the guard {norm_cap:.1e} at step {k}",
            k,
        )
    if not is_psd(p, rel_tol=psd_tol):
        raise PSDLossError(
            f"P lost positive semidefiniteness at step {k} "
            f"(min eig {min_eigenvalue(p):.3e}, ||P|| {norm:.3e})",
            k,
        )


def _storage_plan(steps, store_stride):
    if store_stride in (None, 1):
        return np.arange(steps + 1)
    idx = np.arange(0, steps + 1, store_stride)
    if idx[-1] != steps:
        idx = np.append(idx, steps)
    return idx


def dre_propagate(a_d, c, spec, grid, alpha=0.0, norm_cap=1e12, store_stride=1):
    """Propagate the differential Riccati equation along the grid.

    a_d: callable (k, t) -> matrix (the full shifted linearization
    A + alpha*I + DF evaluated along the estimate) or a constant matrix.
    Every step ends with exact symmetrization and a PSD check; divergence
    past norm_cap and PSD loss below -1e-8*||P|| raise with the step index.
    """
    c = np.asarray(c, dtype=float)
    p = symmetrize(spec.p0)
    times = grid.times()
    dt = grid.dt
    idx = _storage_plan(grid.steps, store_stride)
    stored = np.empty((len(idx), p.shape[0], p.shape[1]))
    pos = 0
    if idx[pos] == 0:
        stored[pos] = p
        pos += 1
    a_fn = a_d if callable(a_d) else (lambda k, t: a_d)
    for k in range(grid.steps):
        p = dre_step(p, np.asarray(a_fn(k, times[k]), float), c,
                     spec.w_at(times[k]), spec.r_at(times[k]), dt)
        _check_p(p, k + 1, norm_cap)
        if pos < len(idx) and idx[pos] == k + 1:
            stored[pos] = p
            pos += 1
    return RiccatiTrajectory(grid, stored, alpha, idx)


def integral_riccati_oracle(zhat, model, spec, alpha, grid, tol=1e-10,
                            max_sweeps=100, norm_cap=1e12):
    """Integral-form covariance oracle along a fixed estimate trajectory.

    Builds the per-step transitions of the evolution operator generated by
    A + alpha*I + DF(zhat(t)), perturbs them by the current gain (the exact
    telescoped form of the left-rectangle Volterra relation), and marches the
    covariance update forward. The covariance entering the perturbation and
    the quadratic source is frozen from the previous sweep; sweeps repeat
    until self-consistent to tol in the sup norm.
    """
    from .evolution import TABLE_MAX_ORDER, TableSizeError

    n = model.order
    if n > TABLE_MAX_ORDER:
        raise TableSizeError(
            f"integral oracle order {n} above the cap {TABLE_MAX_ORDER}"
        )
    dt = grid.dt
    times = grid.times()
    c = model.output
    eye = np.eye(n)
    drift = model.drift + alpha * eye

    s_steps = np.empty((grid.steps, n, n))
    for k in range(grid.steps):
        a_k = drift + model.df_drift(zhat.states[k], times[k])
        s_steps[k] = sla.solve(eye - dt * a_k, eye, check_finite=False)

    p0 = symmetrize(spec.p0)
    p_seq = np.tile(p0, (grid.steps + 1, 1, 1))
    for sweep in range(1, max_sweeps + 1):
        p_new = np.empty_like(p_seq)
        p_new[0] = p0
        acc = p0
        for k in range(grid.steps):
            w_k = spec.w_at(times[k])
            r_k = spec.r_at(times[k])
            if c.size:
                l_k = gain_matrix(p_seq[k], c, r_k)
                quad = l_k @ (c @ p_seq[k])
                s_pert = s_steps[k] @ (eye - dt * (l_k @ c))
            else:
                quad = 0.0
                s_pert = s_steps[k]
            acc = s_pert @ (acc + dt * (w_k + quad)) @ s_pert.T
            acc = symmetrize(acc)
            p_new[k + 1] = acc
        if not np.all(np.isfinite(p_new)):
            raise FixedPointError(
                f"integral Riccati sweep {sweep} left the finite range; "
                f"the instance is too stiff for the frozen-sweep oracle",
                [],
            )
        dist = float(max(np.linalg.norm(a - b, 2)
                         for a, b in zip(p_new, p_seq)))
        p_seq = p_new
        if dist <= tol:
            break
    else:
        raise FixedPointError(
            f"integral Riccati sweeps did not reach {tol:.1e} in "
            f"{max_sweeps} sweeps (last distance {dist:.3e})",
            [dist],
        )
    for k in (grid.steps,):
        _check_p(p_seq[k], k, norm_cap)
    return RiccatiTrajectory(grid, p_seq, alpha)


def g1_observer_map(p_traj, model, y, u, zhat0, spec, grid):
    """Observer trajectory for a fixed covariance trajectory (the map G1).

    Integrates the observer equation with gain forcing
    P(t_k) C^T R^-1 (y_k - C zhat_k); the shift alpha is not applied here,
    it lives only inside the Riccati propagation.
    """
    if not p_traj.full:
        raise ShapeError("g1_observer_map needs stride-1 covariance storage")
    c = model.output
    stepper = ImexStepper(model.mass, model.drift_load, grid.dt)
    times = grid.times()
    z = np.asarray(zhat0, dtype=float).copy()
    out = np.empty((grid.steps + 1, z.shape[0]))
    out[0] = z
    for k in range(grid.steps):
        forcing = model.f_load(z, times[k])
        if c.size:
            l_k = gain_matrix(p_traj.at_step(k), c, spec.r_at(times[k]))
            forcing = forcing + model.mass @ (l_k @ (y[k] - c @ z))
        if u is not None and model.input_map.size:
            forcing = forcing + model.input_map @ u[k]
        z = stepper.step(z, forcing)
        out[k + 1] = z
    return Trajectory(grid, out)


@dataclass
class PicardResult:
    p: RiccatiTrajectory
    zhat: Trajectory
    distances: list
    p_sup_norms: list  # sup_t ||P^k(t)|| per iterate (no ball radius asserted)
    iterations: int


def picard_fixed_point(model, y, u, spec, alpha, grid, tol=1e-8, max_iter=50,
                       zhat0=None, riccati_map="integral", initial="p0",
                       norm_cap=1e12):
    """Fixed point of the composed observer/Riccati map.

    Iterates P^{k+1} = G2(G1(P^k)) from the constant-in-time initial iterate
    P^0 = P0 (or 0 with initial="zero"), recording the sup-norm distance
    sequence. riccati_map selects the integral-form oracle (default) or the
    differential production solver for G2.
    """
    n = model.order
    if zhat0 is None:
        zhat0 = np.zeros(n)
    if initial == "p0":
        p_init = symmetrize(spec.p0)
    elif initial == "zero":
        p_init = np.zeros_like(spec.p0)
    else:
        raise ValueError(f"unknown initial iterate {initial!r}")
    p_traj = RiccatiTrajectory(
        grid, np.tile(p_init, (grid.steps + 1, 1, 1)), alpha
    )
    distances = []
    sup_norms = [float(max(np.linalg.norm(m, 2) for m in p_traj.p))]
    times = grid.times()
    zhat = None
    for it in range(1, max_iter + 1):
        zhat = g1_observer_map(p_traj, model, y, u, zhat0, spec, grid)
        if riccati_map == "integral":
            p_next = integral_riccati_oracle(
                zhat, model, spec, alpha, grid, norm_cap=norm_cap
            )
        elif riccati_map == "differential":
            a_d = lambda k, t: (model.drift + alpha * np.eye(n)
                                + model.df_drift(zhat.states[k], t))
            p_next = dre_propagate(a_d, model.output, spec, grid, alpha=alpha,
                                   norm_cap=norm_cap)
        else:
            raise ValueError(f"unknown riccati_map {riccati_map!r}")
        distances.append(p_traj.sup_distance(p_next))
        sup_norms.append(float(max(np.linalg.norm(m, 2) for m in p_next.p)))
        p_traj = p_next
        if distances[-1] <= tol:
            return PicardResult(p_traj, zhat, distances, sup_norms, it - 1)
    raise FixedPointError(
        f"Picard iteration did not reach {tol:.1e} in {max_iter} iterations",
        distances,
    )
