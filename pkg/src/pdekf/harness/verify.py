"""Verification battery: named checks with measured values and tolerances.

Each check returns a CheckResult; suites group them for the CLI. These are
the same oracle constructions the test suite pins down, packaged for a quick
release-gate run.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..analysis import detectability_probe, estimate_remainder_exponent
from ..ekf import ObserverConfig, run_ekf, run_kf
from ..evolution import TimeGrid, Trajectory, evolution_table, shift_table
from ..galerkin import Mesh
from ..numerics import RngStream, solve_spd
from ..riccati import NoiseSpec, dre_propagate, integral_riccati_oracle
from ..systems import (build_linear_heat, build_magnetic_simplified,
                       build_semilinear_heat_1d, to_orthonormal)


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}  {self.name}: measured {self.value:.6g} "
                f"(tolerance {self.tolerance:.3g}) {self.detail}".rstrip())


def check_spd_residual():
    rng = np.random.default_rng(12)
    a = rng.standard_normal((5, 5))
    m = a @ a.T + 0.5 * np.eye(5)
    b = rng.standard_normal(5)
    resid = np.linalg.norm(m @ solve_spd(m, b) - b) / np.linalg.norm(b)
    return CheckResult("solve_spd residual (random 5x5 SPD)", resid, 1e-10,
                       resid <= 1e-10)


def check_rng_reproducibility():
    draws = [RngStream(2024).substream(3).standard_normal(8) for _ in range(2)]
    diff = float(np.max(np.abs(draws[0] - draws[1])))
    return CheckResult("rng substream reproducibility", diff, 0.0, diff == 0.0)


def _scalar_spec(p0, w, r):
    return NoiseSpec(p0=np.array([[p0]]), w=np.array([[w]]), r=np.array([[r]]))


def check_scalar_tanh():
    grid = TimeGrid(0.0, 2.0, 20000)
    traj = dre_propagate(np.zeros((1, 1)), np.ones((1, 1)),
                         _scalar_spec(0.0, 1.0, 1.0), grid)
    err = abs(traj.final()[0, 0] - math.tanh(2.0))
    return CheckResult("scalar Riccati vs tanh(t) at t=2, dt=1e-4", err, 1e-3,
                       err <= 1e-3)


def check_scalar_lyapunov():
    a, w, p0 = -1.0, 0.7, 0.5
    grid = TimeGrid(0.0, 1.0, 10000)
    traj = dre_propagate(np.array([[a]]), np.zeros((1, 1)),
                         _scalar_spec(p0, w, 1.0), grid)
    exact = math.exp(2 * a) * p0 + w * (math.exp(2 * a) - 1.0) / (2 * a)
    err = abs(traj.final()[0, 0] - exact)
    return CheckResult("scalar Lyapunov closed form (C=0), dt=1e-4", err, 1e-6,
                       err <= 1e-6)


def _cross_solver_instance():
    rng = np.random.default_rng(42)
    n = 3
    a = rng.standard_normal((n, n))
    a = a - (np.max(np.linalg.eigvals(a).real) + 0.5) * np.eye(n)
    c = rng.standard_normal((2, n))
    spec = NoiseSpec(p0=0.3 * np.eye(n), w=0.5 * np.eye(n), r=2.0 * np.eye(2))
    return a, c, spec


class _MatrixModel:
    """Bare drift-space linear model for the oracle constructions."""

    def __init__(self, a, c):
        self.order = a.shape[0]
        self.drift = a
        self.drift_load = a
        self.mass = np.eye(self.order)
        self.output = c
        self.input_map = np.zeros((self.order, 0))

    def df_drift(self, z, t):
        return np.zeros((self.order, self.order))

    def f_load(self, z, t):
        return np.zeros(self.order)


def _cross_solver_gap(steps):
    a, c, spec = _cross_solver_instance()
    grid = TimeGrid(0.0, 1.0, steps)
    direct = dre_propagate(a, c, spec, grid)
    zhat = Trajectory(grid, np.zeros((steps + 1, a.shape[0])))
    oracle = integral_riccati_oracle(zhat, _MatrixModel(a, c), spec, 0.0, grid)
    num = max(np.linalg.norm(x - y, 2) for x, y in zip(direct.p, oracle.p))
    den = max(np.linalg.norm(x, 2) for x in direct.p)
    return num / den


def check_cross_solver_gap():
    gap = _cross_solver_gap(10000)
    return CheckResult("DRE vs integral oracle, n=3, dt=1e-4 (relative sup gap)",
                       gap, 1e-3, gap <= 1e-3)


def check_cross_solver_halving():
    ratio = _cross_solver_gap(10000) / _cross_solver_gap(20000)
    ok = 1.4 <= ratio <= 2.6
    return CheckResult("cross-solver gap halving ratio (expect ~2)", ratio, 2.6,
                       ok, detail="window [1.4, 2.6]")


def check_shift_identity():
    rng = np.random.default_rng(5)
    n = 3
    a = 0.05 * rng.standard_normal((n, n)) - 0.1 * np.eye(n)
    beta = 0.02
    grid = TimeGrid(0.0, 0.02, 200)  # dt = 1e-4
    base = evolution_table(a, None, grid)
    shifted = shift_table(base, beta)
    rebuilt = evolution_table(a + beta * np.eye(n), None, grid)
    dev = 0.0
    for j in (0, grid.steps // 2):
        u1 = np.eye(n)
        u2 = np.eye(n)
        for k in range(j, grid.steps):
            u1 = shifted.step_matrices[k] @ u1
            u2 = rebuilt.step_matrices[k] @ u2
            dev = max(dev, float(np.max(np.abs(u1 - u2))))
    return CheckResult("shift identity vs direct rebuild (max entry dev)",
                       dev, 1e-8, dev <= 1e-8)


def check_kf_equivalence():
    rng = np.random.default_rng(11)
    mesh = Mesh(1, 16, 0.5)  # 17 nodes
    model = build_linear_heat(mesh, 0.05)
    n = model.order
    m0 = rng.standard_normal((n, n))
    p0 = m0 @ m0.T + 0.1 * np.eye(n)
    mw = rng.standard_normal((n, n))
    w = mw @ mw.T + 0.05 * np.eye(n)
    r = np.array([[0.5]])
    spec = NoiseSpec(p0=p0, w=w, r=r)
    grid = TimeGrid(0.0, 0.5, 500)
    z0 = 1.0 + np.cos(np.pi * np.linspace(0, 1, n))
    cfg = ObserverConfig(alpha=0.5, spec=spec, initial_estimate=np.zeros(n))
    ekf = run_ekf(model, model, cfg, None, None, grid, truth_z0=z0)
    kf = run_kf(model, cfg, None, None, grid, truth_z0=z0)
    num = np.max(np.abs(ekf.estimate.states - kf.estimate.states))
    den = np.max(np.abs(kf.estimate.states))
    rel = num / den
    return CheckResult("EKF equals KF on the linear heat model (sup rel)",
                       rel, 1e-8, rel <= 1e-8)


def check_remainder_exponent():
    mesh = Mesh(1, 16, 0.5)
    model = build_semilinear_heat_1d(mesh, 0.05, 1.0)
    rng = np.random.default_rng(3)
    z = 1.0 + 0.2 * rng.standard_normal(model.order)
    dirs = [rng.standard_normal(model.order) for _ in range(4)]
    radii = np.logspace(-1, -3, 9)
    probe = estimate_remainder_exponent(
        lambda v: model.f_drift(v, 0.0),
        lambda v: model.df_drift(v, 0.0),
        z, dirs, radii,
    )
    ok = 1.95 <= probe.exponent <= 2.05 and not probe.degenerate
    return CheckResult("Taylor-remainder exponent of the quadratic sink",
                       probe.exponent, 2.05, ok, detail="window [1.95, 2.05]")


def check_df_consistency():
    from .runner import build_model
    from .config import ExperimentConfig

    worst = 0.0
    rng = np.random.default_rng(17)
    for model_name, order in (("linear_heat", 9), ("semilinear_heat_1d", 9),
                              ("magnetic_simplified", 5),
                              ("magnetic_augmented", 4)):
        cfg = ExperimentConfig(model=model_name, truth_order=order,
                               observer_orders=(order,))
        model = build_model(cfg, order)
        for _ in range(5):
            z = 0.5 + 0.3 * rng.standard_normal(model.order)
            e = rng.standard_normal(model.order)
            e /= np.linalg.norm(e)
            h = 1e-5
            fd = (model.f_drift(z + h * e, 0.0) - model.f_drift(z, 0.0)) / h
            resid = np.linalg.norm(fd - model.df_drift(z, 0.0) @ e)
            scale = max(np.linalg.norm(model.df_drift(z, 0.0) @ e),
                        np.linalg.norm(model.f_drift(z, 0.0)), 1e-9)
            worst = max(worst, resid / scale)
    return CheckResult("Frechet-derivative finite-difference consistency",
                       worst, 1e-3, worst <= 1e-3,
                       detail="relative residual at h=1e-5")


def check_detectability_probe():
    mesh = Mesh(2, 6, 0.01)  # 7x7 nodes, n = 49
    model = build_magnetic_simplified(mesh, normalized_output=True)
    mx, transform = to_orthonormal(model)
    n = mx.order
    alpha = 8.0
    x_lin = transform.to_x(np.ones(n))
    a_d = mx.drift_load + alpha * np.eye(n) + mx.df_drift(x_lin, 0.0)
    spec = NoiseSpec(p0=np.eye(n), w=np.eye(n), r=100.0 * np.eye(3))
    # Horizon 1 s: long enough for the gain to settle on the observed
    # directions, short enough that the shifted covariance growth in the
    # output-orthogonal directions stays out of the fitted window.
    grid = TimeGrid(0.0, 1.0, 1000)
    report = detectability_probe(a_d, mx.output, spec, alpha, grid)
    ok = np.isfinite(report.delta_y) and report.fit.rate >= 0.0
    return CheckResult("detectability probe on the linearized delivery model",
                       report.fit.rate, 0.0, ok,
                       detail=f"delta_Y = {report.delta_y:.3e}")


SUITES = {
    "numerics": [check_spd_residual, check_rng_reproducibility],
    "riccati": [check_scalar_tanh, check_scalar_lyapunov,
                check_cross_solver_gap, check_cross_solver_halving],
    "shift": [check_shift_identity],
    "kf": [check_kf_equivalence],
    "remainder": [check_remainder_exponent, check_df_consistency],
    "detectability": [check_detectability_probe],
}


def run_suite(selector="all"):
    """Run one named suite (or all); returns the list of CheckResults."""
    if selector == "all":
        checks = [c for suite in SUITES.values() for c in suite]
    elif selector in SUITES:
        checks = SUITES[selector]
    else:
        raise KeyError(
            f"unknown suite {selector!r}; choose from "
            f"{', '.join(sorted(SUITES))} or 'all'"
        )
    return [check() for check in checks]
