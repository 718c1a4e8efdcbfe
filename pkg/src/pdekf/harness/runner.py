"""Execute one configured experiment: truth + one observer per order.

Each order writes a CSV (t, l2_error, output_error_1..p, gain_norm, p_trace);
figures are rendered next to the CSVs, and a manifest sufficient to reproduce
the run byte-identically is written last. Divergence of an individual
observer keeps the partial series and marks the experiment failed.
"""

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..analysis import error_series
from ..ekf import ObserverConfig, run_ekf
from ..evolution import DivergenceError, TimeGrid, evolve_mild
from ..galerkin import Mesh
from ..riccati import NoiseSpec, PSDLossError, RiccatiDivergenceError
from ..systems import (DisturbanceSpec, build_linear_heat,
                       build_magnetic_augmented, build_magnetic_simplified,
                       build_semilinear_heat_1d, disturbance_stream,
                       input_signal_it, input_signal_ut, load_qc_file)
from .config import ConfigError, serialize_config
from .plotting import render_run_figures

#: covariance guard for the reference experiment; the shift alpha legitimately
#: grows P like exp(2*alpha*t) in output-orthogonal directions.
P_NORM_CAP = 1e16
#: covariance snapshots kept per run (full history when the grid is shorter)
P_STORE_MAX = 2001
#: orders with more nodes than this store strided covariance snapshots
P_FULL_STORE_LIMIT = 150


@dataclass
class OrderRun:
    order: int
    csv_path: Path
    rows: int
    failure: str = None
    run: object = None
    series: object = None

    @property
    def ok(self):
        return self.failure is None


@dataclass
class ExperimentResult:
    run_dir: Path
    config: object
    orders: list
    figure_paths: list
    manifest_path: Path

    @property
    def ok(self):
        return all(o.ok for o in self.orders)


def _mesh_for(model_name, order, half_width):
    dim = 1 if model_name in ("linear_heat", "semilinear_heat_1d") else 2
    return Mesh(dim, order - 1, half_width)


def build_model(cfg, order, qc=None):
    """Instantiate the configured model at the given order (nodes per axis)."""
    if cfg.model == "magnetic_simplified":
        mesh = _mesh_for(cfg.model, order, 0.01)
        return build_magnetic_simplified(mesh, qc=qc, normalized_output=True)
    if cfg.model == "magnetic_augmented":
        mesh = _mesh_for(cfg.model, order, 0.01)
        return build_magnetic_augmented(mesh, qc=qc, normalized_output=True)
    if cfg.model == "linear_heat":
        return build_linear_heat(_mesh_for(cfg.model, order, 0.5), 0.05)
    if cfg.model == "semilinear_heat_1d":
        return build_semilinear_heat_1d(_mesh_for(cfg.model, order, 0.5), 0.05, 1.0)
    raise ConfigError(f"unknown model {cfg.model!r}")


def _input_signal(cfg):
    if cfg.model == "magnetic_simplified":
        return input_signal_it
    if cfg.model == "magnetic_augmented":
        return input_signal_ut
    return None


def _truth_z0(model):
    z0 = np.zeros(model.order)
    z0[:model.mesh.node_count] = 1.0
    return z0


def csv_columns(n_outputs):
    """Column schema of the per-order CSVs, in file order."""
    return (["t", "l2_error"]
            + [f"output_error_{j + 1}" for j in range(n_outputs)]
            + ["gain_norm", "p_trace"])


def _write_csv(path, times, series, run):
    p = run.y.shape[1]
    header = csv_columns(p)
    out_err = run.y - run.predicted
    cols = [times, series.l2_error] + [out_err[:, j] for j in range(p)] \
        + [run.gain_norms, run.p_trace]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(times)):
            fh.write(",".join(f"{c[i]:.17g}" for c in cols) + "\n")


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_experiment(cfg, output_dir=None, seed=None):
    """Run the configured experiment; returns an ExperimentResult.

    One truth simulation; every observer order consumes the same measured
    output stream. CSVs and figures land in a run directory named after the
    config; the manifest (itself a valid config, provenance in comments) is
    written last.
    """
    cfg = cfg.validate()
    if seed is not None:
        cfg = replace(cfg, seed=int(seed)).validate()
    base = Path(output_dir if output_dir is not None else cfg.output_dir)
    tag = "dist" if cfg.disturbance else "clean"
    run_dir = base / f"{cfg.model}_{tag}_seed{cfg.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)

    grid = TimeGrid(0.0, cfg.t_f, cfg.steps)
    truth_model = build_model(cfg, cfg.truth_order)
    qc_truth = None
    if cfg.qc_file:
        qc_truth = load_qc_file(cfg.qc_file, truth_model.mesh)
        truth_model = build_model(cfg, cfg.truth_order, qc=qc_truth)
    signal = _input_signal(cfg)
    u = (np.array([signal(t) for t in grid.times()])
         if signal is not None else None)

    disturbances = None
    if cfg.disturbance:
        q = truth_model.disturbance_map.shape[1]
        spec_d = DisturbanceSpec(
            process_cov=cfg.omega_cov * np.eye(q),
            output_cov=np.diag(cfg.eta_cov),
            hold_steps=1,
            seed=cfg.seed,
        )
        disturbances = disturbance_stream(spec_d, grid)

    truth = evolve_mild(
        truth_model, _truth_z0(truth_model), u,
        disturbances[0] if disturbances else None, grid,
    )

    orders = []
    for order in cfg.observer_orders:
        obs_model = build_model(cfg, order)
        if cfg.qc_file:
            obs_model = build_model(
                cfg, order, qc=load_qc_file(cfg.qc_file, obs_model.mesh)
            )
        n = obs_model.order
        spec = NoiseSpec(
            p0=cfg.p0_scale * np.eye(n),
            w=cfg.w_scale * np.eye(n),
            r=cfg.r_scale * np.eye(obs_model.output.shape[0]),
        )
        ocfg = ObserverConfig(alpha=cfg.alpha, spec=spec,
                              observer_mesh=obs_model.mesh,
                              initial_estimate=np.zeros(n))
        store_max = P_STORE_MAX if n <= P_FULL_STORE_LIMIT else 129
        failure = None
        try:
            run = run_ekf(truth_model, obs_model, ocfg, u, disturbances, grid,
                          truth=truth, norm_cap=P_NORM_CAP,
                          p_store_max=store_max)
        except (DivergenceError, PSDLossError, RiccatiDivergenceError) as exc:
            failure = f"{type(exc).__name__}: {exc}"
            run = getattr(exc, "partial_run", None)
        csv_path = run_dir / f"order_{order:02d}.csv"
        rows = 0
        series = None
        if run is not None:
            n_mesh = truth_model.mesh.node_count
            series = error_series(run, truth_model.mass[:n_mesh, :n_mesh])
            _write_csv(csv_path, run.grid.times(), series, run)
            rows = run.grid.steps + 1
        orders.append(OrderRun(order=order, csv_path=csv_path, rows=rows,
                               failure=failure, run=run, series=series))

    csvs = [o.csv_path for o in orders if o.rows]
    figures = render_run_figures(csvs, run_dir) if csvs else []

    manifest_path = run_dir / "manifest.txt"
    lines = [
        "# run manifest: re-running this file as a config reproduces the run",
        serialize_config(cfg).rstrip(),
        "",
        "# [provenance]",
        f"# package_version = {__version__}",
    ]
    for o in orders:
        status = "ok" if o.ok else f"FAILED ({o.failure})"
        lines.append(f"# order {o.order}: {status}, rows = {o.rows}")
        if o.rows:
            lines.append(f"# sha256 {o.csv_path.name} = {_sha256(o.csv_path)}")
    for fig in figures:
        lines.append(f"# sha256 {Path(fig).name} = {_sha256(fig)}")
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    return ExperimentResult(run_dir=run_dir, config=cfg, orders=orders,
                            figure_paths=figures, manifest_path=manifest_path)
