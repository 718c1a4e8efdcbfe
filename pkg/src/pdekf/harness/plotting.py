"""Render run CSVs to SVG figures with byte-deterministic output."""

import csv
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

#: rc overrides that make repeated renders byte-identical
_DETERMINISTIC_RC = {"svg.hashsalt": "pdekf", "svg.fonttype": "path"}


class PlotError(ValueError):
    """Raised when the CSVs cannot be plotted together."""


def read_csv(path):
    """Load a run CSV as {column: array}."""
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise PlotError(f"{path}: malformed CSV")
    return {name: data[:, j] for j, name in enumerate(header)}


def _output_error_norm(table):
    cols = sorted(k for k in table if k.startswith("output_error_"))
    if not cols:
        raise PlotError("CSV has no output_error columns")
    return np.sqrt(sum(table[c] ** 2 for c in cols))


def emit_plot(csv_paths, out_path, value="l2_error", logy=True, title=None):
    """One labeled curve per CSV; grids must agree. Returns the output path."""
    if not csv_paths:
        raise PlotError("no CSV files given")
    tables = [(Path(p), read_csv(p)) for p in csv_paths]
    t0 = tables[0][1]["t"]
    for p, tab in tables[1:]:
        if tab["t"].shape != t0.shape or not np.allclose(tab["t"], t0):
            raise PlotError(f"{p}: time grid differs from {tables[0][0]}")

    with plt.rc_context(_DETERMINISTIC_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        for p, tab in tables:
            if value == "output_error":
                series = _output_error_norm(tab)
            elif value in tab:
                series = tab[value]
            else:
                raise PlotError(f"{p}: no column {value!r}")
            ax.plot(tab["t"], series, label=p.stem)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel("time [s]")
        ax.set_ylabel(value.replace("_", " "))
        if title:
            ax.set_title(title)
        ax.legend(loc="best")
        ax.grid(True, which="both", alpha=0.3)
        fig.tight_layout()
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return Path(out_path)


def render_run_figures(csv_paths, run_dir):
    """Standard per-run figures next to the CSVs: state- and output-error norms.

    Partial (diverged) runs can leave CSVs on different grids; those fall back
    to one figure per CSV instead of the combined plot.
    """
    run_dir = Path(run_dir)
    jobs = [("l2_error", "state estimation error (mass norm)"),
            ("output_error", "output prediction error (Euclidean norm)")]
    figures = []
    for value, title in jobs:
        try:
            figures.append(emit_plot(csv_paths, run_dir / f"{value}.svg",
                                     value=value, title=title))
        except PlotError:
            for p in csv_paths:
                p = Path(p)
                figures.append(emit_plot([p], run_dir / f"{value}_{p.stem}.svg",
                                         value=value, title=title))
    return figures
