"""Experiment configuration: a flat key-value text format with sections.

The full schema (every key with its default) is what serialize_config emits;
an empty file yields the default reference experiment. Unknown keys are
rejected with the offending line number.
"""

from dataclasses import dataclass, replace

MODELS = ("magnetic_simplified", "magnetic_augmented", "linear_heat",
          "semilinear_heat_1d")


class ConfigError(ValueError):
    """Configuration file or value problem, with a line reference when known."""


@dataclass
class ExperimentConfig:
    model: str = "magnetic_simplified"
    truth_order: int = 35          # nodes per axis of the truth mesh
    observer_orders: tuple = (25, 18, 9, 7)
    alpha: float = 8.0
    w_scale: float = 1.0
    r_scale: float = 100.0
    p0_scale: float = 1.0
    t_f: float = 2.0
    dt: float = 1e-3
    seed: int = 0
    qc_file: str = ""
    disturbance: bool = False
    omega_cov: float = 0.1
    eta_cov: tuple = (5e-3, 5e-3, 5e-4)
    output_dir: str = "runs"

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; pick one of {MODELS}")
        if self.truth_order < 2:
            raise ConfigError("truth_order must be at least 2")
        for k in self.observer_orders:
            if not 2 <= k <= self.truth_order:
                raise ConfigError(
                    f"observer order {k} must lie in [2, truth_order={self.truth_order}]"
                )
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if not self.t_f > 0 or not self.dt > 0:
            raise ConfigError("t_f and dt must be positive")
        ratio = self.t_f / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(ratio, 1.0):
            raise ConfigError(f"dt={self.dt} does not divide t_f={self.t_f}")
        if any(s <= 0 for s in (self.w_scale, self.r_scale, self.p0_scale)):
            raise ConfigError("w_scale, r_scale and p0_scale must be positive")
        if self.omega_cov < 0 or any(v < 0 for v in self.eta_cov):
            raise ConfigError("covariances must be nonnegative")
        return self

    @property
    def steps(self):
        return int(round(self.t_f / self.dt))


# (section, key) -> (attribute, parser)
def _parse_bool(s):
    low = s.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_list(s):
    return tuple(int(tok) for tok in s.replace(",", " ").split())


def _parse_float_list(s):
    return tuple(float(tok) for tok in s.replace(",", " ").split())


_SCHEMA = {
    ("experiment", "model"): ("model", str),
    ("experiment", "truth_order"): ("truth_order", int),
    ("experiment", "observer_orders"): ("observer_orders", _parse_int_list),
    ("experiment", "alpha"): ("alpha", float),
    ("experiment", "w_scale"): ("w_scale", float),
    ("experiment", "r_scale"): ("r_scale", float),
    ("experiment", "p0_scale"): ("p0_scale", float),
    ("experiment", "t_f"): ("t_f", float),
    ("experiment", "dt"): ("dt", float),
    ("experiment", "seed"): ("seed", int),
    ("experiment", "qc_file"): ("qc_file", str),
    ("disturbance", "enabled"): ("disturbance", _parse_bool),
    ("disturbance", "omega_cov"): ("omega_cov", float),
    ("disturbance", "eta_cov"): ("eta_cov", _parse_float_list),
    ("output", "directory"): ("output_dir", str),
}


def parse_config(path):
    """Read and validate a configuration file; all defaults apply to missing keys."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    values = {}
    section = "experiment"
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in {s for s, _ in _SCHEMA}:
                raise ConfigError(f"{path}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.split("#", 1)[0].strip()
        if (section, key) not in _SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r} in [{section}]")
        attr, parser = _SCHEMA[(section, key)]
        try:
            values[attr] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc

    cfg = replace(ExperimentConfig(), **values)
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def serialize_config(cfg):
    """Render a config in the file format; parse_config round-trips it."""
    orders = ", ".join(str(k) for k in cfg.observer_orders)
    eta = ", ".join(repr(v) for v in cfg.eta_cov)
    return (
        "[experiment]\n"
        f"model = {cfg.model}\n"
        f"truth_order = {cfg.truth_order}\n"
        f"observer_orders = {orders}\n"
        f"alpha = {cfg.alpha!r}\n"
        f"w_scale = {cfg.w_scale!r}\n"
        f"r_scale = {cfg.r_scale!r}\n"
        f"p0_scale = {cfg.p0_scale!r}\n"
        f"t_f = {cfg.t_f!r}\n"
        f"dt = {cfg.dt!r}\n"
        f"seed = {cfg.seed}\n"
        f"qc_file = {cfg.qc_file}\n"
        "\n[disturbance]\n"
        f"enabled = {str(cfg.disturbance).lower()}\n"
        f"omega_cov = {cfg.omega_cov!r}\n"
        f"eta_cov = {eta}\n"
        "\n[output]\n"
        f"directory = {cfg.output_dir}\n"
    )
