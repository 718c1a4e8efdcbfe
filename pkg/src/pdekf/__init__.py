"""EKF observers for semilinear reaction-diffusion systems on finite-element grids."""

from . import analysis, ekf, evolution, galerkin, numerics, riccati, systems

__version__ = "0.1.0"

__all__ = ["analysis", "ekf", "evolution", "galerkin", "numerics", "riccati",
           "systems", "__version__"]
