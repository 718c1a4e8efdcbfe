"""Dense symmetric linear algebra and the seeded random stream used everywhere else."""

import numpy as np
import scipy.linalg as sla


class PSDError(ValueError):
    """Raised when a matrix required to be (semi)definite fails the check."""


class ShapeError(ValueError):
    """Raised on inconsistent matrix/vector dimensions."""


def symmetrize(p):
    """Return (p + p^T)/2, the exactly symmetric part of a square matrix."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ShapeError(f"symmetrize needs a square matrix, got shape {p.shape}")
    return (p + p.T) / 2.0


def solve_spd(m, b):
    """Solve m @ x = b for symmetric positive definite m.

    Cholesky factorization followed by one iterative-refinement step with the
    residual accumulated in extended precision. Raises PSDError naming the
    failing pivot if m is not positive definite.
    """
    m = np.asarray(m, dtype=float)
    b = np.asarray(b, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"solve_spd needs a square matrix, got shape {m.shape}")
    if b.shape[0] != m.shape[0]:
        raise ShapeError(f"rhs length {b.shape[0]} does not match order {m.shape[0]}")
    try:
        factor = sla.cho_factor(m, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise PSDError(f"matrix is not positive definite: {exc}") from exc
    x = sla.cho_solve(factor, b, check_finite=False)
    # One refinement sweep: residual in longdouble so x reaches the double-precision floor.
    resid = b.astype(np.longdouble) - m.astype(np.longdouble) @ x.astype(np.longdouble)
    x = x + sla.cho_solve(factor, np.asarray(resid, dtype=float), check_finite=False)
    return x


def cholesky_spd(m):
    """Lower Cholesky factor of an SPD matrix; PSDError on failure."""
    m = np.asarray(m, dtype=float)
    try:
        return sla.cholesky(m, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise PSDError(f"matrix is not positive definite: {exc}") from exc


def min_eigenvalue(s):
    """Smallest eigenvalue of a symmetric matrix."""
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"min_eigenvalue needs a square matrix, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("min_eigenvalue: matrix has non-finite entries")
    return float(sla.eigvalsh(s, check_finite=False)[0])


def is_psd(s, rel_tol=0.0):
    """Cheap PSD test: Cholesky first, eigenvalue fallback near the boundary."""
    s = np.asarray(s, dtype=float)
    try:
        sla.cholesky(s, lower=True, check_finite=False)
        return True
    except np.linalg.LinAlgError:
        pass
    floor = -rel_tol * max(np.linalg.norm(s, 2), 1e-300)
    return min_eigenvalue(s) >= floor


def psd_factor(cov, rel_clip=1e-12):
    """Symmetric factor S with S @ S.T = cov, for PSD cov up to roundoff.

    Eigenvalues in [-rel_clip*||cov||, 0] are clipped to zero; anything below
    that raises PSDError.
    """
    cov = np.asarray(cov, dtype=float)
    w, v = sla.eigh(symmetrize(cov), check_finite=False)
    scale = max(abs(w[-1]), abs(w[0]), 1e-300)
    if w[0] < -rel_clip * scale:
        raise PSDError(
            f"covariance min eigenvalue {w[0]:.3e} below -{rel_clip:.0e}*||cov||"
        )
    return v * np.sqrt(np.clip(w, 0.0, None))


class RngStream:
    """Counter-based random stream with splittable substreams.

    Built on the Philox bit generator, so draws are reproducible across
    platforms for a given (seed, path). A stream is single-owner: draws
    advance its state, substreams are independent of the parent's position.
    """

    def __init__(self, seed, path=()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def substream(self, *labels):
        """Independent child stream for the given integer labels."""
        return RngStream(self.seed, self.path + tuple(int(x) for x in labels))

    def standard_normal(self, size):
        return self._gen.standard_normal(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"


def gaussian_vector(rng, cov):
    """One zero-mean draw with covariance cov (column shape (n,)).

    cov may be an (n, n) PSD matrix or a scalar variance. Advances rng.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    factor = psd_factor(cov)
    z = rng.standard_normal(cov.shape[0])
    return factor @ z
