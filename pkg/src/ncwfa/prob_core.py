"""Log-domain probability kernels: log-sum-exp, softmax, Gaussian and
Gaussian-mixture log densities.

Everything here works in the log domain.  Products of hundreds of per-step
densities underflow in linear space, so sequence likelihoods are always
accumulated as sums of these log values.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

LOG_2PI = float(np.log(2.0 * np.pi))

# Variances are floored here; the exp parameterization of trainable variance
# heads can underflow during optimization and produce degenerate spikes.
VARIANCE_FLOOR = 1e-6


def log_sum_exp(v) -> float:
    """log(sum(exp(v))) via max subtraction; -inf for all-(-inf) input."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = np.max(v)
    if not np.isfinite(m):
        if m == -np.inf:
            return -np.inf
        return float(m)  # +inf / nan propagate
    return float(m + np.log(np.sum(np.exp(v - m))))


def softmax(v) -> np.ndarray:
    """Shift-invariant softmax; output is positive and sums to one."""
    v = np.asarray(v, dtype=float)
    e = np.exp(v - np.max(v))
    return e / e.sum()


def logsumexp_arr(x, axis=-1, keepdims=False) -> np.ndarray:
    """Array log-sum-exp along an axis, tolerant of all-(-inf) slices.

    Training and inference both route through this one implementation so the
    two paths agree bit for bit.
    """
    x = np.asarray(x, dtype=float)
    m = np.max(x, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(x - m_safe), axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.where(np.isfinite(m), m_safe + np.log(s), m)
    return out if keepdims else np.squeeze(out, axis=axis)


@dataclass(frozen=True)
class DiagGaussian:
    """Gaussian with diagonal covariance, stored as a variance vector."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.var, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)
        if mean.shape != var.shape:
            raise ValueError("mean and var must have the same shape")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise ValueError("non-finite Gaussian parameters")
        if np.any(var < VARIANCE_FLOOR):
            raise ValueError(f"variances must be >= {VARIANCE_FLOOR}")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class FullGaussian:
    """Gaussian with full covariance; the Cholesky factor is computed once."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError("covariance shape does not match mean")
        if np.max(np.abs(cov - cov.T)) > 1e-10:
            raise ValueError("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        object.__setattr__(self, "chol", chol)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def log_density_diag(x, g: DiagGaussian) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != g.mean.shape:
        raise ValueError(f"point has shape {x.shape}, Gaussian has dim {g.dim}")
    z = x - g.mean
    return float(-0.5 * np.sum(LOG_2PI + np.log(g.var) + z * z / g.var))


def log_density_full(x, g: FullGaussian) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != g.mean.shape:
        raise ValueError(f"point has shape {x.shape}, Gaussian has dim {g.dim}")
    # -(1/2) [d log 2pi + log det(cov) + z' inv(cov) z] via one triangular solve
    y = solve_triangular(g.chol, x - g.mean, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(g.chol)))
    return float(-0.5 * (g.dim * LOG_2PI + log_det + y @ y))


def log_density(x, g) -> float:
    if isinstance(g, DiagGaussian):
        return log_density_diag(x, g)
    return log_density_full(x, g)


@dataclass(frozen=True)
class MixtureParams:
    """Finite Gaussian mixture; weights are stored in the log domain."""

    log_weights: np.ndarray
    components: tuple

    def __post_init__(self):
        lw = np.atleast_1d(np.asarray(self.log_weights, dtype=float))
        comps = tuple(self.components)
        object.__setattr__(self, "log_weights", lw)
        object.__setattr__(self, "components", comps)
        if lw.shape[0] != len(comps):
            raise ValueError("one log weight per component required")
        if abs(np.exp(lw).sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to one")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise ValueError("components must share a dimension")

    @classmethod
    def from_weights(cls, weights, components):
        weights = np.asarray(weights, dtype=float)
        with np.errstate(divide="ignore"):
            return cls(np.log(weights), tuple(components))


def log_mixture_density(x, mix: MixtureParams) -> float:
    terms = [lw + log_density(x, c) for lw, c in zip(mix.log_weights, mix.components)]
    return log_sum_exp(np.array(terms))


def components_log_liks(components, X) -> np.ndarray:
    """Log densities of every component at every point.

    X has shape (..., d); the result has shape (..., len(components)).
    """
    components = tuple(components)
    X = np.asarray(X, dtype=float)
    d = components[0].dim
    if X.shape[-1] != d:
        raise ValueError(f"points have dimension {X.shape[-1]}, components have {d}")
    flat = X.reshape(-1, d)
    out = np.empty((flat.shape[0], len(components)))
    for s, g in enumerate(components):
        z = flat - g.mean
        if isinstance(g, DiagGaussian):
            out[:, s] = -0.5 * (
                d * LOG_2PI + np.log(g.var).sum() + np.sum(z * z / g.var, axis=1)
            )
        else:
            y = solve_triangular(g.chol, z.T, lower=True)
            log_det = 2.0 * np.sum(np.log(np.diag(g.chol)))
            out[:, s] = -0.5 * (d * LOG_2PI + log_det + np.sum(y * y, axis=0))
    return out.reshape(X.shape[:-1] + (len(components),))
