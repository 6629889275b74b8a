"""Seeded sampling, least squares and regression metrics.

Latent vectors are plain float64 numpy arrays: a single vector is 1-D of
length d, a batch is 2-D with shape (n, d).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegenerateInputError, InvalidArgument, SingularSystemError

# diag(L) ratio below this means cond(X^T X) > ~1e14
_CHOL_RANK_TOL = 1e-7


def rng_for(seed: int) -> np.random.Generator:
    """PCG64 generator for a 64-bit seed."""
    return np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)


def sample_gaussian_latents(n: int, d: int, seed: int) -> np.ndarray:
    if n < 1 or d < 1:
        raise InvalidArgument(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    return rng_for(seed).standard_normal((n, d))


def as_batch(latents, d: int | None = None) -> np.ndarray:
    """Coerce a vector or sequence of vectors into a finite (n, d) float64 array."""
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or z.shape[0] == 0:
        raise InvalidArgument(f"expected a non-empty batch of latent vectors, got shape {z.shape}")
    if d is not None and z.shape[1] != d:
        raise InvalidArgument(f"latent dimension {z.shape[1]} does not match expected d={d}")
    if not np.all(np.isfinite(z)):
        raise InvalidArgument("latent vectors contain NaN or Inf")
    return z


@dataclass(frozen=True)
class RegressionFit:
    slopes: np.ndarray
    intercept: float
    r_squared: float


def ols_fit(X, y) -> RegressionFit:
    """Least squares with an intercept via Cholesky on the normal equations.

    One step of iterative refinement is applied to the solution, which
    recovers most of the accuracy lost by squaring the condition number.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2:
        raise InvalidArgument(f"X must be 2-D, got shape {X.shape}")
    n, d = X.shape
    if y.shape[0] != n:
        raise InvalidArgument(f"X has {n} rows but y has {y.shape[0]} entries")
    if n <= d + 1:
        raise InvalidArgument(f"need n > d + 1 samples, got n={n}, d={d}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvalidArgument("non-finite values in regression inputs")

    A = np.hstack([X, np.ones((n, 1))])
    G = A.T @ A
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("normal matrix is not positive definite (rank-deficient design)") from exc
    diag = np.abs(np.diag(L))
    if diag.min() <= _CHOL_RANK_TOL * diag.max():
        raise SingularSystemError(
            f"normal matrix is numerically rank-deficient (diag ratio {diag.min() / diag.max():.3e})"
        )

    def solve(rhs):
        w = solve_triangular(L, rhs, lower=True)
        return solve_triangular(L.T, w, lower=False)

    coef = solve(A.T @ y)
    coef = coef + solve(A.T @ (y - A @ coef))

    resid = y - A @ coef
    ss_res = float(resid @ resid)
    centered = y - y.mean()
    ss_tot = float(centered @ centered)
    # constant y is fit exactly by the intercept alone
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RegressionFit(slopes=coef[:d].copy(), intercept=float(coef[d]), r_squared=r_squared)


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise InvalidArgument(f"shape mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise InvalidArgument("metrics need at least one value")
    return y, yhat


def mse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    diff = (y - yhat).ravel()
    return float(diff @ diff / diff.size)


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def r2(y, yhat) -> float:
    """Coefficient of determination.

    For 2-D inputs (one row per sample) the total sum of squares is taken
    around the per-column means and pooled over columns, so predicting the
    column-mean vector scores exactly 0.
    """
    y, yhat = _pair(y, yhat)
    if y.ndim == 2:
        centered = y - y.mean(axis=0)
    else:
        centered = y - y.mean()
    ss_tot = float(np.sum(centered * centered))
    if ss_tot == 0.0:
        raise DegenerateInputError("r2 is undefined for targets with zero variance")
    diff = y - yhat
    ss_res = float(np.sum(diff * diff))
    return 1.0 - ss_res / ss_tot


def finite_diff_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if not h > 0:
        raise InvalidArgument(f"step h must be positive, got {h}")
    x = np.array(x, dtype=np.float64).ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        f_plus = f(x.copy())
        x[i] = orig - h
        f_minus = f(x.copy())
        x[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad
