"""Ensemble statistics and regularized SPD solves used by the update step."""

from __future__ import annotations

import numpy as np
import scipy.linalg

# Jitter escalation: ensemble covariances are rank-deficient whenever the
# ensemble is smaller than the data vector, so a plain Cholesky may fail.
JITTER_BASE_SCALE = 1e-10
JITTER_GROWTH = 10.0
JITTER_MAX_ATTEMPTS = 8


def ensemble_mean(samples: np.ndarray) -> np.ndarray:
    """Arithmetic mean over the ensemble axis.

    Parameters
    ----------
    samples : (n_ens, p) array
        One row per ensemble member.

    Returns
    -------
    (p,) array
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 1:
        raise ValueError("empty ensemble")
    return samples.mean(axis=0)


def cross_covariance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sample cross-covariance between two ensembles (unbiased, n_ens - 1).

    ``cross_covariance(a, a)`` is the sample covariance of ``a``.

    Parameters
    ----------
    a : (n_ens, p) array
    b : (n_ens, q) array

    Returns
    -------
    (p, q) array
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError("ensembles must be 2-d with a common member count")
    n_ens = a.shape[0]
    if n_ens < 2:
        raise ValueError("covariance undefined")
    da = a - a.mean(axis=0)
    db = b - b.mean(axis=0)
    return da.T @ db / (n_ens - 1)


def spd_solve(s: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve ``s @ x = r`` for symmetric positive (semi-)definite ``s``.

    Factorization failures are retried with escalating diagonal jitter
    (base ``1e-10 * mean(diag(s))``, growing tenfold, at most 8 attempts).

    Returns
    -------
    (x, jitter) : the solution and the jitter actually added (0.0 if none).
    """
    s = np.asarray(s, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(s, s.T, rtol=1e-8, atol=1e-8 * max(1.0, np.abs(s).max(initial=0.0))):
        raise ValueError("matrix must be symmetric")

    jitter = 0.0
    base = JITTER_BASE_SCALE * np.mean(np.diag(s))
    eye = np.eye(s.shape[0])
    for attempt in range(1 + JITTER_MAX_ATTEMPTS):
        try:
            factor = scipy.linalg.cho_factor(s + jitter * eye, lower=True)
            x = scipy.linalg.cho_solve(factor, r)
            if not np.all(np.isfinite(x)):
                raise scipy.linalg.LinAlgError("non-finite solution")
            return x, jitter
        except scipy.linalg.LinAlgError:
            jitter = base * JITTER_GROWTH**attempt
    raise RuntimeError("singular system")
