"""Reference NumPy implementations of the batch filter/smoother passes.

These define the semantics; `_kernels` is a compiled mirror used when the
extension built. Both take the observation matrices pre-assembled as a
(K, n, m) array so the same passes serve the stacked-state model and the
transformed (eigenresource) model.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NearSingularF

COND_LIMIT = 1e12
_LOG_2PI = math.log(2.0 * math.pi)


def _sym(M):
    return 0.5 * (M + M.T)


def _check_F(F: np.ndarray, k: int) -> None:
    w = np.linalg.eigvalsh(F)
    if w[0] <= 0.0 or w[-1] > COND_LIMIT * w[0]:
        raise NearSingularF(
            f"observation predictive covariance near singular at step {k} "
            f"(eigenvalues {w[0]:.3e} .. {w[-1]:.3e})")


def filter_pass(A, c, W, Wy, a0, S0, Cs, Y):
    """Forward pass for x' = c + A x + w, y = C x + v.

    Parameters are the transition matrix/offset/noise, observation noise,
    the prior predictive (a0, S0) for the first step, per-step observation
    matrices Cs (K, n, m), and observations Y (K, n).

    Returns (xs, Ps, aps, Sps, loglik): posterior means/covariances,
    predictive means/covariances, and the prediction-error log-likelihood.
    """
    Y = np.asarray(Y, dtype=float)
    K, n = Y.shape
    m = A.shape[0]
    xs = np.empty((K, m))
    Ps = np.empty((K, m, m))
    aps = np.empty((K, m))
    Sps = np.empty((K, m, m))
    Im = np.eye(m)
    a = np.asarray(a0, dtype=float).copy()
    S = _sym(np.asarray(S0, dtype=float))
    ll = 0.0
    for k in range(K):
        aps[k] = a
        Sps[k] = S
        C = Cs[k]
        f = C @ a
        F = _sym(C @ S @ C.T + Wy)
        _check_F(F, k)
        CS = C @ S
        Kg = np.linalg.solve(F, CS).T
        innov = Y[k] - f
        x = a + Kg @ innov
        IKC = Im - Kg @ C
        # Joseph form keeps the posterior covariance PSD under roundoff
        P = _sym(IKC @ S @ IKC.T + Kg @ Wy @ Kg.T)
        sign, logdet = np.linalg.slogdet(F)
        ll += -0.5 * (n * _LOG_2PI + logdet + innov @ np.linalg.solve(F, innov))
        xs[k] = x
        Ps[k] = P
        a = c + A @ x
        S = _sym(A @ P @ A.T + W)
    return xs, Ps, aps, Sps, ll


def smoother_pass(A, xs, Ps, aps, Sps):
    """Backward recursion over a completed forward pass.

    Returns smoothed means/covariances and the lag-one posterior
    cross-covariances lag[k] = Cov(x_{k+1}, x_k | all data).
    """
    K, m = xs.shape
    ms = xs.copy()
    Vs = Ps.copy()
    lag = np.zeros((max(K - 1, 0), m, m))
    for k in range(K - 2, -1, -1):
        Spred = Sps[k + 1]
        AP = A @ Ps[k]
        try:
            J = np.linalg.solve(Spred, AP).T
        except np.linalg.LinAlgError:
            J = Ps[k] @ A.T @ np.linalg.pinv(Spred)
        ms[k] = xs[k] + J @ (ms[k + 1] - aps[k + 1])
        Vs[k] = _sym(Ps[k] + J @ (Vs[k + 1] - Spred) @ J.T)
        lag[k] = Vs[k + 1] @ J.T
    return ms, Vs, lag
