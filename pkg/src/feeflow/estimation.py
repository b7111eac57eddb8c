"""EM fitting of the market model from observed (price, usage) sequences.

The E-step runs the smoother and collects first/second/lag-one moments of
the hidden state; the M-step solves the expected complete-data likelihood
in closed form for the mean-reverting parameterization (intercept
c = (I - A) mu, so mu is recovered from the fitted slope and intercept).
When the transition matrix is structurally constrained (diagonal blocks by
default) and the state noise has cross-correlations, the slope and noise
blocks are coordinate-ascended to their joint stationary point.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (MonotonicityViolation, NonStationaryUpdateWarning,
                     ValidationError)
from .kalman import smooth_arrays
from .params import (BlockRecord, StackedParams, observation_matrix,
                     spectral_radius, symmetrize)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class EmStructure:
    """Structural constraints imposed on the fitted parameters."""

    n: int
    diagonal_A: bool = True        # diagonal demand/sensitivity blocks
    diagonal_W_y: bool = True

    def A_mask(self) -> np.ndarray:
        n, m = self.n, self.n + self.n ** 2
        mask = np.zeros((m, m), dtype=bool)
        if self.diagonal_A:
            np.fill_diagonal(mask, True)
        else:
            mask[:n, :n] = True
            mask[n:, n:] = True
        return mask


@dataclass(frozen=True)
class ThetaEstimate:
    """Fitted transition/noise parameters plus the initial-state prior."""

    n: int
    mu_x: np.ndarray
    A_x: np.ndarray
    W_x: np.ndarray
    W_y: np.ndarray
    a0: np.ndarray
    S0: np.ndarray
    projected: bool = False    # transition matrix pulled inside the unit circle

    def state_model(self) -> StackedParams:
        return StackedParams(n=self.n, A_x=self.A_x, mu_x=self.mu_x, W_x=self.W_x)

    def prior(self) -> tuple[np.ndarray, np.ndarray]:
        return self.a0, self.S0

    def scalar_report(self) -> dict:
        """Named one-resource parameters (state dim 2: demand, sensitivity)."""
        if self.n != 1:
            raise ValidationError("scalar report is defined for n = 1 only")
        sd = math.sqrt(max(self.W_x[0, 0], 0.0))
        sb = math.sqrt(max(self.W_x[1, 1], 0.0))
        rho = self.W_x[0, 1] / (sd * sb) if sd > 0 and sb > 0 else 0.0
        s0d = math.sqrt(max(self.S0[0, 0], 0.0))
        s0b = math.sqrt(max(self.S0[1, 1], 0.0))
        rho0 = self.S0[0, 1] / (s0d * s0b) if s0d > 0 and s0b > 0 else 0.0
        return {
            "mu_d": self.mu_x[0], "mu_beta": self.mu_x[1],
            "alpha_d": self.A_x[0, 0], "alpha_beta": self.A_x[1, 1],
            "sigma_eps_d": sd, "sigma_eps_beta": sb, "rho_eps": rho,
            "sigma_eps_y": math.sqrt(max(self.W_y[0, 0], 0.0)),
            "d0": self.a0[0], "beta0": self.a0[1],
            "sigma_d0": s0d, "sigma_beta0": s0b, "rho0": rho0,
        }

    def to_json_dict(self, t=None, lam: float = 0.0) -> dict:
        """Model-document form (demand/sensitivity blocks split out)."""
        n = self.n
        doc = {
            "version": 1,
            "n": n,
            "A_d": self.A_x[:n, :n].tolist(),
            "mu_d": self.mu_x[:n].tolist(),
            "W_d": self.W_x[:n, :n].tolist(),
            "A_B": self.A_x[n:, n:].tolist(),
            "mu_B": self.mu_x[n:].tolist(),
            "W_B": self.W_x[n:, n:].tolist(),
            "W_dB": self.W_x[:n, n:].tolist(),
            "W_y": self.W_y.tolist(),
            "t": ([0.0] * n if t is None else np.asarray(t, dtype=float).tolist()),
            "lambda": lam,
            "prior": {"a0": self.a0.tolist(), "S0": self.S0.tolist()},
        }
        return doc


@dataclass
class EmTrace:
    """Per-iteration log-likelihoods and parameter snapshots."""

    loglik: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    reason: str = ""


@dataclass(frozen=True)
class SufficientStats:
    """Expected moments from the smoothed posterior, plus data summaries."""

    T: int                    # number of transitions (blocks - 1)
    Sxx: np.ndarray           # sum of lagged second moments
    Syx: np.ndarray           # sum of cross moments E[x_k x_{k-1}']
    Syy: np.ndarray           # sum of current second moments
    sx: np.ndarray
    sy: np.ndarray
    m0: np.ndarray            # smoothed initial mean
    P0: np.ndarray            # smoothed initial second moment
    R_obs: np.ndarray         # observation residual second moment, summed
    n_obs: int                # number of observed blocks
    loglik: float             # marginal log-likelihood under the E-step theta


def build_obs_tensors(records: list[BlockRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Per-block observation matrices and usage, reusable across iterations."""
    K = len(records)
    n = records[0].y.shape[0]
    m = n + n * n
    Cs = np.empty((K, n, m))
    Y = np.empty((K, n))
    for k, rec in enumerate(records):
        Cs[k] = observation_matrix(rec.p)
        Y[k] = rec.y
    return Cs, Y


def e_step(theta: ThetaEstimate, records: list[BlockRecord],
           tensors: tuple[np.ndarray, np.ndarray] | None = None) -> SufficientStats:
    """Smoothed expectations of the complete-data sufficient statistics."""
    Cs, Y = build_obs_tensors(records) if tensors is None else tensors
    sm = smooth_arrays(theta.state_model(), theta.W_y, theta.prior(), Cs, Y)
    means, covs, lag = sm.means, sm.covs, sm.lag_one
    K = means.shape[0]
    # second moments E[x x'] = cov + mean mean'
    second = covs + np.einsum("ki,kj->kij", means, means)
    cross = lag + np.einsum("ki,kj->kij", means[1:], means[:-1])
    Sxx = second[:-1].sum(axis=0)
    Syy = second[1:].sum(axis=0)
    Syx = cross.sum(axis=0)
    sx = means[:-1].sum(axis=0)
    sy = means[1:].sum(axis=0)
    resid = Y - np.einsum("knm,km->kn", Cs, means)
    R_obs = resid.T @ resid + np.einsum("kim,kmr,kjr->ij", Cs, covs, Cs)
    return SufficientStats(T=K - 1, Sxx=Sxx, Syx=Syx, Syy=Syy, sx=sx, sy=sy,
                           m0=means[0].copy(),
                           P0=second[0].copy(), R_obs=symmetrize(R_obs),
                           n_obs=K, loglik=sm.loglik)


def _psd_clip(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(symmetrize(M))
    return (V * np.clip(w, 0.0, None)) @ V.T


def _gls_weight(W: np.ndarray) -> np.ndarray:
    """Inverse noise covariance for the slope regression.

    Near-null directions must be weighted heavily (the regression should fit
    them exactly), so singular covariances get a relative ridge instead of a
    pseudo-inverse that would drop those constraints.
    """
    m = W.shape[0]
    tr = float(np.trace(W))
    if tr <= 0.0:
        return np.eye(m)
    w, V = np.linalg.eigh(symmetrize(W))
    w = np.maximum(w, 1e-12 * tr / m)
    return (V * (1.0 / w)) @ V.T


def _solve_masked_slope(Lam, G, Hm, mask):
    """Maximize the transition quadratic over masked entries of the slope.

    Stationarity requires (Lam (G - A Hm))[mask] = 0 with A supported on
    mask; assembles and solves the corresponding linear system.
    """
    idx = np.argwhere(mask)
    k = len(idx)
    Msys = np.empty((k, k))
    rhs = np.empty(k)
    for e, (i, j) in enumerate(idx):
        rhs[e] = Lam[i] @ G[:, j]
        for f, (r, s) in enumerate(idx):
            Msys[e, f] = Lam[i, r] * Hm[s, j]
    sol = np.linalg.lstsq(Msys, rhs, rcond=None)[0]
    A = np.zeros(mask.shape)
    A[tuple(idx.T)] = sol
    return A


def m_step(stats: SufficientStats, structure: EmStructure) -> ThetaEstimate:
    """Closed-form maximizers of the expected complete-data log-likelihood.

    The slope/intercept and the state-noise covariance are mutually coupled
    when the slope is constrained, so those two blocks are alternated to
    convergence; every other block has an independent closed form.
    """
    T = stats.T
    m = stats.Sxx.shape[0]
    n = structure.n
    mask = structure.A_mask()

    # centered moments for the intercept-profiled regression
    G = stats.Syx - np.outer(stats.sy, stats.sx) / T
    Hm = stats.Sxx - np.outer(stats.sx, stats.sx) / T

    W = np.eye(m)
    A = np.zeros((m, m))
    for _ in range(200):
        Lam = _gls_weight(W)
        A_new = _solve_masked_slope(Lam, G, Hm, mask)
        c = (stats.sy - A_new @ stats.sx) / T
        resid = (stats.Syy + T * np.outer(c, c) + A_new @ stats.Sxx @ A_new.T
                 - stats.Syx @ A_new.T - A_new @ stats.Syx.T
                 - np.outer(c, stats.sy) - np.outer(stats.sy, c)
                 + A_new @ np.outer(stats.sx, c) + np.outer(c, stats.sx) @ A_new.T)
        W_new = _psd_clip(resid / T)
        dA = np.max(np.abs(A_new - A))
        dW = np.max(np.abs(W_new - W)) / (1.0 + np.max(np.abs(W_new)))
        A, W = A_new, W_new
        if max(dA / (1.0 + np.max(np.abs(A))), dW) < 1e-12:
            break

    projected = False
    rho = spectral_radius(A)
    if rho >= 1.0:
        warnings.warn("fitted transition matrix unstable; projecting inside the "
                      "unit circle", NonStationaryUpdateWarning)
        A = A * ((1.0 - 1e-6) / rho)
        projected = True
    c = (stats.sy - A @ stats.sx) / T
    mu = np.linalg.solve(np.eye(m) - A, c)

    W_y = stats.R_obs / stats.n_obs
    if structure.diagonal_W_y:
        W_y = np.diag(np.diag(W_y))
    W_y = _psd_clip(W_y)

    a0 = stats.m0
    S0 = _psd_clip(stats.P0 - np.outer(stats.m0, stats.m0))
    return ThetaEstimate(n=n, mu_x=mu, A_x=A, W_x=W, W_y=W_y, a0=a0, S0=S0,
                         projected=projected)


def expected_complete_loglik(theta: ThetaEstimate, stats: SufficientStats) -> float:
    """Expected complete-data log-likelihood at theta under the stats.

    This is the M-step objective; useful for stationarity diagnostics.
    """
    m = theta.mu_x.shape[0]
    n = theta.W_y.shape[0]
    T = stats.T
    A, W = theta.A_x, theta.W_x
    c = (np.eye(m) - A) @ theta.mu_x
    resid = (stats.Syy + T * np.outer(c, c) + A @ stats.Sxx @ A.T
             - stats.Syx @ A.T - A @ stats.Syx.T
             - np.outer(c, stats.sy) - np.outer(stats.sy, c)
             + A @ np.outer(stats.sx, c) + np.outer(c, stats.sx) @ A.T)
    out = 0.0
    for S, R, count, dim in (
            (theta.S0, stats.P0 - np.outer(stats.m0, theta.a0)
             - np.outer(theta.a0, stats.m0) + np.outer(theta.a0, theta.a0), 1, m),
            (W, resid, T, m),
            (theta.W_y, stats.R_obs, stats.n_obs, n)):
        w, V = np.linalg.eigh(symmetrize(S))
        good = w > 1e-300
        logdet = float(np.sum(np.log(w[good])))
        Sinv = (V[:, good] * (1.0 / w[good])) @ V[:, good].T
        out += -0.5 * (count * (dim * _LOG_2PI + logdet) + np.trace(Sinv @ R))
    return float(out)


def initial_theta(records: list[BlockRecord], n: int) -> ThetaEstimate:
    """Method-of-moments starting point from the raw observations.

    Crude by design: a static regression of usage on prices splits the
    series into a demand proxy and a sensitivity level, and short-lag
    autocovariances of the proxy split persistence from observation noise.
    """
    if n != 1:
        raise ValidationError("automatic initialization implemented for n = 1")
    y = np.array([r.y[0] for r in records])
    p = np.array([r.p[0] for r in records])
    pv = p - p.mean()
    var_p = float(pv @ pv) / len(p)
    if var_p <= 1e-12 * p.mean() ** 2:
        warnings.warn("prices barely vary; demand level and sensitivity are "
                      "close to unidentified", UserWarning)
    beta0 = float(pv @ (y - y.mean()) / max(pv @ pv, 1e-300))
    if beta0 == 0.0:
        beta0 = -1e-6
    d_proxy = y - beta0 * p
    mu_d = float(d_proxy.mean())
    z = d_proxy - mu_d
    g0 = float(z @ z) / len(z)
    g1 = float(z[1:] @ z[:-1]) / (len(z) - 1)
    g2 = float(z[2:] @ z[:-2]) / (len(z) - 2)
    # white observation noise leaves autocovariances at lags >= 1 untouched
    alpha = g2 / g1 if abs(g1) > 1e-300 else 0.9
    alpha = float(np.clip(alpha, 0.2, 0.9995))
    var_d = abs(g1) / alpha if alpha > 0 else g0 * 0.5
    var_d = min(max(var_d, 1e-12 * max(g0, 1.0)), g0) if g0 > 0 else 1.0
    sig_y2 = max(g0 - var_d, 1e-4 * g0 if g0 > 0 else 1.0)
    sig_d2 = max(var_d * (1.0 - alpha ** 2), 1e-12 * max(g0, 1.0))
    alpha_b = alpha
    sig_b2 = max((0.3 * abs(beta0)) ** 2 * (1.0 - alpha_b ** 2), 1e-300)
    W_x = np.diag([sig_d2, sig_b2])
    S0 = np.diag([max(var_d, sig_d2), max((0.5 * abs(beta0)) ** 2, sig_b2)])
    return ThetaEstimate(n=1, mu_x=np.array([mu_d, beta0]),
                         A_x=np.diag([alpha, alpha_b]), W_x=W_x,
                         W_y=np.array([[sig_y2]]),
                         a0=np.array([float(d_proxy[:25].mean()), beta0]), S0=S0)


def fit_em(records: list[BlockRecord], theta0: ThetaEstimate,
           max_iters: int = 200, ll_tol: float = 1e-6,
           structure: EmStructure | None = None) -> tuple[ThetaEstimate, EmTrace]:
    """Iterate E/M steps until the log-likelihood stalls.

    The likelihood sequence must be non-decreasing; a drop beyond 1e-6
    aborts, since exact M-steps cannot lower it.
    """
    n = records[0].y.shape[0]
    free = 2 * (n + n * n) + (n + n * n) * (n + n * n + 1) // 2 + n
    if len(records) < 10 * free:
        warnings.warn(f"trajectory of {len(records)} blocks is short for "
                      f"~{free} free parameters", UserWarning)
    structure = structure or EmStructure(n=n)
    tensors = build_obs_tensors(records)
    theta = theta0
    trace = EmTrace()
    prev = None
    for _ in range(max_iters):
        stats = e_step(theta, records, tensors)
        trace.loglik.append(stats.loglik)
        trace.snapshots.append(theta)
        if prev is not None:
            if stats.loglik < prev - 1e-6:
                raise MonotonicityViolation(
                    f"log-likelihood fell from {prev:.6f} to {stats.loglik:.6f}")
            if abs(stats.loglik - prev) < ll_tol:
                trace.reason = "ll_tol"
                return theta, trace
        prev = stats.loglik
        theta = m_step(stats, structure)
    trace.reason = "max_iters"
    return theta, trace
