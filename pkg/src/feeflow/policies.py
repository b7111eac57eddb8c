"""Pricing rules.

Three families live here:

* the closed-form rule for the pure target-tracking objective, which needs
  only predictive moments of the hidden state (`lindy0_price`);
* the price-smoothing (regularized) controller: backward Riccati recursions
  under a deterministic sensitivity path, the aim-price decomposition, the
  convex-combination update, and the receding-horizon wrapper that re-plans
  from the latest filtered estimate every block (`mpc_price`);
* simple per-resource update heuristics in production use (`eip1559_update`,
  `eip4844_update`) and the scalar estimate-based update they approximate.

All functions are pure; policies consume `BeliefState` objects, never raw
future observations, which is what keeps them implementable in real time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (DegenerateDenominator, NoConvergence, SingularB,
                     SingularMoment, ValidationError, ZeroBeta)
from .kalman import BeliefState, predict, predict_multi
from .params import (LinearStateModel, ModelParams, StackedParams,
                     spectral_radius, stack_params, symmetrize, unvec, vec)

_COND_LIMIT = 1e12


# ---------------------------------------------------------------------------
# target-tracking rule (no price regularization)

def predictive_price_system(a: np.ndarray, S: np.ndarray, n: int,
                            t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact Gaussian moments defining the unregularized price rule.

    Returns (M2, rhs) with M2 = E[B'B] and rhs = E[B'(t - d)] under the
    predictive N(a, S) over the stacked state; the optimal price solves
    M2 p = rhs. Covariance terms are read from the (d, vec(B)) blocks of S
    (column-major vec: entry B[r, c] sits at index c*n + r).
    """
    d_hat = a[:n]
    B_hat = unvec(a[n:], n)
    S_dB = S[:n, n:]
    S_BB = S[n:, n:]
    M2 = np.empty((n, n))
    rhs = np.empty(n)
    for i in range(n):
        for j in range(n):
            s = 0.0
            for r in range(n):
                s += B_hat[r, i] * B_hat[r, j] + S_BB[i * n + r, j * n + r]
            M2[i, j] = s
        acc = 0.0
        for r in range(n):
            acc += B_hat[r, i] * (t[r] - d_hat[r]) - S_dB[r, i * n + r]
        rhs[i] = acc
    return M2, rhs


def price_from_predictive(a: np.ndarray, S: np.ndarray, n: int,
                          t: np.ndarray) -> np.ndarray:
    M2, rhs = predictive_price_system(a, S, n, t)
    w = np.linalg.eigvalsh(symmetrize(M2))
    if w[0] <= 0.0 or w[-1] > _COND_LIMIT * w[0]:
        raise SingularMoment(
            f"predictive second moment of B is not invertible (eigs {w})")
    return np.linalg.solve(M2, rhs)


def lindy0_price(belief: BeliefState, sp: StackedParams, t: np.ndarray) -> np.ndarray:
    """Price that matches expected next-block usage to the target.

    One-step predictive moments come from the filter; the rule is exact for
    the unregularized objective, including sensitivity/demand covariance
    corrections and cross-resource effects.
    """
    a, S = predict(belief, sp)
    return price_from_predictive(a, S, sp.n, np.asarray(t, dtype=float))


# ---------------------------------------------------------------------------
# Riccati machinery for the price-smoothing controller

@dataclass(frozen=True)
class RiccatiSolution:
    """Backward-recursion coefficients along a deterministic sensitivity path.

    ``Qs[j]``, ``Rs[j]``, ``taus[j]`` are the cost-to-go coefficients at
    lookahead offset j (j = 0 is the decision block); ``B_path[j]`` is the
    sensitivity matrix at offset j + 1. The stationary triple anchors the
    far end of the horizon.
    """

    lam: float
    B_path: np.ndarray       # (L, n, n)
    Qs: np.ndarray           # (L+1, n, n)
    Rs: np.ndarray           # (L+1, n, n)
    taus: np.ndarray         # (L+1, n)
    Q_inf: np.ndarray
    R_inf: np.ndarray
    tau_inf: np.ndarray
    stationary_iters: int
    converged: bool


def _riccati_step(Q, R, tau, B, A_d, mu_d, t, lam):
    """One backward step; B is the sensitivity at the later block."""
    n = Q.shape[0]
    M = lam * np.eye(n) + Q + B.T @ B
    Minv = np.linalg.inv(M)
    Q_new = symmetrize(lam * np.eye(n) - lam * lam * Minv)
    Rt_new = lam * Minv @ (B.T + R.T @ A_d)
    tau_new = lam * Minv @ (B.T @ t + tau - R.T @ (np.eye(n) - A_d) @ mu_d)
    return Q_new, Rt_new.T, tau_new


def riccati_finite(B_path, A_d, mu_d, t, lam):
    """Finite-horizon coefficients with zero terminal cost.

    ``B_path[j]`` is the sensitivity for decision j + 1 out of
    ``K = len(B_path)`` decisions. Returns (Qs, Rs, taus) with index j the
    coefficients in force when choosing decision j (index K is terminal).
    """
    B_path = np.asarray(B_path, dtype=float)
    K, n, _ = B_path.shape
    t = np.asarray(t, dtype=float)
    mu_d = np.asarray(mu_d, dtype=float)
    Qs = np.zeros((K + 1, n, n))
    Rs = np.zeros((K + 1, n, n))
    taus = np.zeros((K + 1, n))
    for j in range(K - 1, -1, -1):
        Qs[j], Rs[j], taus[j] = _riccati_step(
            Qs[j + 1], Rs[j + 1], taus[j + 1], B_path[j], A_d, mu_d, t, lam)
    return Qs, Rs, taus


def finite_horizon_decision(p_prev, a_d, Q, R, tau, B, A_d, mu_d, t, lam):
    """Optimal decision given the cost-to-go coefficients one step out."""
    n = Q.shape[0]
    M = lam * np.eye(n) + Q + B.T @ B
    g = (B.T @ a_d - B.T @ t - lam * p_prev - tau
         + R.T @ ((np.eye(n) - A_d) @ mu_d + A_d @ a_d))
    return -np.linalg.solve(M, g)


def finite_horizon_rollout(B_path, A_d, mu_d, t, lam, p0, d0_mean):
    """Deterministic plan over the whole horizon from the initial forecast.

    Rolls the mean demand forward and applies the finite-horizon decision
    rule at every block; useful as a planner and for validating the
    recursion against direct cost minimization.
    """
    B_path = np.asarray(B_path, dtype=float)
    K, n, _ = B_path.shape
    A_d = np.asarray(A_d, dtype=float)
    mu_d = np.asarray(mu_d, dtype=float)
    t = np.asarray(t, dtype=float)
    Qs, Rs, taus = riccati_finite(B_path, A_d, mu_d, t, lam)
    c = (np.eye(n) - A_d) @ mu_d
    a = c + A_d @ np.asarray(d0_mean, dtype=float)
    p = np.asarray(p0, dtype=float)
    decisions = []
    for j in range(K):
        p = finite_horizon_decision(p, a, Qs[j + 1], Rs[j + 1], taus[j + 1],
                                    B_path[j], A_d, mu_d, t, lam)
        decisions.append(p)
        a = c + A_d @ a
    return np.array(decisions)


def riccati_backward(B_path, A_d, mu_d, t, lam, H: int = 10_000,
                     tol: float = 1e-10) -> RiccatiSolution:
    """Infinite-horizon coefficients along a deterministic sensitivity path.

    Iterates the backward recursion from zero with the path's limiting
    sensitivity until the quadratic coefficient is stationary (at most H
    iterations), then walks back through the explicit path. Raises
    :class:`NoConvergence` if the stationary tolerance is not met.
    """
    B_path = np.asarray(B_path, dtype=float)
    if B_path.ndim != 3 or B_path.shape[0] < 1:
        raise ValidationError("B_path must be a non-empty (L, n, n) sequence")
    if not np.all(np.isfinite(B_path)):
        raise ValidationError("B_path contains non-finite entries")
    L, n, _ = B_path.shape
    A_d = np.asarray(A_d, dtype=float)
    mu_d = np.asarray(mu_d, dtype=float)
    t = np.asarray(t, dtype=float)
    if lam < 0:
        raise ValidationError("lam must be >= 0")
    if H < 1:
        raise ValidationError("H must be >= 1")

    if lam == 0.0:
        # every recursion term carries a factor of lam
        zQ = np.zeros((L + 1, n, n))
        return RiccatiSolution(lam=0.0, B_path=B_path, Qs=zQ, Rs=zQ.copy(),
                               taus=np.zeros((L + 1, n)), Q_inf=np.zeros((n, n)),
                               R_inf=np.zeros((n, n)), tau_inf=np.zeros(n),
                               stationary_iters=0, converged=True)

    Q, R, tau, iters, converged = _stationary_loop(B_path[-1], A_d, mu_d, t,
                                                   lam, H, tol)
    Qs = np.zeros((L + 1, n, n))
    Rs = np.zeros((L + 1, n, n))
    taus = np.zeros((L + 1, n))
    Qs[L], Rs[L], taus[L] = Q, R, tau
    for j in range(L - 1, -1, -1):
        Qs[j], Rs[j], taus[j] = _riccati_step(
            Qs[j + 1], Rs[j + 1], taus[j + 1], B_path[j], A_d, mu_d, t, lam)
    return RiccatiSolution(lam=float(lam), B_path=B_path, Qs=Qs, Rs=Rs,
                           taus=taus, Q_inf=Q, R_inf=R, tau_inf=tau,
                           stationary_iters=iters, converged=converged)


def _stationary_loop(B_lim, A_d, mu_d, t, lam, H, tol):
    n = B_lim.shape[0]
    Q = np.zeros((n, n))
    R = np.zeros((n, n))
    tau = np.zeros(n)
    iters = 0
    converged = False
    for iters in range(1, H + 1):
        Q_new, R_new, tau_new = _riccati_step(Q, R, tau, B_lim, A_d, mu_d, t, lam)
        dQ = np.max(np.abs(Q_new - Q))
        dR = np.max(np.abs(R_new - R)) / (1.0 + np.max(np.abs(R_new)))
        dtau = np.max(np.abs(tau_new - tau)) / (1.0 + np.max(np.abs(tau_new)))
        Q, R, tau = Q_new, R_new, tau_new
        if max(dQ, dR, dtau) < tol:
            converged = True
            break
    if not converged:
        # accept if the quadratic coefficient alone met tolerance
        Q_probe, _, _ = _riccati_step(Q, R, tau, B_lim, A_d, mu_d, t, lam)
        if np.max(np.abs(Q_probe - Q)) >= tol:
            raise NoConvergence(
                f"stationary backward recursion did not reach tol={tol} in H={H} steps")
        converged = True
    return Q, R, tau, iters, converged


# ---------------------------------------------------------------------------
# aim price

@dataclass(frozen=True)
class AimDecomposition:
    """Aim price as a matrix-weighted average of future clearing prices.

    The weights sum to the identity exactly: the residual product left by
    truncation is folded into the last term.
    """

    aim: np.ndarray
    weights: np.ndarray      # (S, n, n)
    clearing: np.ndarray     # (S, n)
    horizon: int
    residual_norm: float


def _clearing_price(B: np.ndarray, t: np.ndarray, a_d: np.ndarray) -> np.ndarray:
    if np.linalg.cond(B) > _COND_LIMIT:
        raise SingularB(f"sensitivity matrix along the lookahead is singular: {B}")
    return np.linalg.solve(B, t - a_d)


def aim_price(belief: BeliefState, sp: StackedParams, rs: RiccatiSolution,
              t: np.ndarray, truncation_tol: float = 1e-8) -> AimDecomposition:
    """Weighted average of forecast market-clearing prices.

    Clearing price at offset j solves B_j p = t - E[d at offset j]; demand
    forecasts propagate through the demand block of the dynamics. The sum
    truncates once the residual weight drops below ``truncation_tol``.
    """
    t = np.asarray(t, dtype=float)
    n = t.shape[0]
    L = rs.B_path.shape[0]
    # only forecast means enter the clearing prices; the demand block of the
    # (block-diagonal) dynamics propagates them
    A_d = sp.A_x[:n, :n]
    c_d = sp.drift[:n]
    a_d = c_d + A_d @ belief.x_hat[:n]
    weights = []
    clearing = []
    P = np.eye(n)
    aim = np.zeros(n)
    residual = np.inf
    for j in range(L):
        B_j = rs.B_path[j]
        p_bar = _clearing_price(B_j, t, a_d)
        a_d = c_d + A_d @ a_d
        Z_j = np.linalg.solve(rs.Qs[j + 1] + B_j.T @ B_j, rs.Qs[j + 1])
        M_j = P @ (np.eye(n) - Z_j)
        weights.append(M_j)
        clearing.append(p_bar)
        aim = aim + M_j @ p_bar
        P = P @ Z_j
        residual = float(np.linalg.norm(P, np.inf))
        if residual < truncation_tol:
            break
    # fold the residual weight into the last clearing price so the weights
    # sum to the identity exactly
    weights[-1] = weights[-1] + P
    aim = aim + P @ clearing[-1]
    return AimDecomposition(aim=aim, weights=np.array(weights),
                            clearing=np.array(clearing), horizon=len(weights),
                            residual_norm=residual)


def lqg_price(p_k: np.ndarray, rs: RiccatiSolution, aim, lam: float) -> np.ndarray:
    """Matrix convex combination of the current price and the aim price."""
    if lam <= 0:
        raise ValidationError("lam must be > 0 for the regularized update")
    aim_vec = aim.aim if isinstance(aim, AimDecomposition) else np.asarray(aim, dtype=float)
    p_k = np.asarray(p_k, dtype=float)
    gamma = rs.Q_inf / lam
    return (np.eye(p_k.shape[0]) - gamma) @ p_k + gamma @ aim_vec


def deterministic_b_path(vecB0: np.ndarray, A_B: np.ndarray, mu_B: np.ndarray,
                         L: int) -> np.ndarray:
    """Evolve vec(B) deterministically L steps; path[j] is offset j + 1."""
    m = mu_B.shape[0]
    n = int(round(np.sqrt(m)))
    c = (np.eye(m) - A_B) @ mu_B
    out = np.empty((L, n, n))
    v = np.asarray(vecB0, dtype=float)
    for j in range(L):
        v = c + A_B @ v
        out[j] = unvec(v, n)
    return out


def default_riccati_horizon(mp: ModelParams) -> int:
    rho = spectral_radius(mp.A_B)
    return 10 * mp.n * int(np.ceil(1.0 / max(1.0 - rho, 1e-12)))


def _path_length(z_norm: float, truncation_tol: float, H: int) -> int:
    if z_norm >= 1.0 - 1e-9:
        return H
    steps = np.log(max(truncation_tol, 1e-300)) / np.log(max(z_norm, 1e-6))
    return int(min(H, max(8, 2 * int(np.ceil(steps)) + 8)))


def mpc_price(belief: BeliefState, mp: ModelParams, t: np.ndarray, lam: float,
              p_k: np.ndarray, horizon: int | None = None, tol: float = 1e-10,
              truncation_tol: float = 1e-8) -> np.ndarray:
    """Receding-horizon price: re-plan as if sensitivity evolved noiselessly.

    Takes the current filtered sensitivity estimate, evolves it along its
    deterministic mean-reversion path, solves the backward recursion plus
    aim decomposition for that path, and applies the convex-combination
    update to the current price ``p_k``.
    """
    if lam <= 0:
        raise ValidationError("lam must be > 0; use lindy0_price for the unregularized rule")
    t = np.asarray(t, dtype=float)
    n = mp.n
    H = default_riccati_horizon(mp) if horizon is None else int(horizon)
    if n == 1:
        return _mpc_price_scalar(belief, mp, float(t[0]), lam,
                                 float(np.asarray(p_k, dtype=float)[0]), H,
                                 tol, truncation_tol)
    sp = stack_params(mp)
    vecB_hat = belief.x_hat[n:]
    B_lim = unvec(mp.mu_B, n)
    # the stationary shrink factor sizes the explicit path: beyond it, both
    # the aim weights and the backward recursion have forgotten the path
    Q_inf, R_inf, tau_inf, iters, converged = _stationary_loop(
        B_lim, mp.A_d, mp.mu_d, t, lam, H, tol)
    try:
        Z_inf = np.linalg.solve(Q_inf + B_lim.T @ B_lim, Q_inf)
        z_norm = float(np.linalg.norm(Z_inf, 2))
    except np.linalg.LinAlgError:
        z_norm = 1.0
    L = _path_length(z_norm, truncation_tol, H)
    B_path = deterministic_b_path(vecB_hat, mp.A_B, mp.mu_B, L)
    Qs = np.zeros((L + 1, n, n))
    Rs = np.zeros((L + 1, n, n))
    taus = np.zeros((L + 1, n))
    Qs[L], Rs[L], taus[L] = Q_inf, R_inf, tau_inf
    for j in range(L - 1, -1, -1):
        Qs[j], Rs[j], taus[j] = _riccati_step(
            Qs[j + 1], Rs[j + 1], taus[j + 1], B_path[j], mp.A_d, mp.mu_d, t, lam)
    rs = RiccatiSolution(lam=float(lam), B_path=B_path, Qs=Qs, Rs=Rs, taus=taus,
                         Q_inf=Q_inf, R_inf=R_inf, tau_inf=tau_inf,
                         stationary_iters=iters, converged=converged)
    dec = aim_price(belief, sp, rs, t, truncation_tol=truncation_tol)
    return lqg_price(p_k, rs, dec, lam)


def _mpc_price_scalar(belief, mp, t, lam, p_k, H, tol, truncation_tol):
    """One-resource fast path; mirrors the generic pipeline in plain floats."""
    alpha_d = float(mp.A_d[0, 0])
    mu_d = float(mp.mu_d[0])
    alpha_b = float(mp.A_B[0, 0])
    mu_b = float(mp.mu_B[0])
    b_hat = float(belief.x_hat[1])
    d_hat = float(belief.x_hat[0])

    def step(Q, R, tau, b):
        M = lam + Q + b * b
        lam_Minv = lam / M
        return (lam - lam * lam_Minv,
                lam_Minv * (b + R * alpha_d),
                lam_Minv * (b * t + tau - R * (1.0 - alpha_d) * mu_d))

    Q = R = tau = 0.0
    converged = False
    for _ in range(H):
        Qn, Rn, taun = step(Q, R, tau, mu_b)
        dQ = abs(Qn - Q)
        dR = abs(Rn - R) / (1.0 + abs(Rn))
        dtau = abs(taun - tau) / (1.0 + abs(taun))
        Q, R, tau = Qn, Rn, taun
        if max(dQ, dR, dtau) < tol:
            converged = True
            break
    if not converged and abs(step(Q, R, tau, mu_b)[0] - Q) >= tol:
        raise NoConvergence(
            f"stationary backward recursion did not reach tol={tol} in H={H} steps")
    Q_inf = Q
    z = abs(Q_inf / (Q_inf + mu_b * mu_b)) if Q_inf + mu_b * mu_b != 0.0 else 1.0
    L = _path_length(z, truncation_tol, H)

    c_b = (1.0 - alpha_b) * mu_b
    b_path = np.empty(L)
    b = b_hat
    for j in range(L):
        b = c_b + alpha_b * b
        b_path[j] = b
    Qs = np.empty(L + 1)
    Qs[L] = Q_inf
    for j in range(L - 1, -1, -1):
        M = lam + Qs[j + 1] + b_path[j] * b_path[j]
        Qs[j] = lam - lam * lam / M

    c_d = (1.0 - alpha_d) * mu_d
    a_d = c_d + alpha_d * d_hat
    P = 1.0
    aim = 0.0
    p_bar = 0.0
    for j in range(L):
        b_j = b_path[j]
        if b_j == 0.0 or not np.isfinite(b_j):
            raise SingularB("sensitivity along the lookahead is singular")
        p_bar = (t - a_d) / b_j
        a_d = c_d + alpha_d * a_d
        Z_j = Qs[j + 1] / (Qs[j + 1] + b_j * b_j)
        aim += P * (1.0 - Z_j) * p_bar
        P *= Z_j
        if abs(P) < truncation_tol:
            break
    aim += P * p_bar
    gamma = Q_inf / lam
    return np.array([(1.0 - gamma) * p_k + gamma * aim])


# ---------------------------------------------------------------------------
# eigenresource pricing

@dataclass(frozen=True)
class EigenModel:
    """Market model in rotated coordinates where sensitivity is diagonal.

    ``U`` and ``V`` are the fixed orthogonal factors of the sensitivity
    matrix; the transformed state is [transformed demand; sensitivity
    diagonal], each an n-vector, so pricing decouples per coordinate.
    """

    n: int
    U: np.ndarray
    V: np.ndarray
    A_d: np.ndarray       # transformed-demand mean reversion
    mu_d: np.ndarray
    W_d: np.ndarray
    A_delta: np.ndarray   # sensitivity-diagonal mean reversion
    mu_delta: np.ndarray
    W_delta: np.ndarray
    W_cross: np.ndarray   # Cov(demand noise, sensitivity noise)
    W_y: np.ndarray       # observation noise in transformed coordinates

    def __post_init__(self):
        for name in ("U", "V"):
            M = np.asarray(getattr(self, name), dtype=float)
            if np.max(np.abs(M.T @ M - np.eye(self.n))) > 1e-10:
                raise ValidationError(f"{name} must be orthogonal")
            object.__setattr__(self, name, M)

    def state_model(self) -> LinearStateModel:
        n = self.n
        A = np.zeros((2 * n, 2 * n))
        A[:n, :n] = self.A_d
        A[n:, n:] = self.A_delta
        mu = np.concatenate([self.mu_d, self.mu_delta])
        W = np.zeros((2 * n, 2 * n))
        W[:n, :n] = self.W_d
        W[n:, n:] = self.W_delta
        W[:n, n:] = self.W_cross
        W[n:, :n] = self.W_cross.T
        return LinearStateModel(A_x=A, mu_x=mu, W_x=W)

    def obs_matrix(self, p_tilde: np.ndarray) -> np.ndarray:
        return np.hstack([np.eye(self.n), np.diag(np.asarray(p_tilde, dtype=float))])

    def to_eigen_price(self, p: np.ndarray) -> np.ndarray:
        return self.V.T @ p

    def to_eigen_usage(self, y: np.ndarray) -> np.ndarray:
        return self.U.T @ y


def eigen_price(belief: BeliefState, em: EigenModel, t: np.ndarray) -> np.ndarray:
    """Per-bundle scalar pricing in the rotated coordinates.

    The belief lives over the 2n-dimensional transformed state; each
    coordinate's price is the scalar moment ratio, and the result is mapped
    back to original coordinates.
    """
    n = em.n
    t_tilde = em.U.T @ np.asarray(t, dtype=float)
    a, S = predict(belief, em.state_model())
    p_tilde = np.empty(n)
    for i in range(n):
        e2 = a[n + i] ** 2 + S[n + i, n + i]
        if e2 < 1e-15:
            raise SingularMoment(f"sensitivity second moment vanishes in coordinate {i}")
        num = a[n + i] * (t_tilde[i] - a[i]) - S[i, n + i]
        p_tilde[i] = num / e2
    return em.V @ p_tilde


# ---------------------------------------------------------------------------
# production heuristics and their scalar analysis

def eip1559_update(p_k, y_k, t, gamma: float = 0.125):
    """Multiplicative base-fee rule, applied per resource independently."""
    p_k = np.asarray(p_k, dtype=float)
    y_k = np.asarray(y_k, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValidationError("targets must be positive")
    return p_k * (1.0 + gamma * (y_k - t) / t)


def eip4844_update(p_k, y_k, t):
    """Two-resource variant: independent gas and datagas updates."""
    p_k = np.asarray(p_k, dtype=float)
    if p_k.shape != (2,):
        raise ValidationError("expected a 2-vector of prices")
    return eip1559_update(p_k, y_k, t)


def unidim_update(a_next: float, beta: float, p_k: float, t: float) -> float:
    """Scalar estimate-based update: u such that predicted usage hits target."""
    if beta == 0.0:
        raise ZeroBeta("price sensitivity of zero cannot be inverted")
    return -(a_next + beta * p_k - t) / beta


def gamma_opt(a_next: float, beta: float, p_k: float, y_k: float, t: float) -> float:
    """Step size that makes the multiplicative rule match the scalar update.

    Uses the demand elasticity at the target; with it, the multiplicative
    rule reproduces p_k + unidim_update exactly.
    """
    if beta == 0.0:
        raise ZeroBeta("price sensitivity of zero cannot be inverted")
    if p_k <= 0.0:
        raise ValidationError("price must be positive to define elasticity")
    if abs(y_k - t) < 1e-12 * abs(t):
        raise DegenerateDenominator("observed usage too close to target")
    eta = beta * p_k / t
    return (1.0 / abs(eta)) * (a_next + beta * p_k - t) / (y_k - t)
