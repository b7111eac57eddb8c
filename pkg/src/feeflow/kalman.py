"""Gaussian belief updates over the hidden (demand, sensitivity) state.

The observation map depends on the posted prices, so each step builds its
own observation matrix; apart from that this is a standard Kalman filter
with an RTS smoother. Batch passes over whole trajectories dispatch to the
compiled kernels when they are available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _backend, _pure
from .errors import NearSingularF, ValidationError
from .params import BlockRecord, StackedParams, observation_matrix, symmetrize

# how negative the smallest covariance eigenvalue may be, relative to trace
_PSD_SLACK = 1e-8

ObsMatrixFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class BeliefState:
    """Posterior mean and covariance of the stacked state after block k."""

    x_hat: np.ndarray
    Sigma_hat: np.ndarray
    k: int = 0

    def __post_init__(self):
        x = np.asarray(self.x_hat, dtype=float)
        S = symmetrize(np.asarray(self.Sigma_hat, dtype=float))
        if x.ndim != 1 or S.shape != (x.shape[0], x.shape[0]):
            raise ValidationError("belief mean/covariance shapes are inconsistent")
        m = x.shape[0]
        if m == 2:  # closed-form eigenvalue bound on the hot path
            h = 0.5 * (S[0, 0] + S[1, 1])
            mineig = h - math.hypot(0.5 * (S[0, 0] - S[1, 1]), S[0, 1])
            tr = S[0, 0] + S[1, 1]
        else:
            w = np.linalg.eigvalsh(S)
            mineig = w[0]
            tr = float(np.trace(S))
        if mineig < -_PSD_SLACK * max(tr, 1.0):
            raise ValidationError(f"belief covariance not PSD (min eig {mineig:.3e})")
        x.setflags(write=False)
        S.setflags(write=False)
        object.__setattr__(self, "x_hat", x)
        object.__setattr__(self, "Sigma_hat", S)
        object.__setattr__(self, "k", int(self.k))

    @property
    def dim(self) -> int:
        return self.x_hat.shape[0]

    def to_json_dict(self) -> dict:
        return {"k": self.k, "x_hat": self.x_hat.tolist(),
                "Sigma_hat": self.Sigma_hat.tolist()}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "BeliefState":
        return cls(x_hat=doc["x_hat"], Sigma_hat=doc["Sigma_hat"], k=doc.get("k", 0))


@dataclass(frozen=True)
class Prediction:
    """One-step predictive quantities at given prices."""

    a: np.ndarray        # predictive state mean
    S: np.ndarray        # predictive state covariance
    f: np.ndarray        # predictive observation mean
    F: np.ndarray        # predictive observation covariance
    K_gain: np.ndarray


@dataclass(frozen=True)
class SmoothedTrajectory:
    """Full-information posterior moments per block.

    ``lag_one[k]`` is Cov(x_{k+1}, x_k | all observations), which the EM
    M-step consumes.
    """

    means: np.ndarray      # (K, m)
    covs: np.ndarray       # (K, m, m)
    lag_one: np.ndarray    # (K-1, m, m)
    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    loglik: float


def predict(belief: BeliefState, sp: StackedParams) -> tuple[np.ndarray, np.ndarray]:
    """One-step predictive mean and covariance of the stacked state."""
    a = sp.drift + sp.A_x @ belief.x_hat
    S = symmetrize(sp.A_x @ belief.Sigma_hat @ sp.A_x.T + sp.W_x)
    return a, S


def _check_F(F: np.ndarray) -> None:
    if F.shape == (1, 1):
        if F[0, 0] <= 0.0:
            raise NearSingularF(
                f"observation predictive covariance near singular ({F[0, 0]:.3e})")
        return
    w = np.linalg.eigvalsh(F)
    if w[0] <= 0.0 or w[-1] > _pure.COND_LIMIT * w[0]:
        raise NearSingularF(
            f"observation predictive covariance near singular "
            f"(eigenvalues {w[0]:.3e} .. {w[-1]:.3e})")


def predict_observation(a: np.ndarray, S: np.ndarray, p: np.ndarray,
                        W_y: np.ndarray, obs_matrix: ObsMatrixFn = observation_matrix,
                        ) -> Prediction:
    """Predictive observation distribution and Kalman gain at prices ``p``."""
    C = obs_matrix(p)
    f = C @ a
    F = symmetrize(C @ S @ C.T + W_y)
    _check_F(F)
    K_gain = np.linalg.solve(F, C @ S).T
    return Prediction(a=a, S=S, f=f, F=F, K_gain=K_gain)


def update(a: np.ndarray, S: np.ndarray, p: np.ndarray, y: np.ndarray,
           W_y: np.ndarray, k: int = 0,
           obs_matrix: ObsMatrixFn = observation_matrix) -> BeliefState:
    """Condition the predictive (a, S) on the observed usage ``y``.

    Uses the Joseph-form covariance update, which is algebraically equal to
    (I - KC) S but stays PSD under roundoff.
    """
    C = obs_matrix(p)
    CS = C @ S
    F = symmetrize(CS @ C.T + W_y)
    _check_F(F)
    Kg = np.linalg.solve(F, CS).T
    x_hat = a + Kg @ (np.asarray(y, dtype=float) - C @ a)
    IKC = np.eye(a.shape[0]) - Kg @ C
    Sigma = symmetrize(IKC @ S @ IKC.T + Kg @ W_y @ Kg.T)
    return BeliefState(x_hat=x_hat, Sigma_hat=Sigma, k=k)


def predict_multi(belief: BeliefState, sp: StackedParams, h: int,
                  ) -> list[tuple[np.ndarray, np.ndarray]]:
    """Iterate the predictive recursion h steps with no data in between."""
    if h < 1:
        raise ValidationError("h must be >= 1")
    out = []
    a, S = predict(belief, sp)
    out.append((a, S))
    c = sp.drift
    for _ in range(h - 1):
        a = c + sp.A_x @ a
        S = symmetrize(sp.A_x @ S @ sp.A_x.T + sp.W_x)
        out.append((a, S))
    return out


def _build_obs_tensor(records: Sequence[BlockRecord], obs_matrix: ObsMatrixFn,
                      dim: int) -> tuple[np.ndarray, np.ndarray]:
    K = len(records)
    if K == 0:
        raise ValidationError("empty trajectory")
    n = records[0].y.shape[0]
    Cs = np.empty((K, n, dim))
    Y = np.empty((K, n))
    for k, rec in enumerate(records):
        Cs[k] = obs_matrix(rec.p)
        Y[k] = rec.y
    return Cs, Y


@dataclass(frozen=True)
class FilterResult:
    means: np.ndarray
    covs: np.ndarray
    pred_means: np.ndarray
    pred_covs: np.ndarray
    loglik: float


def filter_arrays(sp: StackedParams, W_y: np.ndarray,
                  prior: tuple[np.ndarray, np.ndarray], Cs: np.ndarray,
                  Y: np.ndarray) -> FilterResult:
    """Forward pass over prebuilt observation tensors (hot path for EM)."""
    a0, S0 = prior
    # copies: inputs may be read-only views, the kernels want buffers
    args = (np.array(sp.A_x, dtype=float, order="C"),
            np.array(sp.drift, dtype=float),
            np.array(sp.W_x, dtype=float, order="C"),
            np.array(W_y, dtype=float, order="C"),
            np.array(a0, dtype=float), np.array(S0, dtype=float, order="C"),
            Cs, Y)
    if _backend.kernels_enabled() and Y.shape[1] <= 2:
        xs, Ps, aps, Sps, ll, status, _step = _backend._kernels.filter_pass(*args)
        if status == _backend._kernels.STATUS_OK:
            return FilterResult(xs, Ps, aps, Sps, ll)
        # degenerate step: recompute in the reference path, which raises
        # the canonical error (or succeeds if the kernel was conservative)
    xs, Ps, aps, Sps, ll = _pure.filter_pass(*args)
    return FilterResult(xs, Ps, aps, Sps, ll)


def filter_trajectory(records: Sequence[BlockRecord], sp: StackedParams,
                      W_y: np.ndarray, prior: tuple[np.ndarray, np.ndarray],
                      obs_matrix: ObsMatrixFn = observation_matrix) -> FilterResult:
    """Run the forward filter over a whole trajectory.

    ``prior`` is the predictive (a0, S0) for the first block's state.
    """
    Cs, Y = _build_obs_tensor(records, obs_matrix, sp.dim)
    return filter_arrays(sp, W_y, prior, Cs, Y)


def smooth_arrays(sp: StackedParams, W_y: np.ndarray,
                  prior: tuple[np.ndarray, np.ndarray], Cs: np.ndarray,
                  Y: np.ndarray) -> SmoothedTrajectory:
    """Filter plus RTS backward pass over prebuilt observation tensors."""
    fr = filter_arrays(sp, W_y, prior, Cs, Y)
    A = np.array(sp.A_x, dtype=float, order="C")
    if _backend.kernels_enabled():
        ms, Vs, lag, status, _step = _backend._kernels.smoother_pass(
            A, fr.means, fr.covs, fr.pred_means, fr.pred_covs)
        if status != _backend._kernels.STATUS_OK:
            ms, Vs, lag = _pure.smoother_pass(A, fr.means, fr.covs,
                                              fr.pred_means, fr.pred_covs)
    else:
        ms, Vs, lag = _pure.smoother_pass(A, fr.means, fr.covs,
                                          fr.pred_means, fr.pred_covs)
    return SmoothedTrajectory(means=ms, covs=Vs, lag_one=lag,
                              filtered_means=fr.means, filtered_covs=fr.covs,
                              loglik=fr.loglik)


def smooth(records: Sequence[BlockRecord], sp: StackedParams, W_y: np.ndarray,
           prior: tuple[np.ndarray, np.ndarray],
           obs_matrix: ObsMatrixFn = observation_matrix) -> SmoothedTrajectory:
    """RTS smoothing pass; also returns the forward-filter moments."""
    Cs, Y = _build_obs_tensor(records, obs_matrix, sp.dim)
    return smooth_arrays(sp, W_y, prior, Cs, Y)


def log_likelihood(records: Sequence[BlockRecord], sp: StackedParams,
                   W_y: np.ndarray, prior: tuple[np.ndarray, np.ndarray],
                   obs_matrix: ObsMatrixFn = observation_matrix) -> float:
    """Prediction-error decomposition of the trajectory log-likelihood."""
    return filter_trajectory(records, sp, W_y, prior, obs_matrix).loglik
