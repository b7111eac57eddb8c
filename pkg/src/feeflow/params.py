"""Model parameters and state-space plumbing.

The market model tracks, per block ``k``, a latent demand vector ``d`` and a
latent price-sensitivity matrix ``B``. Both mean-revert around long-term
levels, and realized block usage is ``y = d + B p + noise`` for posted
prices ``p``. Everything downstream (filtering, pricing, estimation) works
on the stacked state ``x = [d; vec(B)]``, which this module assembles.

Matrix vectorization is column-major throughout: ``vec(B)`` stacks the
columns of ``B``.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ValidationError

SCHEMA_VERSION = 1

# spectral radii this close to 1 are treated as unit roots and rejected
_RADIUS_TOL = 1e-9
# eigenvalue floor (relative to trace) below which a covariance is not PSD
_PSD_TOL = 1e-10


def vec(B: np.ndarray) -> np.ndarray:
    """Column-major vectorization of a matrix."""
    return np.asarray(B, dtype=float).flatten(order="F")


def unvec(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`vec` for an n-by-n matrix."""
    return np.asarray(v, dtype=float).reshape((n, n), order="F")


def spectral_radius(A: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def check_psd(M: np.ndarray, name: str, tol: float = _PSD_TOL) -> np.ndarray:
    """Symmetrize, then reject if any eigenvalue is materially negative."""
    M = symmetrize(np.asarray(M, dtype=float))
    if M.size:
        w = np.linalg.eigvalsh(M)
        scale = max(float(np.trace(M)), 1.0)
        if w[0] < -tol * scale:
            raise ValidationError(f"{name} is not positive semidefinite (min eig {w[0]:.3e})")
    return M


def psd_factor(M: np.ndarray) -> np.ndarray:
    """Factor L with L @ L.T == M for a PSD matrix (eigendecomposition based)."""
    M = symmetrize(np.asarray(M, dtype=float))
    w, V = np.linalg.eigh(M)
    return V * np.sqrt(np.clip(w, 0.0, None))


def _as_matrix(x, shape, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape != shape:
        raise ValidationError(f"{name} has shape {a.shape}, expected {shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class ModelParams:
    """Dynamics, noise, and objective parameters for an n-resource market.

    Attributes
    ----------
    n : number of resources.
    A_d, mu_d, W_d : mean-reversion matrix, long-term mean, and noise
        covariance of the latent demand (resource units, e.g. gas).
    A_B, mu_B, W_B : same for the vectorized sensitivity matrix ``vec(B)``
        (demand units per price unit).
    W_dB : cross-covariance between demand noise and sensitivity noise,
        shape (n, n**2); zero when the noises are independent.
    W_y : observation noise covariance of realized block usage.
    t : per-resource usage target.
    lam : weight on squared price updates in the control objective (>= 0).
    """

    n: int
    A_d: np.ndarray
    mu_d: np.ndarray
    W_d: np.ndarray
    A_B: np.ndarray
    mu_B: np.ndarray
    W_B: np.ndarray
    W_y: np.ndarray
    t: np.ndarray
    lam: float = 0.0
    W_dB: np.ndarray | None = None

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise ValidationError("n must be >= 1")
        m = n * n
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "A_d", _as_matrix(self.A_d, (n, n), "A_d"))
        object.__setattr__(self, "mu_d", _as_matrix(self.mu_d, (n,), "mu_d"))
        object.__setattr__(self, "A_B", _as_matrix(self.A_B, (m, m), "A_B"))
        object.__setattr__(self, "mu_B", _as_matrix(self.mu_B, (m,), "mu_B"))
        object.__setattr__(self, "t", _as_matrix(self.t, (n,), "t"))
        W_dB = np.zeros((n, m)) if self.W_dB is None else self.W_dB
        object.__setattr__(self, "W_dB", _as_matrix(W_dB, (n, m), "W_dB"))
        object.__setattr__(self, "W_d", check_psd(_as_matrix(self.W_d, (n, n), "W_d"), "W_d"))
        object.__setattr__(self, "W_B", check_psd(_as_matrix(self.W_B, (m, m), "W_B"), "W_B"))
        object.__setattr__(self, "W_y", check_psd(_as_matrix(self.W_y, (n, n), "W_y"), "W_y"))
        if self.lam < 0:
            raise ValidationError("lam must be >= 0")
        object.__setattr__(self, "lam", float(self.lam))
        for name, A in (("A_d", self.A_d), ("A_B", self.A_B)):
            rho = spectral_radius(A)
            if rho >= 1.0 - _RADIUS_TOL:
                raise ValidationError(f"{name} must mean-revert: spectral radius {rho:.12f} >= 1")
        # the stacked noise covariance must itself be PSD
        check_psd(self._stacked_W(), "W_x")
        for a in (self.A_d, self.mu_d, self.W_d, self.A_B, self.mu_B,
                  self.W_B, self.W_dB, self.W_y, self.t):
            a.setflags(write=False)

    def _stacked_W(self) -> np.ndarray:
        n, m = self.n, self.n * self.n
        W = np.zeros((n + m, n + m))
        W[:n, :n] = self.W_d
        W[n:, n:] = self.W_B
        W[:n, n:] = self.W_dB
        W[n:, :n] = self.W_dB.T
        return W

    def to_json_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "n": self.n,
            "A_d": self.A_d.tolist(),
            "mu_d": self.mu_d.tolist(),
            "W_d": self.W_d.tolist(),
            "A_B": self.A_B.tolist(),
            "mu_B": self.mu_B.tolist(),
            "W_B": self.W_B.tolist(),
            "W_dB": self.W_dB.tolist(),
            "W_y": self.W_y.tolist(),
            "t": self.t.tolist(),
            "lambda": self.lam,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ModelParams":
        if doc.get("version") != SCHEMA_VERSION:
            raise ValidationError(f"unsupported model document version {doc.get('version')!r}")
        try:
            return cls(
                n=doc["n"], A_d=doc["A_d"], mu_d=doc["mu_d"], W_d=doc["W_d"],
                A_B=doc["A_B"], mu_B=doc["mu_B"], W_B=doc["W_B"],
                W_dB=doc.get("W_dB"), W_y=doc["W_y"], t=doc["t"],
                lam=doc.get("lambda", 0.0),
            )
        except KeyError as exc:
            raise ValidationError(f"model document missing field {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "ModelParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class LinearStateModel:
    """Generic mean-reverting linear transition: x' = (I-A) mu + A x + noise."""

    A_x: np.ndarray
    mu_x: np.ndarray
    W_x: np.ndarray

    @property
    def dim(self) -> int:
        return self.A_x.shape[0]

    @functools.cached_property
    def drift(self) -> np.ndarray:
        """(I - A) mu, the constant term of the transition."""
        return (np.eye(self.dim) - self.A_x) @ self.mu_x


@dataclass(frozen=True)
class StackedParams(LinearStateModel):
    """Transition parameters of the stacked state ``x = [d; vec(B)]``."""

    n: int = 0

    def split_A(self) -> tuple[np.ndarray, np.ndarray]:
        """Extract the (A_d, A_B) diagonal blocks."""
        n = self.n
        return self.A_x[:n, :n].copy(), self.A_x[n:, n:].copy()

    def split_mu(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.n
        return self.mu_x[:n].copy(), self.mu_x[n:].copy()

    def split_W(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Extract (W_d, W_B, W_dB) from the stacked covariance."""
        n = self.n
        return (self.W_x[:n, :n].copy(), self.W_x[n:, n:].copy(),
                self.W_x[:n, n:].copy())


def stack_params(mp: ModelParams) -> StackedParams:
    """Assemble block transition parameters for the stacked state.

    ``A_x`` is block diagonal with blocks ``A_d`` and ``A_B``; ``W_x``
    carries ``W_dB`` in the off-diagonal block.
    """
    n, m = mp.n, mp.n * mp.n
    A = np.zeros((n + m, n + m))
    A[:n, :n] = mp.A_d
    A[n:, n:] = mp.A_B
    mu = np.concatenate([mp.mu_d, mp.mu_B])
    W = check_psd(mp._stacked_W(), "W_x")
    for a in (A, mu, W):
        a.setflags(write=False)
    return StackedParams(n=n, A_x=A, mu_x=mu, W_x=W)


def observation_matrix(p: np.ndarray) -> np.ndarray:
    """Map the stacked state to expected block usage at prices ``p``.

    Returns C with ``C @ [d; vec(B)] == d + B @ p`` (column-major vec), i.e.
    ``C = [I, kron(p.T, I)]``.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or not np.all(np.isfinite(p)):
        raise ValidationError("price vector must be a finite 1-d array")
    n = p.shape[0]
    if n == 1:
        return np.array([[1.0, p[0]]])
    return np.hstack([np.eye(n), np.kron(p.reshape(1, n), np.eye(n))])


@dataclass(frozen=True)
class HiddenState:
    """Latent (demand, sensitivity) pair at one block."""

    d: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        B = np.asarray(self.B, dtype=float)
        n = d.shape[0]
        object.__setattr__(self, "d", _as_matrix(d, (n,), "d"))
        object.__setattr__(self, "B", _as_matrix(B, (n, n), "B"))

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.d, vec(self.B)])

    @classmethod
    def from_stacked(cls, x: np.ndarray, n: int) -> "HiddenState":
        x = np.asarray(x, dtype=float)
        return cls(d=x[:n], B=unvec(x[n:], n))


@dataclass(frozen=True)
class BlockRecord:
    """One observed block: posted prices and realized usage."""

    index: int
    p: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        n = p.shape[0]
        object.__setattr__(self, "index", int(self.index))
        object.__setattr__(self, "p", _as_matrix(p, (n,), "p"))
        object.__setattr__(self, "y", _as_matrix(np.asarray(self.y, dtype=float), (n,), "y"))


def validate_trajectory(records: list[BlockRecord]) -> None:
    """Check strictly increasing block indices."""
    for prev, cur in zip(records, records[1:]):
        if cur.index <= prev.index:
            raise ValidationError(
                f"block indices must be strictly increasing ({prev.index} then {cur.index})")


def stationary_state_prior(sp: StackedParams) -> tuple[np.ndarray, np.ndarray]:
    """Long-run mean and covariance of the stacked state.

    Solves the discrete Lyapunov equation S = A S A' + W; a convenient
    default prior when none was estimated.
    """
    S = scipy.linalg.solve_discrete_lyapunov(sp.A_x, sp.W_x)
    return sp.mu_x.copy(), symmetrize(S)
