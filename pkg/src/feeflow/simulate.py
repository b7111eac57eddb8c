"""Ground-truth simulation of the latent market model.

The hidden state evolves autonomously, so common-random-number comparisons
across policies come free: running two policies from the same seed sees the
exact same demand/sensitivity path and observation noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError
from .params import (BlockRecord, HiddenState, ModelParams, psd_factor,
                     stack_params, unvec)


class PriceRule:
    """Protocol for stateful policies: next_price() then observe(p, y)."""

    def next_price(self) -> np.ndarray:
        raise NotImplementedError

    def observe(self, p: np.ndarray, y: np.ndarray) -> None:
        raise NotImplementedError


class _CallableRule(PriceRule):
    """Adapter exposing the history-callable interface as a PriceRule."""

    def __init__(self, fn: Callable[[Sequence[BlockRecord]], np.ndarray]):
        self._fn = fn
        self._history: list[BlockRecord] = []

    def next_price(self) -> np.ndarray:
        return self._fn(self._history)

    def observe(self, p, y) -> None:
        self._history.append(BlockRecord(index=len(self._history), p=p, y=y))


@dataclass(frozen=True)
class Trajectory:
    states: list[HiddenState]
    records: list[BlockRecord]

    def prices(self) -> np.ndarray:
        return np.array([r.p for r in self.records])

    def usage(self) -> np.ndarray:
        return np.array([r.y for r in self.records])


def simulate_truth(mp: ModelParams, x0: HiddenState, policy, K: int,
                   seed) -> Trajectory:
    """Simulate K blocks under a price policy.

    ``policy`` is either a :class:`PriceRule` or a callable taking the list
    of past block records; either way it sees only past observations.
    ``seed`` is an int or a ``numpy.random.Generator``; all noise is drawn
    up front so trajectories are deterministic given the seed.
    """
    if K < 1:
        raise ValidationError("K must be >= 1")
    sp = stack_params(mp)
    n, mdim = mp.n, sp.dim
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    Lx = psd_factor(sp.W_x)
    Ly = psd_factor(mp.W_y)
    eps_x = rng.standard_normal((K, mdim)) @ Lx.T
    eps_y = rng.standard_normal((K, n)) @ Ly.T

    rule = policy if isinstance(policy, PriceRule) or hasattr(policy, "next_price") \
        else _CallableRule(policy)

    c = (np.eye(mdim) - sp.A_x) @ sp.mu_x
    x = x0.stacked()
    states = [HiddenState.from_stacked(x, n)]
    for k in range(K - 1):
        x = c + sp.A_x @ x + eps_x[k]
        states.append(HiddenState.from_stacked(x, n))

    records = []
    for k in range(K):
        p = np.asarray(rule.next_price(), dtype=float).reshape(n)
        if not np.all(np.isfinite(p)):
            raise ValidationError(f"policy produced non-finite price at block {k}: {p}")
        y = states[k].d + states[k].B @ p + eps_y[k]
        rec = BlockRecord(index=k, p=p, y=y)
        records.append(rec)
        rule.observe(p, y)
    return Trajectory(states=states, records=records)


def draw_state_noise(mp: ModelParams, draws: int, seed) -> np.ndarray:
    """Sample stacked-state noise; exposed for distribution checks."""
    sp = stack_params(mp)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.standard_normal((draws, sp.dim)) @ psd_factor(sp.W_x).T
