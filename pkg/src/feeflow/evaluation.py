"""Policy evaluation harness.

Runs pricing policies over simulated (or replayed historical) trajectories
and reports the usage/price-smoothness metrics, optionally split by demand
regime. Policies compared under the same seed see identical latent demand
paths and noise draws, so differences are attributable to the policy alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (EmptyTrajectory, NumericalError, SeriesTooShort,
                     SingularB, ValidationError)
from .kalman import BeliefState, predict, update
from .params import (BlockRecord, HiddenState, ModelParams, psd_factor,
                     stack_params, stationary_state_prior, unvec)
from .policies import (EigenModel, eigen_price, eip1559_update, eip4844_update,
                       lindy0_price, mpc_price, price_from_predictive)
from .simulate import PriceRule, simulate_truth

log = logging.getLogger(__name__)

DEFAULT_BLOCK_LIMIT = 30e6
DEFAULT_TARGET = 15e6

REGIME_OTHER, REGIME_STABLE, REGIME_SPIKE = 0, 1, 2
REGIME_NAMES = {REGIME_OTHER: "other", REGIME_STABLE: "stable", REGIME_SPIKE: "spike"}

VALID_POLICIES = ("lindy0", "lindy-lambda", "eigen", "eip1559", "eip4844")


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class MetricsReport:
    """Per-resource performance metrics for one policy run.

    Uses population variance so the identity rmsd**2 == bias**2 + sd**2 is
    exact; rmsu averages over the observed consecutive price differences.
    """

    policy: str
    blocks: int
    bias: np.ndarray
    sd: np.ndarray
    rmsd: np.ndarray
    phi95: np.ndarray
    rmsu: np.ndarray

    def to_dict(self) -> dict:
        out = {"policy": self.policy, "blocks": self.blocks}
        n = self.bias.shape[0]
        for name in ("bias", "sd", "rmsd", "phi95", "rmsu"):
            v = getattr(self, name)
            if n == 1:
                out[name] = float(v[0])
            else:
                for i in range(n):
                    out[f"{name}_{i}"] = float(v[i])
        return out


def _metrics_from_arrays(Y: np.ndarray, U: np.ndarray, t: np.ndarray,
                         block_limit, policy: str) -> MetricsReport:
    bias = (Y - t).mean(axis=0)
    sd = Y.std(axis=0)  # population convention
    rmsd = np.sqrt(bias ** 2 + sd ** 2)
    phi95 = (Y > 0.95 * np.asarray(block_limit, dtype=float)).mean(axis=0)
    rmsu = np.sqrt((U ** 2).mean(axis=0)) if U.shape[0] else np.zeros(Y.shape[1])
    return MetricsReport(policy=policy, blocks=Y.shape[0], bias=bias, sd=sd,
                         rmsd=rmsd, phi95=phi95, rmsu=rmsu)


def compute_metrics(records: list[BlockRecord], t,
                    block_limit=DEFAULT_BLOCK_LIMIT,
                    policy: str = "") -> MetricsReport:
    """Bias / spread / target deviation / near-full fraction / update size."""
    if len(records) < 2:
        raise EmptyTrajectory("need at least 2 blocks to compute metrics")
    Y = np.array([r.y for r in records])
    P = np.array([r.p for r in records])
    return _metrics_from_arrays(Y, np.diff(P, axis=0), np.asarray(t, dtype=float),
                                block_limit, policy)


@dataclass(frozen=True)
class RegimeLabels:
    """Per-block demand regime from a centered moving average of usage."""

    labels: np.ndarray    # int codes, see REGIME_*
    ma: np.ndarray        # NaN where the window does not fit
    window: int

    def counts(self) -> dict:
        return {name: int(np.sum(self.labels == code))
                for code, name in REGIME_NAMES.items()}


def classify_regimes(gas_series, window: int = 25, spike_thresh: float = 20e6,
                     stable_band=(13.5e6, 16.5e6)) -> RegimeLabels:
    """Label blocks as demand spikes / stable demand / other.

    The moving average is symmetric, so the first and last half-window
    blocks stay unlabeled ("other").
    """
    gas = np.asarray(gas_series, dtype=float)
    K = gas.shape[0]
    if K < window:
        raise SeriesTooShort(f"need at least {window} blocks, got {K}")
    half = window // 2
    ma = np.full(K, np.nan)
    ma[half:K - half] = np.convolve(gas, np.ones(window) / window, mode="valid")
    labels = np.full(K, REGIME_OTHER, dtype=np.int8)
    interior = ~np.isnan(ma)
    labels[interior & (ma > spike_thresh)] = REGIME_SPIKE
    labels[interior & (ma >= stable_band[0]) & (ma <= stable_band[1])] = REGIME_STABLE
    return RegimeLabels(labels=labels, ma=ma, window=window)


# ---------------------------------------------------------------------------
# policy runners (stateful adapters around the pure pricing rules)

class FilterRunner(PriceRule):
    """Shared belief-tracking machinery for model-based policies."""

    def __init__(self, mp: ModelParams, prior, t):
        self.mp = mp
        self.sp = stack_params(mp)
        self.t = np.asarray(t, dtype=float)
        self.prior = (np.asarray(prior[0], dtype=float), np.asarray(prior[1], dtype=float))
        self.belief: BeliefState | None = None
        self._k = 0

    def _predictive(self):
        if self.belief is None:
            return self.prior
        return predict(self.belief, self.sp)

    def observe(self, p, y) -> None:
        a, S = self._predictive()
        self.belief = update(a, S, p, y, self.mp.W_y, k=self._k)
        self._k += 1


class Lindy0Runner(FilterRunner):
    """Unregularized moment-matching price rule."""

    def next_price(self):
        a, S = self._predictive()
        return price_from_predictive(a, S, self.mp.n, self.t)


class LqgRunner(FilterRunner):
    """Regularized receding-horizon rule; re-plans every block."""

    def __init__(self, mp, prior, t, lam, horizon=None, tol=1e-10,
                 truncation_tol=1e-8, p0=None):
        super().__init__(mp, prior, t)
        if lam <= 0:
            raise ValidationError("lindy-lambda requires lambda > 0")
        self.lam = float(lam)
        self.horizon = horizon
        self.tol = tol
        self.truncation_tol = truncation_tol
        self.p0 = None if p0 is None else np.asarray(p0, dtype=float)
        self._last_p = None

    def next_price(self):
        if self.belief is None:
            p = clearing_price_at_prior(self.mp, self.prior, self.t) \
                if self.p0 is None else self.p0
        else:
            p = mpc_price(self.belief, self.mp, self.t, self.lam,
                          p_k=self._last_p, horizon=self.horizon, tol=self.tol,
                          truncation_tol=self.truncation_tol)
        return p

    def observe(self, p, y):
        self._last_p = np.asarray(p, dtype=float)
        super().observe(p, y)


class EigenRunner(PriceRule):
    """Decoupled per-bundle pricing in rotated coordinates."""

    def __init__(self, em: EigenModel, prior, t):
        self.em = em
        self.model = em.state_model()
        self.t = np.asarray(t, dtype=float)
        self.prior = (np.asarray(prior[0], dtype=float), np.asarray(prior[1], dtype=float))
        self.belief: BeliefState | None = None
        self._k = 0

    def next_price(self):
        if self.belief is None:
            # the prior already is the one-step predictive for block 0
            return _eigen_price_from_predictive(self.prior[0], self.prior[1],
                                                self.em, self.t)
        return eigen_price(self.belief, self.em, self.t)

    def observe(self, p, y):
        p_t = self.em.to_eigen_price(np.asarray(p, dtype=float))
        y_t = self.em.to_eigen_usage(np.asarray(y, dtype=float))
        if self.belief is None:
            a, S = self.prior
        else:
            a, S = predict(self.belief, self.model)
        self.belief = update(a, S, p_t, y_t, self.em.W_y, k=self._k,
                             obs_matrix=self.em.obs_matrix)
        self._k += 1


def _eigen_price_from_predictive(a, S, em: EigenModel, t):
    from .errors import SingularMoment
    n = em.n
    t_tilde = em.U.T @ np.asarray(t, dtype=float)
    p_tilde = np.empty(n)
    for i in range(n):
        e2 = a[n + i] ** 2 + S[n + i, n + i]
        if e2 < 1e-15:
            raise SingularMoment(f"sensitivity second moment vanishes in coordinate {i}")
        p_tilde[i] = (a[n + i] * (t_tilde[i] - a[i]) - S[i, n + i]) / e2
    return em.V @ p_tilde


class Eip1559Runner(PriceRule):
    """Constant-step multiplicative rule on each resource.

    The deployed rule consumes physical gas quantities, which live in
    [0, block_limit] by construction; observations from the unbounded
    linear world are clamped into that range before entering the rule
    (otherwise a strongly negative draw flips the price sign and the
    multiplicative update diverges).
    """

    def __init__(self, t, p0, gamma: float = 0.125,
                 block_limit=DEFAULT_BLOCK_LIMIT):
        self.t = np.asarray(t, dtype=float)
        self.gamma = gamma
        self.p0 = np.asarray(p0, dtype=float)
        self.block_limit = block_limit
        self._last = None

    def next_price(self):
        if self._last is None:
            return self.p0
        p, y = self._last
        return eip1559_update(p, y, self.t, self.gamma)

    def observe(self, p, y):
        y = np.clip(np.asarray(y, dtype=float), 0.0, self.block_limit)
        self._last = (np.asarray(p, dtype=float), y)


class Eip4844Runner(Eip1559Runner):
    """Two-resource variant with independent coordinate updates."""

    def next_price(self):
        if self._last is None:
            return self.p0
        p, y = self._last
        return eip4844_update(p, y, self.t)


def clearing_price_at_prior(mp: ModelParams, prior, t) -> np.ndarray:
    """Price that clears the prior-mean demand; default starting price."""
    a0 = np.asarray(prior[0], dtype=float)
    B0 = unvec(a0[mp.n:], mp.n)
    if np.linalg.cond(B0) > 1e12:
        raise SingularB("prior-mean sensitivity is singular; pass an explicit p0")
    return np.linalg.solve(B0, np.asarray(t, dtype=float) - a0[:mp.n])


@dataclass(frozen=True)
class PolicySpec:
    """CLI/config-facing policy selection."""

    name: str
    label: str = ""
    knobs: dict = field(default_factory=dict)

    def display(self) -> str:
        return self.label or self.name


def make_policy(spec: PolicySpec, mp: ModelParams, prior, t,
                eigen_model: EigenModel | None = None,
                eigen_prior=None) -> PriceRule:
    """Instantiate a fresh runner for one evaluation cell."""
    name = spec.name
    knobs = spec.knobs
    if name not in VALID_POLICIES:
        raise ValidationError(
            f"unknown policy {name!r}; valid policies: {', '.join(VALID_POLICIES)}")
    if name == "lindy0":
        return Lindy0Runner(mp, prior, t)
    if name == "lindy-lambda":
        lam = knobs.get("lambda", mp.lam)
        return LqgRunner(mp, prior, t, lam=lam, horizon=knobs.get("horizon"),
                         tol=knobs.get("tol", 1e-10),
                         truncation_tol=knobs.get("truncation_tol", 1e-8),
                         p0=knobs.get("p0"))
    if name == "eigen":
        if eigen_model is None:
            raise ValidationError("eigen policy needs an eigen model document")
        ep = eigen_prior
        if ep is None:
            ep = stationary_state_prior(eigen_model.state_model())
        return EigenRunner(eigen_model, ep, t)
    p0 = knobs.get("p0")
    p0 = clearing_price_at_prior(mp, prior, t) if p0 is None \
        else np.asarray(p0, dtype=float)
    limit = knobs.get("block_limit", DEFAULT_BLOCK_LIMIT)
    if name == "eip1559":
        return Eip1559Runner(t, p0=p0, gamma=knobs.get("gamma", 0.125),
                             block_limit=limit)
    return Eip4844Runner(t, p0=p0, block_limit=limit)


# ---------------------------------------------------------------------------
# head-to-head engine

@dataclass
class CellResult:
    policy: str
    seed: int
    report: MetricsReport | None
    per_regime: dict
    error: str | None = None
    prices: np.ndarray | None = None
    usage: np.ndarray | None = None


@dataclass
class HeadToHeadResult:
    cells: list

    def reports(self, policy: str) -> list:
        return [c.report for c in self.cells if c.policy == policy and c.report]

    def mean_metric(self, policy: str, metric: str, resource: int = 0) -> float:
        vals = [getattr(r, metric)[resource] for r in self.reports(policy)]
        if not vals:
            raise ValidationError(f"no successful runs for policy {policy!r}")
        return float(np.mean(vals))

    def to_rows(self) -> list:
        rows = []
        for c in self.cells:
            if c.error is not None:
                rows.append({"policy": c.policy, "seed": c.seed, "regime": "all",
                             "error": c.error})
                continue
            base = {"policy": c.policy, "seed": c.seed, "regime": "all", "error": ""}
            base.update(c.report.to_dict())
            rows.append(base)
            for regime, rep in c.per_regime.items():
                if rep is None:
                    continue
                row = {"policy": c.policy, "seed": c.seed, "regime": regime, "error": ""}
                row.update(rep.to_dict())
                rows.append(row)
        return rows


def _regime_reports(Y, U, t, block_limit, policy, window):
    out = {name: None for name in REGIME_NAMES.values()}
    if Y.shape[0] < window:
        return out
    regimes = classify_regimes(Y[:, 0], window=window)
    for code, name in REGIME_NAMES.items():
        mask = regimes.labels == code
        if mask.sum() < 2:
            continue
        out[name] = _metrics_from_arrays(Y[mask], U[mask[1:]], t, block_limit,
                                         policy)
    return out


def _run_replay_cell(runner, d_path, B_path, W_y, seed):
    K, n = d_path.shape
    rng = np.random.default_rng(seed)
    eps_y = rng.standard_normal((K, n)) @ psd_factor(W_y).T
    P = np.empty((K, n))
    Y = np.empty((K, n))
    for k in range(K):
        p = np.asarray(runner.next_price(), dtype=float).reshape(n)
        if not np.all(np.isfinite(p)):
            raise ValidationError(f"policy produced non-finite price at block {k}")
        y = d_path[k] + B_path[k] @ p + eps_y[k]
        P[k] = p
        Y[k] = y
        runner.observe(p, y)
    return P, Y


def run_headtohead(mp: ModelParams, policy_specs, K: int, seeds, *,
                   mode: str = "synthetic", prior=None, records=None,
                   theta=None, t=None, block_limit=DEFAULT_BLOCK_LIMIT,
                   eigen_model=None, regime_window: int = 25,
                   keep_trajectories: bool = False) -> HeadToHeadResult:
    """Paired comparison of policies across seeds.

    In synthetic mode each seed fixes the latent demand path and every
    noise draw, shared by all policies. Replay mode reconstructs a
    counterfactual world from smoothed historical state estimates: usage
    under new prices is model-implied, an approximation by necessity since
    true counterfactual demand is unobservable.
    """
    t = mp.t if t is None else np.asarray(t, dtype=float)
    if prior is None:
        prior = stationary_state_prior(stack_params(mp))
    specs = [s if isinstance(s, PolicySpec) else PolicySpec(**s) for s in policy_specs]

    d_path = B_path = None
    if mode == "replay":
        if records is None or theta is None:
            raise ValidationError("replay mode needs historical records and a "
                                  "fitted parameter estimate")
        from .kalman import smooth
        sm = smooth(records, theta.state_model(), theta.W_y, theta.prior())
        n = mp.n
        d_path = sm.means[:, :n]
        B_path = np.array([unvec(m[n:], n) for m in sm.means])
        K = len(records)
    elif mode != "synthetic":
        raise ValidationError(f"unknown mode {mode!r}; use 'synthetic' or 'replay'")

    cells = []
    for seed in seeds:
        for spec in specs:
            label = spec.display()
            try:
                runner = make_policy(spec, mp, prior, t, eigen_model=eigen_model)
                if mode == "synthetic":
                    rng = np.random.default_rng(seed)
                    x0_vec = prior[0] + psd_factor(prior[1]) @ \
                        rng.standard_normal(prior[0].shape[0])
                    x0 = HiddenState.from_stacked(x0_vec, mp.n)
                    traj = simulate_truth(mp, x0, runner, K, seed=rng)
                    P, Y = traj.prices(), traj.usage()
                else:
                    P, Y = _run_replay_cell(runner, d_path, B_path,
                                            theta.W_y, seed)
            except (NumericalError, ValidationError) as exc:
                log.warning("policy %s failed on seed %s: %s", label, seed, exc)
                cells.append(CellResult(policy=label, seed=seed, report=None,
                                        per_regime={}, error=str(exc)))
                continue
            U = np.diff(P, axis=0)
            report = _metrics_from_arrays(Y, U, t, block_limit, label)
            per_regime = _regime_reports(Y, U, t, block_limit, label, regime_window)
            cells.append(CellResult(
                policy=label, seed=seed, report=report, per_regime=per_regime,
                prices=P if keep_trajectories else None,
                usage=Y if keep_trajectories else None))
    return HeadToHeadResult(cells=cells)
