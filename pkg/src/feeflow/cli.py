"""Command-line workflows: simulate, estimate, evaluate, export.

All tabular I/O is CSV, all parameter/report documents are JSON; see
FORMATS.md for the field names. Exit codes: 0 success, 1 validation
problem, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (EmptyTrajectory, MonotonicityError, NumericalError,
                     ParseError, ValidationError)
from .estimation import ThetaEstimate, fit_em, initial_theta
from .evaluation import (DEFAULT_BLOCK_LIMIT, VALID_POLICIES, PolicySpec,
                         compute_metrics, make_policy, run_headtohead)
from .params import (BlockRecord, HiddenState, ModelParams, stack_params,
                     stationary_state_prior)
from .policies import EigenModel
from .simulate import simulate_truth

log = logging.getLogger(__name__)

# full float64 round trip in text form
_FLOAT_FMT = "%.17g"

DEFAULT_COLUMN_MAP = {"block": "block_number", "price": ["base_fee"],
                      "demand": ["gas_used"]}


@dataclass(frozen=True)
class HistoricalRow:
    """One raw data row: block number, per-resource fee and usage."""

    block_number: int
    base_fee: np.ndarray
    gas_used: np.ndarray


@dataclass
class RunConfig:
    """Parsed configuration for one CLI invocation."""

    out: Path
    model_params: Path | None = None
    policy: dict = field(default_factory=dict)
    policies: list = field(default_factory=list)
    horizon_blocks: int = 1000
    seed: int = 0
    seeds: list = field(default_factory=list)
    data: Path | None = None
    theta: Path | None = None
    column_map: dict = field(default_factory=lambda: dict(DEFAULT_COLUMN_MAP))
    rescale_blocks: bool = False
    mode: str = "synthetic"
    x0: str = "prior-mean"
    block_limit: float = DEFAULT_BLOCK_LIMIT
    eigen_model: Path | None = None
    max_iters: int = 200
    ll_tol: float = 1e-4
    write_trajectories: bool = False
    trajectories: list = field(default_factory=list)
    bins: int = 60

    @classmethod
    def from_file(cls, path, overrides: dict) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError as exc:
            raise ValidationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        doc.update({k: v for k, v in overrides.items() if v is not None})
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**{**{"out": "out"}, **doc})
        cfg.out = Path(cfg.out)
        for name in ("model_params", "data", "theta", "eigen_model"):
            v = getattr(cfg, name)
            if v is not None:
                setattr(cfg, name, Path(v))
        return cfg


# ---------------------------------------------------------------------------
# CSV ingestion

def _column_lists(column_map: dict) -> tuple[str, list, list]:
    cmap = {**DEFAULT_COLUMN_MAP, **(column_map or {})}
    price = cmap["price"]
    demand = cmap["demand"]
    price = [price] if isinstance(price, str) else list(price)
    demand = [demand] if isinstance(demand, str) else list(demand)
    if len(price) != len(demand):
        raise ValidationError("price and demand column lists must have equal length")
    return cmap["block"], price, demand


def ingest_csv(path, column_map: dict | None = None,
               rescale_blocks: bool = False) -> list[BlockRecord]:
    """Read (block, fee, usage) rows into block records.

    Block numbers must be strictly increasing; gaps are allowed but
    reported. ``rescale_blocks`` renumbers so the first block becomes 0.
    """
    block_col, price_cols, demand_cols = _column_lists(column_map or {})
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError as exc:
        raise ValidationError(f"data file not found: {path}") from exc
    rows: list[HistoricalRow] = []
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyTrajectory(f"{path} has no header row")
        missing = [c for c in [block_col] + price_cols + demand_cols
                   if c not in reader.fieldnames]
        if missing:
            raise ParseError(1, f"missing columns {missing} in header")
        for lineno, row in enumerate(reader, start=2):
            try:
                bn = int(float(row[block_col]))
                fee = np.array([float(row[c]) for c in price_cols])
                gas = np.array([float(row[c]) for c in demand_cols])
            except (TypeError, ValueError) as exc:
                raise ParseError(lineno, f"unparseable numeric field ({exc})") from exc
            if not (np.all(np.isfinite(fee)) and np.all(np.isfinite(gas))):
                raise ParseError(lineno, "non-finite value")
            if bn < 0 or np.any(fee < 0) or np.any(gas < 0):
                raise ParseError(lineno, "negative block number, fee, or gas")
            rows.append(HistoricalRow(block_number=bn, base_fee=fee, gas_used=gas))
    if not rows:
        raise EmptyTrajectory(f"{path} contains a header but no data rows")
    gaps = 0
    for prev, cur in zip(rows, rows[1:]):
        if cur.block_number <= prev.block_number:
            raise MonotonicityError(
                f"block numbers must strictly increase "
                f"({prev.block_number} then {cur.block_number})")
        gaps += cur.block_number - prev.block_number - 1
    if gaps:
        log.warning("%s: %d missing block(s) inside the range", path, gaps)
    base = rows[0].block_number if rescale_blocks else 0
    return [BlockRecord(index=r.block_number - base, p=r.base_fee, y=r.gas_used)
            for r in rows]


# ---------------------------------------------------------------------------
# document helpers

def load_model_document(path) -> tuple[ModelParams, tuple | None]:
    """Model JSON plus its optional prior block."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"model file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"model file is not valid JSON: {exc}") from exc
    mp = ModelParams.from_json_dict(doc)
    prior = None
    if "prior" in doc:
        prior = (np.asarray(doc["prior"]["a0"], dtype=float),
                 np.asarray(doc["prior"]["S0"], dtype=float))
    return mp, prior


def theta_from_model(mp: ModelParams, prior=None) -> ThetaEstimate:
    sp = stack_params(mp)
    if prior is None:
        prior = stationary_state_prior(sp)
    return ThetaEstimate(n=mp.n, mu_x=sp.mu_x.copy(), A_x=sp.A_x.copy(),
                         W_x=sp.W_x.copy(), W_y=mp.W_y.copy(),
                         a0=np.asarray(prior[0], dtype=float),
                         S0=np.asarray(prior[1], dtype=float))


def load_eigen_document(path) -> EigenModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"eigen model file not found: {path}") from exc
    try:
        return EigenModel(
            n=doc["n"], U=np.array(doc["U"], dtype=float),
            V=np.array(doc["V"], dtype=float),
            A_d=np.array(doc["A_d"], dtype=float),
            mu_d=np.array(doc["mu_d"], dtype=float),
            W_d=np.array(doc["W_d"], dtype=float),
            A_delta=np.array(doc["A_delta"], dtype=float),
            mu_delta=np.array(doc["mu_delta"], dtype=float),
            W_delta=np.array(doc["W_delta"], dtype=float),
            W_cross=np.array(doc["W_cross"], dtype=float),
            W_y=np.array(doc["W_y"], dtype=float))
    except KeyError as exc:
        raise ValidationError(f"eigen model document missing field {exc}") from exc


def _policy_spec(cfg_policy: dict) -> PolicySpec:
    doc = dict(cfg_policy)
    name = doc.pop("name", None)
    if name is None:
        raise ValidationError("policy spec needs a 'name'")
    if name not in VALID_POLICIES:
        raise ValidationError(
            f"unknown policy {name!r}; valid policies: {', '.join(VALID_POLICIES)}")
    label = doc.pop("label", "")
    return PolicySpec(name=name, label=label, knobs=doc)


# ---------------------------------------------------------------------------
# writers

def _write_trajectory_csv(path, records: list[BlockRecord]) -> None:
    n = records[0].p.shape[0]
    price_cols = ["base_fee"] if n == 1 else [f"base_fee_{i}" for i in range(n)]
    gas_cols = ["gas_used"] if n == 1 else [f"gas_used_{i}" for i in range(n)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["block_number"] + price_cols + gas_cols)
        for r in records:
            w.writerow([r.index] + [_FLOAT_FMT % v for v in r.p]
                       + [_FLOAT_FMT % v for v in r.y])


def _write_rows_csv(path, rows: list, fieldnames: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, restval="")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def _histogram_rows(values: np.ndarray, bins: int, label: str) -> list:
    counts, edges = np.histogram(values, bins=bins)
    return [{"series": label, "bin_left": _FLOAT_FMT % edges[i],
             "bin_right": _FLOAT_FMT % edges[i + 1], "count": int(counts[i])}
            for i in range(len(counts))]


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.model_params is None:
        raise ValidationError("simulate needs 'model_params' in the config")
    mp, prior = load_model_document(cfg.model_params)
    sp = stack_params(mp)
    if prior is None:
        prior = stationary_state_prior(sp)
    spec = _policy_spec(cfg.policy or {"name": "eip1559"})
    eigen = load_eigen_document(cfg.eigen_model) if cfg.eigen_model else None
    runner = make_policy(spec, mp, prior, mp.t, eigen_model=eigen)
    rng = np.random.default_rng(cfg.seed)
    if cfg.x0 == "prior-sample":
        from .params import psd_factor
        x0_vec = prior[0] + psd_factor(prior[1]) @ rng.standard_normal(prior[0].shape[0])
    elif cfg.x0 == "prior-mean":
        x0_vec = prior[0]
    else:
        raise ValidationError("x0 must be 'prior-mean' or 'prior-sample'")
    traj = simulate_truth(mp, HiddenState.from_stacked(x0_vec, mp.n), runner,
                          cfg.horizon_blocks, seed=rng)
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_trajectory_csv(cfg.out / "trajectory.csv", traj.records)
    report = compute_metrics(traj.records, mp.t, cfg.block_limit, spec.display())
    with open(cfg.out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    print(f"simulate: wrote {cfg.horizon_blocks} blocks to {cfg.out}")
    return 0


def cmd_estimate(cfg: RunConfig) -> int:
    if cfg.data is None:
        raise ValidationError("estimate needs 'data' in the config")
    records = ingest_csv(cfg.data, cfg.column_map, cfg.rescale_blocks)
    n = records[0].p.shape[0]
    if cfg.theta is not None:
        mp0, prior0 = load_model_document(cfg.theta)
        theta0 = theta_from_model(mp0, prior0)
    else:
        theta0 = initial_theta(records, n)
    theta, trace = fit_em(records, theta0, max_iters=cfg.max_iters,
                          ll_tol=cfg.ll_tol)
    cfg.out.mkdir(parents=True, exist_ok=True)
    t = None
    lam = 0.0
    if cfg.model_params is not None:
        mp_ref, _ = load_model_document(cfg.model_params)
        t, lam = mp_ref.t, mp_ref.lam
    with open(cfg.out / "theta.json", "w", encoding="utf-8") as fh:
        json.dump(theta.to_json_dict(t=t, lam=lam), fh, indent=2)
    _write_rows_csv(cfg.out / "em_trace.csv",
                    [{"iteration": i, "log_likelihood": _FLOAT_FMT % ll}
                     for i, ll in enumerate(trace.loglik)],
                    ["iteration", "log_likelihood"])
    print(f"estimate: {len(trace.loglik)} iterations ({trace.reason}), "
          f"final log-likelihood {trace.loglik[-1]:.6f}")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    if cfg.model_params is None:
        raise ValidationError("evaluate needs 'model_params' in the config")
    mp, prior = load_model_document(cfg.model_params)
    specs = [_policy_spec(p) for p in (cfg.policies or [cfg.policy])]
    if not specs:
        raise ValidationError("evaluate needs a 'policies' list in the config")
    seeds = cfg.seeds or [cfg.seed]
    eigen = load_eigen_document(cfg.eigen_model) if cfg.eigen_model else None
    records = theta = None
    if cfg.mode == "replay":
        if cfg.data is None or cfg.theta is None:
            raise ValidationError("replay mode needs 'data' and 'theta' in the config")
        records = ingest_csv(cfg.data, cfg.column_map, cfg.rescale_blocks)
        mp_t, prior_t = load_model_document(cfg.theta)
        theta = theta_from_model(mp_t, prior_t)
    res = run_headtohead(mp, specs, cfg.horizon_blocks, seeds, mode=cfg.mode,
                         prior=prior, records=records, theta=theta,
                         block_limit=cfg.block_limit, eigen_model=eigen,
                         keep_trajectories=cfg.write_trajectories)
    cfg.out.mkdir(parents=True, exist_ok=True)
    rows = res.to_rows()
    fields = ["policy", "seed", "regime", "error", "blocks"]
    metric_fields = sorted({k for row in rows for k in row} - set(fields))
    _write_rows_csv(cfg.out / "headtohead.csv", rows, fields + metric_fields)
    with open(cfg.out / "headtohead.json", "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
    if cfg.write_trajectories:
        first_seed = seeds[0]
        for cell in res.cells:
            if cell.seed != first_seed or cell.prices is None:
                continue
            recs = [BlockRecord(index=k, p=cell.prices[k], y=cell.usage[k])
                    for k in range(cell.prices.shape[0])]
            safe = cell.policy.replace("/", "_").replace(" ", "_")
            _write_trajectory_csv(cfg.out / f"trace_{safe}_seed{cell.seed}.csv", recs)
    failures = [c for c in res.cells if c.error is not None]
    if failures and len(failures) == len(res.cells):
        raise NumericalError(f"all policy runs failed; first error: {failures[0].error}")
    print(f"evaluate: {len(res.cells) - len(failures)} runs ok, "
          f"{len(failures)} failed; report in {cfg.out}")
    return 0


def cmd_export(cfg: RunConfig) -> int:
    sources = cfg.trajectories
    if not sources:
        raise ValidationError("export needs 'trajectories': a list of "
                              "{'label', 'path'} entries")
    gas_rows, upd_rows, trace_rows = [], [], []
    for src in sources:
        label = src.get("label") or Path(src["path"]).stem
        records = ingest_csv(src["path"], {"block": "block_number",
                                           "price": "base_fee",
                                           "demand": "gas_used"})
        y = np.array([r.y[0] for r in records])
        p = np.array([r.p[0] for r in records])
        gas_rows += _histogram_rows(y, cfg.bins, label)
        upd_rows += _histogram_rows(np.diff(p), cfg.bins, label)
        trace_rows += [{"series": label, "block": r.index,
                        "base_fee": _FLOAT_FMT % r.p[0],
                        "gas_used": _FLOAT_FMT % r.y[0]} for r in records]
    cfg.out.mkdir(parents=True, exist_ok=True)
    hist_fields = ["series", "bin_left", "bin_right", "count"]
    _write_rows_csv(cfg.out / "gas_used_hist.csv", gas_rows, hist_fields)
    _write_rows_csv(cfg.out / "update_size_hist.csv", upd_rows, hist_fields)
    _write_rows_csv(cfg.out / "base_fee_traces.csv", trace_rows,
                    ["series", "block", "base_fee", "gas_used"])
    print(f"export: wrote plot data for {len(sources)} trajectory file(s) to {cfg.out}")
    return 0


# ---------------------------------------------------------------------------
# entry point

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feeflow",
        description="Dynamic multi-resource fee control: simulate, estimate, "
                    "evaluate, export.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("simulate", cmd_simulate), ("estimate", cmd_estimate),
                     ("evaluate", cmd_evaluate), ("export", cmd_export)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--policy", default=None,
                       help=f"policy name, one of {', '.join(VALID_POLICIES)}")
        p.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="price-smoothing weight override")
        p.add_argument("--horizon", type=int, default=None,
                       help="number of blocks to simulate/evaluate")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = _build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "out": args.out, "horizon_blocks": args.horizon}
    try:
        cfg = RunConfig.from_file(args.config, overrides)
        if args.policy is not None:
            cfg.policy = {**cfg.policy, "name": args.policy}
            cfg.policies = []
        if args.lam is not None:
            cfg.policy = {**cfg.policy, "lambda": args.lam}
        return args.fn(cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
