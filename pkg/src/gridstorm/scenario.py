"""Batch sweeps: strategy x penetration x gamma -> plans, cascades, CSV reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .attacker import AttackPlan, make_budget, plan_insidious, plan_naive
from .cascade import CascadeConfig, CascadeOutcome, run_cascade, security_margins
from .conic import Tolerances
from .grid_model import GridCase, bundled_case_path, compute_ptdf, load_case_file
from .market import MarketConfig, MarketOutcome, solve_market

log = logging.getLogger(__name__)

STRATEGY_ORDER = ("naive", "insidious")
SUMMARY_COLUMNS = [
    "strategy",
    "penetration",
    "gamma",
    "ens_mw",
    "ens_cost_usd",
    "grid_separated",
    "iterations",
    "open_breakers",
    "net_delta_p_mw",
]
MARGIN_COLUMNS = ["strategy", "penetration", "gamma", "line", "from_bus", "to_bus", "flow_limit_mw", "pre_mw", "post_mw"]


class ToleranceOverrides(BaseModel):
    model_config = ConfigDict(extra="forbid")
    feas_tol: float = Field(1e-6, gt=0)
    gap_tol: float = Field(1e-6, gt=0)


class ScenarioConfig(BaseModel):
    """Sweep description, usually read from a JSON file."""

    model_config = ConfigDict(extra="forbid")

    case: str = "bundled"
    strategies: list[Literal["naive", "insidious"]] = ["naive", "insidious"]
    penetrations: list[float] = [0.1, 0.25, 0.5]
    gammas: list[float] = [0.0]
    target_branch: str | None = None
    protected_branches: list[str] | None = None
    slack_bus: int | str | None = None
    margin_bus: int | str | None = None
    tolerances: ToleranceOverrides = ToleranceOverrides()
    output_dir: str = "gridstorm-out"
    seed: int = 0
    trip_mode: Literal["sequential", "simultaneous"] = "sequential"

    @field_validator("strategies", "penetrations", "gammas")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("must not be empty")
        return v

    @field_validator("penetrations", "gammas")
    @classmethod
    def _unit_interval(cls, v):
        for x in v:
            if not 0.0 <= x <= 1.0:
                raise ValueError(f"{x} outside [0, 1]")
        return v

    def case_path(self, relative_to: Path | None = None) -> Path:
        if self.case == "bundled":
            return bundled_case_path()
        p = Path(self.case)
        if not p.is_absolute() and relative_to is not None:
            p = relative_to / p
        return p

    def market_config(self, dump_dir: str | None = None) -> MarketConfig:
        return MarketConfig(
            slack_bus=self.slack_bus,
            tolerances=Tolerances(feas_tol=self.tolerances.feas_tol, gap_tol=self.tolerances.gap_tol),
            dump_dir=dump_dir,
        )


def load_config(path: str | Path) -> ScenarioConfig:
    return ScenarioConfig.model_validate_json(Path(path).read_text())


@dataclass
class ScenarioResult:
    strategy: str
    rho: float
    gamma: float
    plan: AttackPlan | None
    cascade: CascadeOutcome | None
    error: str | None = None

    @property
    def tag(self) -> str:
        return scenario_tag(self.strategy, self.rho, self.gamma)


def scenario_tag(strategy: str, rho: float, gamma: float) -> str:
    return f"{strategy}_rho{rho:g}_gamma{gamma:g}"


def default_branches(case: GridCase, config: ScenarioConfig) -> tuple[str, list[str]]:
    feeder = case.feeders[0]
    target = config.target_branch or feeder.root_line().id
    if config.protected_branches is not None:
        protected = list(config.protected_branches)
    else:
        protected = [ln.id for ln in feeder.breakered_lines if ln.id != target]
    return target, protected


def make_plan(
    case: GridCase,
    pre: MarketOutcome,
    strategy: str,
    rho: float,
    gamma: float,
    config: ScenarioConfig,
) -> AttackPlan:
    feeder = case.feeders[0]
    slack = config.slack_bus if config.slack_bus is not None else case.slack
    ptdf = compute_ptdf(case.transmission, slack)
    budget = make_budget(feeder, rho, gamma)
    if strategy == "naive":
        return plan_naive(feeder, ptdf, budget)
    d = pre.distribution
    base = {ln.id: (d.f_p[ln.id], d.f_q[ln.id]) for ln in feeder.lines}
    target, protected = default_branches(case, config)
    return plan_insidious(feeder, ptdf, budget, protected, target, base)


def run_one(case: GridCase, pre: MarketOutcome, strategy: str, rho: float, gamma: float, config: ScenarioConfig) -> ScenarioResult:
    try:
        plan = make_plan(case, pre, strategy, rho, gamma, config)
        cascade = run_cascade(
            case,
            plan,
            CascadeConfig(trip_mode=config.trip_mode, market=config.market_config()),
            pre_market=pre,
        )
        return ScenarioResult(strategy, rho, gamma, plan, cascade)
    except Exception as exc:  # reported per scenario, the sweep continues
        log.exception("scenario %s failed", scenario_tag(strategy, rho, gamma))
        return ScenarioResult(strategy, rho, gamma, None, None, f"{type(exc).__name__}: {exc}")


def _worker(args):
    case_path, config_json, jobs = args
    config = ScenarioConfig.model_validate_json(config_json)
    case = load_case_file(case_path)
    pre = solve_market(case, config=config.market_config())
    return [run_one(case, pre, s, r, g, config) for s, r, g in jobs]


def scenario_grid(config: ScenarioConfig) -> list[tuple[str, float, float]]:
    strategies = [s for s in STRATEGY_ORDER if s in config.strategies]
    return [(s, r, g) for g in config.gammas for s in strategies for r in config.penetrations]


def run_sweep(config: ScenarioConfig, case_path: Path, jobs: int = 1, dump_dir: str | None = None) -> tuple[GridCase, MarketOutcome, list[ScenarioResult]]:
    case = load_case_file(case_path)
    if not case.feeders:
        raise ValueError("case has no feeder to attack")
    pre = solve_market(case, config=config.market_config(dump_dir))
    if not pre.optimal:
        raise RuntimeError(f"pre-attack market {pre.status}")
    grid = scenario_grid(config)
    if jobs <= 1 or len(grid) <= 1:
        results = [run_one(case, pre, s, r, g, config) for s, r, g in grid]
    else:
        chunks = [grid[k::jobs] for k in range(jobs)]
        payload = [(str(case_path), config.model_dump_json(), c) for c in chunks if c]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            flat = [r for part in pool.map(_worker, payload) for r in part]
        order = {key: i for i, key in enumerate(grid)}
        results = sorted(flat, key=lambda r: order[(r.strategy, r.rho, r.gamma)])
    return case, pre, results


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def summary_csv(results: list[ScenarioResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in results:
        if r.cascade is None:
            continue
        c = r.cascade
        w.writerow(
            [
                r.strategy,
                f"{r.rho:g}",
                f"{r.gamma:g}",
                f"{c.ens:.3f}",
                f"{round(c.ens_cost):d}",
                str(c.grid_separated).lower(),
                len(c.iterations),
                ";".join(c.open_breakers),
                f"{r.plan.total_delta_p:.3f}",
            ]
        )
    return buf.getvalue()


def margins_csv(case: GridCase, results: list[ScenarioResult], bus) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MARGIN_COLUMNS)
    lines = [ln for ln in case.transmission.lines if bus in (ln.from_bus, ln.to_bus)]
    for r in results:
        if r.cascade is None:
            continue
        for ln in lines:
            post = r.cascade.margins_post.get(ln.id)
            w.writerow(
                [
                    r.strategy,
                    f"{r.rho:g}",
                    f"{r.gamma:g}",
                    ln.id,
                    ln.from_bus,
                    ln.to_bus,
                    f"{ln.flow_limit:.3f}",
                    f"{r.cascade.margins_pre[ln.id]:.3f}",
                    "" if post is None else f"{post:.3f}",
                ]
            )
    return buf.getvalue()


def write_reports(out_dir: Path, case: GridCase, results: list[ScenarioResult], config: ScenarioConfig) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    bus = config.margin_bus if config.margin_bus is not None else case.feeders[0].interface_bus
    written = []
    p = out_dir / "summary.csv"
    _atomic_write(p, summary_csv(results))
    written.append(p)
    p = out_dir / "margins.csv"
    _atomic_write(p, margins_csv(case, results, bus))
    written.append(p)
    for r in results:
        if r.plan is not None:
            p = out_dir / f"plan_{r.tag}.json"
            _atomic_write(p, r.plan.to_json() + "\n")
            written.append(p)
        if r.cascade is not None:
            p = out_dir / f"cascade_{r.tag}.json"
            _atomic_write(p, r.cascade.to_json() + "\n")
            written.append(p)
    errors = [{"scenario": r.tag, "error": r.error} for r in results if r.error]
    if errors:
        p = out_dir / "errors.json"
        _atomic_write(p, json.dumps(errors, indent=1) + "\n")
        written.append(p)
    return written
