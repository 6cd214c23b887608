"""Breaker cascade after an attack, island re-dispatch, ENS and security margins.

Trip decisions use a physical post-attack power flow of the energised
(root-connected) part of the feeder: local generators hold their pre-attack
setpoints, the root holds its pre-attack voltage and acts as slack. Breakers
whose apparent flow exceeds their trip setting open; by default only the most
overloaded one (plus exact ties) opens per iteration, since opening it
changes every other flow. ``trip_mode="simultaneous"`` opens all of them.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

from .attacker import AttackPlan
from .conic import OPTIMAL, ConicProgram, solve
from .distribution import DistributionSolution, DsoOptions, add_feeder, extract_solution
from .grid_model import BREAKER_TRIP_RATIO, BusId, Feeder, GridCase, feeder_islands
from .market import MarketConfig, MarketOutcome, solve_market

log = logging.getLogger(__name__)

TRIP_TOL = 1e-9


@dataclass(frozen=True)
class CascadeConfig:
    trip_mode: str = "sequential"  # or "simultaneous"
    emergency_ratio: float = BREAKER_TRIP_RATIO
    market: MarketConfig = field(default_factory=MarketConfig)


@dataclass
class CascadeStep:
    tripped: list[str]
    loading: dict[str, float]  # apparent flow / trip threshold per closed breaker
    islands: list[list]


@dataclass
class IslandResult:
    buses: list
    energised: bool
    contracted_load: float
    served: float
    shed: float
    dispatch: dict[str, float]


@dataclass
class CascadeOutcome:
    iterations: list[CascadeStep]
    open_breakers: list[str]
    islands: list[IslandResult]
    ens: float
    ens_cost: float
    grid_separated: bool
    margins_pre: dict[str, float]
    margins_post: dict[str, float]
    market_status: str
    shedding_used: bool = False

    @property
    def served(self) -> float:
        return sum(i.served for i in self.islands)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["islands"] = [
            {**asdict(i), "buses": [str(b) for b in i.buses]} for i in self.islands
        ]
        d["iterations"] = [
            {"tripped": s.tripped, "loading": s.loading, "islands": [[str(b) for b in isl] for isl in s.islands]}
            for s in self.iterations
        ]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def trace_lines(self) -> list[str]:
        return [json.dumps({"iteration": k + 1, **self.to_dict()["iterations"][k]}, sort_keys=True) for k in range(len(self.iterations))]


def security_margins(case: GridCase, market: MarketOutcome, bus: BusId | None = None) -> dict[str, float]:
    """SM_l = F_l - |f_l| for every transmission line (or those touching ``bus``)."""
    if market.transmission is None or not market.transmission.optimal:
        raise ValueError("security margins need an optimal transmission solution")
    out = {}
    for ln in case.transmission.lines:
        if bus is not None and bus not in (ln.from_bus, ln.to_bus):
            continue
        out[ln.id] = ln.flow_limit - abs(market.transmission.f_p[ln.id])
    return out


def physical_flow(
    feeder: Feeder,
    base: float,
    load_delta: Mapping | None,
    generation: Mapping[str, float],
    root_voltage: float,
) -> DistributionSolution:
    """Loss-minimising branch flow with fixed injections and no operating limits."""
    prog = ConicProgram(f"flow[{feeder.name}]")
    opts = DsoOptions(
        apparent_limits=False,
        voltage_limits=False,
        exchange_cap=False,
        fixed_generation={g.id: generation[g.id] for g in feeder.generators},
        fixed_root_voltage=root_voltage,
    )
    h = add_feeder(prog, feeder, base, load_delta, options=opts)
    prog.set_objective(h.p_bid - h.p_offer, "min")
    sol = solve(prog)
    return extract_solution(prog, h, sol, objective=sol.objective * base if sol.status == OPTIMAL else None)


def _restrict_delta(delta: Mapping, keep) -> dict:
    keep = set(keep)
    return {b: v for b, v in delta.items() if b in keep}


def run_cascade(
    case: GridCase,
    plan: AttackPlan,
    config: CascadeConfig | None = None,
    pre_market: MarketOutcome | None = None,
    feeder_index: int = 0,
) -> CascadeOutcome:
    cfg = config or CascadeConfig()
    if cfg.trip_mode not in ("sequential", "simultaneous"):
        raise ValueError(f"unknown trip mode {cfg.trip_mode!r}")
    feeder = case.feeders[feeder_index]
    unknown = set(plan.delta_p) - set(feeder.bus_ids)
    if unknown:
        raise KeyError(f"plan references buses outside the feeder: {sorted(map(str, unknown))}")
    pre = pre_market or solve_market(case, config=cfg.market)
    if not pre.optimal:
        raise RuntimeError(f"pre-attack market {pre.status}")
    pre_d = pre.distributions[feeder_index]
    delta = plan.load_delta()
    base = case.base_mva_distribution
    root = feeder.root
    thresholds = {ln.id: ln.breaker.trip_apparent_threshold for ln in feeder.lines if ln.breaker.present}

    open_set: list[str] = []
    steps: list[CascadeStep] = []
    while True:
        islands = feeder_islands(feeder, open_set)
        energised = islands[0]
        sub = feeder.restricted_to(energised)
        closed = [lid for lid in thresholds if lid not in open_set and any(ln.id == lid for ln in sub.lines)]
        if not closed:
            break
        flow = physical_flow(sub, base, _restrict_delta(delta, energised), pre_d.g_p, pre_d.v[root])
        if not flow.optimal:
            log.warning("post-attack power flow %s; stopping trip loop", flow.status)
            break
        apparent = flow.max_apparent_flow(sub)
        loading = {lid: apparent[lid] / thresholds[lid] for lid in closed}
        over = {lid: r for lid, r in loading.items() if r > 1.0 + TRIP_TOL}
        if not over:
            break
        if cfg.trip_mode == "sequential":
            top = max(over.values())
            trip = sorted(lid for lid, r in over.items() if r >= top - 1e-9)
        else:
            trip = sorted(over)
        open_set.extend(trip)
        steps.append(CascadeStep(trip, loading, [list(i) for i in feeder_islands(feeder, open_set)]))
        log.debug("iteration %d: tripped %s", len(steps), trip)

    islands = feeder_islands(feeder, open_set)
    energised = islands[0]
    separated = any(ln.from_bus == root and ln.id in open_set for ln in feeder.lines)
    contracted = {b.id: b.load_p for b in feeder.buses}

    post, shedding, island_results = _redispatch_energised(case, feeder_index, energised, delta, cfg)
    if post is None or not post.optimal:
        status = post.status if post is not None else "infeasible"
        margins_post: dict[str, float] = {}
    else:
        status = OPTIMAL
        margins_post = security_margins(case, post)

    for isl in islands[1:]:
        load = sum(contracted[b] for b in isl)
        cap = sum(g.p_max for g in feeder.generators if g.bus in isl)
        served = min(cap, load)
        island_results.append(
            IslandResult(
                buses=list(isl),
                energised=False,
                contracted_load=load,
                served=served,
                shed=load - served,
                dispatch=_proportional_dispatch(feeder, isl, served),
            )
        )
    ens = sum(i.shed for i in island_results)
    return CascadeOutcome(
        iterations=steps,
        open_breakers=list(open_set),
        islands=island_results,
        ens=ens,
        ens_cost=ens * case.voll,
        grid_separated=separated,
        margins_pre=security_margins(case, pre),
        margins_post=margins_post,
        market_status=status,
        shedding_used=shedding,
    )


def _proportional_dispatch(feeder: Feeder, island, served: float) -> dict[str, float]:
    gens = [g for g in feeder.generators if g.bus in island]
    cap = sum(g.p_max for g in gens)
    if cap <= 0:
        return {}
    return {g.id: served * g.p_max / cap for g in gens}


def _redispatch_energised(case: GridCase, k: int, energised, delta, cfg: CascadeConfig):
    """Re-solve the coordinated market for the root-connected island."""
    feeder = case.feeders[k]
    contracted = {b.id: b.load_p for b in feeder.buses}
    if len(energised) == 1:
        # Only the root remains: the feeder no longer trades with the grid.
        others = tuple(fd for j, fd in enumerate(case.feeders) if j != k)
        post = solve_market(replace(case, feeders=others), config=cfg.market)
        return post, False, [IslandResult([feeder.root], True, 0.0, 0.0, 0.0, {})]
    sub = feeder.restricted_to(energised)
    ratings = {ln.id: cfg.emergency_ratio * ln.apparent_limit for ln in sub.lines}
    for ln in sub.lines:
        if ln.breaker.present and ln.breaker.trip_apparent_threshold is not None:
            ratings[ln.id] = ln.breaker.trip_apparent_threshold
    sub_delta = _restrict_delta(delta, energised)
    sub_case = case.with_feeder(k, sub)
    n = len(case.feeders)
    deltas = [None] * n
    deltas[k] = sub_delta
    opts = [DsoOptions()] * n
    opts[k] = DsoOptions(rating_override=ratings)
    post = solve_market(sub_case, deltas, opts, cfg.market)
    shedding = False
    if not post.optimal:
        log.info("energised island infeasible (%s); allowing load shedding at VOLL", post.status)
        opts[k] = DsoOptions(rating_override=ratings, load_shedding_price=case.voll)
        post = solve_market(sub_case, deltas, opts, cfg.market)
        shedding = True
    load = sum(contracted[b] for b in energised)
    if post.optimal:
        d = post.distributions[k]
        shed = sum(min(d.shed.get(b, 0.0), contracted[b]) for b in energised)
        dispatch = dict(d.g_p)
    else:
        shed, dispatch = load, {}
    return post, shedding, [IslandResult(list(energised), True, load, load - shed, shed, dispatch)]
