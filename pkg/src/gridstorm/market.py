"""Coordinated DSO-TSO market as one conic program.

The TSO is replaced by its primal constraints, its dual constraints and a
strong-duality band, and the DSO's bilinear revenue term is replaced by the
complementary-slackness identity of the interface rows. What remains is an
SOCP in DSO, TSO-primal and TSO-dual variables.

The prices the DSO declares to the TSO are configurable. The default
("equilibrium") declares both at the interface price of the joint-welfare
dispatch, which is the price the DSO would face as a price taker; the
single-level program then reproduces that equilibrium.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .conic import (
    INFEASIBLE,
    OPTIMAL,
    ConicProgram,
    Expr,
    ProgramSolution,
    Tolerances,
    quicksum,
    solve,
)
from .distribution import (
    DistributionSolution,
    DsoHandle,
    DsoOptions,
    LoadDelta,
    add_feeder,
    dso_objective,
    extract_solution,
    solve_dso,
)
from .grid_model import BusId, Feeder, GridCase
from .transmission import (
    InterfaceOffer,
    TransmissionSolution,
    TsoData,
    add_tso_dual,
    add_tso_primal,
    dual_objective_value,
    interface_identity,
    solve_tso,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MarketConfig:
    declared_prices: str = "equilibrium"
    strong_duality_slack: float = 0.0
    duality_penalty: float = 1e4
    tie_break_weight: float = 1e-6
    slack_bus: BusId | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    dump_dir: str | None = None


@dataclass
class MarketOutcome:
    status: str
    distributions: list[DistributionSolution] = field(default_factory=list)
    transmission: TransmissionSolution | None = None
    interface_prices: list[float] = field(default_factory=list)
    interface_exchanges: list[float] = field(default_factory=list)
    declared_offers: list[InterfaceOffer] = field(default_factory=list)
    coordination_residual: float = math.nan
    linearization_residual: float = math.nan
    dso_objective: float = math.nan
    duality_penalized: bool = False
    relaxation_inexact: bool = False

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def distribution(self) -> DistributionSolution:
        return self.distributions[0]

    @property
    def interface_price(self) -> float:
        return self.interface_prices[0]

    @property
    def interface_exchange(self) -> float:
        return self.interface_exchanges[0]

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "interface_prices": self.interface_prices,
            "interface_exchanges": self.interface_exchanges,
            "coordination_residual": self.coordination_residual,
            "linearization_residual": self.linearization_residual,
            "dso_objective": self.dso_objective,
            "duality_penalized": self.duality_penalized,
            "relaxation_inexact": self.relaxation_inexact,
            "distributions": [d.to_dict() for d in self.distributions],
            "transmission": self.transmission.to_dict() if self.transmission else None,
        }


def _per_feeder(value, n: int, default=None) -> list:
    if value is None:
        return [default] * n
    if isinstance(value, (list, tuple)):
        if len(value) != n:
            raise ValueError(f"expected {n} per-feeder entries, got {len(value)}")
        return list(value)
    return [value] + [default] * (n - 1)


def _tso_data(case: GridCase, offers: Sequence[InterfaceOffer], cfg: MarketConfig) -> TsoData:
    return TsoData(
        network=case.transmission,
        interfaces=tuple(offers),
        base_mva=case.base_mva_transmission,
        slack_bus=cfg.slack_bus if cfg.slack_bus is not None else case.slack,
    )


def _link_exchange(program: ConicProgram, handle: DsoHandle, tso, bus: BusId, k: int) -> None:
    base = handle.base
    program.add_linear(f"link_offer[{k}]", tso.p_offer[bus] - base * handle.p_offer, "==", 0.0)
    program.add_linear(f"link_bid[{k}]", tso.p_bid[bus] - base * handle.p_bid, "==", 0.0)


def joint_dispatch(
    case: GridCase,
    load_deltas=None,
    dso_options=None,
    config: MarketConfig | None = None,
) -> tuple[ProgramSolution, list[float], list[float]]:
    """Joint-welfare dispatch of TSO and feeders.

    Returns the raw solution, the interface prices (LMPs at the interface
    buses) and the net feeder imports (MW).
    """
    cfg = config or MarketConfig()
    n = len(case.feeders)
    deltas = _per_feeder(load_deltas, n)
    opts = _per_feeder(dso_options, n, DsoOptions())
    offers = [InterfaceOffer(fd.interface_bus, 0.0, 0.0, fd.interface_capacity) for fd in case.feeders]
    data = _tso_data(case, offers, cfg)
    program = ConicProgram("joint_dispatch")
    tso = add_tso_primal(program, data, prefix="T.")
    obj = tso.objective
    handles = []
    for k, fd in enumerate(case.feeders):
        h = add_feeder(program, fd, case.base_mva_distribution, deltas[k], prefix=f"D{k}.", options=opts[k])
        _link_exchange(program, h, tso, fd.interface_bus, k)
        # Simultaneous buy and sell is a free loop here; a tiny charge removes it.
        obj = obj - h.generation_cost() - 1e-6 * h.base * (h.p_offer + h.p_bid)
        handles.append(h)
    program.set_objective(obj, "max")
    sol = solve(program, cfg.tolerances, dump_to=_dump_path(cfg, "joint_dispatch"))
    if sol.status != OPTIMAL:
        return sol, [], []
    prices = [-sol.duals[f"T.balance[{fd.interface_bus}]"] for fd in case.feeders]
    imports = [sol.value(h.net_import()) * h.base for h in handles]
    return sol, prices, imports


def _dump_path(cfg: MarketConfig, name: str):
    if cfg.dump_dir is None:
        return None
    from pathlib import Path

    Path(cfg.dump_dir).mkdir(parents=True, exist_ok=True)
    return Path(cfg.dump_dir) / f"{name}.lp"


def declared_offers(
    case: GridCase, prices: Sequence[float], imports: Sequence[float], cfg: MarketConfig
) -> list[InterfaceOffer]:
    offers = []
    for fd, lam, x in zip(case.feeders, prices, imports):
        if cfg.declared_prices != "equilibrium":
            raise ValueError(f"unknown declared_prices mode {cfg.declared_prices!r}")
        c_o = c_b = lam
        # Complementarity: pin the direction the feeder does not trade in.
        if x >= 0:
            offers.append(InterfaceOffer(fd.interface_bus, c_o, c_b, fd.interface_capacity, offer_cap=0.0))
        else:
            offers.append(InterfaceOffer(fd.interface_bus, c_o, c_b, fd.interface_capacity, bid_cap=0.0))
    return offers


@dataclass
class SingleLevel:
    program: ConicProgram
    data: TsoData
    dsos: list[DsoHandle]
    primal: object
    dual: object
    dso_objective: Expr


def build_single_level(
    case: GridCase,
    load_deltas=None,
    offers: Sequence[InterfaceOffer] | None = None,
    dso_options=None,
    config: MarketConfig | None = None,
    penalize_duality: bool = False,
    scale: float = 1.0,
) -> SingleLevel:
    """Assemble the single-level program.

    ``offers`` are the DSO's declared interface prices; when omitted they are
    derived from a joint-welfare dispatch (see module docstring).
    ``scale`` sizes the strong-duality band (typically max(1, |o^T|)).
    """
    cfg = config or MarketConfig()
    n = len(case.feeders)
    deltas = _per_feeder(load_deltas, n)
    opts = _per_feeder(dso_options, n, DsoOptions())
    if offers is None:
        sol, prices, imports = joint_dispatch(case, deltas, opts, cfg)
        if sol.status != OPTIMAL:
            raise RuntimeError(f"joint dispatch {sol.status}")
        offers = declared_offers(case, prices, imports, cfg)
    data = _tso_data(case, offers, cfg)
    program = ConicProgram("single_level")
    primal = add_tso_primal(program, data, prefix="T.")
    dual = add_tso_dual(program, data, prefix="TD.")
    handles = []
    obj = Expr()
    for k, fd in enumerate(case.feeders):
        h = add_feeder(program, fd, case.base_mva_distribution, deltas[k], prefix=f"D{k}.", options=opts[k])
        _link_exchange(program, h, primal, fd.interface_bus, k)
        handles.append(h)
        itf = offers[k]
        b = itf.bus
        # lambda*(pO - pB) replaced by its complementary-slackness equivalent.
        revenue = (
            itf.offer_price * primal.p_offer[b]
            + itf.offer_limit * dual.psi_up[b]
            - itf.bid_price * primal.p_bid[b]
            + itf.bid_limit * dual.psi_lo[b]
        )
        obj = obj + h.retail_revenue() - h.generation_cost() + revenue
    dso_obj = obj
    gap = primal.objective - dual.objective  # <= 0 by weak duality
    if penalize_duality:
        obj = obj + cfg.duality_penalty * gap
    else:
        band = cfg.strong_duality_slack * scale
        program.add_linear("strong_duality_lo", gap, ">=", -band)
        program.add_linear("strong_duality_hi", gap, "<=", band)
    if cfg.tie_break_weight > 0:
        abs_f = []
        for ln in case.transmission.lines:
            t = program.add_var(f"T.absf[{ln.id}]", 0.0)
            program.add_linear(f"T.absf_pos[{ln.id}]", t - primal.f[ln.id], ">=", 0.0)
            program.add_linear(f"T.absf_neg[{ln.id}]", t + primal.f[ln.id], ">=", 0.0)
            abs_f.append(t)
        obj = obj - cfg.tie_break_weight * quicksum(abs_f)
    program.set_objective(obj, "max")
    return SingleLevel(program, data, handles, primal, dual, dso_obj)


def solve_market(
    case: GridCase,
    load_deltas=None,
    dso_options=None,
    config: MarketConfig | None = None,
) -> MarketOutcome:
    cfg = config or MarketConfig()
    n = len(case.feeders)
    deltas = _per_feeder(load_deltas, n)
    opts = _per_feeder(dso_options, n, DsoOptions())
    if n == 0:
        data = _tso_data(case, [], cfg)
        tso = solve_tso(data, cfg.tolerances)
        out = MarketOutcome(status=tso.status, transmission=tso)
        out.coordination_residual = abs(tso.objective - tso.dual_objective) if tso.optimal else math.nan
        return out
    sol0, prices, imports = joint_dispatch(case, deltas, opts, cfg)
    if sol0.status != OPTIMAL:
        return MarketOutcome(status=sol0.status)
    offers = declared_offers(case, prices, imports, cfg)
    scale = max(1.0, _tso_welfare_scale(case, sol0))
    sl = build_single_level(case, deltas, offers, opts, cfg, scale=scale)
    sol = solve(sl.program, cfg.tolerances, dump_to=_dump_path(cfg, "single_level"))
    penalized = False
    if sol.status != OPTIMAL:
        log.warning("single-level solve %s; retrying with strong duality as a penalty", sol.status)
        sl = build_single_level(case, deltas, offers, opts, cfg, penalize_duality=True, scale=scale)
        sol = solve(sl.program, cfg.tolerances)
        penalized = True
    if sol.status != OPTIMAL:
        return MarketOutcome(status=sol.status, declared_offers=offers)
    return _outcome(case, sl, sol, offers, penalized)


def _tso_welfare_scale(case: GridCase, sol: ProgramSolution) -> float:
    total = sum(b.bid_price * b.load_p for b in case.transmission.buses)
    cost = sum(g.offer_price * sol.primal[f"T.g[{g.id}]"] for g in case.transmission.generators)
    return abs(total - cost)


def _outcome(case: GridCase, sl: SingleLevel, sol: ProgramSolution, offers, penalized: bool) -> MarketOutcome:
    data, primal, dual = sl.data, sl.primal, sl.dual
    v = sol.value
    tso = TransmissionSolution(status=OPTIMAL)
    tso.g_p = {k: v(e) for k, e in primal.g.items()}
    tso.f_p = {k: v(e) for k, e in primal.f.items()}
    tso.theta = {k: v(e) for k, e in primal.theta.items()}
    tso.p_offer = {k: v(e) for k, e in primal.p_offer.items()}
    tso.p_bid = {k: v(e) for k, e in primal.p_bid.items()}
    tso.lmp = {k: v(e) for k, e in dual.lam.items()}
    tso.alpha_up = {k: v(e) for k, e in dual.alpha_up.items()}
    tso.alpha_lo = {k: v(e) for k, e in dual.alpha_lo.items()}
    tso.psi_up = {k: v(e) for k, e in dual.psi_up.items()}
    tso.psi_lo = {k: v(e) for k, e in dual.psi_lo.items()}
    tso.xi = {k: v(e) for k, e in dual.xi.items()}
    tso.delta_up = {k: v(e) for k, e in dual.delta_up.items()}
    tso.delta_lo = {k: v(e) for k, e in dual.delta_lo.items()}
    tso.objective = v(primal.objective)
    tso._production = tso.objective - data.constant_welfare()
    tso.dual_objective = dual_objective_value(data, tso)

    out = MarketOutcome(status=OPTIMAL, transmission=tso, declared_offers=list(offers), duality_penalized=penalized)
    out.coordination_residual = abs(tso.objective - tso.dual_objective)
    lin = 0.0
    for k, (fd, h, itf) in enumerate(zip(case.feeders, sl.dsos, offers)):
        price = tso.lmp[fd.interface_bus]
        dso_obj = h.retail_revenue() - v(h.generation_cost()) + price * h.base * v(h.p_offer - h.p_bid)
        d = extract_solution(sl.program, h, sol, objective=dso_obj)
        out.distributions.append(d)
        out.interface_prices.append(price)
        out.interface_exchanges.append(tso.p_bid[fd.interface_bus] - tso.p_offer[fd.interface_bus])
        lhs, rhs = interface_identity(itf, tso)
        lin = max(lin, abs(lhs - rhs) / max(1.0, abs(lhs)))
        out.relaxation_inexact |= d.relaxation_inexact
    out.linearization_residual = lin
    out.dso_objective = v(sl.dso_objective)
    return out


def diagonalization(
    case: GridCase,
    load_deltas=None,
    dso_options=None,
    config: MarketConfig | None = None,
    max_iter: int = 50,
    tol: float = 1e-6,
) -> tuple[list[float], list[float], int]:
    """Alternate TSO (fixed exchange) and DSO (fixed price) solves.

    Returns (interface prices, net imports in MW, iterations). Raises
    RuntimeError if the alternation does not settle.
    """
    cfg = config or MarketConfig()
    n = len(case.feeders)
    deltas = _per_feeder(load_deltas, n)
    opts = _per_feeder(dso_options, n, DsoOptions())
    imports = [0.0] * n
    prices = [0.0] * n
    for it in range(1, max_iter + 1):
        extra: dict = {}
        for fd, x in zip(case.feeders, imports):
            extra[fd.interface_bus] = extra.get(fd.interface_bus, 0.0) + x
        data = TsoData(
            case.transmission,
            (),
            extra,
            case.base_mva_transmission,
            cfg.slack_bus if cfg.slack_bus is not None else case.slack,
        )
        tso = solve_tso(data, cfg.tolerances)
        if not tso.optimal:
            raise RuntimeError(f"TSO {tso.status} at iteration {it}")
        prices = [tso.lmp[fd.interface_bus] for fd in case.feeders]
        new = []
        for k, fd in enumerate(case.feeders):
            d = solve_dso(fd, prices[k], deltas[k], case.base_mva_distribution, opts[k], cfg.tolerances)
            if not d.optimal:
                raise RuntimeError(f"DSO {d.status} at iteration {it}")
            new.append(d.net_import)
        if max(abs(a - b) for a, b in zip(new, imports)) <= tol:
            return prices, new, it
        imports = new
    raise RuntimeError("diagonalization did not converge")
