"""DSO profit maximisation on a radial feeder (branch-flow SOCP relaxation)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping


from .conic import (
    INFEASIBLE,
    OPTIMAL,
    ConicProgram,
    Expr,
    ProgramSolution,
    Tolerances,
    check_cone_tightness,
    quicksum,
    solve,
)
from .grid_model import BusId, CaseError, Feeder, TopologyError

log = logging.getLogger(__name__)

RELAXATION_TOL = 1e-4
COMPLEMENTARITY_TOL = 1e-6
# $/MWh charged on exchange volume in standalone solves; picks the
# loss-free optimum when the price is zero. Not part of reported profit.
EXCHANGE_TIE_BREAK = 1e-6


class NegativeLoadError(CaseError):
    pass


LoadDelta = Mapping[BusId, tuple[float, float]]


@dataclass(frozen=True)
class DsoOptions:
    """Modelling switches for the feeder program.

    ``root_shunt_uses_conductance`` reproduces the literal root reactive
    balance (G where B is expected); off by default.
    """

    apparent_limits: bool = True
    voltage_limits: bool = True
    exchange_cap: bool = True
    fixed_generation: Mapping[str, float] | None = None  # MW per generator id
    fixed_root_voltage: float | None = None
    root_shunt_uses_conductance: bool = False
    rating_override: Mapping[str, float] | None = None  # MVA per line id
    load_shedding_price: float | None = None  # $/MWh; adds shed variables when set


@dataclass
class DsoHandle:
    """Variables of one feeder embedded in a program (all p.u.)."""

    feeder: Feeder
    prefix: str
    base: float
    g_p: dict[str, Expr]
    g_q: dict[str, Expr]
    f_p: dict[str, Expr]
    f_q: dict[str, Expr]
    a: dict[str, Expr]
    v: dict[BusId, Expr]
    p_offer: Expr
    p_bid: Expr
    q_root: Expr | None
    shed: dict[BusId, Expr]
    loads_p: dict[BusId, float]  # MW, post-delta
    loads_q: dict[BusId, float]
    cone_names: list[str]

    def name(self, kind: str, key) -> str:
        return f"{self.prefix}{kind}[{key}]"

    def generation_cost(self) -> Expr:
        """Local generation cost in $/h."""
        cost = quicksum(g.offer_price * self.base * self.g_p[g.id] for g in self.feeder.generators)
        for b, s in self.shed.items():
            cost = cost + self.shed_price * self.base * s
        return cost

    shed_price: float = 0.0

    def retail_revenue(self) -> float:
        return sum(b.load_p for b in self.feeder.buses) * self.feeder.tariff

    def net_import(self) -> Expr:
        """Import from transmission in p.u. (+ = buying)."""
        return self.p_bid - self.p_offer


def perturbed_loads(feeder: Feeder, load_delta: LoadDelta | None) -> tuple[dict, dict]:
    lp = {b.id: b.load_p for b in feeder.buses}
    lq = {b.id: b.load_q for b in feeder.buses}
    if load_delta:
        bad = []
        for b, (dp, dq) in load_delta.items():
            if b not in lp:
                raise KeyError(f"load delta for unknown bus {b!r}")
            lp[b] += dp
            lq[b] += dq
            if lp[b] < -1e-9:
                bad.append(f"bus {b}: perturbed active load {lp[b]:.6g} MW is negative")
        if bad:
            raise NegativeLoadError(bad)
    return lp, lq


def add_feeder(
    program: ConicProgram,
    feeder: Feeder,
    base: float,
    load_delta: LoadDelta | None = None,
    prefix: str = "",
    options: DsoOptions | None = None,
) -> DsoHandle:
    """Embed the feeder's operating constraints in ``program``."""
    opt = options or DsoOptions()
    if len(feeder.lines) != len(feeder.buses) - 1:
        raise TopologyError([f"feeder {feeder.name}: not radial"])
    root = feeder.root
    lp, lq = perturbed_loads(feeder, load_delta)
    P = prefix
    fixed = opt.fixed_generation or {}
    ratings = opt.rating_override or {}

    g_p, g_q = {}, {}
    for g in feeder.generators:
        if g.id in fixed:
            val = fixed[g.id] / base
            g_p[g.id] = program.add_var(f"{P}g_p[{g.id}]", val, val)
        else:
            g_p[g.id] = program.add_var(f"{P}g_p[{g.id}]", g.p_min / base, g.p_max / base)
        qlo = None if g.q_min is None else g.q_min / base
        qhi = None if g.q_max is None else g.q_max / base
        g_q[g.id] = program.add_var(f"{P}g_q[{g.id}]", qlo, qhi)

    v = {}
    for b in feeder.buses:
        if b.is_root and opt.fixed_root_voltage is not None:
            v[b.id] = program.add_var(f"{P}v[{b.id}]", opt.fixed_root_voltage, opt.fixed_root_voltage)
        elif opt.voltage_limits:
            v[b.id] = program.add_var(f"{P}v[{b.id}]", b.v_min, b.v_max)
        else:
            v[b.id] = program.add_var(f"{P}v[{b.id}]", 0.0)

    f_p, f_q, a = {}, {}, {}
    for ln in feeder.lines:
        f_p[ln.id] = program.add_var(f"{P}f_p[{ln.id}]")
        f_q[ln.id] = program.add_var(f"{P}f_q[{ln.id}]")
        a[ln.id] = program.add_var(f"{P}a[{ln.id}]", 0.0)

    cap = feeder.interface_capacity / base if opt.exchange_cap and math.isfinite(feeder.interface_capacity) else None
    p_offer = program.add_var(f"{P}p_offer", 0.0, cap)
    p_bid = program.add_var(f"{P}p_bid", 0.0, cap)
    q_root = program.add_var(f"{P}q_root") if feeder.root_reactive_supply else None

    shed = {}
    if opt.load_shedding_price is not None:
        for b in feeder.buses:
            if lp[b.id] > 0:
                shed[b.id] = program.add_var(f"{P}shed[{b.id}]", 0.0, lp[b.id] / base)

    cones = []
    for ln in feeder.lines:
        o, r = ln.from_bus, ln.to_bus
        R, X = ln.resistance, ln.reactance
        program.add_linear(
            f"{P}voltage[{ln.id}]",
            v[r] - v[o] + 2.0 * (R * f_p[ln.id] + X * f_q[ln.id]) - (R * R + X * X) * a[ln.id],
            "==",
            0.0,
        )
        if opt.apparent_limits:
            s = ratings.get(ln.id, ln.apparent_limit) / base
            program.add_soc(f"{P}s_send[{ln.id}]", [f_p[ln.id], f_q[ln.id]], s)
            program.add_soc(f"{P}s_recv[{ln.id}]", [f_p[ln.id] - R * a[ln.id], f_q[ln.id] - X * a[ln.id]], s)
        name = f"{P}branch_cone[{ln.id}]"
        program.add_rotated(name, a[ln.id], v[o], [f_p[ln.id], f_q[ln.id]])
        cones.append(name)

    out_lines: dict[BusId, list] = {b.id: [] for b in feeder.buses}
    in_lines: dict[BusId, list] = {b.id: [] for b in feeder.buses}
    for ln in feeder.lines:
        out_lines[ln.from_bus].append(ln)
        in_lines[ln.to_bus].append(ln)
    gens_at: dict[BusId, list] = {b.id: [] for b in feeder.buses}
    for g in feeder.generators:
        gens_at[g.bus].append(g)

    for b in feeder.buses:
        gsh = sum(ln.shunt_conductance for ln in out_lines[b.id])
        bsh = sum(ln.shunt_susceptance for ln in out_lines[b.id])
        out_p = quicksum(f_p[ln.id] for ln in out_lines[b.id])
        out_q = quicksum(f_q[ln.id] for ln in out_lines[b.id])
        in_p = quicksum(f_p[ln.id] - ln.resistance * a[ln.id] for ln in in_lines[b.id])
        in_q = quicksum(f_q[ln.id] - ln.reactance * a[ln.id] for ln in in_lines[b.id])
        if b.id == root:
            # Reactive root shunt: B by default; the literal form uses G.
            rsh = gsh if opt.root_shunt_uses_conductance else bsh
            program.add_linear(f"{P}balance_p[{b.id}]", out_p - in_p - p_bid + p_offer + gsh * v[b.id], "==", 0.0)
            qexpr = out_q - in_q - rsh * v[b.id]
            if q_root is not None:
                qexpr = qexpr - q_root
            program.add_linear(f"{P}balance_q[{b.id}]", qexpr, "==", 0.0)
            continue
        gen_p = quicksum(g_p[g.id] for g in gens_at[b.id])
        gen_q = quicksum(g_q[g.id] for g in gens_at[b.id])
        load_p = lp[b.id] / base
        load_q = lq[b.id] / base
        served_p = Expr(const=load_p)
        served_q = Expr(const=load_q)
        if b.id in shed:
            served_p = served_p - shed[b.id]
            # shed keeps the bus power factor
            ratio = lq[b.id] / lp[b.id] if lp[b.id] > 0 else 0.0
            served_q = served_q - ratio * shed[b.id]
        program.add_linear(f"{P}balance_p[{b.id}]", out_p - in_p - gen_p + served_p + gsh * v[b.id], "==", 0.0)
        program.add_linear(f"{P}balance_q[{b.id}]", out_q - in_q - gen_q + served_q - bsh * v[b.id], "==", 0.0)

    handle = DsoHandle(
        feeder=feeder,
        prefix=P,
        base=base,
        g_p=g_p,
        g_q=g_q,
        f_p=f_p,
        f_q=f_q,
        a=a,
        v=v,
        p_offer=p_offer,
        p_bid=p_bid,
        q_root=q_root,
        shed=shed,
        loads_p=lp,
        loads_q=lq,
        cone_names=cones,
    )
    handle.shed_price = opt.load_shedding_price or 0.0
    return handle


def dso_objective(handle: DsoHandle, interface_price: float) -> Expr:
    """Gross profit in $/h: retail revenue - generation cost + price*(sales - purchases)."""
    return (
        handle.retail_revenue()
        - handle.generation_cost()
        + interface_price * handle.base * (handle.p_offer - handle.p_bid)
    )


def build_dso_program(
    feeder: Feeder,
    interface_price: float,
    load_delta: LoadDelta | None = None,
    base_mva: float = 10.0,
    options: DsoOptions | None = None,
) -> ConicProgram:
    program, _ = _build(feeder, interface_price, load_delta, base_mva, options)
    return program


def _build(feeder, interface_price, load_delta, base_mva, options):
    if not math.isfinite(interface_price):
        raise ValueError("interface price must be finite")
    program = ConicProgram(f"dso[{feeder.name}]")
    handle = add_feeder(program, feeder, base_mva, load_delta, options=options)
    tie = EXCHANGE_TIE_BREAK * handle.base * (handle.p_offer + handle.p_bid)
    program.set_objective(dso_objective(handle, interface_price) - tie, "max")
    return program, handle


@dataclass
class DistributionSolution:
    status: str
    g_p: dict[str, float] = field(default_factory=dict)
    g_q: dict[str, float] = field(default_factory=dict)
    f_p: dict[str, float] = field(default_factory=dict)
    f_q: dict[str, float] = field(default_factory=dict)
    a: dict[str, float] = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    p_offer: float = 0.0
    p_bid: float = 0.0
    q_root: float = 0.0
    shed: dict = field(default_factory=dict)
    objective: float = math.nan
    losses: float = 0.0
    root_apparent_flow: float = 0.0
    max_cone_residual: float = 0.0
    relaxation_inexact: bool = False
    complementarity_degenerate: bool = False

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def net_import(self) -> float:
        return self.p_bid - self.p_offer

    def apparent_flow(self, line_id: str, receiving: bool = False, feeder: Feeder | None = None) -> float:
        """Apparent flow in MVA at the sending end (or receiving end given the feeder)."""
        fp, fq = self.f_p[line_id], self.f_q[line_id]
        if receiving:
            if feeder is None:
                raise ValueError("feeder needed for receiving-end flow")
            ln = feeder.line(line_id)
            base = self._base
            fp -= self.a[line_id] * ln.resistance * base
            fq -= self.a[line_id] * ln.reactance * base
        return math.hypot(fp, fq)

    def max_apparent_flow(self, feeder: Feeder) -> dict[str, float]:
        return {
            ln.id: max(self.apparent_flow(ln.id), self.apparent_flow(ln.id, True, feeder)) for ln in feeder.lines
        }

    _base: float = 10.0

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "g_p": self.g_p,
            "g_q": self.g_q,
            "f_p": self.f_p,
            "f_q": self.f_q,
            "a": self.a,
            "v": {str(k): x for k, x in self.v.items()},
            "p_offer": self.p_offer,
            "p_bid": self.p_bid,
            "q_root": self.q_root,
            "shed": {str(k): x for k, x in self.shed.items()},
            "objective": self.objective,
            "losses": self.losses,
            "root_apparent_flow": self.root_apparent_flow,
            "max_cone_residual": self.max_cone_residual,
            "relaxation_inexact": self.relaxation_inexact,
        }


def extract_solution(
    program: ConicProgram, handle: DsoHandle, sol: ProgramSolution, objective: float | None = None
) -> DistributionSolution:
    if sol.status != OPTIMAL:
        return DistributionSolution(status=sol.status)
    base = handle.base
    feeder = handle.feeder
    val = sol.value
    out = DistributionSolution(status=OPTIMAL)
    out._base = base
    out.g_p = {k: val(e) * base for k, e in handle.g_p.items()}
    out.g_q = {k: val(e) * base for k, e in handle.g_q.items()}
    out.f_p = {k: val(e) * base for k, e in handle.f_p.items()}
    out.f_q = {k: val(e) * base for k, e in handle.f_q.items()}
    out.a = {k: val(e) for k, e in handle.a.items()}
    out.v = {k: val(e) for k, e in handle.v.items()}
    out.p_offer = val(handle.p_offer) * base
    out.p_bid = val(handle.p_bid) * base
    out.q_root = val(handle.q_root) * base if handle.q_root is not None else 0.0
    out.shed = {k: val(e) * base for k, e in handle.shed.items()}
    out.objective = sol.objective if objective is None else objective
    shunt = sum(ln.shunt_conductance * out.v[ln.from_bus] for ln in feeder.lines)
    out.losses = (sum(out.a[ln.id] * ln.resistance for ln in feeder.lines) + shunt) * base
    head = [ln for ln in feeder.lines if ln.from_bus == feeder.root]
    out.root_apparent_flow = sum(math.hypot(out.f_p[ln.id], out.f_q[ln.id]) for ln in head)
    res = check_cone_tightness(program, sol, handle.cone_names)
    out.max_cone_residual = max((r.relative for r in res.values()), default=0.0)
    out.relaxation_inexact = out.max_cone_residual > RELAXATION_TOL
    if out.relaxation_inexact:
        log.info("feeder %s: branch-flow relaxation inexact (%.2e)", feeder.name, out.max_cone_residual)
    return out


def solve_dso(
    feeder: Feeder,
    interface_price: float,
    load_delta: LoadDelta | None = None,
    base_mva: float = 10.0,
    options: DsoOptions | None = None,
    tolerances: Tolerances | None = None,
) -> DistributionSolution:
    program, handle = _build(feeder, interface_price, load_delta, base_mva, options)
    sol = solve(program, tolerances)
    out = extract_solution(program, handle, sol, _profit(handle, sol, interface_price))
    if not out.optimal or min(out.p_offer, out.p_bid) <= COMPLEMENTARITY_TOL:
        return out
    # Simultaneous buy and sell: re-solve with each side pinned at zero.
    candidates = []
    for pinned in (handle.p_offer, handle.p_bid):
        name = next(iter(pinned.terms))
        prog2, h2 = _build(feeder, interface_price, load_delta, base_mva, options)
        prog2.set_bounds(name, 0.0, 0.0)
        s2 = solve(prog2, tolerances)
        if s2.status == OPTIMAL:
            candidates.append((s2.objective, prog2, h2, s2))
    if not candidates:
        out.complementarity_degenerate = True
        return out
    _, prog2, h2, s2 = max(candidates, key=lambda c: c[0])
    best = extract_solution(prog2, h2, s2, _profit(h2, s2, interface_price))
    best.complementarity_degenerate = True
    return best


def _profit(handle: DsoHandle, sol: ProgramSolution, price: float) -> float | None:
    return sol.value(dso_objective(handle, price)) if sol.status == OPTIMAL else None


def energy_balance_residual(feeder: Feeder, sol: DistributionSolution, load_delta: LoadDelta | None = None) -> float:
    """generation + import - load - losses - shed adjustments, in MW."""
    lp, _ = perturbed_loads(feeder, load_delta)
    served = sum(lp.values()) - sum(sol.shed.values())
    return sum(sol.g_p.values()) + sol.p_bid - sol.p_offer - served - sol.losses

