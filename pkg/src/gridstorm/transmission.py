"""TSO welfare maximisation (lossless DC) and its LP dual.

Everything here is in physical units: MW, rad, $/h. The flow law is
``f = (base / X) * (theta_o - theta_r)`` with X in p.u. on ``base`` MVA.

Dual convention (Lagrangian ``W + sum lambda_b (lhs_b - L_b) - sum mu (g - u)``):
lambda_b is the LMP, all inequality multipliers are nonnegative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .conic import OPTIMAL, ConicProgram, Expr, Tolerances, quicksum, solve
from .grid_model import BusId, TopologyError, TransmissionNetwork, default_slack, transmission_connected


@dataclass(frozen=True)
class InterfaceOffer:
    """What a DSO declares at its interface bus.

    ``offer_price`` is C^O (price the DSO asks to sell), ``bid_price`` C^B
    (price it pays to buy). ``capacity`` caps each direction (MW).
    ``offer_cap``/``bid_cap`` optionally tighten one side (used to pin
    complementarity); None means ``capacity``.
    """

    bus: BusId
    offer_price: float
    bid_price: float
    capacity: float
    offer_cap: float | None = None
    bid_cap: float | None = None

    @property
    def offer_limit(self) -> float:
        return self.capacity if self.offer_cap is None else self.offer_cap

    @property
    def bid_limit(self) -> float:
        return self.capacity if self.bid_cap is None else self.bid_cap


@dataclass
class TsoData:
    network: TransmissionNetwork
    interfaces: tuple[InterfaceOffer, ...] = ()
    extra_load: Mapping[BusId, float] = field(default_factory=dict)
    base_mva: float = 100.0
    slack_bus: BusId | None = None

    def __post_init__(self):
        if self.slack_bus is None:
            self.slack_bus = default_slack(self.network)
        if len(self.network.buses) > 1 and not transmission_connected(self.network):
            raise TopologyError(["transmission network is disconnected"])
        ids = set(self.network.bus_ids)
        for itf in self.interfaces:
            if itf.bus not in ids:
                raise KeyError(f"interface bus {itf.bus!r} not in network")

    def load(self, bus: BusId) -> float:
        return self.network.bus(bus).load_p + self.extra_load.get(bus, 0.0)

    def susceptance(self, line) -> float:
        return self.base_mva / line.reactance

    def constant_welfare(self) -> float:
        return sum(b.bid_price * self.load(b.id) for b in self.network.buses)


@dataclass
class TsoPrimalHandle:
    g: dict[str, Expr]
    f: dict[str, Expr]
    theta: dict[BusId, Expr]
    p_offer: dict[BusId, Expr]
    p_bid: dict[BusId, Expr]
    objective: Expr
    prefix: str


@dataclass
class TsoDualHandle:
    lam: dict[BusId, Expr]
    alpha_up: dict[str, Expr]
    alpha_lo: dict[str, Expr]
    psi_up: dict[BusId, Expr]
    psi_lo: dict[BusId, Expr]
    xi: dict[str, Expr]
    delta_up: dict[str, Expr]
    delta_lo: dict[str, Expr]
    eta: Expr
    objective: Expr
    prefix: str


def add_tso_primal(program: ConicProgram, data: TsoData, prefix: str = "T.") -> TsoPrimalHandle:
    net = data.network
    P = prefix
    g = {gen.id: program.add_var(f"{P}g[{gen.id}]") for gen in net.generators}
    theta = {b.id: program.add_var(f"{P}theta[{b.id}]") for b in net.buses}
    f = {ln.id: program.add_var(f"{P}f[{ln.id}]") for ln in net.lines}
    p_offer, p_bid = {}, {}
    for itf in data.interfaces:
        p_offer[itf.bus] = program.add_var(f"{P}p_offer[{itf.bus}]", 0.0)
        p_bid[itf.bus] = program.add_var(f"{P}p_bid[{itf.bus}]", 0.0)

    gens_at: dict[BusId, list] = {b.id: [] for b in net.buses}
    for gen in net.generators:
        gens_at[gen.bus].append(gen)
    into: dict[BusId, list] = {b.id: [] for b in net.buses}
    out: dict[BusId, list] = {b.id: [] for b in net.buses}
    for ln in net.lines:
        into[ln.to_bus].append(ln)
        out[ln.from_bus].append(ln)

    for b in net.buses:
        lhs = (
            quicksum(g[x.id] for x in gens_at[b.id])
            + quicksum(f[ln.id] for ln in into[b.id])
            - quicksum(f[ln.id] for ln in out[b.id])
        )
        if b.id in p_offer:
            lhs = lhs + p_offer[b.id] - p_bid[b.id]
        program.add_linear(f"{P}balance[{b.id}]", lhs, "==", data.load(b.id))
    for gen in net.generators:
        program.add_linear(f"{P}gmax[{gen.id}]", g[gen.id], "<=", gen.p_max)
        program.add_linear(f"{P}gmin[{gen.id}]", g[gen.id], ">=", gen.p_min)
    for itf in data.interfaces:
        program.add_linear(f"{P}offer_cap[{itf.bus}]", p_offer[itf.bus], "<=", itf.offer_limit)
        program.add_linear(f"{P}bid_cap[{itf.bus}]", p_bid[itf.bus], "<=", itf.bid_limit)
    for ln in net.lines:
        bsus = data.susceptance(ln)
        program.add_linear(f"{P}flow[{ln.id}]", f[ln.id] - bsus * (theta[ln.from_bus] - theta[ln.to_bus]), "==", 0.0)
        program.add_linear(f"{P}fmax[{ln.id}]", f[ln.id], "<=", ln.flow_limit)
        program.add_linear(f"{P}fmin[{ln.id}]", f[ln.id], ">=", -ln.flow_limit)
    program.add_linear(f"{P}reference", theta[data.slack_bus], "==", 0.0)

    obj = (
        data.constant_welfare()
        + quicksum(itf.bid_price * p_bid[itf.bus] for itf in data.interfaces)
        - quicksum(gen.offer_price * g[gen.id] for gen in net.generators)
        - quicksum(itf.offer_price * p_offer[itf.bus] for itf in data.interfaces)
    )
    return TsoPrimalHandle(g, f, theta, p_offer, p_bid, obj, P)


def add_tso_dual(program: ConicProgram, data: TsoData, prefix: str = "TD.") -> TsoDualHandle:
    net = data.network
    P = prefix
    lam = {b.id: program.add_var(f"{P}lambda[{b.id}]") for b in net.buses}
    a_up = {gen.id: program.add_var(f"{P}alpha_up[{gen.id}]", 0.0) for gen in net.generators}
    a_lo = {gen.id: program.add_var(f"{P}alpha_lo[{gen.id}]", 0.0) for gen in net.generators}
    psi_up = {itf.bus: program.add_var(f"{P}psi_up[{itf.bus}]", 0.0) for itf in data.interfaces}
    psi_lo = {itf.bus: program.add_var(f"{P}psi_lo[{itf.bus}]", 0.0) for itf in data.interfaces}
    xi = {ln.id: program.add_var(f"{P}xi[{ln.id}]") for ln in net.lines}
    d_up = {ln.id: program.add_var(f"{P}delta_up[{ln.id}]", 0.0) for ln in net.lines}
    d_lo = {ln.id: program.add_var(f"{P}delta_lo[{ln.id}]", 0.0) for ln in net.lines}
    eta = program.add_var(f"{P}eta")

    for gen in net.generators:
        program.add_linear(
            f"{P}dual_g[{gen.id}]", gen.offer_price - lam[gen.bus] + a_up[gen.id] - a_lo[gen.id], "==", 0.0
        )
    for itf in data.interfaces:
        program.add_linear(f"{P}dual_offer[{itf.bus}]", lam[itf.bus] - psi_up[itf.bus], "<=", itf.offer_price)
        program.add_linear(f"{P}dual_bid[{itf.bus}]", lam[itf.bus] + psi_lo[itf.bus], ">=", itf.bid_price)
    for ln in net.lines:
        program.add_linear(
            f"{P}dual_f[{ln.id}]",
            lam[ln.to_bus] - lam[ln.from_bus] - xi[ln.id] - d_up[ln.id] + d_lo[ln.id],
            "==",
            0.0,
        )
    for b in net.buses:
        expr = quicksum(xi[ln.id] * data.susceptance(ln) for ln in net.lines if ln.from_bus == b.id) - quicksum(
            xi[ln.id] * data.susceptance(ln) for ln in net.lines if ln.to_bus == b.id
        )
        if b.id == data.slack_bus:
            expr = expr - eta
        program.add_linear(f"{P}dual_theta[{b.id}]", expr, "==", 0.0)

    obj = (
        data.constant_welfare()
        - quicksum(data.load(b.id) * lam[b.id] for b in net.buses)
        + quicksum(gen.p_max * a_up[gen.id] - gen.p_min * a_lo[gen.id] for gen in net.generators)
        + quicksum(itf.offer_limit * psi_up[itf.bus] + itf.bid_limit * psi_lo[itf.bus] for itf in data.interfaces)
        + quicksum(ln.flow_limit * (d_up[ln.id] + d_lo[ln.id]) for ln in net.lines)
    )
    return TsoDualHandle(lam, a_up, a_lo, psi_up, psi_lo, xi, d_up, d_lo, eta, obj, P)


def build_tso_program(data: TsoData) -> ConicProgram:
    program = ConicProgram("tso")
    h = add_tso_primal(program, data, prefix="")
    program.set_objective(h.objective, "max")
    return program


def build_tso_dual(data: TsoData) -> ConicProgram:
    program = ConicProgram("tso_dual")
    h = add_tso_dual(program, data, prefix="")
    program.set_objective(h.objective, "min")
    return program


@dataclass
class TransmissionSolution:
    status: str
    g_p: dict[str, float] = field(default_factory=dict)
    f_p: dict[str, float] = field(default_factory=dict)
    theta: dict = field(default_factory=dict)
    p_offer: dict = field(default_factory=dict)
    p_bid: dict = field(default_factory=dict)
    lmp: dict = field(default_factory=dict)
    alpha_up: dict[str, float] = field(default_factory=dict)
    alpha_lo: dict[str, float] = field(default_factory=dict)
    psi_up: dict = field(default_factory=dict)
    psi_lo: dict = field(default_factory=dict)
    xi: dict[str, float] = field(default_factory=dict)
    delta_up: dict[str, float] = field(default_factory=dict)
    delta_lo: dict[str, float] = field(default_factory=dict)
    objective: float = math.nan
    dual_objective: float = math.nan

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def production_welfare(self) -> float:
        """o^T without the constant demand-bid term."""
        return self._production

    _production: float = math.nan

    def to_dict(self) -> dict:
        keys = ["g_p", "f_p", "theta", "p_offer", "p_bid", "lmp", "alpha_up", "alpha_lo", "psi_up", "psi_lo",
                "xi", "delta_up", "delta_lo"]
        out = {"status": self.status, "objective": self.objective, "dual_objective": self.dual_objective}
        for k in keys:
            out[k] = {str(a): b for a, b in getattr(self, k).items()}
        return out


def solve_tso(data: TsoData, tolerances: Tolerances | None = None) -> TransmissionSolution:
    """Solve the primal LP; duals come from the solver's multipliers.

    ``dual_objective`` is the explicit dual LP objective evaluated at those
    multipliers, so strong duality is checked rather than assumed.
    """
    program = ConicProgram("tso")
    h = add_tso_primal(program, data, prefix="")
    program.set_objective(h.objective, "max")
    sol = solve(program, tolerances)
    if sol.status != OPTIMAL:
        return TransmissionSolution(status=sol.status)
    return _extract(data, h, sol)


def _extract(data: TsoData, h: TsoPrimalHandle, sol) -> TransmissionSolution:
    net = data.network
    d = sol.duals
    P = h.prefix
    out = TransmissionSolution(status=OPTIMAL)
    out.g_p = {k: sol.value(e) for k, e in h.g.items()}
    out.f_p = {k: sol.value(e) for k, e in h.f.items()}
    out.theta = {k: sol.value(e) for k, e in h.theta.items()}
    out.p_offer = {k: sol.value(e) for k, e in h.p_offer.items()}
    out.p_bid = {k: sol.value(e) for k, e in h.p_bid.items()}
    out.lmp = {b.id: -d[f"{P}balance[{b.id}]"] for b in net.buses}
    out.alpha_up = {g.id: d[f"{P}gmax[{g.id}]"] for g in net.generators}
    out.alpha_lo = {g.id: d[f"{P}gmin[{g.id}]"] for g in net.generators}
    out.psi_up = {i.bus: d[f"{P}offer_cap[{i.bus}]"] for i in data.interfaces}
    out.psi_lo = {i.bus: d[f"{P}bid_cap[{i.bus}]"] for i in data.interfaces}
    out.xi = {ln.id: d[f"{P}flow[{ln.id}]"] for ln in net.lines}
    out.delta_up = {ln.id: d[f"{P}fmax[{ln.id}]"] for ln in net.lines}
    out.delta_lo = {ln.id: d[f"{P}fmin[{ln.id}]"] for ln in net.lines}
    out.objective = sol.value(h.objective)
    out._production = out.objective - data.constant_welfare()
    out.dual_objective = dual_objective_value(data, out)
    return out


def dual_objective_value(data: TsoData, sol: TransmissionSolution) -> float:
    net = data.network
    return (
        data.constant_welfare()
        - sum(data.load(b.id) * sol.lmp[b.id] for b in net.buses)
        + sum(g.p_max * sol.alpha_up[g.id] - g.p_min * sol.alpha_lo[g.id] for g in net.generators)
        + sum(i.offer_limit * sol.psi_up[i.bus] + i.bid_limit * sol.psi_lo[i.bus] for i in data.interfaces)
        + sum(ln.flow_limit * (sol.delta_up[ln.id] + sol.delta_lo[ln.id]) for ln in net.lines)
    )


def interface_identity(offer: InterfaceOffer, sol: TransmissionSolution) -> tuple[float, float]:
    """Both sides of lambda*(pO - pB) = C^O pO + psi_up*P_O - C^B pB + psi_lo*P_B.

    The right-hand side follows from complementary slackness of the interface
    rows: (lambda - psi_up - C^O) pO = 0 and (lambda + psi_lo - C^B) pB = 0.
    """
    b = offer.bus
    lhs = sol.lmp[b] * (sol.p_offer[b] - sol.p_bid[b])
    rhs = (
        offer.offer_price * sol.p_offer[b]
        + sol.psi_up[b] * offer.offer_limit
        - offer.bid_price * sol.p_bid[b]
        + sol.psi_lo[b] * offer.bid_limit
    )
    return lhs, rhs
