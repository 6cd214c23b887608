"""Optimal IoT load perturbations: naive and insidious strategies.

Flow-change bookkeeping is linear: a distribution line sees the sum of the
deltas downstream of its receiving bus, a transmission line sees the PTDF
column of the interface bus times the net active-power delta. Load increase
is a withdrawal, so the transmission delta is ``-omega * sum(delta_p)``.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .conic import OPTIMAL, ConicProgram, quicksum, solve
from .grid_model import BusId, Feeder, PtdfMatrix, downstream_set

log = logging.getLogger(__name__)

PF_ATTACK = 0.9
ENUMERATION_LIMIT = 20
TIGHTEN_STEP = 0.98
MAX_TIGHTEN = 200
MAX_CUTS = 100


@dataclass(frozen=True)
class AttackBudget:
    rho: float
    gamma: float
    p_upper: Mapping[BusId, float]
    p_lower: Mapping[BusId, float]
    q_upper: Mapping[BusId, float]
    q_lower: Mapping[BusId, float]

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"penetration {self.rho} outside [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma {self.gamma} outside [0, 1]")
        for b in self.p_upper:
            if not self.p_lower[b] <= 0.0 <= self.p_upper[b]:
                raise ValueError(f"bus {b}: active bounds must bracket zero")
            if not self.q_lower[b] <= 0.0 <= self.q_upper[b]:
                raise ValueError(f"bus {b}: reactive bounds must bracket zero")

    @property
    def buses(self) -> list[BusId]:
        return [b for b in self.p_upper if self.p_upper[b] > 0 or self.p_lower[b] < 0 or self.q_upper[b] > 0 or self.q_lower[b] < 0]


def make_budget(feeder: Feeder, rho: float, gamma: float = 0.0, pf: float = PF_ATTACK) -> AttackBudget:
    """Symmetric box: |delta_p| <= rho * iot_share * load, reactive at ``pf``."""
    ratio = math.tan(math.acos(pf))
    up, lo, qup, qlo = {}, {}, {}, {}
    for b in feeder.buses:
        cap = rho * b.iot_share * b.load_p
        up[b.id], lo[b.id] = cap, -cap
        qup[b.id], qlo[b.id] = cap * ratio, -cap * ratio
    return AttackBudget(rho, gamma, up, lo, qup, qlo)


@dataclass
class FlowDeltas:
    dist_p: dict[str, float]
    dist_q: dict[str, float]
    trans_p: dict[str, float]


def predict_flow_deltas(
    feeder: Feeder,
    ptdf: PtdfMatrix | None,
    delta_p: Mapping[BusId, float],
    delta_q: Mapping[BusId, float],
) -> FlowDeltas:
    dp, dq = {}, {}
    for ln in feeder.lines:
        down = downstream_set(feeder, ln.to_bus)
        dp[ln.id] = sum(delta_p.get(b, 0.0) for b in down)
        dq[ln.id] = sum(delta_q.get(b, 0.0) for b in down)
    tp = {}
    if ptdf is not None:
        total = sum(delta_p.values())
        col = ptdf.column(feeder.interface_bus)
        tp = {lid: -float(w) * total for lid, w in zip(ptdf.line_ids, col)}
    return FlowDeltas(dp, dq, tp)


def path_matrix(feeder: Feeder, buses: Sequence[BusId]) -> np.ndarray:
    """Rows: lines; columns: ``buses``; 1 where the bus is downstream of the line."""
    m = np.zeros((len(feeder.lines), len(buses)))
    col = {b: j for j, b in enumerate(buses)}
    for k, ln in enumerate(feeder.lines):
        for b in downstream_set(feeder, ln.to_bus):
            if b in col:
                m[k, col[b]] = 1.0
    return m


def _ptdf_weight(feeder: Feeder, ptdf: PtdfMatrix | None) -> float:
    if ptdf is None:
        return 0.0
    col = ptdf.column(feeder.interface_bus)
    return float(col @ col)


@dataclass
class AttackPlan:
    strategy: str
    rho: float
    gamma: float
    delta_p: dict
    delta_q: dict
    dist_delta_p: dict[str, float]
    dist_delta_q: dict[str, float]
    trans_delta_p: dict[str, float]
    objective_dist: float
    objective_trans: float
    objective: float
    heuristic: bool = False
    notes: list[str] = field(default_factory=list)

    def load_delta(self) -> dict:
        return {b: (self.delta_p.get(b, 0.0), self.delta_q.get(b, 0.0)) for b in set(self.delta_p) | set(self.delta_q)}

    @property
    def total_delta_p(self) -> float:
        return sum(self.delta_p.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta_p"] = {str(k): v for k, v in self.delta_p.items()}
        d["delta_q"] = {str(k): v for k, v in self.delta_q.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, bus_type=int) -> "AttackPlan":
        d = dict(d)
        d["delta_p"] = {bus_type(k): v for k, v in d["delta_p"].items()}
        d["delta_q"] = {bus_type(k): v for k, v in d["delta_q"].items()}
        return cls(**d)


def score(feeder: Feeder, ptdf: PtdfMatrix | None, gamma: float, delta_p: Mapping, delta_q: Mapping) -> tuple[float, float, float, FlowDeltas]:
    fd = predict_flow_deltas(feeder, ptdf, delta_p, delta_q)
    o_d = sum(fd.dist_p[k] ** 2 + fd.dist_q[k] ** 2 for k in fd.dist_p)
    o_t = sum(v * v for v in fd.trans_p.values())
    return o_d, o_t, (1.0 - gamma) * o_d + gamma * o_t, fd


def _plan(strategy, feeder, ptdf, budget, dp, dq, heuristic=False, notes=None) -> AttackPlan:
    dp = {b.id: float(dp.get(b.id, 0.0)) for b in feeder.buses}
    dq = {b.id: float(dq.get(b.id, 0.0)) for b in feeder.buses}
    o_d, o_t, blended, fd = score(feeder, ptdf, budget.gamma, dp, dq)
    return AttackPlan(
        strategy=strategy,
        rho=budget.rho,
        gamma=budget.gamma,
        delta_p=dp,
        delta_q=dq,
        dist_delta_p=fd.dist_p,
        dist_delta_q=fd.dist_q,
        trans_delta_p=fd.trans_p,
        objective_dist=o_d,
        objective_trans=o_t,
        objective=blended,
        heuristic=heuristic,
        notes=list(notes or []),
    )


def _best_vertex(m: np.ndarray, lo: np.ndarray, hi: np.ndarray, w_dist: float, w_sum: float, enumerate_all: bool):
    """Maximise w_dist*||m x||^2 + w_sum*(1'x)^2 over box vertices.

    Ties go to the larger 1'x, then to the earlier pattern.
    """
    n = len(lo)
    if n == 0:
        return np.zeros(0)
    if enumerate_all:
        signs = np.array(list(itertools.product((1, 0), repeat=n)), dtype=bool)
    else:
        signs = np.array([[True] * n, [False] * n])
    x = np.where(signs, hi, lo)
    y = x @ m.T
    val = w_dist * np.einsum("ij,ij->i", y, y) + w_sum * x.sum(axis=1) ** 2
    best = val.max()
    tol = 1e-9 * max(1.0, abs(best))
    cand = np.flatnonzero(val >= best - tol)
    sums = x[cand].sum(axis=1)
    pick = cand[np.flatnonzero(sums >= sums.max() - 1e-12)[0]]
    return x[pick]


def plan_naive(feeder: Feeder, ptdf: PtdfMatrix | None, budget: AttackBudget) -> AttackPlan:
    """Vertex maximisation of the blended quadratic objective.

    The objective separates into an active and a reactive part, so each is
    maximised over its own box.
    """
    buses = budget.buses
    if not buses:
        return _plan("naive", feeder, ptdf, budget, {}, {})
    exact = len(buses) <= ENUMERATION_LIMIT
    m = path_matrix(feeder, buses)
    c = _ptdf_weight(feeder, ptdf)
    g = budget.gamma
    plo = np.array([budget.p_lower[b] for b in buses])
    phi = np.array([budget.p_upper[b] for b in buses])
    qlo = np.array([budget.q_lower[b] for b in buses])
    qhi = np.array([budget.q_upper[b] for b in buses])
    xp = _best_vertex(m, plo, phi, 1.0 - g, g * c, exact)
    xq = _best_vertex(m, qlo, qhi, 1.0 - g, 0.0, exact)
    notes = [] if exact else [f"{len(buses)} attacked buses: uniform-direction candidates only"]
    return _plan("naive", feeder, ptdf, budget, dict(zip(buses, xp)), dict(zip(buses, xq)), not exact, notes)


def exhaustive_vertex_max(feeder: Feeder, ptdf: PtdfMatrix | None, budget: AttackBudget) -> float:
    """Brute-force maximum of the blended objective over all joint p/q vertices."""
    buses = budget.buses
    best = 0.0
    for sp in itertools.product((0, 1), repeat=len(buses)):
        dp = {b: (budget.p_upper[b] if s else budget.p_lower[b]) for b, s in zip(buses, sp)}
        for sq in itertools.product((0, 1), repeat=len(buses)):
            dq = {b: (budget.q_upper[b] if s else budget.q_lower[b]) for b, s in zip(buses, sq)}
            best = max(best, score(feeder, ptdf, budget.gamma, dp, dq)[2])
    return best


def _unit(vec: tuple[float, float]) -> tuple[float, float]:
    n = math.hypot(*vec)
    if n < 1e-12:
        return (1.0, 0.0)
    return (vec[0] / n, vec[1] / n)


def plan_insidious(
    feeder: Feeder,
    ptdf: PtdfMatrix | None,
    budget: AttackBudget,
    protected_branches: Iterable[str],
    target_branch: str,
    base_flows: Mapping[str, tuple[float, float]],
    thresholds: Mapping[str, float] | None = None,
) -> AttackPlan:
    """LP attack that pushes the target branch while keeping protected breakers closed.

    ``base_flows`` are pre-attack sending-end (MW, MVAr) per line;
    ``thresholds`` default to each line's breaker trip setting. With
    gamma > 0 the target branch is protected too and the net active delta is
    driven to its extreme in whichever direction is larger.

    Protection rows are linear along each branch's base flow direction. When
    the exact apparent flow still breaks a threshold, a cut tangent to the
    2%-tightened trip circle at the offending flow is added and the LP is
    re-solved.
    """
    protected = list(dict.fromkeys(protected_branches))
    feeder.line(target_branch)
    thr = {}
    for lid in protected:
        ln = feeder.line(lid)
        t = (thresholds or {}).get(lid, ln.breaker.trip_apparent_threshold)
        if t is None:
            raise ValueError(f"protected branch {lid} has no breaker threshold")
        thr[lid] = float(t)
    if budget.gamma > 0 and target_branch not in thr:
        t = (thresholds or {}).get(target_branch, feeder.line(target_branch).breaker.trip_apparent_threshold)
        if t is not None:
            protected.append(target_branch)
            thr[target_branch] = float(t)
    for lid, t in thr.items():
        if math.hypot(*base_flows[lid]) > t:
            raise ValueError(f"base flow on {lid} already exceeds its threshold")

    buses = budget.buses
    if not buses:
        return _plan("insidious", feeder, ptdf, budget, {}, {})
    down = {ln.id: set(downstream_set(feeder, ln.to_bus)) for ln in feeder.lines}
    u_target = _unit(base_flows[target_branch])
    g = budget.gamma
    signs = (1.0, -1.0) if g > 0 else (1.0,)

    best = None
    notes = []
    for s in signs:
        res = _insidious_direction(feeder, budget, buses, down, protected, thr, base_flows, target_branch, u_target, g, s)
        if res is None:
            continue
        dp, dq, lp_val, note = res
        if note:
            notes.append(f"direction {s:+.0f}: {note}")
        if best is None or lp_val > best[2] + 1e-9:
            best = (dp, dq, lp_val)
    if best is None:
        raise RuntimeError("insidious LP infeasible for every direction")
    return _plan("insidious", feeder, ptdf, budget, best[0], best[1], notes=notes)


def _exact_violations(feeder, protected, thr, base_flows, dp, dq) -> dict[str, tuple[float, float]]:
    fd = predict_flow_deltas(feeder, None, dp, dq)
    out = {}
    for lid in protected:
        f0 = base_flows[lid]
        flow = (f0[0] + fd.dist_p[lid], f0[1] + fd.dist_q[lid])
        if math.hypot(*flow) > thr[lid] * (1 - 1e-9):
            out[lid] = flow
    return out


def _insidious_direction(feeder, budget, buses, down, protected, thr, base_flows, target, u_t, gamma, sign):
    """Tangent cuts on violated trip circles, then uniform tightening as a fallback.

    Cuts touch the trip circle shrunk by 2%, which leaves room for the losses
    that the lossless bookkeeping ignores.
    """
    cuts: list[tuple[str, tuple[float, float], float]] = []
    for _ in range(MAX_CUTS):
        res = _solve_insidious_lp(feeder, budget, buses, down, protected, thr, base_flows, target, u_t, gamma, sign, cuts)
        if res is None:
            return None
        dp, dq, val = res
        violated = _exact_violations(feeder, protected, thr, base_flows, dp, dq)
        if not violated:
            return dp, dq, val, None
        for lid, flow in violated.items():
            cuts.append((lid, _unit(flow), thr[lid] * TIGHTEN_STEP))
    eff = dict(thr)
    for _ in range(MAX_TIGHTEN):
        for lid in violated:
            eff[lid] *= TIGHTEN_STEP
        res = _solve_insidious_lp(feeder, budget, buses, down, protected, eff, base_flows, target, u_t, gamma, sign, cuts)
        if res is None:
            return None
        dp, dq, val = res
        violated = _exact_violations(feeder, protected, thr, base_flows, dp, dq)
        if not violated:
            return dp, dq, val, "tangent cuts did not settle; thresholds tightened"
    return None


def _solve_insidious_lp(feeder, budget, buses, down, protected, thr, base_flows, target, u_t, gamma, sign, cuts=()):
    prog = ConicProgram("insidious")
    xp = {b: prog.add_var(f"dp[{b}]", budget.p_lower[b], budget.p_upper[b]) for b in buses}
    xq = {b: prog.add_var(f"dq[{b}]", budget.q_lower[b], budget.q_upper[b]) for b in buses}

    def line_delta(lid):
        return (
            quicksum(xp[b] for b in buses if b in down[lid]),
            quicksum(xq[b] for b in buses if b in down[lid]),
        )

    for lid in protected:
        u = _unit(base_flows[lid])
        dpl, dql = line_delta(lid)
        f0 = base_flows[lid]
        prog.add_linear(f"protect[{lid}]", u[0] * (f0[0] + dpl) + u[1] * (f0[1] + dql), "<=", thr[lid])
    for k, (lid, u, t) in enumerate(cuts):
        dpl, dql = line_delta(lid)
        f0 = base_flows[lid]
        prog.add_linear(f"cut{k}[{lid}]", u[0] * (f0[0] + dpl) + u[1] * (f0[1] + dql), "<=", t)
    dpt, dqt = line_delta(target)
    directional = u_t[0] * dpt + u_t[1] * dqt
    total = quicksum(xp.values())
    # tiny preference for consumption increase keeps the vertex unique
    obj = (1.0 - gamma) * directional + gamma * sign * total + 1e-6 * (total + quicksum(xq.values()))
    prog.set_objective(obj, "max")
    sol = solve(prog)
    if sol.status != OPTIMAL:
        log.debug("insidious LP %s", sol.status)
        return None
    dp = {b: sol.value(xp[b]) for b in buses}
    dq = {b: sol.value(xq[b]) for b in buses}
    val = sol.value((1.0 - gamma) * directional + gamma * sign * total)
    return dp, dq, val
