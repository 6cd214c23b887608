"""One-off cross-check of the feeder program with cvxpy.

Reads the raw case JSON (no gridstorm imports), builds the branch-flow
relaxation in MW/MVAr with squared voltages, and prints the optimal profit.
The printed value is frozen in test_conic.py.

    python3 tests/oracles/dso_cvxpy.py [price]
"""

import json
import sys
from pathlib import Path

import cvxpy as cp

CASE = Path(__file__).resolve().parents[2] / "src" / "gridstorm" / "cases" / "rts3_13bus.json"


def solve(price: float) -> float:
    doc = json.loads(CASE.read_text())
    fd = doc["feeders"][0]
    base = doc["bases"]["distribution_mva"]
    cap = next(b for b in doc["transmission"]["buses"] if b["id"] == fd["interface_bus"])["interface_capacity"]
    buses = {b["id"]: b for b in fd["buses"]}
    root = next(b["id"] for b in fd["buses"] if b["is_root"])
    lines = fd["lines"]
    gens = fd["generators"]

    v = {b: cp.Variable() for b in buses}
    P = {ln["id"]: cp.Variable() for ln in lines}  # MW, sending end
    Q = {ln["id"]: cp.Variable() for ln in lines}
    ell = {ln["id"]: cp.Variable(nonneg=True) for ln in lines}  # |I|^2 p.u.
    gp = {g["id"]: cp.Variable() for g in gens}
    gq = {g["id"]: cp.Variable() for g in gens}
    buy, sell, qroot = cp.Variable(nonneg=True), cp.Variable(nonneg=True), cp.Variable()

    cons = [buy <= cap, sell <= cap]
    for b, rec in buses.items():
        cons += [v[b] >= rec["v_min"], v[b] <= rec["v_max"]]
    for g in gens:
        cons += [gp[g["id"]] >= g["p_min"], gp[g["id"]] <= g["p_max"], gq[g["id"]] >= g["q_min"], gq[g["id"]] <= g["q_max"]]
    for ln in lines:
        i, o, r = ln["id"], ln["from_bus"], ln["to_bus"]
        R, X = ln["resistance"], ln["reactance"]
        p, q = P[i] / base, Q[i] / base
        cons.append(v[o] - v[r] == 2 * (R * p + X * q) - (R**2 + X**2) * ell[i])
        cons.append(cp.quad_over_lin(cp.hstack([p, q]), v[o]) <= ell[i])
        s = ln["apparent_limit"]
        cons.append(cp.norm(cp.hstack([P[i], Q[i]])) <= s)
        cons.append(cp.norm(cp.hstack([P[i] - R * ell[i] * base, Q[i] - X * ell[i] * base])) <= s)
    for b, rec in buses.items():
        out_l = [ln for ln in lines if ln["from_bus"] == b]
        in_l = [ln for ln in lines if ln["to_bus"] == b]
        gsh = sum(ln["shunt_conductance"] for ln in out_l) * base
        bsh = sum(ln["shunt_susceptance"] for ln in out_l) * base
        op = sum(P[ln["id"]] for ln in out_l) - sum(P[ln["id"]] - ln["resistance"] * ell[ln["id"]] * base for ln in in_l)
        oq = sum(Q[ln["id"]] for ln in out_l) - sum(Q[ln["id"]] - ln["reactance"] * ell[ln["id"]] * base for ln in in_l)
        if b == root:
            cons.append(op + gsh * v[b] == buy - sell)
            cons.append(oq - bsh * v[b] == qroot)
            continue
        gpb = sum(gp[g["id"]] for g in gens if g["bus"] == b)
        gqb = sum(gq[g["id"]] for g in gens if g["bus"] == b)
        cons.append(op + gsh * v[b] == gpb - rec["load_p"])
        cons.append(oq - bsh * v[b] == gqb - rec["load_q"] + 0)

    revenue = fd["tariff"] * sum(b["load_p"] for b in fd["buses"])
    cost = sum(g["offer_price"] * gp[g["id"]] for g in gens)
    prob = cp.Problem(cp.Maximize(revenue - cost + price * (sell - buy)), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value


if __name__ == "__main__":
    price = float(sys.argv[1]) if len(sys.argv) > 1 else 17.0
    print(f"{solve(price):.6f}")
