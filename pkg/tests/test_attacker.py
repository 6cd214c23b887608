import json
import math

import numpy as np
import pytest

from gridstorm.attacker import (
    AttackBudget,
    AttackPlan,
    exhaustive_vertex_max,
    make_budget,
    plan_insidious,
    plan_naive,
    predict_flow_deltas,
    score,
)
from gridstorm.grid_model import compute_ptdf

from .oracles.vertex import oracle_paths, oracle_vertex_max


@pytest.fixture(scope="module")
def ptdf(bundled):
    return compute_ptdf(bundled.transmission, bundled.slack)


@pytest.fixture(scope="module")
def base_flows(feeder, pre_market):
    d = pre_market.distribution
    return {ln.id: (d.f_p[ln.id], d.f_q[ln.id]) for ln in feeder.lines}


def _random_budget(feeder, rng):
    up, lo, qup, qlo = {}, {}, {}, {}
    rho, gamma = float(rng.uniform(0, 1)), float(rng.choice([0.0, 1.0, rng.uniform(0, 1)]))
    for b in feeder.buses:
        cap = rho * b.load_p
        if b.load_p > 0 and rng.random() < 0.85:
            up[b.id], lo[b.id] = cap * rng.uniform(0, 1), -cap * rng.uniform(0, 1)
            qup[b.id], qlo[b.id] = cap * rng.uniform(0, 0.5), -cap * rng.uniform(0, 0.5)
        else:
            up[b.id] = lo[b.id] = qup[b.id] = qlo[b.id] = 0.0
    return AttackBudget(rho, gamma, up, lo, qup, qlo)


def test_zero_penetration_gives_zero_plan(feeder, ptdf):
    plan = plan_naive(feeder, ptdf, make_budget(feeder, 0.0))
    assert all(v == 0.0 for v in plan.delta_p.values())
    assert plan.objective == 0.0
    assert plan.objective_dist == 0.0 and plan.objective_trans == 0.0


def test_full_transmission_weight_pushes_every_load_up(feeder, ptdf):
    budget = make_budget(feeder, 0.5, gamma=1.0)
    plan = plan_naive(feeder, ptdf, budget)
    for b in budget.buses:
        assert plan.delta_p[b] == pytest.approx(budget.p_upper[b])


def test_bundled_naive_matches_exhaustive(feeder, ptdf):
    budget = make_budget(feeder, 0.5, gamma=0.0)
    plan = plan_naive(feeder, ptdf, budget)
    assert len(budget.buses) == 7
    assert plan.objective == pytest.approx(exhaustive_vertex_max(feeder, ptdf, budget), rel=1e-12)
    assert plan.objective == pytest.approx(oracle_vertex_max(feeder, ptdf, budget), rel=1e-12)
    assert not plan.heuristic


def test_naive_matches_vertex_oracle_on_random_budgets(feeder, ptdf):
    rng = np.random.default_rng(11)
    for _ in range(100):
        budget = _random_budget(feeder, rng)
        plan = plan_naive(feeder, ptdf, budget)
        best = oracle_vertex_max(feeder, ptdf, budget)
        assert plan.objective == pytest.approx(best, rel=1e-9, abs=1e-12)
        for b in feeder.bus_ids:
            assert budget.p_lower[b] - 1e-12 <= plan.delta_p[b] <= budget.p_upper[b] + 1e-12
            assert budget.q_lower[b] - 1e-12 <= plan.delta_q[b] <= budget.q_upper[b] + 1e-12


def test_flow_deltas_zero(feeder, ptdf):
    fd = predict_flow_deltas(feeder, ptdf, {}, {})
    assert all(v == 0.0 for v in fd.dist_p.values())
    assert all(v == 0.0 for v in fd.trans_p.values())


def test_leaf_unit_delta_follows_root_path(feeder):
    m, ids = oracle_paths(feeder)
    fd = predict_flow_deltas(feeder, None, {12: 1.0}, {})
    on_path = {ln.id for k, ln in enumerate(feeder.lines) if m[k, ids.index(12)]}
    assert on_path == {"0-3", "3-7", "7-8", "8-11", "11-12"}
    for lid, v in fd.dist_p.items():
        assert v == (1.0 if lid in on_path else 0.0)


def test_flow_deltas_match_incidence_oracle(feeder, ptdf):
    rng = np.random.default_rng(3)
    m, ids = oracle_paths(feeder)
    col = ptdf.column(feeder.interface_bus)
    for _ in range(20):
        x, y = rng.normal(0, 2, len(ids)), rng.normal(0, 2, len(ids))
        fd = predict_flow_deltas(feeder, ptdf, dict(zip(ids, x)), dict(zip(ids, y)))
        got_p = np.array([fd.dist_p[ln.id] for ln in feeder.lines])
        got_q = np.array([fd.dist_q[ln.id] for ln in feeder.lines])
        assert np.max(np.abs(got_p - m @ x)) <= 1e-12
        assert np.max(np.abs(got_q - m @ y)) <= 1e-12
        got_t = np.array([fd.trans_p[lid] for lid in ptdf.line_ids])
        assert np.max(np.abs(got_t + col * x.sum())) <= 1e-9


def test_flow_delta_superposition(feeder, ptdf):
    rng = np.random.default_rng(5)
    ids = feeder.bus_ids
    for _ in range(20):
        a, c = rng.normal(size=2)
        x, y = rng.normal(size=len(ids)), rng.normal(size=len(ids))
        fx = predict_flow_deltas(feeder, ptdf, dict(zip(ids, x)), dict(zip(ids, y)))
        fy = predict_flow_deltas(feeder, ptdf, dict(zip(ids, y)), dict(zip(ids, x)))
        fz = predict_flow_deltas(feeder, ptdf, dict(zip(ids, a * x + c * y)), dict(zip(ids, a * y + c * x)))
        for lid in fz.dist_p:
            assert fz.dist_p[lid] == pytest.approx(a * fx.dist_p[lid] + c * fy.dist_p[lid], abs=1e-12)
            assert fz.dist_q[lid] == pytest.approx(a * fx.dist_q[lid] + c * fy.dist_q[lid], abs=1e-12)
        for lid in fz.trans_p:
            assert fz.trans_p[lid] == pytest.approx(a * fx.trans_p[lid] + c * fy.trans_p[lid], abs=1e-9)


def test_objectives_nonnegative_and_zero_only_at_zero(feeder, ptdf):
    rng = np.random.default_rng(8)
    ids = feeder.bus_ids
    assert score(feeder, ptdf, 0.5, {}, {})[:3] == (0.0, 0.0, 0.0)
    for _ in range(50):
        x = dict(zip(ids, rng.normal(size=len(ids))))
        o_d, o_t, blended, _ = score(feeder, ptdf, float(rng.uniform()), x, {})
        assert o_d > 0 and o_t > 0 and blended > 0


def test_objective_monotone_in_penetration(feeder, ptdf):
    for gamma in (0.0, 0.5, 1.0):
        prev = -1.0
        for rho in np.linspace(0, 1, 11):
            val = plan_naive(feeder, ptdf, make_budget(feeder, float(rho), gamma)).objective
            assert val >= prev
            prev = val


def test_insidious_without_protection_hits_box_corner(feeder, ptdf, base_flows):
    budget = make_budget(feeder, 0.5)
    plan = plan_insidious(feeder, ptdf, budget, [], "0-3", base_flows)
    for b in budget.buses:
        assert plan.delta_p[b] == pytest.approx(budget.p_upper[b], abs=1e-6)
        assert plan.delta_q[b] == pytest.approx(budget.q_upper[b], abs=1e-6)


def _post_apparent(feeder, plan, base_flows):
    fd = predict_flow_deltas(feeder, None, plan.delta_p, plan.delta_q)
    return {lid: math.hypot(f[0] + fd.dist_p[lid], f[1] + fd.dist_q[lid]) for lid, f in base_flows.items()}


def _protected(feeder):
    return [ln.id for ln in feeder.breakered_lines if ln.id != "0-3"]


def test_insidious_half_penetration_overloads_root_only(feeder, ptdf, base_flows):
    plan = plan_insidious(feeder, ptdf, make_budget(feeder, 0.5), _protected(feeder), "0-3", base_flows)
    post = _post_apparent(feeder, plan, base_flows)
    assert post["0-3"] > feeder.line("0-3").breaker.trip_apparent_threshold
    for lid in _protected(feeder):
        assert post[lid] <= feeder.line(lid).breaker.trip_apparent_threshold


def test_insidious_quarter_penetration_keeps_root_closed(feeder, ptdf, base_flows):
    plan = plan_insidious(feeder, ptdf, make_budget(feeder, 0.25), _protected(feeder), "0-3", base_flows)
    post = _post_apparent(feeder, plan, base_flows)
    assert post["0-3"] < feeder.line("0-3").breaker.trip_apparent_threshold


def test_insidious_with_transmission_weight_protects_root(feeder, ptdf, base_flows):
    plan = plan_insidious(feeder, ptdf, make_budget(feeder, 0.5, gamma=1.0), _protected(feeder), "0-3", base_flows)
    post = _post_apparent(feeder, plan, base_flows)
    for ln in feeder.breakered_lines:
        assert post[ln.id] <= ln.breaker.trip_apparent_threshold
    assert abs(plan.total_delta_p) > 0


def test_insidious_rejects_overloaded_base(feeder, ptdf, base_flows):
    flows = dict(base_flows, **{"3-2": (100.0, 0.0)})
    with pytest.raises(ValueError):
        plan_insidious(feeder, ptdf, make_budget(feeder, 0.5), _protected(feeder), "0-3", flows)


def test_budget_invariants(feeder):
    b = make_budget(feeder, 0.5)
    ratio = math.tan(math.acos(0.9))
    for bus in feeder.buses:
        assert b.p_upper[bus.id] <= 0.5 * bus.load_p + 1e-12
        assert b.q_upper[bus.id] == pytest.approx(b.p_upper[bus.id] * ratio)
    with pytest.raises(ValueError):
        make_budget(feeder, 1.5)
    with pytest.raises(ValueError):
        make_budget(feeder, 0.5, gamma=-0.1)


def test_plan_json_round_trip(feeder, ptdf):
    plan = plan_naive(feeder, ptdf, make_budget(feeder, 0.25, 0.3))
    again = AttackPlan.from_dict(json.loads(plan.to_json()))
    assert again == plan


@pytest.mark.parametrize("gamma", [0.0, 1.0])
def test_insidious_exact_protection_and_monotone_push(feeder, ptdf, base_flows, gamma):
    f0 = base_flows["0-3"]
    u = np.array(f0) / math.hypot(*f0)
    prev = -math.inf
    for rho in np.linspace(0.05, 1.0, 20):
        plan = plan_insidious(feeder, ptdf, make_budget(feeder, float(rho), gamma), _protected(feeder), "0-3", base_flows)
        post = _post_apparent(feeder, plan, base_flows)
        guarded = _protected(feeder) + (["0-3"] if gamma > 0 else [])
        for lid in guarded:
            assert post[lid] <= feeder.line(lid).breaker.trip_apparent_threshold
        if gamma == 0.0:
            push = u[0] * plan.dist_delta_p["0-3"] + u[1] * plan.dist_delta_q["0-3"]
            assert push >= prev - 1e-6
            prev = push
        else:
            assert abs(plan.total_delta_p) >= prev - 1e-6
            prev = abs(plan.total_delta_p)
