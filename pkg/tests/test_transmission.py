import numpy as np
import pytest

from gridstorm.conic import solve
from gridstorm.grid_model import TopologyError
from gridstorm.transmission import (
    InterfaceOffer,
    TsoData,
    build_tso_dual,
    build_tso_program,
    dual_objective_value,
    interface_identity,
    solve_tso,
)

from .conftest import tx_case


def _one_bus():
    return tx_case([(1, 100.0, 0.0)], [], [("g", 1, 10.0, 200.0)]).transmission


def _two_bus(load_b=100.0):
    return tx_case(
        [("A", 0.0, 0.0), ("B", load_b, 0.0)],
        [("AB", "A", "B", 0.1, 40.0)],
        [("gA", "A", 10.0, 200.0), ("gB", "B", 50.0, 200.0)],
    ).transmission


def _brute_force_two_bus(load_b):
    """Cheapest feasible dispatch on a 0.1 MW grid."""
    best = None
    for k in range(0, 2001):
        ga = k / 10.0
        gb = load_b - ga
        if gb < -1e-9 or gb > 200.0 or ga > 40.0 + 1e-9:
            continue
        cost = 10.0 * ga + 50.0 * gb
        if best is None or cost < best[0]:
            best = (cost, ga, gb)
    return best


def test_single_bus():
    sol = solve_tso(TsoData(_one_bus()))
    assert sol.optimal
    assert sol.g_p["g"] == pytest.approx(100.0, abs=1e-5)
    assert sol.lmp[1] == pytest.approx(10.0, abs=1e-5)
    dual = solve(build_tso_dual(TsoData(_one_bus())))
    assert dual.objective == pytest.approx(sol.objective, abs=1e-5)
    assert sol.objective == pytest.approx(-1000.0, abs=1e-4)


def test_two_bus_congested_against_brute_force():
    data = TsoData(_two_bus())
    sol = solve_tso(data)
    cost, ga, gb = _brute_force_two_bus(100.0)
    assert -sol.objective == pytest.approx(cost, rel=1e-4)
    assert sol.f_p["AB"] == pytest.approx(40.0, abs=1e-5)
    assert sol.g_p["gA"] == pytest.approx(ga, abs=1e-4)
    assert sol.g_p["gB"] == pytest.approx(gb, abs=1e-4)
    assert sol.lmp["A"] == pytest.approx(10.0, abs=1e-5)
    assert sol.lmp["B"] == pytest.approx(50.0, abs=1e-5)
    dual = solve(build_tso_dual(data))
    assert dual.objective == pytest.approx(sol.objective, rel=1e-6)


def test_lmp_matches_finite_difference():
    base = -solve_tso(TsoData(_two_bus())).objective
    eps = 0.5
    up = -solve_tso(TsoData(_two_bus(100.0 + eps))).objective
    down = -solve_tso(TsoData(_two_bus(100.0 - eps))).objective
    lmp = solve_tso(TsoData(_two_bus())).lmp["B"]
    fd = (up - down) / (2 * eps)
    assert abs(fd - lmp) / max(1.0, abs(lmp)) <= 1e-2
    assert (up - base) / eps == pytest.approx(lmp, rel=1e-2)


def test_bundled_lmp_finite_difference(bundled):
    net = bundled.transmission
    data = TsoData(net, slack_bus=bundled.slack)
    sol = solve_tso(data)
    for bus in (102, 215, 318):
        eps = 0.05
        up = solve_tso(TsoData(net, extra_load={bus: eps}, slack_bus=bundled.slack)).objective
        down = solve_tso(TsoData(net, extra_load={bus: -eps}, slack_bus=bundled.slack)).objective
        # objective carries the constant bid term, which moves with the load
        bid = net.bus(bus).bid_price
        fd = -((up - bid * eps) - (down + bid * eps)) / (2 * eps)
        assert abs(fd - sol.lmp[bus]) / max(1.0, abs(sol.lmp[bus])) <= 1e-2


def _random_instance(rng):
    n = int(rng.integers(2, 11))
    buses = [(b, float(rng.uniform(0, 60)), float(rng.uniform(50, 120))) for b in range(n)]
    lines = []
    for b in range(1, n):
        lines.append((f"t{b}", int(rng.integers(0, b)), b, float(rng.uniform(0.02, 0.3)), float(rng.uniform(10, 120))))
    for k in range(int(rng.integers(0, n))):
        a, b = rng.choice(n, 2, replace=False)
        lines.append((f"x{k}", int(a), int(b), float(rng.uniform(0.02, 0.3)), float(rng.uniform(10, 120))))
    gens = [(f"g{k}", int(rng.integers(0, n)), float(rng.uniform(5, 60)), float(rng.uniform(10, 150))) for k in range(n)]
    gens += [(f"backup{b}", b, 500.0, 1000.0) for b in range(n)]
    case = tx_case(buses, lines, gens)
    offers = ()
    if rng.random() < 0.6:
        bus = int(rng.integers(0, n))
        cap = float(rng.uniform(5, 40))
        offers = (InterfaceOffer(bus, float(rng.uniform(5, 60)), float(rng.uniform(5, 60)), cap),)
    return TsoData(case.transmission, offers)


def test_strong_duality_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        data = _random_instance(rng)
        sol = solve_tso(data)
        assert sol.optimal
        scale = max(1.0, abs(sol.objective))
        assert abs(sol.objective - sol.dual_objective) / scale <= 1e-6
        dual = solve(build_tso_dual(data))
        assert dual.optimal
        assert abs(dual.objective - sol.objective) / scale <= 1e-6
        for gen in data.network.generators:
            r = gen.offer_price - sol.lmp[gen.bus] + sol.alpha_up[gen.id] - sol.alpha_lo[gen.id]
            assert abs(r) <= 1e-5 * max(1.0, gen.offer_price)
        for itf in data.interfaces:
            lhs, rhs = interface_identity(itf, sol)
            assert abs(lhs - rhs) <= 1e-5 * max(1.0, abs(sol.lmp[itf.bus]) * itf.capacity)


def test_interface_offer_cleared_in_merit_order():
    net = tx_case([(1, 100.0, 0.0)], [], [("g", 1, 30.0, 200.0)]).transmission
    offer = InterfaceOffer(1, 20.0, 0.0, 40.0)
    sol = solve_tso(TsoData(net, (offer,)))
    assert sol.p_offer[1] == pytest.approx(40.0, abs=1e-5)
    assert sol.g_p["g"] == pytest.approx(60.0, abs=1e-5)
    assert sol.lmp[1] == pytest.approx(30.0, abs=1e-5)
    assert sol.psi_up[1] == pytest.approx(10.0, abs=1e-5)
    lhs, rhs = interface_identity(offer, sol)
    assert lhs == pytest.approx(rhs, abs=1e-4)


def test_dual_objective_value_at_multipliers():
    data = TsoData(_two_bus())
    sol = solve_tso(data)
    assert dual_objective_value(data, sol) == pytest.approx(sol.objective, rel=1e-7)


def test_bundled_balance(bundled):
    sol = solve_tso(TsoData(bundled.transmission, slack_bus=bundled.slack))
    assert sum(sol.g_p.values()) == pytest.approx(8900.0, abs=1e-4)
    for ln in bundled.transmission.lines:
        assert abs(sol.f_p[ln.id]) <= ln.flow_limit + 1e-6


def test_program_names():
    program = build_tso_program(TsoData(_two_bus()))
    assert {"balance[A]", "balance[B]", "flow[AB]", "fmax[AB]", "reference"} <= set(program.linear)


def test_unknown_interface_bus():
    with pytest.raises(KeyError):
        TsoData(_one_bus(), (InterfaceOffer(7, 1.0, 1.0, 1.0),))


def test_disconnected_network_rejected():
    case = tx_case([(1, 0, 0), (2, 0, 0)], [("a", 1, 2, 0.1, 10)], [])
    net = case.transmission
    from dataclasses import replace

    with pytest.raises(TopologyError):
        TsoData(replace(net, lines=()))
