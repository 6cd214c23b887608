from dataclasses import replace

import pytest

from gridstorm.distribution import solve_dso
from gridstorm.market import MarketConfig, diagonalization, joint_dispatch, solve_market
from gridstorm.transmission import TsoData, solve_tso


def _scaled(outcome):
    return outcome.coordination_residual / max(1.0, abs(outcome.transmission.objective))


def _uncongested(case):
    net = case.transmission
    lines = tuple(replace(ln, flow_limit=ln.flow_limit * 10) for ln in net.lines)
    return replace(case, transmission=replace(net, lines=lines))


def test_normal_operation(bundled, pre_market):
    d = pre_market.distribution
    for g in d.g_p.values():
        assert g == pytest.approx(5.0, abs=0.01)
    assert pre_market.interface_exchange == pytest.approx(22.3, rel=0.05)
    assert d.losses == pytest.approx(1.3, rel=0.05)
    assert d.root_apparent_flow == pytest.approx(28.7, rel=0.05)
    assert not pre_market.relaxation_inexact
    assert not pre_market.duality_penalized


def test_transmission_balance(bundled, pre_market):
    t = pre_market.transmission
    fd = bundled.feeders[0]
    supplied = sum(t.g_p.values()) + t.p_offer[fd.interface_bus] - t.p_bid[fd.interface_bus]
    assert supplied == pytest.approx(bundled.transmission.total_load, abs=1e-5)


def test_strong_duality_and_identity(pre_market):
    assert _scaled(pre_market) <= 1e-5
    assert pre_market.linearization_residual <= 1e-5


def test_price_matches_joint_dispatch(bundled, pre_market):
    _, prices, imports = joint_dispatch(bundled)
    assert pre_market.interface_price == pytest.approx(prices[0], abs=1e-3)
    assert pre_market.interface_exchange == pytest.approx(imports[0], abs=1e-3)


def test_idempotent(bundled, pre_market):
    again = solve_market(bundled)
    assert again.interface_exchange == pre_market.interface_exchange
    assert again.distribution.g_p == pre_market.distribution.g_p
    assert again.transmission.f_p == pre_market.transmission.f_p


def test_invisible_feeder(bundled):
    fd = bundled.feeders[0]
    zero = fd.with_loads({b.id: 0.0 for b in fd.buses}, {b.id: 0.0 for b in fd.buses})
    zero = replace(zero, generators=())
    case = bundled.with_feeder(0, zero)
    out = solve_market(case)
    assert out.optimal
    assert out.interface_exchange == pytest.approx(0.0, abs=1e-4)
    alone = solve_tso(TsoData(bundled.transmission, slack_bus=bundled.slack))
    assert out.interface_price == pytest.approx(alone.lmp[fd.interface_bus], abs=1e-3)


@pytest.mark.parametrize("congested", [False, True])
def test_matches_diagonalization(bundled, congested):
    case = bundled if congested else _uncongested(bundled)
    out = solve_market(case)
    prices, imports, iters = diagonalization(case)
    assert iters <= 10
    assert out.interface_exchange == pytest.approx(imports[0], abs=1e-3)
    assert out.interface_price == pytest.approx(prices[0], abs=1e-3)
    dso = solve_dso(case.feeders[0], prices[0], base_mva=case.base_mva_distribution)
    assert out.distribution.objective == pytest.approx(dso.objective, rel=1e-4)


def test_diagonalization_under_attack_delta(bundled):
    fd = bundled.feeders[0]
    delta = {b.id: (0.1 * b.load_p, 0.1 * b.load_q) for b in fd.buses if b.load_p > 0}
    delta = {b: (dp * 0.5, dq * 0.5) for b, (dp, dq) in delta.items()}
    out = solve_market(bundled, [delta])
    prices, imports, _ = diagonalization(bundled, [delta])
    assert out.interface_exchange == pytest.approx(imports[0], abs=1e-3)


def test_unknown_declared_prices(bundled):
    with pytest.raises(ValueError):
        solve_market(bundled, config=MarketConfig(declared_prices="tariff"))


def test_infeasible_outcome_is_structured(bundled):
    fd = bundled.feeders[0]
    delta = {b.id: (3 * b.load_p, 3 * b.load_q) for b in fd.buses if b.load_p > 0}
    out = solve_market(bundled, [delta])
    assert not out.optimal
    assert out.distributions == []


def test_dump_programs(bundled, tmp_path):
    solve_market(bundled, config=MarketConfig(dump_dir=str(tmp_path)))
    names = sorted(p.name for p in tmp_path.iterdir())
    assert any(n.startswith("joint_dispatch") for n in names)
    assert any(n.startswith("single_level") for n in names)
    assert "End" in (tmp_path / names[0]).read_text()


def test_load_scaling_relaxation_tight(bundled):
    fd = bundled.feeders[0]
    for s in (0.5, 0.75, 1.0, 1.05):
        delta = {b.id: ((s - 1) * b.load_p, (s - 1) * b.load_q) for b in fd.buses if b.load_p > 0}
        out = solve_market(bundled, [delta])
        assert out.optimal
        assert out.distribution.max_cone_residual <= 1e-4
