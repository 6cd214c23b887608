import copy
import json

import pytest

from gridstorm.grid_model import bundled_case_path, load_bundled_case, load_case
from gridstorm.market import solve_market


@pytest.fixture(scope="session")
def bundled():
    return load_bundled_case()


@pytest.fixture(scope="session")
def bundled_doc():
    return json.loads(bundled_case_path().read_text())


@pytest.fixture
def doc(bundled_doc):
    return copy.deepcopy(bundled_doc)


@pytest.fixture(scope="session")
def feeder(bundled):
    return bundled.feeders[0]


@pytest.fixture(scope="session")
def pre_market(bundled):
    out = solve_market(bundled)
    assert out.optimal
    return out


def tx_doc(buses, lines, gens, feeders=(), slack=None):
    """Small transmission-only document from terse tuples.

    buses: (id, load, bid_price); lines: (id, from, to, x, limit);
    gens: (id, bus, price, pmax[, pmin]).
    """
    doc = {
        "transmission": {
            "buses": [{"id": b, "load_p": l, "bid_price": c} for b, l, c in buses],
            "lines": [
                {"id": i, "from_bus": f, "to_bus": t, "reactance": x, "flow_limit": lim}
                for i, f, t, x, lim in lines
            ],
            "generators": [
                {"id": g[0], "bus": g[1], "offer_price": g[2], "p_max": g[3], "p_min": g[4] if len(g) > 4 else 0.0}
                for g in gens
            ],
        },
        "feeders": list(feeders),
    }
    if slack is not None:
        doc["slack_bus"] = slack
    return doc


def tx_case(*args, **kw):
    return load_case(json.dumps(tx_doc(*args, **kw)))


def two_bus_feeder_doc(load_p, load_q, r, x, limit=1000.0, v_bounds=(0.5, 1.5)):
    return {
        "name": "pair",
        "interface_bus": 1,
        "tariff": 50.0,
        "root_reactive_supply": True,
        "buses": [
            {"id": 0, "load_p": 0.0, "load_q": 0.0, "v_min": v_bounds[0], "v_max": v_bounds[1], "is_root": True},
            {"id": 1, "load_p": load_p, "load_q": load_q, "v_min": v_bounds[0], "v_max": v_bounds[1], "iot_share": 1.0},
        ],
        "lines": [
            {
                "id": "0-1",
                "from_bus": 0,
                "to_bus": 1,
                "resistance": r,
                "reactance": x,
                "apparent_limit": limit,
                "breaker": {"present": True, "trip_apparent_threshold": None},
            }
        ],
        "generators": [],
    }


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
