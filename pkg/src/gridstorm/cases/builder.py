"""Builds the bundled ``rts3_13bus.json`` case.

Transmission: three copies of the 24-bus RTS area (101-124, 201-224,
301-325) joined by the usual interties, 19 wind farms at fixed output,
demand scaled to 8.9 GW, ratings at 80% of catalog values.

Feeder: 13-bus radial feeder rooted at transmission bus 102. Line
impedances are scaled so the pre-attack operating point has about 1.3 MW of
active losses and 28.7 MVA on the head branch; ratings are then set at 1.1x
the pre-attack apparent flow of every branch.

Run ``python -m gridstorm.cases.builder`` to regenerate the JSON.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from ..grid_model import build_case, reactive_from_pf

# (from, to, r, x, b, rating MVA) for one 24-bus area, offsets 100/200/300.
AREA_BRANCHES = [
    (1, 2, 0.003, 0.014, 0.461, 175),
    (1, 3, 0.055, 0.211, 0.057, 175),
    (1, 5, 0.022, 0.085, 0.023, 175),
    (2, 4, 0.033, 0.127, 0.034, 175),
    (2, 6, 0.050, 0.192, 0.052, 175),
    (3, 9, 0.031, 0.119, 0.032, 175),
    (3, 24, 0.002, 0.084, 0.0, 400),
    (4, 9, 0.027, 0.104, 0.028, 175),
    (5, 10, 0.023, 0.088, 0.024, 175),
    (6, 10, 0.014, 0.061, 2.459, 175),
    (7, 8, 0.016, 0.061, 0.017, 175),
    (8, 9, 0.043, 0.165, 0.045, 175),
    (8, 10, 0.043, 0.165, 0.045, 175),
    (9, 11, 0.002, 0.084, 0.0, 400),
    (9, 12, 0.002, 0.084, 0.0, 400),
    (10, 11, 0.002, 0.084, 0.0, 400),
    (10, 12, 0.002, 0.084, 0.0, 400),
    (11, 13, 0.006, 0.048, 0.100, 500),
    (11, 14, 0.005, 0.042, 0.088, 500),
    (12, 13, 0.006, 0.048, 0.100, 500),
    (12, 23, 0.012, 0.097, 0.203, 500),
    (13, 23, 0.011, 0.087, 0.182, 500),
    (14, 16, 0.005, 0.059, 0.082, 500),
    (15, 16, 0.002, 0.017, 0.036, 500),
    (15, 21, 0.006, 0.049, 0.103, 500),
    (15, 21, 0.006, 0.049, 0.103, 500),
    (15, 24, 0.007, 0.052, 0.109, 500),
    (16, 17, 0.003, 0.026, 0.055, 500),
    (16, 19, 0.003, 0.023, 0.049, 500),
    (17, 18, 0.002, 0.014, 0.030, 500),
    (17, 22, 0.014, 0.105, 0.221, 500),
    (18, 21, 0.003, 0.026, 0.055, 500),
    (18, 21, 0.003, 0.026, 0.055, 500),
    (19, 20, 0.005, 0.040, 0.083, 500),
    (19, 20, 0.005, 0.040, 0.083, 500),
    (20, 23, 0.003, 0.022, 0.046, 500),
    (20, 23, 0.003, 0.022, 0.046, 500),
    (21, 22, 0.009, 0.068, 0.142, 500),
]

INTERTIES = [
    (107, 203, 0.042, 0.161, 0.044, 175),
    (113, 215, 0.050, 0.051, 0.100, 500),
    (123, 217, 0.050, 0.051, 0.100, 500),
    (223, 318, 0.012, 0.097, 0.203, 500),
    (121, 325, 0.012, 0.097, 0.203, 500),
    (323, 325, 0.002, 0.084, 0.0, 400),
]

AREA_LOADS = {
    1: 108, 2: 97, 3: 180, 4: 74, 5: 71, 6: 136, 7: 125, 8: 171, 9: 175,
    10: 195, 13: 265, 14: 194, 15: 317, 16: 100, 18: 333, 19: 181, 20: 128,
}

# unit type -> (p_max, p_min, cost $/MWh)
UNIT_TYPES = {
    "U12": (12.0, 2.4, 56.0),
    "U20": (20.0, 16.0, 130.0),
    "U50": (50.0, 0.0, 0.0),
    "U76": (76.0, 15.2, 17.0),
    "U100": (100.0, 25.0, 44.0),
    "U155": (155.0, 54.3, 14.0),
    "U197": (197.0, 69.0, 40.0),
    "U350": (350.0, 140.0, 13.0),
    "U400": (400.0, 100.0, 6.0),
}

AREA_UNITS = [
    (1, ["U20", "U20", "U76", "U76"]),
    (2, ["U20", "U20", "U76", "U76"]),
    (7, ["U100", "U100", "U100"]),
    (13, ["U197", "U197", "U197"]),
    (15, ["U12", "U12", "U12", "U12", "U12", "U155"]),
    (16, ["U155"]),
    (18, ["U400"]),
    (21, ["U400"]),
    (22, ["U50"] * 6),
    (23, ["U155", "U155", "U350"]),
]

WIND_BUSES = [101, 103, 107, 113, 115, 118, 203, 207, 213, 215, 218, 222, 301, 303, 307, 313, 315, 318, 325]
TOTAL_DEMAND = 8900.0
TOTAL_WIND = 890.0
RATING_FACTOR = 0.8
INTERFACE_BUS = 102
INTERFACE_CAPACITY = 50.0
TRANSMISSION_BID = 100.0

# The U76 merit order decides where the system margin sits. The second U76 at
# bus 102 is made marginal (priced between the 10th and 11th U76); one U20 in
# area 3 is pulled forward so the marginal unit keeps about 15 MW of downward
# room.
MARGINAL_UNIT = "102_U76_2"
EARLY_UNITS = {"302_U20_1": 16.5}


def transmission_document() -> dict:
    area_total = sum(AREA_LOADS.values())
    scale = TOTAL_DEMAND / (3 * area_total)
    buses, lines, gens = [], [], []
    for area in (1, 2, 3):
        off = 100 * area
        n_bus = 25 if area == 3 else 24
        for k in range(1, n_bus + 1):
            bid = off + k
            buses.append(
                {
                    "id": bid,
                    "load_p": round(AREA_LOADS.get(k, 0) * scale, 6),
                    "bid_price": TRANSMISSION_BID,
                    "is_interface": bid == INTERFACE_BUS,
                    **({"interface_capacity": INTERFACE_CAPACITY} if bid == INTERFACE_BUS else {}),
                }
            )
        seen: dict = {}
        for f, t, r, x, b, rate in AREA_BRANCHES:
            key = (off + f, off + t)
            seen[key] = seen.get(key, 0) + 1
            lines.append(
                {
                    "id": f"{off + f}-{off + t}-{seen[key]}",
                    "from_bus": off + f,
                    "to_bus": off + t,
                    "reactance": x,
                    "flow_limit": RATING_FACTOR * rate,
                }
            )
    for f, t, r, x, b, rate in INTERTIES:
        lines.append({"id": f"{f}-{t}-1", "from_bus": f, "to_bus": t, "reactance": x, "flow_limit": RATING_FACTOR * rate})

    # Deterministic merit order: catalog cost plus a small per-unit offset.
    u76_rank = 0
    for area in (1, 2, 3):
        off = 100 * area
        for k, units in AREA_UNITS:
            counts: dict = {}
            for u in units:
                counts[u] = counts.get(u, 0) + 1
                gid = f"{off + k}_{u}_{counts[u]}"
                p_max, p_min, cost = UNIT_TYPES[u]
                if u == "U76":
                    u76_rank += 1
                    cost = 16.0 + 0.095 * u76_rank
                else:
                    cost = cost + 0.01 * area + 0.001 * counts[u]
                if gid == MARGINAL_UNIT:
                    cost = 17.0
                cost = EARLY_UNITS.get(gid, cost)
                gens.append(
                    {
                        "id": gid,
                        "bus": off + k,
                        "side": "transmission",
                        "offer_price": round(cost, 4),
                        "p_max": p_max,
                        "p_min": p_min,
                        "fuel": "hydro" if u == "U50" else "conventional",
                    }
                )
    per_farm = TOTAL_WIND / len(WIND_BUSES)
    for k, b in enumerate(WIND_BUSES):
        gens.append(
            {
                "id": f"{b}_W{k + 1}",
                "bus": b,
                "side": "transmission",
                "offer_price": 0.0,
                "p_max": per_farm,
                "p_min": per_farm,
                "fuel": "wind",
            }
        )
    return {"buses": buses, "lines": lines, "generators": gens}


# Feeder: (from, to, r_shape, x_shape, breaker)
FEEDER_EDGES = [
    (0, 3, 1.0, 2.0, True),
    (3, 2, 1.4, 1.3, True),
    (2, 1, 1.2, 0.9, False),
    (2, 4, 1.5, 1.0, False),
    (4, 5, 1.3, 0.8, False),
    (3, 7, 1.1, 1.0, False),
    (7, 8, 1.2, 1.1, True),
    (8, 6, 1.3, 0.8, False),
    (8, 9, 1.4, 0.9, True),
    (9, 10, 1.2, 0.8, False),
    (8, 11, 1.3, 0.9, False),
    (11, 12, 1.2, 0.7, False),
]
FEEDER_LOAD_BUSES = [2, 3, 4, 5, 9, 11, 12]
FEEDER_GEN_BUSES = [1, 6, 10]
FEEDER_DEMAND = 36.0
FEEDER_GEN_CAP = 5.0
FEEDER_GEN_COST = 10.0
TARIFF = 50.0
TARGET_LOSSES = 1.3
TARGET_ROOT_FLOW = 28.7
RATING_MARGIN = 1.1


def feeder_document(r_scale: float, x_scale: float, ratings: dict | None = None) -> dict:
    load = FEEDER_DEMAND / len(FEEDER_LOAD_BUSES)
    buses = []
    for b in range(13):
        lp = load if b in FEEDER_LOAD_BUSES else 0.0
        buses.append(
            {
                "id": b,
                "load_p": lp,
                "load_q": reactive_from_pf(lp),
                "v_max": 1.0201 if b == 0 else 1.21,
                "v_min": 0.9801 if b == 0 else 0.81,
                "is_root": b == 0,
                "iot_share": 1.0 if lp > 0 else 0.0,
            }
        )
    lines = []
    for f, t, rs, xs, brk in FEEDER_EDGES:
        lid = f"{f}-{t}"
        limit = (ratings or {}).get(lid, 1000.0)
        lines.append(
            {
                "id": lid,
                "from_bus": f,
                "to_bus": t,
                "resistance": round(rs * r_scale, 10),
                "reactance": round(xs * x_scale, 10),
                "shunt_conductance": 0.0,
                "shunt_susceptance": 0.0,
                "apparent_limit": limit,
                "breaker": {"present": brk, "trip_apparent_threshold": None},
            }
        )
    gens = [
        {
            "id": f"G{k + 1}",
            "bus": b,
            "side": "distribution",
            "offer_price": FEEDER_GEN_COST,
            "p_max": FEEDER_GEN_CAP,
            "p_min": 0.0,
            "q_max": 0.0,
            "q_min": 0.0,
            "fuel": "gas",
        }
        for k, b in enumerate(FEEDER_GEN_BUSES)
    ]
    return {
        "name": "ieee13",
        "interface_bus": INTERFACE_BUS,
        "tariff": TARIFF,
        "root_reactive_supply": True,
        "buses": buses,
        "lines": lines,
        "generators": gens,
    }


def case_document(r_scale: float, x_scale: float, ratings: dict | None = None) -> dict:
    return {
        "transmission": transmission_document(),
        "feeders": [feeder_document(r_scale, x_scale, ratings)],
        "economics": {"voll": 10000.0},
        "bases": {"transmission_mva": 100.0, "distribution_mva": 10.0},
        "slack_bus": 101,
    }


def calibrate(iterations: int = 30, verbose: bool = False) -> dict:
    """Fit impedance scales to the loss and head-flow targets, then set ratings."""
    from ..market import solve_market

    r_scale, x_scale = 0.007, 0.0035
    for _ in range(iterations):
        case = build_case(case_document(r_scale, x_scale))
        out = solve_market(case)
        if not out.optimal:
            raise RuntimeError(f"calibration market solve {out.status}")
        d = out.distribution
        q_target = math.sqrt(TARGET_ROOT_FLOW**2 - (FEEDER_DEMAND - 15.0 + TARGET_LOSSES) ** 2)
        q_loss_target = q_target - sum(b.load_q for b in case.feeders[0].buses)
        q_loss = sum(d.a[ln.id] * ln.reactance for ln in case.feeders[0].lines) * case.base_mva_distribution
        if verbose:
            print(f"r={r_scale:.6g} x={x_scale:.6g} losses={d.losses:.5f} qloss={q_loss:.5f} root={d.root_apparent_flow:.5f}")
        if abs(d.losses - TARGET_LOSSES) < 1e-6 and abs(q_loss - q_loss_target) < 1e-6:
            break
        r_scale *= TARGET_LOSSES / d.losses
        x_scale *= q_loss_target / q_loss
    ratings = {ln_id: round(RATING_MARGIN * s, 4) for ln_id, s in d.max_apparent_flow(case.feeders[0]).items()}
    return case_document(r_scale, x_scale, ratings)


def main() -> None:
    doc = calibrate(verbose=True)
    path = Path(__file__).with_name("rts3_13bus.json")
    path.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
