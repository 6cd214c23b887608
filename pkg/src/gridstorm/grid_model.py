"""Grid data model: transmission network, radial feeders, case-file ingestion.

All quantities on the public surface are physical (MW, MVAr, MVA, $/MWh).
Impedances are per-unit on the network's own base (transmission on
``base_mva_transmission``, feeders on ``base_mva_distribution``).
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

import jsonschema
import numpy as np

BusId = Hashable

PF_DEFAULT = 0.9
BREAKER_TRIP_RATIO = 1.2 / 1.1


class CaseError(ValueError):
    """A case document failed validation.

    ``diagnostics`` holds one human-readable line per violation.
    """

    def __init__(self, diagnostics: Sequence[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class SchemaError(CaseError):
    pass


class TopologyError(CaseError):
    pass


class UnitError(CaseError):
    pass


def reactive_from_pf(p: float, pf: float = PF_DEFAULT) -> float:
    return p * math.tan(math.acos(pf))


# --------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class TransmissionBus:
    id: BusId
    load_p: float = 0.0
    bid_price: float = 0.0
    is_interface: bool = False
    interface_capacity: float | None = None


@dataclass(frozen=True)
class TransmissionLine:
    id: str
    from_bus: BusId
    to_bus: BusId
    reactance: float
    flow_limit: float


@dataclass(frozen=True)
class Generator:
    id: str
    bus: BusId
    side: str  # "transmission" | "distribution"
    offer_price: float
    p_max: float
    p_min: float = 0.0
    q_max: float | None = None
    q_min: float | None = None
    fuel: str = "conventional"


@dataclass(frozen=True)
class BreakerSetting:
    present: bool = False
    trip_apparent_threshold: float | None = None


@dataclass(frozen=True)
class DistributionBus:
    id: BusId
    load_p: float = 0.0
    load_q: float = 0.0
    v_max: float = 1.21
    v_min: float = 0.81
    is_root: bool = False
    iot_share: float = 0.0


@dataclass(frozen=True)
class DistributionLine:
    id: str
    from_bus: BusId
    to_bus: BusId
    resistance: float
    reactance: float
    apparent_limit: float
    shunt_conductance: float = 0.0
    shunt_susceptance: float = 0.0
    breaker: BreakerSetting = BreakerSetting()


@dataclass(frozen=True)
class TransmissionNetwork:
    buses: tuple[TransmissionBus, ...]
    lines: tuple[TransmissionLine, ...]
    generators: tuple[Generator, ...]

    def bus(self, bus_id: BusId) -> TransmissionBus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    @property
    def bus_ids(self) -> list[BusId]:
        return [b.id for b in self.buses]

    @property
    def total_load(self) -> float:
        return sum(b.load_p for b in self.buses)


@dataclass(frozen=True)
class Feeder:
    """A radial distribution feeder attached to one transmission bus.

    Lines are stored oriented away from the root. ``interface_capacity`` is
    copied from the interface transmission bus at load time.
    """

    buses: tuple[DistributionBus, ...]
    lines: tuple[DistributionLine, ...]
    generators: tuple[Generator, ...]
    interface_bus: BusId
    tariff: float
    interface_capacity: float = math.inf
    name: str = "feeder"
    root_reactive_supply: bool = True
    _children: Mapping = field(default=None, repr=False, compare=False)  # type: ignore[assignment]
    _parent_line: Mapping = field(default=None, repr=False, compare=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        children: dict[BusId, list[BusId]] = {b.id: [] for b in self.buses}
        parent_line: dict[BusId, DistributionLine] = {}
        for line in self.lines:
            children.setdefault(line.from_bus, []).append(line.to_bus)
            parent_line[line.to_bus] = line
        object.__setattr__(self, "_children", children)
        object.__setattr__(self, "_parent_line", parent_line)

    @property
    def root(self) -> BusId:
        roots = [b.id for b in self.buses if b.is_root]
        if len(roots) != 1:
            raise TopologyError([f"feeder {self.name}: expected one root bus, found {len(roots)}"])
        return roots[0]

    @property
    def bus_ids(self) -> list[BusId]:
        return [b.id for b in self.buses]

    def bus(self, bus_id: BusId) -> DistributionBus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def line(self, line_id: str) -> DistributionLine:
        for ln in self.lines:
            if ln.id == line_id:
                return ln
        raise KeyError(line_id)

    def line_between(self, a: BusId, b: BusId) -> DistributionLine:
        for ln in self.lines:
            if {ln.from_bus, ln.to_bus} == {a, b}:
                return ln
        raise KeyError((a, b))

    def children(self, bus_id: BusId) -> list[BusId]:
        return list(self._children.get(bus_id, []))

    def parent_line(self, bus_id: BusId) -> DistributionLine | None:
        return self._parent_line.get(bus_id)

    def root_line(self) -> DistributionLine:
        """The single line leaving the root (the feeder head)."""
        out = [ln for ln in self.lines if ln.from_bus == self.root]
        if len(out) != 1:
            raise TopologyError([f"feeder {self.name}: root has {len(out)} outgoing lines"])
        return out[0]

    @property
    def total_load_p(self) -> float:
        return sum(b.load_p for b in self.buses)

    @property
    def breakered_lines(self) -> list[DistributionLine]:
        return [ln for ln in self.lines if ln.breaker.present]

    def with_loads(self, load_p: Mapping[BusId, float], load_q: Mapping[BusId, float]) -> "Feeder":
        buses = tuple(
            replace(b, load_p=load_p.get(b.id, b.load_p), load_q=load_q.get(b.id, b.load_q))
            for b in self.buses
        )
        return replace(self, buses=buses)

    def restricted_to(self, keep: Iterable[BusId]) -> "Feeder":
        """Sub-feeder containing ``keep`` (must include the root and be connected)."""
        keep = set(keep)
        buses = tuple(b for b in self.buses if b.id in keep)
        lines = tuple(ln for ln in self.lines if ln.from_bus in keep and ln.to_bus in keep)
        gens = tuple(g for g in self.generators if g.bus in keep)
        return replace(self, buses=buses, lines=lines, generators=gens)


@dataclass(frozen=True)
class GridCase:
    transmission: TransmissionNetwork
    feeders: tuple[Feeder, ...]
    voll: float = 10_000.0
    base_mva_transmission: float = 100.0
    base_mva_distribution: float = 10.0
    slack_bus: BusId | None = None

    @property
    def slack(self) -> BusId:
        if self.slack_bus is not None:
            return self.slack_bus
        return default_slack(self.transmission)

    def with_feeder(self, index: int, feeder: Feeder) -> "GridCase":
        feeders = list(self.feeders)
        feeders[index] = feeder
        return replace(self, feeders=tuple(feeders))


def default_slack(network: TransmissionNetwork) -> BusId:
    ids = network.bus_ids
    try:
        return min(ids)
    except TypeError:
        return min(ids, key=str)


# --------------------------------------------------------------------------
# Topology


def downstream_set(feeder: Feeder, bus: BusId) -> list[BusId]:
    """Buses whose path to the root passes through ``bus`` (inclusive).

    Order follows a breadth-first walk from ``bus`` with children visited in
    line order, so results are deterministic.
    """
    if bus not in feeder._children:
        raise KeyError(f"unknown bus {bus!r} in feeder {feeder.name}")
    out = []
    queue = deque([bus])
    while queue:
        b = queue.popleft()
        out.append(b)
        queue.extend(feeder._children.get(b, []))
    return out


def path_to_root(feeder: Feeder, bus: BusId) -> list[DistributionLine]:
    lines = []
    b = bus
    while (ln := feeder.parent_line(b)) is not None:
        lines.append(ln)
        b = ln.from_bus
    return lines


def feeder_islands(feeder: Feeder, open_lines: Iterable[str]) -> list[list[BusId]]:
    """Connected components of the feeder after opening ``open_lines``.

    The island holding the root comes first; the rest follow bus order.
    """
    open_lines = set(open_lines)
    adj: dict[BusId, list[BusId]] = {b: [] for b in feeder.bus_ids}
    for ln in feeder.lines:
        if ln.id in open_lines:
            continue
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    seen: set = set()
    islands = []
    for start in [feeder.root] + feeder.bus_ids:
        if start in seen:
            continue
        comp = []
        queue = deque([start])
        seen.add(start)
        while queue:
            b = queue.popleft()
            comp.append(b)
            for nb in adj[b]:
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        order = {b: i for i, b in enumerate(feeder.bus_ids)}
        islands.append(sorted(comp, key=order.__getitem__))
    return islands


def _orient_feeder_lines(
    bus_ids: Sequence[BusId], root: BusId, lines: Sequence[DistributionLine], name: str
) -> tuple[DistributionLine, ...]:
    problems = []
    if len(lines) != len(bus_ids) - 1:
        problems.append(f"{len(lines)} lines for {len(bus_ids)} buses; need {len(bus_ids) - 1}")
    adj: dict[BusId, list[tuple[DistributionLine, BusId]]] = {b: [] for b in bus_ids}
    for ln in lines:
        adj[ln.from_bus].append((ln, ln.to_bus))
        adj[ln.to_bus].append((ln, ln.from_bus))
    oriented: dict[str, DistributionLine] = {}
    seen = {root}
    queue = deque([root])
    while queue:
        b = queue.popleft()
        for ln, nb in adj[b]:
            if ln.id in oriented:
                continue
            if nb in seen:
                problems.append(f"cycle through line {ln.id}")
                oriented[ln.id] = ln
                continue
            seen.add(nb)
            oriented[ln.id] = ln if ln.from_bus == b else replace(ln, from_bus=b, to_bus=ln.from_bus)
            queue.append(nb)
    missing = [b for b in bus_ids if b not in seen]
    if missing:
        problems.append(f"buses unreachable from root: {missing}")
    if problems:
        # one violation, one diagnostic
        raise TopologyError([f"feeder {name}: not radial ({'; '.join(problems)})"])
    return tuple(oriented[ln.id] for ln in lines)


def transmission_connected(network: TransmissionNetwork) -> bool:
    ids = network.bus_ids
    if not ids:
        return False
    adj: dict[BusId, list[BusId]] = {b: [] for b in ids}
    for ln in network.lines:
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    seen = {ids[0]}
    queue = deque([ids[0]])
    while queue:
        b = queue.popleft()
        for nb in adj[b]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(ids)


# --------------------------------------------------------------------------
# PTDF


@dataclass(frozen=True)
class PtdfMatrix:
    """Line-flow sensitivities to bus injections, withdrawal at the slack."""

    line_ids: tuple[str, ...]
    bus_ids: tuple[BusId, ...]
    matrix: np.ndarray
    slack_bus: BusId

    def column(self, bus: BusId) -> np.ndarray:
        return self.matrix[:, self.bus_ids.index(bus)]

    def entry(self, line_id: str, bus: BusId) -> float:
        return float(self.matrix[self.line_ids.index(line_id), self.bus_ids.index(bus)])

    def flows(self, injections: Mapping[BusId, float] | np.ndarray) -> np.ndarray:
        if isinstance(injections, Mapping):
            vec = np.zeros(len(self.bus_ids))
            for b, v in injections.items():
                vec[self.bus_ids.index(b)] = v
            injections = vec
        return self.matrix @ np.asarray(injections, dtype=float)


def susceptance_matrices(network: TransmissionNetwork) -> tuple[np.ndarray, np.ndarray]:
    """Return (incidence A [lines x buses], line susceptances b = 1/X)."""
    index = {b: i for i, b in enumerate(network.bus_ids)}
    a = np.zeros((len(network.lines), len(index)))
    for k, ln in enumerate(network.lines):
        a[k, index[ln.from_bus]] = 1.0
        a[k, index[ln.to_bus]] = -1.0
    b = np.array([1.0 / ln.reactance for ln in network.lines])
    return a, b


def compute_ptdf(network: TransmissionNetwork, slack_bus: BusId | None = None) -> PtdfMatrix:
    if slack_bus is None:
        slack_bus = default_slack(network)
    ids = network.bus_ids
    if slack_bus not in ids:
        raise KeyError(f"slack bus {slack_bus!r} not in network")
    a, b = susceptance_matrices(network)
    bbus = a.T @ (b[:, None] * a)
    s = ids.index(slack_bus)
    keep = [i for i in range(len(ids)) if i != s]
    reduced = bbus[np.ix_(keep, keep)]
    if reduced.size and np.linalg.matrix_rank(reduced) < len(keep):
        raise TopologyError(["transmission network is disconnected (singular reduced susceptance matrix)"])
    ptdf = np.zeros((len(network.lines), len(ids)))
    if keep:
        ptdf[:, keep] = (b[:, None] * a[:, keep]) @ np.linalg.inv(reduced)
    return PtdfMatrix(tuple(ln.id for ln in network.lines), tuple(ids), ptdf, slack_bus)


# --------------------------------------------------------------------------
# Case file ingestion

_NUM = {"type": "number"}
_ID = {"type": ["integer", "string"]}

CASE_SCHEMA = {
    "type": "object",
    "required": ["transmission"],
    "properties": {
        "transmission": {
            "type": "object",
            "required": ["buses", "lines", "generators"],
            "properties": {
                "buses": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["id", "load_p"],
                        "properties": {
                            "id": _ID,
                            "load_p": _NUM,
                            "bid_price": _NUM,
                            "is_interface": {"type": "boolean"},
                            "interface_capacity": _NUM,
                        },
                    },
                },
                "lines": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["id", "from_bus", "to_bus", "reactance", "flow_limit"],
                        "properties": {
                            "id": _ID,
                            "from_bus": _ID,
                            "to_bus": _ID,
                            "reactance": _NUM,
                            "flow_limit": _NUM,
                        },
                    },
                },
                "generators": {"type": "array", "items": {"$ref": "#/$defs/generator"}},
            },
        },
        "feeders": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["buses", "lines", "generators", "interface_bus", "tariff"],
                "properties": {
                    "name": {"type": "string"},
                    "interface_bus": _ID,
                    "tariff": _NUM,
                    "root_reactive_supply": {"type": "boolean"},
                    "buses": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["id", "load_p", "v_max", "v_min"],
                            "properties": {
                                "id": _ID,
                                "load_p": _NUM,
                                "load_q": _NUM,
                                "power_factor": _NUM,
                                "v_max": _NUM,
                                "v_min": _NUM,
                                "is_root": {"type": "boolean"},
                                "iot_share": _NUM,
                            },
                        },
                    },
                    "lines": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["id", "from_bus", "to_bus", "resistance", "reactance", "apparent_limit"],
                            "properties": {
                                "id": _ID,
                                "from_bus": _ID,
                                "to_bus": _ID,
                                "resistance": _NUM,
                                "reactance": _NUM,
                                "shunt_conductance": _NUM,
                                "shunt_susceptance": _NUM,
                                "apparent_limit": _NUM,
                                "breaker": {
                                    "type": "object",
                                    "required": ["present"],
                                    "properties": {
                                        "present": {"type": "boolean"},
                                        "trip_apparent_threshold": {"type": ["number", "null"]},
                                    },
                                },
                            },
                        },
                    },
                    "generators": {"type": "array", "items": {"$ref": "#/$defs/generator"}},
                },
            },
        },
        "economics": {"type": "object", "properties": {"voll": _NUM}},
        "bases": {
            "type": "object",
            "properties": {"transmission_mva": _NUM, "distribution_mva": _NUM},
        },
        "slack_bus": _ID,
    },
    "$defs": {
        "generator": {
            "type": "object",
            "required": ["id", "bus", "offer_price", "p_max"],
            "properties": {
                "id": _ID,
                "bus": _ID,
                "side": {"enum": ["transmission", "distribution"]},
                "offer_price": _NUM,
                "p_max": _NUM,
                "p_min": _NUM,
                "q_max": _NUM,
                "q_min": _NUM,
                "fuel": {"type": "string"},
            },
        }
    },
}


def _reject_constant(token: str):
    raise ValueError(f"non-finite number {token} not permitted")


def parse_document(document: str) -> dict:
    try:
        return json.loads(document, parse_constant=_reject_constant)
    except ValueError as exc:
        raise SchemaError([f"invalid JSON: {exc}"]) from exc


def schema_diagnostics(doc: dict) -> list[str]:
    validator = jsonschema.Draft202012Validator(CASE_SCHEMA)
    out = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        out.append(f"schema: {where}: {err.message}")
    return out


def _gen(raw: dict, side: str) -> Generator:
    return Generator(
        id=str(raw["id"]),
        bus=raw["bus"],
        side=raw.get("side", side),
        offer_price=float(raw["offer_price"]),
        p_max=float(raw["p_max"]),
        p_min=float(raw.get("p_min", 0.0)),
        q_max=None if raw.get("q_max") is None else float(raw["q_max"]),
        q_min=None if raw.get("q_min") is None else float(raw["q_min"]),
        fuel=raw.get("fuel", "conventional"),
    )


def _unit_diagnostics(doc: dict) -> list[str]:
    out = []
    tx = doc["transmission"]
    seen: set = set()
    for b in tx["buses"]:
        if b["id"] in seen:
            out.append(f"transmission bus {b['id']}: duplicate id")
        seen.add(b["id"])
        if b["load_p"] < 0:
            out.append(f"transmission bus {b['id']}: load_p must be >= 0")
        if b.get("is_interface") and not (b.get("interface_capacity") or 0) > 0:
            out.append(f"transmission bus {b['id']}: interface_capacity must be > 0")
    for ln in tx["lines"]:
        if ln["reactance"] <= 0:
            out.append(f"transmission line {ln['id']}: reactance must be > 0")
        if ln["flow_limit"] <= 0:
            out.append(f"transmission line {ln['id']}: flow_limit must be > 0")
        if ln["from_bus"] == ln["to_bus"]:
            out.append(f"transmission line {ln['id']}: from_bus equals to_bus")
        for end in ("from_bus", "to_bus"):
            if ln[end] not in seen:
                out.append(f"transmission line {ln['id']}: unknown {end} {ln[end]}")
    for g in tx["generators"]:
        out.extend(_gen_diagnostics(g, seen, "transmission"))
    for k, fd in enumerate(doc.get("feeders", [])):
        name = fd.get("name", f"feeder{k}")
        ids: set = set()
        for b in fd["buses"]:
            if b["id"] in ids:
                out.append(f"{name} bus {b['id']}: duplicate id")
            ids.add(b["id"])
            if b["load_p"] < 0:
                out.append(f"{name} bus {b['id']}: load_p must be >= 0")
            if not 0 < b["v_min"] < b["v_max"]:
                out.append(f"{name} bus {b['id']}: need 0 < v_min < v_max")
            if not 0.0 <= b.get("iot_share", 0.0) <= 1.0:
                out.append(f"{name} bus {b['id']}: iot_share must lie in [0, 1]")
        for ln in fd["lines"]:
            if ln["resistance"] < 0:
                out.append(f"{name} line {ln['id']}: resistance must be >= 0")
            if ln["reactance"] <= 0:
                out.append(f"{name} line {ln['id']}: reactance must be > 0")
            if ln["apparent_limit"] <= 0:
                out.append(f"{name} line {ln['id']}: apparent_limit must be > 0")
            for end in ("from_bus", "to_bus"):
                if ln[end] not in ids:
                    out.append(f"{name} line {ln['id']}: unknown {end} {ln[end]}")
            brk = ln.get("breaker") or {}
            thr = brk.get("trip_apparent_threshold")
            if brk.get("present") and thr is not None and thr < ln["apparent_limit"]:
                out.append(
                    f"{name} line {ln['id']}: breaker threshold {thr} below apparent_limit {ln['apparent_limit']}"
                )
        for g in fd["generators"]:
            out.extend(_gen_diagnostics(g, ids, name))
        roots = [b for b in fd["buses"] if b.get("is_root")]
        if len(roots) != 1:
            out.append(f"{name}: expected exactly one root bus, found {len(roots)}")
        else:
            r = roots[0]
            if r["load_p"] != 0 or r.get("load_q", 0) != 0:
                out.append(f"{name}: root bus {r['id']} must carry no load")
            if any(g["bus"] == r["id"] for g in fd["generators"]):
                out.append(f"{name}: root bus {r['id']} must carry no generation")
        ib = fd["interface_bus"]
        match = [b for b in tx["buses"] if b["id"] == ib]
        if not match:
            out.append(f"{name}: interface_bus {ib} not in transmission network")
        elif not match[0].get("is_interface"):
            out.append(f"{name}: interface_bus {ib} is not flagged is_interface")
    used = [fd["interface_bus"] for fd in doc.get("feeders", [])]
    for ib in set(used):
        if used.count(ib) > 1:
            out.append(f"interface bus {ib} shared by {used.count(ib)} feeders")
    return out


def _gen_diagnostics(g: dict, buses: set, where: str) -> list[str]:
    out = []
    if g["bus"] not in buses:
        out.append(f"{where} generator {g['id']}: unknown bus {g['bus']}")
    if g.get("p_min", 0.0) > g["p_max"]:
        out.append(f"{where} generator {g['id']}: p_min > p_max")
    if g.get("q_min") is not None and g.get("q_max") is not None and g["q_min"] > g["q_max"]:
        out.append(f"{where} generator {g['id']}: q_min > q_max")
    if g["offer_price"] < 0:
        out.append(f"{where} generator {g['id']}: offer_price must be >= 0")
    return out


def validate_document(doc: dict) -> list[str]:
    """Every invariant violation in ``doc``; empty list means valid."""
    diags = schema_diagnostics(doc)
    if diags:
        return diags
    diags = _unit_diagnostics(doc)
    try:
        build_case(doc)
    except CaseError as exc:
        diags = diags + exc.diagnostics
    except (ValueError, KeyError) as exc:
        # value errors already reported above can trip construction
        if not diags:
            diags = [str(exc)]
    return list(dict.fromkeys(diags))


def build_case(doc: dict) -> GridCase:
    tx = doc["transmission"]
    buses = tuple(
        TransmissionBus(
            id=b["id"],
            load_p=float(b["load_p"]),
            bid_price=float(b.get("bid_price", 0.0)),
            is_interface=bool(b.get("is_interface", False)),
            interface_capacity=None if b.get("interface_capacity") is None else float(b["interface_capacity"]),
        )
        for b in tx["buses"]
    )
    lines = tuple(
        TransmissionLine(str(ln["id"]), ln["from_bus"], ln["to_bus"], float(ln["reactance"]), float(ln["flow_limit"]))
        for ln in tx["lines"]
    )
    gens = tuple(_gen(g, "transmission") for g in tx["generators"])
    network = TransmissionNetwork(buses, lines, gens)
    if len(buses) > 1 and not transmission_connected(network):
        raise TopologyError(["transmission network is disconnected"])
    caps = {b.id: b.interface_capacity for b in buses}

    feeders = []
    for k, fd in enumerate(doc.get("feeders", [])):
        name = fd.get("name", f"feeder{k}")
        fbuses = []
        for b in fd["buses"]:
            load_p = float(b["load_p"])
            if "load_q" in b:
                load_q = float(b["load_q"])
            else:
                load_q = reactive_from_pf(load_p, float(b.get("power_factor", PF_DEFAULT)))
            fbuses.append(
                DistributionBus(
                    id=b["id"],
                    load_p=load_p,
                    load_q=load_q,
                    v_max=float(b["v_max"]),
                    v_min=float(b["v_min"]),
                    is_root=bool(b.get("is_root", False)),
                    iot_share=float(b.get("iot_share", 0.0)),
                )
            )
        flines = []
        for ln in fd["lines"]:
            brk = ln.get("breaker") or {}
            limit = float(ln["apparent_limit"])
            present = bool(brk.get("present", False))
            thr = brk.get("trip_apparent_threshold")
            if present and thr is None:
                thr = BREAKER_TRIP_RATIO * limit
            flines.append(
                DistributionLine(
                    id=str(ln["id"]),
                    from_bus=ln["from_bus"],
                    to_bus=ln["to_bus"],
                    resistance=float(ln["resistance"]),
                    reactance=float(ln["reactance"]),
                    apparent_limit=limit,
                    shunt_conductance=float(ln.get("shunt_conductance", 0.0)),
                    shunt_susceptance=float(ln.get("shunt_susceptance", 0.0)),
                    breaker=BreakerSetting(present, None if thr is None else float(thr)),
                )
            )
        root = next(b.id for b in fbuses if b.is_root)
        oriented = _orient_feeder_lines([b.id for b in fbuses], root, flines, name)
        feeders.append(
            Feeder(
                buses=tuple(fbuses),
                lines=oriented,
                generators=tuple(_gen(g, "distribution") for g in fd["generators"]),
                interface_bus=fd["interface_bus"],
                tariff=float(fd["tariff"]),
                interface_capacity=caps.get(fd["interface_bus"]) or math.inf,
                name=name,
                root_reactive_supply=bool(fd.get("root_reactive_supply", True)),
            )
        )
    econ = doc.get("economics", {})
    bases = doc.get("bases", {})
    return GridCase(
        transmission=network,
        feeders=tuple(feeders),
        voll=float(econ.get("voll", 10_000.0)),
        base_mva_transmission=float(bases.get("transmission_mva", 100.0)),
        base_mva_distribution=float(bases.get("distribution_mva", 10.0)),
        slack_bus=doc.get("slack_bus"),
    )


def load_case(document: str) -> GridCase:
    """Parse and fully validate a case document (JSON text)."""
    doc = parse_document(document)
    diags = schema_diagnostics(doc)
    if diags:
        raise SchemaError(diags)
    diags = _unit_diagnostics(doc)
    if diags:
        kind = TopologyError if any("unknown" in d or "root" in d or "interface" in d for d in diags) else UnitError
        raise kind(diags)
    return build_case(doc)


def load_case_file(path: str | Path) -> GridCase:
    return load_case(Path(path).read_text())


def bundled_case_path(name: str = "rts3_13bus.json") -> Path:
    return Path(__file__).parent / "cases" / name


def load_bundled_case(name: str = "rts3_13bus.json") -> GridCase:
    return load_case_file(bundled_case_path(name))


def case_to_document(case: GridCase) -> dict:
    """Inverse of :func:`build_case` (physical units, lines as stored)."""

    def gen_doc(g: Generator) -> dict:
        d = {
            "id": g.id,
            "bus": g.bus,
            "side": g.side,
            "offer_price": g.offer_price,
            "p_max": g.p_max,
            "p_min": g.p_min,
            "fuel": g.fuel,
        }
        if g.q_max is not None:
            d["q_max"] = g.q_max
        if g.q_min is not None:
            d["q_min"] = g.q_min
        return d

    tx = case.transmission
    doc: dict = {
        "transmission": {
            "buses": [
                {
                    "id": b.id,
                    "load_p": b.load_p,
                    "bid_price": b.bid_price,
                    "is_interface": b.is_interface,
                    **({"interface_capacity": b.interface_capacity} if b.interface_capacity is not None else {}),
                }
                for b in tx.buses
            ],
            "lines": [
                {"id": ln.id, "from_bus": ln.from_bus, "to_bus": ln.to_bus, "reactance": ln.reactance, "flow_limit": ln.flow_limit}
                for ln in tx.lines
            ],
            "generators": [gen_doc(g) for g in tx.generators],
        },
        "feeders": [],
        "economics": {"voll": case.voll},
        "bases": {"transmission_mva": case.base_mva_transmission, "distribution_mva": case.base_mva_distribution},
    }
    if case.slack_bus is not None:
        doc["slack_bus"] = case.slack_bus
    for fd in case.feeders:
        doc["feeders"].append(
            {
                "name": fd.name,
                "interface_bus": fd.interface_bus,
                "tariff": fd.tariff,
                "root_reactive_supply": fd.root_reactive_supply,
                "buses": [
                    {
                        "id": b.id,
                        "load_p": b.load_p,
                        "load_q": b.load_q,
                        "v_max": b.v_max,
                        "v_min": b.v_min,
                        "is_root": b.is_root,
                        "iot_share": b.iot_share,
                    }
                    for b in fd.buses
                ],
                "lines": [
                    {
                        "id": ln.id,
                        "from_bus": ln.from_bus,
                        "to_bus": ln.to_bus,
                        "resistance": ln.resistance,
                        "reactance": ln.reactance,
                        "shunt_conductance": ln.shunt_conductance,
                        "shunt_susceptance": ln.shunt_susceptance,
                        "apparent_limit": ln.apparent_limit,
                        "breaker": {
                            "present": ln.breaker.present,
                            "trip_apparent_threshold": ln.breaker.trip_apparent_threshold,
                        },
                    }
                    for ln in fd.lines
                ],
                "generators": [gen_doc(g) for g in fd.generators],
            }
        )
    return doc
