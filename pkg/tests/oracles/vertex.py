"""Independent attacker oracle: own BFS incidence, brute-force vertex scan."""

import itertools
from collections import deque

import numpy as np


def oracle_paths(feeder):
    """Line x bus incidence from an own BFS: 1 where the bus lies below the line."""
    adj = {b: [] for b in feeder.bus_ids}
    for ln in feeder.lines:
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    parent = {feeder.root: None}
    q = deque([feeder.root])
    while q:
        u = q.popleft()
        for w in adj[u]:
            if w not in parent:
                parent[w] = u
                q.append(w)
    ids = list(feeder.bus_ids)
    m = np.zeros((len(feeder.lines), len(ids)))
    for k, ln in enumerate(feeder.lines):
        child = ln.to_bus if parent.get(ln.to_bus) == ln.from_bus else ln.from_bus
        for j, b in enumerate(ids):
            u = b
            while u is not None:
                if u == child:
                    m[k, j] = 1.0
                    break
                u = parent[u]
    return m, ids


def oracle_vertex_max(feeder, ptdf, budget):
    """Vectorised max over all joint (p, q) vertex pairs of the blended objective."""
    m, ids = oracle_paths(feeder)
    buses = [b for b in ids if budget.p_upper[b] or budget.p_lower[b] or budget.q_upper[b] or budget.q_lower[b]]
    cols = [ids.index(b) for b in buses]
    m = m[:, cols]
    pat = np.array(list(itertools.product((0, 1), repeat=len(buses))), dtype=bool)
    vp = np.where(pat, [budget.p_upper[b] for b in buses], [budget.p_lower[b] for b in buses])
    vq = np.where(pat, [budget.q_upper[b] for b in buses], [budget.q_lower[b] for b in buses])
    fp, fq = vp @ m.T, vq @ m.T
    col = ptdf.column(feeder.interface_bus)
    o_d = (fp**2).sum(1)[:, None] + (fq**2).sum(1)[None, :]
    o_t = (float(col @ col) * vp.sum(1) ** 2)[:, None]
    return ((1 - budget.gamma) * o_d + budget.gamma * o_t).max()
