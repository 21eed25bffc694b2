"""Multi-target tour ordering by exhaustive permutation search."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .field_graph import DistanceCache, FieldGraph, a_star, snap

K_MAX = 8


@dataclass(frozen=True)
class Tour:
    start: int
    order: tuple[int, ...]
    legs: tuple[tuple[int, ...], ...]
    leg_lengths: tuple[float, ...]

    @property
    def total_length(self) -> float:
        return float(sum(self.leg_lengths))

    def vertex_path(self) -> list[int]:
        """Concatenated leg vertices without repeating the joints."""
        out = [self.start]
        for leg in self.legs:
            out.extend(leg[1:])
        return out

    def polyline(self, graph: FieldGraph) -> np.ndarray:
        return graph.points[self.vertex_path()]

    def to_dict(self, graph: FieldGraph) -> dict:
        return {
            "start": self.start,
            "order": list(self.order),
            "total_length": self.total_length,
            "leg_lengths": list(self.leg_lengths),
            "vertex_path": self.vertex_path(),
            "polyline": self.polyline(graph).tolist(),
        }


def snap_targets(graph: FieldGraph, points: Iterable[Sequence[float]]) -> list[int]:
    """Snap each point to its nearest vertex, dropping repeats (first occurrence wins)."""
    out: list[int] = []
    seen: set[int] = set()
    for p in points:
        v = snap(graph, p)
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


def plan_tour(
    graph: FieldGraph,
    s: int,
    targets: Iterable[int],
    k_max: int = K_MAX,
    cache: DistanceCache | None = None,
) -> Tour:
    """Visit order minimising the rule-constrained open tour length from ``s``.

    All k! orders are scored against a memoised pairwise distance matrix.
    Targets whose site has several vertices (the two directions of a linear
    row) may be reached through any of them; the cheapest choice is folded
    into the score.  Equal costs keep the lexicographically smallest order.
    """
    sites = sorted({int(graph.site[t]) for t in targets})
    k = len(sites)
    if k < 1:
        raise ValueError("plan_tour needs at least one target")
    if k > k_max:
        raise ValueError(f"{k} targets exceeds k_max={k_max}")
    cache = cache or DistanceCache(graph)

    alias = [graph.aliases(t) for t in _site_reps(graph, sites)]
    canon = [a[0] for a in alias]
    width = max(len(a) for a in alias)
    nodes = [s] + [v for a in alias for v in a]
    index = {}
    for i, v in enumerate(nodes):
        index.setdefault(v, i)
    M = np.array([[cache.distance(u, v) for v in nodes] for u in nodes])
    M = np.vstack([np.hstack([M, np.full((len(nodes), 1), math.inf)]), np.full((1, len(nodes) + 1), math.inf)])
    pad = len(nodes)
    table = np.full((k, width), pad, dtype=int)
    for j, a in enumerate(alias):
        for q, v in enumerate(a):
            table[j, q] = index[v]
        if not np.isfinite(M[0, table[j, : len(a)]]).any():
            raise ValueError(f"target {canon[j]} is unreachable from vertex {s}")

    perms = np.array(list(itertools.permutations(range(k))), dtype=int)
    cost = M[0][table[perms[:, 0]]]  # (P, width)
    for i in range(1, k):
        prev = table[perms[:, i - 1]]  # (P, width)
        cur = table[perms[:, i]]
        step = M[prev[:, :, None], cur[:, None, :]]  # (P, width, width)
        cost = np.min(cost[:, :, None] + step, axis=1)
    totals = cost.min(axis=1)
    best = int(np.argmin(totals))
    if not math.isfinite(totals[best]):
        raise ValueError("no rule-respecting order visits every target")

    order_idx = perms[best]
    # recover the alias choice along the winning order
    choices = _best_aliases(M, table, order_idx)
    order = tuple(nodes[table[j, q]] for j, q in zip(order_idx, choices))
    legs = []
    lengths = []
    here = s
    for v in order:
        res = a_star(graph, here, v)
        legs.append(tuple(res.path))
        lengths.append(res.length)
        here = v
    return Tour(s, order, tuple(legs), tuple(lengths))


def _site_reps(graph: FieldGraph, sites: list[int]) -> list[int]:
    reps = {}
    for v, st in enumerate(graph.site):
        reps.setdefault(int(st), v)
    return [reps[st] for st in sites]


def _best_aliases(M, table, order_idx) -> list[int]:
    k = len(order_idx)
    width = table.shape[1]
    cost = M[0][table[order_idx[0]]].copy()
    back = []
    for i in range(1, k):
        prev = table[order_idx[i - 1]]
        cur = table[order_idx[i]]
        cand = cost[:, None] + M[prev[:, None], cur[None, :]]
        arg = np.argmin(cand, axis=0)
        back.append(arg)
        cost = cand[arg, np.arange(width)]
    q = int(np.argmin(cost))
    picks = [q]
    for arg in reversed(back):
        q = int(arg[q])
        picks.append(q)
    return picks[::-1]
