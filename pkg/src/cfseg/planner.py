"""Adjacency construction and shortest class-transfer paths.

Distances live in the 8-D code space (between node centers), not the 2-D
embedding.  Non-adjacent node pairs carry +infinity.  Dijkstra ties are
broken toward the lexicographically smallest node-id sequence so results
are unique and exactly checkable.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from cfseg.core import ClassLabel, ContractError
from cfseg.rng import SplitMix64
from cfseg.topology import TopologyGraph


class UnreachableError(RuntimeError):
    def __init__(self, src: int, dst: int):
        super().__init__(f"node {dst} is unreachable from node {src}")
        self.src = src
        self.dst = dst


class NoCandidateError(RuntimeError):
    pass


@dataclass(frozen=True)
class PathPlan:
    node_ids: tuple[int, ...]
    cumulative_lengths: tuple[float, ...]

    @property
    def total_length(self) -> float:
        return self.cumulative_lengths[-1]


def adjacency_matrix(g: TopologyGraph) -> np.ndarray:
    """Symmetric matrix: edge weights, +inf for non-edges, zero diagonal."""
    n = len(g.nodes)
    m = np.full((n, n), math.inf, dtype=np.float64)
    np.fill_diagonal(m, 0.0)
    for a, b, w in g.edges:
        m[a, b] = w
        m[b, a] = w
    return m


def shortest_path(m: np.ndarray, src: int, dst: int) -> PathPlan:
    """Dijkstra with exact lexicographic tie-breaking on the node sequence.

    The heap carries the whole candidate path, so among equal-length
    routes the lexicographically smallest node sequence wins.  Fine at
    graph scales where paths are short.
    """
    m = np.asarray(m)
    n = m.shape[0]
    if not (0 <= src < n and 0 <= dst < n):
        raise ContractError(f"node ids must be in [0, {n}), got {src}, {dst}")
    if src == dst:
        return PathPlan(node_ids=(src,), cumulative_lengths=(0.0,))
    best: dict[int, tuple[float, tuple[int, ...]]] = {}
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (src,))]
    while heap:
        dist, path = heapq.heappop(heap)
        node = path[-1]
        if node in best and (dist, path) > best[node]:
            continue
        if node == dst:
            cum = [0.0]
            for a, b in zip(path, path[1:]):
                cum.append(cum[-1] + float(m[a, b]))
            return PathPlan(node_ids=path, cumulative_lengths=tuple(cum))
        for nb in range(n):
            w = m[node, nb]
            if nb == node or not math.isfinite(w) or nb in path:
                continue
            cand = (dist + float(w), path + (nb,))
            if nb not in best or cand < best[nb]:
                best[nb] = cand
                heapq.heappush(heap, cand)
    raise UnreachableError(src, dst)


def nearest_node(cs, g: TopologyGraph, predicate=None) -> int:
    """Node whose center is nearest to `cs`; ties go to the lowest id."""
    cs = np.asarray(cs, dtype=np.float64)
    best_id = None
    best_d = math.inf
    for node in g.nodes:
        if predicate is not None and not predicate(node):
            continue
        d = float(np.linalg.norm(cs - node.center))
        if d < best_d:
            best_d = d
            best_id = node.node_id
    if best_id is None:
        raise NoCandidateError("no node satisfies the class filter")
    return best_id


def qualifying_nodes(g: TopologyGraph, target_class: ClassLabel,
                     purity_threshold: float = 0.9) -> list[int]:
    """Nodes pure enough to serve as goals for the target class."""
    if target_class is ClassLabel.ABNORMAL:
        return [n.node_id for n in g.nodes if n.abnormal_ratio >= purity_threshold]
    return [n.node_id for n in g.nodes if n.abnormal_ratio <= 1.0 - purity_threshold]


def select_goal_node(g: TopologyGraph, target_class: ClassLabel,
                     mode: str = "purest_nearest",
                     src: int | None = None,
                     seed: int | None = None,
                     purity_threshold: float = 0.9,
                     matrix: np.ndarray | None = None) -> int:
    """Pick the goal node among qualifying (pure enough) candidates.

    ``random``: uniform over qualifying nodes from the seeded package
    PRNG.  ``purest_nearest``: minimal Dijkstra distance from `src`,
    ties broken by purer abnormal ratio, then lower id.
    """
    candidates = qualifying_nodes(g, target_class, purity_threshold)
    if not candidates:
        raise NoCandidateError(
            f"no node reaches purity {purity_threshold} for class {target_class.value}"
        )
    if mode == "random":
        if seed is None:
            raise ContractError("random goal selection requires a seed")
        rng = SplitMix64(seed)
        return candidates[rng.randint(len(candidates))]
    if mode != "purest_nearest":
        raise ContractError(f"unknown goal selection mode {mode!r}")
    if src is None:
        raise ContractError("purest_nearest goal selection requires src")
    m = adjacency_matrix(g) if matrix is None else matrix
    scored = []
    for c in candidates:
        try:
            dist = shortest_path(m, src, c).total_length
        except UnreachableError:
            continue
        node = g.node(c)
        purity = (
            node.abnormal_ratio
            if target_class is ClassLabel.ABNORMAL
            else 1.0 - node.abnormal_ratio
        )
        scored.append((dist, -purity, c))
    if not scored:
        raise NoCandidateError(f"no qualifying node is reachable from node {src}")
    return min(scored)[2]
