"""Mapper-style graph over the 2-D embedding.

Overlapping axis-aligned grid covers, density clustering inside each
cover bin, one node per (bin, cluster) with an 8-D center (the mean of
its members' class-style codes) and the fraction of abnormal members,
and an edge wherever two nodes share at least one sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cfseg.core import ClassLabel, ContractError, Dataset


@dataclass(frozen=True)
class CoverConfig:
    nx: int = 8
    ny: int = 8
    overlap: float = 0.25  # fraction of bin width added on each side

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ContractError("cover needs at least one bin per axis")
        if not (0.0 <= self.overlap < 0.5):
            raise ContractError("overlap must lie in [0, 0.5)")


@dataclass(frozen=True)
class DbscanConfig:
    """eps=None selects the adaptive per-bin default:
    1.5 x mean 3rd-nearest-neighbor distance within the bin."""

    eps: float | None = None
    min_pts: int = 4  # neighbor count includes the point itself

    def __post_init__(self):
        if self.eps is not None and self.eps <= 0:
            raise ContractError("eps must be positive")
        if self.min_pts < 1:
            raise ContractError("min_pts must be >= 1")


@dataclass(frozen=True)
class TopologyNode:
    node_id: int
    member_ids: frozenset[str]
    center: np.ndarray  # 8-D mean of member CS codes
    abnormal_ratio: float
    centroid2d: np.ndarray


@dataclass(frozen=True)
class TopologyGraph:
    nodes: tuple[TopologyNode, ...]
    edges: tuple[tuple[int, int, float], ...]  # (a, b, weight), a < b

    def node(self, node_id: int) -> TopologyNode:
        return self.nodes[node_id]

    def neighbors(self, node_id: int) -> list[tuple[int, float]]:
        out = []
        for a, b, w in self.edges:
            if a == node_id:
                out.append((b, w))
            elif b == node_id:
                out.append((a, w))
        return out


BBOX_PAD = 1e-9


def build_cover(emb: np.ndarray, cfg: CoverConfig) -> list[tuple[int, np.ndarray]]:
    """Overlapping closed rectangles over the embedding bounding box.

    Returns (bin_index, member sample indices) for every non-empty bin,
    bin indices in row-major (iy * nx + ix) order.  A point belongs to
    every bin whose closed rectangle contains it, so each point lands in
    at least one bin.
    """
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[1] != 2:
        raise ContractError(f"embedding must be (n, 2), got {emb.shape}")
    if emb.shape[0] == 0:
        raise ContractError("cannot build a cover over an empty embedding")
    x_min, y_min = emb.min(axis=0) - BBOX_PAD
    x_max, y_max = emb.max(axis=0) + BBOX_PAD
    wx = (x_max - x_min) / cfg.nx
    wy = (y_max - y_min) / cfg.ny
    g = cfg.overlap
    bins: list[tuple[int, np.ndarray]] = []
    for iy in range(cfg.ny):
        lo_y = y_min + iy * wy - g * wy
        hi_y = y_min + (iy + 1) * wy + g * wy
        in_y = (emb[:, 1] >= lo_y) & (emb[:, 1] <= hi_y)
        for ix in range(cfg.nx):
            lo_x = x_min + ix * wx - g * wx
            hi_x = x_min + (ix + 1) * wx + g * wx
            members = np.nonzero(in_y & (emb[:, 0] >= lo_x) & (emb[:, 0] <= hi_x))[0]
            if members.size:
                bins.append((iy * cfg.nx + ix, members))
    return bins


def adaptive_eps(points: np.ndarray, factor: float = 1.5, k: int = 3) -> float:
    """factor x mean k-th-nearest-neighbor distance (excluding self)."""
    n = points.shape[0]
    if n <= k:
        # Too few points for a k-NN estimate; fall back to the mean
        # pairwise distance (still positive unless all points coincide).
        if n < 2:
            return 1.0
        d = np.sqrt(np.maximum(_sq_dists(points), 0.0))
        mean_pair = d[np.triu_indices(n, 1)].mean()
        return max(factor * mean_pair, 1e-12)
    d = np.sqrt(np.maximum(_sq_dists(points), 0.0))
    d_sorted = np.sort(d, axis=1)
    kth = d_sorted[:, k]  # column 0 is the self-distance
    return max(factor * float(kth.mean()), 1e-12)


def _sq_dists(points: np.ndarray) -> np.ndarray:
    sq = np.sum(points * points, axis=1)
    return sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)


def dbscan(points: np.ndarray, cfg: DbscanConfig) -> np.ndarray:
    """Density clustering; returns labels 0..m-1, noise = -1.

    A core point has >= min_pts neighbors within eps (closed ball, self
    included); clusters are connected components of core points under
    eps-reachability; a border point joins the cluster of the first core
    point in input order that reaches it.  Deterministic for a fixed
    input order.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    eps = cfg.eps if cfg.eps is not None else adaptive_eps(points)
    eps2 = eps * eps
    d2 = _sq_dists(points)
    near = d2 <= eps2  # includes self (diagonal ~ 0)
    counts = near.sum(axis=1)
    core = counts >= cfg.min_pts

    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        # BFS over core points only; assigns this component's cores.
        labels[i] = cluster
        stack = [i]
        while stack:
            u = stack.pop()
            for v in np.nonzero(near[u])[0]:
                if core[v] and labels[v] == -1:
                    labels[v] = cluster
                    stack.append(v)
        cluster += 1
    # Border points: first core in input order that reaches them.
    for i in range(n):
        if labels[i] != -1 or core[i]:
            continue
        for j in range(n):
            if core[j] and near[i, j]:
                labels[i] = labels[j]
                break
    return labels


def build_graph(covers: list[tuple[int, np.ndarray]],
                labels_per_cover: list[np.ndarray],
                dataset: Dataset,
                emb: np.ndarray) -> TopologyGraph:
    """One node per (bin, cluster) pair; edges where nodes share samples.

    Node ids run in (bin row-major, cluster id) order; noise points
    produce no node.
    """
    emb = np.asarray(emb, dtype=np.float64)
    cs = np.array([rec.cs for rec in dataset.records], dtype=np.float64)
    abnormal = np.array(
        [rec.label is ClassLabel.ABNORMAL for rec in dataset.records], dtype=bool
    )
    ids = [rec.id for rec in dataset.records]

    nodes: list[TopologyNode] = []
    member_sets: list[np.ndarray] = []
    for (bin_idx, members), labels in zip(covers, labels_per_cover):
        if len(members) != len(labels):
            raise ContractError("cover membership and label lengths differ")
        for cluster_id in sorted(set(int(l) for l in labels if l >= 0)):
            sel = members[np.asarray(labels) == cluster_id]
            node_id = len(nodes)
            nodes.append(
                TopologyNode(
                    node_id=node_id,
                    member_ids=frozenset(ids[k] for k in sel),
                    center=cs[sel].mean(axis=0),
                    abnormal_ratio=float(abnormal[sel].sum()) / len(sel),
                    centroid2d=emb[sel].mean(axis=0),
                )
            )
            member_sets.append(sel)

    # Shared-sample edges via an inverted sample -> nodes index.
    by_sample: dict[int, list[int]] = {}
    for node_id, sel in enumerate(member_sets):
        for k in sel:
            by_sample.setdefault(int(k), []).append(node_id)
    pair_set: set[tuple[int, int]] = set()
    for node_list in by_sample.values():
        for a_pos in range(len(node_list)):
            for b_pos in range(a_pos + 1, len(node_list)):
                pair_set.add((node_list[a_pos], node_list[b_pos]))
    edges = []
    for a, b in sorted(pair_set):
        w = float(np.linalg.norm(nodes[a].center - nodes[b].center))
        edges.append((a, b, w))
    return TopologyGraph(nodes=tuple(nodes), edges=tuple(edges))


def build_topology(dataset: Dataset, emb: np.ndarray,
                   cover_cfg: CoverConfig | None = None,
                   dbscan_cfg: DbscanConfig | None = None,
                   stratified_clustering: bool = False) -> TopologyGraph:
    """Cover + per-bin clustering + graph assembly in one call.

    `stratified_clustering` clusters each class separately within every
    bin (the alternative reading of per-cover "same class" grouping);
    the graph schema is unchanged.
    """
    cover_cfg = cover_cfg or CoverConfig()
    dbscan_cfg = dbscan_cfg or DbscanConfig()
    emb = np.asarray(emb, dtype=np.float64)
    covers = build_cover(emb, cover_cfg)
    labels_per_cover: list[np.ndarray] = []
    if not stratified_clustering:
        for _bin_idx, members in covers:
            labels_per_cover.append(dbscan(emb[members], dbscan_cfg))
    else:
        abnormal = np.array(
            [rec.label is ClassLabel.ABNORMAL for rec in dataset.records], dtype=bool
        )
        for _bin_idx, members in covers:
            sub = abnormal[members]
            labels = np.full(len(members), -1, dtype=np.int64)
            offset = 0
            for cls_mask in (~sub, sub):
                if cls_mask.any():
                    part = dbscan(emb[members[cls_mask]], dbscan_cfg)
                    shifted = np.where(part >= 0, part + offset, -1)
                    labels[cls_mask] = shifted
                    if part.max(initial=-1) >= 0:
                        offset += int(part.max()) + 1
            labels_per_cover.append(labels)
    return build_graph(covers, labels_per_cover, dataset, emb)
