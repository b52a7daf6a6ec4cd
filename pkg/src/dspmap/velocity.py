"""Object-level initial velocity estimation for newborn particles.

Ground points are split off by height, the rest is grouped into Euclidean
clusters, and clusters are matched to the previous frame with a minimum-cost
assignment. Matched cluster centers are differenced to get a velocity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .config import VelocityParams
from .phd import ESTIMATED, STATIC, UNKNOWN

_FORBIDDEN = 1e12


@dataclass
class Cluster:
    centroid: np.ndarray
    point_count: int
    members: np.ndarray = field(repr=False)


@dataclass
class VelocityLabels:
    labels: np.ndarray  # UNKNOWN / STATIC / ESTIMATED per point
    velocities: np.ndarray  # (M, 3), zero unless ESTIMATED

    @classmethod
    def unknown(cls, m: int) -> "VelocityLabels":
        return cls(np.zeros(m, dtype=np.int8), np.zeros((m, 3)))


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]]  # (prev index, cur index)
    unmatched: list[int]  # current clusters treated as new obstacles
    cost: float


def segment_ground(points: np.ndarray, ground_height_thresh: float):
    """Boolean mask of ground points (z <= threshold, world frame z up)."""
    points = np.asarray(points, float).reshape(-1, 3)
    return points[:, 2] <= ground_height_thresh


def extract_clusters(points: np.ndarray, cluster_dist: float, min_cluster_size: int,
                     index: np.ndarray | None = None) -> list[Cluster]:
    """Connected components under ``dist <= cluster_dist``.

    ``index`` maps rows of ``points`` back to caller indices for ``members``.
    Components are ordered by their smallest member index.
    """
    points = np.asarray(points, float).reshape(-1, 3)
    n = points.shape[0]
    if index is None:
        index = np.arange(n)
    if n == 0:
        return []
    pairs = cKDTree(points).query_pairs(cluster_dist, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    n_comp, comp = connected_components(graph, directed=False)
    order = np.argsort(comp, kind="stable")
    bounds = np.searchsorted(comp[order], np.arange(n_comp + 1))
    clusters = []
    for c in range(n_comp):
        rows = order[bounds[c]:bounds[c + 1]]
        if rows.size < min_cluster_size:
            continue
        clusters.append(Cluster(points[rows].mean(axis=0), int(rows.size), index[rows]))
    clusters.sort(key=lambda c: int(c.members.min()))
    return clusters


def match_cost(prev: list[Cluster], cur: list[Cluster], gate_dist: float, w_count: float):
    """Cost matrix (prev x cur); pairs beyond the gate get a forbidding cost."""
    cost = np.full((len(prev), len(cur)), _FORBIDDEN)
    for i, a in enumerate(prev):
        for j, b in enumerate(cur):
            d = float(np.linalg.norm(a.centroid - b.centroid))
            if d > gate_dist:
                continue
            cost[i, j] = d + w_count * abs(a.point_count - b.point_count) / max(a.point_count, b.point_count)
    return cost


def match_clusters(prev: list[Cluster], cur: list[Cluster], dt: float,
                   params: VelocityParams | None = None) -> MatchResult:
    params = params or VelocityParams()
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not prev or not cur:
        return MatchResult([], list(range(len(cur))), 0.0)
    cost = match_cost(prev, cur, params.gate_v_max * dt, params.w_count)
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(i), int(j)) for i, j in zip(rows, cols) if cost[i, j] < _FORBIDDEN]
    matched = {j for _, j in pairs}
    total = float(sum(cost[i, j] for i, j in pairs))
    return MatchResult(pairs, [j for j in range(len(cur)) if j not in matched], total)


class VelocityEstimator:
    """Keeps the previous frame's clusters between calls to :meth:`estimate`."""

    def __init__(self, params: VelocityParams | None = None, filter_resolution: float = 0.1):
        self.params = params or VelocityParams()
        self.cluster_dist = self.params.cluster_dist or 2.0 * filter_resolution
        self.prev: list[Cluster] = []
        self.last_match: MatchResult | None = None
        self.last_clusters: list[Cluster] = []
        self.last_cluster_velocity: dict[int, np.ndarray] = {}

    def reset(self) -> None:
        self.prev = []

    def clusters(self, points: np.ndarray) -> tuple[np.ndarray, list[Cluster]]:
        ground = segment_ground(points, self.params.ground_height_thresh)
        rest = np.nonzero(~ground)[0]
        clusters = extract_clusters(points[rest], self.cluster_dist,
                                    self.params.min_cluster_size, index=rest)
        return ground, clusters

    def estimate(self, points: np.ndarray, dt: float | None) -> VelocityLabels:
        points = np.asarray(points, float).reshape(-1, 3)
        out = VelocityLabels.unknown(points.shape[0])
        ground, cur = self.clusters(points)
        out.labels[ground] = STATIC
        self.last_cluster_velocity = {}
        if dt is not None and dt > 0 and self.prev:
            match = match_clusters(self.prev, cur, dt, self.params)
            for i, j in match.pairs:
                v = (cur[j].centroid - self.prev[i].centroid) / dt
                out.labels[cur[j].members] = ESTIMATED
                out.velocities[cur[j].members] = v
                self.last_cluster_velocity[j] = v
        else:
            match = MatchResult([], list(range(len(cur))), 0.0)
        self.last_match = match
        self.last_clusters = cur
        self.prev = cur
        return out


__all__ = [
    "Cluster", "VelocityLabels", "MatchResult", "VelocityEstimator",
    "segment_ground", "extract_clusters", "match_clusters", "match_cost",
    "UNKNOWN", "STATIC", "ESTIMATED",
]
