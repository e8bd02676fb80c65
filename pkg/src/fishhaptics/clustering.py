"""Merge raw nibble contacts into representative haptic points.

Contacts within the linkage distance belong to the same cluster
(single-linkage connected components), and each cluster is rendered at its
centroid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fish import ContactPoint
from .geometry import Vec3


@dataclass(frozen=True)
class Cluster:
    centroid: Vec3
    member_ids: tuple[int, ...]   # fish ids, ascending
    radius: float                 # max member distance to centroid, mm


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def cluster_contacts(points: list[ContactPoint], linkage_distance: float) -> list[Cluster]:
    """Single-linkage clusters of contact points.

    Pairs at distance <= linkage_distance share a cluster, transitively.
    A distance of 0 degenerates to one cluster per distinct position
    (clustering effectively off). Output is ordered by each cluster's
    lowest member fish id.
    """
    if linkage_distance < 0:
        raise ValueError("linkage distance must be >= 0")
    n = len(points)
    if n == 0:
        return []
    pos = np.array([p.position for p in points], dtype=np.float64)
    uf = _UnionFind(n)
    d2_max = linkage_distance * linkage_distance
    for i in range(n - 1):
        d2 = ((pos[i + 1 :] - pos[i]) ** 2).sum(axis=1)
        for off in np.nonzero(d2 <= d2_max)[0]:
            uf.union(i, i + 1 + int(off))

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(uf.find(i), []).append(i)

    clusters = []
    for members in groups.values():
        member_pos = pos[members]
        centroid = member_pos.mean(axis=0)
        radius = float(np.sqrt(((member_pos - centroid) ** 2).sum(axis=1).max()))
        ids = tuple(sorted(points[i].fish_id for i in members))
        clusters.append(Cluster(Vec3(*centroid), ids, radius))
    clusters.sort(key=lambda c: c.member_ids[0])
    return clusters


def cluster_count_sweep(
    points: list[ContactPoint], distances: list[float]
) -> list[tuple[float, int]]:
    """Cluster counts over an ascending list of linkage distances."""
    if not distances:
        raise ValueError("distance range must be non-empty")
    if any(b < a for a, b in zip(distances, distances[1:])):
        raise ValueError("distance range must be ascending")
    return [(d, len(cluster_contacts(points, d))) for d in distances]
