"""Exact nearest-neighbour and radius queries.

`KdIndex` wraps :class:`scipy.spatial.cKDTree` (balanced median splits along
the axis of largest spread) and post-processes every answer so that results
are exact and ties are broken by ascending point index. The ``brute_*``
functions are the O(n) scans used to verify it.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from .geometry import PointCloud

# widening applied to the tree's candidate radius before exact re-filtering
_SLACK = 1e-9


def _distances(points: NDArray[np.float64], q: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.sqrt(np.sum((points - q) ** 2, axis=1))


def _ordered(idx: NDArray[np.intp], dist: NDArray[np.float64]) -> list[tuple[int, float]]:
    order = np.lexsort((idx, dist))
    return [(int(idx[i]), float(dist[i])) for i in order]


class KdIndex:
    """Immutable k-d tree over a cloud's points; stores original indices."""

    def __init__(self, points: PointCloud | ArrayLike):
        pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
            raise ValueError("empty point cloud")
        self.points = np.array(pts, dtype=np.float64)
        self.points.setflags(write=False)
        self._tree = cKDTree(self.points, balanced_tree=True, compact_nodes=True)

    def __len__(self) -> int:
        return len(self.points)

    def knn(self, q: ArrayLike, k: int) -> list[tuple[int, float]]:
        """``min(k, n)`` nearest points as ``(index, distance)``, ascending."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(q, dtype=np.float64)
        k = min(k, len(self.points))
        d, _ = self._tree.query(q, k=k)
        kth = float(np.atleast_1d(d)[-1])
        # everything tied with the k-th distance must be a candidate
        cand = np.asarray(
            self._tree.query_ball_point(q, kth * (1 + _SLACK) + _SLACK), dtype=np.intp
        )
        return _ordered(cand, _distances(self.points[cand], q))[:k]

    def radius_search(self, q: ArrayLike, r: float) -> list[tuple[int, float]]:
        """All points with distance ``<= r``, ascending by (distance, index)."""
        if r < 0:
            raise ValueError("radius must be non-negative")
        q = np.asarray(q, dtype=np.float64)
        cand = np.asarray(
            self._tree.query_ball_point(q, r * (1 + _SLACK) + _SLACK), dtype=np.intp
        )
        dist = _distances(self.points[cand], q)
        keep = dist <= r
        return _ordered(cand[keep], dist[keep])

    def knn_batch(self, queries: ArrayLike, k: int) -> tuple[NDArray[np.float64], NDArray[np.intp]]:
        """Vectorised k-NN for many queries: ``(distances, indices)``, each (m, k).

        Ties at equal distance are resolved by the tree's order; use :meth:`knn`
        where index-ordered ties matter.
        """
        k = min(k, len(self.points))
        d, i = self._tree.query(np.asarray(queries, dtype=np.float64), k=k)
        if k == 1:
            d, i = d[:, None], i[:, None]
        return d, i

    def nearest(self, queries: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.intp]]:
        d, i = self._tree.query(np.asarray(queries, dtype=np.float64), k=1)
        return d, i

    def radius_batch(self, queries: ArrayLike, r: float) -> list[NDArray[np.intp]]:
        """Exact radius neighbourhoods for many queries, each sorted by (distance, index)."""
        queries = np.asarray(queries, dtype=np.float64)
        cands = self._tree.query_ball_point(queries, r * (1 + _SLACK) + _SLACK)
        out = []
        for q, cand in zip(queries, cands):
            cand = np.asarray(cand, dtype=np.intp)
            dist = _distances(self.points[cand], q)
            keep = dist <= r
            cand, dist = cand[keep], dist[keep]
            out.append(cand[np.lexsort((cand, dist))])
        return out


def build(pc: PointCloud) -> KdIndex:
    return KdIndex(pc)


def brute_knn(points: ArrayLike, q: ArrayLike, k: int) -> list[tuple[int, float]]:
    points = np.asarray(points, dtype=np.float64)
    dist = _distances(points, np.asarray(q, dtype=np.float64))
    return _ordered(np.arange(len(points)), dist)[:k]


def brute_radius(points: ArrayLike, q: ArrayLike, r: float) -> list[tuple[int, float]]:
    points = np.asarray(points, dtype=np.float64)
    dist = _distances(points, np.asarray(q, dtype=np.float64))
    idx = np.flatnonzero(dist <= r)
    return _ordered(idx, dist[idx])


def average_spacing(pc: PointCloud | ArrayLike, sample: int = 1000, seed: int = 0) -> float:
    """Mean nearest-neighbour distance estimated on a fixed-seed sample."""
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    if len(pts) < 2:
        return 0.0
    idx = KdIndex(pts)
    if len(pts) > sample:
        rows = np.random.default_rng(seed).choice(len(pts), sample, replace=False)
        rows.sort()
    else:
        rows = np.arange(len(pts))
    d, _ = idx.knn_batch(pts[rows], 2)
    return float(np.mean(d[:, 1]))
