"""Surface normals and Fast Point Feature Histograms.

Each descriptor is 33 bins: 11 for alpha (cosine, [-1, 1]), 11 for phi
(cosine, [-1, 1]) and 11 for theta (atan2, [-pi, pi]), in that order. A
point's simplified histogram (SPFH) is normalised so each 11-bin block sums
to 100. The FPFH adds the neighbours' SPFHs weighted by inverse distance,
with that weighted sum rescaled so each block again sums to 100. The rescaling
makes the descriptor independent of length units and keeps it bounded when a
neighbour nearly coincides with the point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .geometry import PointCloud, cloud_diameter
from .spatial import KdIndex, average_spacing

N_BINS = 11
DESCRIPTOR_DIM = 3 * N_BINS
_RANGES = ((-1.0, 1.0), (-1.0, 1.0), (-np.pi, np.pi))
_TIE_TOL = 1e-12


@dataclass(frozen=True)
class FeatureConfig:
    normal_k: int = 30
    # None: 5x the average nearest-neighbour spacing of the cloud
    fpfh_radius: float | None = None
    # None: ten diameters above the cloud's centroid
    viewpoint: tuple[float, float, float] | None = None
    radius_multiplier: float = 5.0

    def __post_init__(self) -> None:
        if self.normal_k < 3:
            raise ValueError("normal_k must be >= 3")
        if self.fpfh_radius is not None and not self.fpfh_radius > 0:
            raise ValueError("fpfh_radius must be positive")

    def viewpoint_for(self, pc: PointCloud) -> NDArray[np.float64]:
        if self.viewpoint is not None:
            return np.asarray(self.viewpoint, dtype=np.float64)
        return pc.points.mean(axis=0) + np.array([0.0, 0.0, 10.0 * cloud_diameter(pc)])

    def radius_for(self, pc: PointCloud) -> float:
        if self.fpfh_radius is not None:
            return self.fpfh_radius
        return self.radius_multiplier * average_spacing(pc)


def estimate_normals(
    pc: PointCloud, idx: KdIndex, cfg: FeatureConfig = FeatureConfig()
) -> tuple[PointCloud, NDArray[np.bool_]]:
    """PCA normals over each point's ``normal_k`` neighbours, facing the viewpoint.

    Returns the cloud with normals and a per-point flag marking rank-deficient
    neighbourhoods (coincident or collinear points), whose normal is set to +z.
    """
    n = len(pc)
    if n < cfg.normal_k:
        raise ValueError(f"need at least normal_k={cfg.normal_k} points, got {n}")
    _, nbr = idx.knn_batch(pc.points, cfg.normal_k)
    nb = idx.points[nbr]  # (n, k, 3)
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / cfg.normal_k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()

    top = evals[:, 2]
    degenerate = (top <= 0) | (evals[:, 1] <= 1e-10 * np.maximum(top, 1e-300))
    normals[degenerate] = (0.0, 0.0, 1.0)

    view = cfg.viewpoint_for(pc)
    facing = np.einsum("ij,ij->i", normals, view - pc.points)
    flip = (facing < 0) & ~degenerate
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return pc.with_normals(normals), degenerate


def pair_features(
    p1: NDArray[np.float64],
    n1: NDArray[np.float64],
    p2: NDArray[np.float64],
    n2: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Darboux-frame features ``(alpha, phi, theta)`` for rows of point pairs.

    The source of each pair is the endpoint whose normal makes the smaller
    angle with the connecting line.
    """
    dp = p2 - p1
    dist = np.linalg.norm(dp, axis=1)
    a1 = np.einsum("ij,ij->i", n1, dp) / dist
    a2 = np.einsum("ij,ij->i", n2, dp) / dist
    # smaller normal-line angle means larger |cos|; near-ties keep the listed
    # order so roundoff cannot flip the role under a rigid motion
    swap = np.abs(a2) - np.abs(a1) > _TIE_TOL

    u = np.where(swap[:, None], n2, n1)
    nt = np.where(swap[:, None], n1, n2)
    line = np.where(swap[:, None], -dp, dp)
    phi = np.where(swap, -a2, a1)

    v = np.cross(line, u)
    vn = np.linalg.norm(v, axis=1)
    ok = vn > 0
    v[ok] /= vn[ok, None]
    w = np.cross(u, v)
    alpha = np.einsum("ij,ij->i", v, nt)
    theta = np.arctan2(np.einsum("ij,ij->i", w, nt), np.einsum("ij,ij->i", u, nt))
    feats = np.stack([alpha, phi, theta], axis=1)
    feats[~ok] = 0.0
    return feats


def bin_features(feats: NDArray[np.float64]) -> NDArray[np.intp]:
    """Bin index per feature; a value on a bin edge goes to the upper bin."""
    out = np.empty(feats.shape, dtype=np.intp)
    for j, (lo, hi) in enumerate(_RANGES):
        b = np.floor((feats[:, j] - lo) * N_BINS / (hi - lo)).astype(np.intp)
        out[:, j] = np.clip(b, 0, N_BINS - 1)
    return out


def _neighbour_pairs(
    pts: NDArray[np.float64], idx: KdIndex, radius: float
) -> tuple[NDArray[np.intp], NDArray[np.intp], NDArray[np.float64]]:
    nbrs = idx.radius_batch(pts, radius)
    counts = np.fromiter((len(a) for a in nbrs), dtype=np.intp, count=len(nbrs))
    src = np.repeat(np.arange(len(pts)), counts)
    dst = np.concatenate(nbrs) if len(nbrs) else np.empty(0, dtype=np.intp)
    d = np.linalg.norm(idx.points[dst] - pts[src], axis=1)
    # self matches and exact duplicates carry no direction
    keep = d > 0
    return src[keep], dst[keep], d[keep]


def compute_spfh(
    pc: PointCloud, src: NDArray[np.intp], dst: NDArray[np.intp]
) -> NDArray[np.float64]:
    n = len(pc)
    feats = pair_features(pc.points[src], pc.normals[src], pc.points[dst], pc.normals[dst])
    bins = bin_features(feats)
    hist = np.zeros((n, DESCRIPTOR_DIM))
    counts = np.bincount(src, minlength=n).astype(np.float64)
    for j in range(3):
        flat = np.bincount(src * N_BINS + bins[:, j], minlength=n * N_BINS)
        hist[:, j * N_BINS : (j + 1) * N_BINS] = flat.reshape(n, N_BINS)
    has = counts > 0
    hist[has] *= 100.0 / counts[has, None]
    return hist


def compute_fpfh(
    pc: PointCloud, idx: KdIndex, cfg: FeatureConfig = FeatureConfig(), radius: float | None = None
) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """FPFH per point as an (n, 33) array, plus a flag for points with no neighbours."""
    if pc.normals is None:
        raise ValueError("normals required")
    if radius is None:
        radius = cfg.radius_for(pc)
    src, dst, d = _neighbour_pairs(pc.points, idx, radius)
    n = len(pc)
    spfh = compute_spfh(pc, src, dst)
    counts = np.bincount(src, minlength=n).astype(np.float64)

    weighted = spfh[dst] / d[:, None]
    acc = np.zeros((n, DESCRIPTOR_DIM))
    np.add.at(acc, src, weighted)
    blocks = acc.reshape(n, 3, N_BINS)
    totals = blocks.sum(axis=2, keepdims=True)
    blocks *= np.divide(100.0, totals, out=np.zeros_like(totals), where=totals > 0)
    isolated = counts == 0
    return spfh + acc, isolated
