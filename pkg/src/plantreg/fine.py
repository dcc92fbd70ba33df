"""Local refinement: point-to-point, point-to-plane and colored ICP."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .geometry import PointCloud, RigidTransform, compose, kabsch, rotvec_to_matrix
from .result import ConvergedBy, RegistrationError, RegistrationResult
from .spatial import KdIndex, average_spacing

LUMA = np.array([0.2126, 0.7152, 0.0722])
# longest limit cycle of correspondence flips treated as convergence
_CYCLE_MAX = 9


class IcpVariant(str, enum.Enum):
    POINT_TO_POINT = "point_to_point"
    POINT_TO_PLANE = "point_to_plane"
    COLORED = "colored"


@dataclass(frozen=True)
class IcpConfig:
    variant: IcpVariant = IcpVariant.POINT_TO_PLANE
    max_iterations: int = 100
    # None: 3x the average nearest-neighbour spacing of the target
    correspondence_distance: float | None = None
    convergence_rel_change: float = 1e-6
    # weight of the photometric term; the geometric term gets 1 - color_sigma
    color_sigma: float = 0.032
    # neighbourhood for target color gradients; None: 5x average spacing
    color_radius: float | None = None
    # Geman-McClure scale for down-weighting large residuals, as a multiple of
    # the target's average spacing; None keeps plain least squares
    robust_scale: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", IcpVariant(self.variant))
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")
        if self.correspondence_distance is not None and not self.correspondence_distance > 0:
            raise ValueError("correspondence_distance must be positive")
        if not self.convergence_rel_change > 0:
            raise ValueError("convergence_rel_change must be positive")
        if not 0 <= self.color_sigma < 1:
            raise ValueError("color_sigma must be in [0, 1)")
        if self.robust_scale is not None and not self.robust_scale > 0:
            raise ValueError("robust_scale must be positive")


def luminance(colors: NDArray[np.float64]) -> NDArray[np.float64]:
    return colors @ LUMA


def tangent_basis(normals: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    helper = np.where(
        (np.abs(normals[:, 0]) < 0.9)[:, None], np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    )
    e1 = np.cross(normals, helper)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(normals, e1)
    return e1, e2


@dataclass
class ColorGradients:
    gradients: NDArray[np.float64]  # (n, 3), tangent to each normal
    residuals: NDArray[np.float64]  # RMS of the plane fit per point
    flags: NDArray[np.bool_]  # fewer than 3 neighbours


def precompute_color_gradients(tgt: PointCloud, idx: KdIndex, radius: float) -> ColorGradients:
    """Least-squares luminance gradient in each point's tangent plane.

    Fits ``L(p_j) ≈ L(p_i) + g·(p_j - p_i)`` over the radius neighbourhood with
    ``g`` restricted to span(e1, e2), so ``g·n = 0`` by construction.
    """
    if tgt.colors is None or tgt.normals is None:
        raise ValueError("color gradients need colors and normals")
    n = len(tgt)
    lum = luminance(tgt.colors)
    nbrs = idx.radius_batch(tgt.points, radius)
    counts = np.fromiter((len(a) for a in nbrs), dtype=np.intp, count=n)
    src = np.repeat(np.arange(n), counts)
    dst = np.concatenate(nbrs)
    keep = src != dst
    src, dst = src[keep], dst[keep]
    e1, e2 = tangent_basis(tgt.normals)
    off = tgt.points[dst] - tgt.points[src]
    a = np.einsum("ij,ij->i", off, e1[src])
    b = np.einsum("ij,ij->i", off, e2[src])
    dl = lum[dst] - lum[src]

    def acc(v: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.bincount(src, weights=v, minlength=n)

    ata = np.stack([np.stack([acc(a * a), acc(a * b)], -1), np.stack([acc(a * b), acc(b * b)], -1)], -2)
    atb = np.stack([acc(a * dl), acc(b * dl)], -1)
    nnb = np.bincount(src, minlength=n)
    flags = nnb < 3
    coef = np.einsum("nij,nj->ni", np.linalg.pinv(ata), atb)
    coef[flags] = 0.0
    grads = coef[:, :1] * e1 + coef[:, 1:] * e2
    fit = coef[src, 0] * a + coef[src, 1] * b - dl
    sse = np.bincount(src, weights=fit**2, minlength=n)
    resid = np.sqrt(np.divide(sse, nnb, out=np.zeros(n), where=nnb > 0))
    return ColorGradients(grads, resid, flags)


def _solve_6(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    # pseudo-inverse drops directions the data does not constrain
    # (e.g. spin about a cylinder's axis) instead of amplifying noise there
    evals, evecs = np.linalg.eigh(a)
    cutoff = 1e-8 * max(evals[-1], 1e-300)
    inv = np.where(evals > cutoff, 1.0 / np.where(evals > cutoff, evals, 1.0), 0.0)
    return evecs @ (inv * (evecs.T @ b))


def _increment(xi: NDArray[np.float64]) -> RigidTransform:
    return RigidTransform(rotvec_to_matrix(xi[:3]), xi[3:])


def _plane_color_step(
    q: NDArray[np.float64],
    t: NDArray[np.float64],
    n: NDArray[np.float64],
    sigma: float,
    grad: NDArray[np.float64] | None = None,
    lum_t: NDArray[np.float64] | None = None,
    lum_s: NDArray[np.float64] | None = None,
    weights: NDArray[np.float64] | None = None,
) -> RigidTransform:
    w = np.ones(len(q)) if weights is None else weights
    jg = np.hstack([np.cross(q, n), n])
    rg = np.einsum("ij,ij->i", n, q - t)
    a = (1.0 - sigma) * (jg.T @ (w[:, None] * jg))
    b = -(1.0 - sigma) * (jg.T @ (w * rg))
    if grad is not None:
        jc = np.hstack([np.cross(q, grad), grad])
        rc = lum_t + np.einsum("ij,ij->i", grad, q - t) - lum_s
        a = a + sigma * (jc.T @ (w[:, None] * jc))
        b = b - sigma * (jc.T @ (w * rc))
    return _increment(_solve_6(a, b))


def icp_refine(
    src: PointCloud,
    tgt: PointCloud,
    tgt_index: KdIndex | None = None,
    init: RigidTransform = RigidTransform(),
    cfg: IcpConfig = IcpConfig(),
) -> RegistrationResult:
    """Iterate nearest-neighbour matching and transform updates from ``init``.

    ``history`` holds the inlier RMSE measured at the start of each iteration;
    for the colored variant that is the RMSE of the blended residual
    ``(1 - sigma) * distance^2 + sigma * color_residual^2``, the quantity it
    minimises. Convergence is judged on the same value.
    """
    variant = cfg.variant
    if variant in (IcpVariant.POINT_TO_PLANE, IcpVariant.COLORED) and tgt.normals is None:
        raise ValueError(f"{variant.value} ICP requires target normals")
    if variant is IcpVariant.COLORED and (src.colors is None or tgt.colors is None):
        raise ValueError("colored ICP requires colors on both clouds")
    if tgt_index is None:
        tgt_index = KdIndex(tgt)
    max_d = cfg.correspondence_distance
    if max_d is None:
        max_d = 3.0 * average_spacing(tgt)

    grads = lum_t = lum_s = None
    if variant is IcpVariant.COLORED:
        radius = cfg.color_radius if cfg.color_radius is not None else 5.0 * average_spacing(tgt)
        grads = precompute_color_gradients(tgt, tgt_index, radius).gradients
        lum_t = luminance(tgt.colors)
        lum_s = luminance(src.colors)

    robust2 = None
    if cfg.robust_scale is not None:
        robust2 = (cfg.robust_scale * average_spacing(tgt)) ** 2
    floor = 1e-12 * max_d if math.isfinite(max_d) else 0.0
    current = init
    history: list[float] = []
    stop = ConvergedBy.MAX_ITERATIONS
    prev = None
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        q = current.apply_points(src.points)
        d, j = tgt_index.nearest(q)
        mask = d <= max_d
        if not mask.any():
            raise RegistrationError("icp lost correspondence", current, stage="icp")
        sq = d[mask] ** 2
        if variant is IcpVariant.COLORED:
            jm = j[mask]
            rc = lum_t[jm] + np.einsum("ij,ij->i", grads[jm], q[mask] - tgt.points[jm]) - lum_s[mask]
            sq = (1.0 - cfg.color_sigma) * sq + cfg.color_sigma * rc**2
        rmse = float(np.sqrt(np.mean(sq)))
        history.append(rmse)
        tol = cfg.convergence_rel_change
        settled = prev is not None and abs(prev - rmse) <= tol * prev
        # already aligned to roundoff; relative changes are noise from here on
        exact = rmse <= floor
        # correspondence flips can make the iterates revisit a short cycle of states
        cycling = any(
            abs(history[-m] - rmse) <= tol * history[-m] for m in range(3, min(len(history), _CYCLE_MAX + 1) + 1)
        )
        if settled or cycling or exact:
            stop = ConvergedBy.TOLERANCE
            it -= 1
            break
        prev = rmse
        qm, jm = q[mask], j[mask]
        w = None
        if robust2 is not None:
            w = (robust2 / (robust2 + d[mask] ** 2)) ** 2
        if variant is IcpVariant.POINT_TO_POINT:
            step = kabsch(qm, tgt.points[jm], w)
        elif variant is IcpVariant.POINT_TO_PLANE:
            step = _plane_color_step(qm, tgt.points[jm], tgt.normals[jm], 0.0, weights=w)
        else:
            step = _plane_color_step(
                qm, tgt.points[jm], tgt.normals[jm], cfg.color_sigma,
                grads[jm], lum_t[jm], lum_s[mask], weights=w,
            )
        current = compose(step, current)

    q = current.apply_points(src.points)
    d, _ = tgt_index.nearest(q)
    mask = d <= max_d
    count = int(mask.sum())
    return RegistrationResult(
        transform=current,
        inlier_count=count,
        inlier_rmse=float(np.sqrt(np.mean(d[mask] ** 2))) if count else 0.0,
        fitness=count / len(src),
        iterations_used=it,
        converged_by=stop,
        inliers=np.flatnonzero(mask),
        history=history,
    )


def inlier_rmse(
    src: PointCloud, ref_index: KdIndex, transform: RigidTransform, max_distance: float
) -> tuple[float, int]:
    d, _ = ref_index.nearest(transform.apply_points(src.points))
    mask = d <= max_distance
    if not mask.any():
        return math.inf, 0
    return float(np.sqrt(np.mean(d[mask] ** 2))), int(mask.sum())
