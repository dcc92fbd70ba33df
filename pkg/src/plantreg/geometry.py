"""Point clouds, rigid transforms and the SE(3) helpers shared by every stage."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

ORTHO_TOL = 1e-9
UNIT_NORMAL_TOL = 1e-6


def _as_points(a: ArrayLike, name: str) -> NDArray[np.float64]:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def project_to_rotation(m: ArrayLike) -> NDArray[np.float64]:
    """Nearest proper rotation to ``m`` (polar decomposition via SVD)."""
    m = np.asarray(m, dtype=np.float64)
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0:
        d = 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class RigidTransform:
    """Element of SE(3): ``p -> rotation @ p + translation``."""

    rotation: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    translation: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        r = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation length 3")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform contains non-finite values")
        if (
            np.linalg.norm(r.T @ r - np.eye(3)) > ORTHO_TOL
            or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL
        ):
            r = project_to_rotation(r)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, m: ArrayLike) -> RigidTransform:
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_axis_angle(
        cls, axis: ArrayLike, angle: float, translation: ArrayLike = (0.0, 0.0, 0.0)
    ) -> RigidTransform:
        """Rotation of ``angle`` radians about ``axis`` (Rodrigues)."""
        return cls(rodrigues(np.asarray(axis, dtype=np.float64), angle), translation)

    def as_matrix(self) -> NDArray[np.float64]:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply_points(self, pts: ArrayLike) -> NDArray[np.float64]:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def rotation_angle(self) -> float:
        return rotation_angle(self.rotation)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)


def rodrigues(axis: NDArray[np.float64], angle: float) -> NDArray[np.float64]:
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("axis must be non-zero")
    x, y, z = axis / n
    c, s = math.cos(angle), math.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [x * x * C + c, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, y * y * C + c, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, z * z * C + c],
        ]
    )


def rotvec_to_matrix(w: ArrayLike) -> NDArray[np.float64]:
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    if theta == 0.0:
        return np.eye(3)
    return rodrigues(w, theta)


def rotation_z(angle: float) -> NDArray[np.float64]:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle(r: NDArray[np.float64]) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    # arccos loses precision near 0 and pi; the atan2 form does not.
    cos_t = (np.trace(r) - 1.0) * 0.5
    skew = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    sin_t = 0.5 * np.linalg.norm(skew)
    return float(math.atan2(sin_t, cos_t))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    return RigidTransform(
        a.rotation @ b.rotation, a.rotation @ b.translation + a.translation
    )


@dataclass(frozen=True)
class SigmaWeights:
    """Weights of the SE(3) step magnitude: radians of rotation plus length of translation."""

    rot_weight: float = 1.0
    trans_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.rot_weight < 0 or self.trans_weight < 0:
            raise ValueError("sigma weights must be non-negative")
        if self.rot_weight == 0 and self.trans_weight == 0:
            raise ValueError("sigma weights must not both be zero")


def relative_magnitude(
    a: RigidTransform, b: RigidTransform, weights: SigmaWeights = SigmaWeights()
) -> float:
    """Weighted size of ``a ∘ b⁻¹``: ``rot_weight·angle + trans_weight·|translation|``."""
    rel = compose(a, b.inverse())
    return weights.rot_weight * rel.rotation_angle() + weights.trans_weight * float(
        np.linalg.norm(rel.translation)
    )


@dataclass(frozen=True)
class PointCloud:
    """Positions with optional RGB colors in [0, 1] and unit normals.

    ``extra`` carries per-point columns read from a file that this package does
    not interpret, so they can be written back out.
    """

    points: NDArray[np.float64]
    colors: NDArray[np.float64] | None = None
    normals: NDArray[np.float64] | None = None
    extra: dict[str, NDArray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        pts = _as_points(self.points, "points")
        object.__setattr__(self, "points", pts)
        n = len(pts)
        if self.colors is not None:
            c = _as_points(self.colors, "colors")
            if len(c) != n:
                raise ValueError("colors length does not match points")
            if np.any(c < 0.0) or np.any(c > 1.0):
                raise ValueError("colors must lie in [0, 1]")
            object.__setattr__(self, "colors", c)
        if self.normals is not None:
            nm = _as_points(self.normals, "normals")
            if len(nm) != n:
                raise ValueError("normals length does not match points")
            if n and np.max(np.abs(np.linalg.norm(nm, axis=1) - 1.0)) > UNIT_NORMAL_TOL:
                raise ValueError("normals must have unit length")
            object.__setattr__(self, "normals", nm)
        for key, col in self.extra.items():
            if len(col) != n:
                raise ValueError(f"extra column {key!r} length does not match points")

    def __len__(self) -> int:
        return len(self.points)

    def with_normals(self, normals: ArrayLike | None) -> PointCloud:
        return replace(self, normals=normals)

    def with_colors(self, colors: ArrayLike | None) -> PointCloud:
        return replace(self, colors=colors)

    def select(self, idx: ArrayLike) -> PointCloud:
        idx = np.asarray(idx)
        return PointCloud(
            self.points[idx],
            None if self.colors is None else self.colors[idx],
            None if self.normals is None else self.normals[idx],
            {k: np.asarray(v)[idx] for k, v in self.extra.items()},
        )


def apply_transform(t: RigidTransform, pc: PointCloud) -> PointCloud:
    """Move points by ``t``; normals are rotated only, colors are untouched."""
    normals = None if pc.normals is None else pc.normals @ t.rotation.T
    if normals is not None and len(normals):
        # rotation round-off must not trip the unit-length check
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(t.apply_points(pc.points), pc.colors, normals, dict(pc.extra))


def cloud_diameter(pc: PointCloud | NDArray[np.float64]) -> float:
    """Diagonal of the axis-aligned bounding box."""
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("empty point cloud")
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def kabsch(
    src: NDArray[np.float64],
    tgt: NDArray[np.float64],
    weights: NDArray[np.float64] | None = None,
) -> RigidTransform:
    """Least-squares rigid fit taking ``src`` onto ``tgt`` (weighted Procrustes).

    A reflection is never returned: when the SVD solution has det < 0 the
    singular vector of the smallest singular value is flipped.
    """
    src = np.asarray(src, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    if weights is None:
        weights = np.ones(len(src))
    wsum = weights.sum()
    if wsum <= 0:
        raise ValueError("weights sum to zero")
    mu_s = weights @ src / wsum
    mu_t = weights @ tgt / wsum
    h = (src - mu_s).T @ ((tgt - mu_t) * weights[:, None])
    u, _, vt = np.linalg.svd(h)
    d = 1.0 if np.linalg.det(vt.T @ u.T) >= 0 else -1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(r, mu_t - r @ mu_s)
