"""Gaussian-splat records and the validity filter that turns them into a point cloud.

A splat survives when its scales are in range, it is not overly elongated,
its rotation quaternion is close to unit norm and (optionally) it is not
nearly transparent. Each rejected splat is charged to the first test it
fails, in that order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .geometry import PointCloud

KEPT, REJ_SCALE, REJ_RATIO, REJ_QUAT, REJ_OPACITY = range(5)


class EmptyAfterFilter(ValueError):
    def __init__(self, report: FilterReport):
        super().__init__("empty cloud after filtering")
        self.report = report


@dataclass(frozen=True)
class SplatRecord:
    mean: tuple[float, float, float]
    log_scales: tuple[float, float, float]
    rotation: tuple[float, float, float, float]  # w, x, y, z
    opacity: float = 1.0  # post-sigmoid, in [0, 1]
    color: tuple[float, float, float] = (0.5, 0.5, 0.5)


@dataclass
class SplatSet:
    """Structure-of-arrays view of a splat export.

    ``opacity`` is post-sigmoid and ``colors`` are RGB in [0, 1]; the PLY
    reader converts from the logit / SH-DC encoding used on disk.
    """

    means: NDArray[np.float64]
    log_scales: NDArray[np.float64]
    rotations: NDArray[np.float64]
    opacity: NDArray[np.float64]
    colors: NDArray[np.float64]
    source_path: str = ""
    timestamp_label: str = ""
    extra: dict[str, NDArray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacity = np.asarray(self.opacity, dtype=np.float64).reshape(n)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        for name in ("means", "log_scales", "rotations"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"splat {name} contain non-finite values")

    def __len__(self) -> int:
        return len(self.means)

    @classmethod
    def from_records(cls, records: list[SplatRecord], **kw) -> SplatSet:
        if not records:
            raise ValueError("no splat records")
        return cls(
            means=[r.mean for r in records],
            log_scales=[r.log_scales for r in records],
            rotations=[r.rotation for r in records],
            opacity=[r.opacity for r in records],
            colors=[r.color for r in records],
            **kw,
        )

    def records(self) -> list[SplatRecord]:
        return [
            SplatRecord(
                tuple(self.means[i]),
                tuple(self.log_scales[i]),
                tuple(self.rotations[i]),
                float(self.opacity[i]),
                tuple(self.colors[i]),
            )
            for i in range(len(self))
        ]

    def subset(self, mask: ArrayLike) -> SplatSet:
        mask = np.asarray(mask)
        return SplatSet(
            self.means[mask],
            self.log_scales[mask],
            self.rotations[mask],
            self.opacity[mask],
            self.colors[mask],
            self.source_path,
            self.timestamp_label,
            {k: np.asarray(v)[mask] for k, v in self.extra.items()},
        )


@dataclass(frozen=True)
class FilterConfig:
    log_scale_min: float = math.log(1e-5)
    log_scale_max: float = math.log(0.5)
    max_scale_ratio: float = 10.0
    quat_norm_tol: float = 1e-3
    opacity_min: float = 0.1
    # False when the export stores raw (linear) scales instead of logs
    scales_are_log: bool = True

    def __post_init__(self) -> None:
        if not self.log_scale_min < self.log_scale_max:
            raise ValueError("log_scale_min must be below log_scale_max")
        if not self.max_scale_ratio > 1:
            raise ValueError("max_scale_ratio must exceed 1")
        if not self.quat_norm_tol > 0:
            raise ValueError("quat_norm_tol must be positive")
        if not 0.0 <= self.opacity_min <= 1.0:
            raise ValueError("opacity_min must lie in [0, 1]")


@dataclass(frozen=True)
class FilterReport:
    input_count: int
    kept_count: int
    rejected_scale: int
    rejected_ratio: int
    rejected_quat: int
    rejected_opacity: int

    def to_dict(self) -> dict[str, int]:
        return asdict(self)

    def reconciles(self) -> bool:
        return self.input_count == (
            self.kept_count
            + self.rejected_scale
            + self.rejected_ratio
            + self.rejected_quat
            + self.rejected_opacity
        )


def classify_splats(s: SplatSet, cfg: FilterConfig) -> NDArray[np.int8]:
    """Per-splat outcome code: KEPT or the first failing REJ_* category."""
    ls = s.log_scales
    if not cfg.scales_are_log:
        with np.errstate(divide="ignore", invalid="ignore"):
            ls = np.log(ls)
    scale_ok = np.all((ls >= cfg.log_scale_min) & (ls <= cfg.log_scale_max), axis=1)
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(ls.max(axis=1) - ls.min(axis=1))
    ratio_ok = ratio <= cfg.max_scale_ratio
    quat_ok = np.abs(np.linalg.norm(s.rotations, axis=1) - 1.0) <= cfg.quat_norm_tol
    opacity_ok = s.opacity >= cfg.opacity_min

    code = np.full(len(s), KEPT, dtype=np.int8)
    # assign in reverse so the earliest failing condition wins
    code[~opacity_ok] = REJ_OPACITY
    code[~quat_ok] = REJ_QUAT
    code[~ratio_ok] = REJ_RATIO
    code[~scale_ok] = REJ_SCALE
    return code


def _report(code: NDArray[np.int8]) -> FilterReport:
    counts = np.bincount(code, minlength=5)
    return FilterReport(int(len(code)), *(int(c) for c in counts))


def filter_splats(s: SplatSet, cfg: FilterConfig = FilterConfig()) -> tuple[PointCloud, FilterReport]:
    if len(s) == 0:
        raise ValueError("splat set is empty")
    code = classify_splats(s, cfg)
    report = _report(code)
    keep = code == KEPT
    if not keep.any():
        raise EmptyAfterFilter(report)
    colors = np.clip(s.colors[keep], 0.0, 1.0)
    return PointCloud(s.means[keep], colors), report


def filter_is_idempotent_check(s: SplatSet, cfg: FilterConfig = FilterConfig()) -> bool:
    """Filter, re-wrap the survivors, filter again; True when nothing more is dropped."""
    code = classify_splats(s, cfg)
    if not (code == KEPT).any():
        try:
            filter_splats(s, cfg)
        except EmptyAfterFilter:
            return True
        return False
    kept = s.subset(code == KEPT)
    first, r1 = filter_splats(s, cfg)
    second, r2 = filter_splats(kept, cfg)
    return (
        r2.kept_count == r2.input_count == r1.kept_count
        and np.array_equal(first.points, second.points)
    )
