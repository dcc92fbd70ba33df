"""Procedural plant time series with known rigid motion and leaf growth.

A plant is a tapered cylindrical stem plus leaves modelled as paraboloid
patches. Points are parametric samples that persist from frame to frame,
so the true per-point growth displacement is known exactly. Each frame is
the grown body moved by the accumulated rigid drift, plus Gaussian noise.
"""

from __future__ import annotations

import datetime as dt
import enum
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .formats import dump_json, write_ply
from .geometry import PointCloud, RigidTransform, cloud_diameter, compose
from .temporal import SeriesEntry, TimeSeries


class ColorMode(str, enum.Enum):
    HEIGHT_RAMP = "height_ramp"
    PER_LEAF = "per_leaf"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class StemSpec:
    height: float = 0.4
    radius: float = 0.008
    points: int | None = None


@dataclass(frozen=True)
class LeafSpec:
    attach_height: float
    azimuth_deg: float
    length: float
    width: float
    elevation_deg: float = 20.0
    sag: float = 0.15  # droop of the tip, as a fraction of length
    cup: float = 0.1  # upward curl of the edges, as a fraction of width
    points: int | None = None


def _default_leaves() -> tuple[LeafSpec, ...]:
    return (
        LeafSpec(0.10, 0.0, 0.16, 0.05, 25.0),
        LeafSpec(0.17, 137.0, 0.14, 0.045, 10.0),
        LeafSpec(0.24, 274.0, 0.12, 0.04, 35.0),
        LeafSpec(0.30, 51.0, 0.10, 0.035, 15.0),
        LeafSpec(0.36, 188.0, 0.08, 0.03, 40.0),
    )


@dataclass(frozen=True)
class GrowthScenario:
    rng_seed: int = 0
    n_frames: int = 5
    points_per_frame_base: int = 2000
    stem: StemSpec = field(default_factory=StemSpec)
    leaves: tuple[LeafSpec, ...] = field(default_factory=_default_leaves)
    drift_rotation_deg: float = 0.0
    drift_translation_frac: float = 0.0
    drift_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    drift_direction: tuple[float, float, float] = (1.0, 0.5, 0.0)
    leaf_elongation: float = 0.0
    # extra leaf elevation per frame, degrees; moves blades off their old surface
    leaf_lift_deg: float = 0.0
    new_points_per_frame: int = 0
    noise_sigma: float = 0.0
    color_mode: ColorMode = ColorMode.HEIGHT_RAMP
    start_date: dt.date = dt.date(2024, 2, 13)
    cadence_days: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "color_mode", ColorMode(self.color_mode))
        object.__setattr__(self, "leaves", tuple(self.leaves))
        if self.n_frames <= 0 or self.points_per_frame_base <= 0:
            raise ValueError("counts must be positive")
        if min(self.leaf_elongation, self.new_points_per_frame, self.noise_sigma,
               self.drift_translation_frac, self.cadence_days) < 0:
            raise ValueError("growth, noise and drift magnitudes must be non-negative")
        if not self.leaves:
            raise ValueError("a plant needs at least one leaf")

    @classmethod
    def from_dict(cls, d: dict) -> GrowthScenario:
        """Strict JSON form: field names as keys, ``stem`` an object, ``leaves`` a list of objects."""
        if not isinstance(d, dict):
            raise ValueError("scenario must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"scenario: unknown key(s) {', '.join(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) and k != "leaves" else v for k, v in d.items()}
        try:
            if "stem" in kw:
                kw["stem"] = StemSpec(**kw["stem"])
            if "leaves" in kw:
                kw["leaves"] = tuple(LeafSpec(**leaf) for leaf in kw["leaves"])
            if "start_date" in kw:
                kw["start_date"] = dt.date.fromisoformat(kw["start_date"])
            return cls(**kw)
        except TypeError as exc:
            raise ValueError(f"scenario: {exc}") from None


@dataclass
class SynthResult:
    series: TimeSeries
    ground_truth: list[RigidTransform]  # body frame -> frame k sensor coordinates
    # |displacement| of every point carried over from frame k-1 (empty for k = 0)
    injected_deformation: list[NDArray[np.float64]]
    bodies: list[PointCloud]  # grown shapes before drift and noise
    frames: list[PointCloud]

    def reference_transforms(self) -> list[RigidTransform]:
        """True frame-k -> frame-0 maps, the quantity register_sequence estimates."""
        g0 = self.ground_truth[0]
        return [compose(g0, g.inverse()) for g in self.ground_truth]


def _leaf_area(leaf: LeafSpec) -> float:
    return math.pi / 4 * leaf.length * leaf.width


def _stem_area(stem: StemSpec) -> float:
    return 2 * math.pi * 0.75 * stem.radius * stem.height


def _allocate(sc: GrowthScenario) -> tuple[int, list[int]]:
    areas = [_stem_area(sc.stem)] + [_leaf_area(l) for l in sc.leaves]
    total = sum(areas)
    counts = [max(1, int(round(sc.points_per_frame_base * a / total))) for a in areas]
    stem_n = sc.stem.points if sc.stem.points is not None else counts[0]
    leaf_n = [l.points if l.points is not None else c for l, c in zip(sc.leaves, counts[1:])]
    return stem_n, leaf_n


def _sample_leaf_params(rng: np.random.Generator, n: int) -> NDArray[np.float64]:
    """(u, v) with u along the blade, v across it, uniform by area of an elliptic outline."""
    out = np.empty((0, 2))
    while len(out) < n:
        m = 2 * (n - len(out)) + 16
        u = rng.random(m)
        v = rng.uniform(-1.0, 1.0, m)
        half = np.sqrt(np.clip(1.0 - (2.0 * u - 1.0) ** 2, 0.0, 1.0))
        out = np.vstack([out, np.stack([u, v], 1)[np.abs(v) <= half]])
    return out[:n]


def _leaf_points(leaf: LeafSpec, stem: StemSpec, uv: NDArray[np.float64], scale: float, lift_deg: float) -> NDArray[np.float64]:
    az = math.radians(leaf.azimuth_deg)
    el = math.radians(leaf.elevation_deg + lift_deg)
    d = np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    w = np.array([-math.sin(az), math.cos(az), 0.0])
    n = np.cross(d, w)
    r_attach = stem.radius * (1.0 - 0.5 * leaf.attach_height / stem.height)
    base = np.array([r_attach * math.cos(az), r_attach * math.sin(az), leaf.attach_height])
    length = leaf.length * scale
    width = leaf.width * scale
    s = uv[:, 0] * length
    t = uv[:, 1] * width / 2
    h = -leaf.sag * length * uv[:, 0] ** 2 + leaf.cup * width * uv[:, 1] ** 2
    return base + s[:, None] * d + t[:, None] * w + h[:, None] * n


def _stem_points(stem: StemSpec, rng: np.random.Generator, n: int) -> NDArray[np.float64]:
    z = rng.random(n) * stem.height
    phi = rng.random(n) * 2 * math.pi
    r = stem.radius * (1.0 - 0.5 * z / stem.height)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


_LEAF_COLORS = np.array(
    [[0.2, 0.7, 0.2], [0.9, 0.8, 0.1], [0.2, 0.4, 0.9], [0.9, 0.3, 0.3], [0.6, 0.2, 0.8], [0.1, 0.8, 0.8]]
)


def _colors(sc: GrowthScenario, pts: NDArray[np.float64], part: NDArray[np.intp]) -> NDArray[np.float64]:
    if sc.color_mode is ColorMode.UNIFORM:
        return np.tile([0.3, 0.6, 0.2], (len(pts), 1))
    if sc.color_mode is ColorMode.PER_LEAF:
        c = np.tile([0.45, 0.3, 0.15], (len(pts), 1))
        leaf = part >= 0
        c[leaf] = _LEAF_COLORS[part[leaf] % len(_LEAF_COLORS)]
        return c
    top = sc.stem.height + max(l.length for l in sc.leaves)
    h = np.clip(pts[:, 2] / top, 0.0, 1.0)
    return np.stack([0.5 - 0.4 * h, 0.3 + 0.6 * h, 0.15 + 0.1 * h], axis=1)


def generate(sc: GrowthScenario) -> SynthResult:
    """Deterministic series for a scenario (same seed, same bytes)."""
    rng = np.random.default_rng(sc.rng_seed)
    stem_n, leaf_n = _allocate(sc)
    stem_pts = _stem_points(sc.stem, rng, stem_n)
    # per leaf point: (leaf id, u, v); stem points are part -1
    uv = [_sample_leaf_params(rng, n) for n in leaf_n]
    leaf_id = [np.full(n, i) for i, n in enumerate(leaf_n)]
    leaf_area = np.array([_leaf_area(l) for l in sc.leaves])

    def body(k: int, uvs: list, ids: list) -> tuple[NDArray, NDArray]:
        scale = (1.0 + sc.leaf_elongation) ** k
        lift = sc.leaf_lift_deg * k
        all_uv = np.vstack(uvs)
        all_id = np.concatenate(ids)
        pts = np.empty((len(all_uv), 3))
        for i, leaf in enumerate(sc.leaves):
            sel = all_id == i
            pts[sel] = _leaf_points(leaf, sc.stem, all_uv[sel], scale, lift)
        return np.vstack([stem_pts, pts]), np.concatenate([np.full(len(stem_pts), -1), all_id])

    body0, _ = body(0, uv, leaf_id)
    diam = cloud_diameter(body0)
    axis = np.asarray(sc.drift_axis, dtype=np.float64)
    direction = np.asarray(sc.drift_direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    step = RigidTransform.from_axis_angle(
        axis, math.radians(sc.drift_rotation_deg), sc.drift_translation_frac * diam * direction
    )

    gts, frames, bodies, deform = [], [], [], []
    gt = RigidTransform()
    prev_body = None
    entries = []
    for k in range(sc.n_frames):
        if k > 0:
            gt = compose(step, gt)
            if sc.new_points_per_frame:
                share = rng.multinomial(sc.new_points_per_frame, leaf_area / leaf_area.sum())
                for i, m in enumerate(share):
                    if m:
                        uv.append(_sample_leaf_params(rng, int(m)))
                        leaf_id.append(np.full(int(m), i))
        pts, part = body(k, uv, leaf_id)
        if prev_body is None:
            deform.append(np.zeros(0))
        else:
            deform.append(np.linalg.norm(pts[: len(prev_body)] - prev_body, axis=1))
        prev_body = pts
        colors = _colors(sc, pts, part)
        moved = gt.apply_points(pts)
        if sc.noise_sigma > 0:
            moved = moved + rng.normal(0.0, sc.noise_sigma, moved.shape)
        frame = PointCloud(moved, colors)
        bodies.append(PointCloud(pts, colors))
        frames.append(frame)
        gts.append(gt)
        date = sc.start_date + dt.timedelta(days=k * sc.cadence_days)
        entries.append(SeriesEntry(date, frame, f"t{k:03d}"))
    return SynthResult(TimeSeries(tuple(entries)), gts, deform, bodies, frames)


def dump_series(result: SynthResult, out_dir: str | Path) -> Path:
    """Write frame PLYs, ``manifest.json`` and ``ground_truth.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for entry, frame in zip(result.series.entries, result.frames):
        name = f"{entry.label}.ply"
        write_ply(frame, out / name)
        manifest.append({"date": entry.timestamp.isoformat(), "cloud": name, "label": entry.label})
    dump_json(manifest, out / "manifest.json")
    dump_json(
        {
            "ground_truth": [[float(v) for v in g.as_matrix().reshape(-1)] for g in result.ground_truth],
            "to_reference": [[float(v) for v in g.as_matrix().reshape(-1)] for g in result.reference_transforms()],
            "injected_mean_displacement": [float(d.mean()) if len(d) else 0.0 for d in result.injected_deformation],
        },
        out / "ground_truth.json",
    )
    return out / "manifest.json"


def striped_cylinder(
    n: int = 4000,
    radius: float = 0.05,
    height: float = 0.2,
    stripe_deg: float = 40.0,
    rng_seed: int = 0,
) -> PointCloud:
    """Open cylinder about z, gray except for one smooth bright stripe.

    The geometry is symmetric under any spin about the axis; only the color
    (a Gaussian bump in azimuth centred at 0 with width ``stripe_deg``) tells
    orientations apart.
    """
    rng = np.random.default_rng(rng_seed)
    phi = rng.uniform(-math.pi, math.pi, n)
    z = rng.uniform(0.0, height, n)
    pts = np.stack([radius * np.cos(phi), radius * np.sin(phi), z], axis=1)
    bump = np.exp(-((phi / math.radians(stripe_deg)) ** 2))
    colors = np.stack([0.2 + 0.75 * bump, 0.2 + 0.6 * bump, 0.2 + 0.1 * bump], axis=1)
    return PointCloud(pts, colors)
