"""Turntable frames of a point cloud, drawn as z-buffered screen-space discs."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from PIL import Image

from .geometry import PointCloud, cloud_diameter


@dataclass(frozen=True)
class TurntableSpec:
    n_frames: int = 12
    elevation_deg: float = 20.0
    radius_frac: float = 1.5  # orbit radius as a multiple of the cloud diameter
    width: int = 320
    height: int = 240
    point_radius: int = 1  # pixels
    background: tuple[int, int, int] = (255, 255, 255)
    fov_deg: float = 45.0
    orthographic: bool = False

    def __post_init__(self) -> None:
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if not self.radius_frac > 0:
            raise ValueError("radius_frac must be positive")
        if self.width < 1 or self.height < 1 or self.point_radius < 0:
            raise ValueError("image size must be positive and point_radius non-negative")


@dataclass(frozen=True)
class View:
    eye: NDArray[np.float64]
    right: NDArray[np.float64]
    up: NDArray[np.float64]
    forward: NDArray[np.float64]


def orbit_view(center: NDArray[np.float64], distance: float, azimuth: float, elevation: float) -> View:
    offset = distance * np.array(
        [math.cos(elevation) * math.cos(azimuth), math.cos(elevation) * math.sin(azimuth), math.sin(elevation)]
    )
    eye = center + offset
    forward = -offset / np.linalg.norm(offset)
    right = np.cross(forward, [0.0, 0.0, 1.0])
    if np.linalg.norm(right) < 1e-12:  # looking straight down or up
        right = np.array([1.0, 0.0, 0.0])
    right /= np.linalg.norm(right)
    up = np.cross(right, forward)
    return View(eye, right, up, forward)


def project(
    points: NDArray[np.float64], view: View, spec: TurntableSpec, scale: float
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Continuous pixel coordinates ``(u, v)`` and depth; the principal point is the image center."""
    rel = points - view.eye
    x = rel @ view.right
    y = rel @ view.up
    z = rel @ view.forward
    if spec.orthographic:
        f = scale
        u = spec.width / 2 + f * x
        v = spec.height / 2 - f * y
    else:
        f = (spec.height / 2) / math.tan(math.radians(spec.fov_deg) / 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = spec.width / 2 + f * x / z
            v = spec.height / 2 - f * y / z
    return u, v, z


def height_ramp(points: NDArray[np.float64]) -> NDArray[np.float64]:
    z = points[:, 2]
    span = z.max() - z.min()
    h = (z - z.min()) / span if span > 0 else np.zeros_like(z)
    return np.stack([0.2 + 0.6 * h, 0.7 - 0.3 * h, 0.9 - 0.7 * h], axis=1)


def rasterize(
    u: NDArray[np.float64],
    v: NDArray[np.float64],
    depth: NDArray[np.float64],
    colors: NDArray[np.uint8],
    spec: TurntableSpec,
    near: float = 1e-9,
) -> NDArray[np.uint8]:
    """Nearest point wins each pixel; equal depths go to the lower point index."""
    w, h = spec.width, spec.height
    r = spec.point_radius
    offs = [(dx, dy) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dx * dx + dy * dy <= r * r]
    ok = np.isfinite(u) & np.isfinite(v) & (depth > near)
    idx = np.flatnonzero(ok)
    pu = np.floor(u[idx]).astype(np.int64)
    pv = np.floor(v[idx]).astype(np.int64)
    pix, who = [], []
    for dx, dy in offs:
        x, y = pu + dx, pv + dy
        inside = (x >= 0) & (x < w) & (y >= 0) & (y < h)
        pix.append(y[inside] * w + x[inside])
        who.append(idx[inside])
    pix = np.concatenate(pix)
    who = np.concatenate(who)
    image = np.empty((h * w, 3), dtype=np.uint8)
    image[:] = spec.background
    if len(pix):
        d = depth[who]
        zbuf = np.full(h * w, np.inf)
        np.minimum.at(zbuf, pix, d)
        front = d == zbuf[pix]
        owner = np.full(h * w, np.iinfo(np.int64).max)
        np.minimum.at(owner, pix[front], who[front])
        drawn = owner != np.iinfo(np.int64).max
        image[drawn] = colors[owner[drawn]]
    return image.reshape(h, w, 3)


def render_frame(pc: PointCloud, spec: TurntableSpec, index: int) -> NDArray[np.uint8]:
    pts = pc.points
    center = pts.mean(axis=0)
    diam = cloud_diameter(pc)
    extent = diam if diam > 0 else 1.0
    colors = pc.colors if pc.colors is not None else height_ramp(pts)
    rgb = np.round(np.clip(colors, 0.0, 1.0) * 255).astype(np.uint8)
    az = 2 * math.pi * index / spec.n_frames
    view = orbit_view(center, spec.radius_frac * extent, az, math.radians(spec.elevation_deg))
    scale = min(spec.width, spec.height) / (1.1 * extent)
    u, v, z = project(pts, view, spec, scale)
    return rasterize(u, v, z, rgb, spec)


def render_turntable(
    pc: PointCloud, spec: TurntableSpec, out_dir: str | Path, fmt: str = "png", threads: int = 1
) -> list[Path]:
    """Write ``frame_%04d.<fmt>`` for one revolution around the cloud's centroid."""
    if len(pc) == 0:
        raise ValueError("empty point cloud")
    if fmt not in ("png", "ppm"):
        raise ValueError(f"unsupported image format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def one(i: int) -> Path:
        path = out / f"frame_{i:04d}.{fmt}"
        Image.fromarray(render_frame(pc, spec, i), "RGB").save(path, format=fmt.upper())
        return path

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(spec.n_frames)))
    return [one(i) for i in range(spec.n_frames)]
