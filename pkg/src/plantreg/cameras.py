"""Calibrated rig cameras: division-model distortion to the k1-k4/p1-p2 convention.

The single division coefficient ``kappa`` becomes ``k1 = -kappa / sqrt(w^2 + h^2)``
and ``k2 = k1^2``; ``k3``, ``k4``, ``p1`` and ``p2`` are zero.

Rig manifest (JSON)::

    {"euler_order": "xyz",
     "cameras": [{"name": "cam00", "kappa": -0.2, "width": 4032, "height": 3024,
                  "fx": 3000.0, "fy": 3000.0, "cx": 2016.0, "cy": 1512.0,
                  "rotation_deg": [0, 0, 0], "translation": [0, 0, 0],
                  "scale_factors": [1.0, 1.0], "image": "images/cam00.png"}]}

Rotation angles are extrinsic Euler angles in degrees (scipy convention:
lowercase axes are extrinsic) and the pose is camera-to-world.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from scipy.spatial.transform import Rotation

from .formats import dump_json, load_json
from .geometry import RigidTransform


class RigError(ValueError):
    pass


@dataclass(frozen=True)
class DivisionCamera:
    kappa: float
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    euler_order: str = "xyz"
    name: str = ""
    image: str | None = None
    # listed by the calibration but not interpreted here
    scale_factors: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def pose(self) -> RigidTransform:
        """Camera-to-world transform."""
        r = Rotation.from_euler(self.euler_order, self.rotation_deg, degrees=True).as_matrix()
        return RigidTransform(r, self.translation)


@dataclass(frozen=True)
class PolyCamera:
    k1: float
    k2: float
    k3: float
    k4: float
    p1: float
    p2: float
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    pose: RigidTransform = field(default_factory=RigidTransform)
    name: str = ""


def convert_distortion(cam: DivisionCamera) -> PolyCamera:
    k1 = -cam.kappa / math.sqrt(cam.width * cam.width + cam.height * cam.height)
    return PolyCamera(
        k1=k1, k2=k1 * k1, k3=0.0, k4=0.0, p1=0.0, p2=0.0,
        width=cam.width, height=cam.height, fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy,
        pose=cam.pose, name=cam.name,
    )


_REQUIRED = ("kappa", "width", "height", "fx", "fy", "cx", "cy")


def _vector(entry: dict, key: str, n: int, where: str) -> tuple[float, ...]:
    val = entry.get(key, [0.0] * n)
    if not isinstance(val, list) or len(val) != n:
        raise RigError(f"{where}: field {key!r} must be a list of {n} numbers")
    out = []
    for v in val:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise RigError(f"{where}: field {key!r} must hold finite numbers")
        out.append(float(v))
    return tuple(out)


def parse_rig(doc: dict | list) -> list[DivisionCamera]:
    if isinstance(doc, list):
        doc = {"cameras": doc}
    if not isinstance(doc, dict) or not isinstance(doc.get("cameras"), list):
        raise RigError("rig manifest must hold a 'cameras' list")
    order = doc.get("euler_order", "xyz")
    try:
        Rotation.from_euler(order, [0.0, 0.0, 0.0])
    except ValueError:
        raise RigError(f"invalid euler_order {order!r}") from None
    cams = []
    for i, entry in enumerate(doc["cameras"]):
        if not isinstance(entry, dict):
            raise RigError(f"camera {i}: entry must be an object")
        where = f"camera {i} ({entry.get('name', '')})"
        for key in _REQUIRED:
            if key not in entry:
                raise RigError(f"{where}: missing field {key!r}")
            v = entry[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise RigError(f"{where}: field {key!r} must be a finite number")
        for key in ("width", "height"):
            if not isinstance(entry[key], int) and not float(entry[key]).is_integer():
                raise RigError(f"{where}: field {key!r} must be an integer")
        sf = entry.get("scale_factors")
        try:
            cams.append(
                DivisionCamera(
                    kappa=float(entry["kappa"]),
                    width=int(entry["width"]),
                    height=int(entry["height"]),
                    fx=float(entry["fx"]),
                    fy=float(entry["fy"]),
                    cx=float(entry["cx"]),
                    cy=float(entry["cy"]),
                    rotation_deg=_vector(entry, "rotation_deg", 3, where),
                    translation=_vector(entry, "translation", 3, where),
                    euler_order=order,
                    name=str(entry.get("name", f"cam{i:02d}")),
                    image=entry.get("image"),
                    scale_factors=None if sf is None else _vector(
                        entry, "scale_factors", len(sf) if isinstance(sf, list) else -1, where
                    ),
                )
            )
        except ValueError as exc:
            raise RigError(f"{where}: {exc}") from None
    return cams


def load_rig(path: str | Path) -> list[DivisionCamera]:
    return parse_rig(load_json(path))


def rig_document(cams: list[DivisionCamera]) -> dict:
    orders = {c.euler_order for c in cams}
    if len(orders) > 1:
        raise RigError("cameras use different euler orders")
    entries = []
    for c in cams:
        e = {
            "name": c.name, "kappa": c.kappa, "width": c.width, "height": c.height,
            "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
            "rotation_deg": list(c.rotation_deg), "translation": list(c.translation),
        }
        if c.scale_factors is not None:
            e["scale_factors"] = list(c.scale_factors)
        if c.image is not None:
            e["image"] = c.image
        entries.append(e)
    return {"euler_order": orders.pop() if orders else "xyz", "cameras": entries}


def save_rig(cams: list[DivisionCamera], path: str | Path) -> Path:
    return dump_json(rig_document(cams), path)


def transforms_document(cams: list[PolyCamera], image_paths: list[str]) -> dict:
    if len(cams) != len(image_paths):
        raise ValueError("need exactly one image path per camera")
    frames = []
    for cam, img in zip(cams, image_paths):
        m = cam.pose.as_matrix()
        frames.append(
            {
                "file_path": str(img),
                "transform_matrix": [[float(v) for v in row] for row in m],
                "fl_x": cam.fx, "fl_y": cam.fy, "cx": cam.cx, "cy": cam.cy,
                "w": cam.width, "h": cam.height,
                "k1": cam.k1, "k2": cam.k2, "k3": cam.k3, "k4": cam.k4,
                "p1": cam.p1, "p2": cam.p2,
            }
        )
    return {"camera_model": "OPENCV", "frames": frames}


def emit_transforms(cams: list[PolyCamera], image_paths: list[str], out: str | Path) -> Path:
    """Write the per-image transforms JSON (camera-to-world, row-major 4x4)."""
    return dump_json(transforms_document(cams, image_paths), out)


def ring_rig(kappa: float = -0.2, width: int = 2448, height: int = 2048, radius: float = 1.2) -> list[DivisionCamera]:
    """Fifteen cameras in three rings of five around a plant, looking inwards.

    A geometry fixture for tests and demos, not a real calibration.
    """
    cams = []
    for layer, (z, tilt) in enumerate(((0.2, 80.0), (0.6, 90.0), (1.0, 110.0))):
        for j in range(5):
            yaw = j * 72.0
            a = math.radians(yaw)
            cams.append(
                DivisionCamera(
                    kappa=kappa, width=width, height=height,
                    fx=2400.0, fy=2400.0, cx=width / 2, cy=height / 2,
                    rotation_deg=(tilt, 0.0, yaw + 90.0),
                    translation=(radius * math.cos(a), radius * math.sin(a), z),
                    name=f"L{layer}C{j}",
                )
            )
    return cams

