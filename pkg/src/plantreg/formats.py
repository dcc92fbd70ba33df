"""PLY point clouds and splat exports (ascii and binary little-endian), plus JSON helpers.

Plain clouds use ``x y z`` (double), optional ``nx ny nz`` and ``red green
blue`` (uchar). A vertex element carrying ``scale_0`` and ``rot_0`` is read as
a Gaussian-splat export: ``scale_*`` are log-scales, ``rot_*`` a w-x-y-z
quaternion, ``opacity`` a logit and ``f_dc_*`` the zeroth spherical-harmonic
color coefficients. Vertex properties that are not interpreted are kept in
``extra`` and written back out.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .geometry import UNIT_NORMAL_TOL, PointCloud
from .splats import SplatSet

SH_C0 = 0.28209479177387814
_MAX_HEADER = 1 << 16

_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_PLY_NAME = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
             "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}


class PlyError(ValueError):
    """Malformed or unreadable PLY data."""


class UnsupportedPlyFormat(PlyError):
    pass


@dataclass
class PlyProperty:
    name: str
    dtype: str  # numpy code of the value type
    count_dtype: str | None = None  # set for list properties


@dataclass
class PlyElement:
    name: str
    count: int
    properties: list[PlyProperty] = field(default_factory=list)


@dataclass
class PlyHeaderInfo:
    format: str
    elements: list[PlyElement]
    body_offset: int

    def element(self, name: str) -> PlyElement | None:
        return next((e for e in self.elements if e.name == name), None)


def parse_header(data: bytes) -> PlyHeaderInfo:
    if not data.startswith(b"ply"):
        raise PlyError("missing 'ply' magic")
    end = data.find(b"end_header", 0, _MAX_HEADER)
    if end < 0:
        raise PlyError("no end_header within the first 64 KiB")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise PlyError("end_header line is not terminated")
    try:
        lines = data[:end].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise PlyError(f"header is not ascii: {exc}") from None
    if data[end:nl].strip() != b"end_header":
        raise PlyError("junk after end_header")
    if not lines or lines[0].strip() != "ply":
        raise PlyError("missing 'ply' magic")
    fmt = None
    elements: list[PlyElement] = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        key = parts[0]
        if key == "format":
            if len(parts) != 3:
                raise PlyError(f"header line {lineno}: bad format line")
            fmt = parts[1]
            if fmt == "binary_big_endian":
                raise UnsupportedPlyFormat("binary_big_endian PLY is not supported")
            if fmt not in ("ascii", "binary_little_endian"):
                raise PlyError(f"header line {lineno}: unknown format {fmt!r}")
        elif key == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise PlyError(f"header line {lineno}: bad element line")
            elements.append(PlyElement(parts[1], int(parts[2])))
        elif key == "property":
            if not elements:
                raise PlyError(f"header line {lineno}: property before any element")
            if len(parts) == 5 and parts[1] == "list":
                if parts[2] not in _TYPES or parts[3] not in _TYPES:
                    raise PlyError(f"header line {lineno}: unknown list type")
                if _TYPES[parts[2]][0] == "f":
                    raise PlyError(f"header line {lineno}: list count must be integral")
                prop = PlyProperty(parts[4], _TYPES[parts[3]], _TYPES[parts[2]])
            elif len(parts) == 3 and parts[1] in _TYPES:
                prop = PlyProperty(parts[2], _TYPES[parts[1]])
            else:
                raise PlyError(f"header line {lineno}: bad property line")
            if any(p.name == prop.name for p in elements[-1].properties):
                raise PlyError(f"header line {lineno}: duplicate property {prop.name!r}")
            elements[-1].properties.append(prop)
        else:
            raise PlyError(f"header line {lineno}: unexpected keyword {key!r}")
    if fmt is None:
        raise PlyError("header has no format line")
    header = PlyHeaderInfo(fmt, elements, nl + 1)
    vertex = header.element("vertex")
    if vertex is None:
        raise PlyError("no vertex element")
    if any(p.count_dtype for p in vertex.properties):
        raise PlyError("list properties on vertex element are not supported")
    return header


def _read_binary(data: bytes, header: PlyHeaderInfo) -> dict[str, NDArray]:
    off = header.body_offset
    for el in header.elements:
        if all(p.count_dtype is None for p in el.properties):
            dt = np.dtype([(p.name, "<" + p.dtype) for p in el.properties])
            need = dt.itemsize * el.count
            if off + need > len(data):
                raise PlyError(
                    f"truncated body: element {el.name!r} needs {need} bytes at offset {off}, "
                    f"{len(data) - off} available"
                )
            if el.name == "vertex":
                arr = np.frombuffer(data, dtype=dt, count=el.count, offset=off)
                return {p.name: arr[p.name].copy() for p in el.properties}
            off += need
            continue
        for _ in range(el.count):  # elements with list properties, skipped row by row
            for p in el.properties:
                if p.count_dtype is None:
                    off += np.dtype(p.dtype).itemsize
                else:
                    csize = np.dtype(p.count_dtype).itemsize
                    if off + csize > len(data):
                        raise PlyError(f"truncated body at offset {off} in element {el.name!r}")
                    n = int(np.frombuffer(data, "<" + p.count_dtype, 1, off)[0])
                    if n < 0:
                        raise PlyError(f"negative list length at offset {off}")
                    off += csize + n * np.dtype(p.dtype).itemsize
                if off > len(data):
                    raise PlyError(f"truncated body at offset {off} in element {el.name!r}")
    raise PlyError("no vertex element")


def _read_ascii(data: bytes, header: PlyHeaderInfo) -> dict[str, NDArray]:
    try:
        body = data[header.body_offset:].decode("ascii")
    except UnicodeDecodeError as exc:
        raise PlyError(f"ascii body is not ascii: {exc}") from None
    lines = iter(body.splitlines())
    lineno = 0
    for el in header.elements:
        rows = []
        for _ in range(el.count):
            line = next(lines, None)
            lineno += 1
            while line is not None and not line.strip():
                line = next(lines, None)
                lineno += 1
            if line is None:
                raise PlyError(f"truncated body: element {el.name!r} ended after {len(rows)} of {el.count} rows")
            tokens = line.split()
            if el.name != "vertex":
                rows.append(None)
                continue
            if len(tokens) < len(el.properties):
                raise PlyError(f"body line {lineno}: expected {len(el.properties)} values, got {len(tokens)}")
            try:
                rows.append([float(tok) for tok in tokens[: len(el.properties)]])
            except ValueError:
                raise PlyError(f"body line {lineno}: non-numeric value") from None
        if el.name == "vertex":
            table = np.array(rows, dtype=np.float64).reshape(el.count, len(el.properties))
            out = {}
            for k, p in enumerate(el.properties):
                col = table[:, k]
                if p.dtype[0] != "f":
                    info = np.iinfo(p.dtype)
                    if np.any(col != np.round(col)) or np.any(col < info.min) or np.any(col > info.max):
                        raise PlyError(f"property {p.name!r}: value out of range for {_PLY_NAME[p.dtype]}")
                out[p.name] = col.astype(p.dtype)
            return out
    raise PlyError("no vertex element")


_KNOWN_CLOUD = {"x", "y", "z", "nx", "ny", "nz", "red", "green", "blue"}
_SPLAT_CORE = {"x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
               "opacity", "f_dc_0", "f_dc_1", "f_dc_2"}


def _color_from(cols: dict[str, NDArray], names: tuple[str, str, str]) -> NDArray | None:
    if not all(n in cols for n in names):
        return None
    raw = np.stack([cols[n] for n in names], axis=1)
    if raw.dtype == np.uint8:
        return raw.astype(np.float64) / 255.0
    return np.clip(raw.astype(np.float64), 0.0, 1.0)


def _build(cols: dict[str, NDArray], path: str) -> PointCloud | SplatSet:
    for n in ("x", "y", "z"):
        if n not in cols:
            raise PlyError(f"vertex element lacks property {n!r}")
    xyz = np.stack([cols["x"], cols["y"], cols["z"]], axis=1).astype(np.float64)
    if not np.all(np.isfinite(xyz)):
        raise PlyError("non-finite vertex coordinates")
    if "scale_0" in cols and "rot_0" in cols:
        for n in ("scale_1", "scale_2", "rot_1", "rot_2", "rot_3"):
            if n not in cols:
                raise PlyError(f"splat vertex lacks property {n!r}")
        ls = np.stack([cols[f"scale_{i}"] for i in range(3)], axis=1).astype(np.float64)
        rot = np.stack([cols[f"rot_{i}"] for i in range(4)], axis=1).astype(np.float64)
        if "opacity" in cols:
            with np.errstate(over="ignore"):
                opacity = 1.0 / (1.0 + np.exp(-cols["opacity"].astype(np.float64)))
        else:
            opacity = np.ones(len(xyz))
        if all(f"f_dc_{i}" in cols for i in range(3)):
            dc = np.stack([cols[f"f_dc_{i}"] for i in range(3)], axis=1).astype(np.float64)
            colors = np.clip(0.5 + SH_C0 * dc, 0.0, 1.0)
        else:
            colors = _color_from(cols, ("red", "green", "blue"))
            if colors is None:
                colors = np.full((len(xyz), 3), 0.5)
        if not (np.all(np.isfinite(ls)) and np.all(np.isfinite(rot))):
            raise PlyError("non-finite splat scales or rotations")
        extra = {k: v for k, v in cols.items() if k not in _SPLAT_CORE}
        return SplatSet(xyz, ls, rot, np.nan_to_num(opacity), np.nan_to_num(colors, nan=0.5),
                        source_path=path, extra=extra)

    colors = _color_from(cols, ("red", "green", "blue"))
    if colors is not None and not np.all(np.isfinite(colors)):
        raise PlyError("non-finite colors")
    normals = None
    extra = {k: v for k, v in cols.items() if k not in _KNOWN_CLOUD}
    if all(n in cols for n in ("nx", "ny", "nz")):
        nm = np.stack([cols["nx"], cols["ny"], cols["nz"]], axis=1).astype(np.float64)
        if np.all(np.isfinite(nm)) and (
            len(nm) == 0 or np.max(np.abs(np.linalg.norm(nm, axis=1) - 1.0)) <= UNIT_NORMAL_TOL
        ):
            normals = nm
        else:  # zero or unnormalised normals are not normals; keep them verbatim
            extra.update({n: cols[n] for n in ("nx", "ny", "nz")})
    return PointCloud(xyz, colors, normals, extra)


def read_ply_bytes(data: bytes, path: str = "") -> PointCloud | SplatSet:
    try:
        header = parse_header(data)
        # garbage values are rejected explicitly below; numpy need not warn about them
        with np.errstate(all="ignore"):
            if header.format == "ascii":
                cols = _read_ascii(data, header)
            else:
                cols = _read_binary(data, header)
            return _build(cols, path)
    except PlyError:
        raise
    except (ValueError, TypeError, IndexError, KeyError, OverflowError, struct.error) as exc:
        raise PlyError(f"malformed PLY: {exc}") from None


class UnreadableFile(FileNotFoundError):
    """Missing or unreadable input; ``filename`` names the path."""

    def __str__(self) -> str:
        return str(self.args[0])


def _unreadable(path: Path, exc: OSError) -> UnreadableFile:
    err = UnreadableFile(f"cannot read {path}: {exc.strerror}")
    err.filename = str(path)
    return err


def read_ply(path: str | Path) -> PointCloud | SplatSet:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise _unreadable(path, exc) from None
    return read_ply_bytes(data, str(path))


def read_cloud(path: str | Path) -> PointCloud:
    """Read a PLY as a plain cloud; splat exports yield their means and colors unfiltered."""
    obj = read_ply(path)
    if isinstance(obj, SplatSet):
        return PointCloud(obj.means, np.clip(obj.colors, 0, 1))
    return obj


def _columns(obj: PointCloud | SplatSet) -> list[tuple[str, NDArray]]:
    if isinstance(obj, SplatSet):
        cols: list[tuple[str, NDArray]] = [
            ("x", obj.means[:, 0]), ("y", obj.means[:, 1]), ("z", obj.means[:, 2]),
        ]
        dc = (np.asarray(obj.colors) - 0.5) / SH_C0
        cols += [(f"f_dc_{i}", dc[:, i]) for i in range(3)]
        op = np.clip(obj.opacity, 1e-12, 1 - 1e-12)
        cols += [("opacity", np.log(op / (1 - op)))]
        cols += [(f"scale_{i}", obj.log_scales[:, i]) for i in range(3)]
        cols += [(f"rot_{i}", obj.rotations[:, i]) for i in range(4)]
        cols = [(n, np.asarray(c, dtype=np.float32)) for n, c in cols]
    else:
        p = obj.points
        cols = [("x", p[:, 0]), ("y", p[:, 1]), ("z", p[:, 2])]
        if obj.normals is not None:
            cols += [("nx", obj.normals[:, 0]), ("ny", obj.normals[:, 1]), ("nz", obj.normals[:, 2])]
        if obj.colors is not None:
            rgb = np.round(np.asarray(obj.colors) * 255.0).astype(np.uint8)
            cols += [("red", rgb[:, 0]), ("green", rgb[:, 1]), ("blue", rgb[:, 2])]
    taken = {n for n, _ in cols}
    cols += [(k, np.asarray(v)) for k, v in obj.extra.items() if k not in taken]
    return cols


def write_ply(
    obj: PointCloud | SplatSet, path: str | Path, format: str = "binary_little_endian"
) -> Path:
    """Write a cloud or splat set; binary output is byte-deterministic."""
    if format not in ("ascii", "binary_little_endian"):
        raise UnsupportedPlyFormat(f"cannot write {format!r}")
    n = len(obj)
    if n == 0:
        raise ValueError("cannot write an empty point cloud")
    cols = _columns(obj)
    head = ["ply", f"format {format} 1.0", f"element vertex {n}"]
    for name, col in cols:
        head.append(f"property {_PLY_NAME[col.dtype.str[1:]]} {name}")
    head.append("end_header")
    header = ("\n".join(head) + "\n").encode("ascii")
    if format == "binary_little_endian":
        dt = np.dtype([(name, "<" + col.dtype.str[1:]) for name, col in cols])
        table = np.empty(n, dtype=dt)
        for name, col in cols:
            table[name] = col
        body = table.tobytes()
    else:
        fmts = ["%d" if c.dtype.kind in "iu" else "%.17g" for _, c in cols]
        rows = []
        for i in range(n):
            rows.append(" ".join(f % c[i] for f, (_, c) in zip(fmts, cols)))
        body = ("\n".join(rows) + "\n").encode("ascii")
    path = Path(path)
    path.write_bytes(header + body)
    return path


def header_text(path: str | Path) -> str:
    data = Path(path).read_bytes()
    return data[: parse_header(data).body_offset].decode("ascii")


def dump_json(obj: Any, path: str | Path) -> Path:
    """Write JSON with stable formatting (keys in insertion order, trailing newline)."""
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def load_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise _unreadable(path, exc) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def finite_or_none(x: float) -> float | None:
    return x if math.isfinite(x) else None
