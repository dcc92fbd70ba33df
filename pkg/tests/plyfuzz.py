"""Deterministic corpus of malformed PLY files for the reader."""

from __future__ import annotations

import numpy as np

from plantreg.formats import PlyError, read_ply_bytes

_TYPES = ["char", "uchar", "short", "ushort", "int", "uint", "float", "double", "int8", "float64", "bogus"]


def seed_files() -> list[bytes]:
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(6, 3))
    ascii_cloud = (
        "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
        "0 0 0 255 0 0\n1 2 3 0 255 0\n-1 0.5 2 0 0 255\n"
    ).encode()
    head = (
        "ply\nformat binary_little_endian 1.0\nelement vertex 6\nproperty double x\nproperty double y\n"
        "property double z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
    ).encode()
    face = np.array([3], np.uint8).tobytes() + np.array([0, 1, 2], "<i4").tobytes()
    binary_cloud = head + pts.astype("<f8").tobytes() + face
    names = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
             "rot_0", "rot_1", "rot_2", "rot_3"]
    splat_head = "ply\nformat binary_little_endian 1.0\nelement vertex 4\n" + "".join(
        f"property float {n}\n" for n in names) + "end_header\n"
    splat = splat_head.encode() + rng.normal(size=(4, len(names))).astype("<f4").tobytes()
    return [ascii_cloud, binary_cloud, splat]


def _mutate_header(data: bytes, rng: np.random.Generator) -> bytes:
    end = data.find(b"end_header")
    lines = data[:end].decode("latin-1").split("\n")
    body = data[end:]
    i = int(rng.integers(0, len(lines)))
    words = lines[i].split()
    op = int(rng.integers(0, 8))
    if op == 0:
        del lines[i]
    elif op == 1:
        lines.insert(i, lines[int(rng.integers(0, len(lines)))])
    elif op == 2 and words:
        words[int(rng.integers(0, len(words)))] = str(rng.choice(_TYPES + ["-1", "99999999999", "vertex", ""]))
        lines[i] = " ".join(words)
    elif op == 3:
        lines[i] = lines[i].replace("binary_little_endian", str(rng.choice(["binary_big_endian", "ascii", "foo"])))
    elif op == 4:
        lines[i] = lines[i].replace("vertex", str(rng.choice(["face", "vertex2", ""])))
    elif op == 5:
        lines[i] = "element vertex " + str(int(rng.integers(0, 20)))
    elif op == 6:
        lines[i] = "property list uchar " + str(rng.choice(_TYPES)) + " x"
    else:
        lines[i] = lines[i] + " " + str(rng.choice(["extra", "\x00", "ü"]))
    return "\n".join(lines).encode("utf-8", "surrogateescape") + body


def _mutate_bytes(data: bytes, rng: np.random.Generator) -> bytes:
    b = bytearray(data)
    op = int(rng.integers(0, 5)) if b else 4
    if op == 0:
        return bytes(b[: int(rng.integers(0, len(b)))])
    if op == 1:
        for _ in range(int(rng.integers(1, 8))):
            b[int(rng.integers(0, len(b)))] = int(rng.integers(0, 256))
        return bytes(b)
    if op == 2:
        at = int(rng.integers(0, len(b)))
        return bytes(b[:at] + rng.bytes(int(rng.integers(1, 32))) + b[at:])
    if op == 3:
        return bytes(b) + rng.bytes(int(rng.integers(1, 64)))
    return rng.bytes(int(rng.integers(0, 256)))


def corpus(n: int, seed: int = 0) -> list[bytes]:
    rng = np.random.default_rng(seed)
    seeds = seed_files()
    out = []
    for _ in range(n):
        data = seeds[int(rng.integers(0, len(seeds)))]
        for _ in range(int(rng.integers(1, 4))):
            data = _mutate_header(data, rng) if rng.random() < 0.5 and b"end_header" in data else _mutate_bytes(data, rng)
        out.append(data)
    return out


def survives(data: bytes) -> bool:
    """True when the reader either parses the bytes or raises PlyError."""
    try:
        read_ply_bytes(data)
    except PlyError:
        return True
    except Exception:  # noqa: BLE001 - anything else is a crash
        return False
    return True
