"""Turn a division-model camera rig into a per-image transforms file.

Builds a fifteen-camera ring rig, writes it as a rig manifest, converts each
camera's single distortion coefficient to k1/k2 and writes the transforms
JSON that splat trainers read.

    python3 demos/camera_rig.py [out_dir]
"""

from __future__ import annotations

import sys
from pathlib import Path

from plantreg.cameras import convert_distortion, emit_transforms, ring_rig, save_rig


def main(out_dir: str = "demo_out/cameras") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cams = ring_rig(kappa=-0.2)
    save_rig(cams, out / "rig.json")
    poly = [convert_distortion(c) for c in cams]
    emit_transforms(poly, [f"images/{c.name}.png" for c in cams], out / "transforms.json")
    c = poly[0]
    print(f"kappa -0.2 at {c.width}x{c.height} -> k1 = {c.k1:.6e}, k2 = {c.k2:.6e}")
    print(f"wrote {out / 'rig.json'} and {out / 'transforms.json'} ({len(poly)} cameras)")


if __name__ == "__main__":
    main(*sys.argv[1:])
