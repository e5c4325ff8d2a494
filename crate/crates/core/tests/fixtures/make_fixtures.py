"""Writes the golden byte fixtures with nothing but the Python stdlib.

Run from this directory: python3 make_fixtures.py
"""
import json
import struct


def raster(magic, w, h, payload):
    return magic + struct.pack("<II", w, h) + payload


def fmt(x):
    # shortest round-trip repr without a trailing ".0", as the Rust writer does
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


with open("mask_3x2.mask", "wb") as f:
    f.write(raster(b"MASK", 3, 2, bytes([0, 255, 255, 0, 0, 255])))

with open("depth_3x2.dpth", "wb") as f:
    depth = [0.5, 1.0, 80.0, 1000.0, 12.345, 0.003]
    f.write(raster(b"DPTH", 3, 2, struct.pack("<6f", *depth)))

with open("scores_2x2.scor", "wb") as f:
    scores = [0.0, -1.5, 0.25, 1e30]
    f.write(raster(b"SCOR", 2, 2, struct.pack("<4f", *scores)))

poses = [
    ([[1, 0, 0], [0, 1, 0], [0, 0, 1]], [0, 0, 0]),
    ([[0.6, 0, 0.8], [0, 1, 0], [-0.8, 0, 0.6]], [1.5, -2, 10.25]),
]
with open("poses.txt", "w") as f:
    for i, (r, t) in enumerate(poses, start=1):
        fields = [str(i)]
        for row, ti in zip(r, t):
            fields += [fmt(v) for v in row] + [fmt(ti)]
        f.write(" ".join(fields) + "\n")

manifest = {
    "schema_version": 1,
    "sequence_id": "golden",
    "fps": 60.0,
    "width": 3,
    "height": 2,
    "frame_count": 2,
    "channels": {
        "depth": "depth/%06d.dpth",
        "mask": "masks/%06d.mask",
        "pose": "poses.txt",
    },
    "intrinsics": {"fx": 240.0, "fy": 240.0, "cx": 1.0, "cy": 0.5},
}
with open("manifest.json", "w") as f:
    f.write(json.dumps(manifest, indent=2) + "\n")
