"""On-disk formats.

Raw tensor file: magic "SLPT", format version u32, rank u64, dims u64 each
(all little-endian), then float32 data.  Checkpoints share the header and
then repeat [name length u64, UTF-8 name, rank u64, dims..., float32 data]
per parameter until EOF; optimizer moments ride along under "/m" and "/v"
name suffixes.  Images are binary PPM (P6); point clouds are ASCII PLY
with x/y/z floats and red/green/blue uchar.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SLPT"
FORMAT_VERSION = 1


def write_tensor(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: bad magic")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        (rank,) = struct.unpack("<Q", f.read(8))
        dims = struct.unpack(f"<{rank}Q", f.read(8 * rank))
        data = np.frombuffer(f.read(), dtype="<f4")
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if data.size != count:
        raise ValueError(f"{path}: truncated tensor data")
    return data.reshape(dims).copy()


def write_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        for name, array in arrays.items():
            arr = np.ascontiguousarray(array, dtype="<f4")
            raw = name.encode("utf-8")
            f.write(struct.pack("<Q", len(raw)))
            f.write(raw)
            f.write(struct.pack("<Q", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def read_checkpoint(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: bad magic")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        while True:
            head = f.read(8)
            if not head:
                break
            (name_len,) = struct.unpack("<Q", head)
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<Q", f.read(8))
            dims = struct.unpack(f"<{rank}Q", f.read(8 * rank))
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            data = np.frombuffer(f.read(4 * count), dtype="<f4")
            if data.size != count:
                raise ValueError(f"{path}: truncated entry '{name}'")
            out[name] = data.reshape(dims).copy()
    return out


def write_ppm(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) float image in [0, 1] as binary PPM (P6)."""
    img = np.clip(np.asarray(image), 0.0, 1.0)
    u8 = np.round(img * 255.0).astype(np.uint8)
    h, w, _ = u8.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(u8.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into an (H, W, 3) float image in [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    parts = []
    pos = 0
    while len(parts) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        parts.append(data[start:pos])
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    pos += 1
    pix = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return pix.reshape(h, w, 3).astype(np.float64) / float(maxval)


def write_ply(path, coords: np.ndarray, colors: np.ndarray) -> None:
    """ASCII PLY with float x/y/z and uchar red/green/blue in [0, 255]."""
    coords = np.asarray(coords, dtype=np.float64)
    u8 = np.round(np.clip(np.asarray(colors), 0.0, 1.0) * 255.0).astype(np.uint8)
    lines = [
        "ply", "format ascii 1.0", f"element vertex {coords.shape[0]}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
    ]
    for (x, y, z), (r, g, b) in zip(coords, u8):
        lines.append(f"{x:.8g} {y:.8g} {z:.8g} {r} {g} {b}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path):
    """Returns (coords (N,3) float64, colors (N,3) float in [0,1])."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n = 0
    body = 0
    for i, line in enumerate(lines):
        tok = line.split()
        if tok[:2] == ["element", "vertex"]:
            n = int(tok[2])
        if tok[:1] == ["end_header"]:
            body = i + 1
            break
    coords = np.empty((n, 3))
    colors = np.empty((n, 3))
    for j in range(n):
        tok = lines[body + j].split()
        coords[j] = [float(t) for t in tok[:3]]
        colors[j] = [int(t) / 255.0 for t in tok[3:6]]
    return coords, colors
