"""Binary file formats for volumes and image buffers.

Volume files ("ISVOL1"): an ASCII magic line, one JSON header line with
``{"dims": [x, y, z], "spacing": [sx, sy, sz], "iso": v}``, then
``x*y*z`` IEEE-754 float32 little-endian samples in x-fastest order.

Buffer files ("ISRB1"): 5-byte magic, three little-endian u32 fields
(channels, height, width), then ``channels*height*width`` float32
little-endian values, channel-major and row-major within each channel.
"""
from __future__ import annotations

import json
import os

import numpy as np

from .errors import FormatError

VOLUME_MAGIC = b"ISVOL1\n"
BUFFER_MAGIC = b"ISRB1"


def write_volume(path: str | os.PathLike, vol) -> None:
    """Write a ScalarVolume to ``path`` in the ISVOL1 format."""
    header = {
        "dims": list(vol.dims),
        "spacing": [float(s) for s in vol.spacing],
        "iso": float(vol.default_iso),
    }
    with open(path, "wb") as f:
        f.write(VOLUME_MAGIC)
        f.write(json.dumps(header).encode("ascii") + b"\n")
        f.write(np.ascontiguousarray(vol.data, dtype="<f4").tobytes())


def read_volume(path: str | os.PathLike):
    """Read an ISVOL1 file back into a ScalarVolume."""
    from .volume import ScalarVolume

    with open(path, "rb") as f:
        magic = f.read(len(VOLUME_MAGIC))
        if magic != VOLUME_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        header_line = f.readline()
        try:
            header = json.loads(header_line)
            dims = tuple(int(d) for d in header["dims"])
            spacing = tuple(float(s) for s in header["spacing"])
            iso = float(header["iso"])
        except (ValueError, KeyError, TypeError) as e:
            raise FormatError(f"{path}: bad header: {e}") from e
        if len(dims) != 3 or len(spacing) != 3:
            raise FormatError(f"{path}: dims/spacing must have 3 entries")
        count = dims[0] * dims[1] * dims[2]
        raw = f.read(4 * count)
        if len(raw) != 4 * count:
            raise FormatError(f"{path}: truncated payload ({len(raw)} of {4 * count} bytes)")
        data = np.frombuffer(raw, dtype="<f4").reshape(dims[2], dims[1], dims[0])
    return ScalarVolume(dims=dims, spacing=spacing, data=data.copy(), default_iso=iso)


def write_buffer(path: str | os.PathLike, array: np.ndarray) -> None:
    """Write a (C, H, W) float array to ``path`` in the ISRB1 format."""
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim != 3:
        raise FormatError(f"expected (channels, H, W) array, got shape {arr.shape}")
    c, h, w = arr.shape
    with open(path, "wb") as f:
        f.write(BUFFER_MAGIC)
        f.write(np.array([c, h, w], dtype="<u4").tobytes())
        f.write(np.ascontiguousarray(arr).tobytes())


def read_buffer(path: str | os.PathLike) -> np.ndarray:
    """Read an ISRB1 file into a (C, H, W) float32 array."""
    with open(path, "rb") as f:
        magic = f.read(len(BUFFER_MAGIC))
        if magic != BUFFER_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        head = f.read(12)
        if len(head) != 12:
            raise FormatError(f"{path}: truncated header")
        c, h, w = (int(v) for v in np.frombuffer(head, dtype="<u4"))
        count = c * h * w
        raw = f.read(4 * count)
        if len(raw) != 4 * count:
            raise FormatError(f"{path}: truncated payload ({len(raw)} of {4 * count} bytes)")
    return np.frombuffer(raw, dtype="<f4").reshape(c, h, w).copy()
