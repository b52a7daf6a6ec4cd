"""Binary point-cloud stream (DSPD) reader and writer.

Layout, little-endian: ``b"DSPD"``, u32 version (1), then per frame an f64
timestamp, f32x3 position, f32x4 quaternion (w, x, y, z), u32 point count and
f32x3 per point in the sensor frame.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .geometry import Pose
from .pipeline import Frame

MAGIC = b"DSPD"
VERSION = 1
_HEADER = struct.Struct("<4sI")
_FRAME = struct.Struct("<d3f4fI")
MAX_POINTS = 2**31 - 1


class CorruptStream(ValueError):
    """Raised with the index of the frame that could not be decoded."""

    def __init__(self, message: str, frame_index: int | None = None):
        super().__init__(message)
        self.frame_index = frame_index


def write_header(fh: BinaryIO) -> None:
    fh.write(_HEADER.pack(MAGIC, VERSION))


def write_frame(fh: BinaryIO, frame: Frame) -> None:
    pts = np.ascontiguousarray(frame.points, dtype="<f4").reshape(-1, 3)
    if pts.shape[0] > MAX_POINTS:
        raise ValueError("too many points for one frame")
    fh.write(_FRAME.pack(float(frame.timestamp), *frame.pose.position.astype(np.float32),
                         *frame.pose.orientation.astype(np.float32), pts.shape[0]))
    fh.write(pts.tobytes())


def write_dataset(path: str | Path, frames) -> int:
    n = 0
    with open(path, "wb") as fh:
        write_header(fh)
        for frame in frames:
            write_frame(fh, frame)
            n += 1
    return n


def read_frames(path: str | Path) -> Iterator[Frame]:
    """Yield frames lazily; raises CorruptStream on a bad header or truncated frame."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise CorruptStream("file too short for header")
        magic, version = _HEADER.unpack(head)
        if magic != MAGIC:
            raise CorruptStream(f"bad magic {magic!r}")
        if version != VERSION:
            raise CorruptStream(f"unsupported version {version}")
        idx = 0
        while True:
            buf = fh.read(_FRAME.size)
            if not buf:
                return
            if len(buf) < _FRAME.size:
                raise CorruptStream(f"truncated header of frame {idx}", idx)
            vals = _FRAME.unpack(buf)
            ts, pos, quat, count = vals[0], vals[1:4], vals[4:8], vals[8]
            data = fh.read(12 * count)
            if len(data) < 12 * count:
                raise CorruptStream(f"truncated points of frame {idx}", idx)
            if not np.isfinite(ts) or not np.any(quat):
                raise CorruptStream(f"invalid pose or timestamp in frame {idx}", idx)
            pts = np.frombuffer(data, dtype="<f4").reshape(-1, 3).astype(np.float64)
            yield Frame(ts, Pose(np.array(pos, float), np.array(quat, float)), pts)
            idx += 1


def load_dataset(path: str | Path) -> list[Frame]:
    return list(read_frames(path))
