"""
ghoststat Pattern Stacks
GIPS binary format: little-endian header (magic "GIPS", version u16, M u32,
T u32, dtype tag u8, one pad byte) followed by T*M float64 values, frame-major.
Reconstruction sidecars use the same layout with T = 1.
"""

import os
import struct
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ghoststat.core.errors import FormatError

logger = logging.getLogger("ghoststat.stacks")

MAGIC = b"GIPS"
VERSION = 1
DTYPE_F64 = 1
HEADER = struct.Struct("<4sHIIBx")
DTYPES = {DTYPE_F64: np.dtype("<f8")}


@dataclass(frozen=True)
class StackHeader:
    M: int
    T: int
    version: int = VERSION
    dtype_tag: int = DTYPE_F64

    @property
    def data_bytes(self) -> int:
        return self.M * self.T * DTYPES[self.dtype_tag].itemsize


def read_header(path: str) -> StackHeader:
    with open(path, "rb") as f:
        raw = f.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise FormatError("file shorter than the GIPS header", path)
    magic, version, M, T, tag = HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", path)
    if version != VERSION:
        raise FormatError(f"unsupported GIPS version {version}", path)
    if tag not in DTYPES:
        raise FormatError(f"unknown dtype tag {tag}", path)
    header = StackHeader(M=M, T=T, version=version, dtype_tag=tag)
    expected = HEADER.size + header.data_bytes
    actual = os.path.getsize(path)
    if actual != expected:
        raise FormatError(f"size {actual} bytes, header implies {expected}", path)
    return header


def write_stack(path: str, frames: np.ndarray) -> StackHeader:
    """Write a (T, M) array (1-D arrays are stored as T = 1)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 1:
        frames = frames[np.newaxis, :]
    if frames.ndim != 2:
        raise FormatError(f"expected a (T, M) array, got shape {frames.shape}", path)
    T, M = frames.shape
    header = StackHeader(M=M, T=T)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION, M, T, DTYPE_F64))
        f.write(np.ascontiguousarray(frames, dtype=DTYPES[DTYPE_F64]).tobytes())
    logger.debug("Wrote GIPS stack %s (M=%d, T=%d)", path, M, T)
    return header


def open_stack(path: str) -> Tuple[StackHeader, np.ndarray]:
    """Memory-map a stack read-only as a (T, M) array."""
    header = read_header(path)
    data = np.memmap(path, dtype=DTYPES[header.dtype_tag], mode="r",
                     offset=HEADER.size, shape=(header.T, header.M))
    return header, data


def read_vector(path: str, expected_m: Optional[int] = None) -> np.ndarray:
    """Load a T = 1 sidecar into memory."""
    header, data = open_stack(path)
    if header.T != 1:
        raise FormatError(f"expected a single-frame sidecar, found T={header.T}", path)
    if expected_m is not None and header.M != expected_m:
        raise FormatError(f"expected M={expected_m}, found M={header.M}", path)
    return np.array(data[0], dtype=np.float64)
