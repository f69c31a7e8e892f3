"""
ghoststat PGM I/O
Plain (P2) and binary (P5) graymaps with maxval 255, mapped linearly to [0, 1].
"""

import logging
from typing import List, Optional, Tuple

import numpy as np

from ghoststat.core.errors import FormatError
from ghoststat.core.imaging import GrayImage

logger = logging.getLogger("ghoststat.pgm")

MAXVAL = 255


def _header_tokens(data: bytes, path: str) -> Tuple[List[bytes], int]:
    """Read magic, width, height, maxval; return them with the raster offset."""
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise FormatError("truncated header", path)
        c = data[pos:pos + 1]
        if c == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif c.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
                pos += 1
            tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from a binary raster
    return tokens, pos + 1


def read_pgm(path: str) -> GrayImage:
    """Load a P2/P5 graymap; values become v / 255."""
    with open(path, "rb") as f:
        data = f.read()

    tokens, offset = _header_tokens(data, path)
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"unsupported magic {magic!r} (expected P2 or P5)", path)
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as e:
        raise FormatError(f"bad header: {e}", path) from e
    if maxval != MAXVAL:
        raise FormatError(f"maxval {maxval} not supported (expected {MAXVAL})", path)
    count = width * height

    if magic == b"P5":
        if len(data) < offset + count:
            raise FormatError(f"raster truncated: need {count} bytes", path)
        raster = np.frombuffer(data, dtype=np.uint8, count=count, offset=offset)
    else:
        body = _strip_comments(data[offset - 1:])
        try:
            raster = np.array([int(t) for t in body.split()], dtype=np.int64)
        except ValueError as e:
            raise FormatError(f"bad raster sample: {e}", path) from e
        if raster.size < count:
            raise FormatError(f"raster truncated: need {count} samples, found {raster.size}", path)
        raster = raster[:count]
        if raster.min() < 0 or raster.max() > MAXVAL:
            raise FormatError("sample outside 0..255", path)

    logger.debug("Read %s: %dx%d (%s)", path, width, height, magic.decode())
    return GrayImage(width, height, raster.astype(np.float64) / MAXVAL)


def _strip_comments(body: bytes) -> bytes:
    return b"\n".join(line.split(b"#")[0] for line in body.splitlines())


def quantize(values: np.ndarray) -> np.ndarray:
    """[0, 1] -> 0..255 by rounding."""
    return np.clip(np.rint(np.asarray(values) * MAXVAL), 0, MAXVAL).astype(np.uint8)


def write_pgm(path: str, image: GrayImage, binary: bool = True, comments: Optional[List[str]] = None) -> None:
    """Write an image quantized to 8 bits."""
    raster = quantize(image.values)
    lines = [b"P5" if binary else b"P2"]
    for comment in comments or []:
        lines.append(f"# {comment}".encode("ascii", "replace"))
    lines.append(f"{image.width} {image.height}".encode("ascii"))
    lines.append(str(MAXVAL).encode("ascii"))
    header = b"\n".join(lines) + b"\n"

    with open(path, "wb") as f:
        f.write(header)
        if binary:
            f.write(raster.tobytes())
        else:
            rows = raster.reshape(image.height, image.width)
            f.write(b"\n".join(b" ".join(str(v).encode() for v in row) for row in rows) + b"\n")


def write_normalized_pgm(path: str, values: np.ndarray, width: int, height: int, label: str = "") -> Tuple[float, float]:
    """Min-max normalize a real per-pixel map into a viewable PGM; returns (min, max)."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    scaled = (values - lo) / span if span > 0 else np.zeros_like(values)
    comments = [f"min-max normalized: min={lo!r} max={hi!r}"]
    if label:
        comments.insert(0, label)
    write_pgm(path, GrayImage(width, height, scaled), binary=True, comments=comments)
    return lo, hi
