"""Binary image formats: 8-bit PGM ("P5") and the lossless OBF1 float matrix.

OBF1 layout (all little-endian)::

    b"OBF1" | height u32 | width u32 | unbounded u32 (0/1) | height*width float64, row-major
"""

from __future__ import annotations

import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import FormatError

OBF1_MAGIC = b"OBF1"
OBF1_HEADER = struct.Struct("<4sIII")

_WHITESPACE = b" \t\n\r\v\f"


@contextmanager
def atomic_write(path, mode="wb"):
    """Open a temp file next to ``path`` and rename it into place on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(data) and data[pos] in _WHITESPACE:
        pos += 1
    if pos < len(data) and data[pos : pos + 1] == b"#":
        raise FormatError("comments are not supported in PGM headers", pos)
    start = pos
    while pos < len(data) and data[pos] not in _WHITESPACE:
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of PGM header", start)
    return data[start:pos], pos


def _read_int(data: bytes, pos: int, what: str) -> tuple[int, int]:
    tok, end = _read_token(data, pos)
    if not tok.isdigit():
        raise FormatError(f"invalid {what} {tok!r} in PGM header", end - len(tok))
    return int(tok), end


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode binary PGM bytes into a float64 matrix scaled by 1/255."""
    if data[:2] != b"P5":
        raise FormatError(f"unsupported PGM magic {data[:2]!r}, expected b'P5'", 0)
    pos = 2
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise FormatError("missing whitespace after magic", pos)
    width, pos = _read_int(data, pos, "width")
    height, pos = _read_int(data, pos, "height")
    maxval, pos = _read_int(data, pos, "maxval")
    if width < 1 or height < 1:
        raise FormatError(f"invalid dimensions {width}x{height}", pos)
    if maxval != 255:
        raise FormatError(f"maxval must be 255, got {maxval}", pos)
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise FormatError("missing whitespace before raster", pos)
    pos += 1
    need = width * height
    if len(data) - pos < need:
        raise FormatError(
            f"truncated raster: need {need} bytes, found {len(data) - pos}", len(data)
        )
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    return raw.reshape(height, width).astype(np.float64) / 255.0


def load_pgm(path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())


def to_bytes_8bit(image: np.ndarray, rescale: bool | None = None) -> np.ndarray:
    """Quantize a float image to uint8.

    With ``rescale=True`` the image is min-max stretched onto [0, 255] (a
    constant image maps to zeros). With ``rescale=False`` values are taken as
    already lying in [0, 1] and are scaled by 255 and clipped. ``None`` picks
    ``False`` only when the image is exactly an 8-bit image divided by 255,
    which keeps ``save_pgm(load_pgm(p))`` byte-identical.
    """
    image = np.asarray(image, dtype=np.float64)
    if rescale is None:
        rescale = not _is_8bit_image(image)
    if rescale:
        lo, hi = float(image.min()), float(image.max())
        if hi > lo:
            scaled = (image - lo) / (hi - lo) * 255.0
        else:
            scaled = np.zeros_like(image)
    else:
        scaled = np.clip(image, 0.0, 1.0) * 255.0
    # np.rint rounds half to even
    return np.rint(scaled).astype(np.uint8)


def _is_8bit_image(image: np.ndarray) -> bool:
    if not np.all(np.isfinite(image)) or image.min() < 0.0 or image.max() > 1.0:
        return False
    scaled = image * 255.0
    return bool(np.all(np.abs(scaled - np.rint(scaled)) < 1e-6))


def encode_pgm(image: np.ndarray, rescale: bool | None = None) -> bytes:
    pixels = to_bytes_8bit(image, rescale)
    h, w = pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def save_pgm(image: np.ndarray, path, rescale: bool | None = None) -> None:
    """Write ``image`` as a binary PGM. See :func:`to_bytes_8bit` for ``rescale``."""
    payload = encode_pgm(image, rescale)
    with atomic_write(path) as fh:
        fh.write(payload)


def encode_obf1(matrix: np.ndarray, unbounded: bool = False) -> bytes:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {matrix.shape}")
    h, w = matrix.shape
    header = OBF1_HEADER.pack(OBF1_MAGIC, h, w, 1 if unbounded else 0)
    return header + np.ascontiguousarray(matrix, dtype="<f8").tobytes()


def decode_obf1(data: bytes) -> tuple[np.ndarray, bool]:
    if len(data) < OBF1_HEADER.size:
        raise FormatError("file shorter than the 16-byte OBF1 header", len(data))
    magic, h, w, flag = OBF1_HEADER.unpack_from(data, 0)
    if magic != OBF1_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {OBF1_MAGIC!r}", 0)
    if flag not in (0, 1):
        raise FormatError(f"unbounded flag must be 0 or 1, got {flag}", 12)
    payload = len(data) - OBF1_HEADER.size
    if payload != 8 * h * w:
        raise FormatError(
            f"payload holds {payload} bytes but header declares {h}x{w} float64",
            OBF1_HEADER.size,
        )
    values = np.frombuffer(data, dtype="<f8", offset=OBF1_HEADER.size)
    return values.reshape(h, w).astype(np.float64), bool(flag)


def write_obf1(matrix: np.ndarray, path, unbounded: bool = False) -> None:
    payload = encode_obf1(matrix, unbounded)
    with atomic_write(path) as fh:
        fh.write(payload)


def read_obf1(path) -> tuple[np.ndarray, bool]:
    """Return ``(matrix, unbounded)`` from an OBF1 file."""
    return decode_obf1(Path(path).read_bytes())
