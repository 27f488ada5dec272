"""Minimal NPY v1.0 reader/writer for 2-D float matrices."""
from __future__ import annotations

import ast
import os
import struct

import numpy as np

__all__ = [
    "NpyFormatError",
    "BadMagicError",
    "UnsupportedDtypeError",
    "FortranOrderError",
    "ShapeError",
    "read_npy",
    "write_npy",
]

MAGIC = b"\x93NUMPY"
_DTYPES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


class NpyFormatError(ValueError):
    pass


class BadMagicError(NpyFormatError):
    pass


class UnsupportedDtypeError(NpyFormatError):
    pass


class FortranOrderError(NpyFormatError):
    pass


class ShapeError(NpyFormatError):
    pass


def _parse_header(raw: bytes) -> dict:
    if raw[:6] != MAGIC:
        raise BadMagicError(f"bad magic bytes {raw[:6]!r}")
    if len(raw) < 10:
        raise NpyFormatError("truncated header")
    major, minor = raw[6], raw[7]
    if (major, minor) != (1, 0):
        raise NpyFormatError(f"unsupported NPY version {major}.{minor}")
    (hlen,) = struct.unpack("<H", raw[8:10])
    text = raw[10:10 + hlen]
    if len(text) != hlen:
        raise NpyFormatError("truncated header")
    try:
        header = ast.literal_eval(text.decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise NpyFormatError(f"malformed header dict: {exc}") from None
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise NpyFormatError(f"header must have exactly descr/fortran_order/shape, got {header!r}")
    header["offset"] = 10 + hlen
    return header


def read_npy(path) -> np.ndarray:
    """Read a 2-D C-order ``<f8``/``<f4`` NPY v1.0 file as a float64 matrix."""
    with open(path, "rb") as fh:
        raw = fh.read()
    header = _parse_header(raw)
    descr = header["descr"]
    if descr not in _DTYPES:
        raise UnsupportedDtypeError(f"unsupported dtype {descr!r}; expected '<f8' or '<f4'")
    if header["fortran_order"]:
        raise FortranOrderError("fortran_order=True is not supported")
    shape = header["shape"]
    if not isinstance(shape, tuple) or len(shape) != 2:
        raise ShapeError(f"expected a 2-D array, got shape {shape!r}")
    rows, cols = shape
    dtype = _DTYPES[descr]
    count = rows * cols
    payload = raw[header["offset"]:]
    if len(payload) != count * dtype.itemsize:
        raise NpyFormatError(
            f"payload has {len(payload)} bytes, expected {count * dtype.itemsize} for shape {shape}"
        )
    data = np.frombuffer(payload, dtype=dtype, count=count).astype(np.float64)
    m = data.reshape(rows, cols)
    if not np.all(np.isfinite(m)):
        raise NpyFormatError("matrix contains non-finite entries")
    return m


def _header_bytes(shape) -> bytes:
    text = "{'descr': '<f8', 'fortran_order': False, 'shape': (%d, %d), }" % shape
    # pad so that magic + len + header + newline is a multiple of 64
    total = 10 + len(text) + 1
    text += " " * (-total % 64) + "\n"
    return MAGIC + b"\x01\x00" + struct.pack("<H", len(text)) + text.encode("latin1")


def write_npy(path, m) -> None:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {a.shape}")
    payload = np.ascontiguousarray(a, dtype="<f8").tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_header_bytes(a.shape))
        fh.write(payload)
    os.replace(tmp, path)
