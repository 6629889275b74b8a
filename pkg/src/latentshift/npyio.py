"""Minimal NPY v1.0 codec for little-endian float32 arrays.

Writes always narrow to ``<f4`` in C order, with the header padded so that
magic + header is a multiple of 64 bytes. Reads are strict: anything that
is not a complete, well-formed v1.0 little-endian float array raises
FormatError instead of returning a partial result.
"""
from __future__ import annotations

import ast
import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"\x93NUMPY"
_ALIGN = 64
_READABLE = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def encode(array) -> bytes:
    arr = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    shape = tuple(int(s) for s in arr.shape)
    shape_repr = repr(shape) if len(shape) != 1 else f"({shape[0]},)"
    header = f"{{'descr': '<f4', 'fortran_order': False, 'shape': {shape_repr}, }}"
    # magic(6) + version(2) + header_len(2) + header + '\n'
    prefix = len(MAGIC) + 4
    pad = -(prefix + len(header) + 1) % _ALIGN
    header_bytes = (header + " " * pad + "\n").encode("latin1")
    return MAGIC + b"\x01\x00" + struct.pack("<H", len(header_bytes)) + header_bytes + arr.tobytes()


def decode(data: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(data) < 10 or data[:6] != MAGIC:
        raise FormatError(f"{source}: not an NPY file (bad magic)")
    major, minor = data[6], data[7]
    if (major, minor) != (1, 0):
        raise FormatError(f"{source}: unsupported NPY version {major}.{minor}")
    (hlen,) = struct.unpack("<H", data[8:10])
    start = 10 + hlen
    if len(data) < start:
        raise FormatError(f"{source}: truncated header")
    try:
        header = ast.literal_eval(data[10:start].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{source}: unparseable header") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"{source}: malformed header {header!r}")
    descr, fortran, shape = header["descr"], header["fortran_order"], header["shape"]
    if descr not in _READABLE:
        raise FormatError(f"{source}: unsupported dtype {descr!r}, need little-endian float")
    if fortran is not False:
        raise FormatError(f"{source}: fortran-ordered arrays are not supported")
    if not isinstance(shape, tuple) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise FormatError(f"{source}: bad shape {shape!r}")
    dtype = _READABLE[descr]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = data[start:]
    if len(payload) != expected:
        kind = "truncated" if len(payload) < expected else "trailing bytes in"
        raise FormatError(f"{source}: {kind} payload ({len(payload)} bytes, expected {expected})")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def write_npy(path, array) -> None:
    """Write atomically (temp file + rename) so readers never see a partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(encode(array))
    os.replace(tmp, path)


def read_npy(path, ndim: int | None = None) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise FormatError(f"{path}: unreadable ({exc})") from exc
    arr = decode(data, str(path))
    if ndim is not None and arr.ndim != ndim:
        raise FormatError(f"{path}: expected a {ndim}-D array, got shape {arr.shape}")
    return arr
