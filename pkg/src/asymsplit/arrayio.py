"""Reading and writing ``.npy`` version 1.0 files of doubles.

Only little-endian ``<f8`` and ``<f4`` payloads in C order are accepted;
``<f4`` data is widened to float64 on load.  Header parsing uses numpy's own
format helpers, the payload is checked and decoded here.
"""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from numpy.lib import format as npyfmt

SUPPORTED = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


class ArrayFormatError(ValueError):
    pass


def _read_header(fh):
    magic = fh.read(len(npyfmt.MAGIC_PREFIX))
    if magic != npyfmt.MAGIC_PREFIX:
        raise ArrayFormatError("bad magic: not an .npy file")
    version = tuple(fh.read(2))
    if version != (1, 0):
        raise ArrayFormatError(f"unsupported .npy version {version}, expected (1, 0)")
    try:
        shape, fortran, dtype = npyfmt.read_array_header_1_0(fh)
    except ValueError as exc:
        raise ArrayFormatError(f"malformed header: {exc}") from None
    if fortran:
        raise ArrayFormatError("fortran_order True is not supported")
    descr = dtype.str
    if descr not in SUPPORTED:
        raise ArrayFormatError(f"unsupported dtype {descr!r}; expected '<f8' or '<f4'")
    return shape, SUPPORTED[descr]


def load_array(path):
    """Load a float64 array from ``path``."""
    with open(path, "rb") as fh:
        shape, dtype = _read_header(fh)
        payload = fh.read()
    count = int(np.prod(shape, dtype=np.int64))
    if len(payload) != count * dtype.itemsize:
        raise ArrayFormatError(
            f"payload length mismatch: header needs {count * dtype.itemsize} bytes, "
            f"file has {len(payload)}"
        )
    return np.frombuffer(payload, dtype=dtype).astype(np.float64).reshape(shape)


def save_array(path, arr):
    """Write ``arr`` as a version 1.0 ``<f8`` file."""
    a = np.ascontiguousarray(arr, dtype="<f8")
    buf = io.BytesIO()
    npyfmt.write_array_header_1_0(buf, {"descr": "<f8", "fortran_order": False, "shape": a.shape})
    Path(path).write_bytes(buf.getvalue() + a.tobytes())
