"""PSEG1 image files.

Layout: magic ``b"PSEG1\n"``, a 4-byte little-endian unsigned header length,
a UTF-8 JSON header ``{"dims": [...], "dtype": "f32"|"i8", "kind":
"intensity"|"label"}``, then the row-major payload (little-endian float32 for
intensities, int8 in {-1, +1} for labels).
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolation

MAGIC = b"PSEG1\n"
_DTYPES = {"f32": np.dtype("<f4"), "i8": np.dtype("i1")}
_KIND_DTYPE = {"intensity": "f32", "label": "i8"}


def write_image(path, array, kind: str = "intensity") -> None:
    if kind not in _KIND_DTYPE:
        raise ContractViolation(f"kind must be one of {sorted(_KIND_DTYPE)}")
    arr = np.asarray(array)
    code = _KIND_DTYPE[kind]
    if kind == "label" and not np.all((arr == 1) | (arr == -1)):
        raise ContractViolation("label images must contain only -1/+1")
    header = json.dumps({"dims": list(arr.shape), "dtype": code, "kind": kind}).encode()
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def read_image(path):
    """Return ``(array, kind)``; intensities come back as float64."""
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC) or len(data) < len(MAGIC) + 4:
        raise ConfigError(f"{path}: not a PSEG1 file")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        header = json.loads(data[start : start + hlen])
        dims = tuple(int(s) for s in header["dims"])
        dtype = _DTYPES[header["dtype"]]
        kind = header["kind"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: bad header ({exc})") from exc
    if _KIND_DTYPE.get(kind) != header["dtype"]:
        raise ConfigError(f"{path}: kind {kind!r} does not match dtype {header['dtype']!r}")
    payload = data[start + hlen :]
    expected = dtype.itemsize * int(np.prod(dims))
    if len(payload) != expected:
        raise ConfigError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    if kind == "label":
        if not np.all((arr == 1) | (arr == -1)):
            raise ConfigError(f"{path}: label payload contains values other than -1/+1")
        return arr.astype(np.int8), kind
    return arr.astype(np.float64), kind
