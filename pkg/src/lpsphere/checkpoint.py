"""Binary checkpoint container.

Layout (all integers little-endian):

    8 bytes   magic b"LPSPHCK\\0"
    4 bytes   format version (uint32)
    8 bytes   header length H (uint64)
    H bytes   UTF-8 JSON header, keys sorted, with "meta" (free-form JSON)
              and "arrays": [{name, dtype, shape, offset, nbytes}, ...]
    ...       raw little-endian array blobs, in header order, C-contiguous

Arrays are written in sorted name order and the header is serialized
canonically, so save -> load -> save reproduces the file byte for byte.
"""

import json
import struct

import numpy as np

from lpsphere.errors import DataFormatError

MAGIC = b"LPSPHCK\0"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DTYPES = {"f8": "<f8", "i8": "<i8", "b1": "|b1"}


def _encode(arr):
    arr = np.asarray(arr)
    if arr.dtype == np.bool_:
        key = "b1"
    elif np.issubdtype(arr.dtype, np.integer):
        key = "i8"
    elif np.issubdtype(arr.dtype, np.floating):
        key = "f8"
    else:
        raise TypeError(f"unsupported checkpoint dtype {arr.dtype}")
    return key, np.ascontiguousarray(arr, dtype=_DTYPES[key])


def save_checkpoint(path, arrays, meta):
    """Write named arrays plus a JSON-serializable `meta` dict."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        key, arr = _encode(arrays[name])
        raw = arr.tobytes()
        entries.append(
            {"name": name, "dtype": key, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"arrays": entries, "meta": meta}, sort_keys=True, separators=(",", ":"), allow_nan=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path):
    """Returns (arrays, meta); raises DataFormatError on a malformed file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _PREFIX.size:
        raise DataFormatError(f"{path}: truncated checkpoint at byte offset {len(data)}")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint (bad magic at byte offset 0)")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size + hlen
    if len(data) < start:
        raise DataFormatError(f"{path}: truncated header at byte offset {len(data)}")
    try:
        header = json.loads(data[_PREFIX.size : start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: corrupt header: {exc}") from None
    arrays = {}
    for e in header["arrays"]:
        lo = start + e["offset"]
        hi = lo + e["nbytes"]
        if hi > len(data):
            raise DataFormatError(f"{path}: array {e['name']!r} truncated at byte offset {len(data)}")
        arr = np.frombuffer(data[lo:hi], dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        arrays[e["name"]] = arr.copy()
    return arrays, header["meta"]
