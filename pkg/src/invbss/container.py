"""Section-tagged binary container used for checkpoints.

Layout (little-endian)::

    b"IBSS"  u16 version=2  u32 n_sections
    repeat n_sections:
        4-byte tag  u64 payload_length  payload

Tags: ``META`` holds a UTF-8 JSON document, ``ARRY`` holds one named array
(u16 name length, name, u8 dtype code, u16 ndim, ndim*u64 shape, raw data).
"""
import json
import struct

import numpy as np

from .errors import SeriesFormatError

MAGIC = b"IBSS"
SECTION_VERSION = 2

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8"), 2: np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}


def _encode_array(name, arr):
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        arr = arr.astype("<f8")
    elif arr.dtype.kind in "iu" and arr.dtype != np.uint8:
        arr = arr.astype("<i8")
    elif arr.dtype.kind == "b":
        arr = arr.astype("u1")
    code = _CODES[arr.dtype]
    raw_name = name.encode("utf-8")
    head = struct.pack("<H", len(raw_name)) + raw_name
    head += struct.pack("<BH", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def _decode_array(payload):
    (nlen,) = struct.unpack_from("<H", payload, 0)
    off = 2
    name = payload[off:off + nlen].decode("utf-8")
    off += nlen
    code, ndim = struct.unpack_from("<BH", payload, off)
    off += 3
    shape = struct.unpack_from(f"<{ndim}Q", payload, off)
    off += 8 * ndim
    dtype = _DTYPES[code]
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(payload, dtype=dtype, count=count, offset=off).reshape(shape)
    return name, arr.copy()


def save_sections(path, arrays, meta=None):
    """Write named arrays plus an optional JSON-able ``meta`` dict."""
    sections = []
    if meta is not None:
        sections.append((b"META", json.dumps(meta, sort_keys=True).encode("utf-8")))
    for name in arrays:
        sections.append((b"ARRY", _encode_array(name, arrays[name])))
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HI", SECTION_VERSION, len(sections)))
        for tag, payload in sections:
            fh.write(tag + struct.pack("<Q", len(payload)))
            fh.write(payload)


def load_sections(path):
    """Return ``(arrays, meta)`` from a file written by :func:`save_sections`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise SeriesFormatError("bad magic bytes")
    version, n_sections = struct.unpack_from("<HI", data, 4)
    if version != SECTION_VERSION:
        raise SeriesFormatError(f"not a section container (version {version})")
    off = 10
    arrays, meta = {}, None
    for _ in range(n_sections):
        tag = data[off:off + 4]
        (length,) = struct.unpack_from("<Q", data, off + 4)
        off += 12
        payload = data[off:off + length]
        off += length
        if tag == b"META":
            meta = json.loads(payload.decode("utf-8"))
        elif tag == b"ARRY":
            name, arr = _decode_array(payload)
            arrays[name] = arr
        else:
            raise SeriesFormatError(f"unknown section tag {tag!r}")
    return arrays, meta
