"""Trained-parameter serialization: versioned flat binary with a named-tensor
table, plus a JSON fallback for inspection."""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"MGKT"
VERSION = 1

_DTYPES = {"f8": np.float64, "f4": np.float32}


class ParamsIOError(ValueError):
    pass


def save_params(path, values, meta=None):
    """Layout: magic, u32 version, u32 meta length + UTF-8 JSON meta,
    u32 tensor count, then per tensor: name (u16 len + bytes), dtype code
    (2 bytes), u8 ndim, u64 dims, raw little-endian data."""
    meta_blob = json.dumps(meta or {}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(values)))
        for name in sorted(values):
            arr = np.ascontiguousarray(values[name])
            code = {np.dtype(np.float64): b"f8",
                    np.dtype(np.float32): b"f4"}.get(arr.dtype)
            if code is None:
                raise ParamsIOError(f"unsupported dtype {arr.dtype} for {name!r}")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(code)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def load_params(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ParamsIOError("bad magic bytes")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ParamsIOError(f"unsupported version {version}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        values = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            code = fh.read(2).decode("ascii")
            if code not in _DTYPES:
                raise ParamsIOError(f"unknown dtype code {code!r}")
            dtype = np.dtype(_DTYPES[code]).newbyteorder("<")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            n_items = int(np.prod(shape)) if shape else 1
            raw = fh.read(n_items * dtype.itemsize)
            values[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(
                _DTYPES[code])
    return values, meta


def save_params_json(path, values, meta=None):
    doc = {"meta": meta or {},
           "tensors": {k: {"shape": list(v.shape),
                           "dtype": str(v.dtype),
                           "data": np.asarray(v).ravel().tolist()}
                       for k, v in values.items()}}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_params_json(path):
    with open(path) as fh:
        doc = json.load(fh)
    values = {k: np.array(t["data"], dtype=t["dtype"]).reshape(t["shape"])
              for k, t in doc["tensors"].items()}
    return values, doc.get("meta", {})
