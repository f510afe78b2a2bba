"""Versioned binary checkpoint container shared by all trainable models.

Layout: magic bytes, format version, a JSON metadata block (model kind plus
arbitrary config), then named tensors as (name, shape, dtype tag, raw
little-endian data).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError

_MAGIC = b"PFCK"
_VERSION = 1

_DTYPE_TAGS = {0: "<f4", 1: "<i8", 2: "<f8"}
_TAG_FOR_KIND = {"f": {4: 0, 8: 2}, "i": {8: 1}}


def _dtype_tag(arr: np.ndarray) -> int:
    kind, size = arr.dtype.kind, arr.dtype.itemsize
    try:
        return _TAG_FOR_KIND[kind][size]
    except KeyError:
        raise DataError(f"unsupported tensor dtype {arr.dtype}") from None


def save_checkpoint(path, kind: str, meta: dict, tensors: dict) -> None:
    head = json.dumps({"kind": kind, "meta": meta}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name])
            tag = _dtype_tag(arr)
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(struct.pack("<B", tag))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).tobytes())


def load_checkpoint(path):
    """Returns (kind, meta, tensors)."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        try:
            head = json.loads(fh.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: corrupt metadata: {exc}") from exc
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            (tag,) = struct.unpack("<B", fh.read(1))
            if tag not in _DTYPE_TAGS:
                raise DataError(f"{path}: unknown dtype tag {tag}")
            dt = np.dtype(_DTYPE_TAGS[tag])
            n_items = int(np.prod(shape)) if shape else 1
            raw = fh.read(dt.itemsize * n_items)
            if len(raw) != dt.itemsize * n_items:
                raise DataError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(raw, dtype=dt).reshape(shape).copy()
    return head["kind"], head["meta"], tensors
