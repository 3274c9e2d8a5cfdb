"""Single-file checkpoint format.

Layout (all integers little-endian):

    bytes 0..7    magic b"LXCKPT01"
    bytes 8..15   uint64, byte length of the JSON manifest
    manifest      UTF-8 JSON: {"version": 1,
                               "meta": {...},
                               "arrays": {name: {"offset": int,
                                                 "shape": [int, ...]}}}
    payload       the named arrays back to back as little-endian
                  64-bit floats; "offset" is in bytes from the start
                  of the payload.

"meta" carries JSON-serializable run state (step counters, RNG state).
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"LXCKPT01"


def save_checkpoint(path, arrays, meta=None):
    """Write a name->float-array dict plus a JSON-able meta dict."""
    entries = {}
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        shape = list(np.asarray(arr).shape)
        a = np.ascontiguousarray(arr, dtype="<f8")  # promotes 0-d to 1-d
        entries[name] = {"offset": offset, "shape": shape}
        blobs.append(a.tobytes())
        offset += a.nbytes
    manifest = json.dumps(
        {"version": 1, "meta": meta or {}, "arrays": entries},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Read back (arrays, meta) written by save_checkpoint."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a lixelkit checkpoint (magic {magic!r})")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        payload = fh.read()
    arrays = {}
    for name, entry in manifest["arrays"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        arrays[name] = arr.reshape(shape).astype(np.float64)
    return arrays, manifest.get("meta", {})
