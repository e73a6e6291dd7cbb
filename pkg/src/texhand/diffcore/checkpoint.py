"""Versioned container of named arrays.

Layout: an ASCII header, one line per entry, terminated by ``end``, followed
by the concatenated little-endian payloads::

    texhand-checkpoint 1
    meta {"config": ...}
    array <name> <dtype> <d0,d1,...> <offset> <nbytes>
    ...
    end
    <raw bytes>

Offsets are relative to the first byte after the ``end`` line.
"""
from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = "texhand-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    lines = [f"{MAGIC} {VERSION}", "meta " + json.dumps(meta or {}, sort_keys=True)]
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        if any(ch.isspace() for ch in name):
            raise CheckpointError(f"array name {name!r} contains whitespace")
        a = np.asarray(arr)
        le = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        shape = ",".join(str(n) for n in a.shape) or "-"
        lines.append(f"array {name} {le.dtype.str} {shape} {offset} {len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for raw in blobs:
            fh.write(raw)


def load_arrays(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    data = Path(path).read_bytes()
    pos = 0
    entries = []
    meta: dict = {}

    def next_line():
        nonlocal pos
        end = data.index(b"\n", pos)
        line = data[pos:end].decode("ascii")
        pos = end + 1
        return line

    try:
        head = next_line().split()
        if len(head) != 2 or head[0] != MAGIC:
            raise CheckpointError(f"{path}: not a texhand checkpoint")
        if int(head[1]) != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {head[1]}")
        while True:
            line = next_line()
            if line == "end":
                break
            if line.startswith("meta "):
                meta = json.loads(line[5:])
                continue
            kind, name, dtype, shape, off, nbytes = line.split()
            if kind != "array":
                raise CheckpointError(f"{path}: bad header line {line!r}")
            dims = () if shape == "-" else tuple(int(s) for s in shape.split(","))
            entries.append((name, np.dtype(dtype), dims, int(off), int(nbytes)))
    except (ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed header ({exc})") from exc

    body = data[pos:]
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, dt, dims, off, nbytes in entries:
        if off + nbytes > len(body):
            raise CheckpointError(f"{path}: payload for {name} truncated")
        arr = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=off)
        arrays[name] = arr.reshape(dims).astype(dt.newbyteorder("="), copy=True)
    return arrays, meta
