"""NNW1 checkpoint files.

Layout (little-endian)::

    b"NNW1"  u8 flags (bit 0: frozen)  u32 manifest length
    manifest: UTF-8 JSON, sorted keys, {"stacks": [...], "meta": {...}}
    u64 parameter count   f64 parameters of all stacks, in manifest order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, TruncationError
from .layers import layer_from_spec
from .stack import LayerStack

MAGIC = b"NNW1"
FROZEN = 0x01


def dumps(stacks: dict, meta=None, frozen=False) -> bytes:
    manifest = {
        "stacks": [{"name": name, "seed": s.seed, "n_params": s.n_params, "layers": s.spec()}
                   for name, s in stacks.items()],
        "meta": meta or {},
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    params = np.concatenate([s.params for s in stacks.values()]) if stacks else np.zeros(0)
    return b"".join([
        MAGIC, struct.pack("<BI", FROZEN if frozen else 0, len(blob)), blob,
        struct.pack("<Q", params.size), params.astype("<f8").tobytes(),
    ])


def loads(raw: bytes):
    """Returns ``(stacks, meta, frozen)``. Frozen checkpoints load frozen stacks."""
    if raw[:4] != MAGIC:
        raise FormatError("not an NNW1 checkpoint")
    try:
        flags, mlen = struct.unpack_from("<BI", raw, 4)
        off = 9
        manifest = json.loads(raw[off:off + mlen].decode())
        off += mlen
        (count,) = struct.unpack_from("<Q", raw, off)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt NNW1 manifest: {exc}") from None
    off += 8
    if len(raw) != off + 8 * count:
        raise TruncationError(f"NNW1 payload holds {len(raw) - off} bytes, expected {8 * count}")
    params = np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(np.float64)
    frozen = bool(flags & FROZEN)
    stacks = {}
    pos = 0
    for entry in manifest["stacks"]:
        n = entry["n_params"]
        stack = LayerStack([layer_from_spec(s) for s in entry["layers"]], entry["seed"],
                           params[pos:pos + n])
        if stack.n_params != n:
            raise FormatError(f"stack {entry['name']!r} declares {n} params, "
                              f"layers imply {stack.n_params}")
        pos += n
        if frozen:
            stack.freeze()
        stacks[entry["name"]] = stack
    if pos != count:
        raise FormatError("parameter payload does not match the manifest")
    return stacks, manifest["meta"], frozen


def save(path, stacks: dict, meta=None, frozen=False) -> None:
    Path(path).write_bytes(dumps(stacks, meta, frozen))


def load(path):
    return loads(Path(path).read_bytes())
