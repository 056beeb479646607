"""Binary checkpoint format.

Layout::

    b"GAMFQCKP"                  8-byte magic
    uint32 LE                    format version
    uint64 LE                    header length in bytes
    header                       UTF-8 JSON, sorted keys
    float64 LE arrays            concatenated in manifest order

The header carries ``scenario_hash``, ``hyperparameters``, ``manifest``
(list of ``{"name", "shape"}``) and a free-form ``meta`` record.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from gamfq.nncore.params import ParamStore

MAGIC = b"GAMFQCKP"
FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def encode_checkpoint(arrays: dict[str, np.ndarray], scenario_hash: str,
                      hyperparameters: dict, meta: dict | None = None) -> bytes:
    manifest = [{"name": n, "shape": list(a.shape)} for n, a in arrays.items()]
    header = {
        "format_version": FORMAT_VERSION,
        "scenario_hash": scenario_hash,
        "hyperparameters": hyperparameters,
        "manifest": manifest,
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(hbytes)), hbytes]
    parts += [np.ascontiguousarray(a, dtype=_LE_F64).tobytes() for a in arrays.values()]
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<IQ", blob, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = 8 + 12
    header = json.loads(blob[start:start + hlen].decode("utf-8"))
    if header.get("format_version") != version:
        raise CheckpointError("header/format version disagree")
    offset = start + hlen
    arrays: dict[str, np.ndarray] = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * n
        if end > len(blob):
            raise CheckpointError(f"truncated data for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(blob, dtype=_LE_F64, count=n, offset=offset).reshape(shape).astype(np.float64)
        offset = end
    if offset != len(blob):
        raise CheckpointError("trailing bytes after manifest data")
    return header, arrays


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], scenario_hash: str,
                    hyperparameters: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(encode_checkpoint(arrays, scenario_hash, hyperparameters, meta))
    return path


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode_checkpoint(Path(path).read_bytes())


def store_arrays(stores: dict[str, ParamStore], with_optimizer: bool = True) -> dict[str, np.ndarray]:
    """Flatten named stores into ``prefix/param`` arrays (plus Adam moments)."""
    out: dict[str, np.ndarray] = {}
    for prefix, store in stores.items():
        for name in store.names():
            out[f"{prefix}:{name}"] = store.params[name]
            if with_optimizer:
                out[f"{prefix}:{name}@m"] = store.m[name]
                out[f"{prefix}:{name}@v"] = store.v[name]
    return out


def restore_store(store: ParamStore, prefix: str, arrays: dict[str, np.ndarray]) -> None:
    for name in store.names():
        key = f"{prefix}:{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint lacks parameter {key}")
        store.set(name, arrays[key])
        if f"{key}@m" in arrays:
            store.m[name] = arrays[f"{key}@m"].copy()
            store.v[name] = arrays[f"{key}@v"].copy()
