"""Binary checkpoint format.

Layout::

    b"LRUCKPT1"
    u64 little-endian  header length in bytes
    header             UTF-8 JSON object
    tensors            little-endian float64, row-major, in the order
                       listed by header["tensors"] (canonical order of
                       NetworkParams.named_tensors: embed, layer 0..L-1 with
                       names sorted, W_out, b_out)

Header keys: ``format_version``, ``cell_kind``, ``depth``, ``hidden``,
``vocab``, ``vocab_table``, ``metrics``, plus ``config`` (the full
NetworkConfig) and ``tensors`` (``[[name, [rows, cols]], ...]``).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .lattice import NetworkConfig, NetworkParams, zero_network

MAGIC = b"LRUCKPT1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: NetworkParams, cfg: NetworkConfig, vocab_table=None, metrics=None, bytes_mode=False):
    named = params.named_tensors()
    header = {
        "format_version": FORMAT_VERSION,
        "cell_kind": cfg.kind.value,
        "depth": cfg.depth,
        "hidden": cfg.hidden,
        "vocab": cfg.vocab,
        "vocab_table": None if vocab_table is None else list(vocab_table),
        "bytes_mode": bool(bytes_mode),
        "metrics": metrics or {},
        "config": cfg.to_dict(),
        "tensors": [[name, list(t.shape)] for name, t in named],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, t in named:
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())
    tmp.replace(path)
    return path


def load_checkpoint(path) -> tuple[NetworkParams, NetworkConfig, dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    cfg = NetworkConfig(**header["config"])
    params = zero_network(cfg)
    expected = [[name, list(t.shape)] for name, t in params.named_tensors()]
    if expected != header["tensors"]:
        raise CheckpointError(f"{path}: tensor table does not match the configuration")
    offset = 16 + n
    for name, shape in header["tensors"]:
        count = shape[0] * shape[1]
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
        params.set_tensor(name, arr.astype(np.float64))
        offset += 8 * count
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return params, cfg, header
