"""Versioned ``.gstc`` checkpoint container.

    offset  size  field
    0       4     magic b"GSTC"
    4       2     version (uint16)
    6       4     header length H (uint32)
    10      4     CRC-32 of bytes [14, end)
    14      H     UTF-8 JSON header: metadata plus an array table
    14+H    ...   array payloads, little-endian, in table order

Every array entry in the table records ``name``, ``dtype``, ``shape``,
``offset`` (relative to the payload start) and ``nbytes``.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Any

import numpy as np

from .grouping import CompressedTensor, build_pattern
from .netcore import Adam, CompressedLinear, Mlp

MAGIC = b"GSTC"
VERSION = 1
PREFIX = struct.Struct("<4sHII")


class CheckpointError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def write_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    table, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        table.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": table}, sort_keys=True, separators=(",", ":")).encode()
    body = header + b"".join(chunks)
    data = PREFIX.pack(MAGIC, VERSION, len(header), zlib.crc32(body)) + body
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < PREFIX.size:
        raise CheckpointError(f"truncated prefix ({len(data)} bytes)", len(data))
    magic, version, hlen, crc = PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", 4)
    start = PREFIX.size
    if len(data) < start + hlen:
        raise CheckpointError("truncated header", len(data))
    try:
        header = json.loads(data[start:start + hlen])
    except ValueError as exc:
        raise CheckpointError(f"unreadable header: {exc}", start) from exc
    base = start + hlen
    arrays = {}
    for entry in header["arrays"]:
        lo = base + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(data):
            raise CheckpointError(f"array {entry['name']!r} truncated", len(data))
        arr = np.frombuffer(data[lo:hi], dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    end = base + sum(e["nbytes"] for e in header["arrays"])
    if len(data) != end:
        raise CheckpointError(f"{len(data) - end} trailing bytes", end)
    if zlib.crc32(data[start:]) != crc:
        raise CheckpointError("checksum mismatch", 10)
    return header["meta"], arrays


def mlp_state(mlp: Mlp, prefix: str) -> tuple[dict, dict[str, np.ndarray]]:
    layers, arrays = [], {}
    for i, layer in enumerate(mlp.layers):
        p = layer.weight.pattern
        layers.append({"rows": p.rows, "cols": p.cols, "kind": p.kind, "block": p.block, "compressed": layer.compressed})
        arrays[f"{prefix}.{i}.values"] = layer.weight.values
        arrays[f"{prefix}.{i}.mask"] = layer.weight.mask.astype(np.uint8)
        arrays[f"{prefix}.{i}.bias"] = layer.bias
    return {"layers": layers, "activations": mlp.activations}, arrays


def mlp_from_state(meta: dict, arrays: dict, prefix: str) -> Mlp:
    layers = []
    for i, d in enumerate(meta["layers"]):
        p = build_pattern(d["kind"], d["rows"], d["cols"], d["block"])
        ct = CompressedTensor(p, arrays[f"{prefix}.{i}.values"].copy(), arrays[f"{prefix}.{i}.mask"].astype(bool))
        layers.append(CompressedLinear(ct, arrays[f"{prefix}.{i}.bias"].copy(), d["compressed"]))
    return Mlp(layers, meta["activations"])


def adam_state(opt: Adam, prefix: str) -> tuple[dict, dict[str, np.ndarray]]:
    arrays = {}
    for name in ("m_w", "v_w", "m_b", "v_b"):
        for i, a in enumerate(getattr(opt, name)):
            arrays[f"{prefix}.{name}.{i}"] = a
    return {"t": opt.t, "layers": len(opt.m_w), **opt.hyper()}, arrays


def adam_from_state(meta: dict, arrays: dict, prefix: str) -> Adam:
    opt = object.__new__(Adam)
    opt.lr, opt.beta1, opt.beta2, opt.eps = meta["lr"], meta["beta1"], meta["beta2"], meta["eps"]
    opt.t = meta["t"]
    for name in ("m_w", "v_w", "m_b", "v_b"):
        setattr(opt, name, [arrays[f"{prefix}.{name}.{i}"].copy() for i in range(meta["layers"])])
    return opt


def save_checkpoint(
    path,
    nets: dict[str, Mlp],
    optims: dict[str, Adam] | None = None,
    scheduler: dict | None = None,
    extra: dict | None = None,
    extra_arrays: dict[str, np.ndarray] | None = None,
) -> None:
    meta: dict[str, Any] = {"format": "gstc", "nets": {}, "optims": {}, "scheduler": scheduler, "extra": extra or {}}
    arrays: dict[str, np.ndarray] = {}
    for name, net in nets.items():
        meta["nets"][name], a = mlp_state(net, f"net.{name}")
        arrays.update(a)
    for name, opt in (optims or {}).items():
        meta["optims"][name], a = adam_state(opt, f"opt.{name}")
        arrays.update(a)
    for name, arr in (extra_arrays or {}).items():
        arrays[f"extra.{name}"] = np.asarray(arr)
    write_container(path, meta, arrays)


def load_checkpoint(path) -> dict:
    """Returns ``{"nets", "optims", "scheduler", "extra", "extra_arrays"}``."""
    meta, arrays = read_container(path)
    if meta.get("format") != "gstc":
        raise CheckpointError("not a training checkpoint", PREFIX.size)
    return {
        "nets": {n: mlp_from_state(m, arrays, f"net.{n}") for n, m in meta["nets"].items()},
        "optims": {n: adam_from_state(m, arrays, f"opt.{n}") for n, m in meta["optims"].items()},
        "scheduler": meta["scheduler"],
        "extra": meta["extra"],
        "extra_arrays": {k[len("extra."):]: v for k, v in arrays.items() if k.startswith("extra.")},
    }
