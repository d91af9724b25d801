"""Single-file checkpoint container: magic "D2AE", version, JSON metadata,
then a raw little-endian float32 tensor blob. Round trips are bit-exact.

Layout:
    bytes 0..3   magic b"D2AE"
    bytes 4..7   format version (u32 LE)
    bytes 8..11  header length H (u32 LE)
    bytes 12..12+H  UTF-8 JSON header
    remainder    tensor data, concatenated in header table order
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .analytics import Probe
from .autodiff import Group, Parameter
from .model import D2AEModel, ModelConfig

MAGIC = b"D2AE"
VERSION = 1


class CheckpointError(Exception):
    pass


def save(model: D2AEModel, probes: dict | None, path,
         meta: dict | None = None) -> None:
    """Write model parameters, running sigmas, and probes to one file."""
    entries = []
    blobs = []

    def put(name, tag, arr):
        arr = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "group": tag, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())

    for name, p in model.params.items():
        put(name, p.group.value, p.data)
    put("sigma_t", "STAT", model.sigma_t)
    put("sigma_p", "STAT", model.sigma_p)

    probe_meta = []
    for key, probe in (probes or {}).items():
        slot = f"probe.{probe.attribute}.{probe.source}"
        probe_meta.append({
            "attribute": probe.attribute, "source": probe.source,
            "bias": probe.bias, "accuracy": probe.accuracy,
            "epochs": probe.epochs, "l2": probe.l2, "tensor": slot,
        })
        put(slot, "PROBE", probe.w)

    header = {
        "model_config": model.config.to_dict(),
        "probes": probe_meta,
        "tensors": entries,
        "meta": meta or {},
    }
    hbytes = json.dumps(header).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load(path) -> tuple[D2AEModel, dict, dict]:
    """Returns (model, probes, meta). Probes may be empty."""
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"no such checkpoint: {p}")
    raw = p.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{p}: bad magic {raw[:4]!r}")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointError(f"{p}: unsupported format version {version}")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{p}: corrupt header: {exc}")

    config = ModelConfig.from_dict(header["model_config"])
    tensors = {}
    offset = 12 + hlen
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        chunk = raw[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(
                f"{p}: tensor {entry['name']!r} truncated "
                f"(want {nbytes} bytes, have {len(chunk)})")
        tensors[entry["name"]] = (
            np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(config.np_dtype),
            entry["group"],
        )
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{p}: {len(raw) - offset} trailing bytes")

    model = D2AEModel(config, seed=0)
    for name, param in model.params.items():
        if name not in tensors:
            raise CheckpointError(f"{p}: missing tensor {name!r}")
        arr, tag = tensors[name]
        if tag != param.group.value:
            raise CheckpointError(f"{p}: tensor {name!r} group {tag!r} != "
                                  f"{param.group.value!r}")
        if arr.shape != param.data.shape:
            raise CheckpointError(f"{p}: tensor {name!r} shape {arr.shape} != "
                                  f"{param.data.shape}")
        param.data = arr.copy()
    model.sigma_t = tensors["sigma_t"][0].copy()
    model.sigma_p = tensors["sigma_p"][0].copy()

    probes = {}
    for pm in header.get("probes", []):
        arr, _ = tensors[pm["tensor"]]
        probes[pm["attribute"]] = Probe(
            attribute=pm["attribute"], source=pm["source"],
            w=arr.astype(np.float64), bias=pm["bias"], accuracy=pm["accuracy"],
            epochs=pm["epochs"], l2=pm["l2"])
    return model, probes, header.get("meta", {})
