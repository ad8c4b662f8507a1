"""Checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"SEQJSPCK"
    version    uint32    1
    hlen       uint64    length of the header in bytes
    header     hlen      UTF-8 JSON (sorted keys)
    payload              arrays back to back, C order, little-endian

The header holds ``model_config``, free-form ``meta`` and an ``arrays`` list of
``{name, dtype, shape, offset, nbytes}`` with offsets relative to the payload.
Model parameters are stored as one flat vector ``theta`` (concatenated in
``model.parameters()`` order, names/shapes listed under ``param_layout``);
batch-norm statistics live under ``buffer/<state_dict key>``.  Writing is
byte-deterministic, so equal state gives equal file hashes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from .policy import ModelConfig, PolicyModel

__all__ = [
    "CheckpointError",
    "write_container",
    "read_container",
    "model_arrays",
    "load_model_arrays",
    "save_model",
    "load_model",
    "file_hash",
]

MAGIC = b"SEQJSPCK"
VERSION = 1
_LE = {"f4": "<f4", "f8": "<f8", "i8": "<i8"}


class CheckpointError(ValueError):
    pass


def _le_dtype(arr: np.ndarray) -> str:
    kind = arr.dtype.kind + str(arr.dtype.itemsize)
    if kind not in _LE:
        raise CheckpointError(f"unsupported dtype {arr.dtype}")
    return _LE[kind]


def write_container(path, arrays: dict[str, np.ndarray], header: dict) -> None:
    entries, blobs, offset = [], [], 0
    for name in arrays:
        arr = np.asarray(arrays[name], order="C")
        dt = _le_dtype(arr)
        blob = arr.astype(dt, copy=False).tobytes()
        entries.append({"name": name, "dtype": dt, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    head = json.dumps({**header, "arrays": entries}, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(head)))
        f.write(head)
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + 12
    header = json.loads(data[start : start + hlen].decode("utf-8"))
    payload = start + hlen
    arrays = {}
    for e in header.pop("arrays"):
        lo = payload + e["offset"]
        buf = data[lo : lo + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated array {e['name']}")
        arrays[e["name"]] = np.frombuffer(buf, dtype=e["dtype"]).reshape(tuple(e["shape"])).copy()
    return header, arrays


def model_arrays(model: PolicyModel, prefix: str = "") -> tuple[dict[str, np.ndarray], list]:
    theta = torch.nn.utils.parameters_to_vector(model.parameters()).detach().cpu().numpy()
    arrays = {prefix + "theta": theta}
    for name, buf in model.named_buffers():
        arrays[f"{prefix}buffer/{name}"] = buf.detach().cpu().numpy()
    layout = [[name, list(p.shape)] for name, p in model.named_parameters()]
    return arrays, layout


def load_model_arrays(model: PolicyModel, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    theta = torch.from_numpy(arrays[prefix + "theta"])
    expected = sum(p.numel() for p in model.parameters())
    if theta.numel() != expected:
        raise CheckpointError(f"parameter count mismatch: file {theta.numel()}, model {expected}")
    with torch.no_grad():
        torch.nn.utils.vector_to_parameters(theta.to(model.dtype), model.parameters())
        for name, buf in model.named_buffers():
            key = f"{prefix}buffer/{name}"
            if key not in arrays:
                raise CheckpointError(f"missing buffer {key}")
            buf.copy_(torch.from_numpy(arrays[key]))


def save_model(model: PolicyModel, path, meta: dict | None = None, extra: dict[str, np.ndarray] | None = None) -> None:
    arrays, layout = model_arrays(model)
    if extra:
        arrays.update(extra)
    write_container(path, arrays, {"model_config": model.config.to_dict(), "param_layout": layout, "meta": meta or {}})


def load_model(path) -> tuple[PolicyModel, dict, dict[str, np.ndarray]]:
    """Returns ``(model in eval mode, meta, all arrays)``."""
    header, arrays = read_container(path)
    model = PolicyModel(ModelConfig(**header["model_config"]))
    load_model_arrays(model, arrays)
    model.eval()
    return model, header.get("meta", {}), arrays


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
