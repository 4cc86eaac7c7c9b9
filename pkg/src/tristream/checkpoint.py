"""Single-file binary checkpoints.

Layout: 8-byte magic ``TRISTRM1``, a little-endian uint64 header length,
a JSON header (config snapshot, epoch, RNG states, tensor index), then the
raw tensor payload. Tensors are stored by name with dtype/shape/offset in
the index, so a load rebuilds the model bit-identically.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import RunConfig, config_from_dict, config_to_dict
from .errors import CheckpointError
from .model import ThreeStreamNet

MAGIC = b"TRISTRM1"


def _collect_tensors(model: ThreeStreamNet, optimizer=None) -> dict[str, np.ndarray]:
    blocks: dict[str, np.ndarray] = {}
    for name, p in model.named_params():
        blocks[f"param/{name}"] = p.data
    for name, state in model.named_stats():
        blocks[f"bn/{name}.mean"] = state.mean
        blocks[f"bn/{name}.var"] = state.var
    if optimizer is not None:
        for name, buf in optimizer.named_buffers():
            blocks[f"opt/{name}"] = buf
    return blocks


def save_checkpoint(
    path,
    model: ThreeStreamNet,
    config: RunConfig,
    epoch: int,
    optimizer=None,
    rng_states: dict | None = None,
) -> None:
    blocks = _collect_tensors(model, optimizer)
    index = []
    offset = 0
    payload = []
    for name, arr in blocks.items():
        raw = np.ascontiguousarray(arr).tobytes()
        index.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape), "offset": offset})
        payload.append(raw)
        offset += len(raw)
    header = {
        "config": config_to_dict(config),
        "epoch": epoch,
        "rng_states": rng_states or {},
        "tensors": index,
    }
    hbytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(hbytes).to_bytes(8, "little"))
        fh.write(hbytes)
        for raw in payload:
            fh.write(raw)


def load_checkpoint(path) -> dict:
    """Read a checkpoint into (config, model, epoch, rng_states, opt_buffers)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    hlen = int.from_bytes(blob[8:16], "little")
    try:
        header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    body = blob[16 + hlen :]

    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        dt = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dt.itemsize * int(np.prod(shape)) if shape else dt.itemsize
        raw = body[entry["offset"] : entry["offset"] + nbytes]
        tensors[entry["name"]] = np.frombuffer(raw, dtype=dt).reshape(shape).copy()

    config = config_from_dict(header["config"])
    model = ThreeStreamNet(config)
    param_names = set()
    for name, p in model.named_params():
        key = f"param/{name}"
        if key not in tensors:
            raise CheckpointError(f"{path}: missing tensor {key}")
        if tensors[key].shape != p.data.shape:
            raise CheckpointError(f"{path}: shape mismatch for {key}")
        p.data = tensors[key].astype(p.data.dtype)
        param_names.add(key)
    for name, state in model.named_stats():
        state.mean = tensors[f"bn/{name}.mean"].copy()
        state.var = tensors[f"bn/{name}.var"].copy()

    opt_buffers = {
        name[len("opt/") :]: arr for name, arr in tensors.items() if name.startswith("opt/")
    }
    return {
        "config": config,
        "model": model,
        "epoch": int(header["epoch"]),
        "rng_states": header.get("rng_states", {}),
        "opt_buffers": opt_buffers,
    }
