"""Deterministic parameter persistence.

Parameters are stored as a JSON index (`params.json`) plus one raw blob of
little-endian float64 values (`params.f64le`) concatenated in index order.
Identical parameters always serialize to identical bytes (zip containers
would embed timestamps).
"""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .adapter import AdapterConfig, init_adapter_params
from .store import fnv1a64
from .synthesis import init_synth_params
from .training import FitResult, init_mlp_head_params

PARAMS_JSON = "params.json"
PARAMS_BLOB = "params.f64le"


def _named_arrays(result: FitResult):
    out = [(p.name, p.value) for p in result.head_params.param_blocks()]
    if result.head == "chunk":
        for i, blk in enumerate(result.head_params.blocks):
            out.append((f"block{i}.running_mean", blk.running_mean))
            out.append((f"block{i}.running_var", blk.running_var))
    if result.synth_params is not None:
        out.extend((p.name, p.value) for p in result.synth_params.param_blocks())
    return out


def save_params(result: FitResult, adapter_config: AdapterConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = _named_arrays(result)
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    entries = []
    offset = 0
    for name, arr in arrays:
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    doc = {
        "head": result.head,
        "adapter_config": asdict(adapter_config),
        "has_synth": result.synth_params is not None,
        "clip_dim": (0 if result.synth_params is None
                     else result.synth_params.lin1_w.value.shape[1]),
        "entries": entries,
        "blob_checksum": str(fnv1a64(blob)),
    }
    (out / PARAMS_BLOB).write_bytes(blob)
    (out / PARAMS_JSON).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_params(in_dir):
    """Rebuild (head, adapter_config, head_params, synth_params) from disk."""
    root = Path(in_dir)
    doc = json.loads((root / PARAMS_JSON).read_text(encoding="utf-8"))
    blob = (root / PARAMS_BLOB).read_bytes()
    if fnv1a64(blob) != int(doc["blob_checksum"]):
        raise ValueError(f"corrupt parameter blob under {root}")
    flat = np.frombuffer(blob, dtype="<f8")
    values = {}
    for e in doc["entries"]:
        size = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = flat[e["offset"]:e["offset"] + size].reshape(e["shape"]).copy()
        values[e["name"]] = arr

    cfg = AdapterConfig(**doc["adapter_config"])
    rng = np.random.default_rng(0)  # placeholder values, overwritten below
    if doc["head"] == "chunk":
        head_params = init_adapter_params(cfg, rng)
        for i, blk in enumerate(head_params.blocks):
            blk.running_mean[...] = values[f"block{i}.running_mean"]
            blk.running_var[...] = values[f"block{i}.running_var"]
    else:
        head_params = init_mlp_head_params(cfg.dino_dim, rng)
    for p in head_params.param_blocks():
        p.value[...] = values[p.name]

    synth_params = None
    if doc["has_synth"]:
        hidden = values["synth.lin1_w"].shape[0]
        synth_params = init_synth_params(int(doc["clip_dim"]), cfg.dino_dim, rng,
                                         hidden_dim=hidden)
        for p in synth_params.param_blocks():
            p.value[...] = values[p.name]
    return doc["head"], cfg, head_params, synth_params


def params_bytes_equal(dir_a, dir_b) -> bool:
    a, b = Path(dir_a), Path(dir_b)
    return ((a / PARAMS_JSON).read_bytes() == (b / PARAMS_JSON).read_bytes()
            and (a / PARAMS_BLOB).read_bytes() == (b / PARAMS_BLOB).read_bytes())
