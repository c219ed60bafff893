"""Run configuration: flat-key serialization and a stable 64-bit hash."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .store import fnv1a64

DEFAULT_LEXICON_ASSET = "imagenet_classes.txt"


def canonical_config_text(config: dict) -> str:
    """Flat keys sorted, compact separators; identical dicts give identical
    bytes on every platform."""
    return json.dumps(config, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True)


def config_hash(config: dict) -> int:
    clean = {k: v for k, v in config.items() if k != "config_hash"}
    return fnv1a64(canonical_config_text(clean).encode("utf-8"))


def write_run_config(config: dict, out_dir) -> int:
    """Write runconfig.json beside run outputs, embedding its own hash."""
    h = config_hash(config)
    doc = dict(sorted(config.items()))
    doc["config_hash"] = str(h)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "runconfig.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return h


def read_run_config(run_dir) -> dict:
    return json.loads((Path(run_dir) / "runconfig.json").read_text(encoding="utf-8"))


def load_lexicon(path=None) -> list:
    """Class-name lexicon: one name per line, UTF-8. Defaults to the bundled
    ImageNet-1k label list."""
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
    else:
        text = (resources.files("mvadapt") / "assets" / DEFAULT_LEXICON_ASSET
                ).read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]
