"""Export multi-view image directories as embedding datasets.

Runs a frozen vision backbone (global-token embedding per view) and,
optionally, an aligned image-text model over `object_id/view_*.png` trees
and writes the dataset directory format consumed by the retrieval library:
`index.json` plus raw little-endian float32 blobs (`dino.f32le`,
`clip_visual.f32le`, `text.f32le`) with 64-bit FNV-1a checksums. The
exporter only speaks that on-disk format; it has no code dependency on the
retrieval library.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64
    return h


class ExportError(Exception):
    """Raised for any condition that must abort before bytes are written."""


@dataclass
class ExportJob:
    images_root: str
    labels_file: str  # CSV: object_id,label[,split]
    vision_model: str  # backbone for the view-embedding blob
    out_dir: str
    text_model: str = ""  # aligned image-text model (optional)
    prompt: str = "a photo of {label}"
    batch_size: int = 16
    dataset_name: str = "export"
    device: str = "cpu"
    labels: dict = field(init=False, default_factory=dict)

    def __post_init__(self):
        for line in Path(self.labels_file).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cells = [c.strip() for c in line.split(",")]
            if len(cells) == 2:
                cells.append("target")
            if len(cells) != 3 or cells[2] not in ("train", "query", "target"):
                raise ExportError(f"bad labels row: {line!r}")
            self.labels[cells[0]] = (cells[1], cells[2])


def _collect_views(images_root) -> dict:
    root = Path(images_root)
    if not root.is_dir():
        raise ExportError(f"image root {root} is not a directory")
    objects = {}
    for obj_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        views = sorted(p for p in obj_dir.iterdir()
                       if p.suffix.lower() in IMAGE_SUFFIXES)
        if views:
            objects[obj_dir.name] = views
    if not objects:
        raise ExportError(f"no object directories with images under {root}")
    counts = {len(v) for v in objects.values()}
    if len(counts) != 1:
        detail = {k: len(v) for k, v in objects.items()}
        raise ExportError(f"objects disagree on view count: {detail}")
    return objects


def _load_image(path) -> Image.Image:
    try:
        return Image.open(path).convert("RGB")
    except (UnidentifiedImageError, OSError) as exc:
        raise ExportError(f"cannot decode image {path}: {exc}") from exc


def _as_tensor(feats):
    # transformers < 5 returns the projected tensor, >= 5 a pooled output
    if torch.is_tensor(feats):
        return feats
    return feats.pooler_output


def _embed_views(paths, model, processor, batch_size, device, use_projection):
    """Global-token embedding per image, batched, eval mode."""
    chunks = []
    for lo in range(0, len(paths), batch_size):
        images = [_load_image(p) for p in paths[lo:lo + batch_size]]
        inputs = processor(images=images, return_tensors="pt").to(device)
        with torch.no_grad():
            if use_projection:
                feats = _as_tensor(model.get_image_features(**inputs))
            else:
                feats = model(**inputs).last_hidden_state[:, 0]
        chunks.append(feats.cpu().to(torch.float32).numpy())
    return np.concatenate(chunks, axis=0)


def _embed_prompts(labels, model, tokenizer, prompt, device):
    texts = [prompt.format(label=name) for name in labels]
    inputs = tokenizer(texts, padding=True, return_tensors="pt").to(device)
    with torch.no_grad():
        feats = _as_tensor(model.get_text_features(**inputs))
    return feats.cpu().to(torch.float32).numpy()


def export(job: ExportJob) -> Path:
    """Run the encoders and write the dataset directory; returns its path."""
    from transformers import AutoImageProcessor, AutoModel, AutoTokenizer, CLIPModel

    objects = _collect_views(job.images_root)
    missing = sorted(set(objects) - set(job.labels))
    if missing:
        raise ExportError(f"labels file misses objects: {missing}")

    object_ids = sorted(objects)
    label_names = sorted({job.labels[o][0] for o in object_ids})
    views_per_object = len(next(iter(objects.values())))
    flat_paths = [p for o in object_ids for p in objects[o]]

    device = torch.device(job.device)
    vision = AutoModel.from_pretrained(job.vision_model).to(device).eval()
    vision_proc = AutoImageProcessor.from_pretrained(job.vision_model)
    dino = _embed_views(flat_paths, vision, vision_proc, job.batch_size,
                        device, use_projection=False)
    dino_dim = dino.shape[1]
    dino = dino.reshape(len(object_ids), views_per_object, dino_dim)

    clip_visual = None
    text_rows = None
    clip_dim = 1
    if job.text_model:
        clip = CLIPModel.from_pretrained(job.text_model).to(device).eval()
        clip_proc = AutoImageProcessor.from_pretrained(job.text_model)
        tokenizer = AutoTokenizer.from_pretrained(job.text_model)
        clip_visual = _embed_views(flat_paths, clip, clip_proc, job.batch_size,
                                   device, use_projection=True)
        clip_dim = clip_visual.shape[1]
        clip_visual = clip_visual.reshape(len(object_ids), views_per_object,
                                          clip_dim)
        text_rows = _embed_prompts(label_names, clip, tokenizer, job.prompt,
                                   device)

    split_labels = {"train": set(), "query": set(), "target": set()}
    entries = []
    for o in object_ids:
        name, split = job.labels[o]
        entries.append({"id": o, "label": label_names.index(name),
                        "split": split})
        split_labels[split].add(name)
    open_set = not (split_labels["train"]
                    & (split_labels["query"] | split_labels["target"]))

    blobs = {"dino": dino}
    if clip_visual is not None:
        blobs["clip_visual"] = clip_visual
        blobs["text"] = text_rows

    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blob_index = {}
    for name, arr in blobs.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        file_name = f"{name}.f32le"
        (out / file_name).write_bytes(raw)
        blob_index[name] = {"file": file_name, "checksum": str(fnv1a64(raw)),
                            "shape": list(arr.shape)}

    index = {
        "dataset_name": job.dataset_name,
        "num_objects": len(object_ids),
        "views_per_object": views_per_object,
        "dino_dim": dino_dim,
        "clip_dim": clip_dim,
        "label_names": label_names,
        "lexicon_names": [],
        "open_set_flag": open_set,
        "objects": entries,
        "blobs": blob_index,
    }
    (out / "index.json").write_text(json.dumps(index, indent=2) + "\n",
                                    encoding="utf-8")
    return out
