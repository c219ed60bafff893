"""On-disk dataset format for multi-view embedding collections.

A dataset directory holds `index.json` plus raw binary blobs:

  index.json        manifest (names, shapes, splits, checksums)
  dino.f32le        N x M x d   view embeddings, little-endian float32, row-major
  clip_visual.f32le N x M x d_c auxiliary visual embeddings (optional)
  text.f32le        (labels + lexicon) x d_c text embeddings (optional)

Blobs carry no header; shapes live in the index. Files are written
deterministically: identical in-memory datasets produce identical bytes.
On-disk floats are 32-bit; in-memory arrays are float64 (load widens,
save narrows with round-to-nearest-even).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

DINO_BLOB = "dino"
CLIP_BLOB = "clip_visual"
TEXT_BLOB = "text"
SPLITS = ("train", "query", "target")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of raw bytes."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64
    return h


class DatasetError(Exception):
    """Base class for dataset load/save failures."""


class DatasetFormatError(DatasetError):
    """Index file is not parseable; carries the byte offset of the failure."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class DatasetValidationError(DatasetError):
    """Dataset violates manifest invariants; carries the violation list."""

    def __init__(self, violations):
        super().__init__("; ".join(f"{v.code}: {v.message}" for v in violations))
        self.violations = violations


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclass(frozen=True)
class ObjectEntry:
    object_id: str
    label_index: int
    split: str


@dataclass(frozen=True)
class BlobInfo:
    file: str
    checksum: int
    shape: tuple


@dataclass
class DatasetManifest:
    dataset_name: str
    num_objects: int
    views_per_object: int
    dino_dim: int
    clip_dim: int
    label_names: list
    lexicon_names: list
    open_set_flag: bool
    objects: list  # of ObjectEntry
    blobs: dict  # blob name -> BlobInfo

    def split_indices(self, split: str) -> np.ndarray:
        return np.array(
            [i for i, o in enumerate(self.objects) if o.split == split], dtype=np.int64
        )

    def labels(self) -> np.ndarray:
        return np.array([o.label_index for o in self.objects], dtype=np.int64)


@dataclass
class TextEmbeddingTable:
    """Text embeddings, one row per name; label rows first, lexicon rows after."""

    names: list
    rows: np.ndarray  # (len(names), d_c) float64

    def row_for(self, name: str) -> np.ndarray:
        return self.rows[self.names.index(name)]


@dataclass
class Dataset:
    manifest: DatasetManifest
    dino: np.ndarray  # (N, M, d) float64
    clip: Optional[np.ndarray] = None  # (N, M, d_c) float64
    text: Optional[TextEmbeddingTable] = None


@dataclass
class SyntheticSpec:
    """Generative model: unit Gaussian class prototypes in the text space,
    per-view Gaussian noise in the aligned visual space, and a fixed random
    linear map into the view-embedding space (plus per-object noise and
    per-view jitter there)."""

    seen_classes: int = 20
    unseen_classes: int = 20
    objects_per_class: int = 50
    views: int = 24
    dino_dim: int = 64
    clip_dim: int = 32
    visual_noise_sigma: float = 0.15
    view_jitter: float = 1.0
    lexicon_concepts: int = 64
    alignment_seed: int = 7
    data_seed: int = 42
    dataset_name: str = "synthetic"


def blob_bytes(arr: np.ndarray) -> bytes:
    """Serialize an array as little-endian float32, row-major."""
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _widen(raw: bytes, shape) -> np.ndarray:
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)


def snap_to_f32(arr: np.ndarray) -> np.ndarray:
    """Round float64 values to their nearest float32, staying in float64."""
    return arr.astype(np.float32).astype(np.float64)


def _expected_shape(manifest: DatasetManifest, name: str):
    if name == DINO_BLOB:
        return (manifest.num_objects, manifest.views_per_object, manifest.dino_dim)
    if name == CLIP_BLOB:
        return (manifest.num_objects, manifest.views_per_object, manifest.clip_dim)
    if name == TEXT_BLOB:
        n = len(manifest.label_names) + len(manifest.lexicon_names)
        return (n, manifest.clip_dim)
    return None


def validate_manifest(manifest: DatasetManifest, blobs: dict) -> list:
    """Check every manifest invariant against the given raw blob bytes.

    Returns a list of Violations; an empty list means the dataset is loadable.
    """
    out = []

    def bad(code, message):
        out.append(Violation(code, message))

    if manifest.views_per_object < 1:
        bad("BadDimensions", f"views_per_object={manifest.views_per_object} < 1")
    if manifest.dino_dim < 1:
        bad("BadDimensions", f"dino_dim={manifest.dino_dim} < 1")
    if manifest.clip_dim < 1:
        bad("BadDimensions", f"clip_dim={manifest.clip_dim} < 1")
    if manifest.num_objects != len(manifest.objects):
        bad(
            "ObjectCountMismatch",
            f"num_objects={manifest.num_objects} but {len(manifest.objects)} entries",
        )

    n_labels = len(manifest.label_names)
    seen_ids = set()
    for o in manifest.objects:
        if not (0 <= o.label_index < n_labels):
            bad("BadLabelIndex", f"object {o.object_id}: label {o.label_index}")
        if o.split not in SPLITS:
            bad("InvalidSplit", f"object {o.object_id}: split {o.split!r}")
        if o.object_id in seen_ids:
            bad("DuplicateObjectId", o.object_id)
        seen_ids.add(o.object_id)

    lowered = [n.lower() for n in manifest.label_names + manifest.lexicon_names]
    if len(set(lowered)) != len(lowered):
        dupes = sorted({n for n in lowered if lowered.count(n) > 1})
        bad("DuplicateNames", f"case-insensitive duplicates: {dupes}")

    split_labels = {s: set() for s in SPLITS}
    for o in manifest.objects:
        if o.split in split_labels and 0 <= o.label_index < n_labels:
            split_labels[o.split].add(o.label_index)
    eval_labels = split_labels["query"] | split_labels["target"]
    if manifest.open_set_flag and split_labels["train"] & eval_labels:
        overlap = sorted(split_labels["train"] & eval_labels)
        bad("OverlappingLabelSpaces", f"train/eval label overlap: {overlap}")
    if split_labels["query"] != split_labels["target"]:
        bad(
            "QueryTargetLabelMismatch",
            f"query labels {sorted(split_labels['query'])} != "
            f"target labels {sorted(split_labels['target'])}",
        )

    if DINO_BLOB not in manifest.blobs:
        bad("MissingBlob", f"manifest lists no {DINO_BLOB!r} blob")
    for name, info in manifest.blobs.items():
        expected = _expected_shape(manifest, name)
        if expected is None:
            bad("UnknownBlob", name)
            continue
        if tuple(info.shape) != expected:
            bad("ShapeMismatch", f"{name}: shape {tuple(info.shape)} != {expected}")
        if name not in blobs:
            bad("MissingBlob", f"{name}: file {info.file} unavailable")
            continue
        raw = blobs[name]
        want = 4 * int(np.prod(info.shape))
        if len(raw) != want:
            bad("SizeMismatch", f"{name}: {len(raw)} bytes, expected {want}")
            continue
        if fnv1a64(raw) != info.checksum:
            bad("ChecksumMismatch", name)
            continue
        values = np.frombuffer(raw, dtype="<f4")
        if not np.all(np.isfinite(values)):
            bad("NonFiniteValues", name)
    return out


def _manifest_to_dict(manifest: DatasetManifest) -> dict:
    return {
        "dataset_name": manifest.dataset_name,
        "num_objects": manifest.num_objects,
        "views_per_object": manifest.views_per_object,
        "dino_dim": manifest.dino_dim,
        "clip_dim": manifest.clip_dim,
        "label_names": list(manifest.label_names),
        "lexicon_names": list(manifest.lexicon_names),
        "open_set_flag": manifest.open_set_flag,
        "objects": [
            {"id": o.object_id, "label": o.label_index, "split": o.split}
            for o in manifest.objects
        ],
        "blobs": {
            name: {
                # 64-bit checksums exceed exact double range, hence string
                "file": info.file,
                "checksum": str(info.checksum),
                "shape": list(info.shape),
            }
            for name, info in manifest.blobs.items()
        },
    }


def _manifest_from_dict(doc: dict) -> DatasetManifest:
    try:
        return DatasetManifest(
            dataset_name=doc["dataset_name"],
            num_objects=int(doc["num_objects"]),
            views_per_object=int(doc["views_per_object"]),
            dino_dim=int(doc["dino_dim"]),
            clip_dim=int(doc["clip_dim"]),
            label_names=list(doc["label_names"]),
            lexicon_names=list(doc["lexicon_names"]),
            open_set_flag=bool(doc["open_set_flag"]),
            objects=[
                ObjectEntry(str(o["id"]), int(o["label"]), str(o["split"]))
                for o in doc["objects"]
            ],
            blobs={
                name: BlobInfo(str(b["file"]), int(b["checksum"]), tuple(b["shape"]))
                for name, b in doc["blobs"].items()
            },
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"malformed index: {exc}") from exc


def _dataset_blob_arrays(dataset: Dataset) -> dict:
    arrays = {DINO_BLOB: dataset.dino}
    if dataset.clip is not None:
        arrays[CLIP_BLOB] = dataset.clip
    if dataset.text is not None:
        arrays[TEXT_BLOB] = dataset.text.rows
    return arrays


def refresh_blob_index(dataset: Dataset) -> None:
    """Recompute blob entries (file names, shapes, checksums) from the arrays."""
    blobs = {}
    for name, arr in _dataset_blob_arrays(dataset).items():
        raw = blob_bytes(arr)
        blobs[name] = BlobInfo(f"{name}.f32le", fnv1a64(raw), tuple(arr.shape))
    dataset.manifest.blobs = blobs


def save_dataset(dataset: Dataset, root_path) -> None:
    """Write index + blobs; refuses to write datasets that fail validation."""
    root = Path(root_path)
    refresh_blob_index(dataset)
    raws = {n: blob_bytes(a) for n, a in _dataset_blob_arrays(dataset).items()}
    violations = validate_manifest(dataset.manifest, raws)
    if violations:
        raise DatasetValidationError(violations)
    root.mkdir(parents=True, exist_ok=True)
    try:
        for name, raw in raws.items():
            (root / dataset.manifest.blobs[name].file).write_bytes(raw)
        text = json.dumps(_manifest_to_dict(dataset.manifest), indent=2)
        (root / "index.json").write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"write failed under {root}: {exc}") from exc


def load_dataset(root_path) -> Dataset:
    """Load and validate a dataset directory written by save_dataset."""
    root = Path(root_path)
    index_path = root / "index.json"
    try:
        raw_index = index_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read {index_path}: {exc}") from exc
    try:
        doc = json.loads(raw_index)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(
            f"{index_path}: invalid JSON at byte offset {exc.pos}", offset=exc.pos
        ) from exc
    manifest = _manifest_from_dict(doc)

    raws = {}
    for name, info in manifest.blobs.items():
        path = root / info.file
        if path.exists():
            raws[name] = path.read_bytes()
    violations = validate_manifest(manifest, raws)
    if violations:
        raise DatasetValidationError(violations)

    dino = _widen(raws[DINO_BLOB], manifest.blobs[DINO_BLOB].shape)
    clip = None
    if CLIP_BLOB in raws:
        clip = _widen(raws[CLIP_BLOB], manifest.blobs[CLIP_BLOB].shape)
    text = None
    if TEXT_BLOB in raws:
        rows = _widen(raws[TEXT_BLOB], manifest.blobs[TEXT_BLOB].shape)
        text = TextEmbeddingTable(
            names=list(manifest.label_names) + list(manifest.lexicon_names), rows=rows
        )
    return Dataset(manifest=manifest, dino=dino, clip=clip, text=text)


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Value-for-value equality (arrays compared bitwise)."""
    if _manifest_to_dict(a.manifest) != _manifest_to_dict(b.manifest):
        return False
    if not np.array_equal(a.dino, b.dino):
        return False
    if (a.clip is None) != (b.clip is None):
        return False
    if a.clip is not None and not np.array_equal(a.clip, b.clip):
        return False
    if (a.text is None) != (b.text is None):
        return False
    if a.text is not None:
        if a.text.names != b.text.names or not np.array_equal(a.text.rows, b.text.rows):
            return False
    return True


def _validate_spec(spec: SyntheticSpec) -> None:
    if spec.visual_noise_sigma < 0 or spec.view_jitter < 0:
        raise ValueError("noise scales must be nonnegative")
    for name in ("seen_classes", "unseen_classes", "objects_per_class", "views",
                 "dino_dim", "clip_dim", "lexicon_concepts"):
        if getattr(spec, name) < 1:
            raise ValueError(f"{name} must be >= 1")
    if spec.objects_per_class < 2:
        # each unseen class must land at least one query and one target object
        raise ValueError("objects_per_class must be >= 2 to split query/target")


def generate_synthetic_dataset(spec: SyntheticSpec) -> Dataset:
    """Generate a fully seeded dataset realizing the Gaussian alignment model.

    Text embeddings are unit-normalized Gaussian prototypes (no text noise).
    Aligned visual features are prototype + per-view Gaussian noise. View
    embeddings are a fixed random linear image of the prototype plus a
    per-object Gaussian offset and per-view jitter, so a ground-truth
    cross-space map exists; the offset and jitter live in the orthogonal
    complement of the map's column space (nuisance variation off the
    semantic subspace, which a trained adapter can learn to suppress).
    Seen classes fill the train split; each unseen class is split 20/80
    into query/target (rounded, at least one of each).
    """
    _validate_spec(spec)
    seen = [f"seen_{i:02d}" for i in range(spec.seen_classes)]
    unseen = [f"unseen_{i:02d}" for i in range(spec.unseen_classes)]
    lexicon = [f"concept_{i:02d}" for i in range(spec.lexicon_concepts)]
    label_names = seen + unseen

    # scaled so the map preserves expected squared norm (unit prototypes stay
    # near unit length in the view-embedding space)
    rng_align = np.random.default_rng(spec.alignment_seed)
    align_map = rng_align.standard_normal((spec.dino_dim, spec.clip_dim))
    align_map /= math.sqrt(spec.dino_dim)
    if spec.dino_dim > spec.clip_dim:
        q, _ = np.linalg.qr(align_map)
        perp = np.eye(spec.dino_dim) - q @ q.T
    else:
        perp = np.eye(spec.dino_dim)

    rng = np.random.default_rng(spec.data_seed)
    protos = rng.standard_normal((len(label_names) + len(lexicon), spec.clip_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)

    n_classes = len(label_names)
    n_obj = spec.objects_per_class
    total = n_classes * n_obj
    dino = np.empty((total, spec.views, spec.dino_dim))
    clip = np.empty((total, spec.views, spec.clip_dim))
    objects = []
    n_query = max(1, round(0.2 * n_obj))
    n_query = min(n_query, n_obj - 1)

    for c, name in enumerate(label_names):
        proto = protos[c]
        base = align_map @ proto
        lo = c * n_obj
        obj_noise = spec.visual_noise_sigma * (
            rng.standard_normal((n_obj, spec.dino_dim)) @ perp)
        view_jitter = spec.view_jitter * (
            rng.standard_normal((n_obj, spec.views, spec.dino_dim)) @ perp)
        clip_noise = spec.visual_noise_sigma * rng.standard_normal(
            (n_obj, spec.views, spec.clip_dim)
        )
        dino[lo:lo + n_obj] = base + obj_noise[:, None, :] + view_jitter
        clip[lo:lo + n_obj] = proto + clip_noise
        for j in range(n_obj):
            if c < spec.seen_classes:
                split = "train"
            else:
                split = "query" if j < n_query else "target"
            objects.append(ObjectEntry(f"{name}_{j:03d}", c, split))

    manifest = DatasetManifest(
        dataset_name=spec.dataset_name,
        num_objects=total,
        views_per_object=spec.views,
        dino_dim=spec.dino_dim,
        clip_dim=spec.clip_dim,
        label_names=label_names,
        lexicon_names=lexicon,
        open_set_flag=True,
        objects=objects,
        blobs={},
    )
    dataset = Dataset(
        manifest=manifest,
        dino=snap_to_f32(dino),
        clip=snap_to_f32(clip),
        text=TextEmbeddingTable(label_names + lexicon, snap_to_f32(protos)),
    )
    refresh_blob_index(dataset)
    return dataset


def dataset_content_hash(root_path) -> int:
    """Identity hash of a dataset directory (FNV-1a over its index bytes)."""
    raw = (Path(root_path) / "index.json").read_bytes()
    return fnv1a64(raw)
