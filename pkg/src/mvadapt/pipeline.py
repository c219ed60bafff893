"""End-to-end helpers wiring datasets, heads, and evaluation together."""
from __future__ import annotations

import numpy as np

from .adapter import AdapterConfig, adapter_forward, mean_pool_descriptor
from .retrieval import MetricsReport, evaluate_retrieval
from .training import mlp_head_forward


def zero_shot_descriptors(dataset, indices) -> np.ndarray:
    """Frozen mean-pool descriptors for the given object indices."""
    return mean_pool_descriptor(dataset.dino[indices], normalize=True)


def head_descriptors(dataset, indices, head, adapter_config: AdapterConfig,
                     head_params, batch_size=512) -> np.ndarray:
    """Eval-mode descriptors for the given object indices."""
    fwd = adapter_forward if head == "chunk" else mlp_head_forward
    chunks = []
    for lo in range(0, len(indices), batch_size):
        views = dataset.dino[indices[lo:lo + batch_size]]
        desc, _ = fwd(views, adapter_config, head_params, mode="eval")
        chunks.append(desc)
    return np.concatenate(chunks, axis=0)


def evaluate_descriptor_fn(dataset, descriptor_fn, variant="gtm", workers=1,
                           config_hash=0, seed=0) -> MetricsReport:
    """Evaluate query-vs-target retrieval using `descriptor_fn(indices)`."""
    manifest = dataset.manifest
    labels = manifest.labels()
    q_idx = manifest.split_indices("query")
    t_idx = manifest.split_indices("target")
    if len(q_idx) == 0 or len(t_idx) == 0:
        raise ValueError("dataset needs non-empty query and target splits")
    return evaluate_retrieval(
        descriptor_fn(q_idx), labels[q_idx],
        descriptor_fn(t_idx), labels[t_idx],
        query_ids=[manifest.objects[i].object_id for i in q_idx],
        target_ids=[manifest.objects[i].object_id for i in t_idx],
        variant=variant, workers=workers, config_hash=config_hash, seed=seed,
    )


def evaluate_zero_shot(dataset, variant="gtm", workers=1, config_hash=0,
                       seed=0) -> MetricsReport:
    return evaluate_descriptor_fn(
        dataset, lambda idx: zero_shot_descriptors(dataset, idx),
        variant=variant, workers=workers, config_hash=config_hash, seed=seed)


def evaluate_head(dataset, head, adapter_config, head_params, variant="gtm",
                  workers=1, config_hash=0, seed=0) -> MetricsReport:
    return evaluate_descriptor_fn(
        dataset,
        lambda idx: head_descriptors(dataset, idx, head, adapter_config, head_params),
        variant=variant, workers=workers, config_hash=config_hash, seed=seed)
