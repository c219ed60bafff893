"""Metric training: multi-similarity loss with pair mining, PK batch
sampling, SGD with momentum / weight decay / milestone schedule, and the
end-to-end fit loop joining the view adapter with virtual-feature synthesis.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels as K
from .adapter import AdapterConfig, adapter_backward, adapter_forward, init_adapter_params
from .synthesis import (
    build_virtual_batch,
    enrich_label_space,
    init_synth_params,
    virtual_batch_backward,
)


@dataclass
class MsLossParams:
    alpha: float = 2.0
    beta: float = 50.0
    threshold: float = 0.5
    margin: float = 0.1

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")


@dataclass
class TrainConfig:
    lr_adapter: float = 1e-3
    lr_synth: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 70
    milestones: tuple = (20, 40)
    gamma: float = 0.1
    classes_per_batch: int = 2
    instances_per_class: int = 4
    seed: int = 42
    synth_enabled: bool = True
    few_shot_limit: int = 0  # 0 = no cap

    def __post_init__(self):
        if self.classes_per_batch < 2:
            raise ValueError("classes_per_batch must be >= 2")
        if self.instances_per_class < 2:
            raise ValueError("instances_per_class must be >= 2")
        if list(self.milestones) != sorted(self.milestones):
            raise ValueError("milestones must ascend")


@dataclass
class SynthConfig:
    num_concepts: int = 40
    selection_mode: str = "random_e"
    hidden_dim: int = 0  # 0 = dino_dim


def multi_similarity_loss(descriptors, labels, params: MsLossParams = None):
    """Pair-mined multi-similarity loss on unit descriptors.

    Mining per anchor: positives no more similar than (hardest negative +
    margin); negatives no less similar than (easiest positive - margin),
    judged against all same-class pairs, boundaries inclusive. An anchor
    with no different-class samples keeps all its positives; one with no
    same-class pairs mines no negatives. The loss averages over anchors
    that mined anything; mining acts as a fixed mask in the gradient.

    Returns (loss, gradient w.r.t. descriptors).
    """
    if params is None:
        params = MsLossParams()
    descriptors = np.asarray(descriptors, dtype=np.float64)
    labels = np.asarray(labels)
    bsz = descriptors.shape[0]
    if bsz < 2:
        raise ValueError("need at least 2 descriptors")
    norms = np.linalg.norm(descriptors, axis=1)
    if np.abs(norms - 1.0).max() > 1e-6:
        raise ValueError("descriptors must be L2-normalized")

    sims = descriptors @ descriptors.T
    a, b, thr, margin = params.alpha, params.beta, params.threshold, params.margin
    grad_s = np.zeros_like(sims)
    total = 0.0
    contributing = 0
    for i in range(bsz):
        same = labels == labels[i]
        same[i] = False
        diff = labels != labels[i]
        pos_cand = np.flatnonzero(same)
        neg_cand = np.flatnonzero(diff)
        if neg_cand.size:
            pos = pos_cand[sims[i, pos_cand] <= sims[i, neg_cand].max() + margin]
        else:
            pos = pos_cand
        if pos_cand.size:
            neg = neg_cand[sims[i, neg_cand] >= sims[i, pos_cand].min() - margin]
        else:
            neg = neg_cand[:0]
        if pos.size == 0 and neg.size == 0:
            continue
        contributing += 1
        pos_exp = np.exp(-a * (sims[i, pos] - thr))
        neg_exp = np.exp(b * (sims[i, neg] - thr))
        total += math.log1p(pos_exp.sum()) / a + math.log1p(neg_exp.sum()) / b
        grad_s[i, pos] += -pos_exp / (1.0 + pos_exp.sum())
        grad_s[i, neg] += neg_exp / (1.0 + neg_exp.sum())

    if contributing == 0:
        return 0.0, np.zeros_like(descriptors)
    grad_s /= contributing
    ddesc = grad_s @ descriptors + grad_s.T @ descriptors
    return total / contributing, ddesc


def pk_sample_batch(class_to_indices, classes_per_batch, instances_per_class,
                    rng: np.random.Generator) -> np.ndarray:
    """Sample P distinct classes and K instances each (with replacement only
    when a class is smaller than K). Returns object indices."""
    keys = sorted(class_to_indices)
    if len(keys) < classes_per_batch:
        raise ValueError(
            f"need {classes_per_batch} classes, have {len(keys)}")
    picked = rng.choice(len(keys), size=classes_per_batch, replace=False)
    batch = []
    for ci in picked:
        members = class_to_indices[keys[ci]]
        if len(members) >= instances_per_class:
            sel = rng.choice(len(members), size=instances_per_class, replace=False)
        else:
            extra = rng.choice(len(members),
                               size=instances_per_class - len(members), replace=True)
            sel = np.concatenate([rng.permutation(len(members)), extra])
        batch.extend(members[j] for j in sel)
    return np.asarray(batch, dtype=np.int64)


def lr_at_epoch(config: TrainConfig, group: str, epoch: int) -> float:
    """Base group rate decayed by gamma at each milestone (0-indexed epochs;
    a milestone at 20 means "starting at epoch 20")."""
    base = config.lr_adapter if group == "adapter" else config.lr_synth
    passed = sum(1 for m in config.milestones if m <= epoch)
    return base * config.gamma ** passed


def sgd_momentum_step(blocks, config: TrainConfig, epoch: int) -> None:
    """One SGD-with-momentum update; weight decay skips exempt blocks
    (scalar blend weights, batchnorm affine). Gradients are zeroed after."""
    for p in blocks:
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in {p.name}")
        g = p.grad if p.weight_decay_exempt else p.grad + config.weight_decay * p.value
        p.momentum_buf *= config.momentum
        p.momentum_buf += g
        p.value -= lr_at_epoch(config, p.learning_group, epoch) * p.momentum_buf
        p.zero_grad()


@dataclass
class MlpHeadParams:
    """Three-layer bottleneck head over the mean-pooled views
    (d -> d/4 -> d/4 -> d), the plain-adapter comparison baseline."""
    lin1_w: K.ParamBlock
    lin1_b: K.ParamBlock
    lin2_w: K.ParamBlock
    lin2_b: K.ParamBlock
    lin3_w: K.ParamBlock
    lin3_b: K.ParamBlock

    def param_blocks(self):
        return [self.lin1_w, self.lin1_b, self.lin2_w, self.lin2_b,
                self.lin3_w, self.lin3_b]


def mlp_head_widths(dim: int):
    bottleneck = max(1, dim // 4)
    return dim, bottleneck, bottleneck, dim


def init_mlp_head_params(dim: int, rng: np.random.Generator) -> MlpHeadParams:
    d0, d1, d2, d3 = mlp_head_widths(dim)
    blocks = {}
    for i, (dout, din) in enumerate(((d1, d0), (d2, d1), (d3, d2)), start=1):
        bound = 1.0 / math.sqrt(din)
        blocks[f"lin{i}_w"] = K.ParamBlock.create(
            f"mlp.lin{i}_w", rng.uniform(-bound, bound, (dout, din)), "adapter")
        blocks[f"lin{i}_b"] = K.ParamBlock.create(
            f"mlp.lin{i}_b", rng.uniform(-bound, bound, dout), "adapter")
    return MlpHeadParams(**blocks)


def mlp_head_forward(views, config: AdapterConfig, params: MlpHeadParams, mode="eval",
                     update_running_stats=True):
    gap = views.mean(axis=1)
    h1, c1 = K.linear_forward(gap, params.lin1_w.value, params.lin1_b.value)
    r1, cr1 = K.relu_forward(h1)
    h2, c2 = K.linear_forward(r1, params.lin2_w.value, params.lin2_b.value)
    r2, cr2 = K.relu_forward(h2)
    adapted, c3 = K.linear_forward(r2, params.lin3_w.value, params.lin3_b.value)
    desc = config.fusion_weight * gap + (1.0 - config.fusion_weight) * adapted
    norm_cache = None
    if config.normalize_descriptor:
        desc, norm_cache = K.l2_normalize_forward(desc)
    cache = {"mode": mode, "n_views": views.shape[1],
             "chain": (c1, cr1, c2, cr2, c3), "norm_cache": norm_cache}
    return desc, cache


def mlp_head_backward(ddesc, cache, config: AdapterConfig, params: MlpHeadParams):
    if cache["norm_cache"] is not None:
        ddesc = K.l2_normalize_backward(ddesc, cache["norm_cache"])
    dgap = config.fusion_weight * ddesc
    dadapted = (1.0 - config.fusion_weight) * ddesc
    c1, cr1, c2, cr2, c3 = cache["chain"]
    dr2, dw3, db3 = K.linear_backward(dadapted, c3)
    dh2 = K.relu_backward(dr2, cr2)
    dr1, dw2, db2 = K.linear_backward(dh2, c2)
    dh1 = K.relu_backward(dr1, cr1)
    dgap2, dw1, db1 = K.linear_backward(dh1, c1)
    params.lin3_w.grad += dw3
    params.lin3_b.grad += db3
    params.lin2_w.grad += dw2
    params.lin2_b.grad += db2
    params.lin1_w.grad += dw1
    params.lin1_b.grad += db1
    dgap += dgap2
    n_views = cache["n_views"]
    return np.repeat(dgap[:, None, :], n_views, axis=1) / n_views


@dataclass
class FitResult:
    head: str  # "chunk" | "mlp"
    head_params: object
    synth_params: object  # SynthParams or None
    label_space: object  # EnrichedLabelSpace or None
    log: list = field(default_factory=list)


def _train_classes(manifest, few_shot_limit, seed):
    labels = manifest.labels()
    train_idx = manifest.split_indices("train")
    if len(train_idx) == 0:
        raise ValueError("dataset has no train split")
    class_to_indices = {}
    for i in train_idx:
        class_to_indices.setdefault(int(labels[i]), []).append(int(i))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    out = {}
    for c in sorted(class_to_indices):
        members = np.asarray(class_to_indices[c], dtype=np.int64)
        if few_shot_limit and len(members) > few_shot_limit:
            keep = rng.choice(len(members), size=few_shot_limit, replace=False)
            members = np.sort(members[keep])
        out[c] = members
    return out


def fit(dataset, adapter_config: AdapterConfig, train_config: TrainConfig,
        synth_config: SynthConfig = None, loss_params: MsLossParams = None,
        head: str = "chunk") -> FitResult:
    """Train the descriptor head (and, when enabled, the virtual-feature
    synthesizer) on the train split. Fully deterministic given the seed.

    Each epoch runs ceil(N_train / (P*K)) PK batches. When synthesis is on,
    every batch is doubled with virtual samples carrying pseudo-labels
    offset past the real label space, and both real and virtual view
    sequences share the one descriptor head.
    """
    if head not in ("chunk", "mlp"):
        raise ValueError(f"unknown head {head!r}")
    if synth_config is None:
        synth_config = SynthConfig()
    if loss_params is None:
        loss_params = MsLossParams()
    manifest = dataset.manifest
    labels = manifest.labels()
    class_to_indices = _train_classes(manifest, train_config.few_shot_limit,
                                      train_config.seed)
    n_train = sum(len(v) for v in class_to_indices.values())

    seed = train_config.seed
    rng_init = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    if head == "chunk":
        head_params = init_adapter_params(adapter_config, rng_init)
        fwd, bwd = adapter_forward, adapter_backward
    else:
        head_params = init_mlp_head_params(adapter_config.dino_dim, rng_init)
        fwd, bwd = mlp_head_forward, mlp_head_backward

    synth_on = train_config.synth_enabled
    synth_params = None
    base_space = None
    if synth_on and (dataset.clip is None or dataset.text is None):
        warnings.warn("aligned/text features unavailable; training adapter only")
        synth_on = False
    if synth_on:
        seen_names = sorted({manifest.label_names[c] for c in class_to_indices})
        base_space = enrich_label_space(
            seen_names, manifest.lexicon_names, synth_config.num_concepts,
            mode=synth_config.selection_mode, seed=seed)
        synth_params = init_synth_params(
            manifest.clip_dim, adapter_config.dino_dim, rng_init,
            hidden_dim=synth_config.hidden_dim or None)

    all_blocks = list(head_params.param_blocks())
    if synth_params is not None:
        all_blocks += synth_params.param_blocks()

    # virtual pseudo-labels live past every real label index
    label_offset = len(manifest.label_names)
    rng_sampler = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    per_batch = train_config.classes_per_batch * train_config.instances_per_class
    n_batches = max(1, -(-n_train // per_batch))
    log = []
    for epoch in range(train_config.epochs):
        space = None
        if synth_on:
            space = replace(base_space, selection_seed=seed + epoch)
        epoch_losses = []
        for b in range(n_batches):
            batch_idx = pk_sample_batch(
                class_to_indices, train_config.classes_per_batch,
                train_config.instances_per_class, rng_sampler)
            views = dataset.dino[batch_idx]
            batch_labels = labels[batch_idx]
            desc_r, cache_r = fwd(views, adapter_config, head_params, mode="train")
            if synth_on:
                rng_virtual = np.random.default_rng(
                    np.random.SeedSequence([seed, 2, epoch, b]))
                vbatch = build_virtual_batch(
                    batch_labels, manifest.label_names, dataset.clip[batch_idx],
                    views, space, dataset.text, synth_params, rng_virtual)
                # side batch: batch-stat normalization without steering the
                # running buffers away from the real data distribution
                desc_v, cache_v = fwd(vbatch.values, adapter_config, head_params,
                                      mode="train", update_running_stats=False)
                all_desc = np.concatenate([desc_r, desc_v])
                all_labels = np.concatenate(
                    [batch_labels, label_offset + vbatch.pseudo_labels])
            else:
                all_desc, all_labels = desc_r, batch_labels

            loss, ddesc = multi_similarity_loss(all_desc, all_labels, loss_params)
            bsz = len(batch_labels)
            bwd(ddesc[:bsz], cache_r, adapter_config, head_params)
            if synth_on:
                dviews_v = bwd(ddesc[bsz:], cache_v, adapter_config, head_params)
                virtual_batch_backward(dviews_v, vbatch, synth_params)
            sgd_momentum_step(all_blocks, train_config, epoch)
            epoch_losses.append(loss)
        log.append({
            "epoch": epoch,
            "mean_loss": float(np.mean(epoch_losses)),
            "lr_adapter": lr_at_epoch(train_config, "adapter", epoch),
            "lr_vfs": lr_at_epoch(train_config, "synth", epoch),
        })
    return FitResult(head=head, head_params=head_params,
                     synth_params=synth_params, label_space=base_space, log=log)


def mlp_baseline_fit(dataset, adapter_config: AdapterConfig,
                     train_config: TrainConfig,
                     synth_config: SynthConfig = None,
                     loss_params: MsLossParams = None) -> FitResult:
    """Train the bottleneck-MLP comparison head with the same loop."""
    return fit(dataset, adapter_config, train_config, synth_config,
               loss_params, head="mlp")
