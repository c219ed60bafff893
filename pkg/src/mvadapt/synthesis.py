"""Virtual unseen-class feature synthesis in the aligned embedding space.

A lexicon of candidate concepts (minus names already seen in training) is
sub-sampled to E working concepts. For a real training sample, a virtual
view sequence is built by shifting its aligned visual features along the
normalized text-space direction from its own class toward the chosen
concept, projecting through a small MLP into the view-embedding space, and
blending with the real views. Also hosts the empirical diagnostics for the
alignment identity and the Lipschitz deviation bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K


class SynthesisUnavailableError(Exception):
    """Raised when virtual synthesis is requested without aligned features."""


@dataclass
class EnrichedLabelSpace:
    seen_names: list
    new_names: list
    num_concepts: int  # E
    selection_mode: str  # "random_e" | "top_e"
    selection_seed: int


@dataclass
class SynthParams:
    lin1_w: K.ParamBlock
    lin1_b: K.ParamBlock
    lin2_w: K.ParamBlock
    lin2_b: K.ParamBlock
    shift_scale: K.ParamBlock  # scales the text-direction shift
    synth_weight: K.ParamBlock  # weights the synthesized branch in the blend
    residual_weight: K.ParamBlock  # weights the real-view branch in the blend

    def param_blocks(self):
        return [self.lin1_w, self.lin1_b, self.lin2_w, self.lin2_b,
                self.shift_scale, self.synth_weight, self.residual_weight]


def init_synth_params(clip_dim, dino_dim, rng: np.random.Generator,
                      hidden_dim=None) -> SynthParams:
    """Two-layer projector clip_dim -> hidden -> dino_dim with ReLU between;
    uniform +-sqrt(6/fan_in) weights, zero biases. The three scalars start
    at 1.0 (shift) and 0.5/0.5 (blend) and are exempt from weight decay."""
    hidden = dino_dim if hidden_dim is None else hidden_dim
    b1 = math.sqrt(6.0 / clip_dim)
    b2 = math.sqrt(6.0 / hidden)
    return SynthParams(
        lin1_w=K.ParamBlock.create("synth.lin1_w", rng.uniform(-b1, b1, (hidden, clip_dim)), "synth"),
        lin1_b=K.ParamBlock.create("synth.lin1_b", np.zeros(hidden), "synth"),
        lin2_w=K.ParamBlock.create("synth.lin2_w", rng.uniform(-b2, b2, (dino_dim, hidden)), "synth"),
        lin2_b=K.ParamBlock.create("synth.lin2_b", np.zeros(dino_dim), "synth"),
        shift_scale=K.ParamBlock.create("synth.shift_scale", np.array(1.0), "synth", weight_decay_exempt=True),
        synth_weight=K.ParamBlock.create("synth.synth_weight", np.array(0.5), "synth", weight_decay_exempt=True),
        residual_weight=K.ParamBlock.create("synth.residual_weight", np.array(0.5), "synth", weight_decay_exempt=True),
    )


def enrich_label_space(seen_names, lexicon_names, num_concepts, mode="random_e",
                       seed=0) -> EnrichedLabelSpace:
    """Drop lexicon entries that case-insensitively match a seen name."""
    if mode not in ("random_e", "top_e"):
        raise ValueError(f"unknown selection mode {mode!r}")
    seen_lower = {n.lower() for n in seen_names}
    new_names = [n for n in lexicon_names if n.lower() not in seen_lower]
    if not new_names:
        raise ValueError("lexicon is empty after filtering seen names")
    if not 1 <= num_concepts <= len(new_names):
        raise ValueError(
            f"num_concepts={num_concepts} outside [1, {len(new_names)}]")
    return EnrichedLabelSpace(
        seen_names=list(seen_names),
        new_names=new_names,
        num_concepts=num_concepts,
        selection_mode=mode,
        selection_seed=seed,
    )


def select_concepts(space: EnrichedLabelSpace, text_table, anchor=None) -> np.ndarray:
    """Pick the working E concepts (indices into space.new_names).

    random_e samples uniformly without replacement, anchor-independent;
    top_e takes the E concepts whose text embeddings are most cosine-similar
    to the anchor, ties broken by lower index.
    """
    n = len(space.new_names)
    if space.selection_mode == "random_e":
        rng = np.random.default_rng(space.selection_seed)
        return np.sort(rng.choice(n, size=space.num_concepts, replace=False))
    if anchor is None:
        raise ValueError("top_e selection needs an anchor feature")
    rows = np.stack([text_table.row_for(name) for name in space.new_names])
    sims = K.cosine_similarity_matrix(np.asarray(anchor)[None, :], rows)[0]
    order = np.argsort(-sims, kind="stable")
    return order[:space.num_concepts]


def synthesize_virtual_views(clip_views, seen_text, unseen_text, params: SynthParams):
    """Shift aligned views toward the unseen concept and project.

    clip_views: (M, d_c); returns ((M, d), cache). A zero text difference
    layer-normalizes to zeros, so the output degrades to the plain
    projection of the real aligned views.
    """
    delta = np.asarray(unseen_text) - np.asarray(seen_text)
    direction, _ = K.layer_norm_forward(delta)
    x = clip_views + params.shift_scale.value * direction
    h, c1 = K.linear_forward(x, params.lin1_w.value, params.lin1_b.value)
    r, cr = K.relu_forward(h)
    out, c2 = K.linear_forward(r, params.lin2_w.value, params.lin2_b.value)
    return out, (direction, c1, cr, c2)


def synthesize_virtual_views_backward(dout, cache, params: SynthParams):
    """Accumulate projector and shift-scale gradients; returns the gradient
    w.r.t. the aligned input views (unused by training, the backbone is
    frozen)."""
    direction, c1, cr, c2 = cache
    dr, dw2, db2 = K.linear_backward(dout, c2)
    dh = K.relu_backward(dr, cr)
    dx, dw1, db1 = K.linear_backward(dh, c1)
    params.lin2_w.grad += dw2
    params.lin2_b.grad += db2
    params.lin1_w.grad += dw1
    params.lin1_b.grad += db1
    params.shift_scale.grad += (dx * direction).sum()
    return dx


def fuse_virtual_features(synth, real, params: SynthParams):
    """Blend synthesized and real view sequences: a*synth + b*real."""
    out = params.synth_weight.value * synth + params.residual_weight.value * real
    return out, (synth, real)


def fuse_virtual_features_backward(dout, cache, params: SynthParams):
    synth, real = cache
    params.synth_weight.grad += (dout * synth).sum()
    params.residual_weight.grad += (dout * real).sum()
    return params.synth_weight.value * dout, params.residual_weight.value * dout


@dataclass
class VirtualBatch:
    values: np.ndarray  # (B, M, d)
    pseudo_labels: np.ndarray  # indices into space.new_names
    caches: list = field(default_factory=list)


def build_virtual_batch(real_label_indices, label_names, clip_views, real_views,
                        space: EnrichedLabelSpace, text_table,
                        params: SynthParams, rng: np.random.Generator) -> VirtualBatch:
    """One virtual sample per real sample (1:1 ratio).

    Each real sample gets one concept from the working set and a full
    virtual view sequence synthesized from its aligned views. Under
    random_e the draw is shared across a batch's same-class samples so the
    virtual half mirrors the real half's class structure (virtual positives
    exist for the pair-based loss); top_e selects per sample, anchored on
    that sample's mean aligned view feature.
    """
    if clip_views is None:
        raise SynthesisUnavailableError("dataset has no aligned visual features")
    real_label_indices = np.asarray(real_label_indices)
    bsz = len(real_label_indices)
    values = np.empty_like(real_views)
    pseudo = np.empty(bsz, dtype=np.int64)
    caches = []
    choices = np.empty(bsz, dtype=np.int64)
    if space.selection_mode == "random_e":
        candidates = select_concepts(space, text_table)
        for lab in np.unique(real_label_indices):
            pick = int(candidates[rng.integers(0, len(candidates))])
            choices[real_label_indices == lab] = pick
    else:
        for i in range(bsz):
            anchor = clip_views[i].mean(axis=0)
            candidates = select_concepts(space, text_table, anchor=anchor)
            choices[i] = int(candidates[rng.integers(0, len(candidates))])
    for i in range(bsz):
        seen_name = label_names[real_label_indices[i]]
        seen_text = text_table.row_for(seen_name)
        unseen_text = text_table.row_for(space.new_names[choices[i]])
        synth, s_cache = synthesize_virtual_views(
            clip_views[i], seen_text, unseen_text, params)
        fused, f_cache = fuse_virtual_features(synth, real_views[i], params)
        values[i] = fused
        pseudo[i] = choices[i]
        caches.append((s_cache, f_cache))
    return VirtualBatch(values=values, pseudo_labels=pseudo, caches=caches)


def virtual_batch_backward(dvalues, batch: VirtualBatch, params: SynthParams):
    """Push view-sequence gradients through blend and synthesis."""
    for i, (s_cache, f_cache) in enumerate(batch.caches):
        dsynth, _ = fuse_virtual_features_backward(dvalues[i], f_cache, params)
        synthesize_virtual_views_backward(dsynth, s_cache, params)


def psi_project(x, params: SynthParams):
    """Plain projector forward (no shift, no caches)."""
    h, _ = K.linear_forward(x, params.lin1_w.value, params.lin1_b.value)
    r, _ = K.relu_forward(h)
    out, _ = K.linear_forward(r, params.lin2_w.value, params.lin2_b.value)
    return out


def expansion_identity_residual(num_quadruples=1000, dim=32, seed=0) -> float:
    """Max residual of (a-b)^T(c-d) = [a^Tc + b^Td] - [a^Td + b^Tc] on random
    vectors; pure algebra, so the residual sits at machine-epsilon level."""
    rng = np.random.default_rng(seed)
    a, b, c, d = rng.standard_normal((4, num_quadruples, dim))
    lhs = ((a - b) * (c - d)).sum(axis=1)
    rhs = (a * c).sum(axis=1) + (b * d).sum(axis=1) - (a * d).sum(axis=1) - (b * c).sum(axis=1)
    return float(np.abs(lhs - rhs).max())


@dataclass
class BoundReport:
    lipschitz_estimate: float
    sigma_sq: float
    unseen_class_names: list
    deviations: list  # mean projected distance to the class mean, per class
    violation_rate: float
    slack: float
    expansion_residual: float


def bound_report(params: SynthParams, dataset, num_pairs=10000, slack=2.0,
                 seed=0, max_anchor_views=512) -> BoundReport:
    """Empirical check that synthesized features stay near the projected
    unseen-class means.

    Per unseen class, anchor views are that class's own aligned samples
    (the idealized case of the synthesis: the class text difference is
    zero, so the layer-normalized shift vanishes and the virtual feature is
    the projected sample itself); the deviation is the mean distance from
    the projection of the class's empirical mean. The Lipschitz constant is
    estimated as the max output/input distance ratio over sampled pairs of
    projector inputs, and sigma^2 as the mean squared within-class deviation
    of aligned features. A class violates at `slack` if its deviation
    exceeds slack * L * sigma^2. Also reports the max residual of the
    pairing expansion identity on random quadruples.
    """
    if dataset.clip is None or dataset.text is None:
        raise SynthesisUnavailableError("bound diagnostics need aligned + text features")
    manifest = dataset.manifest
    labels = manifest.labels()
    rng = np.random.default_rng(seed)

    # class means and pooled within-class variance in the aligned space
    class_means = {}
    sq_sum, count = 0.0, 0
    for c in np.unique(labels):
        feats = dataset.clip[labels == c].reshape(-1, manifest.clip_dim)
        mu = feats.mean(axis=0)
        class_means[int(c)] = mu
        sq_sum += ((feats - mu) ** 2).sum()
        count += feats.shape[0]
    sigma_sq = sq_sum / count

    eval_idx = np.concatenate([manifest.split_indices("query"),
                               manifest.split_indices("target")])
    eval_labels = sorted({int(labels[i]) for i in manifest.split_indices("query")})
    if not eval_labels:
        raise ValueError("dataset has no query split ground truth")

    text = dataset.text
    deviations = []
    anchor_pool = []
    for c in eval_labels:
        members = eval_idx[labels[eval_idx] == c]
        views = dataset.clip[members].reshape(-1, manifest.clip_dim)
        if len(views) > max_anchor_views:
            pick = rng.choice(len(views), size=max_anchor_views, replace=False)
            views = views[pick]
        anchor_pool.append(views)
        class_row = text.rows[c]
        target = psi_project(class_means[c], params)
        virtual, _ = synthesize_virtual_views(views, class_row, class_row, params)
        deviations.append(float(
            np.linalg.norm(virtual - target, axis=1).mean()))

    # Lipschitz ratio over pairs drawn from the inputs the projector sees
    pool = np.concatenate(anchor_pool + [np.stack(list(class_means.values()))])
    proj = psi_project(pool, params)
    i1 = rng.integers(0, len(pool), size=num_pairs)
    i2 = rng.integers(0, len(pool), size=num_pairs)
    din = np.linalg.norm(pool[i1] - pool[i2], axis=1)
    dout = np.linalg.norm(proj[i1] - proj[i2], axis=1)
    keep = din > 1e-9
    lipschitz = float((dout[keep] / din[keep]).max()) if keep.any() else 0.0

    # tiny absolute floor so float dust cannot violate a zero-noise bound
    threshold = slack * lipschitz * sigma_sq + 1e-12
    violations = sum(1 for d in deviations if d > threshold)
    return BoundReport(
        lipschitz_estimate=lipschitz,
        sigma_sq=float(sigma_sq),
        unseen_class_names=[manifest.label_names[c] for c in eval_labels],
        deviations=deviations,
        violation_rate=violations / len(deviations),
        slack=slack,
        expansion_residual=expansion_identity_residual(
            1000, manifest.clip_dim, seed=seed + 1),
    )
