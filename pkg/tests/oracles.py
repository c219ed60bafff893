"""Independent brute-force oracles, used only by tests.

Everything here recomputes results by direct enumeration from definitions,
deliberately sharing no helper code with the library implementations.
"""
import math

import numpy as np


def naive_conv1d(x, w, b, stride):
    """Triple-loop chunk convolution over a replicate-padded sequence."""
    c_in, length = x.shape
    c_out, _, k = w.shape
    pad = (-length) % k
    xp = np.zeros((c_in, length + pad))
    xp[:, :length] = x
    for p in range(pad):
        xp[:, length + p] = x[:, -1]
    n_out = (xp.shape[1] - k) // stride + 1
    out = np.zeros((c_out, n_out))
    for o in range(c_out):
        for i in range(n_out):
            acc = b[o]
            for c in range(c_in):
                for j in range(k):
                    acc += w[o, c, j] * xp[c, i * stride + j]
            out[o, i] = acc
    return out


def naive_matmul(x, w, b):
    """Loops over rows/outputs/inputs for an affine map."""
    n, d_in = x.shape
    d_out = w.shape[0]
    out = np.zeros((n, d_out))
    for i in range(n):
        for o in range(d_out):
            acc = b[o]
            for j in range(d_in):
                acc += x[i, j] * w[o, j]
            out[i, o] = acc
    return out


def naive_cosine(a, b):
    n, m = len(a), len(b)
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            num = sum(a[i][k] * b[j][k] for k in range(len(a[i])))
            na = math.sqrt(sum(v * v for v in a[i]))
            nb = math.sqrt(sum(v * v for v in b[j]))
            out[i, j] = num / max(na * nb, 1e-12)
    return out


def oracle_average_precision(relevance):
    """AP by enumerating every prefix."""
    relevance = list(relevance)
    ng = sum(1 for r in relevance if r)
    if ng == 0:
        return float("nan")
    total = 0.0
    for k in range(1, len(relevance) + 1):
        if relevance[k - 1]:
            hits = sum(1 for r in relevance[:k] if r)
            total += hits / k
    return total / ng


def oracle_ndcg(relevance):
    """Binary NDCG by direct summation."""
    relevance = list(relevance)
    ng = sum(1 for r in relevance if r)
    if ng == 0:
        return float("nan")
    dcg = 0.0
    for k, rel in enumerate(relevance, start=1):
        if rel:
            dcg += 1.0 / math.log2(k + 1)
    ideal = sum(1.0 / math.log2(k + 1) for k in range(1, ng + 1))
    return dcg / ideal


def oracle_nmrr(relevance, gtm, variant="gtm"):
    """Single-query normalized modified retrieval rank, literal formula."""
    relevance = list(relevance)
    ng = sum(1 for r in relevance if r)
    if ng == 0:
        return float("nan")
    k_q = min(4 * ng, 2 * gtm) if variant == "gtm" else 2 * ng
    ranks = [k + 1 for k, rel in enumerate(relevance) if rel]
    avr = sum(r if r <= k_q else 1.25 * k_q for r in ranks) / ng
    mrr = avr - 0.5 - ng / 2.0
    return mrr / (1.25 * k_q - 0.5 - ng / 2.0)


def oracle_anmrr(relevance_lists, variant="gtm"):
    ngs = [sum(1 for r in rl if r) for rl in relevance_lists]
    kept = [rl for rl, ng in zip(relevance_lists, ngs) if ng > 0]
    gtm = max((ng for ng in ngs if ng > 0), default=0)
    values = [oracle_nmrr(rl, gtm, variant) for rl in kept]
    return sum(values) / len(values)


def oracle_multi_similarity_loss(descriptors, labels, alpha=2.0, beta=50.0,
                                 threshold=0.5, margin=0.1):
    """Per-anchor double-loop loss with explicit mining, no vectorization."""
    n = len(descriptors)
    sims = [[sum(descriptors[i][k] * descriptors[j][k]
                 for k in range(len(descriptors[i]))) for j in range(n)]
            for i in range(n)]
    total = 0.0
    contributing = 0
    for i in range(n):
        pos_all = [j for j in range(n) if j != i and labels[j] == labels[i]]
        neg_all = [j for j in range(n) if labels[j] != labels[i]]
        if neg_all:
            hardest_neg = max(sims[i][j] for j in neg_all)
            pos = [j for j in pos_all if sims[i][j] <= hardest_neg + margin]
        else:
            pos = pos_all
        if pos_all:
            easiest_pos = min(sims[i][j] for j in pos_all)
            neg = [j for j in neg_all if sims[i][j] >= easiest_pos - margin]
        else:
            neg = []
        if not pos and not neg:
            continue
        contributing += 1
        pos_sum = sum(math.exp(-alpha * (sims[i][j] - threshold)) for j in pos)
        neg_sum = sum(math.exp(beta * (sims[i][j] - threshold)) for j in neg)
        total += math.log(1 + pos_sum) / alpha + math.log(1 + neg_sum) / beta
    if contributing == 0:
        return 0.0
    return total / contributing
