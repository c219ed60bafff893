"""Every gradient in the pipeline is hand-derived; this walks the checker.

The harness perturbs each parameter scalar by +-h and compares the central
difference against the analytic gradient. Ops are checked individually and
then composed end to end (adapter feeding the metric loss).
"""
import numpy as np

import mvadapt.kernels as K
from mvadapt.adapter import AdapterConfig, adapter_backward, adapter_forward, init_adapter_params
from mvadapt.training import multi_similarity_loss

rng = np.random.default_rng(0)

# single op: chunk convolution with stride 2 over a replicate-padded sequence
x = K.ParamBlock.create("x", rng.standard_normal((2, 3, 7)), "adapter")
w = K.ParamBlock.create("w", rng.standard_normal((4, 3, 3)) * 0.3, "adapter")
b = K.ParamBlock.create("b", rng.standard_normal(4) * 0.1, "adapter")
target = rng.standard_normal((2, 4, 4))


def conv_loss():
    out, _ = K.conv1d_chunk_forward(x.value, w.value, b.value, stride=2)
    return 0.5 * ((out - target) ** 2).mean()


out, cache = K.conv1d_chunk_forward(x.value, w.value, b.value, stride=2)
dx, dw, db = K.conv1d_chunk_backward((out - target) / out.size, cache)
x.grad[...], w.grad[...], b.grad[...] = dx, dw, db
print(f"conv1d_chunk       max rel err {K.finite_difference_check(conv_loss, [x, w, b]):.2e}")

# composite: views -> adapter -> normalized descriptors -> pair-based loss
cfg = AdapterConfig(dino_dim=6, chunk_size=3, pool_kernel=2, fusion_weight=0.4)
params = init_adapter_params(cfg, rng)
views = K.ParamBlock.create("views", rng.standard_normal((8, 9, 6)), "adapter")
labels = np.repeat([0, 1], 4)


def pipeline_loss():
    import copy
    p = copy.deepcopy(params)
    desc, _ = adapter_forward(views.value, cfg, p, mode="train", bn_mode="eval")
    loss, _ = multi_similarity_loss(desc, labels)
    return loss


import copy

probe = copy.deepcopy(params)
desc, cache = adapter_forward(views.value, cfg, probe, mode="train", bn_mode="eval")
loss, ddesc = multi_similarity_loss(desc, labels)
views.grad[...] = adapter_backward(ddesc, cache, cfg, probe)
for src, dst in zip(probe.param_blocks(), params.param_blocks()):
    dst.grad[...] = src.grad
err = K.finite_difference_check(pipeline_loss, params.param_blocks() + [views])
print(f"adapter + loss     max rel err {err:.2e}   (loss value {loss:.4f})")
print("tolerance everywhere: 1e-5")
