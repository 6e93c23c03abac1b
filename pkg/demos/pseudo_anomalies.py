"""
Pseudo anomalies by patch interpolation
=======================================

Training never sees a labelled abnormal image. Instead, a rectangle of one
normal image is blended into another, and the generator learns to undo it.
This script renders a few synthetic radiographs, builds pseudo anomalies from
them and reports where each blend landed.
"""
import numpy as np
import torch

from restore_ad.shapes import render_sample
from restore_ad.synthesis import SynthParams, paired_batch, synthesize_pseudo

rng = np.random.default_rng(0)
normals = torch.from_numpy(np.stack([render_sample(64, False, rng)[0][None]
                                     for _ in range(4)]).astype(np.float32))

###############################################################################
# One pseudo anomaly with an explicit blend weight.
params = SynthParams()
pa = synthesize_pseudo(normals[0], normals[1], params, np.random.default_rng(1),
                       source_id="n0", alpha=0.8)
ys, xs = np.nonzero(pa.mask)
print(f"patch rows {ys.min()}-{ys.max()}, cols {xs.min()}-{xs.max()}, alpha {pa.alpha}")
outside = (pa.image - normals[0]).abs()[0][~torch.from_numpy(pa.mask)]
print("max change outside the patch:", float(outside.max()))

###############################################################################
# A whole batch: each image borrows its patch from the next one.
pseudo, sources, masks = paired_batch(normals, params, np.random.default_rng(2))
for i in range(len(pseudo)):
    diff = (pseudo[i] - sources[i]).abs().max().item()
    print(f"image {i}: patch covers {masks[i].mean():.1%} of pixels, max change {diff:.3f}")
