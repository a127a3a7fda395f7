"""
Anatomy of the network
======================

Build a small model, push one image through it and look at what each stage
hands to the next.
"""

import torch

from msmgnet import MSMGNet
from msmgnet.config import ModelConfig

torch.manual_seed(0)

# The default shunt ratios merge keys 8x and 4x at the finest scale, so a full
# 512x512 input stays cheap on a CPU.
cfg = ModelConfig()  # 512x512 input, ratios [8,4] [4,2] [2,1] [1], two blocks per scale
model = MSMGNet(cfg).eval()
x = torch.rand(1, 3, 512, 512)

###############################################################################
# The convolutional pyramid: strides 4, 8, 16 and 32.
with torch.no_grad():
    pyramid, grained = model.features(x)
for i, (f, g) in enumerate(zip(pyramid, grained), 1):
    print(f"scale {i}: backbone {tuple(f.shape)} -> grained {tuple(g.shape)}")

###############################################################################
# Each head group of a shunted attention layer sees its own key grid. Record
# the attention maps of the finest scale to see the key counts per group.
model.record_attention(True)
with torch.no_grad():
    model.features(x)
attn = model.grained.branches[0].blocks[-1].attn
for ratio, a in zip(attn.ratios, attn.last_attn):
    print(f"ratio {ratio}: {a.shape[-2]} queries attend to {a.shape[-1]} keys")
model.record_attention(False)

###############################################################################
# Both heads: a full-resolution segmentation map and a quarter-resolution
# edge map, each a probability.
out = model.predict(x)
print("s_seg", tuple(out.s_seg.shape), "s_edge", tuple(out.s_edge.shape))
print(f"parameters: {sum(p.numel() for p in model.parameters()):,}")
