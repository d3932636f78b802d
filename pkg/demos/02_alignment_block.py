"""One alignment block, step by step, on random features.

Shows the intermediate shapes: cross-attention against a single audio
token, grouping, relevance scores, the merged compact features, and the
contrastive partition.

Run:  python demos/02_alignment_block.py
"""

import numpy as np

from avtk import ama
from avtk.ama import AmaLevelConfig, ContrastiveConfig
from avtk.autodiff import Tensor
from avtk import autodiff as ad
from avtk.rng import make_rng

rng = make_rng(1)
n_tokens, dim, audio_dim, groups = 64, 16, 8, 5

params = ama.init_ama_params(rng, dim, audio_dim)
f_v = Tensor(rng.standard_normal((n_tokens, dim)).astype(np.float32))
f_a = Tensor(rng.standard_normal(audio_dim).astype(np.float32))

cfg = AmaLevelConfig(level=0, dim=dim, num_groups=groups, heads=4)
res = ama.ama_block(params, f_v, f_a, cfg)

print("fused tokens:   ", res.tokens.shape)
print("compact features:", res.compact.shape)
print("relevance range: %.3f .. %.3f" % (res.relevance.data.min(),
                                         res.relevance.data.max()))
print("group sizes:    ", res.assignment.group_sizes().tolist())

# Alignment scores partition the groups by their audio response.
ccfg = ContrastiveConfig()
g_hat = ad.l2_normalize(res.compact, axis=1)
a_hat = ad.l2_normalize(res.audio_proj, axis=0)
scores = ama.alignment_scores(a_hat, g_hat, ccfg)
print("similarities:   ", np.round(scores.a.data, 3))
print("positives:", scores.pos_indices.tolist(), " negatives:", scores.neg_indices.tolist())
loss = ama.contrastive_loss(scores, ccfg)
print("contrastive loss: %.4f" % float(loss.data))

# The loss is differentiable end to end; gradients reach the raw tokens.
f_v2 = Tensor(f_v.data, requires_grad=True)
res2 = ama.ama_block(params, f_v2, f_a, cfg, fixed_assignment=res.assignment)
s2 = ama.alignment_scores(a_hat, ad.l2_normalize(res2.compact, axis=1), ccfg)
ama.contrastive_loss(s2, ccfg).backward()
print("token gradient norm: %.4f" % np.linalg.norm(f_v2.grad))
