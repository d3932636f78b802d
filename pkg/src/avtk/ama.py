"""Audio-guided modality alignment.

Cross-modal fusion of visual tokens with a single audio token, relevance
scoring, sound-guided merging of semantic groups into compact per-group
features, decoder-style refinement, remapping onto the token map, and the
contrastive audio-visual alignment loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .grouping import GroupAssignment, group_tokens


class ConfigurationError(ValueError):
    """Raised for inconsistent dimensions or head counts."""


@dataclass
class AmaLevelConfig:
    """Per-level settings for one alignment block."""

    level: int
    dim: int
    num_groups: int
    heads: int = 4
    decoder_depth: int = 2
    knn_k: int | None = None

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ConfigurationError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.num_groups < 1:
            raise ConfigurationError("num_groups must be >= 1")


@dataclass
class ContrastiveConfig:
    sigma_p: float = 5.0
    tau: float = 0.1
    epsilon_a: float = 0.5

    def __post_init__(self):
        if self.tau <= 0 or self.sigma_p <= 0 or not 0 < self.epsilon_a < 1:
            raise ConfigurationError("need tau > 0, sigma_p > 0, 0 < epsilon_a < 1")


@dataclass
class AlignmentScores:
    """Audio-visual similarities and the threshold-based sample partition."""

    a: Tensor                 # (P,) dot-product similarities (differentiable)
    i: np.ndarray             # (P,) sigmoid(sigma_p * a), detached
    pos_indices: np.ndarray   # indices with i > epsilon_a
    neg_indices: np.ndarray   # indices with i < epsilon_a


# -- parameter construction ----------------------------------------------------


def _init(rng, fan_in, shape):
    return Tensor((rng.standard_normal(shape) / np.sqrt(fan_in)).astype(np.float32),
                  requires_grad=True)


def init_attention_params(rng, dim, kv_dim=None):
    """Projection weights for multi-head attention (queries dim, keys/values kv_dim)."""
    kv_dim = dim if kv_dim is None else kv_dim
    return {
        "wq": _init(rng, dim, (dim, dim)),
        "wk": _init(rng, kv_dim, (kv_dim, dim)),
        "wv": _init(rng, kv_dim, (kv_dim, dim)),
        "wo": _init(rng, dim, (dim, dim)),
        "bo": Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True),
    }


def init_ama_params(rng, dim, audio_dim):
    """All learnable tensors for one alignment block, flat key -> Tensor."""
    p = {
        "audio_w": _init(rng, audio_dim, (audio_dim, dim)),
        "audio_b": Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True),
        "mlp_w1": _init(rng, dim, (dim, dim)),
        "mlp_b1": Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True),
        "mlp_w2": _init(rng, dim, (dim, 1)),
        "mlp_b2": Tensor(np.zeros(1, dtype=np.float32), requires_grad=True),
    }
    for k, v in init_attention_params(rng, dim).items():
        p[f"mca_{k}"] = v
    return p


# -- attention -----------------------------------------------------------------


def multi_head_attention(queries, keyvals, params, heads, prefix=""):
    """Residual multi-head attention; ``queries`` (..., N, D), ``keyvals`` (..., M, Dk)."""
    wq, wk = params[prefix + "wq"], params[prefix + "wk"]
    wv, wo, bo = params[prefix + "wv"], params[prefix + "wo"], params[prefix + "bo"]
    dim = wq.shape[1]
    if heads <= 0 or dim % heads:
        raise ConfigurationError(f"dim {dim} not divisible by heads {heads}")
    dh = dim // heads
    n = queries.shape[-2]
    m = keyvals.shape[-2]
    lead = queries.shape[:-2]

    def split(x, count):
        x = ad.reshape(x, lead + (count, heads, dh))
        axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        return ad.transpose(x, axes)  # (..., heads, count, dh)

    q = split(ad.matmul(queries, wq), n)
    k = split(ad.matmul(keyvals, wk), m)
    v = split(ad.matmul(keyvals, wv), m)
    logits = ad.mul(ad.matmul(q, ad.transpose(k, tuple(range(k.data.ndim - 2)) + (k.data.ndim - 1, k.data.ndim - 2))),
                    1.0 / np.sqrt(dh))
    attn = ad.softmax(logits, axis=-1)
    out = ad.matmul(attn, v)  # (..., heads, N, dh)
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    out = ad.reshape(ad.transpose(out, axes), lead + (n, dim))
    return ad.add(queries, ad.add(ad.matmul(out, wo), bo))


def project_audio(params, f_a):
    """Linear map of the raw audio feature into the level's visual dimension."""
    f_a = ad.as_tensor(f_a)
    if f_a.shape[-1] != params["audio_w"].shape[0]:
        raise ConfigurationError(
            f"audio feature dim {f_a.shape[-1]} != projection input {params['audio_w'].shape[0]}")
    return ad.add(ad.matmul(f_a, params["audio_w"]), params["audio_b"])


def cross_attend(params, f_v, f_a, heads=4):
    """Audio-visual interaction: visual tokens query the projected audio token."""
    f_v = ad.as_tensor(f_v)
    a = project_audio(params, f_a)
    kv = ad.reshape(a, (1, a.shape[-1]))
    return multi_head_attention(f_v, kv, params, heads, prefix="mca_")


# -- relevance and merging -----------------------------------------------------


def relevance_scores(params, f_hat):
    """Per-token scalar from a two-layer MLP on the fused tokens."""
    h = ad.gelu(ad.add(ad.matmul(f_hat, params["mlp_w1"]), params["mlp_b1"]))
    s = ad.add(ad.matmul(h, params["mlp_w2"]), params["mlp_b2"])
    return ad.reshape(s, (f_hat.shape[0],))


def merge_groups(f_hat, s, ga: GroupAssignment):
    """Softmax-weighted sum of each group's tokens; weights from relevance scores.

    Scores are shifted by the per-group maximum before exponentiation.  The
    shift is treated as a constant: group softmax weights are invariant to it,
    so the gradient is unchanged.
    """
    f_hat = ad.as_tensor(f_hat)
    n = f_hat.shape[0]
    assert ga.labels.size == n, "group assignment does not cover the token map"
    assert (ga.group_sizes() > 0).all(), "empty group"
    m = Tensor(ga.membership(dtype=f_hat.dtype))
    gmax = np.full(ga.num_groups, -np.inf)
    np.maximum.at(gmax, ga.labels, np.asarray(s.data, dtype=np.float64))
    shift = Tensor(gmax[ga.labels].astype(s.dtype))
    e = ad.reshape(ad.exp(ad.sub(s, shift)), (n, 1))
    denom = ad.matmul(m, e)                    # (P, 1) per-group partition sums
    numer = ad.matmul(m, ad.mul(e, f_hat))     # (P, D)
    return ad.div(numer, denom)


def update_compact(g, f_v, s, depth=2):
    """Refine compact features with decoder-style attention over the token map.

    Each layer: row-softmax of (G f_v^T / sqrt(D) + S) applied to f_v, added
    residually.  S is per visual token (per key) and is broadcast to every
    query row.
    """
    if depth < 1:
        raise ConfigurationError("decoder depth must be >= 1")
    f_v = ad.as_tensor(f_v)
    dim = f_v.shape[-1]
    s_row = ad.reshape(s, (1, s.shape[0]))
    for _ in range(depth):
        logits = ad.add(ad.mul(ad.matmul(g, ad.transpose(f_v, (1, 0))), 1.0 / np.sqrt(dim)), s_row)
        attn = ad.softmax(logits, axis=1)
        g = ad.add(g, ad.matmul(attn, f_v))
    return g


def remap(g, ga: GroupAssignment, f_v):
    """Add each token's group feature back onto the token map."""
    f_v = ad.as_tensor(f_v)
    return ad.add(f_v, ad.take(g, ga.labels, axis=0))


# -- contrastive alignment -----------------------------------------------------


def alignment_scores(f_a, g_hat, cfg: ContrastiveConfig):
    """Cosine similarities of normalized audio vs compact rows, partitioned by
    the sigmoid-scaled response against ``epsilon_a``.

    Scores exactly at the threshold belong to neither set.  The partition is
    computed on detached values and treated as constant by the loss.
    """
    f_a = ad.as_tensor(f_a)
    g_hat = ad.as_tensor(g_hat)
    a = ad.matmul(g_hat, f_a)  # (P,)
    with np.errstate(over="ignore"):
        i = 1.0 / (1.0 + np.exp(-cfg.sigma_p * np.asarray(a.data, dtype=np.float64)))
    pos = np.flatnonzero(i > cfg.epsilon_a)
    neg = np.flatnonzero(i < cfg.epsilon_a)
    return AlignmentScores(a=a, i=i, pos_indices=pos, neg_indices=neg)


@dataclass
class ContrastiveCounters:
    empty_positive: int = 0


def contrastive_loss(scores: AlignmentScores, cfg: ContrastiveConfig,
                     counters: ContrastiveCounters | None = None):
    """InfoNCE-style ratio of positive to all responses, log-sum-exp stabilized.

    Empty positive set: contributes 0 and bumps ``counters.empty_positive``
    (silent clips legitimately have no positives).  Empty negative set: the
    ratio is 1, loss exactly 0.
    """
    zero = Tensor(np.zeros((), dtype=scores.a.dtype))
    if scores.pos_indices.size == 0:
        if counters is not None:
            counters.empty_positive += 1
        return zero
    if scores.neg_indices.size == 0:
        return zero
    ap = ad.mul(ad.take(scores.a, scores.pos_indices), 1.0 / cfg.tau)
    an = ad.mul(ad.take(scores.a, scores.neg_indices), 1.0 / cfg.tau)
    both = ad.concat([ap, an], axis=0)
    return ad.sub(ad.logsumexp(both), ad.logsumexp(ap))


# -- block composition ---------------------------------------------------------


@dataclass
class AmaBlockResult:
    tokens: Tensor            # remapped token map, feeds the next encoder block
    compact: Tensor           # (P, D) refined compact representation
    assignment: GroupAssignment
    relevance: Tensor         # (N,) scores
    audio_proj: Tensor        # (D,) projected audio feature


def ama_block(params, f_v, f_a, cfg: AmaLevelConfig, fixed_assignment=None):
    """Full per-level pipeline: attend, group, score, merge, refine, remap.

    Grouping runs on the pre-attention tokens.  ``fixed_assignment`` freezes
    the (non-differentiable) grouping, e.g. for finite-difference checks.
    """
    f_v = ad.as_tensor(f_v)
    f_hat = cross_attend(params, f_v, f_a, heads=cfg.heads)
    ga = fixed_assignment if fixed_assignment is not None else \
        group_tokens(f_v.data, cfg.num_groups, cfg.knn_k)
    s = relevance_scores(params, f_hat)
    g = merge_groups(f_hat, s, ga)
    g = update_compact(g, f_v, s, depth=cfg.decoder_depth)
    tokens = remap(g, ga, f_hat)
    audio = project_audio(params, f_a)
    return AmaBlockResult(tokens=tokens, compact=g, assignment=ga,
                          relevance=s, audio_proj=audio)
