"""Finite-difference verification suite at tiny shapes.

Shared by the command-line ``gradcheck`` entry point and the test suite.
Every check freezes the discrete choices (group labels, contrastive
partitions) and runs the forward pass in float64.
"""

from __future__ import annotations

import numpy as np

from . import ama, autodiff as ad, model, uncertainty
from .autodiff import Tensor
from .gradcheck import grad_check, grad_check_params
from .grouping import group_tokens
from .rng import make_rng

FULL_MODEL_TOL = 1e-3
COMPONENT_TOL = 1e-4


def tiny_config(seed=0):
    return model.ModelConfig(image_size=16, strides=(4, 8, 16), dims=(8, 8, 8),
                             groups=(3, 2, 1), num_classes=3, num_frames=2,
                             heads=2, audio_dim=4, audio_embed=4, fused_dim=8,
                             seed=seed)


def tiny_clip(cfg, rng):
    frames = rng.standard_normal((cfg.num_frames, cfg.image_size, cfg.image_size, 3))
    audio = rng.standard_normal((cfg.num_frames, cfg.audio_dim))
    gt = rng.integers(0, cfg.num_classes,
                      size=(cfg.num_frames, cfg.image_size, cfg.image_size))
    return {"frames": frames, "audio": audio, "gt": gt}


def check_contrastive(seed=0, h=1e-4):
    """Gradient of the contrastive loss w.r.t. raw similarities."""
    rng = make_rng(seed)
    ccfg = ama.ContrastiveConfig()
    a0 = rng.uniform(-1, 1, size=8)
    # partition fixed from the unperturbed scores
    scores0 = ama.alignment_scores(Tensor(np.ones(1)), Tensor(a0[:, None]), ccfg)

    def f(x):
        s = ama.AlignmentScores(a=ad.reshape(x, (8,)), i=scores0.i,
                                pos_indices=scores0.pos_indices,
                                neg_indices=scores0.neg_indices)
        return ama.contrastive_loss(s, ccfg)

    return grad_check(f, a0, h=h)


def check_seg_loss(seed=0, h=1e-4):
    rng = make_rng(seed)
    t, c, hh, ww = 2, 3, 4, 4
    scores = rng.uniform(0.1, 2.0, size=(t, c, hh, ww))
    gt = rng.integers(0, c, size=(t, hh, ww))

    def f(x):
        return model.seg_loss(x, gt)

    return grad_check(f, scores, h=h)


def check_ama_block(seed=0, h=1e-4):
    """Gradients through the whole alignment block (labels held fixed)."""
    rng = make_rng(seed)
    dim, n, audio_dim = 8, 12, 4
    lcfg = ama.AmaLevelConfig(level=0, dim=dim, num_groups=3, heads=2, decoder_depth=2)
    params = ama.init_ama_params(rng, dim, audio_dim)
    f_v0 = rng.standard_normal((n, dim))
    f_a0 = rng.standard_normal(audio_dim)
    ga = group_tokens(f_v0, lcfg.num_groups)

    def run(f_v, f_a, prm):
        res = ama.ama_block(prm, f_v, f_a, lcfg, fixed_assignment=ga)
        return ad.reduce_sum(ad.mul(res.tokens, res.tokens)) + ad.reduce_sum(res.compact)

    errs = {}
    errs["f_v"] = grad_check(lambda x: run(x, Tensor(f_a0.astype(np.float64)),
                                           _to64(params)), f_v0, h=h)
    errs["f_a"] = grad_check(lambda x: run(Tensor(f_v0.astype(np.float64)), x,
                                           _to64(params)), f_a0, h=h)
    perrs = grad_check_params(lambda prm: run(Tensor(f_v0.astype(np.float64)),
                                              Tensor(f_a0.astype(np.float64)), prm),
                              params, h=h)
    errs.update({f"param:{k}": v for k, v in perrs.items()})
    return max(errs.values())


def check_temporal_attention(seed=0, h=1e-4):
    rng = make_rng(seed)
    d = 8
    fused0 = rng.standard_normal((3, 2, 2, d))
    params = {f"temp_{k}": v for k, v in ama.init_attention_params(rng, d).items()}

    def run(x, prm):
        out = model.temporal_attention(prm, x, heads=2)
        return ad.reduce_sum(ad.mul(out, out))

    e1 = grad_check(lambda x: run(x, _to64(params)), fused0, h=h)
    e2 = max(grad_check_params(lambda prm: run(Tensor(fused0), prm), params, h=h).values())
    return max(e1, e2)


def check_uncertainty_path(seed=0, h=1e-4):
    """Loss through softplus evidence and the Dirichlet variance."""
    rng = make_rng(seed)
    logits = rng.standard_normal((2, 4, 3, 3))

    def f(x):
        alpha = uncertainty.dirichlet_params(x)
        delta = uncertainty.pixel_uncertainty(alpha)
        return ad.reduce_sum(ad.mul(delta, delta))

    return grad_check(f, logits, h=h)


def check_full_model(seed=0, h=3e-7, max_coords=None):
    """End-to-end loss gradient for the tiny model, all parameters."""
    cfg = tiny_config(seed)
    rng = make_rng(seed)
    clip = tiny_clip(cfg, rng)
    params = model.init_params(cfg, make_rng(seed + 1))
    # one pass to capture group labels and contrastive partitions
    _, _, _, res = model.clip_loss(params, cfg, clip)
    frozen = res.frozen

    def f(prm):
        loss, _, _, _ = model.clip_loss(prm, cfg, clip, frozen=frozen)
        return loss

    errs = grad_check_params(f, params, h=h, max_coords=max_coords, rng=make_rng(seed + 2))
    return max(errs.values())


def run_suite(seed=0, corrupt=False, full_model_coords=None):
    """All checks; returns {name: (error, tolerance)}."""
    results = {
        "contrastive_loss": (check_contrastive(seed), COMPONENT_TOL),
        "seg_loss": (check_seg_loss(seed), COMPONENT_TOL),
        "ama_block": (check_ama_block(seed), COMPONENT_TOL),
        "temporal_attention": (check_temporal_attention(seed), COMPONENT_TOL),
        "uncertainty_path": (check_uncertainty_path(seed), COMPONENT_TOL),
        "full_model": (check_full_model(seed, max_coords=full_model_coords), FULL_MODEL_TOL),
    }
    if corrupt:
        results["corrupted_adjoint"] = (_check_corrupted(seed), COMPONENT_TOL)
    return results


def _check_corrupted(seed=0):
    """A deliberately wrong backward map; must fail the check (self-test)."""
    rng = make_rng(seed)
    x0 = rng.standard_normal(6)

    def bad_square(x):
        out = x.data * x.data
        # wrong by 10%: adjoint uses 1.8x instead of 2x
        return Tensor(out, _parents=(x,), _backward_fn=lambda g: (g * 1.8 * x.data,))

    return grad_check(lambda x: ad.reduce_sum(bad_square(x)), x0)


def _to64(params):
    return {k: Tensor(np.asarray(v.data, dtype=np.float64)) for k, v in params.items()}
