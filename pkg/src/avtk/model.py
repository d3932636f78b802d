"""Miniature end-to-end audio-visual segmentation pipeline.

Toy multi-scale patch encoders, a linear audio embedding, one alignment
block per level, an upsample-and-sum decoder, temporal attention over
frames, segmentation and uncertainty heads, the combined loss, and a small
Adam training loop.  Everything runs on the minimal autodiff tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import ama, autodiff as ad, metrics, uncertainty
from .ama import (AlignmentScores, AmaLevelConfig, ContrastiveConfig,
                  ContrastiveCounters)
from .autodiff import Tensor
from .rng import make_rng
from .synthdata import SyntheticSample

ABLATION_FLAGS = ("no-sgsm", "no-cst", "no-ue")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    image_size: int = 64
    strides: tuple = (4, 8, 16)
    dims: tuple = (32, 48, 64)
    groups: tuple = (14, 7, 5)
    num_classes: int = 5
    num_frames: int = 4
    heads: int = 4
    decoder_depth: int = 2
    audio_dim: int = 16
    audio_embed: int = 32
    fused_dim: int = 64
    sigma_p: float = 5.0
    tau: float = 0.1
    epsilon_a: float = 0.5
    lambda_seg: float = 1.0
    lambda_cst: float = 0.1
    lr: float = 1e-3
    lr_final_frac: float = 0.1     # cosine decay floor as a fraction of lr; 1 = constant
    warmup_steps: int = 0          # linear lr ramp-in before the cosine decay
    grad_clip: float = 5.0         # global gradient-norm ceiling; <= 0 disables
    steps: int = 3000
    batch_size: int = 2
    eval_every: int = 100
    knn_k: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.image_size % self.strides[-1] != 0:
            raise ConfigError(f"image size {self.image_size} not divisible by {self.strides[-1]}")
        if len(self.strides) != len(self.dims) or len(self.dims) != len(self.groups):
            raise ConfigError("strides, dims and groups must have equal length")
        for d in self.dims:
            if d % self.heads:
                raise ConfigError(f"dim {d} not divisible by heads {self.heads}")
        for st, p in zip(self.strides, self.groups):
            n = (self.image_size // st) ** 2
            if not 1 <= p <= n:
                raise ConfigError(f"group count {p} invalid for {n} tokens at stride {st}")
        if self.lambda_seg <= 0 or self.lambda_cst < 0:
            raise ConfigError("loss weights must be positive (lambda_cst may be 0)")

    def grid(self, level):
        return self.image_size // self.strides[level]

    def level_config(self, level):
        return AmaLevelConfig(level=level, dim=self.dims[level],
                              num_groups=self.groups[level], heads=self.heads,
                              decoder_depth=self.decoder_depth, knn_k=self.knn_k)

    def contrastive(self):
        return ContrastiveConfig(sigma_p=self.sigma_p, tau=self.tau,
                                 epsilon_a=self.epsilon_a)

    def to_dict(self):
        d = asdict(self)
        for key in ("strides", "dims", "groups"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("strides", "dims", "groups"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def normalize_ablation(flags):
    """Canonical frozenset of ablation switches; 'no-sgsm' implies 'no-cst'."""
    if flags is None or flags == "none":
        flags = ()
    if isinstance(flags, str):
        flags = [f for f in flags.split(",") if f and f != "none"]
    out = set(flags)
    bad = out - set(ABLATION_FLAGS)
    if bad:
        raise ConfigError(f"unknown ablation flags: {sorted(bad)}")
    if "no-sgsm" in out:
        out.add("no-cst")  # no compact representations, nothing to contrast
    return frozenset(out)


# -- parameters ----------------------------------------------------------------


def _linear(rng, fan_in, fan_out):
    w = Tensor((rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)).astype(np.float32),
               requires_grad=True)
    b = Tensor(np.zeros(fan_out, dtype=np.float32), requires_grad=True)
    return w, b


def init_params(cfg: ModelConfig, rng):
    """All learnable tensors, flat name -> Tensor."""
    p = {}
    in_dim = 3 * cfg.strides[0] ** 2
    for l in range(len(cfg.dims)):
        if l > 0:
            factor = cfg.strides[l] // cfg.strides[l - 1]
            in_dim = cfg.dims[l - 1] * factor * factor
        p[f"enc{l}_w"], p[f"enc{l}_b"] = _linear(rng, in_dim, cfg.dims[l])
        for k, v in ama.init_ama_params(rng, cfg.dims[l], cfg.audio_embed).items():
            p[f"ama{l}_{k}"] = v
        p[f"dec{l}_w"], _ = _linear(rng, cfg.dims[l], cfg.fused_dim)
    p["audio_w"], p["audio_b"] = _linear(rng, cfg.audio_dim, cfg.audio_embed)
    p["dec_b"] = Tensor(np.zeros(cfg.fused_dim, dtype=np.float32), requires_grad=True)
    for k, v in ama.init_attention_params(rng, cfg.fused_dim).items():
        p[f"temp_{k}"] = v
    p["seg_w"], p["seg_b"] = _linear(rng, cfg.fused_dim, cfg.num_classes)
    p["unc_w"], p["unc_b"] = _linear(rng, cfg.fused_dim, cfg.num_classes)
    return p


def detach_params(params):
    return {k: Tensor(v.data) for k, v in params.items()}


def level_params(params, level):
    prefix = f"ama{level}_"
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


# -- forward pieces ------------------------------------------------------------


def patchify(x, factor):
    """(T, H, W, D) -> (T, (H/f)*(W/f), f*f*D) non-overlapping patches."""
    t, h, w, d = x.shape
    gh, gw = h // factor, w // factor
    x = ad.reshape(x, (t, gh, factor, gw, factor, d))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (t, gh * gw, factor * factor * d))


def audio_encoder(params, audio):
    """Linear embedding of the per-frame audio descriptors, GELU nonlinearity."""
    return ad.gelu(ad.add(ad.matmul(ad.as_tensor(audio), params["audio_w"]),
                          params["audio_b"]))


def visual_encoder_level(params, cfg, level, x):
    """One toy encoder block: patch extraction + linear + GELU.

    ``x`` is the image (T, H, W, 3) at level 0, else the previous level's
    token grid (T, g, g, D).
    """
    factor = cfg.strides[0] if level == 0 else cfg.strides[level] // cfg.strides[level - 1]
    patches = patchify(x, factor)
    return ad.gelu(ad.add(ad.matmul(patches, params[f"enc{level}_w"]),
                          params[f"enc{level}_b"]))


def mask_decoder(params, cfg, level_tokens):
    """Upsample-and-sum fusion of all levels at the 1/4-scale grid."""
    g0 = cfg.grid(0)
    total = None
    for l, tokens in enumerate(level_tokens):
        gl = cfg.grid(l)
        proj = ad.matmul(tokens, params[f"dec{l}_w"])
        grid = ad.reshape(proj, (proj.shape[0], gl, gl, cfg.fused_dim))
        if gl != g0:
            grid = ad.upsample2d(grid, g0 // gl, axes=(1, 2))
        total = grid if total is None else ad.add(total, grid)
    return ad.gelu(ad.add(total, params["dec_b"]))


def temporal_attention(params, fused, heads=4):
    """Self-attention across the frame axis at each spatial location.

    ``fused`` is (T, H, W, D); tokens are frames, no positional encoding.
    """
    t, h, w, d = fused.shape
    x = ad.reshape(fused, (t, h * w, d))
    x = ad.transpose(x, (1, 0, 2))  # (positions, T, D)
    out = ama.multi_head_attention(x, x, params, heads=heads, prefix="temp_")
    out = ad.transpose(out, (1, 0, 2))
    return ad.reshape(out, (t, h, w, d))


def _head(params, name, fused, num_classes):
    t, h, w, d = fused.shape
    x = ad.reshape(fused, (t * h * w, d))
    logits = ad.add(ad.matmul(x, params[f"{name}_w"]), params[f"{name}_b"])
    logits = ad.reshape(logits, (t, h, w, num_classes))
    return ad.transpose(logits, (0, 3, 1, 2))  # (T, C, H, W)


@dataclass
class ForwardResult:
    y_hat: Tensor                    # (T, C, Hf, Wf) uncertainty-weighted scores
    seg_logits: Tensor               # (T, C, Hf, Wf)
    alpha: Tensor | None
    delta_norm: Tensor               # (T, C, Hf, Wf)
    alignments: list                 # per frame AlignmentScores (empty if ablated)
    compacts: list                   # per level: list of per-frame compact Tensors
    assignments: list                # per level: list of per-frame GroupAssignments
    frozen: dict                     # reusable discrete choices (groups, partitions)


def forward(params, cfg: ModelConfig, clip, ablate=frozenset(), frozen=None):
    """Run the full pipeline on one clip.

    ``frozen`` optionally pins the discrete choices (group assignments and
    contrastive partitions) from an earlier pass, which keeps the computation
    differentiable for finite-difference checks.
    """
    ablate = normalize_ablation(ablate)
    dtype = next(iter(params.values())).data.dtype
    frames = np.asarray(clip.frames if isinstance(clip, SyntheticSample) else clip["frames"])
    audio = np.asarray(clip.audio if isinstance(clip, SyntheticSample) else clip["audio"])
    t_len = frames.shape[0]
    x = Tensor(frames.astype(dtype))
    f_a = audio_encoder(params, Tensor(audio.astype(dtype)))  # (T, audio_embed)

    frozen = frozen or {}
    frozen_out = {"groups": [], "partitions": []}
    level_tokens = []
    compacts, assignments = [], []
    src = x
    for l in range(len(cfg.dims)):
        tokens = visual_encoder_level(params, cfg, l, src)
        lcfg = cfg.level_config(l)
        lp = level_params(params, l)
        frame_outs, frame_compacts, frame_gas = [], [], []
        for t in range(t_len):
            f_v = ad.reshape(ad.take(tokens, [t], axis=0), (tokens.shape[1], tokens.shape[2]))
            fa_t = ad.reshape(ad.take(f_a, [t], axis=0), (f_a.shape[1],))
            if "no-sgsm" in ablate:
                frame_outs.append(ama.cross_attend(lp, f_v, fa_t, heads=cfg.heads))
                continue
            fixed = frozen.get("groups", [None] * len(cfg.dims))[l]
            fixed_t = fixed[t] if fixed is not None else None
            res = ama.ama_block(lp, f_v, fa_t, lcfg, fixed_assignment=fixed_t)
            frame_outs.append(res.tokens)
            frame_compacts.append(res.compact)
            frame_gas.append(res.assignment)
        out = ad.stack(frame_outs, axis=0)
        level_tokens.append(out)
        compacts.append(frame_compacts)
        assignments.append(frame_gas)
        frozen_out["groups"].append(frame_gas if frame_gas else None)
        grid = cfg.grid(l)
        src = ad.reshape(out, (t_len, grid, grid, cfg.dims[l]))

    fused = mask_decoder(params, cfg, level_tokens)
    fused = temporal_attention(params, fused, heads=cfg.heads)
    m = _head(params, "seg", fused, cfg.num_classes)

    if "no-ue" in ablate:
        alpha = None
        delta_norm = Tensor(np.zeros(m.shape, dtype=dtype))
    else:
        alpha = uncertainty.dirichlet_params(_head(params, "unc", fused, cfg.num_classes))
        delta = uncertainty.pixel_uncertainty(alpha, class_axis=1)
        delta_norm = uncertainty.normalize_uncertainty(delta)
    y_hat = uncertainty.weighted_prediction(m, delta_norm)

    alignments = []
    if "no-cst" not in ablate:
        ccfg = cfg.contrastive()
        lp_last = level_params(params, len(cfg.dims) - 1)
        fixed_parts = frozen.get("partitions")
        for t in range(t_len):
            g_hat = ad.l2_normalize(compacts[-1][t], axis=1)
            fa_t = ad.reshape(ad.take(f_a, [t], axis=0), (f_a.shape[1],))
            fa_hat = ad.l2_normalize(ama.project_audio(lp_last, fa_t), axis=0)
            scores = ama.alignment_scores(fa_hat, g_hat, ccfg)
            if fixed_parts is not None:
                pos, neg = fixed_parts[t]
                scores = AlignmentScores(a=scores.a, i=scores.i,
                                         pos_indices=pos, neg_indices=neg)
            alignments.append(scores)
        frozen_out["partitions"] = [(s.pos_indices, s.neg_indices) for s in alignments]

    return ForwardResult(y_hat=y_hat, seg_logits=m, alpha=alpha, delta_norm=delta_norm,
                         alignments=alignments, compacts=compacts,
                         assignments=assignments, frozen=frozen_out)


# -- losses --------------------------------------------------------------------


def seg_loss(y_hat, gt, smoothing=1.0):
    """Cross-entropy + soft-Dice + soft-IoU on renormalized class scores.

    ``y_hat`` is (T, C, H, W) nonnegative scores, ``gt`` integer labels
    (T, H, W).  Scores are renormalized to a distribution per pixel first.
    """
    y_hat = ad.as_tensor(y_hat)
    t_len, c, h, w = y_hat.shape
    gt = np.asarray(gt)
    if gt.min() < 0 or gt.max() >= c:
        raise DataError(f"gt labels outside [0, {c})")
    one_hot = np.zeros((t_len, c, h, w), dtype=y_hat.dtype)
    np.put_along_axis(one_hot, gt[:, None], 1.0, axis=1)
    one_hot = Tensor(one_hot)

    p = ad.div(y_hat, ad.reduce_sum(y_hat, axis=1, keepdims=True))
    ce = ad.mul(ad.reduce_mean(ad.log(ad.reduce_sum(ad.mul(p, one_hot), axis=1))), -1.0)

    # foreground channels only, per frame and class, summed over pixels
    fg = ad.reshape(p, (t_len, c, h * w))
    fg = ad.take(fg, np.arange(1, c), axis=1)
    gt_fg = ad.take(ad.reshape(one_hot, (t_len, c, h * w)), np.arange(1, c), axis=1)
    inter = ad.reduce_sum(ad.mul(fg, gt_fg), axis=2)
    psum = ad.reduce_sum(fg, axis=2)
    gsum = ad.reduce_sum(gt_fg, axis=2)
    dice = ad.sub(1.0, ad.div(ad.mul(inter, 2.0), ad.add(ad.add(psum, gsum), smoothing)))
    iou = ad.sub(1.0, ad.div(inter, ad.add(ad.sub(ad.add(psum, gsum), inter), smoothing)))
    return ad.add(ce, ad.add(ad.reduce_mean(dice), ad.reduce_mean(iou)))


def contrastive_clip_loss(alignments, cfg: ModelConfig, counters=None):
    """Per-frame contrastive losses averaged over the clip."""
    if not alignments:
        return Tensor(np.zeros(()))
    ccfg = cfg.contrastive()
    terms = [ama.contrastive_loss(s, ccfg, counters) for s in alignments]
    total = terms[0]
    for term in terms[1:]:
        total = ad.add(total, term)
    return ad.mul(total, 1.0 / len(terms))


def total_loss(seg, cst, cfg: ModelConfig):
    return ad.add(ad.mul(seg, cfg.lambda_seg), ad.mul(cst, cfg.lambda_cst))


def downsample_labels(gt, factor):
    """Nearest (cell-center) label downsampling to the prediction grid."""
    off = factor // 2
    return np.asarray(gt)[:, off::factor, off::factor]


def clip_loss(params, cfg, clip, ablate=frozenset(), frozen=None, counters=None):
    """Total loss for one clip; returns (loss, seg value, cst value, result)."""
    result = forward(params, cfg, clip, ablate=ablate, frozen=frozen)
    gt = clip.gt if isinstance(clip, SyntheticSample) else clip["gt"]
    gt_small = downsample_labels(gt, cfg.strides[0])
    seg = seg_loss(result.y_hat, gt_small)
    cst = contrastive_clip_loss(result.alignments, cfg, counters)
    return total_loss(seg, cst, cfg), float(seg.data), float(cst.data), result


# -- prediction / evaluation ---------------------------------------------------


def predict_labels(result: ForwardResult):
    return np.argmax(result.y_hat.data, axis=1)


def evaluate_model(params, cfg, samples, types=None, ids=None, ablate=frozenset()):
    """EvalReport of a model over clips, at the prediction grid resolution."""
    frozen_params = detach_params(params)
    preds, gts = [], []
    for clip in samples:
        result = forward(frozen_params, cfg, clip, ablate=ablate)
        preds.append(predict_labels(result))
        gts.append(downsample_labels(clip.gt, cfg.strides[0]))
    return metrics.evaluate(preds, gts, cfg.num_classes, clip_types=types, clip_ids=ids)


# -- optimization --------------------------------------------------------------


class Adam:
    """Standard Adam with bias correction."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            p.data -= self.lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


@dataclass
class TrainHistory:
    loss_rows: list = field(default_factory=list)   # (step, total, seg, cst)
    val_rows: list = field(default_factory=list)    # (step, jf, j, f)
    empty_positive: int = 0
    stopped_at: int | None = None

    def loss_csv(self):
        lines = ["step,total,seg,cst"]
        for step, tot, seg, cst in self.loss_rows:
            lines.append(f"{step},{tot:.6f},{seg:.6f},{cst:.6f}")
        return "\n".join(lines) + "\n"


def clip_gradients(params, max_norm):
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = np.float32(max_norm / norm)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def train(train_samples, cfg: ModelConfig, ablate=frozenset(), val_samples=None,
          early_stop_jf=None, log=None):
    """Deterministic Adam training; returns (params, TrainHistory).

    Aborts with DivergenceError on non-finite losses or parameters.
    ``early_stop_jf`` halts once validation J&F reaches the threshold.
    """
    if not train_samples:
        raise DataError("empty training set")
    ablate = normalize_ablation(ablate)
    rng = make_rng(cfg.seed)
    params = init_params(cfg, rng)
    opt = Adam(params, lr=cfg.lr)
    counters = ContrastiveCounters()
    history = TrainHistory()

    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, len(train_samples), size=cfg.batch_size)
        opt.zero_grad()
        tot_v = seg_v = cst_v = 0.0
        for i in idx:
            loss, seg, cst, _ = clip_loss(params, cfg, train_samples[i],
                                          ablate=ablate, counters=counters)
            scaled = ad.mul(loss, 1.0 / cfg.batch_size)
            scaled.backward()
            tot_v += float(loss.data) / cfg.batch_size
            seg_v += seg / cfg.batch_size
            cst_v += cst / cfg.batch_size
        if not np.isfinite(tot_v):
            raise DivergenceError(f"non-finite loss at step {step}")
        if cfg.grad_clip > 0:
            clip_gradients(params, cfg.grad_clip)
        lr = cfg.lr
        if cfg.lr_final_frac < 1.0:
            frac = cfg.lr_final_frac
            cos = 0.5 * (1.0 + np.cos(np.pi * (step - 1) / max(cfg.steps - 1, 1)))
            lr = cfg.lr * (frac + (1.0 - frac) * cos)
        if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
            lr *= step / cfg.warmup_steps
        opt.lr = lr
        opt.step()
        for name, p in params.items():
            if not np.isfinite(p.data).all():
                raise DivergenceError(f"non-finite parameter {name} at step {step}")
        history.loss_rows.append((step, tot_v, seg_v, cst_v))
        if log:
            log(f"{step},{tot_v:.6f},{seg_v:.6f},{cst_v:.6f}")

        if val_samples and (step % cfg.eval_every == 0 or step == cfg.steps):
            report = evaluate_model(params, cfg, val_samples, ablate=ablate)
            history.val_rows.append((step, report.jf_mean, report.mean_j, report.mean_f))
            if log:
                log(f"# val step={step} jf={report.jf_mean:.4f} "
                    f"j={report.mean_j:.4f} f={report.mean_f:.4f}")
            if early_stop_jf is not None and report.jf_mean >= early_stop_jf:
                history.stopped_at = step
                break

    history.empty_positive = counters.empty_positive
    return params, history
