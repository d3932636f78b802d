"""Segmentation evaluation: region Jaccard J, precision/recall F-beta, J&F."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_BETA_SQ = 0.3  # the F-measure convention: beta squared


class MetricError(ValueError):
    pass


def jaccard(pred, gt, num_classes):
    """Per-class and mean intersection-over-union on foreground classes.

    Classes absent from both maps are excluded; an empty set of scored
    classes (no foreground anywhere) defines the mean as 1.
    Returns (per_class dict, mean).
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    per_class = {}
    for c in range(1, num_classes):
        p = pred == c
        g = gt == c
        union = np.logical_or(p, g).sum()
        if union == 0:
            continue
        per_class[c] = float(np.logical_and(p, g).sum() / union)
    mean = float(np.mean(list(per_class.values()))) if per_class else 1.0
    return per_class, mean


def fbeta(pred, gt, beta_sq=DEFAULT_BETA_SQ):
    """Micro-averaged F-measure over foreground pixels (per-class binarized).

    Empty prediction with empty ground truth is 1; empty prediction against
    nonempty ground truth is 0.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    pf = pred > 0
    gf = gt > 0
    tp = float(np.logical_and(pf, pred == gt).sum())
    fp = float(pf.sum() - tp)
    fn = float(gf.sum() - np.logical_and(gf, pred == gt).sum())
    if pf.sum() == 0 and gf.sum() == 0:
        return 1.0
    if tp == 0.0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return (1.0 + beta_sq) * precision * recall / (beta_sq * precision + recall)


def frame_scores(pred, gt, num_classes, beta_sq=DEFAULT_BETA_SQ):
    """(J, F, J&F) for one frame."""
    _, j = jaccard(pred, gt, num_classes)
    f = fbeta(pred, gt, beta_sq)
    return j, f, 0.5 * (j + f)


@dataclass
class EvalReport:
    """Aggregated metrics with per-clip breakdown and per-type slices."""

    mean_j: float
    mean_f: float
    jf_mean: float
    per_class_j: dict
    per_clip: list = field(default_factory=list)   # {clip, type, j, f, jf}
    slices: dict = field(default_factory=dict)     # type -> {j, f, jf, clips}

    def to_json(self):
        return json.dumps({
            "mean_j": self.mean_j,
            "mean_f": self.mean_f,
            "jf_mean": self.jf_mean,
            "per_class_j": {str(k): v for k, v in sorted(self.per_class_j.items())},
            "per_clip": self.per_clip,
            "slices": self.slices,
        }, indent=2, sort_keys=True)

    def table(self):
        lines = [f"{'slice':<12}{'clips':>6}{'J':>9}{'F':>9}{'J&F':>9}",
                 f"{'all':<12}{len(self.per_clip):>6}{self.mean_j:>9.4f}"
                 f"{self.mean_f:>9.4f}{self.jf_mean:>9.4f}"]
        for name in sorted(self.slices):
            s = self.slices[name]
            lines.append(f"{name:<12}{s['clips']:>6}{s['j']:>9.4f}{s['f']:>9.4f}{s['jf']:>9.4f}")
        return "\n".join(lines)


def evaluate(pred_clips, gt_clips, num_classes, clip_types=None,
             clip_ids=None, beta_sq=DEFAULT_BETA_SQ):
    """Average frame metrics over frames then clips; slice by clip type.

    ``pred_clips`` / ``gt_clips`` are sequences of (T, H, W) integer label maps.
    """
    if len(pred_clips) == 0:
        raise MetricError("empty evaluation split")
    if len(pred_clips) != len(gt_clips):
        raise MetricError("prediction/ground-truth clip counts differ")
    clip_types = clip_types or ["all"] * len(pred_clips)
    clip_ids = clip_ids if clip_ids is not None else list(range(len(pred_clips)))

    per_clip = []
    class_accum: dict = {}
    for cid, ctype, pred, gt in zip(clip_ids, clip_types, pred_clips, gt_clips):
        js, fs, jfs = [], [], []
        for t in range(np.asarray(pred).shape[0]):
            pc, j = jaccard(pred[t], gt[t], num_classes)
            f = fbeta(pred[t], gt[t], beta_sq)
            js.append(j)
            fs.append(f)
            jfs.append(0.5 * (j + f))
            for c, v in pc.items():
                class_accum.setdefault(c, []).append(v)
        per_clip.append({"clip": int(cid), "type": ctype,
                         "j": float(np.mean(js)), "f": float(np.mean(fs)),
                         "jf": float(np.mean(jfs))})

    slices = {}
    for name in sorted(set(c["type"] for c in per_clip)):
        sel = [c for c in per_clip if c["type"] == name]
        slices[name] = {"clips": len(sel),
                        "j": float(np.mean([c["j"] for c in sel])),
                        "f": float(np.mean([c["f"] for c in sel])),
                        "jf": float(np.mean([c["jf"] for c in sel]))}
    return EvalReport(
        mean_j=float(np.mean([c["j"] for c in per_clip])),
        mean_f=float(np.mean([c["f"] for c in per_clip])),
        jf_mean=float(np.mean([c["jf"] for c in per_clip])),
        per_class_j={c: float(np.mean(v)) for c, v in class_accum.items()},
        per_clip=per_clip,
        slices=slices,
    )
