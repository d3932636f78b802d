"""Dirichlet-evidence uncertainty and uncertainty-weighted prediction.

Layouts follow the prediction heads: (T, C, H, W) with the class axis at
position 1.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

EPSILON = 1e-6  # stability constant for the weighted prediction


def dirichlet_params(uncertainty_logits):
    """Softplus of the head logits; strictly positive concentration parameters."""
    return ad.softplus(ad.as_tensor(uncertainty_logits))


def pixel_uncertainty(alpha, class_axis=1):
    """Per-class Dirichlet marginal variance.

    With S0 the concentration total over classes:
    delta_c = alpha_c (S0 - alpha_c) / (S0^2 (S0 + 1)).  Bounded by 0.25.
    """
    alpha = ad.as_tensor(alpha)
    if alpha.shape[class_axis] == 1:
        warnings.warn("pixel_uncertainty: single class, variance is identically 0",
                      RuntimeWarning)
        return ad.mul(alpha, 0.0)
    s0 = ad.reduce_sum(alpha, axis=class_axis, keepdims=True)
    numer = ad.mul(alpha, ad.sub(s0, alpha))
    denom = ad.mul(ad.mul(s0, s0), ad.add(s0, 1.0))
    return ad.div(numer, denom)


def normalize_uncertainty(delta):
    """Min-max scale to [0, 1] per frame over all class/spatial values.

    A frame with constant uncertainty maps to all zeros (no ranking
    information, maximum confidence).
    """
    delta = ad.as_tensor(delta)
    axes = tuple(range(1, delta.data.ndim))
    lo = delta
    hi = delta
    for ax in axes:
        lo = ad.reduce_min(lo, axis=ax, keepdims=True)
        hi = ad.reduce_max(hi, axis=ax, keepdims=True)
    span = ad.sub(hi, lo)
    # Degenerate frames have zero numerator as well; bump their denominator
    # (a constant) so the division stays defined and yields exact zeros.
    bump = Tensor((np.asarray(span.data) == 0.0).astype(delta.data.dtype))
    return ad.div(ad.sub(delta, lo), ad.add(span, bump))


def weighted_prediction(m, delta_norm, epsilon=EPSILON, binary=False, class_axis=1):
    """Class scores divided by (normalized uncertainty + epsilon).

    ``m`` are segmentation logits; softmax over the class axis (sigmoid when
    ``binary``).  The output is an unnormalized nonnegative score field; the
    predicted class is its argmax.
    """
    m = ad.as_tensor(m)
    probs = ad.sigmoid(m) if binary else ad.softmax(m, axis=class_axis)
    return ad.div(probs, ad.add(ad.as_tensor(delta_norm), epsilon))


def uncertainty_image(delta_norm_frame):
    """(C, H, W) normalized uncertainty -> (H, W) class-max map for PGM export."""
    v = np.asarray(delta_norm_frame.data if isinstance(delta_norm_frame, Tensor)
                   else delta_norm_frame)
    return v.max(axis=0)
