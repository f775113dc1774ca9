"""Focal and Dice losses, the cross-modal and calibration objectives, and
the weighted total, each returning exact gradients.

Predictions are clamped to [1e-7, 1-1e-7] before logarithms; gradients are
the exact derivatives of the clamped expressions (zero where the clamp is
active), so finite-difference checks match bit-for-bit away from the
boundaries.
"""

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import (
    bilinear_resize,
    bilinear_resize_vjp,
    sigmoid,
    sigmoid_vjp,
    softmax_over_states,
    softmax_over_states_vjp,
)

CLAMP = 1e-7


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(
            f"pred shape {pred.shape} != target shape {target.shape}"
        )
    return pred, target


def focal_loss(pred, target, gamma, alpha):
    """Mean focal loss over all pixels; returns (loss, grad w.r.t. pred)."""
    if gamma < 0:
        raise ConfigError(f"focal gamma must be >= 0, got {gamma}")
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"focal alpha must be in (0,1), got {alpha}")
    pred, target = _check_pair(pred, target)
    p = np.clip(pred, CLAMP, 1.0 - CLAMP)
    active = ((pred > CLAMP) & (pred < 1.0 - CLAMP)).astype(np.float64)
    pos = target
    neg = 1.0 - target
    loss_terms = (
        -alpha * pos * (1.0 - p) ** gamma * np.log(p)
        - (1.0 - alpha) * neg * p ** gamma * np.log(1.0 - p)
    )
    n = p.size
    loss = loss_terms.sum() / n
    if gamma == 0.0:
        dpos = -alpha * (1.0 / p)
        dneg = (1.0 - alpha) * (1.0 / (1.0 - p))
    else:
        dpos = -alpha * (
            -gamma * (1.0 - p) ** (gamma - 1.0) * np.log(p) + (1.0 - p) ** gamma / p
        )
        dneg = -(1.0 - alpha) * (
            gamma * p ** (gamma - 1.0) * np.log(1.0 - p) - p ** gamma / (1.0 - p)
        )
    grad = active * (pos * dpos + neg * dneg) / n
    return loss, grad


def dice_loss(pred, target, eps):
    """Smoothed Dice loss 1 - (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps)."""
    if eps <= 0:
        raise ConfigError(f"dice eps must be > 0, got {eps}")
    pred, target = _check_pair(pred, target)
    num = 2.0 * (pred * target).sum() + eps
    den = pred.sum() + target.sum() + eps
    loss = 1.0 - num / den
    grad = (num - 2.0 * target * den) / (den * den)
    return loss, grad


def focal_dice(pred, target, cfg):
    """Sum of focal and dice terms with one combined gradient."""
    lf, gf = focal_loss(pred, target, cfg.focal_gamma, cfg.focal_alpha)
    ld, gd = dice_loss(pred, target, cfg.dice_eps)
    return lf + ld, gf + gd


def loss_cm(stage_grids, mask, cfg):
    """Cross-modal loss: mean over stages of focal+dice on upsampled grids.

    Returns (loss, per-stage gradients w.r.t. each coarse grid).
    """
    if not stage_grids:
        raise DimensionError("loss_cm: at least one stage grid required")
    mask = np.asarray(mask, dtype=np.float64)
    image_h, image_w = mask.shape
    n_stages = len(stage_grids)
    total = 0.0
    grid_grads = []
    for grid in stage_grids:
        up = bilinear_resize(grid, image_h, image_w)
        l, g_up = focal_dice(up, mask, cfg)
        total += l
        grid_grads.append(
            bilinear_resize_vjp(grid.shape[0], grid.shape[1], g_up) / n_stages
        )
    return total / n_stages, grid_grads


def loss_aacm(raw_scores, mask, cfg):
    """Calibration loss on raw CLS-patch cosine scores.

    Scores become probabilities via elementwise sigmoid (or softmax over
    patches when configured), are upsampled to image resolution, and are
    scored with focal+dice. Returns (loss, gradient w.r.t. raw scores).
    """
    raw = np.asarray(raw_scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if cfg.aacm_activation == "patch_softmax":
        probs_flat = softmax_over_states(raw.reshape(1, -1), 1.0)
        probs = probs_flat.reshape(raw.shape)
    else:
        probs = sigmoid(raw)
    up = bilinear_resize(probs, mask.shape[0], mask.shape[1])
    loss, g_up = focal_dice(up, mask, cfg)
    g_probs = bilinear_resize_vjp(raw.shape[0], raw.shape[1], g_up)
    if cfg.aacm_activation == "patch_softmax":
        g_raw = softmax_over_states_vjp(
            probs.reshape(1, -1), 1.0, g_probs.reshape(1, -1)
        ).reshape(raw.shape)
    else:
        g_raw = sigmoid_vjp(probs, g_probs)
    return loss, g_raw


def total_loss(cm, aacm, cfg):
    """Weighted total lambda_cm*cm + lambda_aacm*aacm."""
    if cfg.lambda_cm < 0 or cfg.lambda_aacm < 0:
        raise ConfigError("loss weights must be >= 0")
    return cfg.lambda_cm * cm + cfg.lambda_aacm * aacm
