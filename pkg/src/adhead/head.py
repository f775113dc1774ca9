"""Anomaly-map assembly: per-stage cross-modal maps, CLS-patch calibration
scores, multi-stage fusion, inference, and the normalized-token baseline.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import CompatibilityError, DimensionError, ValidationError
from .numerics import (
    bilinear_resize,
    cosine_rows,
    l2_normalize_rows,
    softmax_over_states,
)


@dataclass
class StageMap:
    layer: int
    probs: np.ndarray  # (N, 2): columns normal, abnormal; rows sum to 1
    grid: np.ndarray   # (grid_h, grid_w): abnormal column, row-major


@dataclass
class AnomalyMap:
    scores: np.ndarray  # (image_h, image_w), values in [0, 1]

    @property
    def height(self):
        return int(self.scores.shape[0])

    @property
    def width(self):
        return int(self.scores.shape[1])


def cmcl_stage_map(patch_tokens, stage_adapter, text_pooled, text_adapter,
                   temperature, grid_shape, layer=-1):
    """Cross-modal map for one stage: adapt, cosine against both text states,
    softmax over the two states, reshape the abnormal column to the grid."""
    grid_h, grid_w = grid_shape
    if patch_tokens.shape[0] != grid_h * grid_w:
        raise DimensionError(
            f"expected {grid_h * grid_w} patch rows, got {patch_tokens.shape[0]}"
        )
    adapted_patches = stage_adapter.forward(patch_tokens)
    adapted_text = text_adapter.forward(text_pooled)
    scores = cosine_rows(adapted_patches, adapted_text)
    probs = softmax_over_states(scores, temperature)
    grid = probs[:, 1].reshape(grid_h, grid_w)
    return StageMap(layer=layer, probs=probs, grid=grid)


def fuse_stages(stage_grids):
    """Elementwise arithmetic mean of same-shape grids."""
    if not stage_grids:
        raise ValidationError("fuse_stages: empty grid list")
    shape = stage_grids[0].shape
    for g in stage_grids:
        if g.shape != shape:
            raise DimensionError(f"fuse_stages: shape {g.shape} != {shape}")
    out = np.zeros(shape, dtype=np.float64)
    for g in stage_grids:
        out += g
    return out / len(stage_grids)


def aacm_scores(patch_tokens_final, stage_adapter_final, cls_token, cls_adapter,
                grid_shape):
    """Raw cosine similarity of each adapted final-stage patch to the adapted
    CLS token, reshaped to the patch grid. Values lie in [-1, 1]."""
    grid_h, grid_w = grid_shape
    if patch_tokens_final.shape[0] != grid_h * grid_w:
        raise DimensionError(
            f"expected {grid_h * grid_w} patch rows, got "
            f"{patch_tokens_final.shape[0]}"
        )
    cls_token = np.asarray(cls_token, dtype=np.float64).reshape(1, -1)
    adapted_cls = cls_adapter.forward(cls_token)
    adapted_patches = stage_adapter_final.forward(patch_tokens_final)
    scores = cosine_rows(adapted_patches, adapted_cls)
    return scores[:, 0].reshape(grid_h, grid_w)


def infer(bundle, stack, bank, config, layers=None):
    """Full inference: per-stage cross-modal maps over the configured layers,
    mean fusion, bilinear upsampling to image resolution, optional Gaussian
    smoothing. The CLS adapter is never read here (calibration is a
    training-only objective).

    Returns (AnomalyMap, list of StageMap intermediates).
    """
    use_layers = list(layers if layers is not None else config.layer_indices)
    if not use_layers:
        raise ValidationError("infer: no layers selected")
    for layer in use_layers:
        if layer not in stack.layer_indices:
            raise CompatibilityError(
                f"stack has no adapter for layer {layer}; trained layers: "
                f"{stack.layer_indices}"
            )
        if layer not in bundle.layer_indices:
            raise CompatibilityError(
                f"bundle has no patch tokens for layer {layer}; stored layers: "
                f"{bundle.layer_indices}"
            )
    if bundle.d_v != stack.patch_adapters[0].d_in:
        raise CompatibilityError(
            f"bundle d_v {bundle.d_v} != stack input dim "
            f"{stack.patch_adapters[0].d_in}"
        )
    if bank.d_t != stack.text_adapter.d_in:
        raise CompatibilityError(
            f"text bank d_t {bank.d_t} != text adapter input dim "
            f"{stack.text_adapter.d_in}"
        )
    grid_shape = (bundle.grid_h, bundle.grid_w)
    stage_maps = [
        cmcl_stage_map(
            bundle.tokens_for_layer(layer),
            stack.patch_adapter(layer),
            bank.pooled,
            stack.text_adapter,
            config.temperature,
            grid_shape,
            layer=layer,
        )
        for layer in use_layers
    ]
    fused = fuse_stages([m.grid for m in stage_maps])
    scores = bilinear_resize(fused, bundle.image_h, bundle.image_w)
    if config.smoothing:
        scores = gaussian_filter(scores, sigma=config.smoothing_sigma)
        scores = np.clip(scores, 0.0, 1.0)
    return AnomalyMap(scores=scores), stage_maps


def baseline_map(bundle):
    """Training-free baseline: l2-normalize final-layer patch tokens, average
    over the channel dimension, min-max normalize over the grid (constant
    grids map to 0.5), and upsample to image resolution."""
    tokens = bundle.patch_tokens[-1]
    normalized = l2_normalize_rows(tokens)
    per_patch = normalized.mean(axis=1)
    lo, hi = per_patch.min(), per_patch.max()
    if hi > lo:
        per_patch = (per_patch - lo) / (hi - lo)
    else:
        per_patch = np.full_like(per_patch, 0.5)
    grid = per_patch.reshape(bundle.grid_h, bundle.grid_w)
    scores = bilinear_resize(grid, bundle.image_h, bundle.image_w)
    return AnomalyMap(scores=scores)
