"""Writers for the downstream head's on-disk formats.

These byte layouts are the contract with the anomaly-detection head package
(little-endian throughout):

  .adft  magic "ADF3" | u32 version=1 | u32 image_h | u32 image_w
         | u32 grid_h | u32 grid_w | u32 n_layers | u32 d_v | u8 mask_present
         | n_layers * u32 layer index
         | per layer: grid_h*grid_w*d_v f32 patch tokens (row-major)
         | d_v f32 CLS token
         | if mask_present: image_h*image_w u8 mask {0,255}

  .adtx  magic "ADTX" | u32 version=1 | u32 d_t | u32 templates_per_state
         | templates_per_state*d_t f32 normal templates
         | templates_per_state*d_t f32 abnormal templates
         | 2*d_t f32 pooled (row 0 normal, row 1 abnormal)

Manifest: one entry per line, ``<split>\\t<category>\\t<relative path>``.

Files are written atomically (temp file + rename) so a crashed run never
leaves a half-written bundle behind.
"""

import os
import struct

import numpy as np

from .errors import ValidationError

BUNDLE_MAGIC = b"ADF3"
TEXTBANK_MAGIC = b"ADTX"
FORMAT_VERSION = 1


def atomic_write(path, data):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def bundle_bytes(image_h, image_w, grid_h, grid_w, layer_indices,
                 patch_tokens, cls_token, mask=None):
    """Serialize one feature bundle; tokens are (grid_h*grid_w, d_v) arrays."""
    n = grid_h * grid_w
    d_v = int(np.asarray(patch_tokens[0]).shape[1])
    if len(patch_tokens) != len(layer_indices):
        raise ValidationError(
            f"{len(patch_tokens)} token blocks for {len(layer_indices)} layers"
        )
    for layer, tokens in zip(layer_indices, patch_tokens):
        tokens = np.asarray(tokens)
        if tokens.shape != (n, d_v):
            raise ValidationError(
                f"layer {layer}: token shape {tokens.shape}, expected {(n, d_v)}"
            )
        if not np.all(np.isfinite(tokens)):
            raise ValidationError(f"layer {layer}: non-finite patch tokens")
    cls_token = np.asarray(cls_token)
    if cls_token.shape != (d_v,):
        raise ValidationError(
            f"CLS shape {cls_token.shape}, expected {(d_v,)}"
        )
    parts = [BUNDLE_MAGIC]
    parts.append(struct.pack(
        "<IIIIIIIB", FORMAT_VERSION, image_h, image_w, grid_h, grid_w,
        len(layer_indices), d_v, 0 if mask is None else 1,
    ))
    parts.append(struct.pack(f"<{len(layer_indices)}I", *layer_indices))
    for tokens in patch_tokens:
        parts.append(np.asarray(tokens).astype("<f4").tobytes())
    parts.append(cls_token.astype("<f4").tobytes())
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (image_h, image_w):
            raise ValidationError(
                f"mask shape {mask.shape}, expected {(image_h, image_w)}"
            )
        parts.append((mask.astype(np.uint8) * 255).tobytes())
    return b"".join(parts)


def pool_templates(templates):
    """Mean over templates, then L2 normalization — one pooled row."""
    pooled = np.asarray(templates).mean(axis=0)
    return pooled / max(np.linalg.norm(pooled), 1e-12)


def textbank_bytes(normal_templates, abnormal_templates):
    normal = np.asarray(normal_templates)
    abnormal = np.asarray(abnormal_templates)
    if normal.shape != abnormal.shape or normal.ndim != 2:
        raise ValidationError(
            f"template shapes differ: {normal.shape} vs {abnormal.shape}"
        )
    templates, d_t = normal.shape
    pooled = np.stack([pool_templates(normal), pool_templates(abnormal)])
    parts = [TEXTBANK_MAGIC]
    parts.append(struct.pack("<III", FORMAT_VERSION, d_t, templates))
    parts.append(normal.astype("<f4").tobytes())
    parts.append(abnormal.astype("<f4").tobytes())
    parts.append(pooled.astype("<f4").tobytes())
    return b"".join(parts)


def manifest_bytes(entries):
    """entries: iterable of (split, category, relative_path)."""
    lines = [f"{split}\t{category}\t{path}\n" for split, category, path in entries]
    return "".join(lines).encode("utf-8")
