"""Frozen backbones behind a small interface.

A vision backbone turns a resized RGB image into per-layer patch tokens plus
a final CLS token; a text encoder turns a prompt string into one embedding.
The default is a deterministic stub with ViT-L/16 geometry (patch 16,
24 layers, d_v=1024, d_t=768): it derives tokens from per-patch image
statistics through fixed random projections, so extraction is repeatable,
needs no checkpoint downloads, and exercises the full byte contract.
Real pretrained weights plug in by registering another Backbone/TextEncoder
pair under a new name.
"""

import hashlib

import numpy as np

from .errors import ConfigError


class StubVisionBackbone:
    """ViT-L/16-shaped features computed from patch statistics."""

    name = "stub-vit-l16"
    patch_size = 16
    depth = 24
    d_v = 1024

    def _patch_stats(self, image):
        """(grid*grid, 5): RGB means plus normalized patch coordinates."""
        h, w, _ = image.shape
        p = self.patch_size
        gh, gw = h // p, w // p
        means = (
            image.reshape(gh, p, gw, p, 3).mean(axis=(1, 3)).reshape(gh * gw, 3)
        )
        ys, xs = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
        coords = np.stack(
            [ys.ravel() / max(gh - 1, 1), xs.ravel() / max(gw - 1, 1)], axis=1
        )
        return np.concatenate([means, coords], axis=1)

    def _projection(self, layer):
        rng = np.random.default_rng(1000 + layer)
        return rng.standard_normal((5, self.d_v))

    def patch_tokens(self, image, layers):
        """image: (H, W, 3) float64 in [0, 1]; returns one (N, d_v) per layer."""
        stats = self._patch_stats(image)
        out = []
        for layer in layers:
            tokens = np.tanh(stats @ self._projection(layer))
            out.append(tokens.astype(np.float32).astype(np.float64))
        return out

    def cls_token(self, image):
        """Mean of the final layer's patch tokens."""
        final = self.patch_tokens(image, [self.depth])[0]
        return final.mean(axis=0).astype(np.float32).astype(np.float64)


class StubTextEncoder:
    """Hash-seeded prompt embeddings with CLIP ViT-L text width."""

    name = "stub-vit-l16"
    d_t = 768

    def encode(self, text):
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.standard_normal(self.d_t)
        v = v / np.linalg.norm(v)
        return v.astype(np.float32).astype(np.float64)


BACKBONES = {
    "stub-vit-l16": (StubVisionBackbone, StubTextEncoder),
}


def load_backbone(name):
    try:
        vision_cls, text_cls = BACKBONES[name]
    except KeyError:
        raise ConfigError(
            f"unknown backbone '{name}'; available: {sorted(BACKBONES)}"
        )
    return vision_cls(), text_cls()
