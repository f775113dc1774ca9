"""Image/prompt extraction into feature-bundle and text-bank files."""

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import formats
from .backbone import load_backbone
from .errors import ConfigError, InputError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

DEFAULT_NORMAL_TEMPLATES = (
    "a photo of a [state] [class]",
    "a cropped photo of the [state] [class]",
)
DEFAULT_ABNORMAL_TEMPLATES = (
    "a photo of a [state] [class]",
    "a cropped photo of the [state] [class] with a defect",
)


@dataclass
class ExtractSpec:
    image_dir: str
    out_dir: str
    class_name: str
    mask_dir: str = None
    resize: int = 512
    layers: tuple = (6, 12, 18, 24)
    normal_templates: tuple = DEFAULT_NORMAL_TEMPLATES
    abnormal_templates: tuple = DEFAULT_ABNORMAL_TEMPLATES
    normal_state: str = "flawless"
    abnormal_state: str = "damaged"
    backbone: str = "stub-vit-l16"

    def validate(self, vision):
        if self.resize <= 0 or self.resize % vision.patch_size != 0:
            raise ConfigError(
                f"resize {self.resize} not divisible by patch size "
                f"{vision.patch_size}"
            )
        if not self.layers:
            raise ConfigError("layer list is empty")
        for layer in self.layers:
            if not 1 <= layer <= vision.depth:
                raise ConfigError(
                    f"layer {layer} outside backbone depth 1..{vision.depth}"
                )
        if list(self.layers) != sorted(set(self.layers)):
            raise ConfigError(f"layers must be strictly increasing: {self.layers}")


def load_image(path, resize):
    """RGB image resized (no crop) to (resize, resize), float64 in [0, 1]."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB").resize((resize, resize), Image.BILINEAR)
            return np.asarray(img, dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise InputError(f"image not found: {path}")
    except OSError as exc:
        raise InputError(f"unreadable image {path}: {exc}")


def load_mask(path, resize):
    """Binary mask resized with nearest neighbor; pixel >= 128 counts anomalous."""
    try:
        with Image.open(path) as img:
            img = img.convert("L").resize((resize, resize), Image.NEAREST)
            return (np.asarray(img) >= 128).astype(np.uint8)
    except OSError as exc:
        raise InputError(f"unreadable mask {path}: {exc}")


def _find_images(image_dir):
    """(split, image_path) pairs: immediate subdirectories name the splits;
    a flat directory maps everything to the 'test' split."""
    if not os.path.isdir(image_dir):
        raise InputError(f"image directory not found: {image_dir}")
    pairs = []
    subdirs = sorted(
        d for d in os.listdir(image_dir)
        if os.path.isdir(os.path.join(image_dir, d))
    )
    if subdirs:
        for split in subdirs:
            for name in sorted(os.listdir(os.path.join(image_dir, split))):
                if name.lower().endswith(IMAGE_EXTENSIONS):
                    pairs.append((split, os.path.join(image_dir, split, name)))
    else:
        for name in sorted(os.listdir(image_dir)):
            if name.lower().endswith(IMAGE_EXTENSIONS):
                pairs.append(("test", os.path.join(image_dir, name)))
    if not pairs:
        raise InputError(f"no images under {image_dir}")
    return pairs


def _mask_path_for(spec, image_path):
    if spec.mask_dir is None:
        return None
    stem = os.path.splitext(os.path.basename(image_path))[0]
    for ext in IMAGE_EXTENSIONS:
        candidate = os.path.join(spec.mask_dir, stem + ext)
        if os.path.exists(candidate):
            return candidate
    return None


def extract_features(spec, log=print):
    """One .adft per image plus a manifest.tsv; returns written paths."""
    vision, _ = load_backbone(spec.backbone)
    spec.validate(vision)
    os.makedirs(spec.out_dir, exist_ok=True)
    grid = spec.resize // vision.patch_size

    entries = []
    written = []
    counters = {}
    for split, image_path in _find_images(spec.image_dir):
        image = load_image(image_path, spec.resize)
        mask_path = _mask_path_for(spec, image_path)
        mask = load_mask(mask_path, spec.resize) if mask_path else None
        data = formats.bundle_bytes(
            image_h=spec.resize, image_w=spec.resize,
            grid_h=grid, grid_w=grid,
            layer_indices=list(spec.layers),
            patch_tokens=vision.patch_tokens(image, spec.layers),
            cls_token=vision.cls_token(image),
            mask=mask,
        )
        index = counters.get(split, 0)
        counters[split] = index + 1
        name = f"{split}_{index:04d}.adft"
        formats.atomic_write(os.path.join(spec.out_dir, name), data)
        entries.append((split, spec.class_name, name))
        written.append(name)
        log(f"{image_path} -> {name} ({split}, mask={'yes' if mask is not None else 'no'})")

    formats.atomic_write(
        os.path.join(spec.out_dir, "manifest.tsv"), formats.manifest_bytes(entries)
    )
    return written


def render_prompts(templates, state, class_name):
    if not templates:
        raise ConfigError("template list is empty")
    return [
        t.replace("[state]", state).replace("[class]", class_name)
        for t in templates
    ]


def extract_textbank(spec, out_path=None, log=print):
    """Embed both prompt lists and write one .adtx; returns the path."""
    _, text = load_backbone(spec.backbone)
    normal = [
        text.encode(p) for p in
        render_prompts(spec.normal_templates, spec.normal_state, spec.class_name)
    ]
    abnormal = [
        text.encode(p) for p in
        render_prompts(spec.abnormal_templates, spec.abnormal_state, spec.class_name)
    ]
    if len(normal) != len(abnormal):
        raise ConfigError(
            f"{len(normal)} normal vs {len(abnormal)} abnormal templates; "
            "both states need the same count"
        )
    if out_path is None:
        os.makedirs(spec.out_dir, exist_ok=True)
        out_path = os.path.join(spec.out_dir, "textbank.adtx")
    formats.atomic_write(out_path, formats.textbank_bytes(normal, abnormal))
    log(f"wrote {len(normal)} templates per state (d_t={text.d_t}) to {out_path}")
    return out_path
