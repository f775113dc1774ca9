"""Serialized frozen-backbone feature bundles, text banks, and manifests.

Binary layouts (little-endian):

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

Floats are stored as f32 on disk and promoted to f64 in memory; masks are
{0,255} bytes on disk and {0,1} in memory.
"""

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, ValidationError
from .numerics import l2_normalize_rows

BUNDLE_MAGIC = b"ADF3"
TEXTBANK_MAGIC = b"ADTX"
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# domain types

@dataclass
class FeatureBundle:
    image_h: int
    image_w: int
    grid_h: int
    grid_w: int
    layer_indices: list
    patch_tokens: list          # per layer: (grid_h*grid_w, d_v) float64
    cls_token: np.ndarray       # (d_v,) float64
    mask: np.ndarray = None     # (image_h, image_w) of {0,1}, or None

    @property
    def mask_present(self):
        return self.mask is not None

    @property
    def n_patches(self):
        return self.grid_h * self.grid_w

    @property
    def d_v(self):
        return int(self.patch_tokens[0].shape[1])

    def tokens_for_layer(self, layer):
        try:
            return self.patch_tokens[self.layer_indices.index(layer)]
        except ValueError:
            raise ValidationError(
                f"bundle has no layer {layer}; available: {self.layer_indices}"
            )


@dataclass
class TextBank:
    normal_templates: np.ndarray    # (templates, d_t) float64
    abnormal_templates: np.ndarray  # (templates, d_t) float64
    pooled: np.ndarray              # (2, d_t), row 0 normal, row 1 abnormal

    @property
    def d_t(self):
        return int(self.pooled.shape[1])

    @property
    def templates_per_state(self):
        return int(self.normal_templates.shape[0])


@dataclass
class ManifestEntry:
    split: str
    category: str
    path: str


@dataclass
class DatasetManifest:
    entries: list
    root: str = "."

    def paths(self, split=None):
        return [
            os.path.join(self.root, e.path)
            for e in self.entries
            if split is None or e.split == split
        ]

    def select(self, split):
        return [e for e in self.entries if e.split == split]


# ---------------------------------------------------------------------------
# validation

def validate_bundle(bundle):
    """Return the list of invariant violations (empty iff the bundle is valid)."""
    violations = []
    n = bundle.grid_h * bundle.grid_w
    if len(bundle.layer_indices) != len(bundle.patch_tokens):
        violations.append(
            f"layer_indices: count {len(bundle.layer_indices)} != "
            f"{len(bundle.patch_tokens)} patch-token blocks"
        )
    if list(bundle.layer_indices) != sorted(set(bundle.layer_indices)):
        violations.append(
            f"layer_indices: must be strictly increasing, got {bundle.layer_indices}"
        )
    d_v = None
    for layer, tokens in zip(bundle.layer_indices, bundle.patch_tokens):
        if tokens.ndim != 2 or tokens.shape[0] != n:
            violations.append(
                f"patch_tokens[layer {layer}]: expected {n} rows, got shape {tokens.shape}"
            )
            continue
        if d_v is None:
            d_v = tokens.shape[1]
        elif tokens.shape[1] != d_v:
            violations.append(
                f"patch_tokens[layer {layer}]: dimension {tokens.shape[1]} != shared d_v {d_v}"
            )
        if not np.all(np.isfinite(tokens)):
            violations.append(f"patch_tokens[layer {layer}]: non-finite entries")
    if d_v is not None and bundle.cls_token.shape != (d_v,):
        violations.append(
            f"cls_token: shape {bundle.cls_token.shape} != ({d_v},)"
        )
    if not np.all(np.isfinite(bundle.cls_token)):
        violations.append("cls_token: non-finite entries")
    if bundle.mask_present:
        if bundle.mask.shape != (bundle.image_h, bundle.image_w):
            violations.append(
                f"mask: shape {bundle.mask.shape} != image "
                f"({bundle.image_h}, {bundle.image_w})"
            )
        bad = ~np.isin(bundle.mask, (0, 1))
        if bad.any():
            violations.append(
                f"mask: entries must be in {{0,1}}, found {np.unique(bundle.mask[bad])}"
            )
    return violations


def validate_textbank(bank):
    violations = []
    if bank.templates_per_state < 1:
        violations.append("templates: at least one template per state required")
    if bank.normal_templates.shape != bank.abnormal_templates.shape:
        violations.append(
            f"templates: state shapes differ, {bank.normal_templates.shape} vs "
            f"{bank.abnormal_templates.shape}"
        )
    norms = np.sqrt((bank.pooled * bank.pooled).sum(axis=1))
    if np.abs(norms - 1.0).max() > 1e-6:
        violations.append(f"pooled: rows must be unit-norm, norms {norms}")
    return violations


# ---------------------------------------------------------------------------
# prompt pooling

def pool_prompts(bank):
    """Mean over templates per state, then l2-normalize; updates bank.pooled."""
    if bank.templates_per_state < 1:
        raise ValidationError("pool_prompts: at least one template per state required")
    means = np.stack([
        bank.normal_templates.mean(axis=0),
        bank.abnormal_templates.mean(axis=0),
    ])
    bank.pooled = l2_normalize_rows(means)
    return bank.pooled


# ---------------------------------------------------------------------------
# binary readers/writers

class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, n, what):
        if self.offset + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated reading {what} at byte {self.offset} "
                f"(need {n}, have {len(self.data) - self.offset})"
            )
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what):
        return self.take(1, what)[0]

    def f32_array(self, count, what):
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4", count=count).astype(np.float64)

    def expect_magic(self, magic):
        got = self.take(len(magic), "magic")
        if got != magic:
            raise FormatError(
                f"{self.path}: bad magic at byte 0, expected {magic!r}, got {got!r}"
            )

    def expect_version(self):
        v = self.u32("version")
        if v != FORMAT_VERSION:
            raise FormatError(
                f"{self.path}: unsupported version {v} at byte {self.offset - 4}"
            )

    def done(self):
        if self.offset != len(self.data):
            raise FormatError(
                f"{self.path}: {len(self.data) - self.offset} trailing bytes "
                f"at byte {self.offset}"
            )


def write_bundle(bundle, path):
    violations = validate_bundle(bundle)
    if violations:
        raise ValidationError(f"refusing to write invalid bundle: {violations[0]}")
    parts = [BUNDLE_MAGIC]
    parts.append(struct.pack(
        "<IIIIIIIB",
        FORMAT_VERSION,
        bundle.image_h, bundle.image_w,
        bundle.grid_h, bundle.grid_w,
        len(bundle.layer_indices), bundle.d_v,
        1 if bundle.mask_present else 0,
    ))
    parts.append(struct.pack(f"<{len(bundle.layer_indices)}I", *bundle.layer_indices))
    for tokens in bundle.patch_tokens:
        parts.append(tokens.astype("<f4").tobytes())
    parts.append(bundle.cls_token.astype("<f4").tobytes())
    if bundle.mask_present:
        parts.append((bundle.mask.astype(np.uint8) * 255).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_bundle(path):
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    r.expect_magic(BUNDLE_MAGIC)
    r.expect_version()
    image_h = r.u32("image_h")
    image_w = r.u32("image_w")
    grid_h = r.u32("grid_h")
    grid_w = r.u32("grid_w")
    n_layers = r.u32("n_layers")
    d_v = r.u32("d_v")
    mask_present = r.u8("mask_present")
    if mask_present not in (0, 1):
        raise FormatError(f"{path}: mask_present must be 0/1, got {mask_present}")
    layers = [r.u32(f"layer index {i}") for i in range(n_layers)]
    n = grid_h * grid_w
    tokens = [
        r.f32_array(n * d_v, f"patch tokens layer {layer}").reshape(n, d_v)
        for layer in layers
    ]
    cls_token = r.f32_array(d_v, "cls token")
    mask = None
    if mask_present:
        raw = np.frombuffer(
            r.take(image_h * image_w, "mask"), dtype=np.uint8
        ).reshape(image_h, image_w)
        bad = ~np.isin(raw, (0, 255))
        if bad.any():
            raise FormatError(
                f"{path}: mask bytes must be 0 or 255, found {np.unique(raw[bad])}"
            )
        mask = (raw // 255).astype(np.uint8)
    r.done()
    bundle = FeatureBundle(
        image_h=image_h, image_w=image_w, grid_h=grid_h, grid_w=grid_w,
        layer_indices=layers, patch_tokens=tokens, cls_token=cls_token, mask=mask,
    )
    violations = validate_bundle(bundle)
    if violations:
        raise ValidationError(f"{path}: {violations[0]}")
    return bundle


def write_textbank(bank, path):
    violations = validate_textbank(bank)
    if violations:
        raise ValidationError(f"refusing to write invalid text bank: {violations[0]}")
    parts = [TEXTBANK_MAGIC]
    parts.append(struct.pack("<III", FORMAT_VERSION, bank.d_t, bank.templates_per_state))
    parts.append(bank.normal_templates.astype("<f4").tobytes())
    parts.append(bank.abnormal_templates.astype("<f4").tobytes())
    parts.append(bank.pooled.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_textbank(path):
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    r.expect_magic(TEXTBANK_MAGIC)
    r.expect_version()
    d_t = r.u32("d_t")
    templates = r.u32("templates_per_state")
    normal = r.f32_array(templates * d_t, "normal templates").reshape(templates, d_t)
    abnormal = r.f32_array(templates * d_t, "abnormal templates").reshape(templates, d_t)
    pooled = r.f32_array(2 * d_t, "pooled").reshape(2, d_t)
    r.done()
    bank = TextBank(normal_templates=normal, abnormal_templates=abnormal, pooled=pooled)
    violations = validate_textbank(bank)
    if violations:
        raise ValidationError(f"{path}: {violations[0]}")
    return bank


# ---------------------------------------------------------------------------
# manifests

def write_manifest(manifest, path):
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            fh.write(f"{e.split}\t{e.category}\t{e.path}\n")


def read_manifest(path):
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(
                    f"{path}: line {lineno}: expected split<TAB>category<TAB>path"
                )
            split, category, rel = parts
            if split not in ("train", "test"):
                raise ValidationError(
                    f"{path}: line {lineno}: split must be train/test, got {split!r}"
                )
            if rel in seen:
                raise ValidationError(f"{path}: line {lineno}: duplicate path {rel!r}")
            seen.add(rel)
            entries.append(ManifestEntry(split=split, category=category, path=rel))
    return DatasetManifest(entries=entries, root=os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
# synthetic dataset

@dataclass(frozen=True)
class SynthSpec:
    n_train: int = 64
    n_test: int = 32
    grid: int = 8
    image_size: int = 64
    d_v: int = 16
    d_t: int = 12
    n_layers: int = 4
    anomaly_rate: float = 0.25
    signal_strength: float = 1.0
    noise_per_layer: float = 0.3
    templates_per_state: int = 3
    seed: int = 0

    def validate(self):
        for name in ("n_train", "n_test", "grid", "image_size", "d_v", "d_t",
                     "n_layers", "templates_per_state"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 < self.anomaly_rate < 1.0:
            raise ConfigError(f"anomaly_rate must be in (0,1), got {self.anomaly_rate}")
        if self.signal_strength < 0:
            raise ConfigError(f"signal_strength must be >= 0, got {self.signal_strength}")
        if self.noise_per_layer < 0:
            raise ConfigError(f"noise_per_layer must be >= 0, got {self.noise_per_layer}")
        if self.image_size % self.grid != 0:
            raise ConfigError(
                f"image_size {self.image_size} must be divisible by grid {self.grid}"
            )


_SYNTH_KEYS = {
    "n_train": int, "n_test": int, "grid": int, "image_size": int,
    "d_v": int, "d_t": int, "n_layers": int, "anomaly_rate": float,
    "signal_strength": float, "noise_per_layer": float,
    "templates_per_state": int, "seed": int,
}


def load_synth_spec(path):
    from .config import parse_kv_file, _cast
    kwargs = {}
    for key, (raw, lineno) in parse_kv_file(path).items():
        if key not in _SYNTH_KEYS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        kwargs[key] = _cast(key, raw, _SYNTH_KEYS[key], lineno)
    spec = SynthSpec(**kwargs)
    spec.validate()
    return spec


def _unit(v):
    return v / np.sqrt((v * v).sum())


def _rect_mask(rng, grid, anomaly_rate):
    target = max(1.0, anomaly_rate * grid * grid)
    rh = min(grid, max(1, int(round(np.sqrt(target)))))
    rw = min(grid, max(1, int(round(target / rh))))
    top = int(rng.integers(0, grid - rh + 1))
    left = int(rng.integers(0, grid - rw + 1))
    mask = np.zeros((grid, grid), dtype=np.uint8)
    mask[top:top + rh, left:left + rw] = 1
    return mask


def synth_dataset(spec, out_dir):
    """Write a deterministic synthetic dataset and return its manifest.

    Abnormal patches lie along a direction orthogonal to normal patches, so
    they are linearly separable in expectation; per-layer noise is drawn
    independently, so averaging stage maps reduces variance.
    """
    spec.validate()
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    u_n = _unit(rng.standard_normal(spec.d_v))
    u_a = rng.standard_normal(spec.d_v)
    u_a = _unit(u_a - (u_a @ u_n) * u_n)

    # text templates: images of the state directions under a fixed linear map
    proj = rng.standard_normal((spec.d_t, spec.d_v)) / np.sqrt(spec.d_v)
    normal_templates = np.stack([
        proj @ u_n + 0.05 * rng.standard_normal(spec.d_t)
        for _ in range(spec.templates_per_state)
    ]).astype(np.float32).astype(np.float64)
    abnormal_templates = np.stack([
        proj @ u_a + 0.05 * rng.standard_normal(spec.d_t)
        for _ in range(spec.templates_per_state)
    ]).astype(np.float32).astype(np.float64)
    bank = TextBank(
        normal_templates=normal_templates,
        abnormal_templates=abnormal_templates,
        pooled=np.zeros((2, spec.d_t)),
    )
    pool_prompts(bank)
    # keep pooled f32-representable so the round trip is bit-exact
    bank.pooled = bank.pooled.astype(np.float32).astype(np.float64)
    write_textbank(bank, os.path.join(out_dir, "textbank.adtx"))

    block = spec.image_size // spec.grid
    entries = []
    layer_indices = list(range(1, spec.n_layers + 1))
    for split, count in (("train", spec.n_train), ("test", spec.n_test)):
        for i in range(count):
            patch_mask = _rect_mask(rng, spec.grid, spec.anomaly_rate)
            base = np.where(
                patch_mask.reshape(-1, 1).astype(bool), u_a, u_n
            ) * spec.signal_strength
            tokens = []
            for _ in layer_indices:
                noisy = base + spec.noise_per_layer * rng.standard_normal(base.shape)
                tokens.append(noisy.astype(np.float32).astype(np.float64))
            cls_token = tokens[-1].mean(axis=0).astype(np.float32).astype(np.float64)
            mask = np.kron(patch_mask, np.ones((block, block), dtype=np.uint8))
            bundle = FeatureBundle(
                image_h=spec.image_size, image_w=spec.image_size,
                grid_h=spec.grid, grid_w=spec.grid,
                layer_indices=layer_indices, patch_tokens=tokens,
                cls_token=cls_token, mask=mask,
            )
            name = f"{split}_{i:04d}.adft"
            write_bundle(bundle, os.path.join(out_dir, name))
            entries.append(ManifestEntry(split=split, category="synthetic", path=name))
    manifest = DatasetManifest(entries=entries, root=out_dir)
    write_manifest(manifest, os.path.join(out_dir, "manifest.tsv"))
    return manifest
