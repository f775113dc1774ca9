"""Trainable bottleneck adapters and the full adapter stack.

Each adapter is a two-layer MLP with a LeakyReLU in between (no residual).
The stack holds one adapter per configured backbone stage plus one each for
the CLS token and the text embeddings; flat parameter views feed the
optimizer. Checkpoints (.adck) carry a geometry hash so a checkpoint trained
under one config cannot be silently loaded under another.
"""

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CompatibilityError, ConfigError, DimensionError, FormatError
from .numerics import leaky_relu, leaky_relu_vjp, linear, linear_vjp

CHECKPOINT_MAGIC = b"ADCK"
CHECKPOINT_VERSION = 1


@dataclass
class Adapter:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    slope: float = 0.01

    @property
    def d_in(self):
        return int(self.w1.shape[0])

    @property
    def d_hidden(self):
        return int(self.w1.shape[1])

    @property
    def d_out(self):
        return int(self.w2.shape[1])

    @property
    def n_params(self):
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x):
        out, _ = self.forward_cached(x)
        return out

    def forward_cached(self, x):
        """Forward pass keeping intermediates for the backward pass."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise DimensionError(
                f"adapter expects (n, {self.d_in}) input, got {x.shape}"
            )
        pre = linear(x, self.w1, self.b1)
        hidden = leaky_relu(pre, self.slope)
        out = linear(hidden, self.w2, self.b2)
        return out, (x, pre, hidden)

    def backward(self, cache, grad_out):
        """Exact VJP; parameter grads ordered (w1, b1, w2, b2)."""
        x, pre, hidden = cache
        grad_hidden, grad_w2, grad_b2 = linear_vjp(hidden, self.w2, grad_out)
        grad_pre = leaky_relu_vjp(pre, self.slope, grad_hidden)
        grad_x, grad_w1, grad_b1 = linear_vjp(x, self.w1, grad_pre)
        return grad_x, [grad_w1, grad_b1, grad_w2, grad_b2]


def init_adapter(d_in, d_hidden, d_out, slope, rng):
    """Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    if min(d_in, d_hidden, d_out) < 1:
        raise ConfigError(
            f"adapter dims must be >= 1, got {d_in}/{d_hidden}/{d_out}"
        )
    a1 = np.sqrt(6.0 / (d_in + d_hidden))
    a2 = np.sqrt(6.0 / (d_hidden + d_out))
    return Adapter(
        w1=rng.uniform(-a1, a1, size=(d_in, d_hidden)),
        b1=np.zeros(d_hidden),
        w2=rng.uniform(-a2, a2, size=(d_hidden, d_out)),
        b2=np.zeros(d_out),
        slope=slope,
    )


@dataclass
class AdapterStack:
    layer_indices: list
    patch_adapters: list   # aligned with layer_indices
    cls_adapter: Adapter
    text_adapter: Adapter
    d_e: int

    def patch_adapter(self, layer):
        try:
            return self.patch_adapters[self.layer_indices.index(layer)]
        except ValueError:
            raise CompatibilityError(
                f"stack has no adapter for layer {layer}; trained layers: "
                f"{self.layer_indices}"
            )

    def named_adapters(self):
        pairs = [(f"patch{l}", a) for l, a in zip(self.layer_indices, self.patch_adapters)]
        pairs.append(("cls", self.cls_adapter))
        pairs.append(("text", self.text_adapter))
        return pairs

    @property
    def n_params(self):
        return sum(a.n_params for _, a in self.named_adapters())

    def get_flat(self):
        return np.concatenate(
            [p.ravel() for _, a in self.named_adapters() for p in a.params()]
        )

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise DimensionError(
                f"flat vector length {flat.size} != parameter count {self.n_params}"
            )
        offset = 0
        for _, adapter in self.named_adapters():
            for p in adapter.params():
                p[...] = flat[offset:offset + p.size].reshape(p.shape)
                offset += p.size

    def zero_grads(self):
        return {
            name: [np.zeros_like(p) for p in adapter.params()]
            for name, adapter in self.named_adapters()
        }

    def flatten_grads(self, grads):
        return np.concatenate(
            [g.ravel() for name, _ in self.named_adapters() for g in grads[name]]
        )

    def geometry_hash(self):
        return stack_geometry_hash(
            [(name, a.d_in, a.d_hidden, a.d_out, a.slope)
             for name, a in self.named_adapters()],
            self.d_e,
        )


def stack_geometry_hash(adapter_dims, d_e):
    """32-byte digest of the stack geometry (names, dims, slopes, d_e)."""
    h = hashlib.sha256()
    h.update(f"d_e={d_e}".encode())
    for name, d_in, d_hidden, d_out, slope in adapter_dims:
        h.update(f"|{name}:{d_in}:{d_hidden}:{d_out}:{slope!r}".encode())
    return h.digest()


def expected_geometry_hash(config, d_v, d_t):
    """Geometry hash a stack built from (config, d_v, d_t) would carry."""
    dims = []
    for layer in config.layer_indices:
        dims.append((f"patch{layer}", d_v, config.hidden_dim(d_v), config.d_e,
                     config.leaky_slope))
    dims.append(("cls", d_v, config.hidden_dim(d_v), config.d_e, config.leaky_slope))
    dims.append(("text", d_t, config.hidden_dim(d_t), config.d_e, config.leaky_slope))
    return stack_geometry_hash(dims, config.d_e)


def init_stack(config, d_v, d_t, rng_seed):
    """Deterministically initialize the full stack from a TrainConfig."""
    config.validate()
    rng = np.random.default_rng(rng_seed)
    patch = [
        init_adapter(d_v, config.hidden_dim(d_v), config.d_e, config.leaky_slope, rng)
        for _ in config.layer_indices
    ]
    cls_adapter = init_adapter(
        d_v, config.hidden_dim(d_v), config.d_e, config.leaky_slope, rng
    )
    text_adapter = init_adapter(
        d_t, config.hidden_dim(d_t), config.d_e, config.leaky_slope, rng
    )
    return AdapterStack(
        layer_indices=list(config.layer_indices),
        patch_adapters=patch,
        cls_adapter=cls_adapter,
        text_adapter=text_adapter,
        d_e=config.d_e,
    )


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(stack, path):
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    parts.append(stack.geometry_hash())
    named = stack.named_adapters()
    parts.append(struct.pack("<I", len(named)))
    for name, adapter in named:
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(
            "<IIId", adapter.d_in, adapter.d_hidden, adapter.d_out, adapter.slope
        ))
        for p in adapter.params():
            parts.append(p.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path, expected_hash=None):
    """Load a stack; reject config-hash mismatches when expected_hash given."""
    from .feature_io import _Reader
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    r.expect_magic(CHECKPOINT_MAGIC)
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    stored_hash = bytes(r.take(32, "config hash"))
    if expected_hash is not None and stored_hash != expected_hash:
        raise CompatibilityError(
            f"{path}: checkpoint geometry hash does not match the current "
            f"config/data dimensions"
        )
    count = r.u32("adapter count")
    named = []
    for i in range(count):
        name_len = struct.unpack("<H", r.take(2, f"adapter {i} name length"))[0]
        name = r.take(name_len, f"adapter {i} name").decode()
        d_in, d_hidden, d_out = struct.unpack("<III", r.take(12, f"{name} dims"))
        slope = struct.unpack("<d", r.take(8, f"{name} slope"))[0]
        shapes = [(d_in, d_hidden), (d_hidden,), (d_hidden, d_out), (d_out,)]
        arrays = []
        for shape in shapes:
            n = int(np.prod(shape))
            raw = r.take(8 * n, f"{name} parameters")
            arrays.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
        named.append((name, Adapter(*arrays, slope=slope)))
    r.done()
    patch = [(name, a) for name, a in named if name.startswith("patch")]
    by_name = dict(named)
    if "cls" not in by_name or "text" not in by_name or not patch:
        raise FormatError(f"{path}: checkpoint missing patch/cls/text adapters")
    layers = [int(name[len("patch"):]) for name, _ in patch]
    stack = AdapterStack(
        layer_indices=layers,
        patch_adapters=[a for _, a in patch],
        cls_adapter=by_name["cls"],
        text_adapter=by_name["text"],
        d_e=by_name["cls"].d_out,
    )
    if stack.geometry_hash() != stored_hash:
        raise FormatError(f"{path}: stored geometry hash does not match contents")
    return stack
