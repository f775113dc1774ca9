"""Dense float64 kernels and their vector-Jacobian products.

All kernels operate on plain numpy arrays (2-D float64) and are pure,
single-threaded functions, so identical inputs give bit-identical outputs.
Backward functions implement exact VJPs of the forward maps; gradient
checking against central finite differences lives in the test suite.
"""

import numpy as np

from .errors import ConfigError, DimensionError

NORM_EPS = 1e-12


def _as2d(x, name="array"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {x.shape}")
    return x


# ---------------------------------------------------------------------------
# affine

def linear(x, weight, bias):
    """out[i, j] = sum_k x[i, k] * weight[k, j] + bias[j]."""
    x = _as2d(x, "x")
    weight = _as2d(weight, "weight")
    bias = np.asarray(bias, dtype=np.float64)
    if x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"linear: x has {x.shape[1]} cols, weight has {weight.shape[0]} rows"
        )
    if bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"linear: bias shape {bias.shape} != ({weight.shape[1]},)"
        )
    return x @ weight + bias


def linear_vjp(x, weight, grad_out):
    """Gradients of linear w.r.t. (x, weight, bias) given upstream grad."""
    grad_out = _as2d(grad_out, "grad_out")
    grad_x = grad_out @ weight.T
    grad_w = x.T @ grad_out
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# activations

def leaky_relu(x, slope):
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky_relu slope must be in (0,1), got {slope}")
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0.0, x, slope * x)


def leaky_relu_vjp(x, slope, grad_out):
    # derivative at exactly 0 is defined as 1
    return np.where(x >= 0.0, 1.0, slope) * np.asarray(grad_out, dtype=np.float64)


def sigmoid(x):
    """Elementwise logistic function, stable for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_vjp(y, grad_out):
    """VJP given the forward output y = sigmoid(x)."""
    return y * (1.0 - y) * np.asarray(grad_out, dtype=np.float64)


def softmax_over_states(scores, temperature):
    """Row-wise softmax of scores/temperature, stabilized by max-subtraction."""
    if temperature <= 0.0:
        raise ConfigError(f"softmax temperature must be > 0, got {temperature}")
    scores = _as2d(scores, "scores")
    z = scores / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_over_states_vjp(probs, temperature, grad_out):
    """VJP given forward output probs = softmax(scores/temperature)."""
    grad_out = _as2d(grad_out, "grad_out")
    inner = (grad_out * probs).sum(axis=1, keepdims=True)
    return probs * (grad_out - inner) / temperature


# ---------------------------------------------------------------------------
# norms and similarity

def l2_normalize_rows(x, eps=NORM_EPS):
    if eps <= 0.0:
        raise ConfigError(f"l2_normalize_rows eps must be > 0, got {eps}")
    x = _as2d(x, "x")
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    return x / np.maximum(norms, eps)


def cosine_rows(a, b, eps=NORM_EPS):
    """out[i, j] = <a_i, b_j> / (max(|a_i|, eps) * max(|b_j|, eps))."""
    a = _as2d(a, "a")
    b = _as2d(b, "b")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(
            f"cosine_rows: inner dims differ, {a.shape[1]} vs {b.shape[1]}"
        )
    na = np.maximum(np.sqrt((a * a).sum(axis=1)), eps)
    nb = np.maximum(np.sqrt((b * b).sum(axis=1)), eps)
    return (a @ b.T) / (na[:, None] * nb[None, :])


def cosine_rows_vjp(a, b, grad_out, eps=NORM_EPS):
    """Gradients of cosine_rows w.r.t. a and b.

    Where a row norm falls below eps the guard is active and the norm term
    contributes no gradient.
    """
    a = _as2d(a, "a")
    b = _as2d(b, "b")
    grad_out = _as2d(grad_out, "grad_out")
    raw_na = np.sqrt((a * a).sum(axis=1))
    raw_nb = np.sqrt((b * b).sum(axis=1))
    na = np.maximum(raw_na, eps)
    nb = np.maximum(raw_nb, eps)
    out = (a @ b.T) / (na[:, None] * nb[None, :])
    ghat = grad_out / (na[:, None] * nb[None, :])
    # norm-direction terms only where the eps guard is inactive
    act_a = (raw_na >= eps).astype(np.float64)
    act_b = (raw_nb >= eps).astype(np.float64)
    grad_a = ghat @ b - (
        act_a * (grad_out * out).sum(axis=1) / (na * na)
    )[:, None] * a
    grad_b = ghat.T @ a - (
        act_b * (grad_out * out).sum(axis=0) / (nb * nb)
    )[:, None] * b
    return grad_a, grad_b


# ---------------------------------------------------------------------------
# bilinear resize (half-pixel-center convention, align-corners=false)

def _axis_coords(n_in, n_out):
    c = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    c = np.clip(c, 0.0, n_in - 1.0)
    i0 = np.floor(c).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = c - i0
    return i0, i1, frac


def bilinear_resize(src, out_h, out_w):
    """Resize a grid with half-pixel centers; constants map to constants."""
    src = _as2d(src, "src")
    h, w = src.shape
    if min(h, w, out_h, out_w) < 1:
        raise DimensionError(
            f"bilinear_resize: zero dimension in {h}x{w} -> {out_h}x{out_w}"
        )
    r0, r1, fr = _axis_coords(h, out_h)
    c0, c1, fc = _axis_coords(w, out_w)
    tl = src[np.ix_(r0, c0)]
    tr = src[np.ix_(r0, c1)]
    bl = src[np.ix_(r1, c0)]
    br = src[np.ix_(r1, c1)]
    fr = fr[:, None]
    fc = fc[None, :]
    top = tl * (1.0 - fc) + tr * fc
    bot = bl * (1.0 - fc) + br * fc
    return top * (1.0 - fr) + bot * fr


def bilinear_resize_vjp(src_h, src_w, grad_out):
    """Transpose of the resize: scatter upstream grads onto the source grid."""
    grad_out = _as2d(grad_out, "grad_out")
    out_h, out_w = grad_out.shape
    r0, r1, fr = _axis_coords(src_h, out_h)
    c0, c1, fc = _axis_coords(src_w, out_w)
    fr = fr[:, None]
    fc = fc[None, :]
    grad_src = np.zeros((src_h, src_w), dtype=np.float64)
    rows0 = np.broadcast_to(r0[:, None], grad_out.shape)
    rows1 = np.broadcast_to(r1[:, None], grad_out.shape)
    cols0 = np.broadcast_to(c0[None, :], grad_out.shape)
    cols1 = np.broadcast_to(c1[None, :], grad_out.shape)
    np.add.at(grad_src, (rows0, cols0), grad_out * (1.0 - fr) * (1.0 - fc))
    np.add.at(grad_src, (rows0, cols1), grad_out * (1.0 - fr) * fc)
    np.add.at(grad_src, (rows1, cols0), grad_out * fr * (1.0 - fc))
    np.add.at(grad_src, (rows1, cols1), grad_out * fr * fc)
    return grad_src
