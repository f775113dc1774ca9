"""Adam training of the adapter stack over a manifest of feature bundles.

The per-sample backward pass composes the kernel VJPs by hand: upsampled
focal+dice gradients flow back through the resize, the state softmax (or
sigmoid for the calibration branch), the cosine similarities, and the
adapters. Batch gradients are summed in batch order and divided by the true
batch size, so runs with the same seed, config, and data are bit-identical.
"""

from dataclasses import dataclass

import numpy as np

from . import losses
from .adapters import init_stack
from .errors import CompatibilityError, ValidationError
from .feature_io import read_bundle
from .numerics import (
    bilinear_resize,
    bilinear_resize_vjp,
    cosine_rows,
    cosine_rows_vjp,
    sigmoid,
    sigmoid_vjp,
    softmax_over_states,
    softmax_over_states_vjp,
)


@dataclass
class AdamState:
    t: int
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n_params):
        return cls(t=0, m=np.zeros(n_params), v=np.zeros(n_params))


def adam_step(params, grads, state, learning_rate, beta1=0.9, beta2=0.999,
              eps=1e-8):
    """One Adam update with bias correction; returns updated params."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValidationError(
            f"adam_step: length mismatch params {params.shape}, grads "
            f"{grads.shape}, moments {state.m.shape}"
        )
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    return params - learning_rate * m_hat / (np.sqrt(v_hat) + eps)


def sample_loss_and_grads(bundle, stack, bank, cfg):
    """Total/CM/AACM losses and the flat parameter gradient for one sample."""
    if not bundle.mask_present:
        raise ValidationError("training sample has no ground-truth mask")
    lcfg = cfg.loss
    mask = bundle.mask.astype(np.float64)
    grid_shape = (bundle.grid_h, bundle.grid_w)
    image_h, image_w = bundle.image_h, bundle.image_w
    n_stages = len(cfg.layer_indices)
    grads = stack.zero_grads()

    text_out, text_cache = stack.text_adapter.forward_cached(bank.pooled)
    grad_text_out = np.zeros_like(text_out)

    cm_sum = 0.0
    for layer in cfg.layer_indices:
        tokens = bundle.tokens_for_layer(layer)
        adapter = stack.patch_adapter(layer)
        patch_out, patch_cache = adapter.forward_cached(tokens)
        cos = cosine_rows(patch_out, text_out)
        probs = softmax_over_states(cos, cfg.temperature)
        grid = probs[:, 1].reshape(grid_shape)
        up = bilinear_resize(grid, image_h, image_w)
        l_stage, g_up = losses.focal_dice(up, mask, lcfg)
        cm_sum += l_stage
        # d(total)/d(up) = lambda_cm / n_stages * g_up
        g_grid = bilinear_resize_vjp(
            grid_shape[0], grid_shape[1], g_up
        ) * (lcfg.lambda_cm / n_stages)
        g_probs = np.zeros_like(probs)
        g_probs[:, 1] = g_grid.ravel()
        g_cos = softmax_over_states_vjp(probs, cfg.temperature, g_probs)
        g_patch_out, g_text = cosine_rows_vjp(patch_out, text_out, g_cos)
        grad_text_out += g_text
        _, g_params = adapter.backward(patch_cache, g_patch_out)
        name = f"patch{layer}"
        for acc, g in zip(grads[name], g_params):
            acc += g
    cm = cm_sum / n_stages

    aacm = 0.0
    if lcfg.lambda_aacm > 0.0:
        final_layer = cfg.layer_indices[-1]
        tokens = bundle.tokens_for_layer(final_layer)
        final_adapter = stack.patch_adapter(final_layer)
        patch_out, patch_cache = final_adapter.forward_cached(tokens)
        cls_out, cls_cache = stack.cls_adapter.forward_cached(
            bundle.cls_token.reshape(1, -1)
        )
        cos = cosine_rows(patch_out, cls_out)      # (N, 1)
        raw = cos[:, 0].reshape(grid_shape)
        aacm, g_raw = losses.loss_aacm(raw, mask, lcfg)
        g_cos = (g_raw.ravel() * lcfg.lambda_aacm)[:, None]
        g_patch_out, g_cls_out = cosine_rows_vjp(patch_out, cls_out, g_cos)
        _, g_params = final_adapter.backward(patch_cache, g_patch_out)
        name = f"patch{final_layer}"
        for acc, g in zip(grads[name], g_params):
            acc += g
        _, g_cls_params = stack.cls_adapter.backward(cls_cache, g_cls_out)
        for acc, g in zip(grads["cls"], g_cls_params):
            acc += g

    _, g_text_params = stack.text_adapter.backward(text_cache, grad_text_out)
    for acc, g in zip(grads["text"], g_text_params):
        acc += g

    total = losses.total_loss(cm, aacm, lcfg)
    return total, cm, aacm, stack.flatten_grads(grads)


def _load_train_bundles(manifest, cfg):
    entries = manifest.select("train")
    if not entries:
        raise ValidationError("manifest has no train entries")
    bundles = []
    d_v = None
    for entry, path in zip(entries, manifest.paths("train")):
        bundle = read_bundle(path)
        if d_v is None:
            d_v = bundle.d_v
        elif bundle.d_v != d_v:
            raise CompatibilityError(
                f"{entry.path}: d_v {bundle.d_v} differs from first bundle ({d_v})"
            )
        for layer in cfg.layer_indices:
            if layer not in bundle.layer_indices:
                raise CompatibilityError(
                    f"{entry.path}: missing configured layer {layer} "
                    f"(stored: {bundle.layer_indices})"
                )
        if not bundle.mask_present:
            raise ValidationError(f"{entry.path}: train bundle has no mask")
        bundles.append(bundle)
    return bundles


def train(manifest, bank, cfg, log_lines=None):
    """Train an adapter stack; returns (stack, per-epoch mean loss records).

    log_lines, when given, receives one "epoch\\tstep\\ttotal\\tcm\\taacm"
    line per optimizer step.
    """
    cfg.validate()
    bundles = _load_train_bundles(manifest, cfg)
    stack = init_stack(cfg, bundles[0].d_v, bank.d_t, cfg.seed)
    params = stack.get_flat()
    state = AdamState.zeros(params.size)
    shuffle_rng = np.random.default_rng(cfg.seed + 1)
    epoch_log = []
    step = 0
    for epoch in range(cfg.epochs):
        order = np.arange(len(bundles))
        shuffle_rng.shuffle(order)
        sums = np.zeros(3)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            batch_grad = np.zeros_like(params)
            batch_losses = np.zeros(3)
            for idx in batch:
                total, cm, aacm, grad = sample_loss_and_grads(
                    bundles[idx], stack, bank, cfg
                )
                batch_grad += grad
                batch_losses += (total, cm, aacm)
            batch_grad /= len(batch)
            batch_losses /= len(batch)
            params = adam_step(
                params, batch_grad, state, cfg.learning_rate,
                cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
            )
            stack.set_flat(params)
            step += 1
            sums += batch_losses * len(batch)
            if log_lines is not None:
                log_lines.append(
                    f"{epoch}\t{step}\t{batch_losses[0]:.10g}"
                    f"\t{batch_losses[1]:.10g}\t{batch_losses[2]:.10g}"
                )
        means = sums / len(order)
        epoch_log.append(
            {"epoch": epoch, "total": means[0], "cm": means[1], "aacm": means[2]}
        )
    return stack, epoch_log
