"""Layer-local spike-time-displacement learning.

Every trainable layer owns a squared-error loss over the gap between its
target and actual spike times. The output layer gets its targets from the
label; every other layer gets them by displacing its spike times along
the slope of the next layer's loss. No gradient travels more than one
layer down.
"""
from dataclasses import dataclass

import numpy as np

from operators.dynamics import psp_kernel, psp_slope_wrt_presyn_time
from operators.encoding import NO_SPIKE, SpikeRaster
from operators.errors import InputDomainError, ShapeError
from operators.layers import DENSE, POOL, conv_patches, network_forward, pool_windows


@dataclass(frozen=True)
class TargetTimes(object):
    times: np.ndarray
    t_max: int

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        if np.any(t < 0) or np.any(t > self.t_max):
            raise InputDomainError(f"target times must lie in [0, {self.t_max}]")

    @classmethod
    def clamped(cls, values, t_max):
        return cls(np.clip(np.asarray(values, dtype=np.float64), 0, t_max), int(t_max))


@dataclass(frozen=True)
class OutputTargetRule(object):
    lam: float = 5.0

    def __post_init__(self):
        if self.lam < 0:
            raise InputDomainError(f"lambda must be >= 0, got {self.lam}")


@dataclass
class LayerGradients(object):
    dw: np.ndarray
    dt: np.ndarray = None
    dalpha: np.ndarray = None

    def __add__(self, other):
        def _sum(a, b):
            if a is None:
                return b
            if b is None:
                return a
            return a + b

        return LayerGradients(self.dw + other.dw, _sum(self.dt, other.dt), _sum(self.dalpha, other.dalpha))


@dataclass(frozen=True)
class LearningConfig(object):
    lam: float = 5.0
    eta_sign: int = 1
    clip_weights: bool = False

    @property
    def rule(self):
        return OutputTargetRule(self.lam)


def layer_errors(actual, targets):
    t = actual.filled().reshape(-1)
    T = np.asarray(targets.times, dtype=np.float64).reshape(-1)
    if t.size != T.size:
        raise ShapeError(f"{t.size} actual times but {T.size} targets")
    return (T - t) / actual.t_max


def layer_loss(actual, targets, t_max=None):
    if t_max is not None and t_max != actual.t_max:
        actual = SpikeRaster(actual.times, t_max)
    e = layer_errors(actual, targets)
    return float(0.5 * np.sum(e * e))


def output_targets(actual, label, rule):
    t = actual.filled().reshape(-1)
    if not 0 <= label < t.size:
        raise InputDomainError(f"label {label} out of range for {t.size} output neurons")
    targets = np.full(t.size, t.max() + rule.lam)
    targets[label] = t.min() - rule.lam
    return TargetTimes.clamped(targets, actual.t_max)


def dense_pairs(pre, post):
    t_pre = pre.filled().reshape(-1)
    t_post = post.filled().reshape(-1)
    dt = t_post[:, None] - t_pre[None, :]
    # silent neurons take part at t_max
    causal = dt >= 0
    return t_post, dt, causal


def dense_weight_update(pre, post, targets, state, p):
    if state.weights.shape != (post.times.size, pre.times.size):
        raise ShapeError(f"weights {state.weights.shape} do not connect {pre.times.size} -> {post.times.size}")
    t_post, dt, causal = dense_pairs(pre, post)
    e = layer_errors(post, targets)
    coef = -state.eta * e * t_post / (p.t_max * p.v_th)
    return coef[:, None] * np.where(causal, psp_kernel(dt, p), 0.0)


def hidden_displacements(pre, post, post_errors, next_state, p, beta):
    weights = next_state.effective_weights()
    if weights.shape != (post.times.size, pre.times.size):
        raise ShapeError(f"weights {weights.shape} do not connect {pre.times.size} -> {post.times.size}")
    t_post, dt, causal = dense_pairs(pre, post)
    slope = np.where(causal, psp_slope_wrt_presyn_time(dt, weights, p), 0.0)
    c = np.asarray(post_errors).reshape(-1) * t_post / (p.t_max * p.v_th)
    return -beta * (c @ slope)


def conv_pairs(pre, post_map, kernel):
    """Time differences between every output neuron of a conv layer and every
    cell of its receptive field, with the causal mask.

    Returns (t_post (M, P), dt (M, P, C*k*k), causal (M, P, C*k*k))."""
    if pre.times.ndim == 2:
        pre = pre.reshape((1,) + pre.shape)
    n_maps = post_map.shape[0]
    t_pre = conv_patches(pre.filled(), kernel)
    n_pos = t_pre.shape[0] * t_pre.shape[1]
    if post_map.times.size != n_maps * n_pos:
        raise ShapeError(f"post map {post_map.shape} does not match pre raster {pre.shape} with kernel {kernel}")
    t_pre = t_pre.reshape(n_pos, -1)
    t_post = post_map.filled().reshape(n_maps, n_pos)
    dt = t_post[:, :, None] - t_pre[None, :, :]
    causal = dt >= 0
    return t_post, dt, causal


def conv_weight_update(pre, post_map, targets, filters, p, eta_c):
    filters = np.asarray(filters)
    n_maps, _, k, _ = filters.shape
    t_post, dt, causal = conv_pairs(pre, post_map, k)
    e = layer_errors(post_map, targets).reshape(t_post.shape)
    coef = -eta_c * e * t_post / (p.t_max * p.v_th)
    eps = np.where(causal, psp_kernel(dt, p), 0.0)
    return np.einsum("mp,mpk->mk", coef, eps).reshape(filters.shape)


def conv_displacements(pre, post_map, post_errors, next_state, p, beta):
    filters = next_state.effective_weights()
    n_maps, _, k, _ = filters.shape
    if pre.times.ndim == 2:
        pre = pre.reshape((1,) + pre.shape)
    t_post, dt, causal = conv_pairs(pre, post_map, k)
    w = filters.reshape(n_maps, 1, -1)
    slope = np.where(causal, psp_slope_wrt_presyn_time(dt, w, p), 0.0)
    coef = np.asarray(post_errors).reshape(t_post.shape) * t_post / (p.t_max * p.v_th)
    per_cell = np.einsum("mp,mpk->pk", coef, slope)

    # scatter every receptive-field cell back onto its presynaptic neuron
    index = conv_patches(np.arange(pre.times.size).reshape(pre.shape), k).reshape(per_cell.shape)
    dt_pre = np.bincount(index.reshape(-1), weights=per_cell.reshape(-1), minlength=pre.times.size)
    return -beta * dt_pre.reshape(pre.shape)


def route_targets_through_pool(pool_in, pool_out_displacements, window, stride=None):
    """Hand each pooling window's displacement to the neuron that won it."""
    if stride is None:
        stride = window
    squeeze = pool_in.times.ndim == 2
    times = pool_in.times[None] if squeeze else pool_in.times
    late = pool_in.t_max + 1
    filled = np.where(times == NO_SPIKE, late, times)

    windows = pool_windows(filled, window, stride)
    index = pool_windows(np.arange(filled.size).reshape(filled.shape), window, stride)
    shift = np.asarray(pool_out_displacements, dtype=np.float64)
    if shift.size != int(np.prod(windows.shape[:3])):
        raise ShapeError(f"displacements of shape {shift.shape} do not match pooled shape {windows.shape[:3]}")
    shift = shift.reshape(windows.shape[:3])

    winner = np.argmin(windows, axis=-1)
    has_spike = np.take_along_axis(windows, winner[..., None], axis=-1)[..., 0] < late
    winner_index = np.take_along_axis(index, winner[..., None], axis=-1)[..., 0]

    dt_in = np.bincount(winner_index[has_spike], weights=shift[has_spike], minlength=filled.size)
    targets = pool_in.filled().reshape(-1) + dt_in
    return TargetTimes.clamped(targets.reshape(pool_in.shape), pool_in.t_max)


def targets_from_displacements(pre, dt):
    return TargetTimes.clamped(pre.filled() + np.asarray(dt).reshape(pre.shape), pre.t_max)


def compute_gradients(sample, label, network, config, alpha_fn=None):
    """Forward pass plus every layer's local gradients, nothing committed.

    Returns (per-layer losses, per-layer LayerGradients or None, rasters)."""
    layers = network.layers
    rasters = network_forward(sample, layers)
    if not layers:
        return [], [], rasters

    losses = [0.0] * len(layers)
    grads = [None] * len(layers)
    targets = output_targets(rasters[-1], label, config.rule)

    for l in reversed(range(len(layers))):
        layer = layers[l]
        spec = layer.spec
        pre, post = rasters[l], rasters[l + 1]
        losses[l] = layer_loss(post, targets)

        if spec.kind == POOL:
            if l > 0:
                shift = np.asarray(targets.times).reshape(post.shape) - post.filled()
                targets = route_targets_through_pool(pre.reshape(spec.in_shape), shift, spec.window, spec.stride)
            continue

        p = spec.params
        state = layer.state
        errors = layer_errors(post, targets)
        if spec.kind == DENSE:
            pre = pre.flat()
            grad = LayerGradients(config.eta_sign * dense_weight_update(pre, post, targets, state, p))
            if l > 0:
                grad.dt = hidden_displacements(pre, post, errors, state, p, state.beta)
        else:
            pre = pre.reshape(spec.in_shape)
            dw = conv_weight_update(pre, post, targets, state.weights, p, state.eta)
            grad = LayerGradients(config.eta_sign * dw)
            if l > 0:
                grad.dt = conv_displacements(pre, post, errors, state, p, state.beta)
        if alpha_fn is not None and state.binary:
            grad.dalpha = alpha_fn(pre, post, targets, state, p)
        grads[l] = grad

        if l > 0:
            targets = targets_from_displacements(rasters[l], grad.dt)

    return losses, grads, rasters


def accumulate_gradients(per_sample):
    """Sum per-sample gradient lists; summation order does not matter."""
    total = None
    for grads in per_sample:
        if total is None:
            total = list(grads)
            continue
        total = [a if b is None else (b if a is None else a + b) for a, b in zip(total, grads)]
    return total or []


def apply_gradients(network, grads, config):
    for layer, grad in zip(network.layers, grads):
        if grad is None or layer.state is None:
            continue
        layer.state.commit(grad, clip=config.clip_weights)


def train_batch(samples, labels, network, config, alpha_fn=None):
    """Gradients of every sample against the same weights, one commit.

    Returns (per-sample losses, per-sample output rasters)."""
    all_losses, all_grads, outputs = [], [], []
    for sample, label in zip(samples, labels):
        losses, grads, rasters = compute_gradients(sample, label, network, config, alpha_fn=alpha_fn)
        all_losses.append(losses)
        all_grads.append(grads)
        outputs.append(rasters[-1])
    apply_gradients(network, accumulate_gradients(all_grads), config)
    return all_losses, outputs


def train_step(sample, label, network, config):
    losses, grads, _ = compute_gradients(sample, label, network, config)
    apply_gradients(network, grads, config)
    return losses
