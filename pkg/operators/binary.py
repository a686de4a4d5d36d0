import math
from dataclasses import dataclass, field

import numpy as np

from logs import get_logger
from operators.dynamics import membrane_potential, psp_kernel
from operators.errors import ShapeError
from operators.layers import CONV, LayerState
from operators.learning import apply_gradients, compute_gradients, conv_pairs, dense_pairs, layer_errors

logger = get_logger(__name__)


def binarize(real_weights):
    """Elementwise sign with sign(0) = +1."""
    return np.where(np.asarray(real_weights) >= 0, 1, -1).astype(np.int8)


@dataclass
class BinaryLayerState(LayerState):
    """Real shadow weights, trained as usual, plus the scaling factors the
    forward pass multiplies their signs by."""

    alpha: np.ndarray = None
    mu: float = 0.0001
    alpha_range: tuple = (0.0, 2.0)
    per_filter: bool = False
    name: str = ""
    warned_negative: bool = field(default=False, repr=False)

    def __post_init__(self):
        super().__post_init__()
        if self.alpha is None:
            self.alpha = np.ones(self.n_alpha_for(self.weights.shape, self.per_filter))
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=np.float64))
        expected = self.n_alpha_for(self.weights.shape, self.per_filter)
        if self.alpha.shape != (expected,):
            raise ShapeError(f"expected {expected} scaling factor(s), got {self.alpha.shape}")

    @staticmethod
    def n_alpha_for(weight_shape, per_filter):
        if per_filter and len(weight_shape) == 4:
            return weight_shape[0]
        return 1

    @classmethod
    def initialize(cls, spec, rng, init_range=(0.0, 1.0), eta=0.001, beta=1.0,
                   mu=0.0001, alpha_range=(0.0, 2.0), per_filter=False, name=""):
        lo, hi = init_range
        weights = rng.uniform(lo, hi, size=spec.weight_shape)
        per_filter = per_filter and spec.kind == CONV
        n_alpha = cls.n_alpha_for(spec.weight_shape, per_filter)
        alpha = rng.uniform(alpha_range[0], alpha_range[1], size=n_alpha)
        return cls(weights, eta=eta, beta=beta, init_range=(lo, hi), alpha=alpha, mu=mu,
                   alpha_range=tuple(alpha_range), per_filter=per_filter, name=name)

    @property
    def binary(self):
        return True

    @property
    def sign_weights(self):
        return binarize(self.weights)

    def alpha_broadcast(self):
        if self.alpha.size == 1:
            return self.alpha[0]
        return self.alpha.reshape((-1,) + (1,) * (self.weights.ndim - 1))

    def effective_weights(self):
        return self.alpha_broadcast() * self.sign_weights

    def commit(self, grad, clip=False):
        self.weights += grad.dw
        if clip:
            np.clip(self.weights, -1.0, 1.0, out=self.weights)
        if grad.dalpha is not None:
            self.alpha += grad.dalpha
            if np.any(self.alpha < 0) and not self.warned_negative:
                logger.warning(f"scaling factor of layer {self.name or '?'} went negative "
                               f"(min {self.alpha.min():.4g}); effective signs are flipped")
                self.warned_negative = True


def binary_membrane_potential(inputs, sign_weights, alpha, t, p):
    return float(alpha) * membrane_potential(inputs, sign_weights, t, p)


def alpha_update(pre, post, targets, state, p):
    signs = state.sign_weights.astype(np.float64)
    e = layer_errors(post, targets)

    if signs.ndim == 2:
        if signs.shape != (post.times.size, pre.times.size):
            raise ShapeError(f"weights {signs.shape} do not connect {pre.times.size} -> {post.times.size}")
        t_post, dt, causal = dense_pairs(pre, post)
        eps = np.where(causal, psp_kernel(dt, p), 0.0)
        drive = np.sum(signs * eps, axis=1)
        c = e * t_post / (p.t_max * p.v_th)
        return np.array([-state.mu * np.sum(c * drive)])

    n_maps = signs.shape[0]
    t_post, dt, causal = conv_pairs(pre, post, signs.shape[-1])
    eps = np.where(causal, psp_kernel(dt, p), 0.0)
    drive = np.einsum("mpk,mk->mp", eps, signs.reshape(n_maps, -1))
    c = e.reshape(t_post.shape) * t_post / (p.t_max * p.v_th)
    per_map = -state.mu * np.sum(c * drive, axis=1)
    if state.alpha.size == 1:
        return np.array([per_map.sum()])
    return per_map


def binary_train_step(sample, label, network, config):
    losses, grads, _ = compute_gradients(sample, label, network, config, alpha_fn=alpha_update)
    apply_gradients(network, grads, config)
    return losses


def footprint(network):
    """Weight storage of the network: full-precision vs bit-packed signs."""
    n_weights = 0
    packed_bytes = 0
    n_alpha = 0
    for layer in network.trainable_layers():
        n = layer.state.weights.size
        n_weights += n
        packed_bytes += math.ceil(n / 8)
        n_alpha += layer.state.alpha.size if layer.state.binary else 1
    raw_bytes = 8 * n_weights
    alpha_bytes = 8 * n_alpha
    total = packed_bytes + alpha_bytes
    return {
        "n_weights": n_weights,
        "n_alpha": n_alpha,
        "raw_bytes": raw_bytes,
        "packed_bytes": packed_bytes,
        "alpha_bytes": alpha_bytes,
        "packed_total_bytes": total,
        "reduction": raw_bytes / total if total else float("inf"),
    }
