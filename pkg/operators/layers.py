from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from operators.dynamics import NeuronParams, first_crossing, first_spike_times, kernel_matrix
from operators.encoding import NO_SPIKE, SpikeRaster
from operators.errors import InputDomainError, ShapeError

CONV = "conv"
POOL = "pool"
DENSE = "dense"


@dataclass(frozen=True)
class LayerSpec(object):
    """Architecture of one layer. `in_shape`/`out_shape` are (maps, h, w) for
    conv and pool layers and (n,) for dense layers."""

    kind: str
    in_shape: tuple
    out_shape: tuple
    n_maps: int = 0
    kernel: int = 0
    window: int = 0
    stride: int = 0
    n_out: int = 0
    params: NeuronParams = None

    @property
    def trainable(self):
        return self.kind != POOL

    @property
    def weight_shape(self):
        if self.kind == DENSE:
            return (self.n_out, int(np.prod(self.in_shape)))
        if self.kind == CONV:
            return (self.n_maps, self.in_shape[0], self.kernel, self.kernel)
        return ()

    def with_params(self, params):
        return replace(self, params=params)

    def token(self):
        if self.kind == CONV:
            return f"{self.n_maps}C{self.kernel}"
        if self.kind == POOL:
            if self.stride != self.window:
                return f"P{self.window}s{self.stride}"
            return f"P{self.window}"
        return str(self.n_out)


def _spatial(shape):
    if len(shape) == 2:
        return (1,) + tuple(shape)
    if len(shape) == 3:
        return tuple(shape)
    raise ShapeError(f"expected a (maps, h, w) or (h, w) shape, got {shape}")


def conv_spec(in_shape, n_maps, kernel, params=None):
    c, h, w = _spatial(in_shape)
    if n_maps < 1 or kernel < 1:
        raise ShapeError(f"conv layer needs n_maps >= 1 and kernel >= 1, got {n_maps}C{kernel}")
    if kernel > h or kernel > w:
        raise ShapeError(f"kernel {kernel} larger than {h}x{w} input map")
    out = (n_maps, h - kernel + 1, w - kernel + 1)
    return LayerSpec(CONV, (c, h, w), out, n_maps=n_maps, kernel=kernel, params=params)


def pool_spec(in_shape, window, stride=None):
    if stride is None:
        stride = window
    c, h, w = _spatial(in_shape)
    if window < 1 or stride < 1:
        raise ShapeError(f"pool window and stride must be >= 1, got {window}, {stride}")
    if window > h or window > w:
        raise ShapeError(f"pool window {window} larger than {h}x{w} input map")
    if (h - window) % stride or (w - window) % stride:
        raise ShapeError(f"{h}x{w} map does not tile with window {window} and stride {stride}")
    out = (c, (h - window) // stride + 1, (w - window) // stride + 1)
    return LayerSpec(POOL, (c, h, w), out, window=window, stride=stride)


def dense_spec(in_shape, n_out, params=None):
    if n_out < 1:
        raise ShapeError(f"dense layer needs at least one neuron, got {n_out}")
    n_in = int(np.prod(in_shape))
    return LayerSpec(DENSE, (n_in,), (n_out,), n_out=n_out, params=params)


@dataclass
class LayerState(object):
    """Real-valued weights of a trainable layer plus its learning rates."""

    weights: np.ndarray
    eta: float = 0.001
    beta: float = 1.0
    init_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not np.all(np.isfinite(self.weights)):
            raise InputDomainError("layer weights must be finite")

    @classmethod
    def initialize(cls, spec, rng, init_range=(0.0, 1.0), eta=0.001, beta=1.0):
        lo, hi = init_range
        weights = rng.uniform(lo, hi, size=spec.weight_shape)
        return cls(weights, eta=eta, beta=beta, init_range=(lo, hi))

    def effective_weights(self):
        return self.weights

    def commit(self, grad, clip=False):
        self.weights += grad.dw

    @property
    def binary(self):
        return False


@dataclass
class Layer(object):
    spec: LayerSpec
    state: LayerState = None

    @property
    def params(self):
        return self.spec.params


@dataclass
class Network(object):
    architecture: str
    layers: list = field(default_factory=list)
    input_shape: tuple = (28, 28)
    intensity_max: int = 255

    @property
    def binary(self):
        return any(l.state is not None and l.state.binary for l in self.layers)

    def trainable_layers(self):
        return [l for l in self.layers if l.spec.trainable]

    @property
    def t_max(self):
        for layer in self.trainable_layers():
            return layer.spec.params.t_max
        return 100


def _check_size(raster, shape):
    if raster.times.size != int(np.prod(shape)):
        raise ShapeError(f"raster of {raster.times.size} neurons does not fit shape {shape}")


def dense_forward(inputs, state, p):
    n_in = state.weights.shape[1]
    if inputs.times.size != n_in:
        raise ShapeError(f"dense layer expects {n_in} inputs, got {inputs.times.size}")
    return first_spike_times(inputs.flat(), state.effective_weights(), p)


def conv_patches(values, kernel):
    """(..., C, H, W) -> (..., H', W', C, k, k) view of every receptive field."""
    view = sliding_window_view(values, (kernel, kernel), axis=(-2, -1))
    # (..., C, H', W', k, k) -> (..., H', W', C, k, k)
    return np.moveaxis(view, -5, -3)


def conv_forward(inputs, state, p):
    filters = state.effective_weights()
    n_maps, c, k, _ = filters.shape
    if inputs.times.ndim == 2:
        inputs = inputs.reshape((1,) + inputs.shape)
    if inputs.times.ndim != 3 or inputs.shape[0] != c:
        raise ShapeError(f"conv layer expects {c} input maps, got raster of shape {inputs.shape}")
    _, h, w = inputs.shape
    if h < k or w < k:
        raise ShapeError(f"kernel {k} larger than {h}x{w} input map")

    eps = kernel_matrix(inputs, p).reshape((p.t_max + 1, c, h, w))
    patches = conv_patches(eps, k)
    v = np.tensordot(patches, filters, axes=([3, 4, 5], [1, 2, 3]))
    # v: (t, H', W', maps)
    first = first_crossing(v.reshape(p.t_max + 1, -1), p.v_th)
    first = first.reshape(h - k + 1, w - k + 1, n_maps).transpose(2, 0, 1)
    return SpikeRaster(np.ascontiguousarray(first), p.t_max)


def pool_windows(times, window, stride):
    """(C, H, W) -> (C, H', W', window*window) view of every pooling window."""
    view = sliding_window_view(times, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    return view.reshape(view.shape[:3] + (window * window,))


def pool_forward(inputs, window, stride):
    squeeze = inputs.times.ndim == 2
    times = inputs.times[None] if squeeze else inputs.times
    if times.ndim != 3:
        raise ShapeError(f"pooling expects a (maps, h, w) raster, got shape {inputs.shape}")
    _, h, w = times.shape
    if window > h or window > w or (h - window) % stride or (w - window) % stride:
        raise ShapeError(f"{h}x{w} map does not tile with window {window} and stride {stride}")

    late = inputs.t_max + 1
    filled = np.where(times == NO_SPIKE, late, times)
    earliest = pool_windows(filled, window, stride).min(axis=-1)
    earliest = np.where(earliest == late, NO_SPIKE, earliest).astype(np.int64)
    if squeeze:
        earliest = earliest[0]
    return SpikeRaster(earliest, inputs.t_max)


def layer_forward(inputs, layer):
    spec = layer.spec
    if spec.kind == DENSE:
        return dense_forward(inputs.flat(), layer.state, spec.params)
    _check_size(inputs, spec.in_shape)
    inputs = inputs.reshape(spec.in_shape)
    if spec.kind == CONV:
        return conv_forward(inputs, layer.state, spec.params)
    return pool_forward(inputs, spec.window, spec.stride)


def network_forward(inputs, layers):
    """Every raster of the pass: the input followed by one per layer."""
    rasters = [inputs]
    for layer in layers:
        rasters.append(layer_forward(rasters[-1], layer))
    return rasters


def classify(output):
    return int(np.argmin(output.filled(output.t_max + 1).reshape(-1)))
