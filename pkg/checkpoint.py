import io
import os
import struct

import numpy as np

from operators.binary import BinaryLayerState, footprint
from operators.dynamics import NeuronParams
from operators.errors import FormatError, ModeError, PayloadLengthError
from operators.layers import Layer, LayerState, Network
from run_config import input_shape_of, parse_architecture

CHECKPOINT_MAGIC = b"SPKCKPT\x00"
CHECKPOINT_VERSION = 1
PACKED_MAGIC = b"SNNPACK1"
PACKED_VERSION = 1

MODE_REAL = 0
MODE_BINARY = 1

# Layout (all little-endian):
#   magic[8] version:u32 mode:u8 t_max:u32 intensity_max:u32 len:u32 architecture[len]
#   n_records:u32, then per trainable layer:
#     tau1:u32 tau2:u32 v_th:f64 eta:f64 beta:f64 ndim:u32 dims:u32[ndim] weights:f64[prod(dims)]
#   binary mode only, per trainable layer:
#     per_filter:u8 mu:f64 n_alpha:u32 alpha:f64[n_alpha]


class _Reader(object):

    def __init__(self, raw, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise PayloadLengthError(f"{self.path}: truncated at byte {self.pos} (needed {n} more)")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def u32(self):
        return self.unpack("<I")[0]

    def f64(self):
        return self.unpack("<d")[0]

    def array(self, shape):
        count = int(np.prod(shape))
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def checkpoint_bytes(network):
    out = io.BytesIO()
    arch = network.architecture.encode("utf-8")
    mode = MODE_BINARY if network.binary else MODE_REAL
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack("<IBIII", CHECKPOINT_VERSION, mode, network.t_max, network.intensity_max, len(arch)))
    out.write(arch)

    trainable = network.trainable_layers()
    out.write(struct.pack("<I", len(trainable)))
    for layer in trainable:
        p = layer.spec.params
        state = layer.state
        weights = np.ascontiguousarray(state.weights, dtype="<f8")
        out.write(struct.pack("<IIddd", p.tau1, p.tau2, p.v_th, state.eta, state.beta))
        out.write(struct.pack("<I", weights.ndim))
        out.write(struct.pack(f"<{weights.ndim}I", *weights.shape))
        out.write(weights.tobytes())

    if mode == MODE_BINARY:
        for layer in trainable:
            state = layer.state
            out.write(struct.pack("<BdI", int(state.per_filter), state.mu, state.alpha.size))
            out.write(np.ascontiguousarray(state.alpha, dtype="<f8").tobytes())
    return out.getvalue()


def save_checkpoint(network, path):
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(network))
    return path


def load_checkpoint(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{path} not found")
    with open(path, "rb") as f:
        r = _Reader(f.read(), path)

    if r.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version, mode, t_max, intensity_max, arch_len = r.unpack("<IBIII")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if mode not in (MODE_REAL, MODE_BINARY):
        raise FormatError(f"{path}: unknown mode flag {mode}")
    architecture = r.take(arch_len).decode("utf-8")
    specs = parse_architecture(architecture)
    trainable = [i for i, s in enumerate(specs) if s.trainable]

    n_records = r.u32()
    if n_records != len(trainable):
        raise FormatError(f"{path}: {n_records} layer records for {len(trainable)} trainable layers of '{architecture}'")

    records = []
    for i in trainable:
        tau1, tau2, v_th, eta, beta = r.unpack("<IIddd")
        ndim = r.u32()
        shape = r.unpack(f"<{ndim}I")
        if tuple(shape) != specs[i].weight_shape:
            raise FormatError(f"{path}: layer {i + 1} weights {shape} do not match {specs[i].weight_shape}")
        weights = r.array(shape)
        params = NeuronParams(tau1=tau1, tau2=tau2, v_th=v_th, t_max=t_max)
        records.append((params, weights, eta, beta))

    layers = []
    rec = iter(records)
    for index, spec in enumerate(specs):
        if not spec.trainable:
            layers.append(Layer(spec))
            continue
        params, weights, eta, beta = next(rec)
        layers.append(Layer(spec.with_params(params), LayerState(weights, eta=eta, beta=beta)))

    if mode == MODE_BINARY:
        for layer, index in zip([l for l in layers if l.spec.trainable], trainable):
            per_filter, mu, n_alpha = r.unpack("<BdI")
            alpha = r.array((n_alpha,))
            base = layer.state
            layer.state = BinaryLayerState(base.weights, eta=base.eta, beta=base.beta, alpha=alpha, mu=mu,
                                           per_filter=bool(per_filter), name=str(index + 1))

    if r.pos != len(r.raw):
        raise FormatError(f"{path}: {len(r.raw) - r.pos} trailing bytes")
    return Network(architecture, layers, input_shape_of(architecture), intensity_max)


def export_packed(checkpoint_path, out_path):
    """Bit-pack a binary checkpoint's sign weights; returns the footprint report."""
    network = load_checkpoint(checkpoint_path)
    if not network.binary:
        raise ModeError(f"{checkpoint_path} is a real-valued checkpoint; only binary checkpoints can be packed")

    arch = network.architecture.encode("utf-8")
    out = io.BytesIO()
    out.write(PACKED_MAGIC)
    out.write(struct.pack("<II", PACKED_VERSION, len(arch)))
    out.write(arch)
    trainable = network.trainable_layers()
    out.write(struct.pack("<I", len(trainable)))
    for layer in trainable:
        signs = layer.state.sign_weights
        bits = np.packbits((signs.reshape(-1) > 0).astype(np.uint8))
        out.write(struct.pack("<I", signs.ndim))
        out.write(struct.pack(f"<{signs.ndim}I", *signs.shape))
        out.write(struct.pack("<I", layer.state.alpha.size))
        out.write(np.ascontiguousarray(layer.state.alpha, dtype="<f8").tobytes())
        out.write(struct.pack("<I", bits.size))
        out.write(bits.tobytes())

    with open(out_path, "wb") as f:
        f.write(out.getvalue())

    report = footprint(network)
    report["file_bytes"] = len(out.getvalue())
    return report


def unpack_signs(path):
    """Read a packed export back: (architecture, [(sign weights, alpha), ...])."""
    with open(path, "rb") as f:
        r = _Reader(f.read(), path)
    if r.take(len(PACKED_MAGIC)) != PACKED_MAGIC:
        raise FormatError(f"{path}: not a packed weight file (bad magic)")
    version, arch_len = r.unpack("<II")
    if version != PACKED_VERSION:
        raise FormatError(f"{path}: unsupported packed version {version}")
    architecture = r.take(arch_len).decode("utf-8")
    layers = []
    for _ in range(r.u32()):
        ndim = r.u32()
        shape = r.unpack(f"<{ndim}I")
        alpha = r.array((r.u32(),))
        n_bytes = r.u32()
        bits = np.frombuffer(r.take(n_bytes), dtype=np.uint8)
        count = int(np.prod(shape))
        flat = np.unpackbits(bits)[:count]
        signs = np.where(flat == 1, 1, -1).astype(np.int8).reshape(shape)
        layers.append((signs, alpha))
    return architecture, layers


def format_footprint(report):
    lines = [
        f"weights:            {report['n_weights']}",
        f"scaling factors:    {report['n_alpha']}",
        f"raw (64-bit) bytes: {report['raw_bytes']}",
        f"packed sign bytes:  {report['packed_bytes']}",
        f"scaling bytes:      {report['alpha_bytes']}",
        f"packed total bytes: {report['packed_total_bytes']}",
        f"reduction:          {report['reduction']:.2f}x",
    ]
    if "file_bytes" in report:
        lines.append(f"packed file bytes:  {report['file_bytes']}")
    return "\n".join(lines)
