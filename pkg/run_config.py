#!/usr/bin/env python3
import os
import re
import json
from dataclasses import dataclass, field

from operators.binary import BinaryLayerState
from operators.dynamics import NeuronParams
from operators.encoding import EncodingConfig
from operators.errors import FormatError, InputDomainError, ShapeError
from operators.layers import Layer, LayerState, Network, conv_spec, dense_spec, pool_spec
from operators.learning import LearningConfig

PRESETS_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "presets.json")
DATA_DIR_ENV = "SPIKE_DATA_DIR"

INPUT_TOKEN = re.compile(r"^(\d+)x(\d+)$")
CONV_TOKEN = re.compile(r"^(\d+)C(\d+)$")
POOL_TOKEN = re.compile(r"^P(\d+)(?:s(\d+))?$")
DENSE_TOKEN = re.compile(r"^(\d+)$")

GLOBAL_KEYS = {
    "preset": str,
    "architecture": str,
    "t_max": int,
    "intensity_max": int,
    "lambda": float,
    "mode": str,
    "epochs": int,
    "batch_size": int,
    "seed": int,
    "train_size": int,
    "test_size": int,
    "data_dir": str,
    "clip_weights": "bool",
    "eta_sign": int,
    "alpha_per_filter": "bool",
    "threads": int,
}

LAYER_KEYS = {
    "tau": int,
    "tau1": int,
    "tau2": int,
    "eta": float,
    "beta": float,
    "v_th": float,
    "init": "range",
    "mu": float,
    "alpha_init": "range",
}

LAYER_DEFAULTS = {
    "tau": 80,
    "tau1": None,
    "tau2": None,
    "eta": 0.001,
    "beta": 1.0,
    "v_th": 1.0,
    "init": (0.0, 1.0),
    "mu": 0.0001,
    "alpha_init": (0.0, 2.0),
}


def parse_architecture(text):
    """'28x28-40C5-P2-1000-10' -> [conv(40, 5), pool(2), dense(1000), dense(10)].

    The first token is the input, either HxW or a flat neuron count."""

    tokens = [t.strip() for t in text.strip().split("-")]
    if len(tokens) < 1 or not tokens[0]:
        raise FormatError(f"empty architecture string: '{text}'")
    if len(tokens) < 2:
        raise FormatError(f"architecture '{text}' has an input but no layers")

    m = INPUT_TOKEN.match(tokens[0])
    if m:
        shape = (1, int(m.group(1)), int(m.group(2)))
    elif DENSE_TOKEN.match(tokens[0]):
        shape = (int(tokens[0]),)
    else:
        raise FormatError(f"unparseable input token '{tokens[0]}' in '{text}'")

    specs = []
    for token in tokens[1:]:
        if CONV_TOKEN.match(token):
            n_maps, kernel = (int(g) for g in CONV_TOKEN.match(token).groups())
            if len(shape) != 3:
                raise ShapeError(f"conv token '{token}' needs a spatial input, got shape {shape}")
            spec = conv_spec(shape, n_maps, kernel)
        elif POOL_TOKEN.match(token):
            window, stride = POOL_TOKEN.match(token).groups()
            if len(shape) != 3:
                raise ShapeError(f"pool token '{token}' needs a spatial input, got shape {shape}")
            spec = pool_spec(shape, int(window), int(stride) if stride else None)
        elif DENSE_TOKEN.match(token):
            spec = dense_spec(shape, int(token))
        else:
            raise FormatError(f"unparseable token '{token}' in '{text}'")
        specs.append(spec)
        shape = spec.out_shape
    return specs


def input_shape_of(text):
    first = text.strip().split("-")[0].strip()
    m = INPUT_TOKEN.match(first)
    if m:
        return (int(m.group(1)), int(m.group(2)))
    return (int(first),)


def _convert(key, value, kind):
    if not isinstance(value, str):
        # values coming from presets.json are already typed
        if kind == "range":
            return (float(value[0]), float(value[1]))
        if kind == "bool":
            return bool(value)
        return kind(value)
    value = value.strip()
    try:
        if kind == "bool":
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "range":
            lo, hi = (float(v) for v in value.split(","))
            return (lo, hi)
        return kind(value)
    except ValueError:
        raise FormatError(f"bad value for '{key}': '{value}'")


def read_config_lines(lines):
    """key = value lines to a dict; '#' starts a comment."""
    mapping = {}
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {n}: expected 'key = value', got '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        mapping[key] = value
    return mapping


def load_presets(path=PRESETS_PATH):
    with open(path, "r") as openf:
        return json.loads(openf.read())


def preset_mapping(name, path=PRESETS_PATH):
    presets = load_presets(path)
    if name not in presets:
        raise FormatError(f"unknown preset '{name}'. Valid options are {sorted(presets)}")
    mapping = {}
    for k, v in presets[name].items():
        if k == "layers":
            for index, fields in v.items():
                for fk, fv in fields.items():
                    mapping[f"layer.{index}.{fk}"] = fv
        else:
            mapping[k] = v
    return mapping


@dataclass
class RunConfig(object):
    architecture: str
    t_max: int = 100
    intensity_max: int = 255
    lam: float = 5.0
    mode: str = "real"
    epochs: int = 30
    batch_size: int = 1
    seed: int = 0
    train_size: int = 0
    test_size: int = 0
    data_dir: str = None
    clip_weights: bool = False
    eta_sign: int = 1
    alpha_per_filter: bool = False
    threads: int = 1
    preset: str = None
    layers: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_mapping(cls, mapping):
        mapping = dict(mapping)
        merged = {}
        if "preset" in mapping:
            merged.update(preset_mapping(str(mapping["preset"]).strip()))
        merged.update(mapping)

        kwargs = {}
        layers = {}
        for key, value in merged.items():
            if key.startswith("layer."):
                parts = key.split(".")
                if len(parts) != 3 or not parts[1].isdigit() or parts[2] not in LAYER_KEYS:
                    raise FormatError(f"unknown layer key '{key}'. Layer keys are layer.<n>.{{{','.join(LAYER_KEYS)}}}")
                layers.setdefault(int(parts[1]), {})[parts[2]] = _convert(key, value, LAYER_KEYS[parts[2]])
                continue
            if key not in GLOBAL_KEYS:
                raise FormatError(f"unknown config key '{key}'. Valid options are {sorted(GLOBAL_KEYS)}")
            name = "lam" if key == "lambda" else key
            kwargs[name] = _convert(key, value, GLOBAL_KEYS[key])

        if "architecture" not in kwargs:
            raise FormatError("config has no architecture (set 'architecture' or 'preset')")
        return cls(layers=layers, **kwargs)

    @classmethod
    def from_file(cls, path, overrides=None):
        with open(path, "r") as openf:
            mapping = read_config_lines(openf.readlines())
        mapping.update(overrides or {})
        return cls.from_mapping(mapping)

    def validate(self):
        specs = parse_architecture(self.architecture)
        if self.mode not in ("real", "binary"):
            raise InputDomainError(f"mode must be 'real' or 'binary', got '{self.mode}'")
        if self.eta_sign not in (1, -1):
            raise InputDomainError(f"eta_sign must be 1 or -1, got {self.eta_sign}")
        if self.epochs < 0 or self.batch_size < 1 or self.threads < 1:
            raise InputDomainError("epochs must be >= 0, batch_size and threads >= 1")
        for index, fields in self.layers.items():
            if not 1 <= index <= len(specs):
                raise FormatError(f"layer.{index} does not exist in '{self.architecture}'")
            if not specs[index - 1].trainable:
                raise FormatError(f"layer.{index} is a pooling layer and takes no parameters")
        for index, spec in enumerate(specs, start=1):
            if not spec.trainable:
                continue
            lc = self.layer_config(index)
            for rate in ("eta", "beta", "v_th", "mu"):
                if not lc[rate] > 0:
                    raise InputDomainError(f"layer.{index}.{rate} must be positive, got {lc[rate]}")
        return specs

    def layer_config(self, index):
        lc = dict(LAYER_DEFAULTS)
        lc.update(self.layers.get(index, {}))
        return lc

    def neuron_params(self, index):
        lc = self.layer_config(index)
        tau1 = lc["tau1"]
        if tau1 is None and lc["tau2"] is not None:
            tau1 = lc["tau"] - lc["tau2"]
        return NeuronParams.from_tau(lc["tau"], lc["v_th"], self.t_max, tau1=tau1)

    def specs(self):
        specs = parse_architecture(self.architecture)
        return [s.with_params(self.neuron_params(i)) if s.trainable else s
                for i, s in enumerate(specs, start=1)]

    def build_network(self, rng):
        layers = []
        for index, spec in enumerate(self.specs(), start=1):
            if not spec.trainable:
                layers.append(Layer(spec))
                continue
            lc = self.layer_config(index)
            if self.mode == "binary":
                state = BinaryLayerState.initialize(
                    spec, rng, init_range=lc["init"], eta=lc["eta"], beta=lc["beta"], mu=lc["mu"],
                    alpha_range=lc["alpha_init"], per_filter=self.alpha_per_filter, name=str(index))
            else:
                state = LayerState.initialize(spec, rng, init_range=lc["init"], eta=lc["eta"], beta=lc["beta"])
            layers.append(Layer(spec, state))
        return Network(self.architecture, layers, input_shape_of(self.architecture), self.intensity_max)

    def learning(self):
        return LearningConfig(lam=self.lam, eta_sign=self.eta_sign, clip_weights=self.clip_weights)

    def encoding(self):
        return EncodingConfig(t_max=self.t_max, intensity_max=self.intensity_max)

    def resolve_data_dir(self, override=None):
        if override:
            return override
        if self.data_dir:
            return self.data_dir
        return os.environ.get(DATA_DIR_ENV, "data")

    def to_text(self):
        """Flat key = value form; reading it back gives the same config."""
        lines = [f"architecture = {self.architecture}"]
        for key in GLOBAL_KEYS:
            if key in ("architecture", "preset"):
                continue
            value = getattr(self, "lam" if key == "lambda" else key)
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        for index in sorted(self.layers):
            for k, v in sorted(self.layers[index].items()):
                if isinstance(v, tuple):
                    v = f"{v[0]},{v[1]}"
                lines.append(f"layer.{index}.{k} = {v}")
        return "\n".join(lines) + "\n"