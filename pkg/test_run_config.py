import numpy as np
import pytest

from operators.binary import BinaryLayerState
from operators.errors import FormatError, InputDomainError, ShapeError
from operators.layers import CONV, DENSE, POOL
from run_config import DATA_DIR_ENV, RunConfig, load_presets, parse_architecture, read_config_lines


def test_parse_conv_architecture():
    specs = parse_architecture("28x28-40C5-P2-1000-10")
    assert [s.kind for s in specs] == [CONV, POOL, DENSE, DENSE]
    assert specs[0].out_shape == (40, 24, 24)
    assert specs[1].out_shape == (40, 12, 12)
    assert specs[2].weight_shape == (1000, 5760)
    assert specs[3].out_shape == (10,)


def test_parse_flat_and_strided_pool():
    assert [s.out_shape for s in parse_architecture("784-400-10")] == [(400,), (10,)]
    specs = parse_architecture("8x8-2C3-P2s2-5")
    assert specs[1].out_shape == (2, 3, 3)


@pytest.mark.parametrize("text, error", [
    ("28x28-40X5-10", FormatError),
    ("28x28", FormatError),
    ("", FormatError),
    ("784-P2-10", ShapeError),
    ("28x28-40C30-10", ShapeError),
    ("28x28-40C5-P5-10", ShapeError),
])
def test_parse_errors(text, error):
    with pytest.raises(error):
        parse_architecture(text)


def test_read_config_lines():
    mapping = read_config_lines(["# comment", "", "architecture = 784-10  # inline", "lambda=3"])
    assert mapping == {"architecture": "784-10", "lambda": "3"}
    with pytest.raises(FormatError):
        read_config_lines(["no equals sign"])


def test_every_preset_builds():
    for name in load_presets():
        config = RunConfig.from_mapping({"preset": name})
        assert config.preset == name
        assert len(config.specs()) == len(config.architecture.split("-")) - 1


def test_preset_layer_values_and_overrides():
    config = RunConfig.from_mapping({"preset": "mnist_rcsnn", "layer.3.eta": "0.5", "epochs": "2"})
    assert config.epochs == 2
    assert config.layer_config(3)["eta"] == 0.5
    assert config.layer_config(3)["v_th"] == 50
    assert config.layer_config(1)["init"] == (0.0, 2.0)
    p = config.neuron_params(1)
    assert (p.tau1, p.tau2, p.v_th, p.t_max) == (40, 40, 5.0, 100)


def test_unknown_keys_are_rejected():
    with pytest.raises(FormatError):
        RunConfig.from_mapping({"architecture": "784-10", "learning_rate": "1"})
    with pytest.raises(FormatError):
        RunConfig.from_mapping({"architecture": "784-10", "layer.1.gain": "1"})
    with pytest.raises(FormatError):
        RunConfig.from_mapping({"preset": "cifar"})
    with pytest.raises(FormatError):
        RunConfig.from_mapping({"t_max": "100"})


def test_layer_index_checks():
    with pytest.raises(FormatError):
        RunConfig.from_mapping({"architecture": "784-10", "layer.2.eta": "1"})
    with pytest.raises(FormatError):
        RunConfig.from_mapping({"architecture": "8x8-2C3-P2-5", "layer.2.eta": "1"})
    with pytest.raises(InputDomainError):
        RunConfig.from_mapping({"architecture": "784-10", "layer.1.v_th": "0"})


@pytest.mark.parametrize("key, value", [("mode", "ternary"), ("eta_sign", "2"), ("batch_size", "0")])
def test_global_value_checks(key, value):
    with pytest.raises(InputDomainError):
        RunConfig.from_mapping({"architecture": "784-10", key: value})


def test_tau_split():
    config = RunConfig.from_mapping({"architecture": "784-10", "layer.1.tau": "60", "layer.1.tau2": "20"})
    p = config.neuron_params(1)
    assert (p.tau1, p.tau2) == (40, 20)


def test_from_file_and_text_round_trip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("preset = mnist_bcsnn\nepochs = 3\nalpha_per_filter = yes\n")
    config = RunConfig.from_file(str(path), overrides={"seed": "9"})
    assert config.mode == "binary" and config.alpha_per_filter and config.seed == 9

    again = tmp_path / "again.cfg"
    again.write_text(config.to_text())
    reread = RunConfig.from_file(str(again))
    assert reread.to_text() == config.to_text()
    assert reread.layers == config.layers


def test_build_network_follows_mode():
    real = RunConfig.from_mapping({"architecture": "20-6-3", "intensity_max": "15"})
    network = real.build_network(np.random.default_rng(0))
    assert not network.binary
    assert network.intensity_max == 15
    assert network.t_max == 100

    binary = RunConfig.from_mapping({"architecture": "20-6-3", "mode": "binary", "layer.1.init": "-1,1"})
    network = binary.build_network(np.random.default_rng(0))
    assert network.binary
    assert all(isinstance(l.state, BinaryLayerState) for l in network.trainable_layers())
    assert network.layers[0].state.weights.min() >= -1.0


def test_same_seed_same_network():
    config = RunConfig.from_mapping({"architecture": "8x8-2C3-P2-5-3"})
    a = config.build_network(np.random.default_rng(4))
    b = config.build_network(np.random.default_rng(4))
    for la, lb in zip(a.trainable_layers(), b.trainable_layers()):
        assert np.array_equal(la.state.weights, lb.state.weights)


def test_data_dir_precedence(monkeypatch):
    monkeypatch.delenv(DATA_DIR_ENV, raising=False)
    config = RunConfig.from_mapping({"architecture": "784-10"})
    assert config.resolve_data_dir() == "data"
    monkeypatch.setenv(DATA_DIR_ENV, "/srv/idx")
    assert config.resolve_data_dir() == "/srv/idx"
    config.data_dir = "from_config"
    assert config.resolve_data_dir() == "from_config"
    assert config.resolve_data_dir("from_cli") == "from_cli"
