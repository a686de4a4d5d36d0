import os

import numpy as np
import pandas as pd
import pytest

from checkpoint import load_checkpoint
from idx_data import Dataset, write_dataset
from metrics import RunMetrics, SampleRecord
from operators.encoding import EncodingConfig, encode_image
from operators.errors import ShapeError
from run_config import RunConfig
from trainer import CHECKPOINT_NAME, CONFIG_NAME, Trainer, evaluate, evaluate_sample

TINY = {
    "architecture": "4x4-6-3",
    "t_max": "30",
    "epochs": "2",
    "seed": "5",
    "layer.1.tau": "20",
    "layer.1.init": "0,0.4",
    "layer.1.eta": "0.05",
    "layer.2.tau": "20",
    "layer.2.init": "0,0.8",
    "layer.2.eta": "0.05",
}


def toy_dataset(n_per_class, split, seed):
    """Three classes; class c lights up row c of a 4x4 image."""
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(3), n_per_class)
    images = rng.integers(0, 30, size=(labels.size, 4, 4))
    for i, c in enumerate(labels):
        images[i, c] = rng.integers(200, 256, size=4)
    return Dataset(images.astype(np.uint8), labels, split)


@pytest.fixture
def data_dir(tmp_path):
    path = tmp_path / "data"
    path.mkdir()
    write_dataset(str(path), toy_dataset(10, "train", 0))
    write_dataset(str(path), toy_dataset(5, "test", 1))
    return str(path)


def tiny_config(**extra):
    mapping = dict(TINY)
    mapping.update(extra)
    return RunConfig.from_mapping(mapping)


def test_train_writes_checkpoint_config_and_metrics(tmp_path, data_dir):
    out = str(tmp_path / "run")
    ckpt, best = Trainer(tiny_config(), data_dir=data_dir, out_dir=out).train()
    assert ckpt == os.path.join(out, CHECKPOINT_NAME)
    for name in (CONFIG_NAME, "epochs.csv", "confusion.csv", "firing_times.csv", "class_summary.csv",
                 "spike_counts.csv", "summary.txt"):
        assert os.path.isfile(os.path.join(out, name))

    epochs = pd.read_csv(os.path.join(out, "epochs.csv"))
    assert epochs["epoch"].tolist() == [0, 1, 2]
    assert np.isnan(epochs["train_accuracy"][0])
    assert {"loss_layer_1", "loss_layer_2"} <= set(epochs.columns)
    assert best.accuracy == pytest.approx(epochs["test_accuracy"].max(), abs=1e-6)

    reread = RunConfig.from_file(os.path.join(out, CONFIG_NAME))
    assert reread.to_text() == tiny_config().to_text()


def test_best_checkpoint_reproduces_best_accuracy(tmp_path, data_dir):
    trainer = Trainer(tiny_config(), data_dir=data_dir, out_dir=str(tmp_path / "run"))
    ckpt, best = trainer.train()
    again = evaluate(ckpt, trainer.test_set)
    assert again.accuracy == best.accuracy
    assert np.array_equal(again.confusion, best.confusion)


def test_same_seed_gives_identical_outputs(tmp_path, data_dir):
    first, second = str(tmp_path / "a"), str(tmp_path / "b")
    Trainer(tiny_config(), data_dir=data_dir, out_dir=first).train()
    Trainer(tiny_config(), data_dir=data_dir, out_dir=second).train()
    for name in (CHECKPOINT_NAME, "epochs.csv", "confusion.csv", "spike_counts.csv", "summary.txt"):
        with open(os.path.join(first, name), "rb") as fa, open(os.path.join(second, name), "rb") as fb:
            assert fa.read() == fb.read(), name


def test_zero_epochs_keeps_the_initial_network(tmp_path, data_dir):
    config = tiny_config(epochs="0")
    ckpt, best = Trainer(config, data_dir=data_dir, out_dir=str(tmp_path / "run")).train()
    initial = config.build_network(np.random.default_rng(config.seed))
    loaded = load_checkpoint(ckpt)
    for a, b in zip(initial.trainable_layers(), loaded.trainable_layers()):
        assert np.array_equal(a.state.weights, b.state.weights)
    assert len(best.epochs) == 1


def test_binary_training_runs(tmp_path, data_dir):
    ckpt, best = Trainer(tiny_config(mode="binary", epochs="1"), data_dir=data_dir,
                         out_dir=str(tmp_path / "run")).train()
    assert load_checkpoint(ckpt).binary
    assert best.footprint is not None
    assert "reduction" in best.summary_text()


def test_subsampled_sizes(tmp_path, data_dir):
    trainer = Trainer(tiny_config(train_size="12", test_size="6"), data_dir=data_dir, out_dir=str(tmp_path))
    train_set, test_set = trainer.load_data()
    assert train_set.class_counts()[:3].tolist() == [4, 4, 4]
    assert len(test_set) == 6


def test_evaluation_metrics_are_consistent(data_dir):
    config = tiny_config()
    network = config.build_network(np.random.default_rng(0))
    ds = toy_dataset(5, "test", 3)
    single = evaluate(network, ds, threads=1)
    threaded = evaluate(network, ds, threads=3)
    assert np.array_equal(single.confusion, threaded.confusion)
    assert np.array_equal(single.spike_counts, threaded.spike_counts, equal_nan=True)
    assert single.summary_text() == threaded.summary_text()

    assert single.n_samples == 15
    assert single.accuracy == pytest.approx(np.trace(single.confusion) / 15)
    seen = single.class_counts > 0
    assert np.allclose(single.spike_counts[seen].sum(axis=1), single.mrn()[seen])
    assert single.groups == ["input", "hidden", "output"]


def test_silent_output_decides_at_the_horizon():
    config = tiny_config(**{"layer.2.init": "0,0"})
    network = config.build_network(np.random.default_rng(0))
    image = np.full((4, 4), 255, dtype=np.uint8)
    raster = encode_image(image, EncodingConfig(t_max=30))
    record = evaluate_sample(network, raster, 2)
    assert record.predicted == 0
    assert record.decision_time == 30
    assert record.required[0] == 16
    assert np.all(record.output_times == 30)


def test_wrong_input_size():
    network = tiny_config().build_network(np.random.default_rng(0))
    ds = Dataset(np.zeros((2, 5, 5), dtype=np.uint8), np.array([0, 1]), "test")
    with pytest.raises(ShapeError):
        evaluate(network, ds)


def test_correct_neuron_earliest_and_mft_lines():
    network = tiny_config().build_network(np.random.default_rng(0))
    records = [
        SampleRecord(0, 0, np.array([5.0, 9.0, 30.0]), 5.0, np.zeros(3)),
        SampleRecord(0, 1, np.array([12.0, 8.0, 30.0]), 8.0, np.zeros(3)),
        SampleRecord(1, 1, np.array([20.0, 4.0, 30.0]), 4.0, np.zeros(3)),
        SampleRecord(2, 0, np.array([3.0, 30.0, 9.0]), 3.0, np.zeros(3)),
    ]
    metrics = RunMetrics.from_records(records, network)
    # class 0 averages (8.5, 8.5): the tie goes to neuron 0; class 2 fires neuron 0 first
    assert metrics.correct_neuron_earliest() == (2, 3)
    assert metrics.correct_neuron_mft()[:3].tolist() == [8.5, 4.0, 9.0]

    lines = metrics.summary_text().splitlines()
    assert "correct neuron earliest: 2/3" in lines
    mft = next(line for line in lines if line.startswith("correct neuron mft:"))
    assert "0=8.50" in mft and "2=9.00" in mft and "9=nan" in mft
