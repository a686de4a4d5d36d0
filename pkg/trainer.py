import os
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime

import numpy as np
from tqdm import tqdm

from checkpoint import checkpoint_bytes, load_checkpoint
from idx_data import load_split, subsample
from logs import get_logger
from metrics import RunMetrics, SampleRecord
from operators.binary import alpha_update, footprint
from operators.encoding import EncodingConfig, SpikeRaster, encode_image
from operators.errors import ShapeError
from operators.layers import classify, network_forward
from operators.learning import train_batch

CHECKPOINT_NAME = "best.ckpt"
CONFIG_NAME = "run.cfg"


def chunks(l, n):
    for i in range(0, len(l), n):
        yield l[i:i+n]


def encode_dataset(dataset, encoding):
    return encode_image(dataset.images, encoding).times


def check_input_shape(network, dataset):
    expected = int(np.prod(network.input_shape))
    got = int(np.prod(dataset.images.shape[1:]))
    if expected != got:
        raise ShapeError(f"'{network.architecture}' takes {expected} inputs but the images have {got} pixels")


def evaluate_sample(network, raster, label):
    rasters = network_forward(raster, network.layers)
    out = rasters[-1]
    predicted = classify(out)
    if out.fired().reshape(-1)[predicted]:
        decision = int(out.times.reshape(-1)[predicted])
        required = [r.count_until(decision) for r in rasters]
    else:
        decision = out.t_max
        required = [r.count() for r in rasters]
    return SampleRecord(int(label), predicted, out.filled().reshape(-1), float(decision), np.asarray(required))


def evaluate(network, dataset, threads=1, mode=None, seed=0, verbose=False):
    """Accuracy, confusion, firing times and spike budgets of `network` on `dataset`.

    `network` may also be a checkpoint path. Results do not depend on `threads`."""
    if isinstance(network, str):
        network = load_checkpoint(network)
    check_input_shape(network, dataset)
    t_max = network.t_max
    times = encode_dataset(dataset, EncodingConfig(t_max=t_max, intensity_max=network.intensity_max))

    def _one(i):
        return evaluate_sample(network, SpikeRaster(times[i], t_max), dataset.labels[i])

    indexes = range(len(dataset))
    progress = dict(total=len(dataset), desc=f"eval {dataset.split}", disable=not verbose, leave=False)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(tqdm(pool.map(_one, indexes), **progress))
    else:
        records = [_one(i) for i in tqdm(indexes, **progress)]

    if mode is None:
        mode = "binary" if network.binary else "real"
    metrics = RunMetrics.from_records(records, network, mode=mode, seed=seed)
    if network.binary:
        metrics.footprint = footprint(network)
    return metrics


class Trainer(object):

    def __init__(self, config, data_dir=None, out_dir="runs", verbose=False):
        self.config = config
        self.data_dir = config.resolve_data_dir(data_dir)
        self.out_dir = out_dir
        self.verbose = verbose
        self.logger = get_logger(__name__, verbose)
        self.train_set = None
        self.test_set = None

    def load_data(self):
        cfg = self.config
        a = datetime.now()
        train_set = load_split(self.data_dir, "train")
        test_set = load_split(self.data_dir, "test")
        if cfg.train_size:
            train_set = subsample(train_set, cfg.train_size, seed=cfg.seed)
        if cfg.test_size:
            test_set = subsample(test_set, cfg.test_size, seed=cfg.seed)
        self.train_set, self.test_set = train_set, test_set
        self.logger.info(f"loaded {len(train_set)} train / {len(test_set)} test samples from {self.data_dir}: {datetime.now() - a}")
        return train_set, test_set

    def _evaluate(self, network):
        return evaluate(network, self.test_set, threads=self.config.threads, mode=self.config.mode,
                        seed=self.config.seed, verbose=self.verbose)

    def run_epoch(self, network, rng, times, epoch):
        cfg = self.config
        learning = cfg.learning()
        alpha_fn = alpha_update if network.binary else None
        labels = self.train_set.labels

        order = rng.permutation(len(labels))
        correct = 0
        loss_sums = np.zeros(len(network.layers))
        bar = tqdm(total=len(order), desc=f"epoch {epoch}", disable=not self.verbose, leave=False)
        for batch in chunks(order, cfg.batch_size):
            samples = [SpikeRaster(times[i], cfg.t_max) for i in batch]
            losses, outputs = train_batch(samples, labels[batch], network, learning, alpha_fn=alpha_fn)
            loss_sums += np.sum(losses, axis=0)
            correct += sum(classify(o) == label for o, label in zip(outputs, labels[batch]))
            bar.update(len(batch))
        bar.close()
        return correct / len(order), loss_sums / len(order)

    def train(self):
        """Train from scratch; writes the best checkpoint, the config and the metrics.

        Returns (best network checkpoint path, RunMetrics of the best epoch)."""
        cfg = self.config
        start = datetime.now()
        self.logger.info(f"STARTING train(): {cfg.architecture}, mode {cfg.mode}, seed {cfg.seed}")
        if self.train_set is None:
            self.load_data()

        rng = np.random.default_rng(cfg.seed)
        network = cfg.build_network(rng)
        check_input_shape(network, self.train_set)
        times = encode_dataset(self.train_set, cfg.encoding())

        a = datetime.now()
        best = self._evaluate(network)
        best_bytes = checkpoint_bytes(network)
        history = [self._epoch_row(0, float("nan"), best.accuracy, [float("nan")] * len(network.layers))]
        self.logger.info(f"epoch 0: test accuracy {best.accuracy:.4f} ({datetime.now() - a})")

        for epoch in range(1, cfg.epochs + 1):
            a = datetime.now()
            train_acc, losses = self.run_epoch(network, rng, times, epoch)
            current = self._evaluate(network)
            history.append(self._epoch_row(epoch, train_acc, current.accuracy, losses))
            self.logger.info(f"epoch {epoch}: train accuracy {train_acc:.4f}, test accuracy {current.accuracy:.4f} "
                             f"({datetime.now() - a})")
            if current.accuracy > best.accuracy:
                best = current
                best_bytes = checkpoint_bytes(network)

        best.epochs = history
        os.makedirs(self.out_dir, exist_ok=True)
        ckpt_path = os.path.join(self.out_dir, CHECKPOINT_NAME)
        with open(ckpt_path, "wb") as f:
            f.write(best_bytes)
        with open(os.path.join(self.out_dir, CONFIG_NAME), "w") as f:
            f.write(cfg.to_text())
        best.write(self.out_dir)
        self.logger.info(f"FINISHED train(): best test accuracy {best.accuracy:.4f}, "
                         f"checkpoint {ckpt_path}: {datetime.now() - start}")
        return ckpt_path, best

    @staticmethod
    def _epoch_row(epoch, train_acc, test_acc, losses):
        row = {"epoch": epoch, "train_accuracy": train_acc, "test_accuracy": test_acc}
        for index, loss in enumerate(losses, start=1):
            row[f"loss_layer_{index}"] = loss
        return row


def train(config, out_dir="runs", data_dir=None, verbose=False):
    return Trainer(config, data_dir=data_dir, out_dir=out_dir, verbose=verbose).train()
