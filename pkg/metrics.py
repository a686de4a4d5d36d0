import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from idx_data import N_CLASSES
from operators.errors import InputDomainError
from operators.layers import CONV, POOL

GROUPS = ("input", "conv", "hidden", "output")
FLOAT_FORMAT = "%.6f"


@dataclass
class SampleRecord(object):
    """What evaluation keeps of one forward pass."""

    label: int
    predicted: int
    output_times: np.ndarray
    decision_time: float
    required: np.ndarray


def layer_groups(network):
    """Group name of every raster of a forward pass (input first)."""
    groups = ["input"]
    last = len(network.layers) - 1
    for index, layer in enumerate(network.layers):
        if index == last:
            groups.append("output")
        elif layer.spec.kind in (CONV, POOL):
            groups.append("conv")
        else:
            groups.append("hidden")
    return groups


def layer_columns(network):
    columns = ["layer0_input"]
    for index, layer in enumerate(network.layers, start=1):
        columns.append(f"layer{index}_{layer.spec.token()}")
    return columns


@dataclass
class RunMetrics(object):
    architecture: str
    mode: str
    seed: int
    confusion: np.ndarray
    firing_times: np.ndarray
    decision_times: np.ndarray
    spike_counts: np.ndarray
    groups: list
    columns: list
    epochs: list = field(default_factory=list)
    footprint: dict = None

    @classmethod
    def from_records(cls, records, network, mode="real", seed=0):
        if not records:
            raise InputDomainError("cannot summarise an evaluation of zero samples")
        n_out = records[0].output_times.size
        n_rasters = records[0].required.size

        confusion = np.zeros((N_CLASSES, n_out), dtype=np.int64)
        firing = np.zeros((N_CLASSES, n_out))
        decision = np.zeros(N_CLASSES)
        spikes = np.zeros((N_CLASSES, n_rasters))
        for r in records:
            confusion[r.label, r.predicted] += 1
            firing[r.label] += r.output_times
            decision[r.label] += r.decision_time
            spikes[r.label] += r.required

        counts = confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            firing = firing / counts[:, None]
            decision = decision / counts
            spikes = spikes / counts[:, None]

        return cls(network.architecture, mode, seed, confusion, firing, decision, spikes,
                   layer_groups(network), layer_columns(network))

    @property
    def n_samples(self):
        return int(self.confusion.sum())

    @property
    def class_counts(self):
        return self.confusion.sum(axis=1)

    @property
    def accuracy(self):
        return float(np.trace(self.confusion) / self.n_samples)

    def correct_neuron_mft(self):
        n = min(N_CLASSES, self.firing_times.shape[1])
        out = np.full(N_CLASSES, np.nan)
        out[:n] = self.firing_times[np.arange(n), np.arange(n)]
        return out

    def correct_neuron_earliest(self):
        """(k, n): of the n classes seen with a neuron of their own, k have that
        neuron firing earliest on average."""
        n_out = self.firing_times.shape[1]
        eligible = [c for c in range(N_CLASSES) if self.class_counts[c] > 0 and c < n_out]
        k = sum(int(np.argmin(self.firing_times[c]) == c) for c in eligible)
        return k, len(eligible)

    def group_counts(self):
        """(classes, groups) mean required spikes; groups partition the layers."""
        groups = np.asarray(self.groups)
        return np.stack([self.spike_counts[:, groups == g].sum(axis=1) for g in GROUPS], axis=1)

    def mrn(self):
        return self.group_counts().sum(axis=1)

    def _overall(self, per_class):
        w = self.class_counts
        keep = w > 0
        return float(np.sum(per_class[keep] * w[keep]) / w.sum())

    def mean_total_spikes(self):
        return self._overall(self.mrn())

    def mean_decision_time(self):
        return self._overall(self.decision_times)

    def epochs_frame(self):
        return pd.DataFrame(self.epochs)

    def confusion_frame(self):
        df = pd.DataFrame(self.confusion, columns=[f"pred_{j}" for j in range(self.confusion.shape[1])])
        df.insert(0, "true_class", range(N_CLASSES))
        return df

    def firing_times_frame(self):
        df = pd.DataFrame(self.firing_times, columns=[f"neuron_{j}" for j in range(self.firing_times.shape[1])])
        df.insert(0, "true_class", range(N_CLASSES))
        return df

    def class_summary_frame(self):
        return pd.DataFrame({
            "class": range(N_CLASSES),
            "mft": self.correct_neuron_mft(),
            "mrn": self.mrn(),
            "decision_time": self.decision_times,
            "count": self.class_counts,
        })

    def spike_counts_frame(self):
        df = pd.DataFrame(self.spike_counts, columns=self.columns)
        for j, g in enumerate(GROUPS):
            df[g] = self.group_counts()[:, j]
        df["total"] = self.mrn()
        df.insert(0, "class", range(N_CLASSES))
        return df

    def summary_text(self):
        lines = [
            f"architecture: {self.architecture}",
            f"mode: {self.mode}",
            f"seed: {self.seed}",
            f"samples: {self.n_samples}",
            f"accuracy: {self.accuracy:.6f}",
            f"mean decision time: {self.mean_decision_time():.6f}",
            f"mean required spikes: {self.mean_total_spikes():.6f}",
        ]
        k, n = self.correct_neuron_earliest()
        lines.append(f"correct neuron earliest: {k}/{n}")
        mft = self.correct_neuron_mft()
        lines.append("correct neuron mft: " + " ".join(f"{c}={v:.2f}" for c, v in enumerate(mft)))
        if self.epochs:
            best = max(self.epochs, key=lambda row: row["test_accuracy"])
            lines.append(f"epochs: {len(self.epochs) - 1}")
            lines.append(f"best epoch: {best['epoch']} (test accuracy {best['test_accuracy']:.6f})")
        if self.footprint is not None:
            fp = self.footprint
            lines.append(f"weights: {fp['n_weights']}")
            lines.append(f"raw bytes: {fp['raw_bytes']}")
            lines.append(f"packed bytes (with scaling factors): {fp['packed_total_bytes']}")
            lines.append(f"reduction: {fp['reduction']:.2f}x")
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        written = []

        def _csv(df, name):
            path = os.path.join(out_dir, name)
            df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
            written.append(path)

        if self.epochs:
            _csv(self.epochs_frame(), "epochs.csv")
        _csv(self.confusion_frame(), "confusion.csv")
        _csv(self.firing_times_frame(), "firing_times.csv")
        _csv(self.class_summary_frame(), "class_summary.csv")
        _csv(self.spike_counts_frame(), "spike_counts.csv")

        path = os.path.join(out_dir, "summary.txt")
        with open(path, "w") as f:
            f.write(self.summary_text())
        written.append(path)
        return written
