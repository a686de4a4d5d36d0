import os
import gzip
import struct
from dataclasses import dataclass

import numpy as np

from operators.errors import FormatError, InputDomainError, PayloadLengthError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
N_CLASSES = 10

SPLIT_PREFIX = {"train": "train", "test": "t10k"}


@dataclass(frozen=True)
class Dataset(object):
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise InputDomainError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise InputDomainError(f"labels must lie in [0, {N_CLASSES - 1}]")

    def __len__(self):
        return len(self.labels)

    def class_counts(self):
        return np.bincount(self.labels, minlength=N_CLASSES)


def _read_bytes(path):
    with open(path, "rb") as f:
        raw = f.read()
    # gzip member header; the same files are commonly shipped compressed
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _header(raw, n_ints, path):
    size = 4 * n_ints
    if len(raw) < size:
        raise PayloadLengthError(f"{path}: header truncated ({len(raw)} of {size} bytes)")
    return struct.unpack(f">{n_ints}I", raw[:size]), raw[size:]


def load_idx_images(path):
    raw = _read_bytes(path)
    (magic,), _ = _header(raw, 1, path)
    if magic != IMAGE_MAGIC:
        raise FormatError(f"{path}: magic 0x{magic:08x} is not an image file (0x{IMAGE_MAGIC:08x})")
    (magic, count, rows, cols), payload = _header(raw, 4, path)
    expected = count * rows * cols
    if len(payload) < expected:
        raise PayloadLengthError(f"{path}: expected {expected} pixel bytes, found {len(payload)}")
    return np.frombuffer(payload[:expected], dtype=np.uint8).reshape(count, rows, cols).copy()


def load_idx_labels(path):
    raw = _read_bytes(path)
    (magic,), _ = _header(raw, 1, path)
    if magic != LABEL_MAGIC:
        raise FormatError(f"{path}: magic 0x{magic:08x} is not a label file (0x{LABEL_MAGIC:08x})")
    (magic, count), payload = _header(raw, 2, path)
    if len(payload) < count:
        raise PayloadLengthError(f"{path}: expected {count} label bytes, found {len(payload)}")
    labels = np.frombuffer(payload[:count], dtype=np.uint8).copy()
    if labels.size and labels.max() >= N_CLASSES:
        raise InputDomainError(f"{path}: label {labels.max()} outside [0, {N_CLASSES - 1}]")
    return labels


def _write(path, header, payload):
    data = header + payload
    if path.endswith(".gz"):
        # mtime pinned so identical data gives identical files
        data = gzip.compress(data, mtime=0)
    with open(path, "wb") as f:
        f.write(data)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    _write(path, struct.pack(">4I", IMAGE_MAGIC, count, rows, cols), images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    _write(path, struct.pack(">2I", LABEL_MAGIC, labels.size), labels.tobytes())


def split_paths(data_dir, split):
    """Image and label paths for a split, preferring uncompressed files."""
    if split not in SPLIT_PREFIX:
        raise InputDomainError(f"split must be one of {list(SPLIT_PREFIX)}, got {split}")
    prefix = SPLIT_PREFIX[split]
    paths = []
    for kind in ("images-idx3", "labels-idx1"):
        name = os.path.join(data_dir, f"{prefix}-{kind}-ubyte")
        if not os.path.isfile(name) and os.path.isfile(name + ".gz"):
            name += ".gz"
        paths.append(name)
    return paths


def load_split(data_dir, split="train"):
    image_path, label_path = split_paths(data_dir, split)
    for path in (image_path, label_path):
        if not os.path.isfile(path):
            raise FileNotFoundError(f"{path} not found (expected {{train,t10k}}-{{images-idx3,labels-idx1}}-ubyte[.gz])")
    return Dataset(load_idx_images(image_path), load_idx_labels(label_path).astype(np.int64), split)


def write_dataset(data_dir, ds, compress=False):
    image_path, label_path = [os.path.join(data_dir, f"{SPLIT_PREFIX[ds.split]}-{kind}-ubyte")
                              for kind in ("images-idx3", "labels-idx1")]
    if compress:
        image_path, label_path = image_path + ".gz", label_path + ".gz"
    write_idx_images(image_path, ds.images)
    write_idx_labels(label_path, ds.labels)
    return image_path, label_path


def stratified_quota(counts, n):
    """Per-class sample counts proportional to `counts`, summing to n.

    Leftover samples go to the largest fractional shares, lowest class first."""
    counts = np.asarray(counts, dtype=np.int64)
    total = counts.sum()
    exact = counts * n / total if total else np.zeros(len(counts))
    quota = np.floor(exact).astype(np.int64)
    remainder = n - quota.sum()
    order = sorted(range(len(counts)), key=lambda c: (-(exact[c] - quota[c]), c))
    for c in order[:remainder]:
        quota[c] += 1
    return np.minimum(quota, counts)


def subsample(ds, n, seed=0):
    if n > len(ds):
        raise InputDomainError(f"cannot draw {n} samples from a dataset of {len(ds)}")
    if n == len(ds):
        return ds
    rng = np.random.default_rng(seed)
    quota = stratified_quota(ds.class_counts(), n)
    chosen = []
    for c, q in enumerate(quota):
        members = np.flatnonzero(ds.labels == c)
        chosen.append(rng.permutation(members)[:q])
    index = np.sort(np.concatenate(chosen))
    return Dataset(ds.images[index], ds.labels[index], ds.split)
