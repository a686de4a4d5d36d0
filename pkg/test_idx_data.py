import os
import struct

import numpy as np
import pytest

from idx_data import Dataset, load_idx_images, load_idx_labels, load_split, split_paths, stratified_quota, \
    subsample, write_dataset, write_idx_images, write_idx_labels
from operators.errors import FormatError, InputDomainError, PayloadLengthError


def test_single_zero_image(tmp_path):
    path = str(tmp_path / "one-images-idx3-ubyte")
    write_idx_images(path, np.zeros((1, 28, 28), dtype=np.uint8))
    images = load_idx_images(path)
    assert images.shape == (1, 28, 28)
    assert not images.any()


def test_wrong_magic_is_a_format_error(tmp_path):
    path = str(tmp_path / "labels")
    write_idx_labels(path, [1, 2, 3])
    with pytest.raises(FormatError):
        load_idx_images(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "short"
    path.write_bytes(struct.pack(">4I", 0x803, 2, 28, 28) + bytes(100))
    with pytest.raises(PayloadLengthError):
        load_idx_images(str(path))
    path.write_bytes(b"\x00\x00")
    with pytest.raises(PayloadLengthError):
        load_idx_labels(str(path))


def test_labels(tmp_path):
    path = str(tmp_path / "labels")
    write_idx_labels(path, [])
    assert load_idx_labels(path).size == 0
    write_idx_labels(path, [3, 14])
    with pytest.raises(InputDomainError):
        load_idx_labels(path)


def test_gzip_round_trip_is_byte_exact(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset(rng.integers(0, 256, size=(5, 4, 4)).astype(np.uint8), np.array([0, 1, 2, 3, 9]), "test")
    image_path, label_path = write_dataset(str(tmp_path), ds, compress=True)
    assert image_path.endswith("t10k-images-idx3-ubyte.gz")
    again = load_split(str(tmp_path), "test")
    assert np.array_equal(again.images, ds.images)
    assert np.array_equal(again.labels, ds.labels)

    plain = tmp_path / "plain"
    plain.mkdir()
    write_dataset(str(plain), again)
    first = open(os.path.join(str(plain), "t10k-images-idx3-ubyte"), "rb").read()
    write_dataset(str(plain), load_split(str(plain), "test"))
    assert open(os.path.join(str(plain), "t10k-images-idx3-ubyte"), "rb").read() == first


def test_split_paths_prefer_uncompressed(tmp_path):
    ds = Dataset(np.zeros((1, 2, 2), dtype=np.uint8), np.array([4]), "train")
    write_dataset(str(tmp_path), ds)
    images, labels = split_paths(str(tmp_path), "train")
    assert images.endswith("train-images-idx3-ubyte")
    with pytest.raises(InputDomainError):
        split_paths(str(tmp_path), "validation")
    with pytest.raises(FileNotFoundError):
        load_split(str(tmp_path), "test")


def balanced(n_per_class):
    labels = np.repeat(np.arange(10), n_per_class)
    images = np.zeros((labels.size, 2, 2), dtype=np.uint8)
    images[:, 0, 0] = np.arange(labels.size) % 256
    return Dataset(images, labels, "train")


def test_subsample_is_stratified_and_reproducible():
    ds = balanced(150)
    sub = subsample(ds, 1000, seed=3)
    assert sub.class_counts().tolist() == [100] * 10
    again = subsample(ds, 1000, seed=3)
    assert np.array_equal(sub.images, again.images)
    other = subsample(ds, 1000, seed=4)
    assert not np.array_equal(sub.images, other.images)


def test_subsample_identity_and_bounds():
    ds = balanced(3)
    assert subsample(ds, 30) is ds
    with pytest.raises(InputDomainError):
        subsample(ds, 31)


def test_stratified_quota_keeps_proportions():
    counts = np.array([50, 30, 20, 7, 0, 0, 0, 0, 0, 0])
    quota = stratified_quota(counts, 10)
    assert quota.sum() == 10
    assert np.all(np.abs(quota - counts * 10 / counts.sum()) <= 1)


def test_dataset_validation():
    with pytest.raises(InputDomainError):
        Dataset(np.zeros((2, 2, 2)), np.array([1]))
    with pytest.raises(InputDomainError):
        Dataset(np.zeros((1, 2, 2)), np.array([10]))
