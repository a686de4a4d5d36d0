from dataclasses import dataclass

import numpy as np

from operators.errors import InputDomainError

NO_SPIKE = -1


@dataclass(frozen=True)
class SpikeRaster(object):
    """Spike time of every neuron of one layer activation.

    `times` holds integers in [0, t_max], or NO_SPIKE for a silent neuron.
    Being a single integer per neuron, a raster can never carry a second
    spike."""

    times: np.ndarray
    t_max: int

    @property
    def shape(self):
        return self.times.shape

    def __len__(self):
        return self.times.size

    def fired(self):
        return self.times != NO_SPIKE

    def filled(self, value=None):
        """Spike times as floats, silent neurons replaced by `value` (t_max by default)."""
        if value is None:
            value = self.t_max
        out = self.times.astype(np.float64)
        out[~self.fired()] = value
        return out

    def count(self):
        return int(np.count_nonzero(self.fired()))

    def count_until(self, t):
        return int(np.count_nonzero(self.fired() & (self.times <= t)))

    def flat(self):
        return SpikeRaster(self.times.reshape(-1), self.t_max)

    def reshape(self, shape):
        return SpikeRaster(self.times.reshape(shape), self.t_max)


def make_raster(times, t_max):
    times = np.asarray(times, dtype=np.int64)
    bad = (times != NO_SPIKE) & ((times < 0) | (times > t_max))
    if np.any(bad):
        raise InputDomainError(f"spike times must lie in [0, {t_max}] or be NO_SPIKE")
    return SpikeRaster(times, int(t_max))


@dataclass(frozen=True)
class EncodingConfig(object):
    t_max: int = 100
    intensity_max: int = 255

    def __post_init__(self):
        if self.t_max < 1:
            raise InputDomainError(f"t_max must be >= 1, got {self.t_max}")
        if self.intensity_max < 1:
            raise InputDomainError(f"intensity_max must be >= 1, got {self.intensity_max}")


def encode_image(pixels, cfg):
    """Brighter pixels spike earlier; black pixels stay silent."""

    pixels = np.asarray(pixels)
    if pixels.size and (pixels.min() < 0 or pixels.max() > cfg.intensity_max):
        raise InputDomainError(f"pixel values must lie in [0, {cfg.intensity_max}]")

    p = pixels.astype(np.float64)
    times = np.rint(cfg.t_max * (1.0 - p / cfg.intensity_max)).astype(np.int64)
    times[p == 0] = NO_SPIKE
    return SpikeRaster(times, cfg.t_max)


def decode_raster(raster, cfg):
    times = raster.times
    fired = raster.fired()
    intensities = np.zeros(times.shape, dtype=np.int64)

    # candidates around the continuous inverse; pick the one whose encoding
    # reproduces the time, preferring the one nearest the inverse.
    exact = cfg.intensity_max * (1.0 - times[fired] / cfg.t_max)
    base = np.rint(exact).astype(np.int64)
    best = np.clip(base, 1, cfg.intensity_max)
    best_err = np.full(best.shape, np.inf)
    for offset in (0, -1, 1, -2, 2):
        cand = np.clip(base + offset, 1, cfg.intensity_max)
        enc = np.rint(cfg.t_max * (1.0 - cand / cfg.intensity_max)).astype(np.int64)
        err = np.where(enc == times[fired], np.abs(cand - exact), np.inf)
        take = err < best_err
        best[take] = cand[take]
        best_err[take] = err[take]
    intensities[fired] = best
    return intensities
