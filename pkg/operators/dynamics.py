from dataclasses import dataclass

import numpy as np

from operators.encoding import NO_SPIKE, SpikeRaster
from operators.errors import InputDomainError, ShapeError


@dataclass(frozen=True)
class NeuronParams(object):
    """Piecewise-linear PSP time constants, threshold and horizon of one layer."""

    tau1: int = 40
    tau2: int = 40
    v_th: float = 1.0
    t_max: int = 100

    def __post_init__(self):
        if self.tau1 < 1 or self.tau2 < 1:
            raise InputDomainError(f"tau1 and tau2 must be >= 1, got {self.tau1}, {self.tau2}")
        if not self.v_th > 0:
            raise InputDomainError(f"v_th must be > 0, got {self.v_th}")
        if self.t_max < 1:
            raise InputDomainError(f"t_max must be >= 1, got {self.t_max}")

    @property
    def tau(self):
        return self.tau1 + self.tau2

    @classmethod
    def from_tau(cls, tau, v_th, t_max, tau1=None):
        if tau1 is None:
            tau1 = tau // 2
        return cls(tau1=int(tau1), tau2=int(tau - tau1), v_th=float(v_th), t_max=int(t_max))


def psp_kernel(dt, p):
    """Triangular PSP: rises to 1 over tau1 steps, falls back to 0 over tau2."""
    dt = np.asarray(dt, dtype=np.float64)
    rising = (dt >= 0) & (dt < p.tau1)
    falling = (dt >= p.tau1) & (dt < p.tau)
    out = np.where(rising, dt / p.tau1, 0.0)
    out = np.where(falling, (p.tau - dt) / p.tau2, out)
    if out.ndim == 0:
        return float(out)
    return out


def psp_slope_wrt_presyn_time(dt, w, p):
    dt = np.asarray(dt, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    rising = (dt >= 0) & (dt < p.tau1)
    falling = (dt >= p.tau1) & (dt < p.tau)
    out = np.where(rising, -w / p.tau1, 0.0)
    out = np.where(falling, w / p.tau2, out)
    if out.ndim == 0:
        return float(out)
    return out


def _check_lengths(inputs, weights):
    weights = np.asarray(weights, dtype=np.float64)
    if inputs.times.size != weights.shape[-1]:
        raise ShapeError(f"{inputs.times.size} inputs but {weights.shape[-1]} weights")
    return weights


def membrane_potential(inputs, weights, t, p):
    weights = _check_lengths(inputs, weights)
    times = inputs.times.reshape(-1)
    fired = times != NO_SPIKE
    eps = psp_kernel(t - times[fired], p)
    return float(np.dot(weights.reshape(-1)[fired], eps))


def kernel_matrix(inputs, p):
    """PSP value of every input at every step 0..t_max, shape (t_max+1, n_in).

    Silent inputs contribute a zero column."""
    times = inputs.times.reshape(-1)
    grid = np.arange(p.t_max + 1, dtype=np.float64)[:, None]
    eps = psp_kernel(grid - times[None, :], p)
    eps[:, times == NO_SPIKE] = 0.0
    return eps


def first_crossing(potentials, v_th):
    """Index of the first row where each column reaches v_th, NO_SPIKE if none.

    `potentials` has time on axis 0."""
    crossed = potentials >= v_th
    first = np.argmax(crossed, axis=0).astype(np.int64)
    first[~crossed.any(axis=0)] = NO_SPIKE
    return first


def first_spike_time(inputs, weights, p):
    weights = _check_lengths(inputs, weights)
    v = kernel_matrix(inputs, p) @ weights.reshape(-1)
    t = first_crossing(v[:, None], p.v_th)[0]
    if t == NO_SPIKE:
        return None
    return int(t)


def first_spike_times(inputs, weights, p):
    """Vectorised first_spike_time for a weight matrix of shape (n_out, n_in)."""
    weights = _check_lengths(inputs, weights)
    v = kernel_matrix(inputs, p) @ weights.T
    return SpikeRaster(first_crossing(v, p.v_th), p.t_max)
