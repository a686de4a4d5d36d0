"""Pre-flight checks of the engine: a brute-force spike-time oracle, finite
differences of the potential, a tiny learning task and a check of which way
the literal weight update moves spike times.

Every suite returns a dict with a "pass" flag and an "errors" list; nothing
raises unless `run_all(raise_exception=True)` is asked to.
"""
from dataclasses import dataclass, replace

import numpy as np

from logs import get_logger
from operators.binary import BinaryLayerState, alpha_update
from operators.dynamics import NeuronParams, first_spike_times, membrane_potential, psp_kernel, \
    psp_slope_wrt_presyn_time
from operators.encoding import NO_SPIKE, SpikeRaster, make_raster
from operators.errors import InputDomainError, SpikeEngineError
from operators.layers import Layer, LayerState, Network, classify, dense_spec, network_forward
from operators.learning import LearningConfig, TargetTimes, dense_weight_update, train_batch

logger = get_logger(__name__)


class VerificationError(SpikeEngineError):
    pass


@dataclass(frozen=True)
class TinyNetCase(object):
    """A small random dense network with a random input raster."""

    seed: int
    sizes: tuple
    params: tuple
    weights: tuple
    inputs: SpikeRaster

    @classmethod
    def random(cls, seed, t_max=60, max_layers=3, max_neurons=12, weight_range=(-0.5, 1.5), silent=0.2):
        rng = np.random.default_rng(seed)
        n_layers = int(rng.integers(1, max_layers + 1))
        sizes = tuple(int(n) for n in rng.integers(1, max_neurons + 1, size=n_layers + 1))
        params, weights = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            params.append(NeuronParams(tau1=int(rng.integers(2, 31)), tau2=int(rng.integers(2, 31)),
                                       v_th=float(rng.uniform(0.5, 2.0)), t_max=t_max))
            weights.append(rng.uniform(weight_range[0], weight_range[1], size=(n_out, n_in)))
        times = rng.integers(0, t_max // 2 + 1, size=sizes[0])
        times[rng.random(sizes[0]) < silent] = NO_SPIKE
        return cls(seed, sizes, tuple(params), tuple(weights), make_raster(times, t_max))

    @property
    def t_max(self):
        return self.inputs.t_max

    def with_zero_weights(self):
        return replace(self, weights=tuple(np.zeros_like(w) for w in self.weights))

    def layers(self):
        out = []
        for n_in, p, w in zip(self.sizes[:-1], self.params, self.weights):
            out.append(Layer(dense_spec((n_in,), w.shape[0], p), LayerState(w.copy())))
        return out

    def forward(self):
        return network_forward(self.inputs, self.layers())


def _fine_kernel(dt_fine, p, resolution):
    """Triangular kernel on integer fine-step offsets."""
    rise = p.tau1 * resolution
    top = p.tau * resolution
    out = np.zeros(dt_fine.shape)
    rising = (dt_fine >= 0) & (dt_fine < rise)
    falling = (dt_fine >= rise) & (dt_fine < top)
    out[rising] = dt_fine[rising] / rise
    out[falling] = (top - dt_fine[falling]) / (p.tau2 * resolution)
    return out


def fine_grid_spike_oracle(case, resolution=100):
    """Simulate every layer on a grid `resolution` times finer than the engine's.

    Per layer returns {"fine": first crossing in steps (nan if none),
    "integer": that crossing rounded up to a whole step (NO_SPIKE if none)}.
    Each layer is driven by the previous layer's rounded-up spikes."""
    if resolution < 10:
        raise InputDomainError(f"oracle resolution must be >= 10, got {resolution}")
    t_max = case.t_max
    grid = np.arange(t_max * resolution + 1)
    times = case.inputs.times.reshape(-1)
    results = []
    for p, w in zip(case.params, case.weights):
        fired = times != NO_SPIKE
        eps = _fine_kernel(grid[:, None] - times[None, :] * resolution, p, resolution)
        eps[:, ~fired] = 0.0
        v = eps @ w.T
        crossed = v >= p.v_th

        any_fine = crossed.any(axis=0)
        first = np.argmax(crossed, axis=0)
        fine = np.where(any_fine, first / resolution, np.nan)
        integer = np.where(any_fine, -(-first // resolution), NO_SPIKE).astype(np.int64)
        results.append({"fine": fine, "integer": integer})
        times = integer
    return results


def oracle_agreement(case, resolution=100):
    """The engine's spike must be the fine crossing rounded up to a whole step."""
    engine = case.forward()[1:]
    oracle = fine_grid_spike_oracle(case, resolution)
    errors = []
    for index, (raster, ref) in enumerate(zip(engine, oracle), start=1):
        got = raster.times.reshape(-1)
        fired = got != NO_SPIKE
        if np.any(np.isnan(ref["fine"][fired])):
            errors.append(f"case {case.seed} layer {index}: engine fired where the fine simulation never crosses")
        if not np.array_equal(got, ref["integer"]):
            errors.append(f"case {case.seed} layer {index}: engine {got.tolist()} "
                          f"!= ceiling of fine crossing {ref['integer'].tolist()}")
    return {"pass": not errors, "errors": errors}


def oracle_sweep(n_cases=50, resolution=100, seed=0):
    errors = []
    for k in range(n_cases):
        errors += oracle_agreement(TinyNetCase.random(seed + k), resolution)["errors"]
    return {"pass": not errors, "errors": errors, "cases": n_cases}


def _potential_at(times, weights, t, p):
    """v(t) for real-valued presynaptic times (nan = silent)."""
    fired = ~np.isnan(times)
    return float(np.dot(weights[fired], psp_kernel(t - times[fired], p)))


def finite_difference_suite(case, h=None, delta=0.01, t_step=10, w_tol=1e-6, t_tol=1e-3):
    """Compare the analytic derivatives of the potential against central differences.

    dv/dw uses steps of `h` (1e-4 of the weight scale by default); dv/dt_j
    shifts one presynaptic spike by +-`delta` and skips points within
    `delta` of a kernel kink."""
    rasters = case.forward()
    max_w = 0.0
    max_t = 0.0
    checked_w = checked_t = skipped = 0
    for p, w, pre in zip(case.params, case.weights, rasters[:-1]):
        scale = float(np.max(np.abs(w))) or 1.0
        step = h if h is not None else 1e-4 * scale
        pre_times = pre.times.reshape(-1)
        real_times = np.where(pre_times == NO_SPIKE, np.nan, pre_times.astype(np.float64))
        for t in range(0, p.t_max + 1, t_step):
            for i in range(w.shape[0]):
                row = w[i].copy()
                for j in range(w.shape[1]):
                    base = row[j]
                    row[j] = base + step
                    up = membrane_potential(pre, row, t, p)
                    row[j] = base - step
                    down = membrane_potential(pre, row, t, p)
                    row[j] = base
                    fd = (up - down) / (2 * step)
                    analytic = psp_kernel(t - pre_times[j], p) if pre_times[j] != NO_SPIKE else 0.0
                    max_w = max(max_w, abs(fd - analytic) / max(abs(analytic), 1e-8))
                    checked_w += 1

                    if pre_times[j] == NO_SPIKE:
                        continue
                    dt = t - pre_times[j]
                    if min(abs(dt - k) for k in (0, p.tau1, p.tau)) <= delta:
                        skipped += 1
                        continue
                    shifted = real_times.copy()
                    shifted[j] = pre_times[j] + delta
                    later = _potential_at(shifted, row, t, p)
                    shifted[j] = pre_times[j] - delta
                    earlier = _potential_at(shifted, row, t, p)
                    fd = (later - earlier) / (2 * delta)
                    analytic = psp_slope_wrt_presyn_time(dt, row[j], p)
                    max_t = max(max_t, abs(fd - analytic) / max(abs(analytic), 1e-8))
                    checked_t += 1

    errors = []
    if max_w > w_tol:
        errors.append(f"case {case.seed}: dv/dw relative error {max_w:.3g} > {w_tol}")
    if max_t > t_tol:
        errors.append(f"case {case.seed}: dv/dt relative error {max_t:.3g} > {t_tol}")
    return {"pass": not errors, "errors": errors, "max_rel_err_w": max_w, "max_rel_err_t": max_t,
            "checked_w": checked_w, "checked_t": checked_t, "skipped_kinks": skipped}


def finite_difference_sweep(n_cases=50, seed=0):
    errors = []
    max_w = max_t = 0.0
    for k in range(n_cases):
        result = finite_difference_suite(TinyNetCase.random(seed + k))
        errors += result["errors"]
        max_w = max(max_w, result["max_rel_err_w"])
        max_t = max(max_t, result["max_rel_err_t"])
    return {"pass": not errors, "errors": errors, "cases": n_cases, "max_rel_err_w": max_w, "max_rel_err_t": max_t}


def two_class_task(n_per_class=20, n_inputs=20, t_max=50, jitter=2, seed=0):
    """Two classes driven by disjoint halves of the inputs, each sample a
    jittered copy of its class prototype."""
    rng = np.random.default_rng(seed)
    half = n_inputs // 2
    samples, labels = [], []
    for label in (0, 1):
        prototype = rng.integers(0, 15, size=half)
        for _ in range(n_per_class):
            times = np.full(n_inputs, NO_SPIKE, dtype=np.int64)
            active = np.clip(prototype + rng.integers(-jitter, jitter + 1, size=half), 0, t_max)
            times[label * half:(label + 1) * half] = active
            samples.append(make_raster(times, t_max))
            labels.append(label)
    return samples, np.asarray(labels)


def smoke_network(rng, n_inputs=20, n_hidden=8, t_max=50, binary=False, eta=0.1):
    p = NeuronParams(tau1=25, tau2=25, v_th=1.0, t_max=t_max)
    layers = []
    for n_in, n_out in ((n_inputs, n_hidden), (n_hidden, 2)):
        spec = dense_spec((n_in,), n_out, p)
        if binary:
            state = BinaryLayerState.initialize(spec, rng, init_range=(-0.5, 1.0), eta=eta, beta=1.0,
                                                mu=0.01, alpha_range=(0.3, 0.6), name=str(len(layers) + 1))
        else:
            state = LayerState.initialize(spec, rng, init_range=(0.0, 0.6), eta=eta, beta=1.0)
        layers.append(Layer(spec, state))
    return Network(f"{n_inputs}-{n_hidden}-2", layers, (n_inputs,))


def _smoothed(values, window=5):
    values = np.asarray(values, dtype=np.float64)
    if len(values) < window:
        return values
    return np.convolve(values, np.ones(window) / window, mode="valid")


def convergence_smoke(lam=5.0, binary=False, epochs=100, seed=0, min_accuracy=0.95, eta=0.1, loss_atol=1e-6):
    """Train a tiny dense net on the two-class task and check it learns.

    A layer's smoothed loss may end above where it started by at most
    `loss_atol`; hidden-layer losses are tiny and carry rounding noise."""
    samples, labels = two_class_task(seed=seed)
    rng = np.random.default_rng(seed)
    network = smoke_network(rng, binary=binary, eta=eta)
    config = LearningConfig(lam=lam)
    alpha_fn = alpha_update if binary else None

    history = []
    accuracy = 0.0
    for _ in range(epochs):
        order = rng.permutation(len(labels))
        losses, outputs = [], []
        for i in order:
            l, o = train_batch([samples[i]], [labels[i]], network, config, alpha_fn=alpha_fn)
            losses += l
            outputs += o
        accuracy = float(np.mean([classify(o) == labels[i] for o, i in zip(outputs, order)]))
        history.append(np.mean(losses, axis=0))

    final = float(np.mean([classify(network_forward(s, network.layers)[-1]) == y for s, y in zip(samples, labels)]))
    history = np.asarray(history)
    errors = []
    if final < min_accuracy:
        errors.append(f"train accuracy {final:.3f} < {min_accuracy}")
    for index in range(history.shape[1]):
        smooth = _smoothed(history[:, index])
        if smooth[-1] > smooth[0] + loss_atol:
            errors.append(f"layer {index + 1} smoothed loss rose from {smooth[0]:.4g} to {smooth[-1]:.4g}")
    return {"pass": not errors, "errors": errors, "accuracy": final, "last_epoch_accuracy": accuracy,
            "loss_history": history, "lambda": lam, "binary": binary}


def sign_convention_check(eta_sign=1, iterations=40, eta=1.0):
    """Iterate the dense update on one neuron whose target lies 5 steps
    before its spike; passes when the gap to the target shrinks."""
    p = NeuronParams(tau1=20, tau2=20, v_th=1.0, t_max=50)
    pre = make_raster([0, 2, 4, 6, 8], p.t_max)
    state = LayerState(np.full((1, 5), 0.3), eta=eta)
    post = first_spike_times(pre, state.weights, p)
    start = int(post.times[0])
    targets = TargetTimes(np.array([start - 5.0]), p.t_max)
    for _ in range(iterations):
        state.weights += eta_sign * dense_weight_update(pre, post, targets, state, p)
        post = first_spike_times(pre, state.weights, p)

    initial_gap = 5.0
    final_gap = abs(targets.times[0] - post.filled()[0])
    ok = final_gap < initial_gap
    result = {"pass": ok, "errors": [], "initial_time": start, "final_time": int(post.times[0]),
              "initial_gap": initial_gap, "final_gap": final_gap, "eta_sign": eta_sign}
    if not ok:
        result["errors"].append(f"update with eta_sign = {eta_sign} moved the spike away from its target "
                                f"(gap {initial_gap:g} -> {final_gap:g}); try eta_sign = {-eta_sign}")
    return result


def run_all(raise_exception=False, n_cases=50, smoke=True, verbose=False):
    log = get_logger(__name__, verbose)
    results = {
        "oracle": oracle_sweep(n_cases),
        "finite_differences": finite_difference_sweep(n_cases),
        "sign_convention": sign_convention_check(),
    }
    if smoke:
        base = convergence_smoke()
        no_margin = convergence_smoke(lam=0.0, min_accuracy=0.75)
        binary = convergence_smoke(binary=True, min_accuracy=max(0.0, base["accuracy"] - 0.05))
        results["convergence"] = base
        results["convergence_lambda_0"] = no_margin
        results["convergence_binary"] = binary

    for name, result in results.items():
        log.info(f"{name}: {'PASS' if result['pass'] else 'FAIL'}")
        for e in result["errors"]:
            log.info(f"  {e}")

    failed = [name for name, result in results.items() if not result["pass"]]
    if failed and raise_exception:
        raise VerificationError(f"verification failed: {', '.join(failed)}")
    return {"pass": not failed, "errors": failed, "results": results}
