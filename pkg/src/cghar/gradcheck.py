"""Finite-difference verification of every layer's reverse-mode gradients.

Each check builds small random instances, runs backward once, and compares
every parameter and input gradient against central finite differences of a
scalar probe (an upstream-weighted output sum, or the cross-entropy loss).
Instances that land too close to a ReLU kink or a pooling tie are redrawn,
since finite differences are meaningless across those non-smooth points.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .layers import Conv1d, Dropout, Fc, Lstm, MaxPool1d, softmax_cross_entropy
from .models import TINY, CompositeModel
from .tensor import Rng

EPS = 1e-5
TOLERANCE = 1e-4
# minimum |pre-activation| (and pooling top-2 gap) for a usable instance
KINK_MARGIN = 1e-4

LAYER_ORDER = ["FC", "Conv1D", "MaxPool", "LSTM", "Softmax", "Dropout", "end-to-end"]


def central_difference(f, arr: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Numeric dF/d(arr) where f() re-evaluates the scalar; arr is perturbed
    in place and restored, so it must be the array the computation reads."""
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def array_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Infinity-norm relative error between two gradient arrays."""
    scale = max(float(np.max(np.abs(analytic))),
                float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _check_against_fd(analytic: dict[str, np.ndarray], arrays: dict[str, np.ndarray],
                      f) -> float:
    worst = 0.0
    for name, arr in arrays.items():
        numeric = central_difference(f, arr)
        worst = max(worst, array_rel_error(analytic[name], numeric))
    return worst


def check_fc(rng: Rng, instances: int = 20, fc_cls=Fc) -> float:
    worst = 0.0
    done = 0
    while done < instances:
        n_in = 2 + rng.integer(5)
        n_out = 2 + rng.integer(4)
        activation = "relu" if done % 2 == 0 else "identity"
        layer = fc_cls(n_in, n_out, activation)
        layer.params["W"][...] = rng.normal((n_out, n_in), 0.8)
        layer.params["b"][...] = rng.normal((n_out,), 0.5)
        x = rng.normal((n_in,), 1.0)
        z = layer.params["W"] @ x + layer.params["b"]
        if activation == "relu" and np.min(np.abs(z)) < KINK_MARGIN:
            continue
        upstream = rng.normal((n_out,), 1.0)

        layer.forward(x)
        dx = layer.backward(upstream)

        def probe():
            y = layer.forward(x)
            layer._cache.clear()
            return float(np.sum(upstream * y))

        analytic = {"x": dx, "W": layer.grads["W"], "b": layer.grads["b"]}
        arrays = {"x": x, "W": layer.params["W"], "b": layer.params["b"]}
        worst = max(worst, _check_against_fd(analytic, arrays, probe))
        done += 1
    return worst


def check_conv(rng: Rng, instances: int = 20, conv_cls=Conv1d) -> float:
    worst = 0.0
    done = 0
    while done < instances:
        c = 1 + rng.integer(3)
        k = 1 + rng.integer(3)
        width = 2 + rng.integer(3)
        length = width + 4 + rng.integer(6)
        layer = conv_cls(c, k, width)
        layer.params["kernels"][...] = rng.normal((k, c, width), 0.7)
        layer.params["biases"][...] = rng.normal((k,), 0.4)
        x = rng.normal((c, length), 1.0)
        z = kernels.conv1d_forward(x, layer.params["kernels"], layer.params["biases"])
        if np.min(np.abs(z)) < KINK_MARGIN:
            continue
        upstream = rng.normal(z.shape, 1.0)

        layer.forward(x)
        dx = layer.backward(upstream)

        def probe():
            out = layer.forward(x)
            layer._cache.clear()
            return float(np.sum(upstream * out))

        analytic = {"x": dx, "kernels": layer.grads["kernels"],
                    "biases": layer.grads["biases"]}
        arrays = {"x": x, "kernels": layer.params["kernels"],
                  "biases": layer.params["biases"]}
        worst = max(worst, _check_against_fd(analytic, arrays, probe))
        done += 1
    return worst


def _pool_gap(x: np.ndarray, region: int) -> float:
    c, l = x.shape
    lo = l // region
    blocks = x[:, :lo * region].reshape(c, lo, region)
    top2 = np.sort(blocks, axis=2)[:, :, -2:]
    return float(np.min(top2[:, :, 1] - top2[:, :, 0]))


def check_maxpool(rng: Rng, instances: int = 20, pool_cls=MaxPool1d) -> float:
    worst = 0.0
    done = 0
    while done < instances:
        c = 1 + rng.integer(3)
        region = 4
        length = region + 1 + rng.integer(9)
        x = rng.uniform((c, length), -1.0, 1.0)
        if _pool_gap(x, region) < KINK_MARGIN:
            continue
        layer = pool_cls(region)
        y = layer.forward(x)
        upstream = rng.normal(y.shape, 1.0)
        dx = layer.backward(upstream)

        def probe():
            out = layer.forward(x)
            layer._cache.clear()
            return float(np.sum(upstream * out))

        worst = max(worst, _check_against_fd({"x": dx}, {"x": x}, probe))
        done += 1
    return worst


def check_lstm(rng: Rng, instances: int = 20, lstm_cls=Lstm, steps: int = 5) -> float:
    worst = 0.0
    for _ in range(instances):
        n_in = 2 + rng.integer(3)
        hidden = 2 + rng.integer(3)
        layer = lstm_cls(n_in, hidden)
        for name in layer.params:
            layer.params[name][...] = rng.normal(layer.params[name].shape, 0.6)
        xs = [rng.normal((n_in,), 1.0) for _ in range(steps)]
        upstream = rng.normal((hidden,), 1.0)

        layer.forward(xs)
        dxs = layer.backward(upstream)

        def probe():
            hs = layer.forward(xs)
            layer._cache.clear()
            return float(np.sum(upstream * hs[-1]))

        analytic = {f"x{t}": dxs[t] for t in range(steps)}
        analytic.update({k: layer.grads[k] for k in layer.params})
        arrays = {f"x{t}": xs[t] for t in range(steps)}
        arrays.update(layer.params)
        worst = max(worst, _check_against_fd(analytic, arrays, probe))
    return worst


def check_softmax(rng: Rng, instances: int = 20, classes: int = 8) -> float:
    """Fused softmax + cross-entropy gradient with respect to the logits."""
    worst = 0.0
    for _ in range(instances):
        z = rng.normal((classes,), 2.0)
        y = rng.integer(classes)
        _, _, dz = softmax_cross_entropy(z, y)

        def probe():
            loss, _, _ = softmax_cross_entropy(z, y)
            return loss

        worst = max(worst, _check_against_fd({"z": dz}, {"z": z}, probe))
    return worst


def check_dropout(rng: Rng, instances: int = 20, dropout_cls=Dropout) -> float:
    """Eval mode must be the exact identity; train mode is checked against a
    frozen mask, under which the map is linear."""
    worst = 0.0
    for _ in range(instances):
        n = 4 + rng.integer(8)
        x = rng.uniform((n,), 0.5, 1.5)
        upstream = rng.normal((n,), 1.0)
        layer = dropout_cls(0.5)

        layer.forward(x, train=False)
        dx = layer.backward(upstream)

        def probe_eval():
            y = layer.forward(x, train=False)
            layer._cache.clear()
            return float(np.sum(upstream * y))

        worst = max(worst, _check_against_fd({"x": dx}, {"x": x}, probe_eval))

        y = layer.forward(x, train=True, rng=rng)
        keep = y / x  # frozen mask including the 1/(1-rate) scale
        dx_train = layer.backward(upstream)

        def probe_train():
            return float(np.sum(upstream * x * keep))

        worst = max(worst, _check_against_fd({"x": dx_train}, {"x": x}, probe_train))
    return worst


def _live_pool_gap(pooled_input: np.ndarray, region: int) -> float:
    """Top-2 gap per pooling window, counting only windows whose runner-up is
    positive: ReLU-clamped zeros tie harmlessly because they cannot move
    under a small perturbation."""
    c, l = pooled_input.shape
    lo = l // region
    blocks = pooled_input[:, :lo * region].reshape(c, lo, region)
    top2 = np.sort(blocks, axis=2)[:, :, -2:]
    gaps = top2[:, :, 1] - top2[:, :, 0]
    live = top2[:, :, 0] > 0.0
    return float(np.min(gaps[live])) if np.any(live) else np.inf


def _relu_margin(model: CompositeModel) -> float:
    """Smallest |pre-activation| over all cached ReLU layers plus the
    smallest live pooling top-2 gap, from the caches of one forward pass."""
    margin = np.inf
    for conv in (model.afl.conv1, model.afl.conv2):
        for _, z in conv._cache:
            margin = min(margin, float(np.min(np.abs(z))))
    for _, z in model.afl.conv2._cache:
        margin = min(margin, _live_pool_gap(np.maximum(z, 0.0), model.arch.pool_region))
    for fc in (model.afl.fc, model.fc1):
        for _, z in fc._cache:
            margin = min(margin, float(np.min(np.abs(z))))
    return margin


def check_end_to_end(rng: Rng, instances: int = 20) -> float:
    """Tiny composite model, dropout in eval mode, cross-entropy probe; checks
    every parameter gradient and the input gradient."""
    worst = 0.0
    done = 0
    while done < instances:
        model = CompositeModel(TINY, dropout_rate=0.5, rng=rng)
        x = rng.normal((TINY.channels, TINY.composite_len), 0.8)
        y = rng.integer(TINY.classes)

        model.forward(x)
        margin = _relu_margin(model)
        model.clear_caches()
        if margin < KINK_MARGIN:
            continue

        model.zero_grad()
        _, d_input = model.loss_and_grad(x, y, train=False)

        def probe():
            probs, _ = model.forward(x)
            model.clear_caches()
            return -float(np.log(max(probs[y], 1e-300)))

        analytic = dict(model.grads())
        analytic["input"] = d_input
        arrays = dict(model.parameters())
        arrays["input"] = x
        worst = max(worst, _check_against_fd(analytic, arrays, probe))
        done += 1
    return worst


def run_suite(seed: int = 0, instances: int = 20,
              layer_overrides: dict | None = None) -> dict[str, float]:
    """Worst relative error per layer kind plus the end-to-end composite
    check, in a fixed reporting order."""
    overrides = layer_overrides or {}
    rng = Rng(seed)
    results = {}
    results["FC"] = check_fc(rng, instances, overrides.get("FC", Fc))
    results["Conv1D"] = check_conv(rng, instances, overrides.get("Conv1D", Conv1d))
    results["MaxPool"] = check_maxpool(rng, instances, overrides.get("MaxPool", MaxPool1d))
    results["LSTM"] = check_lstm(rng, instances, overrides.get("LSTM", Lstm))
    results["Softmax"] = check_softmax(rng, instances)
    results["Dropout"] = check_dropout(rng, instances, overrides.get("Dropout", Dropout))
    results["end-to-end"] = check_end_to_end(rng, instances)
    return results


def suite_passes(results: dict[str, float], tol: float = TOLERANCE) -> bool:
    return all(v < tol for v in results.values())
