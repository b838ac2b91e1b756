"""Differentiable layers: FC, Conv1D, MaxPool, LSTM, softmax, dropout.

Each layer caches forward intermediates on a stack so a shared layer can be
applied several times per pass (the atomic feature subgraph runs five times
per composite window); backward calls must then come in exact reverse call
order, which is how reverse-mode traversal visits them anyway. Parameter
gradients accumulate into `grads` until `zero_grad`.
"""

from __future__ import annotations

import logging

import numpy as np

from . import kernels
from .errors import ArgumentError, NumericError, ShapeError, StateError
from .tensor import Rng, sigmoid

log = logging.getLogger(__name__)


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -limit, limit)


def relu(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0.0)


class Layer:
    """Base unit: parameters, accumulated gradients, and a cache stack."""

    kind = "?"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

        self._cache = []

    def _init_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0

    def _push(self, cache):
        self._cache.append(cache)

    def _pop(self):
        if not self._cache:
            raise StateError(f"{self.kind}: backward called without a matching forward")
        return self._cache.pop()

    def forward(self, x, train: bool = False, rng: Rng | None = None):
        raise NotImplementedError

    def backward(self, upstream):
        raise NotImplementedError


class Fc(Layer):
    """Fully connected layer: activation(W x + b), activation relu|identity."""

    kind = "FC"

    def __init__(self, in_size: int, out_size: int, activation: str = "relu",
                 rng: Rng | None = None):
        super().__init__()
        if activation not in ("relu", "identity"):
            raise ArgumentError(f"FC activation must be relu or identity, got {activation!r}")
        self.in_size = in_size
        self.out_size = out_size
        self.activation = activation
        if rng is None:
            w = np.zeros((out_size, in_size))
        else:
            w = glorot_uniform(rng, in_size, out_size, (out_size, in_size))
        self.params = {"W": w, "b": np.zeros(out_size)}
        self._init_grads()

    def forward(self, x, train=False, rng=None):
        if x.shape != (self.in_size,):
            raise ShapeError(f"FC: expected input shape ({self.in_size},), got {x.shape}")
        z = self.params["W"] @ x + self.params["b"]
        y = relu(z) if self.activation == "relu" else z
        self._push((x, z))
        return y

    def backward(self, upstream):
        x, z = self._pop()
        gz = upstream * (z > 0.0) if self.activation == "relu" else upstream
        self.grads["W"] += np.outer(gz, x)
        self.grads["b"] += gz
        return self.params["W"].T @ gz


class Conv1d(Layer):
    """Valid 1-D cross-correlation over [channels, length], bias, then ReLU.

    Stride 1, no padding: output length is L - width + 1. The same kernels
    slide over every temporal position.
    """

    kind = "Conv1D"

    def __init__(self, in_channels: int, n_kernels: int, width: int,
                 rng: Rng | None = None):
        super().__init__()
        if width < 1:
            raise ArgumentError(f"Conv1D: kernel width must be >= 1, got {width}")
        self.in_channels = in_channels
        self.n_kernels = n_kernels
        self.width = width
        shape = (n_kernels, in_channels, width)
        if rng is None:
            k = np.zeros(shape)
        else:
            k = glorot_uniform(rng, in_channels * width, n_kernels * width, shape)
        self.params = {"kernels": k, "biases": np.zeros(n_kernels)}
        self._init_grads()

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[0] != self.in_channels:
            raise ShapeError(
                f"Conv1D: expected [{self.in_channels}, L] input, got {x.shape}")
        if x.shape[1] < self.width:
            raise ShapeError(
                f"Conv1D: signal too short: length {x.shape[1]} < width {self.width}")
        z = kernels.conv1d_forward(x, self.params["kernels"], self.params["biases"])
        self._push((x, z))
        return relu(z)

    def backward(self, upstream):
        x, z = self._pop()
        gz = np.ascontiguousarray(upstream * (z > 0.0))
        self.grads["kernels"] += kernels.conv1d_grad_kernels(gz, x)
        self.grads["biases"] += gz.sum(axis=1)
        return kernels.conv1d_grad_input(gz, self.params["kernels"])


class MaxPool1d(Layer):
    """Per-channel max over non-overlapping windows; remainder is dropped.

    Backward routes each pooled gradient to its window's argmax sample, first
    occurrence on ties, so gradient mass is conserved exactly.
    """

    kind = "MaxPool"

    def __init__(self, region: int = 4):
        super().__init__()
        if region < 1:
            raise ArgumentError(f"MaxPool: region must be >= 1, got {region}")
        self.region = region

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2:
            raise ShapeError(f"MaxPool: expected [C, L] input, got {x.shape}")
        if x.shape[1] < self.region:
            raise ShapeError(
                f"MaxPool: signal too short: length {x.shape[1]} < region {self.region}")
        y, src = kernels.maxpool_forward(np.ascontiguousarray(x), self.region)
        self._push((src, x.shape[1]))
        return y

    def backward(self, upstream):
        src, length = self._pop()
        return kernels.maxpool_backward(np.ascontiguousarray(upstream), src, length)


def lstm_step(params: dict[str, np.ndarray], x_t: np.ndarray,
              h_prev: np.ndarray, c_prev: np.ndarray):
    """One gated update: returns (h_t, c_t, gate cache).

    i, f, o are sigmoid gates, g the tanh candidate; c_t = f*c_prev + i*g and
    h_t = o*tanh(c_t).
    """
    pre = {}
    gates = {}
    for name in ("i", "f", "o", "g"):
        a = params["W_" + name] @ x_t + params["U_" + name] @ h_prev + params["b_" + name]
        pre[name] = a
        gates[name] = np.tanh(a) if name == "g" else sigmoid(a)
    c_t = gates["f"] * c_prev + gates["i"] * gates["g"]
    h_t = gates["o"] * np.tanh(c_t)
    return h_t, c_t, (x_t, h_prev, c_prev, gates, c_t)


class Lstm(Layer):
    """LSTM over a fixed-length input sequence, one vector per time step.

    forward consumes the whole sequence and returns every hidden state; the
    final one is the sequence representation. backward takes the gradient on
    that final state and unrolls through all steps, returning per-step input
    gradients.
    """

    kind = "LSTM"

    def __init__(self, in_size: int, hidden_size: int, rng: Rng | None = None,
                 forget_bias: float = 1.0):
        super().__init__()
        self.in_size = in_size
        self.hidden_size = hidden_size
        p = {}
        for name in ("i", "f", "o", "g"):
            if rng is None:
                p["W_" + name] = np.zeros((hidden_size, in_size))
                p["U_" + name] = np.zeros((hidden_size, hidden_size))
            else:
                p["W_" + name] = glorot_uniform(rng, in_size, hidden_size,
                                                (hidden_size, in_size))
                p["U_" + name] = glorot_uniform(rng, hidden_size, hidden_size,
                                                (hidden_size, hidden_size))
            p["b_" + name] = np.zeros(hidden_size)
        # positive forget bias keeps early memory open during training
        p["b_f"] = p["b_f"] + forget_bias
        self.params = p
        self._init_grads()

    def forward(self, xs, train=False, rng=None):
        h = np.zeros(self.hidden_size)
        c = np.zeros(self.hidden_size)
        steps = []
        hs = []
        for x_t in xs:
            if x_t.shape != (self.in_size,):
                raise ShapeError(
                    f"LSTM: expected step input shape ({self.in_size},), got {x_t.shape}")
            h, c, cache = lstm_step(self.params, x_t, h, c)
            steps.append(cache)
            hs.append(h)
        self._push(steps)
        return hs

    def backward(self, upstream):
        steps = self._pop()
        dh = upstream
        dc = np.zeros(self.hidden_size)
        dxs = [None] * len(steps)
        for t in range(len(steps) - 1, -1, -1):
            x_t, h_prev, c_prev, gates, c_t = steps[t]
            tc = np.tanh(c_t)
            do = dh * tc
            dc = dc + dh * gates["o"] * (1.0 - tc * tc)
            da = {
                "i": dc * gates["g"] * gates["i"] * (1.0 - gates["i"]),
                "f": dc * c_prev * gates["f"] * (1.0 - gates["f"]),
                "o": do * gates["o"] * (1.0 - gates["o"]),
                "g": dc * gates["i"] * (1.0 - gates["g"] * gates["g"]),
            }
            dx = np.zeros(self.in_size)
            dh = np.zeros(self.hidden_size)
            for name in ("i", "f", "o", "g"):
                self.grads["W_" + name] += np.outer(da[name], x_t)
                self.grads["U_" + name] += np.outer(da[name], h_prev)
                self.grads["b_" + name] += da[name]
                dx += self.params["W_" + name].T @ da[name]
                dh += self.params["U_" + name].T @ da[name]
            dc = dc * gates["f"]
            dxs[t] = dx
        return dxs


class Dropout(Layer):
    """Inverted dropout: train mode zeroes each element with probability
    `rate` and scales survivors by 1/(1-rate); eval mode is the identity."""

    kind = "Dropout"

    def __init__(self, rate: float = 0.5):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ArgumentError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._push(None)
            return x
        if rng is None:
            raise StateError("Dropout: train-mode forward needs an Rng")
        keep = (rng.uniform(x.shape) >= self.rate) / (1.0 - self.rate)
        self._push(keep)
        return x * keep

    def backward(self, upstream):
        keep = self._pop()
        if keep is None:
            return upstream
        return upstream * keep


def softmax(z: np.ndarray) -> np.ndarray:
    """Probabilities e^{z_i} / sum_j e^{z_j}, computed with max subtraction."""
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax: input contains non-finite values")
    e = np.exp(z - np.max(z))
    return e / e.sum()


def cross_entropy(p: np.ndarray, y: int) -> float:
    """Negative log probability of the true class index."""
    if not 0 <= y < p.shape[0]:
        raise ArgumentError(f"cross_entropy: class {y} out of range for {p.shape[0]} classes")
    py = p[y]
    if py <= 0.0:
        log.warning("cross_entropy: zero probability for true class %d, clamping", y)
        py = 1e-300
    return float(-np.log(py))


def softmax_cross_entropy(z: np.ndarray, y: int):
    """Fused loss: returns (loss, probs, dloss/dz) with dz = probs - onehot(y)."""
    p = softmax(z)
    loss = cross_entropy(p, y)
    dz = p.copy()
    dz[y] -= 1.0
    return loss, p, dz
