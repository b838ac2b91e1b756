"""Concrete model graphs for composite activity detection.

Three architectures share the same layer stack and training machinery:

* CompositeModel: shared atomic feature subgraph applied to five consecutive
  3-second windows, an LSTM that composes them in temporal order, and a
  FC1 -> FC2 -> softmax classifier on the final recurrent state.
* TrimmedModel: the same convolutional front end over the whole 15-second
  window in one pass, with no recurrent composition.
* LogisticRegressionModel: one identity-activation FC plus softmax on the
  flattened window.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ArgumentError, CheckpointError, ShapeError
from .layers import Conv1d, Dropout, Fc, Lstm, MaxPool1d, softmax, softmax_cross_entropy
from .tensor import Rng

# Parameter count of the original full-scale parametrization, kept for the
# informational diff printed by the training command.
REFERENCE_PARAM_COUNT = 278_696

CHECKPOINT_MAGIC = b"CGH1"


@dataclass(frozen=True)
class ArchConfig:
    """Architecture hyperparameters; defaults are the full-scale values."""

    conv1_kernels: int = 8
    conv2_kernels: int = 32
    kernel_width: int = 5
    pool_region: int = 4
    feature_dim: int = 128   # atomic feature vector size d
    hidden_size: int = 128   # LSTM state size
    fc1_size: int = 128
    classes: int = 8
    channels: int = 3
    atomic_len: int = 60     # 3 s at 20 Hz
    atomic_count: int = 5    # atomic windows per composite window

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ArgumentError(f"arch.{f.name} must be >= 1")
        if self.atomic_len <= 2 * (self.kernel_width - 1):
            raise ArgumentError("arch: atomic window shorter than two convolutions")

    @property
    def composite_len(self) -> int:
        return self.atomic_len * self.atomic_count

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ArgumentError(f"arch: unknown keys {sorted(unknown)}")
        return cls(**d)


TINY = ArchConfig(conv1_kernels=2, conv2_kernels=2, kernel_width=3,
                  feature_dim=8, hidden_size=4, fc1_size=4)


def _conv_stack_out_len(arch: ArchConfig, input_len: int) -> int:
    after = input_len - 2 * (arch.kernel_width - 1)
    if after < arch.pool_region:
        raise ArgumentError("arch: convolved signal shorter than the pool region")
    return after // arch.pool_region


class AtomicFeatureGraph:
    """Shared subgraph mapping one atomic window to its feature vector:
    conv -> conv -> maxpool -> FC with ReLU, dropout on the FC input."""

    def __init__(self, arch: ArchConfig, dropout_rate: float, rng: Rng | None):
        self.arch = arch
        self.conv1 = Conv1d(arch.channels, arch.conv1_kernels, arch.kernel_width, rng)
        self.conv2 = Conv1d(arch.conv1_kernels, arch.conv2_kernels, arch.kernel_width, rng)
        self.pool = MaxPool1d(arch.pool_region)
        self.pooled_len = _conv_stack_out_len(arch, arch.atomic_len)
        self.drop = Dropout(dropout_rate)
        self.fc = Fc(arch.conv2_kernels * self.pooled_len, arch.feature_dim, "relu", rng)

    def forward(self, window: np.ndarray, train=False, rng=None) -> np.ndarray:
        expected = (self.arch.channels, self.arch.atomic_len)
        if window.shape != expected:
            raise ShapeError(f"atomic window: expected shape {expected}, got {window.shape}")
        h = self.conv1.forward(window, train, rng)
        h = self.conv2.forward(h, train, rng)
        p = self.pool.forward(h, train, rng)
        u = self.drop.forward(p.reshape(-1), train, rng)
        return self.fc.forward(u, train, rng)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        g = self.fc.backward(upstream)
        g = self.drop.backward(g)
        g = g.reshape(self.arch.conv2_kernels, self.pooled_len)
        g = self.pool.backward(g)
        g = self.conv2.backward(g)
        return self.conv1.backward(g)

    def named_layers(self):
        return [("conv1", self.conv1), ("conv2", self.conv2), ("fc", self.fc)]

    def layers(self):
        return [self.conv1, self.conv2, self.pool, self.drop, self.fc]


class GraphModel:
    """Shared machinery: named parameters, gradients, prediction."""

    kind = "?"

    def __init__(self, arch: ArchConfig, dropout_rate: float):
        self.arch = arch
        self.dropout_rate = dropout_rate

    # subclasses provide named_layers() and layers()

    def parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for prefix, layer in self.named_layers():
            for name, arr in layer.params.items():
                out[f"{prefix}.{name}"] = arr
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for prefix, layer in self.named_layers():
            for name, arr in layer.grads.items():
                out[f"{prefix}.{name}"] = arr
        return out

    def weight_keys(self) -> list[str]:
        """Parameters subject to the L2 penalty: inner-product weights and
        convolution kernels, never biases."""
        keys = []
        for name in self.parameters():
            leaf = name.rsplit(".", 1)[1]
            if leaf == "kernels" or leaf == "W" or leaf.startswith("W_") or leaf.startswith("U_"):
                keys.append(name)
        return keys

    def zero_grad(self):
        for _, layer in self.named_layers():
            layer.zero_grad()

    def clear_caches(self):
        for layer in self.layers():
            layer._cache.clear()

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def _backward(self, dz):
        raise NotImplementedError

    def loss_and_grad(self, x, y: int, train=False, rng=None):
        """Cross-entropy loss at label y; accumulates parameter gradients and
        returns (loss, gradient with respect to the input)."""
        probs, _ = self.forward(x, train, rng)
        # recover logits gradient directly from probabilities: p - onehot(y)
        if not 0 <= y < self.arch.classes:
            raise ArgumentError(f"label {y} out of range for {self.arch.classes} classes")
        loss = -float(np.log(max(probs[y], 1e-300)))
        dz = probs.copy()
        dz[y] -= 1.0
        return loss, self._backward(dz)

    def predict(self, x) -> int:
        probs, _ = self.forward(x)
        return int(np.argmax(probs))  # ties resolve to the lowest class index


class CompositeModel(GraphModel):
    """Full model: shared AFL over five windows, LSTM composition, classifier."""

    kind = "full"

    def __init__(self, arch: ArchConfig, dropout_rate: float = 0.5,
                 rng: Rng | None = None):
        super().__init__(arch, dropout_rate)
        self.afl = AtomicFeatureGraph(arch, dropout_rate, rng)
        self.drop_x = Dropout(dropout_rate)
        self.lstm = Lstm(arch.feature_dim, arch.hidden_size, rng)
        self.drop_fc1 = Dropout(dropout_rate)
        self.fc1 = Fc(arch.hidden_size, arch.fc1_size, "relu", rng)
        self.drop_fc2 = Dropout(dropout_rate)
        self.fc2 = Fc(arch.fc1_size, arch.classes, "identity", rng)

    def _split(self, sample: np.ndarray) -> list[np.ndarray]:
        n = self.arch.atomic_len
        return [np.ascontiguousarray(sample[:, i * n:(i + 1) * n])
                for i in range(self.arch.atomic_count)]

    def forward(self, sample, train=False, rng=None):
        expected = (self.arch.channels, self.arch.composite_len)
        if sample.shape != expected:
            raise ShapeError(f"composite window: expected shape {expected}, got {sample.shape}")
        xs = []
        for window in self._split(sample):
            x = self.afl.forward(window, train, rng)
            xs.append(self.drop_x.forward(x, train, rng))
        states = self.lstm.forward(xs, train, rng)
        u = self.drop_fc1.forward(states[-1], train, rng)
        u = self.fc1.forward(u, train, rng)
        u = self.drop_fc2.forward(u, train, rng)
        z = self.fc2.forward(u, train, rng)
        return softmax(z), states

    def _backward(self, dz):
        g = self.fc2.backward(dz)
        g = self.drop_fc2.backward(g)
        g = self.fc1.backward(g)
        g = self.drop_fc1.backward(g)
        dxs = self.lstm.backward(g)
        n = self.arch.atomic_len
        d_sample = np.empty((self.arch.channels, self.arch.composite_len))
        for t in range(self.arch.atomic_count - 1, -1, -1):
            dx = self.drop_x.backward(dxs[t])
            d_sample[:, t * n:(t + 1) * n] = self.afl.backward(dx)
        return d_sample

    def named_layers(self):
        out = [(f"afl.{n}", l) for n, l in self.afl.named_layers()]
        out += [("lstm", self.lstm), ("fc1", self.fc1), ("fc2", self.fc2)]
        return out

    def layers(self):
        return self.afl.layers() + [self.drop_x, self.lstm,
                                    self.drop_fc1, self.fc1,
                                    self.drop_fc2, self.fc2]


class TrimmedModel(GraphModel):
    """Ablation: the whole 15-second window in one pass, no recurrence."""

    kind = "trimmed"

    def __init__(self, arch: ArchConfig, dropout_rate: float = 0.5,
                 rng: Rng | None = None):
        super().__init__(arch, dropout_rate)
        self.conv1 = Conv1d(arch.channels, arch.conv1_kernels, arch.kernel_width, rng)
        self.conv2 = Conv1d(arch.conv1_kernels, arch.conv2_kernels, arch.kernel_width, rng)
        self.pool = MaxPool1d(arch.pool_region)
        self.pooled_len = _conv_stack_out_len(arch, arch.composite_len)
        self.drop_fc1 = Dropout(dropout_rate)
        self.fc1 = Fc(arch.conv2_kernels * self.pooled_len, arch.fc1_size, "relu", rng)
        self.drop_fc2 = Dropout(dropout_rate)
        self.fc2 = Fc(arch.fc1_size, arch.classes, "identity", rng)

    def forward(self, sample, train=False, rng=None):
        expected = (self.arch.channels, self.arch.composite_len)
        if sample.shape != expected:
            raise ShapeError(f"composite window: expected shape {expected}, got {sample.shape}")
        h = self.conv1.forward(sample, train, rng)
        h = self.conv2.forward(h, train, rng)
        p = self.pool.forward(h, train, rng)
        u = self.drop_fc1.forward(p.reshape(-1), train, rng)
        u = self.fc1.forward(u, train, rng)
        u = self.drop_fc2.forward(u, train, rng)
        z = self.fc2.forward(u, train, rng)
        return softmax(z), None

    def _backward(self, dz):
        g = self.fc2.backward(dz)
        g = self.drop_fc2.backward(g)
        g = self.fc1.backward(g)
        g = self.drop_fc1.backward(g)
        g = g.reshape(self.arch.conv2_kernels, self.pooled_len)
        g = self.pool.backward(g)
        g = self.conv2.backward(g)
        return self.conv1.backward(g)

    def named_layers(self):
        return [("conv1", self.conv1), ("conv2", self.conv2),
                ("fc1", self.fc1), ("fc2", self.fc2)]

    def layers(self):
        return [self.conv1, self.conv2, self.pool,
                self.drop_fc1, self.fc1, self.drop_fc2, self.fc2]


class LogisticRegressionModel(GraphModel):
    """One identity-activation FC plus softmax on the flattened window."""

    kind = "logreg"

    def __init__(self, arch: ArchConfig, dropout_rate: float = 0.0,
                 rng: Rng | None = None):
        super().__init__(arch, dropout_rate)
        self.input_dim = arch.channels * arch.composite_len
        self.drop = Dropout(dropout_rate)
        self.fc = Fc(self.input_dim, arch.classes, "identity", rng)

    def forward(self, sample, train=False, rng=None):
        expected = (self.arch.channels, self.arch.composite_len)
        if sample.shape != expected:
            raise ShapeError(f"composite window: expected shape {expected}, got {sample.shape}")
        u = self.drop.forward(sample.reshape(-1), train, rng)
        z = self.fc.forward(u, train, rng)
        return softmax(z), None

    def _backward(self, dz):
        g = self.fc.backward(dz)
        g = self.drop.backward(g)
        return g.reshape(self.arch.channels, self.arch.composite_len)

    def named_layers(self):
        return [("fc", self.fc)]

    def layers(self):
        return [self.drop, self.fc]


MODEL_KINDS = ("full", "trimmed", "logreg")


def build_model(kind: str, arch: ArchConfig, dropout_rate: float,
                rng: Rng | None) -> GraphModel:
    if kind == "full":
        return CompositeModel(arch, dropout_rate, rng)
    if kind == "trimmed":
        return TrimmedModel(arch, dropout_rate, rng)
    if kind == "logreg":
        return LogisticRegressionModel(arch, dropout_rate, rng)
    raise ArgumentError(f"unknown model kind {kind!r}: choose from {MODEL_KINDS}")


def count_parameters(model: GraphModel) -> int:
    return int(sum(arr.size for arr in model.parameters().values()))


def memory_footprint_bits(model: GraphModel) -> int:
    """Storage cost at 32-bit floats: exactly 32 bits per parameter."""
    return 32 * count_parameters(model)


def footprint_bits_for_count(n_params: int) -> int:
    return 32 * int(n_params)


def architecture_json(model: GraphModel) -> str:
    """Human-readable architecture descriptor."""
    desc = {
        "kind": model.kind,
        "arch": model.arch.to_dict(),
        "dropout_rate": model.dropout_rate,
        "params": [{"name": k, "shape": list(v.shape)}
                   for k, v in model.parameters().items()],
        "parameter_count": count_parameters(model),
        "memory_footprint_bits": memory_footprint_bits(model),
    }
    return json.dumps(desc, indent=2, sort_keys=True)


def save_checkpoint(model: GraphModel, path, meta: dict | None = None):
    """Versioned binary checkpoint: magic "CGH1", a length-prefixed JSON
    descriptor, then little-endian float64 parameter blocks in declaration
    order. Round trips are bit-exact."""
    params = model.parameters()
    descriptor = {
        "kind": model.kind,
        "arch": model.arch.to_dict(),
        "dropout_rate": model.dropout_rate,
        "meta": meta or {},
        "params": [[name, list(arr.shape)] for name, arr in params.items()],
    }
    blob = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"corrupt checkpoint: truncated while reading {what}")
    return data


def load_checkpoint(path):
    """Load a checkpoint; returns (model, meta)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic bytes")
        if magic[:3] != CHECKPOINT_MAGIC[:3]:
            raise CheckpointError(f"not a checkpoint file: bad magic {magic!r}")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(
                f"unsupported checkpoint version {magic[3:]!r}; "
                f"this build reads version {CHECKPOINT_MAGIC[3:]!r}")
        (blob_len,) = struct.unpack("<Q", _read_exact(fh, 8, "descriptor length"))
        try:
            descriptor = json.loads(_read_exact(fh, blob_len, "descriptor"))
            kind = descriptor["kind"]
            arch = ArchConfig.from_dict(descriptor["arch"])
            dropout_rate = descriptor["dropout_rate"]
            meta = descriptor["meta"]
            param_list = descriptor["params"]
        except (KeyError, ValueError, TypeError) as exc:
            raise CheckpointError(f"corrupt checkpoint descriptor: {exc}") from exc
        model = build_model(kind, arch, dropout_rate, rng=None)
        params = model.parameters()
        if [name for name, _ in param_list] != list(params.keys()):
            raise CheckpointError("corrupt checkpoint: parameter list does not "
                                  "match the declared architecture")
        for name, shape in param_list:
            arr = params[name]
            if list(arr.shape) != list(shape):
                raise CheckpointError(f"corrupt checkpoint: shape {shape} for "
                                      f"{name!r}, expected {list(arr.shape)}")
            raw = _read_exact(fh, arr.size * 8, f"parameter {name!r}")
            arr[...] = np.frombuffer(raw, dtype="<f8").reshape(arr.shape)
        if fh.read(1):
            raise CheckpointError("corrupt checkpoint: trailing bytes after parameters")
    return model, meta
