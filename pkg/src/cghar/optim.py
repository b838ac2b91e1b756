"""Parameter updates (plain gradient descent and Adam), the L2 weight
penalty, and the epoch-based training loop with fixed early stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, NumericError, ShapeError
from .tensor import Rng


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             alpha: float) -> dict[str, np.ndarray]:
    """In-place update p <- p - alpha * g for every parameter."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"sgd_step: gradient shape {g.shape} != parameter "
                             f"shape {p.shape} for {name!r}")
        p -= alpha * g
    return params


class Adam:
    """Adam state: per-parameter first/second moments and the step counter.

    Update uses the published defaults and bias correction:
    p <- p - alpha * m_hat / (sqrt(v_hat) + eps).
    """

    def __init__(self, params: dict[str, np.ndarray], alpha: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"adam_step: gradient shape {g.shape} != parameter "
                                 f"shape {p.shape} for {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.alpha * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params


def adam_step(state: Adam, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return state.step(params, grads)


def l2_penalty(weights: list[np.ndarray], gamma: float):
    """Penalty gamma * sum(W^2) over the given weight tensors.

    Returns (penalty, per-tensor gradient contributions 2*gamma*W). Biases
    are excluded by the caller: only inner-product weights are penalized.
    """
    if gamma < 0:
        raise ArgumentError(f"l2_penalty: gamma must be >= 0, got {gamma}")
    penalty = gamma * float(sum(np.sum(w * w) for w in weights))
    return penalty, [2.0 * gamma * w for w in weights]


@dataclass
class TrainConfig:
    l2_strength: float = 0.01
    dropout_rate: float = 0.5
    max_iterations: int = 2  # epochs: full passes over the training set
    batch_size: int = 32
    adam_alpha: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.l2_strength < 0:
            raise ArgumentError(f"l2_strength must be >= 0, got {self.l2_strength}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ArgumentError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.max_iterations < 1:
            raise ArgumentError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TraceRow:
    epoch: int
    batch: int
    loss: float
    l2_penalty: float


def trace_to_csv(rows: list[TraceRow], path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,batch,loss,l2_penalty\n")
        for r in rows:
            fh.write(f"{r.epoch},{r.batch},{r.loss!r},{r.l2_penalty!r}\n")


def train(model, dataset, cfg: TrainConfig, rng: Rng) -> list[TraceRow]:
    """Train `model` in place on (input, label) pairs; returns the loss trace.

    Runs exactly cfg.max_iterations full passes of Adam on mean cross-entropy
    plus the L2 penalty, with train-mode dropout. Sample order is reshuffled
    from `rng` each epoch, so the whole run is a pure function of the model's
    initial state, the dataset, the config, and the rng seed.
    """
    if len(dataset) == 0:
        raise ArgumentError("train: dataset is empty")
    n_classes = model.arch.classes
    for _, y in dataset:
        if not 0 <= y < n_classes:
            raise ArgumentError(f"train: label {y} out of range for {n_classes} classes")

    params = model.parameters()
    grads = model.grads()
    weight_keys = model.weight_keys()
    adam = Adam(params, alpha=cfg.adam_alpha)
    rows: list[TraceRow] = []
    n = len(dataset)

    for epoch in range(1, cfg.max_iterations + 1):
        order = rng.permutation(n)
        for batch_idx, start in enumerate(range(0, n, cfg.batch_size)):
            chunk = order[start:start + cfg.batch_size]
            model.zero_grad()
            total = 0.0
            for i in chunk:
                x, y = dataset[int(i)]
                loss, _ = model.loss_and_grad(x, int(y), train=True, rng=rng)
                total += loss
            mean_loss = total / len(chunk)
            if not math.isfinite(mean_loss):
                raise NumericError(
                    f"train: non-finite loss at epoch {epoch}, batch {batch_idx}")
            scale = 1.0 / len(chunk)
            for g in grads.values():
                g *= scale
            penalty, contribs = l2_penalty([params[k] for k in weight_keys],
                                           cfg.l2_strength)
            for key, contrib in zip(weight_keys, contribs):
                grads[key] += contrib
            adam.step(params, grads)
            rows.append(TraceRow(epoch, batch_idx, mean_loss, penalty))
    return rows
