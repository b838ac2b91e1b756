"""Exact t-SNE for projecting recurrent states to 2-D.

O(N^2) computation throughout: the state sets visualized here are a few
hundred points at most, so the exact joint distributions stay testable
against brute-force oracles. Gradient descent on KL(P||Q) uses momentum
(0.5 until the switch iteration, then 0.8) and early exaggeration of P.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import ACTIVITY_NAMES, SampleWindow
from .errors import ArgumentError, NumericError
from .tensor import Rng

CALIBRATION_TOL = 1e-3
MAX_CALIBRATION_STEPS = 100


@dataclass
class EmbeddingJob:
    points: np.ndarray  # [N, D]
    labels: list[int]
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 100.0
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    momentum_switch: int = 250
    exaggeration: float = 4.0
    exaggeration_until: int = 100
    seed: int = 0

    def __post_init__(self):
        n = self.points.shape[0]
        if len(self.labels) != n:
            raise ArgumentError(f"labels ({len(self.labels)}) must match points ({n})")
        if n <= 3 * self.perplexity:
            raise ArgumentError(f"need N > 3 * perplexity: N={n}, "
                                f"perplexity={self.perplexity}")
        if self.iterations < 1:
            raise ArgumentError("iterations must be >= 1")


def _perplexity_of(sq_dists: np.ndarray, beta: float):
    """Perplexity (2^entropy) and conditional distribution at precision beta."""
    logits = -beta * (sq_dists - sq_dists.min())
    p = np.exp(logits)
    total = p.sum()
    if total <= 0:
        raise NumericError("perplexity: conditional distribution underflowed")
    p /= total
    nz = p[p > 0]
    entropy_nats = -float(np.sum(nz * np.log(nz)))
    return math.exp(entropy_nats), p


def perplexity_calibrate(sq_dists: np.ndarray, target: float,
                         tol: float = CALIBRATION_TOL,
                         max_steps: int = MAX_CALIBRATION_STEPS) -> float:
    """Bisection for the bandwidth sigma whose conditional distribution has
    the target perplexity. Returns sigma; raises carrying the achieved
    perplexity when the search cannot converge."""
    if np.any(sq_dists < 0):
        raise ArgumentError("perplexity_calibrate: negative squared distances")
    if target >= sq_dists.shape[0] + 1:
        raise ArgumentError(f"perplexity_calibrate: target {target} must be "
                            f"below N={sq_dists.shape[0] + 1}")
    beta = 1.0
    lo = None
    hi = None
    achieved = math.nan
    for _ in range(max_steps):
        achieved, _ = _perplexity_of(sq_dists, beta)
        if abs(achieved - target) <= tol:
            return math.sqrt(0.5 / beta)
        if achieved > target:  # too flat: sharpen with larger beta
            lo = beta
            beta = beta * 2.0 if hi is None else 0.5 * (beta + hi)
        else:
            hi = beta
            beta = beta * 0.5 if lo is None else 0.5 * (beta + lo)
    raise NumericError(f"perplexity calibration did not converge: achieved "
                       f"{achieved:.6f}, target {target}")


def _squared_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d

def joint_probabilities(points: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized joint P with p_ij = (p_{j|i} + p_{i|j}) / 2N, zero diagonal,
    global sum one."""
    n = points.shape[0]
    d = _squared_distances(points)
    cond = np.zeros((n, n))
    others = np.arange(n)
    for i in range(n):
        mask = others != i
        sigma = perplexity_calibrate(d[i, mask], perplexity)
        beta = 0.5 / (sigma * sigma)
        _, p = _perplexity_of(d[i, mask], beta)
        cond[i, mask] = p
    joint = (cond + cond.T) / (2.0 * n)
    return joint


def _student_t(y: np.ndarray):
    w = 1.0 / (1.0 + _squared_distances(y))
    np.fill_diagonal(w, 0.0)
    q = w / w.sum()
    return np.maximum(q, 1e-12), w


def kl_divergence(p: np.ndarray, y: np.ndarray) -> float:
    q, _ = _student_t(y)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def kl_gradient(p: np.ndarray, y: np.ndarray):
    """Gradient of KL(P||Q) with respect to the embedding coordinates:
    dY_i = 4 sum_j (p_ij - q_ij) (y_i - y_j) / (1 + |y_i - y_j|^2)."""
    q, w = _student_t(y)
    pqw = (p - q) * w
    grad = 4.0 * (np.diag(pqw.sum(axis=1)) @ y - pqw @ y)
    return grad


def tsne_embed(job: EmbeddingJob):
    """Run the embedding; returns (coordinates [N,2], KL trace).

    The trace records KL(P||Q) against the plain (non-exaggerated) P every 50
    iterations; each entry must be finite or the run aborts.
    """
    p = joint_probabilities(np.asarray(job.points, dtype=np.float64), job.perplexity)
    rng = Rng(job.seed)
    y = rng.normal((p.shape[0], 2), 1e-4)
    velocity = np.zeros_like(y)
    trace = []
    for it in range(1, job.iterations + 1):
        p_eff = p * job.exaggeration if it <= job.exaggeration_until else p
        grad = kl_gradient(p_eff, y)
        momentum = (job.momentum_start if it < job.momentum_switch
                    else job.momentum_final)
        velocity = momentum * velocity - job.learning_rate * grad
        y = y + velocity
        y = y - y.mean(axis=0)
        if it % 50 == 0 or it == job.iterations:
            kl = kl_divergence(p, y)
            if not math.isfinite(kl):
                raise NumericError(f"t-SNE diverged: non-finite KL at iteration {it}")
            trace.append((it, kl))
    return y, trace


def standardize(states: np.ndarray) -> np.ndarray:
    """Per-dimension zero mean, unit variance; constant dimensions are left
    centered rather than divided by ~0."""
    mean = states.mean(axis=0)
    std = states.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    return (states - mean) / std

STATE_NAMES = ("s1", "s2", "s3", "s4", "s5")


def export_states(model, windows: list[SampleWindow], which: str, path,
                  perplexity: float = 30.0, iterations: int = 1000,
                  learning_rate: float = 100.0, seed: int = 0):
    """Embed one recurrent state per window and write x,y,label,activity_name
    rows. States are standardized per dimension before embedding."""
    if which not in STATE_NAMES:
        raise ArgumentError(f"unknown state {which!r}: choose from "
                            f"{{{', '.join(STATE_NAMES)}}}")
    if not windows:
        raise ArgumentError("export_states: no windows to embed")
    if model.kind != "full":
        raise ArgumentError(f"model kind {model.kind!r} has no recurrent states; "
                            "state export needs the full composite model")
    index = int(which[1]) - 1
    states = []
    labels = []
    for w in windows:
        _, hs = model.forward(w.readings)
        states.append(hs[index])
        labels.append(w.label)
    points = standardize(np.stack(states))
    job = EmbeddingJob(points=points, labels=labels, perplexity=perplexity,
                       iterations=iterations, learning_rate=learning_rate,
                       seed=seed)
    coords, _ = tsne_embed(job)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("x,y,label,activity_name\n")
        for (x, y), label in zip(coords, labels):
            fh.write(f"{x!r},{y!r},{label},{ACTIVITY_NAMES[label]}\n")
    return coords, labels
