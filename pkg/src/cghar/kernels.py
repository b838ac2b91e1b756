"""Hot numeric kernels: valid 1-D cross-correlation and max-pooling.

Two interchangeable implementations of each kernel: numba @njit loops and a
pure-numpy vectorized fallback. The active backend is chosen once at import
from the CGH_BACKEND environment variable:

    CGH_BACKEND=auto   numba when importable, numpy otherwise (default)
    CGH_BACKEND=numba  require numba, fail if unavailable
    CGH_BACKEND=numpy  force the vectorized fallback

The two backends agree to float64 round-off (they may differ in the last few
ulps because summation order differs); benchmarks/bench_backends.py compares
their speed. Kernels are single-threaded on purpose: parallel reductions
would reorder float accumulation and break bit-level reproducibility.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


# ---------------------------------------------------------------------------
# numpy implementations


def _conv1d_forward_np(x, kernels, biases):
    # x: [C, L], kernels: [K, C, W], biases: [K] -> [K, L-W+1]
    win = sliding_window_view(x, kernels.shape[2], axis=1)  # [C, Lo, W]
    return np.einsum("kcw,clw->kl", kernels, win) + biases[:, None]


def _conv1d_grad_input_np(g, kernels):
    # g: [K, Lo], kernels: [K, C, W] -> [C, L]
    w = kernels.shape[2]
    gp = np.pad(g, ((0, 0), (w - 1, w - 1)))
    win = sliding_window_view(gp, w, axis=1)  # [K, L, W]
    return np.einsum("kcw,klw->cl", kernels[:, :, ::-1], win)


def _conv1d_grad_kernels_np(g, x):
    # g: [K, Lo], x: [C, L] -> [K, C, W] with W = L - Lo + 1
    lo = g.shape[1]
    win = sliding_window_view(x, lo, axis=1)  # [C, W, Lo]
    return np.einsum("kl,cwl->kcw", g, win)


def _maxpool_forward_np(x, region):
    # x: [C, L] -> ([C, L//region], argmax sample index per pooled value)
    c, l = x.shape
    lo = l // region
    blocks = x[:, : lo * region].reshape(c, lo, region)
    inner = np.argmax(blocks, axis=2)  # first occurrence on ties
    out = np.take_along_axis(blocks, inner[:, :, None], axis=2)[:, :, 0]
    src = inner + np.arange(lo)[None, :] * region
    return np.ascontiguousarray(out), src.astype(np.int64)


def _maxpool_backward_np(g, src, length):
    # routes each pooled gradient to its window's argmax sample
    c, lo = g.shape
    dx = np.zeros((c, length))
    rows = np.repeat(np.arange(c), lo)
    dx[rows, src.ravel()] = g.ravel()
    return dx


# ---------------------------------------------------------------------------
# numba implementations (same contracts, explicit loops)


def _conv1d_forward_loop(x, kernels, biases):
    k_n, c_n, w_n = kernels.shape
    lo = x.shape[1] - w_n + 1
    out = np.empty((k_n, lo))
    for k in range(k_n):
        for i in range(lo):
            acc = biases[k]
            for c in range(c_n):
                for w in range(w_n):
                    acc += kernels[k, c, w] * x[c, i + w]
            out[k, i] = acc
    return out


def _conv1d_grad_input_loop(g, kernels):
    k_n, c_n, w_n = kernels.shape
    lo = g.shape[1]
    length = lo + w_n - 1
    dx = np.zeros((c_n, length))
    for k in range(k_n):
        for i in range(lo):
            gv = g[k, i]
            for c in range(c_n):
                for w in range(w_n):
                    dx[c, i + w] += kernels[k, c, w] * gv
    return dx


def _conv1d_grad_kernels_loop(g, x):
    k_n, lo = g.shape
    c_n = x.shape[0]
    w_n = x.shape[1] - lo + 1
    dk = np.zeros((k_n, c_n, w_n))
    for k in range(k_n):
        for i in range(lo):
            gv = g[k, i]
            for c in range(c_n):
                for w in range(w_n):
                    dk[k, c, w] += gv * x[c, i + w]
    return dk


def _maxpool_forward_loop(x, region):
    c_n, length = x.shape
    lo = length // region
    out = np.empty((c_n, lo))
    src = np.empty((c_n, lo), dtype=np.int64)
    for c in range(c_n):
        for i in range(lo):
            base = i * region
            best = x[c, base]
            best_j = base
            for j in range(base + 1, base + region):
                if x[c, j] > best:  # strict: first maximum wins ties
                    best = x[c, j]
                    best_j = j
            out[c, i] = best
            src[c, i] = best_j
    return out, src


def _maxpool_backward_loop(g, src, length):
    c_n, lo = g.shape
    dx = np.zeros((c_n, length))
    for c in range(c_n):
        for i in range(lo):
            dx[c, src[c, i]] = g[c, i]
    return dx


_NUMPY_IMPLS = {
    "conv1d_forward": _conv1d_forward_np,
    "conv1d_grad_input": _conv1d_grad_input_np,
    "conv1d_grad_kernels": _conv1d_grad_kernels_np,
    "maxpool_forward": _maxpool_forward_np,
    "maxpool_backward": _maxpool_backward_np,
}

if HAS_NUMBA:
    _jit = njit(cache=True, nogil=True)
    _NUMBA_IMPLS = {
        "conv1d_forward": _jit(_conv1d_forward_loop),
        "conv1d_grad_input": _jit(_conv1d_grad_input_loop),
        "conv1d_grad_kernels": _jit(_conv1d_grad_kernels_loop),
        "maxpool_forward": _jit(_maxpool_forward_loop),
        "maxpool_backward": _jit(_maxpool_backward_loop),
    }
else:
    _NUMBA_IMPLS = None


def get_impls(name: str) -> dict:
    """Implementation table for an explicitly named backend."""
    if name == "numpy":
        return _NUMPY_IMPLS
    if name == "numba":
        if _NUMBA_IMPLS is None:
            raise ArgumentError("numba backend requested but numba is not importable")
        return _NUMBA_IMPLS
    raise ArgumentError(f"unknown backend {name!r}: choose numba, numpy, or auto")


def _select_backend() -> str:
    name = os.environ.get("CGH_BACKEND", "auto").strip().lower()
    if name not in ("auto", "numba", "numpy"):
        raise ArgumentError(f"CGH_BACKEND={name!r}: choose numba, numpy, or auto")
    if name == "auto":
        return "numba" if HAS_NUMBA else "numpy"
    return name


BACKEND = _select_backend()
_ACTIVE = get_impls(BACKEND)

conv1d_forward = _ACTIVE["conv1d_forward"]
conv1d_grad_input = _ACTIVE["conv1d_grad_input"]
conv1d_grad_kernels = _ACTIVE["conv1d_grad_kernels"]
maxpool_forward = _ACTIVE["maxpool_forward"]
maxpool_backward = _ACTIVE["maxpool_backward"]


def backend_name() -> str:
    return BACKEND
