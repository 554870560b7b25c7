"""Deterministic dense math shared by every other module.

All arrays are 2-D ``float64`` numpy arrays; column vectors are ``(n, 1)`` and
a batch of vectors is stored as columns.  Matrix products go through a kernel
with a fixed left-to-right accumulation order (never BLAS), so identical inputs
give bit-identical outputs across runs.

The compiled kernel is used when it imported cleanly; set
``LATTICE_RNN_PURE_PYTHON=1`` to force the numpy fallback.  Both give the same
bits.
"""
from __future__ import annotations

import math
import os

import numpy as np

from . import _fallback

if os.environ.get("LATTICE_RNN_PURE_PYTHON"):
    _kernels = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _kernels = _fallback
        BACKEND = "python"


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def _shape(x) -> str:
    return "x".join(str(s) for s in np.shape(x))


def use_backend(name: str) -> None:
    """Switch kernel backend at runtime (``"compiled"`` or ``"python"``)."""
    global _kernels, BACKEND
    if name == "python":
        _kernels, BACKEND = _fallback, "python"
    elif name == "compiled":
        from . import _kernels as compiled  # type: ignore[attr-defined]

        _kernels, BACKEND = compiled, "compiled"
    else:
        raise ValueError(f"unknown backend {name!r}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {_shape(a)} by {_shape(b)}")
    return _kernels.matmul(a, b)


def matmul_acc(a: np.ndarray, b: np.ndarray, out: np.ndarray) -> None:
    """``out += a @ b`` where the product is formed first, then added."""
    if a.shape[1] != b.shape[0] or out.shape != (a.shape[0], b.shape[1]):
        raise ShapeError(f"matmul_acc: {_shape(a)} @ {_shape(b)} into {_shape(out)}")
    _kernels.matmul_acc(a, b, out)


def affine_pair(W, a, U, b, bias) -> np.ndarray:
    """Return ``W @ a + U @ b + bias``; the primitive behind every gate."""
    if (
        W.shape[1] != a.shape[0]
        or U.shape[1] != b.shape[0]
        or W.shape[0] != U.shape[0]
        or bias.shape != (W.shape[0], 1)
        or a.shape[1] != b.shape[1]
    ):
        raise ShapeError(
            f"affine_pair: W {_shape(W)}, a {_shape(a)}, U {_shape(U)}, "
            f"b {_shape(b)}, bias {_shape(bias)}"
        )
    return _kernels.affine_pair(W, a, U, b, bias)


def sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", under="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def _same_shape(kind, args):
    first = np.shape(args[0])
    for other in args[1:]:
        if np.shape(other) != first:
            raise ShapeError(f"{kind}: shapes {_shape(args[0])} and {_shape(other)} differ")


def elementwise(kind: str, *args: np.ndarray) -> np.ndarray:
    """Named elementwise operation: sigmoid, tanh, hadamard, add, sub_from_one."""
    if kind == "sigmoid":
        return sigmoid(args[0])
    if kind == "tanh":
        return np.tanh(args[0])
    if kind == "sub_from_one":
        return 1.0 - args[0]
    if kind == "hadamard":
        _same_shape(kind, args)
        return args[0] * args[1]
    if kind == "add":
        _same_shape(kind, args)
        return args[0] + args[1]
    raise ValueError(f"unknown elementwise kind {kind!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Column-wise softmax with max subtraction."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def softmax_cce(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """Cross entropy (natural log) of one ``(V, 1)`` logit column.

    Returns the loss and ``softmax(logits) - onehot(target)``.
    """
    V = logits.shape[0]
    if not 0 <= target < V:
        raise IndexError(f"target {target} out of range for vocabulary of {V}")
    losses, grad = softmax_cce_batch(logits, np.array([target]))
    return float(losses[0]), grad


def softmax_cce_batch(logits: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column cross entropy for a ``(V, B)`` logit block.

    Returns ``(losses[B], probs - onehot)``.
    """
    V, B = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (B,):
        raise ShapeError(f"softmax_cce: {B} columns but targets shaped {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise IndexError(f"target out of range for vocabulary of {V}")
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    total = e.sum(axis=0, keepdims=True)
    cols = np.arange(B)
    # -log p[target] = log(sum exp) - shifted[target]
    losses = np.log(total[0]) - shifted[targets, cols]
    grad = e / total
    grad[targets, cols] -= 1.0
    return np.maximum(losses, 0.0), grad


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; numpy guarantees the stream for a given seed."""
    return np.random.Generator(np.random.PCG64(seed))


def glorot_bound(rows: int, cols: int) -> float:
    return math.sqrt(6.0 / (rows + cols))


def glorot_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Uniform Glorot draw on ``[-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))]``."""
    if rows < 1 or cols < 1:
        raise ValueError("glorot_init needs rows, cols >= 1")
    limit = glorot_bound(rows, cols)
    return rng.uniform(-limit, limit, size=(rows, cols))
