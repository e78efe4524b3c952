"""Dense helpers, seeded randomness and finite differences."""
from __future__ import annotations

from typing import Callable

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    pass


class EvaluationError(ArithmeticError):
    pass


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by a 64-bit seed and a stream id.

    Philox output is defined bit-for-bit independent of platform, and distinct
    ``stream`` values give non-overlapping substreams for the same seed.
    """
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(np.random.Philox(key=[seed, int(stream)]))


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-safe snapshot of a generator's bit-generator state."""
    def plain(v):
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        if isinstance(v, np.ndarray):
            return {"__array__": v.tolist(), "dtype": str(v.dtype)}
        return v.item() if isinstance(v, np.generic) else v

    return plain(rng.bit_generator.state)


def set_rng_state(rng: np.random.Generator, state: dict) -> None:
    def native(v):
        if isinstance(v, dict):
            if "__array__" in v:
                return np.array(v["__array__"], dtype=v["dtype"])
            return {k: native(x) for k, x in v.items()}
        return v

    rng.bit_generator.state = native(state)


def as_matrix(data, rows: int | None = None, cols: int | None = None, dtype=DTYPE) -> np.ndarray:
    m = np.asarray(data, dtype=dtype)
    if rows is not None and cols is not None and m.ndim != 2:
        if m.size != rows * cols:
            raise ShapeError(f"{m.size} entries cannot form a {rows}x{cols} matrix")
        m = m.reshape(rows, cols)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {m.shape}")
    if (rows is not None and m.shape[0] != rows) or (cols is not None and m.shape[1] != cols):
        raise ShapeError(f"expected {rows}x{cols}, got {m.shape[0]}x{m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite values")
    return m


def matvec(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    x = np.asarray(x, dtype=m.dtype)
    if m.ndim != 2 or x.ndim != 1 or x.shape[0] != m.shape[1]:
        raise ShapeError(f"cannot multiply {m.shape} by vector of shape {x.shape}")
    return m @ x


def uniform_init(rng: np.random.Generator, rows: int, cols: int, scale: float, dtype=DTYPE) -> np.ndarray:
    if scale <= 0:
        raise ValueError("scale must be positive")
    return rng.uniform(-scale, scale, size=(rows, cols)).astype(dtype)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x))
        flat[i] = orig - eps
        lo = float(f(x))
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise EvaluationError(f"non-finite function value at coordinate {i}")
        grad[i] = (hi - lo) / (2 * eps)
    return grad.reshape(x.shape)
