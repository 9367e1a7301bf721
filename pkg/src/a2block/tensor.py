"""Dense tensor primitives for the double-attention block.

Tensors are plain numpy arrays: float32 on runtime paths, float64 on
verification paths. A feature map lives either in its 4-D form
``(c, d, h, w)`` or flattened to a ``(c, L)`` matrix with ``L = d*h*w``
and the location axis enumerating ``(d, h, w)`` in row-major order.
Arrays are row-major contiguous; every public operation returns a finite
result or raises.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SINGLE = np.float32
DOUBLE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@dataclass(frozen=True)
class Shape4:
    """Feature-map extents: channels, temporal depth, height, width."""

    c: int
    d: int
    h: int
    w: int

    def __post_init__(self):
        for name in ("c", "d", "h", "w"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ShapeError(f"Shape4.{name} must be a positive integer, got {v!r}")

    @property
    def locations(self) -> int:
        """Number of spatio-temporal locations L = d*h*w."""
        return self.d * self.h * self.w

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.c, self.d, self.h, self.w)


def _require_finite(name: str, a: np.ndarray) -> np.ndarray:
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite elements")
    return a


def _as_matrix(name: str, a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Matrix product of an (m, k) by a (k, n) matrix."""
    lhs = _as_matrix("lhs", lhs)
    rhs = _as_matrix("rhs", rhs)
    if lhs.shape[1] != rhs.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {lhs.shape} x {rhs.shape}")
    return _require_finite("matmul result", lhs @ rhs)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Softmax along each row, stabilized by max subtraction."""
    m = _as_matrix("softmax_rows input", m)
    _require_finite("softmax_rows input", m)
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cols(m: np.ndarray) -> np.ndarray:
    """Softmax along each column, stabilized by max subtraction."""
    m = _as_matrix("softmax_cols input", m)
    _require_finite("softmax_cols input", m)
    shifted = m - m.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def conv_pointwise(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """1x1x1 convolution over a flattened map: channel mixing per location.

    ``x`` is (c_in, L), ``w`` is (c_out, c_in); returns (c_out, L).
    """
    x = _as_matrix("conv input", x)
    w = _as_matrix("conv weight", w)
    if w.shape[1] != x.shape[0]:
        raise ShapeError(
            f"conv_pointwise channel mismatch: weight {w.shape} expects "
            f"{w.shape[1]} input channels, input has shape {x.shape}"
        )
    y = w @ x
    if bias is not None:
        bias = np.asarray(bias)
        if bias.shape != (w.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} does not match {w.shape[0]} output channels")
        y = y + bias[:, None]
    return _require_finite("conv_pointwise result", y)


def flatten_spatial(x: np.ndarray) -> np.ndarray:
    """(c, d, h, w) -> (c, L) with locations in row-major (d, h, w) order."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"flatten_spatial expects a 4-D tensor, got shape {x.shape}")
    c = x.shape[0]
    return np.ascontiguousarray(x).reshape(c, -1)


def unflatten_spatial(m: np.ndarray, shape: Shape4) -> np.ndarray:
    """Inverse of flatten_spatial; round-trip is bit-exact."""
    m = _as_matrix("unflatten input", m)
    if m.shape[0] != shape.c or m.shape[1] != shape.locations:
        raise ShapeError(
            f"matrix {m.shape} incompatible with target shape "
            f"{shape.as_tuple()} (expects ({shape.c}, {shape.locations}))"
        )
    return np.ascontiguousarray(m).reshape(shape.as_tuple())


def seeded_random(
    shape: tuple[int, ...],
    seed: int,
    distribution: str = "uniform",
    scale: float = 1.0,
    dtype=SINGLE,
) -> np.ndarray:
    """Reproducible random tensor from a fixed generator (NumPy PCG64).

    ``uniform`` draws from (-scale, scale); ``normal`` from N(0, scale^2).
    The same (shape, seed, distribution, scale) always yields the same
    values on every platform.
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    rng = np.random.Generator(np.random.PCG64(seed))
    if distribution == "uniform":
        a = rng.uniform(-scale, scale, size=shape)
    elif distribution == "normal":
        a = rng.normal(0.0, scale, size=shape)
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    return np.ascontiguousarray(a.astype(dtype))
