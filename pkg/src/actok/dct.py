"""Orthonormal type-II discrete cosine transform along either axis of a chunk.

Forward transform of a length-L vector x:

             L-1
    y[k] = s(k) sum x[n] cos(pi (2n+1) k / (2L)),   0 <= k < L,
             n=0

with s(0) = sqrt(1/L) and s(k) = sqrt(2/L) for k > 0. With this scaling the
basis matrix is orthogonal, so the inverse is its transpose and the sum of
squares is preserved in both directions.

Evaluation is direct O(L^2) through a cached basis matrix; at the axis
lengths action chunks use (under ~16) this beats an FFT detour and keeps
the rounding behaviour easy to reason about.
"""

from __future__ import annotations

import enum
from functools import lru_cache

import numpy as np

__all__ = ["DctAxis", "dct_matrix", "dct_forward", "dct_inverse"]


class DctAxis(enum.Enum):
    """Axis of an (N, D) action chunk the transform runs along."""

    PER_TIMESTEP = "per-timestep"    # each row, across the D action dimensions
    PER_DIMENSION = "per-dimension"  # each column, across the N timesteps

    @classmethod
    def from_name(cls, name: str) -> "DctAxis":
        for axis in cls:
            if axis.value == name:
                return axis
        raise ValueError(f"unknown dct axis {name!r}")


@lru_cache(maxsize=None)
def dct_matrix(length: int) -> np.ndarray:
    """Orthonormal DCT-II basis matrix of the given size (rows = frequencies)."""
    if length < 1:
        raise ValueError("transform length must be >= 1")
    k = np.arange(length)[:, None]
    n = np.arange(length)[None, :]
    mat = np.cos(np.pi * (2 * n + 1) * k / (2 * length))
    mat[0, :] *= np.sqrt(1.0 / length)
    mat[1:, :] *= np.sqrt(2.0 / length)
    mat.setflags(write=False)  # cached instance, guard against mutation
    return mat


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def dct_forward(m, axis: DctAxis = DctAxis.PER_TIMESTEP) -> np.ndarray:
    """Apply the orthonormal DCT-II independently along the configured axis."""
    m = _as_matrix(m)
    if axis is DctAxis.PER_TIMESTEP:
        return m @ dct_matrix(m.shape[1]).T
    return dct_matrix(m.shape[0]) @ m


def dct_inverse(m, axis: DctAxis = DctAxis.PER_TIMESTEP) -> np.ndarray:
    """Exact inverse of dct_forward (transpose of the orthogonal basis)."""
    m = _as_matrix(m)
    if axis is DctAxis.PER_TIMESTEP:
        return m @ dct_matrix(m.shape[1])
    return dct_matrix(m.shape[0]).T @ m
