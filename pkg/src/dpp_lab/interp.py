"""Multilinear interpolation on a regular lattice.

The interpolation weights are barycentric per axis, so every off-grid
evaluation is a convex combination of node values (weights in [0,1]
summing to 1). This keeps maximum principles intact downstream.
"""

from __future__ import annotations

import itertools

import numpy as np


def lattice_cell(points, idx_lo: np.ndarray, h: float, shape) -> tuple[np.ndarray, np.ndarray]:
    """Lower cell corner (integer index into the array) and fractional offsets."""
    p = np.asarray(points, dtype=float)
    rel = p / h - idx_lo
    base = np.floor(rel).astype(np.int64)
    upper = np.asarray(shape, dtype=np.int64) - 2
    if np.any(base < -1) or np.any(base - upper > 1):
        raise ValueError("evaluation point outside the stored lattice hull")
    base = np.clip(base, 0, upper)
    frac = rel - base
    return base, np.clip(frac, 0.0, 1.0)


def multilinear(values: np.ndarray, idx_lo: np.ndarray, h: float, points) -> np.ndarray:
    """Evaluate node values at arbitrary points inside the lattice hull."""
    p = np.asarray(points, dtype=float)
    squeeze = p.ndim == 1
    pts = np.atleast_2d(p)
    base, frac = lattice_cell(pts, idx_lo, h, values.shape)
    out = np.zeros(pts.shape[0], dtype=float)
    dim = pts.shape[-1]
    for corner in itertools.product((0, 1), repeat=dim):
        w = np.ones(pts.shape[0], dtype=float)
        idx = []
        for d, c in enumerate(corner):
            w = w * (frac[:, d] if c else (1.0 - frac[:, d]))
            idx.append(base[:, d] + c)
        out += w * values[tuple(idx)]
    return out[0] if squeeze else out


def stencil_weights(points, idx_lo: np.ndarray, h: float, shape) -> tuple[np.ndarray, np.ndarray]:
    """Flat node indices and convex weights of the multilinear stencil.

    Returns ``(flat_idx, weights)`` of shape ``(npts, 2**dim)``; summing
    ``weights * values.flat[flat_idx]`` reproduces :func:`multilinear`.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    base, frac = lattice_cell(pts, idx_lo, h, shape)
    dim = pts.shape[-1]
    strides = np.ones(dim, dtype=np.int64)
    for d in range(dim - 2, -1, -1):
        strides[d] = strides[d + 1] * shape[d + 1]
    n = pts.shape[0]
    flat = np.empty((n, 2**dim), dtype=np.int64)
    wts = np.empty((n, 2**dim), dtype=float)
    for j, corner in enumerate(itertools.product((0, 1), repeat=dim)):
        w = np.ones(n, dtype=float)
        f = np.zeros(n, dtype=np.int64)
        for d, c in enumerate(corner):
            w = w * (frac[:, d] if c else (1.0 - frac[:, d]))
            f = f + (base[:, d] + c) * strides[d]
        flat[:, j] = f
        wts[:, j] = w
    return flat, wts
