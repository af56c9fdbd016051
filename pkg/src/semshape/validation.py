"""Input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

__all__ = ["as_float_array", "ensure_rng", "check_unit_norm"]


def as_float_array(x, *, name="array", ndim=None, shape=None, finite=True):
    """Coerce to a float64 ndarray and validate its shape.

    `shape` entries may be None to leave a dimension unconstrained.
    Raises ValueError with `name` in the message on any violation.
    """
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name}: expected {ndim} dimensions, got {arr.ndim}")
    if shape is not None:
        if arr.ndim != len(shape):
            raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
        for want, got in zip(shape, arr.shape):
            if want is not None and want != got:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
    if finite and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def ensure_rng(seed) -> np.random.Generator:
    """Accept an int seed, a Generator, or None and return a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_unit_norm(vec, *, tol=1e-6, name="embedding"):
    """Validate that `vec` is a finite 1-D unit vector; returns it as float64."""
    arr = as_float_array(vec, name=name, ndim=1)
    norm = float(np.linalg.norm(arr))
    if abs(norm - 1.0) > tol:
        raise ValueError(f"{name}: expected unit norm, got {norm:.8f}")
    return arr
