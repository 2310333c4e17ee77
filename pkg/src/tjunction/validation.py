"""Input validation helpers shared across the package."""

import numpy as np

__all__ = [
    "check_positive",
    "check_unit_interval",
    "check_index",
    "as_float_array",
    "check_belief",
    "check_row_stochastic",
]


def check_positive(value, name):
    """Return ``value`` as a float, requiring it to be strictly positive."""
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_unit_interval(value, name, low_open=False):
    """Return ``value`` as a float in [0, 1], or (0, 1] when ``low_open``."""
    value = float(value)
    if not np.isfinite(value) or value > 1.0 or value < 0.0 or (low_open and value == 0.0):
        bounds = "(0, 1]" if low_open else "[0, 1]"
        raise ValueError(f"{name} must lie in {bounds}, got {value!r}")
    return value


def check_index(value, size, name):
    """Return ``value`` as an int in ``range(size)``."""
    index = int(value)
    if index != value or not 0 <= index < size:
        raise ValueError(f"{name} must be an integer in [0, {size}), got {value!r}")
    return index


def as_float_array(values, name, shape=None):
    """Convert to a float64 array, optionally enforcing an exact shape."""
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite everywhere")
    return arr


def check_belief(belief, n_states=None, name="belief", tol=1e-9):
    """Validate a probability vector over states and return it as float64."""
    b = as_float_array(belief, name)
    if b.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {b.shape}")
    if n_states is not None and b.shape[0] != n_states:
        raise ValueError(f"{name} must have length {n_states}, got {b.shape[0]}")
    if np.any(b < -tol):
        raise ValueError(f"{name} has negative entries")
    total = b.sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"{name} must sum to 1 within {tol}, got {total!r}")
    return b


def check_row_stochastic(matrix, name, tol=1e-9):
    """Validate that the trailing axis of ``matrix`` holds probability rows."""
    arr = as_float_array(matrix, name)
    if np.any(arr < -tol):
        raise ValueError(f"{name} has negative entries")
    sums = arr.sum(axis=-1)
    if not np.allclose(sums, 1.0, rtol=0.0, atol=tol):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"rows of {name} must sum to 1 within {tol} (worst error {worst:.3e})")
    return arr
