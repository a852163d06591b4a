"""Input validation helpers shared by the public functions and estimators."""

import numbers

import numpy as np


def check_bits(bits, name="bits"):
    """Return ``bits`` as a 1-D uint8 array, raising if any entry is not 0/1."""
    arr = np.asarray(bits)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must contain only 0/1 values")
    return arr.astype(np.uint8, copy=False)


def check_complex(x, name="array", ndim=None, shape=None):
    """Coerce to a complex128 array and check dimensionality / shape."""
    arr = np.asarray(x, dtype=np.complex128)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_log_probs(x, card, name="message"):
    """Check a log-domain message whose last axis has ``card`` entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1:] != (card,):
        raise ValueError(f"{name} last axis must have size {card}, got shape {arr.shape}")
    if np.any(np.isnan(arr)):
        raise ValueError(f"{name} contains NaN")
    return arr


def check_positive_int(value, name, minimum=1):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_variance(value, name="sigma2", strict=False):
    value = float(value)
    if not np.isfinite(value) or value < 0 or (strict and value == 0):
        bound = "> 0" if strict else ">= 0"
        raise ValueError(f"{name} must be finite and {bound}, got {value}")
    return value


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
