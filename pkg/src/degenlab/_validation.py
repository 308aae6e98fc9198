"""Input validation helpers shared by all modules."""
import numbers

import numpy as np

from .errors import PreconditionError


def check_power_of_two(n, name="N", minimum=1):
    if not isinstance(n, numbers.Integral) or n < minimum or n & (n - 1):
        raise PreconditionError(f"{name} must be a power of two >= {minimum}, got {n!r}")
    return int(n)


def check_positive(x, name):
    x = float(x)
    if not np.isfinite(x) or x <= 0:
        raise PreconditionError(f"{name} must be a positive finite number, got {x!r}")
    return x


def check_finite_array(a, name, shape=None, dtype=None):
    a = np.asarray(a, dtype=dtype)
    if shape is not None:
        if len(shape) != a.ndim or any(s is not None and s != d for s, d in zip(shape, a.shape)):
            raise PreconditionError(f"{name} has shape {a.shape}, expected {shape}")
    if not np.all(np.isfinite(a)):
        raise PreconditionError(f"{name} contains non-finite values")
    return a


def check_weights(w):
    w = check_finite_array(w, "weight samples", shape=(None,), dtype=float)
    if np.any(w <= 0):
        raise PreconditionError("weight samples must be strictly positive")
    check_power_of_two(w.size, "number of grid points")
    return w


def check_field(v, n, name="field"):
    """Return ``v`` as a flat complex vector of length ``2n`` (normal part first)."""
    v = np.asarray(v, dtype=complex)
    if v.shape == (2, n):
        v = v.reshape(2 * n)
    if v.shape != (2 * n,):
        raise PreconditionError(f"{name} must have shape (2, {n}) or ({2 * n},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise PreconditionError(f"{name} contains non-finite values")
    return v


def as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
