"""Catalogue of named activation / nonlinearity functions.

All functions accept scalars or numpy arrays.  ``softmax`` acts on a
whole vector and is only meaningful for the output layer; the others are
element-wise.
"""

from __future__ import annotations

import numpy as np

IDENTITY = "identity"
TANH = "tanh"
SINE = "sine"
MACKEY_GLASS = "mackey-glass"
SOFTMAX = "softmax"

ELEMENTWISE = (IDENTITY, TANH, SINE, MACKEY_GLASS)


def identity(a):
    return np.asarray(a, dtype=float) if np.ndim(a) else float(a)


def sine(a):
    return np.sin(a)


def mackey_glass_response(a, eta: float, p: float):
    """The saturating feedback nonlinearity eta * a / (1 + |a|^p)."""
    a = np.asarray(a, dtype=float)
    out = eta * a / (1.0 + np.abs(a) ** p)
    return out if out.ndim else float(out)


def softmax(a):
    a = np.asarray(a, dtype=float)
    shifted = a - np.max(a)
    exp = np.exp(shifted)
    return exp / np.sum(exp)


def get_activation(name: str, eta: float = 1.0, p: float = 2.0):
    """Resolve an activation id to a callable."""
    if name == IDENTITY:
        return identity
    if name == TANH:
        return np.tanh
    if name == SINE:
        return sine
    if name == MACKEY_GLASS:
        if not p > 0:
            raise ValueError(f"mackey-glass exponent must be positive, got {p}")
        return lambda a: mackey_glass_response(a, eta, p)
    if name == SOFTMAX:
        return softmax
    raise ValueError(f"unknown activation {name!r}")
