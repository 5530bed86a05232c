"""Activation catalogue with the semantics the convergence conditions need.

Every kind is monotonically non-decreasing with a bounded derivative
(`derivative_bound`, the f_phi constant of the gain conditions). Identity,
sigmoid and modified softplus additionally expose a functional inverse;
out-of-range targets are clamped into a fixed margin when `clip=True` so the
inversion distortion is deterministic.

All operations accept scalars or numpy arrays and act elementwise.
"""

import numpy as np

from .errors import DomainError, UnsupportedActivationError

# Clamp margins for inverses. Sigmoid targets land in [0.01, 0.99]; modified
# softplus targets must exceed log(0.8), clamped to log(0.8) + 1e-3.
SIGMOID_CLIP = (0.01, 0.99)
MSOFTPLUS_FLOOR = np.log(0.8) + 1e-3


class Activation:
    """One activation kind; instances are stateless singletons."""

    name = ""
    derivative_bound = 1.0
    invertible = True

    def apply(self, x):
        raise NotImplementedError

    def derivative(self, x):
        raise NotImplementedError

    def inverse(self, y, clip=True):
        """Solve apply(x) = y. Clamps y into the valid range when clip=True."""
        raise NotImplementedError

    def clip_range(self):
        """(lo, hi) interval targets are clamped into before inversion."""
        return (-np.inf, np.inf)

    def __repr__(self):
        return f"Activation({self.name})"


class _Identity(Activation):
    name = "identity"

    def apply(self, x):
        return np.asarray(x, dtype=float) + 0.0

    def derivative(self, x):
        return np.ones_like(np.asarray(x, dtype=float))

    def inverse(self, y, clip=True):
        return np.asarray(y, dtype=float) + 0.0


class _Relu(Activation):
    name = "relu"
    invertible = False

    def apply(self, x):
        return np.maximum(np.asarray(x, dtype=float), 0.0)

    def derivative(self, x):
        # Value at exactly 0 is 0 (documented constant; measure-zero point).
        return (np.asarray(x, dtype=float) > 0.0).astype(float)

    def inverse(self, y, clip=True):
        raise UnsupportedActivationError("ReLU has no functional inverse")


class _Sigmoid(Activation):
    name = "sigmoid"
    derivative_bound = 0.25

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    def derivative(self, x):
        s = self.apply(x)
        return s * (1.0 - s)

    def inverse(self, y, clip=True):
        y = np.asarray(y, dtype=float)
        lo, hi = SIGMOID_CLIP
        if clip:
            y = np.clip(y, lo, hi)
        elif np.any(y <= 0.0) or np.any(y >= 1.0):
            raise DomainError("sigmoid inverse needs 0 < y < 1")
        return np.log(y) - np.log1p(-y)

    def clip_range(self):
        return SIGMOID_CLIP


class _ModifiedSoftplus(Activation):
    """f(x) = log(0.8 + e^x); inverse log(e^y - 0.8); derivative in (0, 1)."""

    name = "msoftplus"

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        big = x > 30.0
        out[big] = x[big] + np.log1p(0.8 * np.exp(-x[big]))
        out[~big] = np.log(0.8 + np.exp(x[~big]))
        return out

    def derivative(self, x):
        # e^x / (0.8 + e^x) = 1 / (1 + 0.8 e^-x)
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + 0.8 * np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (0.8 + ex)
        return out

    def inverse(self, y, clip=True):
        y = np.asarray(y, dtype=float)
        if clip:
            y = np.maximum(y, MSOFTPLUS_FLOOR)
        elif np.any(y <= np.log(0.8)):
            raise DomainError("msoftplus inverse needs y > log(0.8)")
        out = np.empty_like(y)
        big = y > 30.0
        out[big] = y[big] + np.log1p(-0.8 * np.exp(-y[big]))
        out[~big] = np.log(np.exp(y[~big]) - 0.8)
        return out

    def clip_range(self):
        return (MSOFTPLUS_FLOOR, np.inf)


IDENTITY = _Identity()
RELU = _Relu()
SIGMOID = _Sigmoid()
MODIFIED_SOFTPLUS = _ModifiedSoftplus()

_BY_NAME = {a.name: a for a in (IDENTITY, RELU, SIGMOID, MODIFIED_SOFTPLUS)}
# Accepted aliases for CLI/config use.
_ALIASES = {"id": "identity", "linear": "identity", "modified_softplus": "msoftplus"}


def get(name):
    """Look up an activation by name ('identity', 'relu', 'sigmoid', 'msoftplus')."""
    key = _ALIASES.get(name.lower(), name.lower())
    if key not in _BY_NAME:
        raise KeyError(f"unknown activation {name!r}; known: {sorted(_BY_NAME)}")
    return _BY_NAME[key]
