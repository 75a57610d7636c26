"""Concave job rewards, their gradients and concave conjugates.

The concrete family used everywhere is

    f(x) = v * ((0.1 + x)**(1 - psi) - 0.1**(1 - psi)) / (1 - psi) + linear * x

with ``linear = 0`` for plain job rewards. A nonzero ``linear`` term appears
when a reward is reweighted for the fairness-constrained scheduler
(``V * f(x) + Q * x``), see :meth:`PowerUtility.modified`.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

SHIFT = 0.1


class DomainError(ValueError):
    """Argument outside the domain of a utility operation."""


class Utility(ABC):
    """Minimal interface the dual evaluator needs from a reward function."""

    @abstractmethod
    def eval(self, x: float) -> float: ...

    @abstractmethod
    def grad(self, x: float) -> float: ...

    @abstractmethod
    def conjugate(self, alpha: float) -> float:
        """Concave conjugate ``inf_{x >= 0} alpha * x - f(x)``."""

    def __call__(self, x: float) -> float:
        return self.eval(x)


@dataclass(frozen=True)
class PowerUtility(Utility):
    v: float
    psi: float
    linear: float = 0.0

    def __post_init__(self):
        if not self.v > 0:
            raise DomainError(f"v must be positive, got {self.v}")
        if not 0.0 < self.psi < 1.0:
            raise DomainError(f"psi must lie in (0, 1), got {self.psi}")
        if self.linear < 0:
            raise DomainError(f"linear term must be nonnegative, got {self.linear}")

    @property
    def offset(self) -> float:
        """Constant subtracted so that ``eval(0) == 0``."""
        return self.v * SHIFT ** (1.0 - self.psi) / (1.0 - self.psi)

    def eval(self, x: float) -> float:
        if x < 0:
            raise DomainError(f"utility evaluated at negative x={x}")
        e = 1.0 - self.psi
        return self.v * ((SHIFT + x) ** e - SHIFT**e) / e + self.linear * x

    def grad(self, x: float) -> float:
        if x < 0:
            raise DomainError(f"gradient evaluated at negative x={x}")
        return self.v * (SHIFT + x) ** (-self.psi) + self.linear

    def inverse_grad(self, alpha: float) -> float:
        """The ``x >= 0`` with ``grad(x) == alpha``; 0 when alpha >= grad(0)."""
        if alpha <= self.linear:
            raise DomainError(f"no finite x has gradient {alpha}")
        if alpha >= self.grad(0.0):
            return 0.0
        try:
            x = (self.v / (alpha - self.linear)) ** (1.0 / self.psi) - SHIFT
        except OverflowError:
            return math.inf
        return max(x, 0.0)

    def conjugate(self, alpha: float) -> float:
        if alpha < 0:
            raise DomainError(f"conjugate evaluated at negative alpha={alpha}")
        if alpha >= self.grad(0.0):
            return 0.0
        if alpha <= self.linear:
            return -math.inf
        x = self.inverse_grad(alpha)
        if not math.isfinite(x):
            return -math.inf
        val = alpha * x - self.eval(x)
        return min(val, 0.0) if math.isfinite(val) else -math.inf

    def modified(self, scale: float, linear: float) -> "PowerUtility":
        """``scale * f(x) + linear * x`` as another member of the family."""
        return PowerUtility(self.v * scale, self.psi, self.linear * scale + linear)


def sample_utility(rng: np.random.Generator, v_range=(0.01, 1.0), psi_range=(0.01, 0.99)):
    v = rng.uniform(*v_range)
    psi = rng.uniform(*psi_range)
    return PowerUtility(float(v), float(psi))


# Vectorized forms over parallel arrays (a = v, psi, lin = linear).


def value(a, psi, lin, x):
    e = 1.0 - psi
    return a * ((SHIFT + x) ** e - SHIFT**e) / e + lin * x


def gradient(a, psi, lin, x):
    return a * (SHIFT + x) ** (-psi) + lin


def conjugate(a, psi, lin, alpha):
    """Vectorized :meth:`PowerUtility.conjugate` (no domain checks)."""
    a, psi, lin, alpha = np.broadcast_arrays(*map(np.asarray, (a, psi, lin, alpha)))
    out = np.zeros(alpha.shape)
    g0 = gradient(a, psi, lin, 0.0)
    inner = (alpha < g0) & (alpha > lin)
    with np.errstate(over="ignore", divide="ignore"):
        x = (a[inner] / (alpha[inner] - lin[inner])) ** (1.0 / psi[inner]) - SHIFT
    x = np.maximum(x, 0.0)
    with np.errstate(invalid="ignore"):
        val = alpha[inner] * x - value(a[inner], psi[inner], lin[inner], x)
    out[inner] = np.where(np.isfinite(val), np.minimum(val, 0.0), -np.inf)
    out[alpha <= lin] = -np.inf
    out[alpha >= g0] = 0.0
    return out
