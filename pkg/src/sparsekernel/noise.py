"""Observation-noise samplers with their declared tail parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaussianNoise:
    sigma: float

    @property
    def R(self) -> float:
        return self.sigma

    def sample(self, gen: np.random.Generator, size) -> np.ndarray:
        return self.sigma * gen.standard_normal(size)

    def mgf(self, eta: float) -> float:
        return math.exp(0.5 * eta**2 * self.sigma**2)


@dataclass(frozen=True)
class BoundedUniformNoise:
    """Uniform on ``[-a, a]``; bounded, hence sub-Gaussian with ``R = a``."""

    a: float

    @property
    def R(self) -> float:
        return self.a

    def sample(self, gen: np.random.Generator, size) -> np.ndarray:
        return self.a * (2.0 * gen.random(size) - 1.0)

    def mgf(self, eta: float) -> float:
        x = eta * self.a
        return 1.0 if x == 0 else math.sinh(x) / x


@dataclass(frozen=True)
class LaplaceNoise:
    """Laplace noise with scale ``b``: light-tailed, not sub-Gaussian.

    The moment generating function ``1 / (1 - b^2 h^2)`` exists for
    ``|h| < 1/b``.  With ``h0 = h0_fraction / b`` the local parameter is
    ``xi0 = sup_{|h| <= h0} M''(h) = 2 b^2 (1 + 3 u^2) / (1 - u^2)^3`` at
    ``u = b h0``, which gives ``M(h) <= exp(xi0 h^2 / 2)`` on ``|h| <= h0``.
    """

    b: float
    h0_fraction: float = 0.5

    @property
    def h0(self) -> float:
        return self.h0_fraction / self.b

    @property
    def xi0(self) -> float:
        u = self.h0_fraction
        return 2.0 * self.b**2 * (1.0 + 3.0 * u * u) / (1.0 - u * u) ** 3

    def sample(self, gen: np.random.Generator, size) -> np.ndarray:
        return gen.laplace(0.0, self.b, size)

    def mgf(self, eta: float) -> float:
        x = (self.b * eta) ** 2
        return float("inf") if x >= 1 else 1.0 / (1.0 - x)


def from_config(cfg: dict):
    kind = str(cfg.get("family", cfg.get("kind", "gaussian"))).lower()
    if kind == "gaussian":
        return GaussianNoise(float(cfg["sigma"]))
    if kind in ("bounded_uniform", "uniform"):
        return BoundedUniformNoise(float(cfg["a"]))
    if kind in ("laplace", "light_tailed"):
        return LaplaceNoise(float(cfg["b"]), float(cfg.get("h0_fraction", 0.5)))
    raise ValueError(f"unknown noise family {kind!r}")


def mgf_check(noise, gen: np.random.Generator, etas=(-1.0, -0.5, 0.5, 1.0), samples=100_000, slack=0.1):
    """Empirical ``E exp(eta e)`` against the declared sub-Gaussian envelope."""
    eps = noise.sample(gen, samples)
    rows = []
    for eta in etas:
        emp = float(np.mean(np.exp(eta * eps)))
        env = math.exp(0.5 * eta**2 * noise.R**2)
        rows.append((eta, emp, env, emp <= env * (1.0 + slack)))
    return rows
