"""Stochastic gradient estimates and batch-size control."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels as K


@dataclass(frozen=True)
class SampleSet:
    """Indices into a finite sum, or just a draw count for an unbounded population."""

    size: int
    indices: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("a sample must contain at least one draw")
        if self.indices is not None and len(self.indices) != self.size:
            raise ValueError("size does not match number of indices")


@dataclass(frozen=True)
class GradientEstimate:
    gbar: np.ndarray
    sample_variance: float
    size: int


def draw_sample(rng: np.random.Generator, population: Optional[int], size: int) -> SampleSet:
    """Uniform draw without replacement from ``range(population)``; ``None`` means unbounded."""
    size = int(size)
    if size < 1:
        raise ValueError("sample size must be positive")
    if population is None:
        return SampleSet(size)
    if size > population:
        raise ValueError(f"cannot draw {size} distinct indices from a population of {population}")
    if size == population:
        idx = rng.permutation(population)
    else:
        idx = rng.choice(population, size=size, replace=False)
    return SampleSet(size, np.ascontiguousarray(idx, dtype=np.int64))


def estimate_gradient(problem, x, sample: SampleSet, rng: np.random.Generator) -> GradientEstimate:
    """Mean of per-sample gradients with the unbiased trace variance."""
    G = np.ascontiguousarray(problem.g_samples(x, sample, rng), dtype=np.float64)
    mean, var = K.mean_and_variance(G)
    return GradientEstimate(mean, float(var), sample.size)


def norm_test(est: GradientEstimate, delta_l: float, theta1: float, beta: float, sigma: float) -> bool:
    """Practical variance test ``Var / |S| <= theta1 beta^sigma delta_l``."""
    if est.sample_variance == 0.0:
        return True
    return est.sample_variance / est.size <= theta1 * beta**sigma * delta_l


def next_sample_size(est: GradientEstimate, delta_l: float, theta1: float, beta: float, sigma: float, cap: int) -> int:
    if est.sample_variance > 0.0 and delta_l <= 0.0:
        return int(cap)
    if est.sample_variance == 0.0:
        return min(int(cap), est.size)
    ratio = est.sample_variance / (theta1 * beta**sigma * delta_l)
    if not ratio < cap:  # also catches overflow to inf for tiny delta_l
        return int(cap)
    return int(min(cap, max(est.size, math.ceil(ratio))))


def predetermined_size(k: int, base: int, nu: float, cap: int) -> int:
    if nu <= 1.0:
        raise ValueError("nu must exceed 1")
    return int(min(cap, math.ceil(base * (k + 1) ** nu)))


class SamplingController:
    """Batch-size policy owned by one run.

    ``mode`` is ``"fixed"``, ``"adaptive"`` or ``"predetermined"``; ``current``
    is the size of the next sample to draw.
    """

    def __init__(self, mode: str, *, size: int = 2, cap: int = 1024, theta1: float = 0.99,
                 beta: float = 1.0, sigma: float = 2.0, nu: float = 1.5):
        if mode not in ("fixed", "adaptive", "predetermined"):
            raise ValueError(f"unknown sampling mode {mode!r}")
        if size < 1 or cap < 1:
            raise ValueError("sizes must be positive")
        self.mode = mode
        self.cap = int(cap) if mode != "fixed" else int(size)
        self.base = int(size)
        self.theta1, self.beta, self.sigma, self.nu = theta1, beta, sigma, nu
        self.current = min(self.base, self.cap)
        self.k = 0

    @classmethod
    def fixed(cls, size: int):
        return cls("fixed", size=size)

    @classmethod
    def adaptive(cls, init_size: int = 2, cap: int = 1024, theta1: float = 0.99, beta: float = 1.0, sigma: float = 2.0):
        return cls("adaptive", size=init_size, cap=cap, theta1=theta1, beta=beta, sigma=sigma)

    @classmethod
    def predetermined(cls, base: int = 2, nu: float = 1.5, cap: int = 1024):
        return cls("predetermined", size=base, cap=cap, nu=nu)

    def update(self, est: GradientEstimate, delta_l: float) -> int:
        """Set and return the size for the next iteration."""
        self.k += 1
        if self.mode == "adaptive":
            if not norm_test(est, delta_l, self.theta1, self.beta, self.sigma):
                self.current = max(self.current,
                                   next_sample_size(est, delta_l, self.theta1, self.beta, self.sigma, self.cap))
        elif self.mode == "predetermined":
            self.current = max(self.current, predetermined_size(self.k, self.base, self.nu, self.cap))
        return self.current
