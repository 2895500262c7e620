"""Diagonal Normal distributions parameterized by mean and log standard deviation.

All functions reduce over the last axis, so a ``(k,)`` mean gives a scalar and
a ``(rows, k)`` mean gives one value per row.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_STD_MIN = -7.0
LOG_STD_MAX = 7.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class DiagGaussian:
    """N(mean, diag(exp(log_std))**2); ``log_std`` is clamped to [-7, 7]."""

    __slots__ = ("mean", "log_std")

    def __init__(self, mean, log_std):
        mean = ad.constant(mean)
        log_std = ad.constant(log_std)
        if mean.shape != log_std.shape:
            raise ValueError(f"mean {mean.shape} and log_std {log_std.shape} differ in shape")
        self.mean = mean
        self.log_std = ad.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def std(self) -> Tensor:
        return ad.exp(self.log_std)

    def __repr__(self) -> str:
        return f"DiagGaussian(shape={self.mean.shape})"


def _check_shape(g: DiagGaussian, x: Tensor, what: str):
    if x.shape != g.mean.shape:
        raise ValueError(f"{what} shape {x.shape} does not match distribution shape {g.mean.shape}")


def log_pdf_terms(g: DiagGaussian, x) -> Tensor:
    """Per-coordinate log densities (no reduction)."""
    x = ad.constant(x)
    _check_shape(g, x, "point")
    inv_var = ad.exp(-2.0 * g.log_std)
    return -HALF_LOG_2PI - g.log_std - 0.5 * ad.square(x - g.mean) * inv_var


def log_pdf(g: DiagGaussian, x) -> Tensor:
    return ad.sum(log_pdf_terms(g, x), axis=-1)


def kl_to_standard_normal(g: DiagGaussian) -> Tensor:
    """KL(g || N(0, I)) in closed form."""
    two_ls = 2.0 * g.log_std
    # expm1(x) - x is exactly non-negative in floating point; exp(x) - 1 - x is not
    terms = ad.square(g.mean) + (ad.expm1(two_ls) - two_ls)
    return 0.5 * ad.sum(terms, axis=-1)


def entropy(g: DiagGaussian) -> Tensor:
    k = g.dim
    return 0.5 * k * math.log(2.0 * math.pi * math.e) + ad.sum(g.log_std, axis=-1)


def rsample(g: DiagGaussian, noise) -> Tensor:
    """mean + std * noise; ``noise`` is treated as a constant."""
    noise = np.asarray(noise.data if isinstance(noise, Tensor) else noise, dtype=np.float64)
    if noise.shape != g.mean.shape:
        raise ValueError(f"noise shape {noise.shape} does not match distribution shape {g.mean.shape}")
    return g.mean + g.std * Tensor(noise)


def standard_normal_log_pdf(x: np.ndarray) -> np.ndarray:
    """Plain-array log N(x; 0, I) summed over the last axis."""
    return -(HALF_LOG_2PI + 0.5 * np.square(x)).sum(axis=-1)
