"""Depth images with unobserved pixels.

Each pixel is observed with probability ``b_u`` emitted by an extra decoder
head.  An observed pixel contributes ``log b_u + log N(d_u; mu_u, sigma_u)``, an
unobserved one ``log(1 - b_u)``; the two states are summed exactly, no sampling
of the mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gaussian import DiagGaussian, log_pdf_terms
from .networks import ModelParams, decode_trunk, mlp

PROB_MIN = 1e-6
PROB_MAX = 1.0 - 1e-6


@dataclass
class MaskedImage:
    """Pixel values plus an ``observed`` mask of the same shape.

    Values at unobserved positions are never read; :meth:`filled` replaces them
    with zeros before anything downstream sees them.
    """

    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.observed = np.asarray(self.observed, dtype=bool)
        if self.values.shape != self.observed.shape:
            raise ValueError(f"values {self.values.shape} and mask {self.observed.shape} differ in shape")

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def __len__(self) -> int:
        return len(self.values)

    def filled(self, fill: float = 0.0) -> np.ndarray:
        return np.where(self.observed, self.values, fill)

    def rows(self, index) -> "MaskedImage":
        return MaskedImage(self.values[index], self.observed[index])

    def tile(self, reps: int) -> "MaskedImage":
        reps_shape = (reps,) + (1,) * (self.values.ndim - 1)
        return MaskedImage(np.tile(self.values, reps_shape), np.tile(self.observed, reps_shape))


class ObservationMap:
    """Per-pixel observation probabilities, clamped into [1e-6, 1 - 1e-6]."""

    __slots__ = ("probs",)

    def __init__(self, probs):
        self.probs = ad.clip(ad.constant(probs), PROB_MIN, PROB_MAX)

    @property
    def shape(self) -> tuple:
        return self.probs.shape


def observation_map_from_trunk(p: ModelParams, trunk: Tensor) -> ObservationMap:
    if not p.dims.depth_mode:
        raise ValueError("model was built without the observation-mask head (depth_mode=False)")
    return ObservationMap(ad.sigmoid(mlp(p, "decoder.mask", trunk)))


def decode_mask(p: ModelParams, z) -> ObservationMap:
    return observation_map_from_trunk(p, decode_trunk(p, z))


def masked_log_likelihood(img: MaskedImage, pixel_density: DiagGaussian, b: ObservationMap) -> Tensor:
    if not (img.shape == pixel_density.mean.shape == b.shape):
        raise ValueError(
            f"pixel counts differ: image {img.shape}, density {pixel_density.mean.shape}, map {b.shape}"
        )
    observed = img.observed.astype(np.float64)
    dens = log_pdf_terms(pixel_density, img.filled())
    seen = ad.log(b.probs) + dens
    unseen = ad.log(1.0 - b.probs)
    return ad.sum(observed * seen + (1.0 - observed) * unseen, axis=-1)
