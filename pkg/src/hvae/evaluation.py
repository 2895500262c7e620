"""Held-out metrics, joint sampling and latent interpolation."""

from __future__ import annotations

import logging

import numpy as np

from .depth import MaskedImage
from .gaussian import DiagGaussian
from .networks import ModelParams, decode, encode_z, predict_h
from .objectives import EstimatorConfig, NoiseSource, elbo_full

log = logging.getLogger(__name__)

EYE_PAIR = (0, 1)
MIN_INTEROCULAR = 1e-9


def per_sample_nll(params: ModelParams, test_d, test_h, cfg=EstimatorConfig(), noise=None, chunk: int = 1024):
    """Negated full bound for every test record (nats)."""
    noise = NoiseSource(0) if noise is None else noise
    frozen = params.frozen()
    n = len(test_d)
    if n == 0:
        raise ValueError("test set is empty")
    out = np.empty(n)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk))
        d = test_d.rows(idx) if isinstance(test_d, MaskedImage) else np.asarray(test_d)[idx]
        out[idx] = -elbo_full(frozen, d, np.asarray(test_h)[idx], cfg, noise.child(start)).data
    return out


def test_nll(params: ModelParams, test_d, test_h, cfg=EstimatorConfig(), noise=None) -> float:
    """Mean over the test set of the negated full bound."""
    return float(np.mean(per_sample_nll(params, test_d, test_h, cfg, noise)))


def landmark_error(pred: np.ndarray, gt: np.ndarray, mode: str = "interocular") -> tuple:
    """Return ``(mean error, skipped records)`` for predicted vs true labels.

    ``interocular``: mean point-to-point distance divided by the distance of
    the eye pair, averaged over records.  ``l2``: mean Euclidean norm of the
    whole label difference.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    gt = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from ground truth {gt.shape}")
    if mode == "l2":
        return float(np.mean(np.linalg.norm(pred - gt, axis=1))), 0
    if mode != "interocular":
        raise ValueError(f"unknown task-loss mode {mode!r}")
    if gt.shape[1] < 4 or gt.shape[1] % 2:
        raise ValueError("interocular mode needs at least two 2-D landmarks")
    p = pred.reshape(len(pred), -1, 2)
    g = gt.reshape(len(gt), -1, 2)
    iod = np.linalg.norm(g[:, EYE_PAIR[0]] - g[:, EYE_PAIR[1]], axis=1)
    keep = iod >= MIN_INTEROCULAR
    skipped = int(np.count_nonzero(~keep))
    if not keep.any():
        raise ValueError("every record has coincident eye landmarks")
    per_record = np.linalg.norm(p - g, axis=2).mean(axis=1)[keep] / iod[keep]
    return float(per_record.mean()), skipped


def predict_labels(params: ModelParams, d) -> np.ndarray:
    d_in = d.filled() if isinstance(d, MaskedImage) else d
    return predict_h(params.frozen(), d_in).mean.data


def task_loss(params: ModelParams, test_d, test_h, mode: str = "interocular") -> float:
    """Task loss of the predictor's mean on a labeled set."""
    value, skipped = landmark_error(predict_labels(params, test_d), test_h, mode)
    if skipped:
        log.warning("task loss skipped %d records with coincident eye landmarks", skipped)
    return value


def sample_joint(params: ModelParams, count: int, noise=None, sample: bool = False) -> tuple:
    """Draw z ~ N(0, I) and emit decoder means (or draws when ``sample``)."""
    noise = NoiseSource(0) if noise is None else noise
    frozen = params.frozen()
    z = noise.normal((count, params.dims.z_dim), 0)
    gd, gh = decode(frozen, z)
    if not sample:
        return gd.mean.data.copy(), gh.mean.data.copy()
    d = gd.mean.data + gd.std.data * noise.normal(gd.mean.shape, 1)
    h = gh.mean.data + gh.std.data * noise.normal(gh.mean.shape, 2)
    return d, h


def encode_point(params: ModelParams, d, h, noise=None) -> np.ndarray:
    """Posterior mean of q(z|d,h), or one draw from it when ``noise`` is given."""
    d_in = d.filled() if isinstance(d, MaskedImage) else d
    q: DiagGaussian = encode_z(params.frozen(), d_in, h)
    if noise is None:
        return q.mean.data.copy()
    return q.mean.data + q.std.data * noise.normal(q.mean.shape, 0)


def interpolate(params: ModelParams, src: tuple, dst: tuple, steps: int, noise=None) -> tuple:
    """Decode ``steps`` evenly spaced latents from encode(src) to encode(dst).

    Returns ``(images, labels, latents)``, endpoints included.
    """
    if steps < 2:
        raise ValueError(f"interpolation needs at least 2 steps, got {steps}")
    z0 = encode_point(params, *src, noise=None if noise is None else noise.child(0))
    z1 = encode_point(params, *dst, noise=None if noise is None else noise.child(1))
    t = np.linspace(0.0, 1.0, steps)[:, None]
    z = (1.0 - t) * z0 + t * z1
    frozen = params.frozen()
    # one row at a time: a batched matmul may round differently from decoding
    # a single latent, and endpoints should match decode(encode(src)) exactly
    heads = [decode(frozen, row) for row in z]
    images = np.stack([gd.mean.data for gd, _ in heads])
    labels = np.stack([gh.mean.data for _, gh in heads])
    return images, labels, z


def write_pgm(path, images: np.ndarray, side: int) -> None:
    """Write images side by side as one 8-bit binary PGM strip."""
    images = np.asarray(images, dtype=np.float64).reshape(-1, side, side)
    strip = np.concatenate(list(images), axis=1)
    lo, hi = float(strip.min()), float(strip.max())
    scaled = np.zeros_like(strip) if hi <= lo else (strip - lo) / (hi - lo)
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
