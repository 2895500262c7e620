"""Monte Carlo estimators of the full and partial-observation bounds.

``elbo_full`` bounds log p(d, h) through the encoder q(z|d,h).  ``elbo_partial``
bounds log p(d) by drawing labels from the predictor q(h|d), scoring each with
the full bound and adding the predictor's analytic entropy.  Both return one
value per input row and are differentiable through every sample by
reparametrization.

Noise comes from a :class:`NoiseSource`, which derives an independent
generator for every key tuple, so a given (seed, step, stream, slot) always
yields the same draws regardless of what else was sampled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .depth import MaskedImage, masked_log_likelihood, observation_map_from_trunk
from .gaussian import DiagGaussian, entropy, kl_to_standard_normal, log_pdf, rsample
from .networks import ModelParams, decode_heads, decode_trunk, encode_z, predict_h

SLOT_Z = 0
SLOT_H = 1
STREAM_LABELED = 0
STREAM_UNLABELED = 1

MODES = ("hybrid", "full", "partial")


@dataclass(frozen=True)
class EstimatorConfig:
    s_z: int = 3
    s_h: int = 3

    def __post_init__(self):
        if self.s_z < 1 or self.s_h < 1:
            raise ValueError(f"sample counts must be positive, got s_z={self.s_z}, s_h={self.s_h}")


class NoiseSource:
    """Standard normal draws keyed by integer tuples."""

    def __init__(self, seed: int, key: tuple = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)

    def child(self, *key) -> "NoiseSource":
        return NoiseSource(self.seed, self.key + tuple(int(k) for k in key))

    def normal(self, shape, *key) -> np.ndarray:
        rng = np.random.default_rng([self.seed, *self.key, *(int(k) for k in key)])
        return rng.standard_normal(shape)

    def __repr__(self) -> str:
        return f"NoiseSource(seed={self.seed}, key={self.key})"


class ZeroNoise:
    """Noise source that always returns zeros (posterior-mean evaluation)."""

    def child(self, *key) -> "ZeroNoise":
        return self

    def normal(self, shape, *key) -> np.ndarray:
        return np.zeros(shape)


def _rows(x):
    """Promote a single record to a one-row batch; report whether we did."""
    if isinstance(x, MaskedImage):
        if x.values.ndim == 1:
            return MaskedImage(x.values[None], x.observed[None]), True
        return x, False
    if isinstance(x, Tensor):
        return (ad.reshape(x, (1,) + x.shape), True) if x.ndim == 1 else (x, False)
    x = np.asarray(x, dtype=np.float64)
    return (x[None], True) if x.ndim == 1 else (x, False)


def _network_input(d):
    return d.filled() if isinstance(d, MaskedImage) else d


def _tile(x, reps: int):
    if reps == 1:
        return x
    if isinstance(x, MaskedImage):
        return x.tile(reps)
    if isinstance(x, Tensor):
        return ad.tile_rows(x, reps)
    return np.tile(x, (reps, 1))


def _tile_gaussian(g: DiagGaussian, reps: int) -> DiagGaussian:
    if reps == 1:
        return g
    return DiagGaussian(ad.tile_rows(g.mean, reps), ad.tile_rows(g.log_std, reps))


def _slot_mean(values: Tensor, slots: int, rows: int) -> Tensor:
    if slots == 1:
        return values
    return ad.mean(ad.reshape(values, (slots, rows)), axis=0)


def _unpack(out: Tensor, single: bool) -> Tensor:
    return ad.reshape(out, ()) if single else out


def joint_log_likelihood(p: ModelParams, d, h, z) -> Tensor:
    """log p(d, h | z) per row; ``d`` may be a :class:`MaskedImage` in depth mode."""
    trunk = decode_trunk(p, z)
    gd, gh = decode_heads(p, trunk)
    if isinstance(d, MaskedImage):
        ll_d = masked_log_likelihood(d, gd, observation_map_from_trunk(p, trunk))
    else:
        ll_d = log_pdf(gd, ad.constant(d))
    return ll_d + log_pdf(gh, h)


def elbo_full(p: ModelParams, d, h, cfg: EstimatorConfig = EstimatorConfig(), noise=None) -> Tensor:
    """Full-observation bound; one value per row of (d, h)."""
    noise = NoiseSource(0) if noise is None else noise
    d, single = _rows(d)
    h, _ = _rows(h)
    rows = d.shape[0]
    if h.shape[0] != rows:
        raise ValueError(f"d has {rows} rows but h has {h.shape[0]}")
    q = encode_z(p, _network_input(d), h)
    eps = noise.normal((cfg.s_z, rows, p.dims.z_dim), SLOT_Z).reshape(cfg.s_z * rows, p.dims.z_dim)
    z = rsample(_tile_gaussian(q, cfg.s_z), eps)
    ll = joint_log_likelihood(p, _tile(d, cfg.s_z), _tile(h, cfg.s_z), z)
    out = _slot_mean(ll, cfg.s_z, rows) - kl_to_standard_normal(q)
    return _unpack(out, single)


def elbo_partial(p: ModelParams, d, cfg: EstimatorConfig = EstimatorConfig(), noise=None) -> Tensor:
    """Partial-observation bound on log p(d); one value per row of d."""
    noise = NoiseSource(0) if noise is None else noise
    d, single = _rows(d)
    rows = d.shape[0]
    qh = predict_h(p, _network_input(d))
    eps = noise.normal((cfg.s_h, rows, p.dims.h_dim), SLOT_H).reshape(cfg.s_h * rows, p.dims.h_dim)
    h = rsample(_tile_gaussian(qh, cfg.s_h), eps)
    lf = elbo_full(p, _tile(d, cfg.s_h), h, cfg, noise)
    out = _slot_mean(lf, cfg.s_h, rows) + entropy(qh)
    return _unpack(out, single)


def _check_batches(labeled, unlabeled, mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    has_l = labeled is not None and len(labeled[0]) > 0
    has_u = unlabeled is not None and len(unlabeled) > 0
    if mode == "hybrid" and not (has_l and has_u):
        raise ValueError("hybrid mode needs a non-empty labeled and unlabeled batch; request mode='full' or 'partial'")
    if mode == "full" and not has_l:
        raise ValueError("full mode needs a non-empty labeled batch")
    if mode == "partial" and not has_u:
        raise ValueError("partial mode needs a non-empty unlabeled batch")
    return mode in ("hybrid", "full"), mode in ("hybrid", "partial")


def batch_bounds(p, labeled, unlabeled, cfg=EstimatorConfig(), noise=None, mode="hybrid"):
    """Per-row bound values ``(L_F values or None, L_P values or None)``.

    ``labeled`` is a pair of row batches ``(d, h)``, ``unlabeled`` a row batch
    of images.  Each side draws from its own noise stream.
    """
    noise = NoiseSource(0) if noise is None else noise
    use_l, use_u = _check_batches(labeled, unlabeled, mode)
    lf = elbo_full(p, labeled[0], labeled[1], cfg, noise.child(STREAM_LABELED)) if use_l else None
    lp = elbo_partial(p, unlabeled, cfg, noise.child(STREAM_UNLABELED)) if use_u else None
    return lf, lp


def hybrid_objective(lf: Tensor | None, lp: Tensor | None) -> Tensor:
    """Negated equally weighted bound: -(mean L_F + mean L_P)."""
    parts = [ad.mean(v) for v in (lf, lp) if v is not None]
    if not parts:
        raise ValueError("no bound values to combine")
    total = parts[0] if len(parts) == 1 else parts[0] + parts[1]
    return -total


def summed_objective(lf: Tensor | None, lp: Tensor | None) -> Tensor:
    """Negated unweighted bound: -(sum L_F + sum L_P)."""
    parts = [ad.sum(v) for v in (lf, lp) if v is not None and v.size > 0]
    if not parts:
        raise ValueError("both batches are empty")
    total = parts[0] if len(parts) == 1 else parts[0] + parts[1]
    return -total


def hybrid_loss(p, labeled, unlabeled, cfg=EstimatorConfig(), noise=None, mode="hybrid") -> Tensor:
    return hybrid_objective(*batch_bounds(p, labeled, unlabeled, cfg, noise, mode))


def summed_loss(p, labeled, unlabeled, cfg=EstimatorConfig(), noise=None) -> Tensor:
    has_l = labeled is not None and len(labeled[0]) > 0
    has_u = unlabeled is not None and len(unlabeled) > 0
    if not (has_l or has_u):
        raise ValueError("summed_loss needs at least one non-empty batch")
    mode = "hybrid" if has_l and has_u else ("full" if has_l else "partial")
    return summed_objective(*batch_bounds(p, labeled, unlabeled, cfg, noise, mode))
