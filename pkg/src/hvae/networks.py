"""Encoder q(z|d,h), joint decoder p(d,h|z) and predictor q(h|d).

Networks are plain fully connected stacks stored as named weight/bias blocks
inside :class:`ModelParams`.  Inputs may be a single vector ``(k,)`` or a batch
of rows ``(rows, k)``; outputs follow the same leading shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gaussian import DiagGaussian

DEFAULT_HIDDEN = 256

# stacks whose outputs are intermediate features and therefore rectified
FEATURE_STACKS = ("encoder.d", "encoder.h", "decoder.trunk")

STACK_ORDER = (
    "encoder.d",
    "encoder.h",
    "encoder.joint",
    "decoder.trunk",
    "decoder.d",
    "decoder.h",
    "decoder.mask",
    "predictor",
)


@dataclass(frozen=True)
class Dims:
    d_dim: int
    h_dim: int
    z_dim: int
    depth_mode: bool = False

    def __post_init__(self):
        for name in ("d_dim", "h_dim", "z_dim"):
            value = getattr(self, name)
            if int(value) != value or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths from input to output; ReLU between layers."""

    layer_widths: tuple

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        object.__setattr__(self, "layer_widths", widths)


def default_specs(dims: Dims, hidden: int = DEFAULT_HIDDEN) -> dict:
    w = hidden
    specs = {
        "encoder.d": MlpSpec((dims.d_dim, w)),
        "encoder.h": MlpSpec((dims.h_dim, w, w, w)),
        "encoder.joint": MlpSpec((2 * w, w, 2 * dims.z_dim)),
        "decoder.trunk": MlpSpec((dims.z_dim, w, w)),
        "decoder.d": MlpSpec((w, 2 * dims.d_dim)),
        "decoder.h": MlpSpec((w, w, 2 * dims.h_dim)),
        "predictor": MlpSpec((dims.d_dim, w, w, 2 * dims.h_dim)),
    }
    if dims.depth_mode:
        specs["decoder.mask"] = MlpSpec((w, dims.d_dim))
    return specs


def _check_specs(dims: Dims, specs: dict):
    needed = [s for s in STACK_ORDER if s != "decoder.mask" or dims.depth_mode]
    missing = [s for s in needed if s not in specs]
    if missing:
        raise ValueError(f"missing MLP specs for {missing}")
    io = {
        "encoder.d": (dims.d_dim, None),
        "encoder.h": (dims.h_dim, None),
        "encoder.joint": (
            specs["encoder.d"].layer_widths[-1] + specs["encoder.h"].layer_widths[-1],
            2 * dims.z_dim,
        ),
        "decoder.trunk": (dims.z_dim, None),
        "decoder.d": (specs["decoder.trunk"].layer_widths[-1], 2 * dims.d_dim),
        "decoder.h": (specs["decoder.trunk"].layer_widths[-1], 2 * dims.h_dim),
        "decoder.mask": (specs["decoder.trunk"].layer_widths[-1], dims.d_dim),
        "predictor": (dims.d_dim, 2 * dims.h_dim),
    }
    for name in needed:
        widths = specs[name].layer_widths
        n_in, n_out = io[name]
        if widths[0] != n_in or (n_out is not None and widths[-1] != n_out):
            raise ValueError(f"{name} widths {widths} inconsistent with dims {dims}")


@dataclass
class ModelParams:
    dims: Dims
    blocks: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.blocks.items())

    def __getitem__(self, name: str) -> Tensor:
        return self.blocks[name]

    def names(self) -> list:
        return list(self.blocks)

    def section(self, prefix: str) -> dict:
        return {k: v for k, v in self.blocks.items() if k.startswith(prefix + ".")}

    @property
    def encoder(self) -> dict:
        return self.section("encoder")

    @property
    def decoder(self) -> dict:
        return self.section("decoder")

    @property
    def predictor(self) -> dict:
        return self.section("predictor")

    def num_layers(self, stack: str) -> int:
        i = 0
        while f"{stack}.{i}.W" in self.blocks:
            i += 1
        return i

    def zero_grad(self):
        for t in self.blocks.values():
            t.grad = None

    def frozen(self) -> "ModelParams":
        """Same arrays, no gradient tracking (for evaluation)."""
        return ModelParams(self.dims, {k: Tensor(v.data) for k, v in self.blocks.items()})

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.dims, {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.blocks.items()}
        )

    def arrays(self) -> dict:
        return {k: v.data for k, v in self.blocks.items()}


def init_params(dims: Dims, specs: dict | None = None, seed: int = 0, hidden: int = DEFAULT_HIDDEN) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    if specs is None:
        specs = default_specs(dims, hidden)
    _check_specs(dims, specs)
    rng = np.random.default_rng(seed)
    blocks = {}
    for stack in STACK_ORDER:
        if stack not in specs or (stack == "decoder.mask" and not dims.depth_mode):
            continue
        widths = specs[stack].layer_widths
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            a = math.sqrt(6.0 / (fan_in + fan_out))
            blocks[f"{stack}.{i}.W"] = Tensor(rng.uniform(-a, a, size=(fan_in, fan_out)), requires_grad=True)
            blocks[f"{stack}.{i}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)
    return ModelParams(dims, blocks)


def mlp(p: ModelParams, stack: str, x) -> Tensor:
    n = p.num_layers(stack)
    if n == 0:
        raise KeyError(f"no parameters for stack {stack!r}")
    out = ad.constant(x)
    for i in range(n):
        out = ad.add_bias(ad.matmul(out, p.blocks[f"{stack}.{i}.W"]), p.blocks[f"{stack}.{i}.b"])
        if i < n - 1 or stack in FEATURE_STACKS:
            out = ad.relu(out)
    return out


def _as_input(x, width: int, what: str) -> Tensor:
    x = ad.constant(x)
    if x.ndim not in (1, 2) or x.shape[-1] != width:
        raise ValueError(f"{what} must have trailing dimension {width}, got shape {x.shape}")
    return x


def _split_gaussian(out: Tensor, k: int) -> DiagGaussian:
    return DiagGaussian(ad.slice(out, 0, k), ad.slice(out, k, 2 * k))


def encode_z(p: ModelParams, d, h) -> DiagGaussian:
    d = _as_input(d, p.dims.d_dim, "d")
    h = _as_input(h, p.dims.h_dim, "h")
    if d.shape[:-1] != h.shape[:-1]:
        raise ValueError(f"d rows {d.shape[:-1]} and h rows {h.shape[:-1]} differ")
    feats = ad.concat([mlp(p, "encoder.d", d), mlp(p, "encoder.h", h)], axis=-1)
    return _split_gaussian(mlp(p, "encoder.joint", feats), p.dims.z_dim)


def decode_trunk(p: ModelParams, z) -> Tensor:
    z = _as_input(z, p.dims.z_dim, "z")
    return mlp(p, "decoder.trunk", z)


def decode_heads(p: ModelParams, trunk: Tensor) -> tuple:
    gd = _split_gaussian(mlp(p, "decoder.d", trunk), p.dims.d_dim)
    gh = _split_gaussian(mlp(p, "decoder.h", trunk), p.dims.h_dim)
    return gd, gh


def decode(p: ModelParams, z) -> tuple:
    """Return (distribution over d, distribution over h) given z."""
    return decode_heads(p, decode_trunk(p, z))


def predict_h(p: ModelParams, d) -> DiagGaussian:
    d = _as_input(d, p.dims.d_dim, "d")
    return _split_gaussian(mlp(p, "predictor", d), p.dims.h_dim)
