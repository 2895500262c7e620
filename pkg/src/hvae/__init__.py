"""Hybrid variational autoencoder trained on fully and partially observed data.

A small numpy implementation: reverse-mode autodiff, diagonal Gaussians, the
full and partial-observation bounds, synthetic landmark data, an SGD trainer
and numerical oracles that check the bounds and gradients.
"""

from .autodiff import Tensor, make_tensor
from .data import SceneConfig, SemiDataset, generate, load_dataset, make_dataset, save_dataset, split
from .gaussian import DiagGaussian, entropy, kl_to_standard_normal, log_pdf, rsample
from .networks import Dims, ModelParams, decode, encode_z, init_params, predict_h
from .objectives import EstimatorConfig, NoiseSource, elbo_full, elbo_partial, hybrid_loss, summed_loss
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "DiagGaussian",
    "Dims",
    "EstimatorConfig",
    "ModelParams",
    "NoiseSource",
    "SceneConfig",
    "SemiDataset",
    "Tensor",
    "TrainConfig",
    "decode",
    "elbo_full",
    "elbo_partial",
    "encode_z",
    "entropy",
    "generate",
    "hybrid_loss",
    "init_params",
    "kl_to_standard_normal",
    "load_checkpoint",
    "load_dataset",
    "log_pdf",
    "make_dataset",
    "make_tensor",
    "predict_h",
    "rsample",
    "save_checkpoint",
    "save_dataset",
    "split",
    "summed_loss",
    "train",
]
