"""Feedback pyramid attention network (FPAN) for single-image super-resolution.

A small numpy engine: autodiff tensors, the FPAN architecture, an L1/Adam
training loop, degradation models and PSNR/SSIM evaluation.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .imaging import DegradationSpec, degrade, load_png, save_png, self_ensemble_sr, super_resolve
from .metrics import count_flops, count_params, psnr_y, ssim_y
from .model import FPAN, ModelConfig, paper_config, preset
from .tensor import Tensor, no_grad, precision
from .training import PairDataset, TrainConfig, train

__all__ = [
    "FPAN",
    "DegradationSpec",
    "ModelConfig",
    "PairDataset",
    "Tensor",
    "TrainConfig",
    "count_flops",
    "count_params",
    "degrade",
    "load_checkpoint",
    "load_png",
    "no_grad",
    "paper_config",
    "precision",
    "preset",
    "psnr_y",
    "save_checkpoint",
    "save_png",
    "self_ensemble_sr",
    "ssim_y",
    "super_resolve",
    "train",
]

__version__ = "0.1.0"
