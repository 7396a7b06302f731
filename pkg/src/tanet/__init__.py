"""All-in-one adverse weather image restoration on a numpy/numba tensor core."""

from tanet.backend import active_backend, default_dtype, set_backend, set_default_dtype
from tanet.blocks import (
    GDAModule,
    GSAModule,
    LPAModule,
    NetworkConfig,
    TABlock,
    TANetModel,
    VARIANTS,
    build_ablation_variant,
    desk_config,
    paper_scale_config,
    param_count,
)
from tanet.losses import LossConfig, charbonnier, fft_loss, psnr, total_loss
from tanet.tensor import ComplexGrid, GradTape, ShapeError, Tensor, backward, fft2d, ifft2d, no_grad

__version__ = "0.1.0"

__all__ = [
    "ComplexGrid",
    "GDAModule",
    "GSAModule",
    "GradTape",
    "LPAModule",
    "LossConfig",
    "NetworkConfig",
    "ShapeError",
    "TABlock",
    "TANetModel",
    "Tensor",
    "VARIANTS",
    "active_backend",
    "backward",
    "build_ablation_variant",
    "charbonnier",
    "default_dtype",
    "desk_config",
    "fft2d",
    "fft_loss",
    "ifft2d",
    "no_grad",
    "paper_scale_config",
    "param_count",
    "psnr",
    "set_backend",
    "set_default_dtype",
    "total_loss",
]
