"""Style hallucination and hyperbolic consistency for a small
selective-state-space image classifier, with a synthetic fine-grained
domain-generalization benchmark."""

from .config import RunConfig
from .data import DomainStyle, SyntheticConfig, generate_dataset, read_split
from .encoder import Encoder, EncoderConfig, selective_scan
from .losses import cls_loss, hmc_loss, total_loss
from .poincare import distance, exp_map_0, exp_map_v, mobius_add, project_to_ball
from .style import compute_style, extrapolate_range, fit_slope, hallucinate, sample_style
from .tensor import Tensor
from .train import evaluate, style_export, train

__version__ = "0.1.0"

__all__ = [
    "DomainStyle",
    "Encoder",
    "EncoderConfig",
    "RunConfig",
    "SyntheticConfig",
    "Tensor",
    "cls_loss",
    "compute_style",
    "distance",
    "evaluate",
    "exp_map_0",
    "exp_map_v",
    "extrapolate_range",
    "fit_slope",
    "generate_dataset",
    "hallucinate",
    "hmc_loss",
    "mobius_add",
    "project_to_ball",
    "read_split",
    "sample_style",
    "selective_scan",
    "style_export",
    "total_loss",
    "train",
]
