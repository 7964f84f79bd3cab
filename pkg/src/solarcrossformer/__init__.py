"""Multimodal transformer for intraday GHI forecasting on a station network,
with a small numpy reverse-mode autodiff engine underneath."""

from .model import ModelConfig, ModelInputs, SolarCrossFormer, load_checkpoint, save_checkpoint
from .training import TrainConfig, Trainer

__all__ = ["ModelConfig", "ModelInputs", "SolarCrossFormer", "TrainConfig", "Trainer",
           "load_checkpoint", "save_checkpoint"]
__version__ = "0.1.0"
