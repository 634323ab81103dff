"""himtrain: desk-scale U-Net training against the himforge dataset contract."""

from .config import EpochArtifacts, TrainConfig
from .model import build_model
from .train import predict, train

__all__ = ["TrainConfig", "EpochArtifacts", "build_model", "train", "predict"]

__version__ = "0.1.0"
