"""Toy contextual video codec with a guided transformer entropy model."""

from .config import LAMBDA_LADDER, ModelConfig, TrainConfig
from .model import VideoCodec, load_checkpoint, save_checkpoint
from .pipeline import LossBreakdown, decode_video, encode_video, train_stage, train_step

__all__ = [
    "LAMBDA_LADDER",
    "ModelConfig",
    "TrainConfig",
    "VideoCodec",
    "load_checkpoint",
    "save_checkpoint",
    "LossBreakdown",
    "encode_video",
    "decode_video",
    "train_stage",
    "train_step",
]

__version__ = "0.1.0"
