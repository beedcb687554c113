"""Frequency-assisted transformer for detecting and grounding image-text manipulation."""
from .config import ModelConfig, RunConfig
from .model import UFAFormer

__all__ = ["ModelConfig", "RunConfig", "UFAFormer"]
__version__ = "0.1.0"
