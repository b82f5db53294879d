"""Unsupervised change detection between co-registered images from different sensors."""
from .config import ArchConfig, FilterConfig, LossToggles, MetricConfig, RunConfig, TrainConfig
from .model import DualDomainModel, init_parameters

__all__ = [
    "ArchConfig", "FilterConfig", "LossToggles", "MetricConfig", "RunConfig", "TrainConfig",
    "DualDomainModel", "init_parameters",
]
__version__ = "0.1.0"
