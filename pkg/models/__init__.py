"""Models module"""
from .config import EPNetConfig, TrainConfig
from .epnet import EPNet, epnet_forward, init_params
from .model_manager import ModelManager

__all__ = ['EPNetConfig', 'TrainConfig', 'EPNet', 'epnet_forward', 'init_params', 'ModelManager']
