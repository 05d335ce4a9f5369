"""
EPNet model and training configuration
"""
import hashlib
import json
from dataclasses import asdict, dataclass
from fractions import Fraction

from utils.errors import ConfigError

SUPPORTED_SCALES = (2, 3, 4)
RESAMPLE_MODES = ("image", "patch")


@dataclass(frozen=True)
class EPNetConfig:
    """Architecture hyperparameters (desk-scale defaults)"""

    scale: int = 4
    base_channels: int = 32
    n_pfem: int = 4
    window_size: int = 8
    num_heads: int = 4
    pyramid_levels: int = 3
    dcab_split_ratio: float = 0.5
    mlp_ratio: float = 2.0
    share_pfem_weights: bool = False
    use_espm: bool = True
    use_esab: bool = True
    use_lfeb: bool = True

    @property
    def split_channels(self) -> int:
        """Channels routed to x1 inside every DCAB"""
        return int(Fraction(str(self.dcab_split_ratio)) * self.base_channels)

    @property
    def mlp_hidden(self) -> int:
        return int(Fraction(str(self.mlp_ratio)) * self.base_channels)

    @property
    def esab_channels(self) -> int:
        return self.base_channels // 4

    def validate(self) -> "EPNetConfig":
        c = self.base_channels
        if self.scale not in SUPPORTED_SCALES:
            raise ConfigError(f"scale must be one of {SUPPORTED_SCALES}, got {self.scale}")
        for name in ("base_channels", "n_pfem", "window_size", "num_heads", "pyramid_levels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if c < 2:
            raise ConfigError(f"base_channels must be >= 2 for the DCAB split, got {c}")
        if c % self.num_heads:
            raise ConfigError(f"base_channels {c} not divisible by num_heads {self.num_heads}")
        if not 0.0 < self.dcab_split_ratio < 1.0:
            raise ConfigError(f"dcab_split_ratio must lie in (0, 1), got {self.dcab_split_ratio}")
        split = Fraction(str(self.dcab_split_ratio)) * c
        if split.denominator != 1 or not 0 < split < c:
            raise ConfigError(f"base_channels * dcab_split_ratio = {float(split)} is not a valid channel count")
        if self.mlp_ratio <= 0 or self.mlp_hidden < 1:
            raise ConfigError(f"mlp_ratio must give a positive hidden width, got {self.mlp_ratio}")
        if self.use_esab and c < 4:
            raise ConfigError(f"ESAB needs base_channels >= 4, got {c}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True)
class TrainConfig:
    """Training recipe with a desk-scale iteration count"""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.0
    ema_decay: float = 0.999
    patch_size: int = 48
    batch_size: int = 32
    iterations: int = 2000
    seed: int = 0
    adam_eps: float = 1e-8
    log_every: int = 10
    augment: bool = True
    checkpoint_every: int = 0
    resample: str = "image"

    def validate(self) -> "TrainConfig":
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name in ("beta1", "beta2", "ema_decay"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {value}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        for name in ("patch_size", "batch_size", "iterations", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if self.adam_eps <= 0:
            raise ConfigError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.resample not in RESAMPLE_MODES:
            raise ConfigError(f"resample must be one of {RESAMPLE_MODES}, got {self.resample!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)
