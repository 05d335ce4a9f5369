"""
Adam optimizer and EMA shadow weights
Both are functional: they return fresh parameter sets and states.
"""
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from core.tensor import Tensor
from models.config import TrainConfig
from models.epnet import ModelParams
from utils.errors import DimensionError, NumericError

Grads = Mapping[str, Optional[np.ndarray]]


@dataclass
class AdamState:
    """First/second moment buffers per parameter plus the step counter"""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
        )


def collect_grads(params: ModelParams) -> Dict[str, Optional[np.ndarray]]:
    return {name: p.grad for name, p in params.items()}


def adam_step(params: ModelParams, grads: Grads, state: AdamState,
              config: TrainConfig) -> Tuple[ModelParams, AdamState]:
    """Bias-corrected Adam; a missing gradient counts as zero"""
    for name, grad in grads.items():
        if grad is not None and not np.all(np.isfinite(grad)):
            raise NumericError(f"Non-finite gradient in parameter {name} at step {state.t + 1}")

    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params: ModelParams = {}
    new_state = AdamState(t=t)
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.data)
        if grad.shape != param.shape:
            raise DimensionError(f"Gradient for {name} has shape {grad.shape}, parameter {param.shape}")
        if config.weight_decay:
            grad = grad + config.weight_decay * param.data
        m = b1 * state.m[name] + (1.0 - b1) * grad
        v = b2 * state.v[name] + (1.0 - b2) * grad * grad
        update = config.lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        new_params[name] = Tensor((param.data - update).astype(param.dtype), requires_grad=True)
        new_state.m[name] = m.astype(param.dtype)
        new_state.v[name] = v.astype(param.dtype)
    return new_params, new_state


@dataclass
class EmaState:
    """Shadow copy of every parameter; never enters a gradient computation"""

    shadow: Dict[str, np.ndarray]
    decay: float

    @classmethod
    def from_params(cls, params: ModelParams, decay: float) -> "EmaState":
        return cls({name: p.data.copy() for name, p in params.items()}, decay)

    def as_params(self) -> ModelParams:
        return {name: Tensor(value.copy()) for name, value in self.shadow.items()}


def ema_update(ema: EmaState, params: ModelParams) -> EmaState:
    """shadow <- decay * shadow + (1 - decay) * param"""
    d = ema.decay
    shadow = {}
    for name, value in ema.shadow.items():
        current = params[name].data
        if current.shape != value.shape:
            raise DimensionError(f"EMA shadow for {name} has shape {value.shape}, parameter {current.shape}")
        shadow[name] = (d * value + (1.0 - d) * current).astype(value.dtype)
    return EmaState(shadow, d)
