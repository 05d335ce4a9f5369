"""
EPNet: shallow extraction, PFEM (LFEB -> windowed attention -> ESAB),
ESPM (DCAB pyramid) and pixel-shuffle reconstruction.

The reconstruction head sees the sum of the PFEM and ESPM branches, both fed by the shallow features.
"""
import logging
import math
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from core.attention_ops import (
    layer_norm, matmul, merge_heads, shifted_window_mask, softmax, split_heads,
    window_partition, window_reverse, cyclic_shift,
)
from core.conv_ops import (
    channel_conv1d, conv2d, crop, global_avg_pool, max_pool2d, pad_reflect,
    pixel_shuffle, resize_nearest, upsample_nearest,
)
from core.tensor import (
    Tensor, add, channel_concat, channel_split, gelu, mul, no_grad, scalar_mul, sigmoid,
)
from models.config import EPNetConfig
from utils.errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)

ModelParams = Dict[str, Tensor]
ParamSpec = Tuple[str, Tuple[int, ...], str]
GateValue = Union[float, np.ndarray]

ECA_KERNEL = 3
ESAB_POOL_KERNEL = 7
ESAB_POOL_STRIDE = 3
ATTN_INIT_STD = 0.02


# ------------------------------------------------------------------ parameter layout

def _conv_spec(prefix: str, cout: int, cin: int, k: int, init: str = "kaiming") -> List[ParamSpec]:
    return [(f"{prefix}.weight", (cout, cin, k, k), init), (f"{prefix}.bias", (cout,), "zeros")]


def dcab_specs(prefix: str, config: EPNetConfig) -> List[ParamSpec]:
    """ECA gate kernels for both halves plus the 2C -> C fusion conv"""
    c = config.base_channels
    return [
        (f"{prefix}.gate_alpha.weight", (ECA_KERNEL,), "kaiming"),
        (f"{prefix}.gate_beta.weight", (ECA_KERNEL,), "kaiming"),
        *_conv_spec(f"{prefix}.fuse", c, 2 * c, 1),
    ]


def espm_specs(config: EPNetConfig) -> List[ParamSpec]:
    """Stride-2 downs, one DCAB per level, lateral 1x1s and the final 3x3"""
    c, levels = config.base_channels, config.pyramid_levels
    specs: List[ParamSpec] = []
    for lvl in range(1, levels):
        specs += _conv_spec(f"espm.down.{lvl}", c, c, 3)
    for lvl in range(levels):
        specs += dcab_specs(f"espm.dcab.{lvl}", config)
    for lvl in range(levels - 1):
        specs += _conv_spec(f"espm.lateral.{lvl}", c, c, 1)
    specs += _conv_spec("espm.final", c, c, 3)
    return specs


def lfeb_specs(prefix: str, config: EPNetConfig) -> List[ParamSpec]:
    """conv -> GELU -> conv, then the ECAM kernel"""
    c = config.base_channels
    return [
        *_conv_spec(f"{prefix}.conv1", c, c, 3),
        *_conv_spec(f"{prefix}.conv2", c, c, 3),
        (f"{prefix}.ecam.weight", (ECA_KERNEL,), "kaiming"),
    ]


def swin_specs(prefix: str, config: EPNetConfig) -> List[ParamSpec]:
    """Two channel norms, Q/K/V/proj 1x1s and the MLP"""
    c, hidden = config.base_channels, config.mlp_hidden
    specs: List[ParamSpec] = [(f"{prefix}.norm1.gamma", (c,), "ones"), (f"{prefix}.norm1.beta", (c,), "zeros")]
    for proj in ("q", "k", "v", "proj"):
        specs += _conv_spec(f"{prefix}.attn.{proj}", c, c, 1, "normal")
    specs += [(f"{prefix}.norm2.gamma", (c,), "ones"), (f"{prefix}.norm2.beta", (c,), "zeros")]
    specs += _conv_spec(f"{prefix}.mlp.fc1", hidden, c, 1, "normal")
    specs += _conv_spec(f"{prefix}.mlp.fc2", c, hidden, 1, "normal")
    return specs


def esab_specs(prefix: str, config: EPNetConfig) -> List[ParamSpec]:
    """reduce C -> C/4, strided down, two refine convs, expand back to C"""
    c, r = config.base_channels, config.esab_channels
    return [
        *_conv_spec(f"{prefix}.reduce", r, c, 1),
        *_conv_spec(f"{prefix}.down", r, r, 3),
        *_conv_spec(f"{prefix}.refine1", r, r, 3),
        *_conv_spec(f"{prefix}.refine2", r, r, 3),
        *_conv_spec(f"{prefix}.expand", c, r, 1),
    ]


def pfem_submodule_specs(prefix: str, config: EPNetConfig) -> List[ParamSpec]:
    """LFEB, attention and ESAB of one submodule, minus ablated blocks"""
    specs: List[ParamSpec] = []
    if config.use_lfeb:
        specs += lfeb_specs(f"{prefix}.lfeb", config)
    specs += swin_specs(f"{prefix}.swin", config)
    if config.use_esab:
        specs += esab_specs(f"{prefix}.esab", config)
    return specs


def pfem_prefixes(config: EPNetConfig) -> List[str]:
    """Parameter prefix of each PFEM submodule, in execution order"""
    if config.share_pfem_weights:
        return ["pfem.shared"] * config.n_pfem
    return [f"pfem.{i}" for i in range(config.n_pfem)]


def param_specs(config: EPNetConfig) -> List[ParamSpec]:
    """Every parameter of one EPNet instance, in a stable order"""
    config.validate()
    c, s = config.base_channels, config.scale
    specs = _conv_spec("shallow.conv", c, 3, 3)
    for prefix in dict.fromkeys(pfem_prefixes(config)):
        specs += pfem_submodule_specs(prefix, config)
    if config.use_espm:
        specs += espm_specs(config)
    specs += _conv_spec("recon.conv", 3 * s * s, c, 3)
    return specs


def init_params(config: EPNetConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Kaiming-uniform fan-in convs (a = sqrt 5, bound 1/sqrt(fan_in)), N(0, 0.02) attention/MLP
    projections, zero biases
    """
    rng = np.random.default_rng(seed)
    params: ModelParams = {}
    for name, shape, init in param_specs(config):
        if init == "kaiming":
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            bound = 1.0 / math.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        elif init == "normal":
            data = rng.normal(0.0, ATTN_INIT_STD, size=shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=True)
    return params


def _p(params: ModelParams, name: str) -> Tensor:
    try:
        return params[name]
    except KeyError:
        raise ConfigError(f"Parameter set has no entry {name!r}") from None


def _conv(x: Tensor, params: ModelParams, prefix: str, stride: int = 1) -> Tensor:
    weight = _p(params, f"{prefix}.weight")
    return conv2d(x, weight, params.get(f"{prefix}.bias"), stride=stride, padding=weight.shape[2] // 2)


# ------------------------------------------------------------------ blocks

def eca_gate(x: Tensor, kernel: Tensor) -> Tensor:
    """Pooled descriptor -> 1-D conv across channels -> sigmoid, shape [N, C, 1, 1]"""
    return sigmoid(channel_conv1d(global_avg_pool(x), kernel))


def shallow_extract(lr: Tensor, params: ModelParams, config: EPNetConfig) -> Tensor:
    """One 3x3 conv lifting RGB to C feature channels"""
    if lr.ndim != 4 or lr.shape[1] != 3:
        raise DimensionError(f"shallow_extract: axis 1 (C) must be 3, got shape {lr.shape}")
    return _conv(lr, params, "shallow.conv")


def _gate_tensor(value: GateValue, like: Tensor) -> Tensor:
    n, c = like.shape[0], like.shape[1]
    gate = np.asarray(value, dtype=like.dtype)
    if gate.ndim:
        gate = gate.reshape(-1, 1, 1)
    return Tensor(np.broadcast_to(gate, (n, c, 1, 1)).copy())


def dcab_forward(x: Tensor, params: ModelParams, config: EPNetConfig, prefix: str = "espm.dcab.0",
                 gates: Optional[Tuple[GateValue, GateValue]] = None, return_crossover: bool = False):
    """Weighted combinatorial crossover with dynamic channel gates.

    ``gates`` replaces the computed (alpha, beta) with fixed values.
    """
    if x.shape[1] < 2:
        raise ConfigError(f"DCAB needs at least 2 channels, got {x.shape[1]}")
    x1, x2 = channel_split(x, config.split_channels)
    if gates is None:
        alpha = eca_gate(x1, _p(params, f"{prefix}.gate_alpha.weight"))
        beta = eca_gate(x2, _p(params, f"{prefix}.gate_beta.weight"))
    else:
        alpha, beta = _gate_tensor(gates[0], x1), _gate_tensor(gates[1], x2)
    crossover = channel_concat([mul(x1, alpha), x2, x1, mul(x2, beta)])
    out = add(x, _conv(crossover, params, f"{prefix}.fuse"))
    if return_crossover:
        return out, crossover
    return out


def check_pyramid_size(h: int, w: int, levels: int):
    """Raise ConfigError naming the first level the input cannot reach"""
    need = 2 ** (levels - 1)
    if h >= need and w >= need:
        return
    limiting = int(math.floor(math.log2(max(min(h, w), 1)))) + 1
    raise ConfigError(
        f"ESPM input {h}x{w} too small for {levels} pyramid levels: "
        f"level {limiting} needs at least {2 ** limiting}x{2 ** limiting}"
    )


def espm_forward(f_base: Tensor, params: ModelParams, config: EPNetConfig) -> Tensor:
    """FPN-style pyramid of DCABs with nearest top-down merges"""
    levels = config.pyramid_levels
    check_pyramid_size(f_base.shape[2], f_base.shape[3], levels)
    pyramid = [f_base]
    for lvl in range(1, levels):
        pyramid.append(_conv(pyramid[-1], params, f"espm.down.{lvl}", stride=2))
    feats = [dcab_forward(level, params, config, f"espm.dcab.{lvl}") for lvl, level in enumerate(pyramid)]

    top = feats[-1]
    for lvl in range(levels - 2, -1, -1):
        h, w = feats[lvl].shape[2], feats[lvl].shape[3]
        lateral = _conv(feats[lvl], params, f"espm.lateral.{lvl}")
        top = add(lateral, upsample_nearest(top, 2, h, w))
    return _conv(top, params, "espm.final")


def ecam(y: Tensor, kernel: Tensor) -> Tensor:
    """Rescale channels by their ECA gate"""
    return mul(y, eca_gate(y, kernel))


def lfeb_forward(x: Tensor, params: ModelParams, config: EPNetConfig, prefix: str = "pfem.0.lfeb") -> Tensor:
    """Local feature block with ECAM channel attention and a residual add"""
    y = _conv(gelu(_conv(x, params, f"{prefix}.conv1")), params, f"{prefix}.conv2")
    return add(x, ecam(y, _p(params, f"{prefix}.ecam.weight")))


def padded_size(size: int, window: int) -> int:
    """Smallest multiple of ``window`` not below ``size``"""
    return -(-size // window) * window


def window_attention(y: Tensor, params: ModelParams, config: EPNetConfig, prefix: str,
                     shifted: bool = False, return_weights: bool = False):
    """(S)W-MSA on an already normalized map; returns the projected output"""
    n, c, h, w = y.shape
    heads, win = config.num_heads, config.window_size
    if c % heads:
        raise DimensionError(f"window_attention: axis 1 (C) of size {c} not divisible by {heads} heads")
    hp, wp = padded_size(h, win), padded_size(w, win)
    shift = win // 2 if shifted else 0

    def to_windows(t: Tensor) -> Tensor:
        t = pad_reflect(t, hp - h, wp - w)
        if shift:
            t = cyclic_shift(t, -shift, -shift)
        return split_heads(window_partition(t, win), heads)

    q = to_windows(_conv(y, params, f"{prefix}.q"))
    k = to_windows(_conv(y, params, f"{prefix}.k"))
    v = to_windows(_conv(y, params, f"{prefix}.v"))
    scores = scalar_mul(matmul(q, k, transpose_b=True), 1.0 / math.sqrt(c // heads))
    if shift:
        mask = np.tile(shifted_window_mask(hp, wp, win, shift), (n, 1, 1, 1))
        scores = add(scores, Tensor(mask, dtype=scores.dtype))
    attn = softmax(scores, axis=-1)
    out = window_reverse(merge_heads(matmul(attn, v)), win, hp, wp)
    if shift:
        out = cyclic_shift(out, shift, shift)
    out = _conv(crop(out, h, w), params, f"{prefix}.proj")
    if return_weights:
        return out, attn
    return out


def swin_block_forward(x: Tensor, params: ModelParams, config: EPNetConfig,
                       prefix: str = "pfem.0.swin", shifted: bool = False) -> Tensor:
    """Pre-norm (S)W-MSA then pre-norm GELU MLP, each with a residual add"""
    y = layer_norm(x, _p(params, f"{prefix}.norm1.gamma"), _p(params, f"{prefix}.norm1.beta"))
    x = add(x, window_attention(y, params, config, f"{prefix}.attn", shifted))
    y = layer_norm(x, _p(params, f"{prefix}.norm2.gamma"), _p(params, f"{prefix}.norm2.beta"))
    y = _conv(gelu(_conv(y, params, f"{prefix}.mlp.fc1")), params, f"{prefix}.mlp.fc2")
    return add(x, y)


def esab_forward(x: Tensor, params: ModelParams, config: EPNetConfig, prefix: str = "pfem.0.esab",
                 return_map: bool = False):
    """Spatial attention: x + x * sigmoid(expand(upsample(refine(pool(down(reduce(x)))))))"""
    n, c, h, w = x.shape
    if c < 4:
        raise ConfigError(f"ESAB needs at least 4 channels, got {c}")
    branch = _conv(_conv(x, params, f"{prefix}.reduce"), params, f"{prefix}.down", stride=2)
    if min(branch.shape[2], branch.shape[3]) >= ESAB_POOL_KERNEL:
        branch = max_pool2d(branch, ESAB_POOL_KERNEL, ESAB_POOL_STRIDE)
    branch = _conv(gelu(_conv(branch, params, f"{prefix}.refine1")), params, f"{prefix}.refine2")
    branch = resize_nearest(branch, h, w)
    attention = sigmoid(_conv(branch, params, f"{prefix}.expand"))
    out = add(x, mul(x, attention))
    if return_map:
        return out, attention
    return out


def pfem_submodule(x: Tensor, params: ModelParams, config: EPNetConfig, prefix: str, shifted: bool) -> Tensor:
    """LFEB -> attention -> ESAB; odd submodules use shifted windows"""
    if config.use_lfeb:
        x = lfeb_forward(x, params, config, f"{prefix}.lfeb")
    x = swin_block_forward(x, params, config, f"{prefix}.swin", shifted)
    if config.use_esab:
        x = esab_forward(x, params, config, f"{prefix}.esab")
    return x


def pfem_forward(f_base: Tensor, params: ModelParams, config: EPNetConfig) -> Tensor:
    """n submodules in sequence on the shallow features"""
    x = f_base
    for i, prefix in enumerate(pfem_prefixes(config)):
        x = pfem_submodule(x, params, config, prefix, shifted=i % 2 == 1)
    return x


def reconstruct(features: Tensor, params: ModelParams, config: EPNetConfig) -> Tensor:
    """3x3 conv to 3*s*s channels, then pixel shuffle"""
    return pixel_shuffle(_conv(features, params, "recon.conv"), config.scale)


def epnet_forward(lr: Tensor, params: ModelParams, config: EPNetConfig, clamp: bool = False) -> Tensor:
    """[N, 3, H, W] in [0, 1] -> [N, 3, H*scale, W*scale]; clamp only for evaluation"""
    f_base = shallow_extract(lr, params, config)
    features = pfem_forward(f_base, params, config)
    if config.use_espm:
        features = add(features, espm_forward(f_base, params, config))
    sr = reconstruct(features, params, config)
    if clamp:
        return Tensor(np.clip(sr.data, 0.0, 1.0))
    return sr


class EPNet:
    """One EPNet instance: config plus its named parameter set"""

    def __init__(self, config: EPNetConfig, params: Optional[ModelParams] = None,
                 seed: int = 0, dtype=np.float32):
        self.config = config.validate()
        self.params = params if params is not None else init_params(config, seed, dtype)

    def upscale(self, lr: np.ndarray) -> np.ndarray:
        """Evaluation pass on an [N, 3, H, W] array, clamped to [0, 1]"""
        with no_grad():
            return epnet_forward(Tensor(lr), self.params, self.config, clamp=True).data

    def num_params(self) -> int:
        """Total scalar parameter count"""
        return sum(t.numel for t in self.params.values())
