"""
Parameter and Multi-Add accounting
Walks the EPNet layout by shape only; no tensors are allocated.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np

from core.conv_ops import conv_output_size
from models.config import EPNetConfig
from models.epnet import (
    ECA_KERNEL, ESAB_POOL_KERNEL, ESAB_POOL_STRIDE, check_pyramid_size, padded_size, param_specs,
)
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION = (720, 1280)  # (height, width) of the SR output
BREAKDOWN_KEYS = ("shallow", "pfem.lfeb", "pfem.swin", "pfem.esab", "espm", "recon")
ABLATION_SCALE = 2


def parse_resolution(text: str) -> Tuple[int, int]:
    """'1280x720' -> (720, 1280)"""
    try:
        width, height = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"Resolution must look like WIDTHxHEIGHT, got {text!r}") from None
    if width < 1 or height < 1:
        raise ConfigError(f"Resolution must be positive, got {text!r}")
    return height, width


def conv_macs(h: int, w: int, cin: int, cout: int, k: int, stride: int = 1, padding: int = -1) -> int:
    """One multiply-accumulate per output element per kernel tap"""
    if padding < 0:
        padding = k // 2
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    return ho * wo * cout * cin * k * k


def _module_key(name: str) -> str:
    parts = name.split(".")
    if parts[0] == "pfem":
        return f"pfem.{parts[2]}"
    return parts[0]


def count_params(config: EPNetConfig) -> int:
    """Scalar parameters of one instance, without materializing it"""
    return sum(int(np.prod(shape)) for _, shape, _ in param_specs(config))


def params_breakdown(config: EPNetConfig) -> Dict[str, int]:
    """Parameter count per top-level block"""
    counts = {key: 0 for key in BREAKDOWN_KEYS}
    for name, shape, _ in param_specs(config):
        counts[_module_key(name)] += int(np.prod(shape))
    return counts


def _lfeb_macs(h: int, w: int, c: int) -> int:
    return 2 * conv_macs(h, w, c, c, 3) + ECA_KERNEL * c


def _swin_macs(h: int, w: int, config: EPNetConfig) -> int:
    c, win = config.base_channels, config.window_size
    hp, wp = padded_size(h, win), padded_size(w, win)
    projections = 4 * conv_macs(h, w, c, c, 1)
    attention = 2 * hp * wp * win * win * c  # QK^T and attn.V
    mlp = 2 * conv_macs(h, w, c, config.mlp_hidden, 1)
    return projections + attention + mlp


def _esab_macs(h: int, w: int, config: EPNetConfig) -> int:
    c, r = config.base_channels, config.esab_channels
    total = conv_macs(h, w, c, r, 1)
    total += conv_macs(h, w, r, r, 3, stride=2, padding=1)
    bh, bw = conv_output_size(h, 3, 2, 1), conv_output_size(w, 3, 2, 1)
    if min(bh, bw) >= ESAB_POOL_KERNEL:
        bh = conv_output_size(bh, ESAB_POOL_KERNEL, ESAB_POOL_STRIDE, 0)
        bw = conv_output_size(bw, ESAB_POOL_KERNEL, ESAB_POOL_STRIDE, 0)
    total += 2 * conv_macs(bh, bw, r, r, 3)
    total += conv_macs(h, w, r, c, 1)
    return total


def _espm_macs(h: int, w: int, config: EPNetConfig) -> int:
    c, levels = config.base_channels, config.pyramid_levels
    check_pyramid_size(h, w, levels)
    sizes = [(h, w)]
    total = 0
    for _ in range(1, levels):
        ph, pw = sizes[-1]
        total += conv_macs(ph, pw, c, c, 3, stride=2, padding=1)
        sizes.append((conv_output_size(ph, 3, 2, 1), conv_output_size(pw, 3, 2, 1)))
    for lh, lw in sizes:
        total += ECA_KERNEL * c + conv_macs(lh, lw, 2 * c, c, 1)
    for lh, lw in sizes[:-1]:
        total += conv_macs(lh, lw, c, c, 1)
    return total + conv_macs(h, w, c, c, 3)


def multi_adds_breakdown(config: EPNetConfig, out_h: int = DEFAULT_RESOLUTION[0],
                         out_w: int = DEFAULT_RESOLUTION[1]) -> Dict[str, int]:
    """Multiply-accumulates per block for one image, counted at LR resolution"""
    config.validate()
    s, c, n = config.scale, config.base_channels, config.n_pfem
    h, w = out_h // s, out_w // s
    if h < 1 or w < 1:
        raise ConfigError(f"Output resolution {out_w}x{out_h} is smaller than one LR pixel at x{s}")
    counts = {key: 0 for key in BREAKDOWN_KEYS}
    counts["shallow"] = conv_macs(h, w, 3, c, 3)
    if config.use_lfeb:
        counts["pfem.lfeb"] = n * _lfeb_macs(h, w, c)
    counts["pfem.swin"] = n * _swin_macs(h, w, config)
    if config.use_esab:
        counts["pfem.esab"] = n * _esab_macs(h, w, config)
    if config.use_espm:
        counts["espm"] = _espm_macs(h, w, config)
    counts["recon"] = conv_macs(h, w, c, 3 * s * s, 3)
    return counts


def count_multi_adds(config: EPNetConfig, out_h: int = DEFAULT_RESOLUTION[0],
                     out_w: int = DEFAULT_RESOLUTION[1]) -> int:
    """Total Multi-Adds for an out_h x out_w output"""
    return sum(multi_adds_breakdown(config, out_h, out_w).values())


@dataclass
class ComplexityReport:
    """Params and Multi-Adds with a per-module split"""

    params: int
    multi_adds: int
    out_h: int
    out_w: int
    breakdown: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        """JSON-ready view"""
        return {
            "params": self.params,
            "multi_adds": self.multi_adds,
            "resolution": f"{self.out_w}x{self.out_h}",
            "breakdown": {k: {"params": p, "multi_adds": m} for k, (p, m) in self.breakdown.items()},
        }

    def format_table(self) -> str:
        """Fixed-width block table for the terminal"""
        lines = [f"{'module':<12}{'params':>12}{'multi-adds':>18}"]
        for key, (p, m) in self.breakdown.items():
            lines.append(f"{key:<12}{p:>12,}{m:>18,}")
        lines.append(f"{'total':<12}{self.params:>12,}{self.multi_adds:>18,}")
        lines.append(f"(Multi-Adds at {self.out_w}x{self.out_h} output)")
        return "\n".join(lines)


def complexity_report(config: EPNetConfig, out_h: int = DEFAULT_RESOLUTION[0],
                      out_w: int = DEFAULT_RESOLUTION[1]) -> ComplexityReport:
    """Params and Multi-Adds, in total and per block"""
    params = params_breakdown(config)
    macs = multi_adds_breakdown(config, out_h, out_w)
    breakdown = {key: (params[key], macs[key]) for key in BREAKDOWN_KEYS}
    report = ComplexityReport(sum(params.values()), sum(macs.values()), out_h, out_w, breakdown)
    logger.info(f"📊 {report.params:,} params, {report.multi_adds / 1e9:.2f}G Multi-Adds "
                f"at {out_w}x{out_h} (x{config.scale})")
    return report


def pfem_sweep(config: EPNetConfig, max_n: int, out_h: int = DEFAULT_RESOLUTION[0],
               out_w: int = DEFAULT_RESOLUTION[1]) -> List[Tuple[int, int, int]]:
    """(n, params, multi_adds) for n = 1..max_n with everything else fixed"""
    if max_n < 1:
        raise ConfigError(f"PFEM sweep needs N >= 1, got {max_n}")
    rows = []
    for n in range(1, max_n + 1):
        variant = replace(config, n_pfem=n)
        rows.append((n, count_params(variant), count_multi_adds(variant, out_h, out_w)))
    return rows


def ablation_variants(config: EPNetConfig) -> Dict[str, EPNetConfig]:
    """The full model and one variant per removed block"""
    base = replace(config, scale=ABLATION_SCALE, use_espm=True, use_esab=True, use_lfeb=True)
    return {
        "full": base,
        "no-LFEB": replace(base, use_lfeb=False),
        "no-ESAB": replace(base, use_esab=False),
        "no-ESPM": replace(base, use_espm=False),
    }


def ablation_table(config: EPNetConfig, out_h: int = DEFAULT_RESOLUTION[0],
                   out_w: int = DEFAULT_RESOLUTION[1]) -> List[Tuple[str, int, int]]:
    """(variant, params, multi_adds) for the component ablation at x2"""
    return [(name, count_params(variant), count_multi_adds(variant, out_h, out_w))
            for name, variant in ablation_variants(config).items()]
