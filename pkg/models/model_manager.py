"""
Model Manager - checkpoint containers and weight selection

Container layout (little-endian):
    magic b"EPNT", u32 version, u32 record count, then per record
    u16 name length, UTF-8 name, u8 ndim, u32 dims[ndim], float32 payload
"""
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np

from core.tensor import Tensor
from models.config import EPNetConfig
from models.epnet import ModelParams, param_specs
from models.optim import AdamState, EmaState
from utils.errors import LoadError

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

CONTAINER_MAGIC = b"EPNT"
CONTAINER_VERSION = 1
PARAMS_FILE = "params.bin"
EMA_FILE = "ema.bin"
OPTIM_FILE = "optim.bin"
META_FILE = "meta.txt"

PathLike = Union[str, Path]


def encode_container(arrays: Mapping[str, np.ndarray]) -> bytes:
    chunks = [CONTAINER_MAGIC, struct.pack("<II", CONTAINER_VERSION, len(arrays))]
    for name, array in arrays.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode_container(data: bytes, source: str = "<bytes>") -> Dict[str, np.ndarray]:
    def take(pos: int, size: int, what: str) -> bytes:
        if pos + size > len(data):
            raise LoadError(f"{source}: truncated {what} at byte {pos}")
        return data[pos:pos + size]

    if take(0, 4, "magic") != CONTAINER_MAGIC:
        raise LoadError(f"{source}: not an EPNet parameter container")
    version, count = struct.unpack("<II", take(4, 8, "header"))
    if version != CONTAINER_VERSION:
        raise LoadError(f"{source}: unsupported container version {version}")
    pos = 12
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(pos, 2, "name length"))
        name = take(pos + 2, name_len, "name").decode("utf-8")
        pos += 2 + name_len
        (ndim,) = struct.unpack("<B", take(pos, 1, f"rank of {name}"))
        shape = struct.unpack(f"<{ndim}I", take(pos + 1, 4 * ndim, f"shape of {name}"))
        pos += 1 + 4 * ndim
        size = 4 * int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(take(pos, size, f"payload of {name}"), dtype="<f4").reshape(shape).copy()
        pos += size
    if pos != len(data):
        raise LoadError(f"{source}: {len(data) - pos} trailing bytes after {count} records")
    return arrays


def save_container(path: PathLike, arrays: Mapping[str, np.ndarray]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_container(arrays))


def load_container(path: PathLike) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"Checkpoint file not found: {path}")
    return decode_container(path.read_bytes(), str(path))


def match_params(arrays: Mapping[str, np.ndarray], config: EPNetConfig, source: str = "checkpoint") -> ModelParams:
    """Check a loaded container against the config's parameter layout"""
    expected = param_specs(config)
    for name, shape, _ in expected:
        if name not in arrays:
            raise LoadError(f"{source}: missing parameter {name}")
        if tuple(arrays[name].shape) != shape:
            raise LoadError(
                f"{source}: parameter {name} has shape {tuple(arrays[name].shape)}, config expects {shape}"
            )
    known = {name for name, _, _ in expected}
    extra = [name for name in arrays if name not in known]
    if extra:
        raise LoadError(f"{source}: unexpected parameter {extra[0]} for this config")
    return {name: Tensor(arrays[name].astype(np.float32), requires_grad=True) for name, _, _ in expected}


def params_to_arrays(params: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    return {name: t.data for name, t in params.items()}


@dataclass
class CheckpointMeta:
    iteration: int
    seed: int
    config_hash: str

    def to_text(self) -> str:
        return f"iteration={self.iteration}\nseed={self.seed}\nconfig_hash={self.config_hash}\n"

    @classmethod
    def from_text(cls, text: str, source: str = META_FILE) -> "CheckpointMeta":
        values = {}
        for line in text.splitlines():
            if "=" in line:
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
        try:
            return cls(int(values["iteration"]), int(values["seed"]), values["config_hash"])
        except (KeyError, ValueError) as exc:
            raise LoadError(f"{source}: malformed metadata ({exc})") from exc


class ModelManager:
    """Saves and restores EPNet checkpoints in one directory"""

    def __init__(self, checkpoint_dir: PathLike):
        self.checkpoint_dir = Path(checkpoint_dir)

    def save_checkpoint(self, params: ModelParams, ema: EmaState, adam: AdamState,
                        iteration: int, seed: int, config: EPNetConfig) -> Path:
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        save_container(self.checkpoint_dir / PARAMS_FILE, params_to_arrays(params))
        save_container(self.checkpoint_dir / EMA_FILE, ema.shadow)
        optim = {f"m/{name}": value for name, value in adam.m.items()}
        optim.update({f"v/{name}": value for name, value in adam.v.items()})
        save_container(self.checkpoint_dir / OPTIM_FILE, optim)
        meta = CheckpointMeta(iteration, seed, config.config_hash())
        (self.checkpoint_dir / META_FILE).write_text(meta.to_text(), encoding="utf-8")
        logger.info(f"💾 Checkpoint saved: {self.checkpoint_dir} (iteration {iteration})")
        return self.checkpoint_dir

    def read_meta(self) -> Optional[CheckpointMeta]:
        path = self.checkpoint_dir / META_FILE
        if not path.is_file():
            return None
        return CheckpointMeta.from_text(path.read_text(encoding="utf-8"), str(path))

    def load_params(self, config: EPNetConfig, use_ema: bool = True) -> ModelParams:
        """EMA shadow weights by default, raw weights on request"""
        path = self.checkpoint_dir / (EMA_FILE if use_ema else PARAMS_FILE)
        params = match_params(load_container(path), config, str(path))
        meta = self.read_meta()
        if meta is not None and meta.config_hash != config.config_hash():
            logger.warning(f"⚠️ Checkpoint config hash {meta.config_hash} differs from {config.config_hash()}")
        kind = "EMA" if use_ema else "raw"
        logger.info(f"✓ Loaded {kind} weights: {len(params)} tensors from {path}")
        return params
