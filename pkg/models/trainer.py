"""
Training protocol
L1 objective, Adam, EMA shadow weights and random HR/LR patch pairs
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from core.image_io import Image, list_images, load_image, ACCEPTED_EXTENSIONS
from core.resample import bicubic_resize_array, downscale
from core.tensor import Tensor, absolute, mean_all, sub
from models.config import TrainConfig
from models.epnet import EPNet, ModelParams, epnet_forward
from models.model_manager import ModelManager
from models.optim import AdamState, EmaState, adam_step, collect_grads, ema_update
from utils.errors import DimensionError, NumericError, UsageError

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

LOSS_HEADER = ("iter", "loss")

PatchPair = Tuple[np.ndarray, np.ndarray]


def l1_loss(sr: Tensor, hr: Tensor) -> Tensor:
    """Mean absolute error over every element"""
    if sr.shape != hr.shape:
        axis = next((i for i, (a, b) in enumerate(zip(sr.shape, hr.shape)) if a != b), 0)
        raise DimensionError(f"l1_loss: shape mismatch {sr.shape} vs {hr.shape} (axis {axis})")
    return mean_all(absolute(sub(sr, hr)))


def augment_pair(lr: np.ndarray, hr: np.ndarray, rng: np.random.Generator) -> PatchPair:
    """Horizontal flip and 90 degree rotation, each with probability 0.5"""
    flip, rotate = rng.random() < 0.5, rng.random() < 0.5
    if flip:
        lr, hr = lr[..., ::-1], hr[..., ::-1]
    if rotate:
        lr, hr = np.rot90(lr, axes=(-2, -1)), np.rot90(hr, axes=(-2, -1))
    return np.ascontiguousarray(lr), np.ascontiguousarray(hr)


def _require_patch_fits(hr: Image, scale: int, patch_size: int):
    need = patch_size * scale
    if hr.width < need or hr.height < need:
        raise UsageError(
            f"Image {hr.width}x{hr.height} too small for {patch_size}px patches at x{scale}: "
            f"needs at least {need}x{need}"
        )


def sample_patch(hr: Image, scale: int, patch_size: int, rng: np.random.Generator,
                 augment: bool = False, lr_image: Optional[Image] = None) -> Tuple[Tensor, Tensor]:
    """Random aligned (LR, HR) patch pair, [1, 3, p, p] and [1, 3, p*s, p*s].

    With ``lr_image`` the LR patch is cut from that pre-downscaled image;
    otherwise the HR patch is bicubic-downscaled on its own.
    """
    _require_patch_fits(hr, scale, patch_size)
    max_y = hr.height // scale - patch_size
    max_x = hr.width // scale - patch_size
    y, x = int(rng.integers(0, max_y + 1)), int(rng.integers(0, max_x + 1))
    hp = patch_size * scale
    hr_patch = hr.to_float(np.float64)[:, y * scale:y * scale + hp, x * scale:x * scale + hp]
    if lr_image is not None:
        lr_patch = lr_image.to_float(np.float64)[:, y:y + patch_size, x:x + patch_size]
    else:
        lr_patch = bicubic_resize_array(hr_patch, patch_size, patch_size)
    if augment:
        lr_patch, hr_patch = augment_pair(lr_patch, hr_patch, rng)
    return (Tensor(lr_patch[None].astype(np.float32)),
            Tensor(hr_patch[None].astype(np.float32)))


class PatchDataset:
    """HR training images with their cached LR counterparts"""

    def __init__(self, images: Sequence[Image], scale: int, resample: str = "image"):
        if not images:
            raise UsageError(f"Training set is empty (accepted extensions: {', '.join(ACCEPTED_EXTENSIONS)})")
        self.scale = scale
        self.resample = resample
        self.images = [img.mod_crop(scale) for img in images]
        self.lr_images: List[Optional[Image]] = [
            downscale(img, scale) if resample == "image" else None for img in self.images
        ]

    @classmethod
    def from_folder(cls, folder: Union[str, Path], scale: int, resample: str = "image") -> "PatchDataset":
        folder = Path(folder)
        if not folder.is_dir():
            raise UsageError(f"Data directory not found: {folder}")
        paths = list_images(folder)
        if not paths:
            raise UsageError(
                f"No training images in {folder} (accepted extensions: {', '.join(ACCEPTED_EXTENSIONS)})"
            )
        logger.info(f"📂 {len(paths)} training images in {folder}")
        return cls([load_image(p) for p in paths], scale, resample)

    def __len__(self) -> int:
        return len(self.images)

    def check_patch_size(self, patch_size: int):
        for img in self.images:
            _require_patch_fits(img, self.scale, patch_size)

    def sample_batch(self, batch_size: int, patch_size: int, rng: np.random.Generator,
                     augment: bool = False) -> PatchPair:
        lrs, hrs = [], []
        for _ in range(batch_size):
            idx = int(rng.integers(0, len(self.images)))
            lr, hr = sample_patch(self.images[idx], self.scale, patch_size, rng, augment, self.lr_images[idx])
            lrs.append(lr.data)
            hrs.append(hr.data)
        return np.concatenate(lrs), np.concatenate(hrs)


@dataclass
class TrainResult:
    params: ModelParams
    ema: EmaState
    adam: AdamState
    loss_trace: List[Tuple[int, float]] = field(default_factory=list)

    @property
    def ema_params(self) -> ModelParams:
        return self.ema.as_params()


def train_loop(model: EPNet, dataset: PatchDataset, config: TrainConfig,
               manager: Optional[ModelManager] = None, progress: bool = True) -> TrainResult:
    """Constant-lr Adam on the L1 loss; the loss is recorded every ``log_every`` iterations"""
    config.validate()
    dataset.check_patch_size(config.patch_size)
    rng = np.random.default_rng(config.seed)
    params = model.params
    adam = AdamState.zeros_like(params)
    ema = EmaState.from_params(params, config.ema_decay)
    trace: List[Tuple[int, float]] = []
    last_good: Optional[str] = None

    logger.info(f"🚀 Training {model.num_params():,} params for {config.iterations} iterations "
                f"(batch {config.batch_size}, patch {config.patch_size}, lr {config.lr})")
    bar = tqdm(range(1, config.iterations + 1), desc="train", unit="it", disable=not progress)
    for it in bar:
        lr_batch, hr_batch = dataset.sample_batch(config.batch_size, config.patch_size, rng, config.augment)
        sr = epnet_forward(Tensor(lr_batch), params, model.config)
        loss = l1_loss(sr, Tensor(hr_batch))
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"Non-finite loss {value} at iteration {it}; last good checkpoint: {last_good}")
        loss.backward()
        try:
            params, adam = adam_step(params, collect_grads(params), adam, config)
        except NumericError as exc:
            raise NumericError(f"{exc} (iteration {it}); last good checkpoint: {last_good}") from exc
        ema = ema_update(ema, params)

        if it % config.log_every == 0:
            trace.append((it, value))
            bar.set_postfix(loss=f"{value:.4f}")
            logger.debug(f"iter {it}: loss {value:.6f}")
        if manager is not None and config.checkpoint_every and it % config.checkpoint_every == 0:
            manager.save_checkpoint(params, ema, adam, it, config.seed, model.config)
            last_good = f"{manager.checkpoint_dir} (iteration {it})"

    model.params = params
    if manager is not None:
        manager.save_checkpoint(params, ema, adam, config.iterations, config.seed, model.config)
    if trace:
        logger.info(f"✅ Training done: loss {trace[0][1]:.4f} -> {trace[-1][1]:.4f}")
    return TrainResult(params, ema, adam, trace)


def write_loss_csv(path: Union[str, Path], trace: Sequence[Tuple[int, float]]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LOSS_HEADER)
        for it, loss in trace:
            writer.writerow((it, repr(float(loss))))
    logger.info(f"💾 Loss trace written: {path}")
