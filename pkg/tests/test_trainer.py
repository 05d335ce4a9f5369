from dataclasses import replace

import numpy as np
import pytest

from core.gradcheck import check_gradients
from core.image_io import Image, save_image
from core.metrics import psnr, rgb_to_y
from core.resample import bicubic_resize_array, downscale, upscale
from core.tensor import Tensor
from models.config import TrainConfig
from models.epnet import EPNet
from models.model_manager import META_FILE, ModelManager
from models.trainer import PatchDataset, augment_pair, l1_loss, sample_patch, train_loop, write_loss_csv
from utils.errors import DimensionError, NumericError, UsageError


def quick_config(**overrides):
    base = TrainConfig(patch_size=8, batch_size=2, iterations=4, log_every=1, augment=False, seed=3)
    return replace(base, **overrides)


def test_l1_identical_is_zero():
    a = Tensor(np.random.default_rng(0).random((1, 3, 4, 4)))
    assert l1_loss(a, a).item() == 0.0


def test_l1_constant_difference():
    a = Tensor(np.full((2, 3, 4, 4), 0.25))
    b = Tensor(np.full((2, 3, 4, 4), 0.75))
    assert l1_loss(a, b).item() == pytest.approx(0.5)
    assert l1_loss(b, a).item() == pytest.approx(0.5)


def test_l1_shape_mismatch():
    with pytest.raises(DimensionError, match="axis 2"):
        l1_loss(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 3, 5, 4))))


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_l1_gradient(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((1, 3, 5, 5))
    # keep every |a - b| well above the FD step
    b = a + np.where(rng.random(a.shape) < 0.5, -1, 1) * (0.1 + rng.random(a.shape))
    report = check_gradients(l1_loss, [a, b], seed=seed)
    assert report.passed, report.summary()
    sr = Tensor(a, requires_grad=True)
    l1_loss(sr, Tensor(b)).backward()
    np.testing.assert_allclose(sr.grad, np.sign(a - b) / a.size)


def test_patch_shapes(natural_image, rng):
    big = natural_image.crop(0, 0, 96, 96)
    lr, hr = sample_patch(upscale(big, 2), 4, 48, rng)
    assert lr.shape == (1, 3, 48, 48)
    assert hr.shape == (1, 3, 192, 192)
    assert lr.dtype == np.float32


def test_patch_sequence_is_seeded(natural_image):
    def draw(seed):
        rng = np.random.default_rng(seed)
        return [sample_patch(natural_image, 2, 12, rng, augment=True)[1].data for _ in range(5)]

    for a, b in zip(draw(9), draw(9)):
        np.testing.assert_array_equal(a, b)
    assert any(not np.array_equal(a, b) for a, b in zip(draw(9), draw(10)))


def test_patch_mode_lr_is_bicubic_of_hr(natural_image, rng):
    lr, hr = sample_patch(natural_image, 3, 10, rng)
    expected = bicubic_resize_array(hr.data[0].astype(np.float64), 10, 10)
    np.testing.assert_allclose(lr.data[0], expected, atol=1e-6)


def test_image_mode_patch_is_aligned(natural_image):
    scale, p = 2, 12
    lr_image = downscale(natural_image, scale)
    lr, hr = sample_patch(natural_image, scale, p, np.random.default_rng(5), lr_image=lr_image)
    replay = np.random.default_rng(5)
    y = int(replay.integers(0, natural_image.height // scale - p + 1))
    x = int(replay.integers(0, natural_image.width // scale - p + 1))
    np.testing.assert_allclose(lr.data[0], lr_image.to_float()[:, y:y + p, x:x + p])
    hr_full = natural_image.to_float()
    np.testing.assert_allclose(hr.data[0], hr_full[:, y * scale:(y + p) * scale, x * scale:(x + p) * scale])


def test_patch_too_large_names_minimum(natural_image, rng):
    with pytest.raises(UsageError, match="192x192"):
        sample_patch(natural_image, 4, 48, rng)


def test_augment_keeps_pairs_aligned():
    rng = np.random.default_rng(0)
    lr = np.arange(2 * 3 * 4 * 4, dtype=np.float64).reshape(2, 3, 4, 4)
    hr = np.repeat(np.repeat(lr, 2, axis=-2), 2, axis=-1)
    for _ in range(8):
        a, b = augment_pair(lr, hr, rng)
        np.testing.assert_array_equal(np.repeat(np.repeat(a, 2, axis=-2), 2, axis=-1), b)


def test_dataset_from_folder(tmp_path, image_factory):
    for i in range(2):
        save_image(tmp_path / f"img_{i}.png", image_factory(37, 30, seed=i))
    (tmp_path / "notes.txt").write_text("skip me")
    dataset = PatchDataset.from_folder(tmp_path, 2)
    assert len(dataset) == 2
    assert (dataset.images[0].width, dataset.images[0].height) == (36, 30)
    assert dataset.lr_images[0].width == 18
    lr, hr = dataset.sample_batch(3, 8, np.random.default_rng(0))
    assert lr.shape == (3, 3, 8, 8) and hr.shape == (3, 3, 16, 16)


def test_dataset_from_empty_folder(tmp_path):
    with pytest.raises(UsageError, match=".png"):
        PatchDataset.from_folder(tmp_path, 2)
    with pytest.raises(UsageError):
        PatchDataset.from_folder(tmp_path / "missing", 2)


def test_patch_mode_dataset_has_no_lr_cache(natural_image):
    dataset = PatchDataset([natural_image], 2, resample="patch")
    assert dataset.lr_images == [None]


def test_trace_length_and_ema(tiny_config, natural_image):
    model = EPNet(tiny_config, seed=0)
    initial = {name: t.data.copy() for name, t in model.params.items()}
    result = train_loop(model, PatchDataset([natural_image], 2), quick_config(iterations=6, log_every=2),
                        progress=False)
    assert [it for it, _ in result.loss_trace] == [2, 4, 6]
    assert all(loss > 0 for _, loss in result.loss_trace)
    ema = result.ema_params
    assert any(not np.array_equal(ema[n].data, result.params[n].data) for n in ema)
    assert any(not np.array_equal(model.params[n].data, initial[n]) for n in initial)
    assert result.adam.t == 6


def test_training_is_reproducible(tiny_config, natural_image):
    def run():
        model = EPNet(tiny_config, seed=1)
        return train_loop(model, PatchDataset([natural_image], 2), quick_config(augment=True), progress=False)

    assert run().loss_trace == run().loss_trace


def test_non_finite_loss_aborts(tiny_config, natural_image):
    model = EPNet(tiny_config, seed=0)
    model.params["recon.conv.bias"].data[:] = np.nan
    with pytest.raises(NumericError, match="iteration 1"):
        train_loop(model, PatchDataset([natural_image], 2), quick_config(), progress=False)


def test_checkpoints_written(tmp_path, tiny_config, natural_image):
    manager = ModelManager(tmp_path / "ckpt")
    train_loop(EPNet(tiny_config), PatchDataset([natural_image], 2), quick_config(checkpoint_every=2),
               manager=manager, progress=False)
    assert (tmp_path / "ckpt" / META_FILE).is_file()
    assert manager.read_meta().iteration == 4
    assert set(manager.load_params(tiny_config)) == set(EPNet(tiny_config).params)


def test_patch_larger_than_data(tiny_config, image_factory):
    dataset = PatchDataset([image_factory(20, 20)], 2)
    with pytest.raises(UsageError):
        train_loop(EPNet(tiny_config), dataset, quick_config(patch_size=16), progress=False)


def test_write_loss_csv(tmp_path):
    path = tmp_path / "out" / "loss.csv"
    write_loss_csv(path, [(1, 0.5), (2, 0.125)])
    assert path.read_text().splitlines() == ["iter,loss", "1,0.5", "2,0.125"]


def test_bicubic_round_trip_blurs_textured_image(textured_image):
    restored = upscale(downscale(textured_image, 2), 2)
    assert psnr(rgb_to_y(restored), rgb_to_y(textured_image), shave=2) < 30.0


@pytest.mark.slow
def test_overfit_single_image(smoke_config, natural_image):
    config = TrainConfig(patch_size=16, batch_size=4, iterations=500, log_every=1, augment=False)
    result = train_loop(EPNet(smoke_config, seed=0), PatchDataset([natural_image], 2), config, progress=False)
    losses = [loss for _, loss in result.loss_trace]
    assert len(losses) == 500
    assert np.mean(losses[-20:]) < 0.1 * np.mean(losses[:5])


@pytest.mark.slow
def test_trained_model_beats_bicubic(smoke_config, textured_image):
    # a 48x48 LR patch is the whole x2 image, so training sees the evaluation input
    config = TrainConfig(patch_size=48, batch_size=1, iterations=500, log_every=50, augment=False)
    model = EPNet(smoke_config, seed=0)
    train_loop(model, PatchDataset([textured_image], 2), config, progress=False)
    lr_image = downscale(textured_image, 2)
    sr = model.upscale(lr_image.to_float()[None])[0]
    sr_psnr = psnr(rgb_to_y(Image.from_float(sr)), rgb_to_y(textured_image), shave=2)
    bicubic_psnr = psnr(rgb_to_y(upscale(lr_image, 2)), rgb_to_y(textured_image), shave=2)
    assert sr_psnr >= bicubic_psnr + 1.0
