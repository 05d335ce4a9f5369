"""
EPNet command line
train / eval / upscale / analyze
"""
import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from core.batch_processor import BatchProcessor, ImageJob
from core.image_io import Image, load_image, save_image
from core.metrics import MetricRow, mean_row, psnr, rgb_to_y, ssim, write_metrics_csv
from core.resample import downscale, upscale
from models.complexity import ablation_table, complexity_report, pfem_sweep
from models.config import SUPPORTED_SCALES
from models.epnet import EPNet
from models.model_manager import ModelManager
from models.trainer import PatchDataset, train_loop, write_loss_csv
from utils.errors import EPNetError, UsageError
from utils.run_config import PathsConfig, RunConfig, echo_config, load_run_config, parse_set_option

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LOSS_CSV = "loss.csv"
METRICS_CSV = "metrics.csv"
COMPLEXITY_JSON = "complexity.json"
PFEM_SWEEP_CSV = "pfem_sweep.csv"
ABLATION_CSV = "ablation.csv"
BICUBIC_PREFIX = "bicubic/"

# flag dest -> dotted config key
FLAG_KEYS = {
    "seed": "train.seed",
    "scale": "model.scale",
    "iters": "train.iterations",
    "data_dir": "paths.data_dir",
    "checkpoint": "paths.checkpoint",
    "output_dir": "paths.output_dir",
    "hr_dir": "paths.hr_dir",
    "workers": "eval.workers",
    "resolution": "analyze.resolution",
    "pfem_sweep": "analyze.pfem_sweep",
}
SWITCH_KEYS = {
    "no_espm": ("model.use_espm", False),
    "no_esab": ("model.use_esab", False),
    "no_lfeb": ("model.use_lfeb", False),
    "raw_weights": ("eval.raw_weights", True),
    "ablation_table": ("analyze.ablation_table", True),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of dotted keys")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--scale", type=int, choices=SUPPORTED_SCALES)
    common.add_argument("--output-dir")
    common.add_argument("--no-espm", action="store_true", help="drop the ESPM branch")
    common.add_argument("--no-esab", action="store_true", help="drop ESAB from every PFEM submodule")
    common.add_argument("--no-lfeb", action="store_true", help="drop LFEB from every PFEM submodule")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="epnet", description="EPNet lightweight image super-resolution")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", parents=[common], help="train on a folder of HR images")
    train.add_argument("--iters", type=int)
    train.add_argument("--data-dir")
    train.add_argument("--checkpoint", help="checkpoint directory to write")

    evaluate = sub.add_parser("eval", parents=[common], help="PSNR/SSIM against bicubic")
    evaluate.add_argument("--checkpoint")
    evaluate.add_argument("--hr-dir")
    evaluate.add_argument("--raw-weights", action="store_true", help="use raw weights instead of EMA")
    evaluate.add_argument("--workers", type=int)

    up = sub.add_parser("upscale", parents=[common], help="super-resolve one image")
    up.add_argument("input")
    up.add_argument("output")
    up.add_argument("--checkpoint")
    up.add_argument("--raw-weights", action="store_true", help="use raw weights instead of EMA")

    analyze = sub.add_parser("analyze", parents=[common], help="params and Multi-Adds")
    analyze.add_argument("--resolution", metavar="WxH", help="output resolution (default 1280x720)")
    analyze.add_argument("--pfem-sweep", type=int, metavar="N", help="report n = 1..N PFEM submodules")
    analyze.add_argument("--ablation-table", action="store_true", help="component ablation at x2")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """File values, then --set overrides, then dedicated flags"""
    config = load_run_config(args.config) if args.config else RunConfig()
    overrides: Dict[str, Any] = dict(parse_set_option(item) for item in args.overrides)
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    for dest, (key, value) in SWITCH_KEYS.items():
        if getattr(args, dest, False):
            overrides[key] = value
    return config.with_overrides(overrides) if overrides else config.validate()


def _checkpoint_manager(config: RunConfig) -> ModelManager:
    if not config.paths.checkpoint:
        raise UsageError("No checkpoint given (use --checkpoint or paths.checkpoint)")
    path = Path(config.paths.checkpoint)
    if not path.is_dir():
        raise UsageError(f"Checkpoint directory not found: {path}")
    return ModelManager(path)


def load_model(config: RunConfig) -> EPNet:
    params = _checkpoint_manager(config).load_params(config.model, use_ema=not config.eval.raw_weights)
    return EPNet(config.model, params)


def super_resolve(model: EPNet, lr: Image) -> Image:
    return Image.from_float(model.upscale(lr.to_float()[None])[0])


def cmd_train(config: RunConfig) -> Path:
    if not config.paths.data_dir:
        raise UsageError("No data directory given (use --data-dir or paths.data_dir)")
    out = config.output_dir
    echo_config(config, out)
    dataset = PatchDataset.from_folder(config.paths.data_dir, config.model.scale, config.train.resample)
    model = EPNet(config.model, seed=config.train.seed)
    checkpoint_dir = Path(config.paths.checkpoint) if config.paths.checkpoint else out / "checkpoint"
    result = train_loop(model, dataset, config.train, ModelManager(checkpoint_dir))
    write_loss_csv(out / LOSS_CSV, result.loss_trace)
    return checkpoint_dir


def evaluate_pair(model: EPNet, hr_path: Path, scale: int) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    """((psnr, ssim) of the model, (psnr, ssim) of bicubic) on one HR image"""
    hr = load_image(hr_path).mod_crop(scale)
    lr = downscale(hr, scale)
    y_hr = rgb_to_y(hr)
    y_sr = rgb_to_y(super_resolve(model, lr))
    y_bic = rgb_to_y(upscale(lr, scale))
    return ((psnr(y_sr, y_hr, scale), ssim(y_sr, y_hr, scale)),
            (psnr(y_bic, y_hr, scale), ssim(y_bic, y_hr, scale)))


def evaluation_rows(results: Dict[ImageJob, Tuple[Tuple[float, float], Tuple[float, float]]]) -> List[MetricRow]:
    """Per-image rows, per-set means and the overall mean, model rows before bicubic"""
    rows: List[MetricRow] = []
    set_means: List[MetricRow] = []
    bic_means: List[MetricRow] = []
    set_names = sorted({job.set_name for job in results})
    for set_name in set_names:
        jobs = [job for job in results if job.set_name == set_name]
        model_rows = [(job.name, *results[job][0]) for job in jobs]
        bic_rows = [(BICUBIC_PREFIX + job.name, *results[job][1]) for job in jobs]
        for model_row, bic_row in zip(model_rows, bic_rows):
            rows += [model_row, bic_row]
        if set_name:
            set_means.append(mean_row(f"{set_name}/mean", model_rows))
            bic_means.append(mean_row(f"{BICUBIC_PREFIX}{set_name}/mean", bic_rows))
            rows += [set_means[-1], bic_means[-1]]
        else:
            set_means.append(mean_row("mean", model_rows))
            bic_means.append(mean_row(f"{BICUBIC_PREFIX}mean", bic_rows))
    if set_names == [""]:
        rows += [set_means[0], bic_means[0]]
    else:
        rows += [mean_row("mean", set_means), mean_row(f"{BICUBIC_PREFIX}mean", bic_means)]
    return rows


def cmd_eval(config: RunConfig) -> Path:
    if not config.paths.hr_dir:
        raise UsageError("No HR directory given (use --hr-dir or paths.hr_dir)")
    out = config.output_dir
    echo_config(config, out)
    model = load_model(config)
    scale = config.model.scale
    processor = BatchProcessor(lambda job: evaluate_pair(model, job.path, scale), config.eval.workers)
    processor.add_folder(config.paths.hr_dir)
    rows = evaluation_rows(processor.run(progress=True))
    path = out / METRICS_CSV
    write_metrics_csv(path, rows)
    overall = {name: (p, s) for name, p, s in rows}
    p, s = overall["mean"]
    bp, bs = overall[f"{BICUBIC_PREFIX}mean"]
    logger.info(f"📊 EPNet x{scale}: {p:.2f} dB / {s:.4f}   bicubic: {bp:.2f} dB / {bs:.4f}")
    return path


def cmd_upscale(config: RunConfig, input_path: str, output_path: str) -> Path:
    """Resolved config goes next to the output image unless an output directory was set"""
    img = load_image(input_path)
    model = load_model(config)
    sr = super_resolve(model, img)
    save_image(output_path, sr)
    if config.paths.output_dir == PathsConfig.output_dir:
        echo_config(config, Path(output_path).parent)
    else:
        echo_config(config)
    logger.info(f"✅ {img.width}x{img.height} -> {sr.width}x{sr.height}: {output_path}")
    return Path(output_path)


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    logger.info(f"💾 {path}")


def cmd_analyze(config: RunConfig, stream=None) -> dict:
    stream = stream or sys.stdout
    out = config.output_dir
    echo_config(config, out)
    out_h, out_w = config.resolution
    report = complexity_report(config.model, out_h, out_w)
    payload = report.to_dict()
    if config.analyze.pfem_sweep:
        sweep = pfem_sweep(config.model, config.analyze.pfem_sweep, out_h, out_w)
        payload["pfem_sweep"] = [{"n": n, "params": p, "multi_adds": m} for n, p, m in sweep]
        _write_rows(out / PFEM_SWEEP_CSV, ("n", "params", "multi_adds"), sweep)
    if config.analyze.ablation_table:
        table = ablation_table(config.model, out_h, out_w)
        payload["ablation"] = [{"variant": v, "params": p, "multi_adds": m} for v, p, m in table]
        _write_rows(out / ABLATION_CSV, ("variant", "params", "multi_adds"), table)
    (out / COMPLEXITY_JSON).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    print(json.dumps(payload, indent=2), file=stream)
    print(report.format_table(), file=stream)
    for key, title in (("pfem_sweep", "PFEM depth"), ("ablation", "Ablation (x2)")):
        if key in payload:
            print(f"\n{title}", file=stream)
            for row in payload[key]:
                label = row.get("n", row.get("variant"))
                print(f"{str(label):<10}{row['params']:>12,}{row['multi_adds']:>18,}", file=stream)
    return payload


def setup_logging(verbose: bool = False):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    setup_logging(args.verbose)
    try:
        config = resolve_config(args)
        if args.command == "train":
            cmd_train(config)
        elif args.command == "eval":
            cmd_eval(config)
        elif args.command == "upscale":
            cmd_upscale(config, args.input, args.output)
        else:
            cmd_analyze(config)
    except EPNetError as exc:
        logger.error(f"❌ {exc}")
        return exc.exit_code
    except Exception as exc:
        logger.exception(f"❌ Unexpected error: {exc}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
