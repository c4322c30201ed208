"""Command-line driver: preprocessing, training, encoding, reconstruction,
filter rendering, the two-layer pipeline, and the pursuit-loop benchmark.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
error. Batch commands write a key=value manifest into their output
location before computing; re-running with the same inputs and manifest
reproduces the outputs bit for bit.
"""

from __future__ import annotations

import argparse
import logging
import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .conv_mp import build_shift_gram, conv_mp_encode, correlate, greedy_steps
from .core import TrainConfig, reconstruct, residual_energy
from .dict_learn import TrainStats, train
from .model_io import (
    list_float_images,
    list_images,
    load_bank,
    load_code,
    load_float_image,
    load_image,
    render_filter_grid,
    save_bank,
    save_code,
    save_float_image,
    save_image,
)
from .pipeline import PipelineConfig, run_two_layer
from .preprocess import contrast_normalize, random_subsample_crop, resize, to_grayscale

logger = logging.getLogger("convmp")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def _parse_dims(text: str, flag: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        h, w = (int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{flag} expects HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise ConfigError(f"{flag} dims must be positive, got {text!r}")
    return h, w


def _write_manifest(path: Path, entries: dict) -> None:
    lines = [f"tool=convmp {__version__}"]
    lines += [f"{key}={value}" for key, value in entries.items()]
    path.write_text("\n".join(lines) + "\n")


def _write_train_stats(stats: TrainStats, path: Path) -> None:
    lines = []
    for epoch, energy in enumerate(stats.epoch_energy):
        counts = stats.activation_counts[epoch]
        reinits = sum(1 for e, _ in stats.reinit_events if e == epoch)
        lines.append(
            f"epoch={epoch} energy={energy:.17g} act_min={min(counts)} "
            f"act_max={max(counts)} reinits={reinits}"
        )
    path.write_text("\n".join(lines) + "\n")


def _load_any_image(path: Path):
    if path.suffix.lower() == ".f64":
        return load_float_image(path)
    return load_image(path)


def _load_corpus(directory: Path):
    """Preprocessed corpora: prefer signed float sidecars over 8-bit images."""
    if not directory.is_dir():
        raise DataError(f"corpus directory {directory} does not exist")
    paths = list_float_images(directory) or list_images(directory)
    if not paths:
        raise DataError(f"no corpus images (.f64/.pgm/.ppm) found in {directory}")
    try:
        return [_load_any_image(p) for p in paths]
    except ValueError as exc:
        raise DataError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands

def cmd_preprocess(args) -> int:
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    if not in_dir.is_dir():
        raise DataError(f"input directory {in_dir} does not exist")
    paths = list_images(in_dir)
    if not paths:
        raise DataError(f"no PGM/PPM images found in {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(
        out_dir / "manifest.txt",
        {
            "command": "preprocess",
            "in": in_dir,
            "out": out_dir,
            "size": args.size,
            "pascal_crop": args.pascal_crop,
            "seed": args.seed,
        },
    )
    rng = np.random.default_rng(args.seed)
    done = failed = 0
    for path in paths:
        try:
            img = to_grayscale(load_image(path))
            if args.pascal_crop:
                img = random_subsample_crop(img, rng, args.size, args.size)
            else:
                img = resize(img, args.size, args.size)
            img = contrast_normalize(img)
        except ValueError as exc:
            logger.warning("skipping %s: %s", path.name, exc)
            failed += 1
            continue
        save_image(img, out_dir / f"{path.stem}.pgm", signed=True)
        save_float_image(img, out_dir / f"{path.stem}.f64")
        done += 1
    logger.info("preprocessed %d images (%d skipped)", done, failed)
    if done == 0:
        raise DataError("every input image failed to preprocess")
    return 0


def _train_config_from_args(args) -> TrainConfig:
    fh, fw = _parse_dims(args.filter, "--filter")
    cfg = TrainConfig(
        num_filters=args.k,
        filter_height=fh,
        filter_width=fw,
        sparsity=args.q,
        epochs=args.epochs,
        seed=args.seed,
        residual_tolerance=args.tolerance,
        min_activations=args.min_activations,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def cmd_train(args) -> int:
    cfg = _train_config_from_args(args)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    _write_manifest(
        Path(str(out) + ".manifest.txt"),
        {
            "command": "train",
            "corpus": args.corpus,
            "out": out,
            "k": cfg.num_filters,
            "filter": f"{cfg.filter_height}x{cfg.filter_width}",
            "q": cfg.sparsity,
            "epochs": cfg.epochs,
            "seed": cfg.seed,
            "tolerance": cfg.residual_tolerance,
            "min_activations": cfg.min_activations,
            "threads": args.threads,
        },
    )
    images = _load_corpus(Path(args.corpus))
    try:
        bank, stats = train(images, cfg, threads=args.threads)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    save_bank(bank, out)
    _write_train_stats(stats, Path(str(out) + ".stats.txt"))
    logger.info("wrote %s", out)
    return 0


def cmd_encode(args) -> int:
    try:
        bank = load_bank(args.model)
        image = _load_any_image(Path(args.image))
    except (ValueError, OSError) as exc:
        raise DataError(str(exc)) from exc
    if args.q < 1:
        raise ConfigError(f"--q must be >= 1, got {args.q}")
    if image.shape[0] != bank.shape[1]:
        raise ConfigError(
            f"image has {image.shape[0]} channels but the model expects {bank.shape[1]}"
        )
    if image.shape[1] < bank.shape[2] or image.shape[2] < bank.shape[3]:
        raise ConfigError(
            f"image {image.shape[1]}x{image.shape[2]} is smaller than the model's "
            f"{bank.shape[2]}x{bank.shape[3]} filters"
        )
    table = build_shift_gram(bank)
    code = conv_mp_encode(bank, table, image, args.q, args.tolerance)
    save_code(code, args.out)
    initial = float(np.sum(np.square(image)))
    final = residual_energy(image, code, bank)
    print(f"initial_energy={initial:.17g} final_energy={final:.17g} steps={len(code)}")
    return 0


def cmd_reconstruct(args) -> int:
    try:
        bank = load_bank(args.model)
        code = load_code(args.code)
    except (ValueError, OSError) as exc:
        raise DataError(str(exc)) from exc
    try:
        image = reconstruct(code, bank)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    save_image(image, args.out, signed=True)
    logger.info("wrote %s", args.out)
    return 0


def cmd_render_filters(args) -> int:
    try:
        bank = load_bank(args.model)
    except (ValueError, OSError) as exc:
        raise DataError(str(exc)) from exc
    if args.scale < 1:
        raise ConfigError(f"--scale must be >= 1, got {args.scale}")
    render_filter_grid(bank, args.out, cell_scale=args.scale)
    logger.info("wrote %s", args.out)
    return 0


def _parse_config_file(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise DataError(f"config file {path} does not exist")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def _pipeline_config(values: dict[str, str]) -> PipelineConfig:
    def get_int(key, default):
        try:
            return int(values.get(key, default))
        except ValueError:
            raise ConfigError(f"config key {key} must be an integer") from None

    def get_float(key, default):
        try:
            return float(values.get(key, default))
        except ValueError:
            raise ConfigError(f"config key {key} must be a number") from None

    def layer(prefix, defaults):
        fh, fw = _parse_dims(
            values.get(f"{prefix}.filter", defaults["filter"]), f"{prefix}.filter"
        )
        return TrainConfig(
            num_filters=get_int(f"{prefix}.k", defaults["k"]),
            filter_height=fh,
            filter_width=fw,
            sparsity=get_int(f"{prefix}.q", defaults["q"]),
            epochs=get_int(f"{prefix}.epochs", defaults["epochs"]),
            seed=get_int(f"{prefix}.seed", defaults["seed"]),
            residual_tolerance=get_float(f"{prefix}.tolerance", defaults["tolerance"]),
            min_activations=get_int(f"{prefix}.min_activations", 1),
        )

    layer1 = layer(
        "layer1",
        {"k": 8, "filter": "16x16", "q": 40, "epochs": 10, "seed": 0, "tolerance": 0.0},
    )
    # layer 2 inherits layer 1's pursuit depth and schedule unless overridden
    layer2 = layer(
        "layer2",
        {
            "k": 16,
            "filter": "4x4",
            "q": layer1.sparsity,
            "epochs": layer1.epochs,
            "seed": layer1.seed + 1,
            "tolerance": layer1.residual_tolerance,
        },
    )
    cfg = PipelineConfig(
        layer1=layer1,
        layer2=layer2,
        pool_size=get_int("pool", 8),
        image_size=get_int("image_size", 64),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def cmd_pipeline(args) -> int:
    values = _parse_config_file(Path(args.config))
    cfg = _pipeline_config(values)
    seed = args.seed  # flags override file values
    if seed is None and "seed" in values:
        try:
            seed = int(values["seed"])
        except ValueError:
            raise ConfigError("config key seed must be an integer") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": "pipeline",
        "corpus": args.corpus,
        "out": out,
        "image_size": cfg.image_size,
        "pool": cfg.pool_size,
        "seed": seed if seed is not None else "",
        "threads": args.threads,
    }
    for prefix, layer in (("layer1", cfg.layer1), ("layer2", cfg.layer2)):
        manifest[f"{prefix}.k"] = layer.num_filters
        manifest[f"{prefix}.filter"] = f"{layer.filter_height}x{layer.filter_width}"
        manifest[f"{prefix}.q"] = layer.sparsity
        manifest[f"{prefix}.epochs"] = layer.epochs
        manifest[f"{prefix}.seed"] = layer.seed
    _write_manifest(out / "manifest.txt", manifest)
    try:
        bank1, bank2, _ = run_two_layer(
            args.corpus, cfg, seed=seed, out_dir=out, threads=args.threads
        )
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    render_filter_grid(bank1, out / "layer1_filters.pgm", cell_scale=args.scale)
    render_filter_grid(bank2, out / "layer2_filters.pgm", cell_scale=args.scale)
    logger.info("pipeline outputs in %s", out)
    return 0


def run_bench(
    image_dims: tuple[int, int],
    k: int,
    filter_dims: tuple[int, int],
    q_list: list[int],
    repeat: int,
    seed: int = 0,
) -> dict:
    """Time the post-correlation greedy loop for each q; medians over repeats."""
    h, w = image_dims
    fh, fw = filter_dims
    rng = np.random.default_rng(seed)
    bank = rng.normal(size=(k, 1, fh, fw))
    bank /= np.sqrt(np.sum(bank * bank, axis=(1, 2, 3)))[:, None, None, None]
    image = rng.normal(size=(1, h, w))
    table = build_shift_gram(bank)
    maps = correlate(bank, image)
    greedy_steps(maps.copy(), table, max(q_list))  # warm caches before timing

    medians = []
    for q in q_list:
        times = []
        for _ in range(repeat):
            scratch = maps.copy()
            t0 = time.perf_counter()
            steps = greedy_steps(scratch, table, q)
            times.append(time.perf_counter() - t0)
            if len(steps) != q:
                raise RuntimeError(f"benchmark pursuit stopped early at {len(steps)} steps")
        medians.append(statistics.median(times))
    ratios = [medians[i + 1] / medians[i] for i in range(len(medians) - 1)]
    return {
        "qs": q_list,
        "median_s": medians,
        "per_step_ns": [m / q * 1e9 for m, q in zip(medians, q_list)],
        "ratios": ratios,
    }


def cmd_bench(args) -> int:
    h, w = _parse_dims(args.image, "--image")
    fh, fw = _parse_dims(args.filter, "--filter")
    try:
        q_list = [int(tok) for tok in args.q.split(",")]
    except ValueError:
        raise ConfigError(f"--q expects a comma-separated list, got {args.q!r}") from None
    if not q_list or min(q_list) < 1:
        raise ConfigError("--q values must be positive")
    if args.repeat < 1:
        raise ConfigError(f"--repeat must be >= 1, got {args.repeat}")
    if fh > h or fw > w:
        raise ConfigError(f"filter {fh}x{fw} does not fit the {h}x{w} image")
    report = run_bench((h, w), args.k, (fh, fw), q_list, args.repeat, args.seed)
    for q, med, per in zip(report["qs"], report["median_s"], report["per_step_ns"]):
        print(f"q={q} median_ms={med * 1e3:.3f} per_step_ns={per:.0f}")
    for qa, qb, ratio in zip(report["qs"], report["qs"][1:], report["ratios"]):
        print(f"ratio q={qa}->q={qb}: {ratio:.3f}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convmp",
        description="Convolutional matching pursuit and dictionary learning",
    )
    parser.add_argument("--version", action="version", version=f"convmp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="grayscale, resize/crop, contrast normalize")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--pascal-crop", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="learn a filter bank from a preprocessed corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--filter", default="16x16")
    p.add_argument("--q", type=int, default=40)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=0.0)
    p.add_argument("--min-activations", dest="min_activations", type=int, default=1)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="sparse-code one image against a model")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--q", type=int, default=40)
    p.add_argument("--tolerance", type=float, default=0.0)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("reconstruct", help="rebuild an image from a code file")
    p.add_argument("--model", required=True)
    p.add_argument("--code", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("render-filters", help="tile a model's filters into an image")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, default=1)
    p.set_defaults(func=cmd_render_filters)

    p = sub.add_parser("pipeline", help="two-layer feature learning experiment")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scale", type=int, default=1)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("bench", help="time the post-correlation pursuit loop")
    p.add_argument("--image", default="64x64")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--filter", default="16x16")
    p.add_argument("--q", default="50,100,200")
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # anything unexpected maps to the internal code
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
