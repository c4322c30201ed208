"""Two-layer feature learning: train a first dictionary on preprocessed
images, densify and rectify its codes, average-pool, and train a second
multi-channel dictionary on the pooled maps.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conv_mp import build_shift_gram
from .core import SparseCode, TrainConfig, as_bank, as_image, check_compatible
from .dict_learn import TrainStats, encode_all, train
from .model_io import list_images, load_image, save_bank
from .preprocess import contrast_normalize, resize, to_grayscale


@dataclass
class PipelineConfig:
    """Both layers' training parameters plus the inter-layer pooling size.

    The second layer trains on k1-channel pooled feature maps, so its bank
    automatically carries layer1.num_filters channels. image_size is the
    square side raw corpus images are resized to before normalization.
    """

    layer1: TrainConfig
    layer2: TrainConfig
    pool_size: int = 8
    image_size: int = 64

    def validate(self) -> None:
        self.layer1.validate()
        self.layer2.validate()
        if self.pool_size < 1:
            raise ValueError(f"pool_size must be >= 1, got {self.pool_size}")
        if self.image_size < 1:
            raise ValueError(f"image_size must be >= 1, got {self.image_size}")


@dataclass
class PipelineStats:
    layer1: TrainStats
    layer2: TrainStats


def code_to_feature_maps(code: SparseCode, bank) -> np.ndarray:
    """Densify a code onto the valid grid: one channel per filter,
    accumulated coefficients at activation positions, zero elsewhere."""
    bank = as_bank(bank, unit_norm=False)
    check_compatible(code, bank)
    k, _, fh, fw = bank.shape
    maps = np.zeros((k, code.image_height - fh + 1, code.image_width - fw + 1))
    for act in code.activations:
        maps[act.filter_index, act.row, act.col] += act.coefficient
    return maps


def abs_rectify(maps) -> np.ndarray:
    return np.abs(as_image(maps))


def avg_pool(maps, pool: int) -> np.ndarray:
    """Non-overlapping pool x pool block means per channel; ragged blocks on
    the right/bottom edges average over their actual extent."""
    img = as_image(maps)
    if pool < 1:
        raise ValueError(f"pool must be >= 1, got {pool}")
    if pool == 1:
        return img.copy()
    c, h, w = img.shape
    row_starts = np.arange(0, h, pool)
    col_starts = np.arange(0, w, pool)
    sums = np.add.reduceat(np.add.reduceat(img, row_starts, axis=1), col_starts, axis=2)
    extent_r = np.minimum(row_starts + pool, h) - row_starts
    extent_c = np.minimum(col_starts + pool, w) - col_starts
    return sums / (extent_r[None, :, None] * extent_c[None, None, :])


def write_stats(stats: PipelineStats, path) -> None:
    lines = []
    for layer, ts in ((1, stats.layer1), (2, stats.layer2)):
        for epoch, energy in enumerate(ts.epoch_energy):
            counts = ts.activation_counts[epoch]
            reinits = sum(1 for e, _ in ts.reinit_events if e == epoch)
            lines.append(
                f"layer={layer} epoch={epoch} energy={energy:.17g} "
                f"act_min={min(counts)} act_max={max(counts)} reinits={reinits}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def run_two_layer(
    corpus_dir,
    cfg: PipelineConfig,
    seed: int | None = None,
    out_dir=None,
    threads: int = 1,
):
    """Full experiment driver; returns (layer1 bank, layer2 bank, stats).

    Preprocesses the corpus (grayscale, resize, contrast normalization),
    trains layer 1, encodes every image, densifies/rectifies/pools the
    codes, and trains layer 2 on the pooled multi-channel maps. A seed, if
    given, deterministically overrides both layers' seeds. With out_dir the
    banks and a stats log are persisted there.
    """
    cfg.validate()
    layer1_cfg, layer2_cfg = cfg.layer1, cfg.layer2
    if seed is not None:
        s1, s2 = (int(s) for s in np.random.SeedSequence(seed).generate_state(2))
        layer1_cfg = dataclasses.replace(layer1_cfg, seed=s1)
        layer2_cfg = dataclasses.replace(layer2_cfg, seed=s2)

    paths = list_images(corpus_dir)
    if not paths:
        raise ValueError(f"no PGM/PPM images found in {corpus_dir}")
    preprocessed = [
        contrast_normalize(resize(to_grayscale(load_image(p)), cfg.image_size, cfg.image_size))
        for p in paths
    ]

    bank1, stats1 = train(preprocessed, layer1_cfg, threads=threads)
    table1 = build_shift_gram(bank1)
    codes = encode_all(
        bank1, table1, preprocessed, layer1_cfg.sparsity, layer1_cfg.residual_tolerance, threads
    )
    pooled = [
        avg_pool(abs_rectify(code_to_feature_maps(code, bank1)), cfg.pool_size)
        for code in codes
    ]

    ph, pw = pooled[0].shape[1], pooled[0].shape[2]
    if ph < layer2_cfg.filter_height or pw < layer2_cfg.filter_width:
        raise ValueError(
            f"pooled maps are {ph}x{pw}, smaller than the layer-2 "
            f"{layer2_cfg.filter_height}x{layer2_cfg.filter_width} filters"
        )
    bank2, stats2 = train(pooled, layer2_cfg, threads=threads)

    stats = PipelineStats(stats1, stats2)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_bank(bank1, out / "layer1.bank")
        save_bank(bank2, out / "layer2.bank")
        write_stats(stats, out / "stats.txt")
    return bank1, bank2, stats
