"""Alternating dictionary learning: encode with convolutional pursuit, then
update each filter as the top principal direction of its activated patches.

One epoch encodes every image with the current bank, then sweeps the
filters in ascending index order (Gauss-Seidel: each update sees residuals
reflecting the ones before it). For a filter j, every image location where
j is active contributes the patch the filter is trying to explain: the
residual patch plus j's own contribution there, i.e. the data minus all
other activations. The filter becomes the dominant singular direction of
those patches, its coefficients are refreshed by projection, and the
stored residuals are adjusted so they stay equal to image minus
reconstruction throughout.

The alternation is not guaranteed to decrease the energy (the encoding
subproblem is not convex); TrainStats records per-epoch energy so the
typical decrease is observable.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .conv_mp import build_shift_gram, conv_mp_encode
from .core import Activation, SparseCode, TrainConfig, as_image, reconstruct

logger = logging.getLogger(__name__)

_REDRAW_LIMIT = 100
_SIGN_TIE_ATOL = 1e-12


@dataclass
class PatchEntry:
    """One activated location of a filter, with the patch it should explain."""

    image_id: int
    row: int
    col: int
    coefficient: float  # accumulated code value at this (filter, position)
    patch: np.ndarray  # (channels, h_f, w_f)


@dataclass
class ActivatedPatchSet:
    filter_index: int
    entries: list[PatchEntry] = field(default_factory=list)


@dataclass
class TrainStats:
    """Per-epoch energy, per-filter activation counts, and reinit events."""

    epoch_energy: list[float] = field(default_factory=list)
    activation_counts: list[list[int]] = field(default_factory=list)
    reinit_events: list[tuple[int, int]] = field(default_factory=list)  # (epoch, filter)


def _random_patch(images, fh: int, fw: int, rng: np.random.Generator) -> np.ndarray:
    idx = int(rng.integers(len(images)))
    img = images[idx]
    r = int(rng.integers(img.shape[1] - fh + 1))
    c = int(rng.integers(img.shape[2] - fw + 1))
    return img[:, r : r + fh, c : c + fw].copy()


def _draw_unit_patch(images, fh: int, fw: int, rng: np.random.Generator) -> np.ndarray:
    for _ in range(_REDRAW_LIMIT):
        patch = _random_patch(images, fh, fw, rng)
        norm = float(np.sqrt(np.sum(patch * patch)))
        if norm > 0.0:
            return patch / norm
    raise ValueError(
        f"could not draw a nonzero {fh}x{fw} patch in {_REDRAW_LIMIT} tries; "
        "is the corpus all zero?"
    )


def init_filters(images, cfg: TrainConfig) -> np.ndarray:
    """Seed the bank with unit-normalized random patches from the corpus."""
    cfg.validate()
    imgs = [as_image(im) for im in images]
    fh, fw = cfg.filter_height, cfg.filter_width
    usable = [im for im in imgs if im.shape[1] >= fh and im.shape[2] >= fw]
    if not usable:
        raise ValueError(f"no corpus image is at least {fh}x{fw}")
    rng = np.random.default_rng(cfg.seed)
    return np.stack([_draw_unit_patch(usable, fh, fw, rng) for _ in range(cfg.num_filters)])


def collect_activated_patches(
    image, residual, code: SparseCode, j: int, bank, image_id: int = 0
) -> ActivatedPatchSet:
    """Gather, per distinct position where filter j is active, the patch it
    should explain: residual patch plus the filter's own contribution there.

    The caller maintains residual = image - reconstruct(code, bank).
    """
    _, _, fh, fw = bank.shape
    accum: dict[tuple[int, int], float] = {}
    for act in code.activations:
        if act.filter_index == j:
            key = (act.row, act.col)
            accum[key] = accum.get(key, 0.0) + act.coefficient
    entries = []
    for (r, c), coeff in accum.items():
        patch = residual[:, r : r + fh, c : c + fw] + coeff * bank[j]
        entries.append(PatchEntry(image_id, r, c, coeff, patch))
    return ActivatedPatchSet(j, entries)


def _fix_sign(v: np.ndarray, prev: np.ndarray | None) -> np.ndarray:
    if prev is not None:
        d = float(np.dot(v, prev))
        if d > _SIGN_TIE_ATOL:
            return v
        if d < -_SIGN_TIE_ATOL:
            return -v
    nz = np.flatnonzero(v)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def pca_top_component(
    patches,
    prev=None,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    seed: int = 0,
) -> np.ndarray:
    """Top left singular direction of the stacked (uncentered) patches.

    Computed as the dominant eigenvector of the small scatter matrix via
    power iteration with a seeded start. The sign is chosen to keep a
    nonnegative inner product with prev when one is given; on a near-zero
    tie (or without prev) the first nonzero component is made positive.
    """
    mats = [np.asarray(p, dtype=np.float64) for p in patches]
    if not mats:
        raise ValueError("cannot take the principal direction of an empty patch set")
    shape = mats[0].shape
    rows = np.stack([m.ravel() for m in mats])  # (n, dim)
    if not np.any(rows):
        raise ValueError("all patches are zero; dead filter")
    scatter = rows.T @ rows
    dim = scatter.shape[0]

    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim)
    v /= np.sqrt(v @ v)
    for _ in range(max_iter):
        y = scatter @ v
        lam = float(v @ y)
        norm = float(np.sqrt(y @ y))
        if norm == 0.0:
            # started in the nullspace; restart
            v = rng.normal(size=dim)
            v /= np.sqrt(v @ v)
            continue
        res = float(np.sqrt(np.sum(np.square(y - lam * v))))
        v = y / norm
        if res <= tol * max(lam, np.finfo(float).tiny):
            break
    prev_flat = None if prev is None else np.asarray(prev, dtype=np.float64).ravel()
    v = _fix_sign(v, prev_flat)
    return v.reshape(shape)


def _paste_all(target, filt, positions_coeffs, sign: float) -> None:
    fh, fw = filt.shape[1], filt.shape[2]
    for (r, c), coeff in positions_coeffs:
        target[:, r : r + fh, c : c + fw] += sign * coeff * filt


def _rewrite_code(code: SparseCode, j: int, new_coeffs: dict[tuple[int, int], float]) -> None:
    seen: set[tuple[int, int]] = set()
    rewritten = []
    for act in code.activations:
        if act.filter_index != j:
            rewritten.append(act)
            continue
        key = (act.row, act.col)
        if key in seen:
            continue  # duplicates were merged into the first occurrence
        seen.add(key)
        rewritten.append(Activation(j, act.row, act.col, new_coeffs[key]))
    code.activations = rewritten


def update_filter(
    bank,
    j: int,
    patch_sets: list[ActivatedPatchSet],
    codes: list[SparseCode],
    residuals: list[np.ndarray],
    images,
    rng: np.random.Generator,
    min_activations: int = 1,
) -> bool:
    """Replace filter j and refresh its coefficients and the residuals.

    patch_sets holds one ActivatedPatchSet per image (possibly empty). With
    enough activations the new filter is the top principal direction of the
    collected patches; otherwise the filter is dead and is reinitialized
    from a random data patch. Either way every activation coefficient of j
    is re-projected onto the new filter and the stored residuals are
    restored to image - reconstruct(code, bank) consistency. Returns True
    when the dead-filter path was taken. bank, codes, and residuals are
    updated in place.
    """
    _, _, fh, fw = bank.shape
    entries = [e for ps in patch_sets for e in ps.entries]
    dead = len(entries) < min_activations
    if not dead and not any(np.any(e.patch) for e in entries):
        dead = True
    if dead:
        new_w = _draw_unit_patch(images, fh, fw, rng)
    else:
        new_w = pca_top_component([e.patch for e in entries], prev=bank[j])

    old_w = bank[j].copy()
    new_flat = new_w.ravel()
    for img_id, ps in enumerate(patch_sets):
        if not ps.entries:
            continue
        old_pc = [((e.row, e.col), e.coefficient) for e in ps.entries]
        new_coeffs = {
            (e.row, e.col): float(new_flat @ e.patch.ravel()) for e in ps.entries
        }
        _paste_all(residuals[img_id], old_w, old_pc, sign=+1.0)
        _paste_all(residuals[img_id], new_w, list(new_coeffs.items()), sign=-1.0)
        _rewrite_code(codes[img_id], j, new_coeffs)
    bank[j] = new_w
    return dead


def encode_all(bank, table, images, q: int, tolerance: float = 0.0, threads: int = 1):
    """Encode every image against a fixed bank; order-preserving."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(
                pool.map(lambda im: conv_mp_encode(bank, table, im, q, tolerance), images)
            )
    return [conv_mp_encode(bank, table, im, q, tolerance) for im in images]


def train(images, cfg: TrainConfig, threads: int = 1) -> tuple[np.ndarray, TrainStats]:
    """Run cfg.epochs alternations of encoding and per-filter updates.

    Returns the final bank and per-epoch statistics. With epochs == 0 the
    initial bank is returned untouched.
    """
    cfg.validate()
    imgs = [as_image(im) for im in images]
    if not imgs:
        raise ValueError("corpus is empty")
    channels = imgs[0].shape[0]
    for i, im in enumerate(imgs):
        if im.shape[0] != channels:
            raise ValueError(
                f"image {i} has {im.shape[0]} channels, expected {channels} like image 0"
            )
        if im.shape[1] < cfg.filter_height or im.shape[2] < cfg.filter_width:
            raise ValueError(
                f"image {i} is {im.shape[1]}x{im.shape[2]}, smaller than the "
                f"{cfg.filter_height}x{cfg.filter_width} filters"
            )

    bank = init_filters(imgs, cfg)
    stats = TrainStats()
    rng = np.random.default_rng([cfg.seed, 1])  # reinit draws, distinct stream

    for epoch in range(cfg.epochs):
        table = build_shift_gram(bank)
        codes = encode_all(bank, table, imgs, cfg.sparsity, cfg.residual_tolerance, threads)
        residuals = [im - reconstruct(code, bank) for im, code in zip(imgs, codes)]

        energy = float(sum(np.sum(np.square(r)) for r in residuals))
        counts = [0] * cfg.num_filters
        for code in codes:
            for act in code.activations:
                counts[act.filter_index] += 1
        stats.epoch_energy.append(energy)
        stats.activation_counts.append(counts)
        if max(counts) == 0:
            raise ValueError(
                "every filter is dead: no activations were produced this epoch "
                "(all-zero corpus or residual_tolerance too high)"
            )

        reinits = 0
        for j in range(cfg.num_filters):
            sets = [
                collect_activated_patches(imgs[i], residuals[i], codes[i], j, bank, image_id=i)
                for i in range(len(imgs))
            ]
            if update_filter(
                bank, j, sets, codes, residuals, imgs, rng, cfg.min_activations
            ):
                stats.reinit_events.append((epoch, j))
                reinits += 1

        logger.info(
            "epoch=%d energy=%.10g act_min=%d act_max=%d reinits=%d",
            epoch,
            energy,
            min(counts),
            max(counts),
            reinits,
        )

    return bank, stats
