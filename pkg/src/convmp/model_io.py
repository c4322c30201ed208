"""Deterministic serialization: filter banks, float images, sparse codes,
8-bit PGM/PPM images, and filter-grid rendering.

Binary container (little-endian throughout):

* bank file: magic b"CMPD1", then five u32 fields (version=1, k, c, h_f,
  w_f), then k*c*h_f*w_f float64 samples in filter-major, channel-major,
  row-major order. Round-trips are bit exact.
* float image file: magic b"CMPF1", then four u32 fields (version=1, c, h,
  w), then c*h*w float64 samples in the canonical image layout. Used as
  the signed sidecar for preprocessed corpora.

Sparse codes are line-based text: a header "CMPC1 c h w n", then one
"filter row col coefficient" record per activation in selection order,
coefficients printed with 17 significant digits (lossless for float64).
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .core import Activation, SparseCode, as_bank, as_image, filter_norms

BANK_MAGIC = b"CMPD1"
FLOAT_IMAGE_MAGIC = b"CMPF1"
CODE_MAGIC = "CMPC1"
FORMAT_VERSION = 1
LOAD_NORM_ATOL = 1e-6


# ---------------------------------------------------------------------------
# filter banks and float images

def save_bank(bank, path) -> None:
    bank = as_bank(bank)
    k, c, fh, fw = bank.shape
    payload = np.ascontiguousarray(bank, dtype="<f8").tobytes()
    with open(path, "wb") as f:
        f.write(BANK_MAGIC)
        f.write(struct.pack("<5I", FORMAT_VERSION, k, c, fh, fw))
        f.write(payload)


def load_bank(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 25 or data[:5] != BANK_MAGIC:
        raise ValueError(f"{path}: not a bank file (bad magic)")
    version, k, c, fh, fw = struct.unpack("<5I", data[5:25])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = k * c * fh * fw * 8
    if len(data) - 25 != expected:
        raise ValueError(
            f"{path}: payload is {len(data) - 25} bytes, expected {expected}"
        )
    bank = np.frombuffer(data[25:], dtype="<f8").astype(np.float64).reshape(k, c, fh, fw)
    norms = filter_norms(bank)
    bad = np.flatnonzero(np.abs(norms - 1.0) > LOAD_NORM_ATOL)
    if bad.size:
        raise ValueError(
            f"{path}: filter {bad[0]} has norm {norms[bad[0]]:.9g}; corrupt model"
        )
    return bank


def save_float_image(image, path) -> None:
    img = as_image(image)
    c, h, w = img.shape
    with open(path, "wb") as f:
        f.write(FLOAT_IMAGE_MAGIC)
        f.write(struct.pack("<4I", FORMAT_VERSION, c, h, w))
        f.write(np.ascontiguousarray(img, dtype="<f8").tobytes())


def load_float_image(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 21 or data[:5] != FLOAT_IMAGE_MAGIC:
        raise ValueError(f"{path}: not a float image file (bad magic)")
    version, c, h, w = struct.unpack("<4I", data[5:21])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = c * h * w * 8
    if len(data) - 21 != expected:
        raise ValueError(f"{path}: payload is {len(data) - 21} bytes, expected {expected}")
    img = np.frombuffer(data[21:], dtype="<f8").astype(np.float64).reshape(c, h, w)
    return as_image(img)


# ---------------------------------------------------------------------------
# 8-bit PGM (P5) / PPM (P6)

def _scan_pnm_header(data: bytes, path) -> tuple[list[int], int]:
    """Return the three numeric header fields and the raster offset."""
    if len(data) < 2 or data[0:1] != b"P" or data[1:2] not in b"56":
        raise ValueError(f"{path}: unsupported magic {data[:2]!r}")
    fields: list[int] = []
    i = 2
    while len(fields) < 3:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise ValueError(f"{path}: truncated header")
        try:
            fields.append(int(data[start:i]))
        except ValueError:
            raise ValueError(f"{path}: bad header token {data[start:i]!r}") from None
    return fields, i + 1  # single whitespace byte separates header and raster


def load_image(path) -> np.ndarray:
    """Load a binary 8-bit PGM/PPM file, scaling samples to [0, 1]."""
    data = Path(path).read_bytes()
    (width, height, maxval), offset = _scan_pnm_header(data, path)
    channels = 1 if data[1:2] == b"5" else 3
    if not 0 < maxval < 256:
        raise ValueError(f"{path}: unsupported depth (maxval {maxval})")
    expected = width * height * channels
    raster = data[offset : offset + expected]
    if len(raster) != expected:
        raise ValueError(f"{path}: raster is {len(raster)} bytes, expected {expected}")
    arr = np.frombuffer(raster, dtype=np.uint8).astype(np.float64)
    if channels == 1:
        out = arr.reshape(1, height, width)
    else:
        out = arr.reshape(height, width, 3).transpose(2, 0, 1)
    return out / maxval


def save_image(image, path, signed: bool = False) -> None:
    """Write a tensor as binary 8-bit PGM/PPM.

    With signed=False samples are clamped to [0, 1] and quantized. With
    signed=True (normalized images, reconstructions) the tensor is affinely
    mapped to full range via (x - min) / (max - min) first; a constant
    image falls back to mid-gray.
    """
    img = as_image(image)
    c, h, w = img.shape
    if c not in (1, 3):
        raise ValueError(f"can only write 1- or 3-channel images, got {c}")
    if signed:
        lo, hi = float(img.min()), float(img.max())
        x = (img - lo) / (hi - lo) if hi > lo else np.full_like(img, 0.5)
    else:
        x = np.clip(img, 0.0, 1.0)
    raster = np.rint(x * 255.0).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    body = raster[0] if c == 1 else raster.transpose(1, 2, 0)
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(body).tobytes())


# ---------------------------------------------------------------------------
# sparse codes

def save_code(code: SparseCode, path) -> None:
    lines = [
        f"{CODE_MAGIC} {code.channels} {code.image_height} {code.image_width} "
        f"{len(code.activations)}"
    ]
    for act in code.activations:
        lines.append(f"{act.filter_index} {act.row} {act.col} {act.coefficient:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_code(path) -> SparseCode:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty code file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != CODE_MAGIC:
        raise ValueError(f"{path}: line 1: bad header {lines[0]!r}")
    try:
        channels, height, width, count = (int(t) for t in head[1:])
    except ValueError:
        raise ValueError(f"{path}: line 1: non-integer header field") from None
    activations = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}: line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            activations.append(
                Activation(int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3]))
            )
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: malformed record {line!r}") from None
    if len(activations) != count:
        raise ValueError(
            f"{path}: header promises {count} records, found {len(activations)}"
        )
    return SparseCode(channels, height, width, activations)


# ---------------------------------------------------------------------------
# filter-grid rendering

def _affine_to_unit(filt: np.ndarray) -> np.ndarray:
    lo, hi = float(filt.min()), float(filt.max())
    if hi > lo:
        return (filt - lo) / (hi - lo)
    return np.full_like(filt, 0.5)


def render_filter_grid(bank, path=None, cell_scale: int = 1) -> np.ndarray:
    """Tile the filters into a near-square grid image and optionally save it.

    Each filter is independently mapped to full range; multi-channel
    filters show their channels side by side inside the cell. Cells are
    separated by 1-pixel black rules; unused cells are mid-gray. Returns
    the composed [0, 1] grid (before scaling it is
    rows*(h_f+1)+1 by cols*(cell_w+1)+1 pixels, cell_w = c*w_f + c - 1).
    """
    bank = as_bank(bank, unit_norm=False)
    k, c, fh, fw = bank.shape
    if cell_scale < 1:
        raise ValueError(f"cell_scale must be >= 1, got {cell_scale}")
    cols = math.ceil(math.sqrt(k))
    rows = math.ceil(k / cols)
    cell_w = c * fw + (c - 1)
    grid = np.zeros((rows * (fh + 1) + 1, cols * (cell_w + 1) + 1))
    for cell in range(rows * cols):
        r, col = divmod(cell, cols)
        top, left = 1 + r * (fh + 1), 1 + col * (cell_w + 1)
        if cell >= k:
            grid[top : top + fh, left : left + cell_w] = 0.5
            continue
        mapped = _affine_to_unit(bank[cell])
        for ch in range(c):
            x = left + ch * (fw + 1)
            grid[top : top + fh, x : x + fw] = mapped[ch]
    if cell_scale > 1:
        grid = np.repeat(np.repeat(grid, cell_scale, axis=0), cell_scale, axis=1)
    if path is not None:
        save_image(grid[None], path)
    return grid


# ---------------------------------------------------------------------------
# corpus listing

def list_images(directory) -> list[Path]:
    """Sorted PGM/PPM paths in a directory."""
    d = Path(directory)
    return sorted(p for p in d.iterdir() if p.suffix.lower() in (".pgm", ".ppm"))


def list_float_images(directory) -> list[Path]:
    """Sorted float-sidecar paths in a directory."""
    return sorted(Path(directory).glob("*.f64"))
