"""Shared numeric types, reconstruction, and energy accounting.

Array conventions used throughout the package:

* image: float64 array of shape (channels, height, width). Serialization
  order is row-major within a channel, channels outermost (C order).
* filter bank: float64 array of shape (count, channels, filter_height,
  filter_width); every filter is kept at unit l2 norm.
* positions are "valid" coordinates: a filter placed at (row, col) lies
  fully inside the image, so 0 <= row <= height - filter_height and
  0 <= col <= width - filter_width.

All arithmetic is 64-bit floating point. Arrays handed to these functions
are never mutated; operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNIT_NORM_ATOL = 1e-10


@dataclass(frozen=True)
class Activation:
    """One selected (filter, position, coefficient) triple of a code."""

    filter_index: int
    row: int
    col: int
    coefficient: float


@dataclass
class SparseCode:
    """Ordered activation list produced by greedy encoding of one image.

    Repeated (filter, position) pairs are allowed; their coefficients sum.
    """

    channels: int
    image_height: int
    image_width: int
    activations: list[Activation] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.activations)


@dataclass
class TrainConfig:
    """Hyperparameters for dictionary learning."""

    num_filters: int
    filter_height: int
    filter_width: int
    sparsity: int  # greedy pursuit steps per image
    epochs: int
    seed: int = 0
    residual_tolerance: float = 0.0  # stop a pursuit when peak |corr| <= this
    min_activations: int = 1  # below this per epoch a filter is reinitialized

    def validate(self) -> None:
        for name in ("num_filters", "filter_height", "filter_width", "epochs"):
            if getattr(self, name) < (0 if name == "epochs" else 1):
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.sparsity < 1:
            raise ValueError(f"sparsity must be >= 1, got {self.sparsity}")
        if self.min_activations < 1:
            raise ValueError(f"min_activations must be >= 1, got {self.min_activations}")
        if self.residual_tolerance < 0:
            raise ValueError(
                f"residual_tolerance must be >= 0, got {self.residual_tolerance}"
            )


def as_image(arr, name: str = "image") -> np.ndarray:
    """Validate an array as a (channels, height, width) image of finite floats."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"{name} must have shape (channels, height, width), got {a.shape}")
    if min(a.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} samples must be finite (found NaN or Inf)")
    return a


def as_bank(arr, name: str = "bank", unit_norm: bool = True) -> np.ndarray:
    """Validate an array as a (count, channels, h_f, w_f) filter bank."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 4:
        raise ValueError(f"{name} must have shape (count, channels, h_f, w_f), got {a.shape}")
    if min(a.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} entries must be finite (found NaN or Inf)")
    if unit_norm:
        norms = filter_norms(a)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_ATOL)
        if bad.size:
            raise ValueError(
                f"{name} filter {bad[0]} has norm {norms[bad[0]]:.12g}, expected 1"
            )
    return a


def filter_norms(bank: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.square(bank), axis=(1, 2, 3)))


def check_compatible(code: SparseCode, bank: np.ndarray) -> None:
    """Reject (code, bank) pairs whose dims disagree, naming the offending field."""
    k, c, fh, fw = bank.shape
    if code.channels != c:
        raise ValueError(f"channels mismatch: code has {code.channels}, bank has {c}")
    if fh > code.image_height:
        raise ValueError(
            f"filter_height {fh} exceeds image_height {code.image_height}"
        )
    if fw > code.image_width:
        raise ValueError(f"filter_width {fw} exceeds image_width {code.image_width}")
    max_row = code.image_height - fh
    max_col = code.image_width - fw
    for i, act in enumerate(code.activations):
        if not 0 <= act.filter_index < k:
            raise ValueError(
                f"activation {i}: filter_index {act.filter_index} outside bank of {k}"
            )
        if not 0 <= act.row <= max_row:
            raise ValueError(f"activation {i}: row {act.row} outside valid grid [0, {max_row}]")
        if not 0 <= act.col <= max_col:
            raise ValueError(f"activation {i}: col {act.col} outside valid grid [0, {max_col}]")


def reconstruct(code: SparseCode, bank: np.ndarray) -> np.ndarray:
    """Sum of coefficient-scaled filters pasted at their activation positions."""
    bank = as_bank(bank, unit_norm=False)
    check_compatible(code, bank)
    _, _, fh, fw = bank.shape
    out = np.zeros((code.channels, code.image_height, code.image_width))
    for act in code.activations:
        out[:, act.row : act.row + fh, act.col : act.col + fw] += (
            act.coefficient * bank[act.filter_index]
        )
    return out


def residual_energy(image, code: SparseCode, bank: np.ndarray) -> float:
    """Squared l2 norm of image minus its reconstruction from the code."""
    img = as_image(image)
    if (code.channels, code.image_height, code.image_width) != img.shape:
        raise ValueError(
            f"code dims {(code.channels, code.image_height, code.image_width)} "
            f"do not match image shape {img.shape}"
        )
    diff = img - reconstruct(code, bank)
    return float(np.sum(np.square(diff)))


def normalize_filters(bank) -> np.ndarray:
    """Rescale every filter to unit l2 norm, preserving direction."""
    a = as_bank(bank, unit_norm=False)
    norms = filter_norms(a)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"filter {zero[0]} is identically zero and cannot be normalized")
    return a / norms[:, None, None, None]
