"""Convolutional matching pursuit and translation-invariant dictionary learning.

Sparse-codes images against a bank of small shared filters with a greedy
pursuit whose correlation bookkeeping runs off a precomputed table of
filter/filter inner products at all relative shifts, and learns the bank by
alternating encoding with per-filter PCA updates over activated patches.
"""

__version__ = "0.1.0"

from .core import (
    Activation,
    SparseCode,
    TrainConfig,
    normalize_filters,
    reconstruct,
    residual_energy,
)
from .conv_mp import build_shift_gram, conv_mp_encode, correlate, toeplitz_expand
from .dict_learn import TrainStats, init_filters, train
from .patch_mp import PatchCode, gram_matrix, mp_encode, mp_encode_gram

__all__ = [
    "Activation",
    "SparseCode",
    "TrainConfig",
    "TrainStats",
    "PatchCode",
    "normalize_filters",
    "reconstruct",
    "residual_energy",
    "correlate",
    "build_shift_gram",
    "conv_mp_encode",
    "toeplitz_expand",
    "gram_matrix",
    "mp_encode",
    "mp_encode_gram",
    "init_filters",
    "train",
]
