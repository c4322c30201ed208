"""Matching pursuit over an explicit dictionary matrix.

The dictionary is a (dim, count) float64 array whose columns are unit-norm
atoms. Besides the plain greedy loop, a bookkeeping variant is provided
that correlates the dictionary with the signal only once and afterwards
updates the correlation vector through Gram-matrix rows. The plain variant
doubles as the oracle backend for the convolutional encoder's equivalence
tests (see conv_mp.toeplitz_expand).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import UNIT_NORM_ATOL


@dataclass
class PatchCode:
    """Greedy pursuit result over an explicit dictionary.

    ``coefficients[i]`` is the sum of all step increments for atom i;
    ``steps`` records the selection order as (atom index, increment) pairs.
    ``residual`` is the final residual when the encoder formed one (the
    Gram-bookkeeping encoder never touches the signal after its initial
    correlation, so it leaves this as None).
    """

    coefficients: np.ndarray
    steps: list[tuple[int, float]] = field(default_factory=list)
    residual: np.ndarray | None = None


def as_dictionary(arr, name: str = "dictionary") -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must have shape (dim, count), got {a.shape}")
    norms = np.sqrt(np.sum(a * a, axis=0))
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_ATOL)
    if bad.size:
        raise ValueError(f"{name} atom {bad[0]} has norm {norms[bad[0]]:.12g}, expected 1")
    return a


def _signal_correlations(atoms: np.ndarray, signal: np.ndarray) -> np.ndarray:
    # Full dictionary-signal multiplication; the Gram variant calls this once.
    return atoms.T @ signal


def mp_encode(dictionary, signal, q: int) -> PatchCode:
    """Run exactly q greedy pursuit steps against the signal.

    Each step selects the atom with the largest absolute correlation with
    the current residual (ties to the lowest index), subtracts its signed
    projection from the residual, and accumulates the coefficient.
    """
    atoms = as_dictionary(dictionary)
    x = np.asarray(signal, dtype=np.float64)
    if x.shape != (atoms.shape[0],):
        raise ValueError(
            f"signal shape {x.shape} does not match dictionary dim {atoms.shape[0]}"
        )
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")

    residual = x.copy()
    coeffs = np.zeros(atoms.shape[1])
    steps: list[tuple[int, float]] = []
    for _ in range(q):
        corr = _signal_correlations(atoms, residual)
        j = int(np.argmax(np.abs(corr)))
        a = float(corr[j])
        residual -= a * atoms[:, j]
        coeffs[j] += a
        steps.append((j, a))
    return PatchCode(coeffs, steps, residual)


def gram_matrix(dictionary) -> np.ndarray:
    """Pairwise atom inner products, entries[i][j] = <atom_i, atom_j>."""
    atoms = as_dictionary(dictionary)
    return atoms.T @ atoms


def mp_encode_gram(dictionary, gram, signal, q: int) -> PatchCode:
    """Pursuit with Gram bookkeeping: one dictionary-signal product total.

    Produces the same step sequence as mp_encode but maintains the
    correlation vector through rows of the Gram matrix instead of
    re-correlating the dictionary against the residual each step.
    """
    atoms = as_dictionary(dictionary)
    g = np.asarray(gram, dtype=np.float64)
    count = atoms.shape[1]
    if g.shape != (count, count):
        raise ValueError(f"gram shape {g.shape} does not match atom count {count}")
    x = np.asarray(signal, dtype=np.float64)
    if x.shape != (atoms.shape[0],):
        raise ValueError(
            f"signal shape {x.shape} does not match dictionary dim {atoms.shape[0]}"
        )
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")

    corr = _signal_correlations(atoms, x)
    coeffs = np.zeros(count)
    steps: list[tuple[int, float]] = []
    for _ in range(q):
        j = int(np.argmax(np.abs(corr)))
        a = float(corr[j])
        corr -= a * g[:, j]
        coeffs[j] += a
        steps.append((j, a))
    return PatchCode(coeffs, steps)
