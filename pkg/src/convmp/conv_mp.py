"""Convolutional matching pursuit over a bank of shared filters.

An image is encoded against every valid placement of every filter. The
explicit dictionary of all placements would be enormous, but its Gram
matrix only depends on relative shifts, so the greedy loop runs off a
(k, k, 2*h_f-1, 2*w_f-1) table of filter/filter inner products: after a
peak is subtracted, only correlation values inside the overlap window
around it change, and each change is a table lookup. Encoding therefore
costs one application of the filter bank plus work linear in the number
of pursuit steps times the map area.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Activation, SparseCode, as_bank, as_image

TOEPLITZ_COLUMN_LIMIT = 100_000


def correlate(bank, image) -> np.ndarray:
    """Valid cross-correlation of each filter with the image, channel-summed.

    Returns maps of shape (k, h - h_f + 1, w - w_f + 1) where
    maps[j, r, c] = <filter j placed at (r, c), image>.
    """
    bank = as_bank(bank, unit_norm=False)
    img = as_image(image)
    k, c, fh, fw = bank.shape
    ci, h, w = img.shape
    if ci != c:
        raise ValueError(f"channels mismatch: bank has {c}, image has {ci}")
    if fh > h or fw > w:
        raise ValueError(f"filter {fh}x{fw} does not fit inside image {h}x{w}")
    hv, wv = h - fh + 1, w - fw + 1
    windows = sliding_window_view(img, (c, fh, fw))  # (1, hv, wv, c, fh, fw)
    flat = windows.reshape(hv * wv, c * fh * fw)
    maps = flat @ bank.reshape(k, -1).T
    return np.ascontiguousarray(maps.T).reshape(k, hv, wv)


def build_shift_gram(bank) -> np.ndarray:
    """Inner products of every filter pair at every relative shift.

    table[i, j, dr, dc] is the inner product of filter i with filter j
    shifted by (dr - (h_f - 1), dc - (w_f - 1)), channel-summed over the
    overlap (zero outside it). The table is reflection-symmetric by
    construction: table[i, j, dr, dc] == table[j, i, -dr, -dc] exactly,
    with offsets counted from the center.
    """
    bank = as_bank(bank, unit_norm=False)
    k, c, fh, fw = bank.shape
    th, tw = 2 * fh - 1, 2 * fw - 1
    table = np.empty((k, k, th, tw))
    canvas = np.zeros((c, 3 * fh - 2, 3 * fw - 2))
    for j in range(k):
        canvas[:, fh - 1 : 2 * fh - 1, fw - 1 : 2 * fw - 1] = bank[j]
        # Correlating filter i over the centered canvas scans shifts in
        # reverse order, hence the double flip.
        table[:, j] = correlate(bank, canvas)[:, ::-1, ::-1]
    # Mirror one triangle onto the other so the symmetry holds bit-exactly.
    for i in range(k):
        flat = table[i, i].ravel()
        n = flat.size
        flat[n // 2 + 1 :] = flat[: n // 2][::-1]
        for j in range(i + 1, k):
            table[j, i] = table[i, j][::-1, ::-1]
    return table


def _check_table(bank: np.ndarray, table: np.ndarray) -> None:
    k, _, fh, fw = bank.shape
    expect = (k, k, 2 * fh - 1, 2 * fw - 1)
    t = np.asarray(table)
    if t.shape != expect:
        raise ValueError(f"shift table shape {t.shape} does not match bank, expected {expect}")
    center = t[np.arange(k), np.arange(k), fh - 1, fw - 1]
    if np.any(np.abs(center - 1.0) > 1e-6):
        raise ValueError("shift table center diagonal is not 1; stale or corrupt table")


def greedy_steps(maps, table, max_steps: int, tolerance: float = 0.0) -> list[Activation]:
    """Run the post-correlation pursuit loop, updating maps in place.

    Each step picks the entry of largest magnitude (ties to the lowest
    filter index, then row-major position), records it, and subtracts its
    contribution from every map inside the overlap window via table
    lookups. Stops after max_steps or when the peak magnitude drops to
    tolerance or below. The caller owns maps; on return they equal the
    correlations of the bank with the implied residual.
    """
    k, hv, wv = maps.shape
    fh = (table.shape[2] + 1) // 2
    fw = (table.shape[3] + 1) // 2
    activations: list[Activation] = []
    for _ in range(max_steps):
        flat = int(np.abs(maps).argmax())
        j, pr, pc = np.unravel_index(flat, maps.shape)
        a = float(maps[j, pr, pc])
        if abs(a) <= tolerance:
            break
        activations.append(Activation(int(j), int(pr), int(pc), a))
        r0, r1 = max(0, pr - fh + 1), min(hv, pr + fh)
        c0, c1 = max(0, pc - fw + 1), min(wv, pc + fw)
        maps[:, r0:r1, c0:c1] -= a * table[
            j,
            :,
            r0 - pr + fh - 1 : r1 - pr + fh - 1,
            c0 - pc + fw - 1 : c1 - pc + fw - 1,
        ]
    return activations


def conv_mp_encode(bank, table, image, q: int, residual_tolerance: float = 0.0) -> SparseCode:
    """Greedily encode an image with at most q activations.

    table must be build_shift_gram(bank). The image is correlated with the
    bank once; afterwards the correlation maps are maintained through table
    lookups only.
    """
    bank = as_bank(bank)
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    if residual_tolerance < 0:
        raise ValueError(f"residual_tolerance must be >= 0, got {residual_tolerance}")
    _check_table(bank, table)
    img = as_image(image)
    maps = correlate(bank, img)
    activations = greedy_steps(maps, np.asarray(table), q, residual_tolerance)
    c, h, w = img.shape
    return SparseCode(c, h, w, activations)


def toeplitz_expand(bank, image_dims) -> np.ndarray:
    """Explicit dictionary of all zero-padded filter placements.

    Column (j, r, c) holds filter j pasted at valid position (r, c) of an
    image of the given (height, width), flattened in canonical layout;
    columns are ordered filter-major, then row-major by position. Intended
    for small oracle instances only, so the column count is capped.
    """
    bank = as_bank(bank, unit_norm=False)
    k, c, fh, fw = bank.shape
    h, w = image_dims
    if fh > h or fw > w:
        raise ValueError(f"filter {fh}x{fw} does not fit inside image {h}x{w}")
    hv, wv = h - fh + 1, w - fw + 1
    ncols = k * hv * wv
    if ncols > TOEPLITZ_COLUMN_LIMIT:
        raise ValueError(
            f"Toeplitz expansion needs {ncols} columns, over the {TOEPLITZ_COLUMN_LIMIT} guard"
        )
    out = np.zeros((c * h * w, ncols))
    canvas = np.zeros((c, h, w))
    col = 0
    for j in range(k):
        for r in range(hv):
            for cc in range(wv):
                canvas[:] = 0.0
                canvas[:, r : r + fh, cc : cc + fw] = bank[j]
                out[:, col] = canvas.ravel()
                col += 1
    return out
