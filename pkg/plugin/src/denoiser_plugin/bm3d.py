"""Compact two-stage block-matching 3D-transform denoiser.

Hard-thresholding pass followed by an empirical Wiener pass, both on
groups of similar 8x8 blocks gathered inside a local search window and
jointly transformed with orthonormal DCTs.  Tuned for the small frames
this toolkit works with; it is not a bit-for-bit port of any reference
implementation.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct, dctn, idct, idctn

BLOCK = 8
STEP = 3
SEARCH = 12
GROUP = 16
HARD_LAMBDA = 2.7


def _ref_positions(extent):
    pos = list(range(0, extent, STEP))
    if pos[-1] != extent - 1:
        pos.append(extent - 1)
    return pos


def _match(block_view, pm, pn):
    """Top-GROUP most similar block positions inside the search window."""
    top_m, top_n = block_view.shape[:2]
    m0, m1 = max(0, pm - SEARCH), min(top_m, pm + SEARCH + 1)
    n0, n1 = max(0, pn - SEARCH), min(top_n, pn + SEARCH + 1)
    cand = block_view[m0:m1, n0:n1]
    ref = block_view[pm, pn]
    dist = ((cand - ref) ** 2).sum(axis=(-2, -1)).ravel()
    take = min(GROUP, dist.size)
    order = np.argpartition(dist, take - 1)[:take]
    rows = m0 + order // (n1 - n0)
    cols = n0 + order % (n1 - n0)
    return rows, cols


def _aggregate(num, den, rows, cols, group, weight):
    for g in range(group.shape[0]):
        sl = (slice(rows[g], rows[g] + BLOCK),
              slice(cols[g], cols[g] + BLOCK))
        num[sl] += weight * group[g]
        den[sl] += weight


def _hard_stage(noisy, sigma):
    m, n = noisy.shape
    blocks = sliding_window_view(noisy, (BLOCK, BLOCK))
    num = np.zeros_like(noisy)
    den = np.zeros_like(noisy)
    thresh = HARD_LAMBDA * sigma
    for pm in _ref_positions(m - BLOCK + 1):
        for pn in _ref_positions(n - BLOCK + 1):
            rows, cols = _match(blocks, pm, pn)
            group = blocks[rows, cols].copy()
            spec = dctn(group, axes=(1, 2), norm="ortho")
            spec = dct(spec, axis=0, norm="ortho")
            keep = np.abs(spec) > thresh
            retained = int(keep.sum())
            spec *= keep
            group = idct(spec, axis=0, norm="ortho")
            group = idctn(group, axes=(1, 2), norm="ortho")
            _aggregate(num, den, rows, cols, group, 1.0 / (1.0 + retained))
    return num / den


def _wiener_stage(noisy, basic, sigma):
    m, n = noisy.shape
    blocks_noisy = sliding_window_view(noisy, (BLOCK, BLOCK))
    blocks_basic = sliding_window_view(basic, (BLOCK, BLOCK))
    num = np.zeros_like(noisy)
    den = np.zeros_like(noisy)
    var = sigma**2
    for pm in _ref_positions(m - BLOCK + 1):
        for pn in _ref_positions(n - BLOCK + 1):
            rows, cols = _match(blocks_basic, pm, pn)
            ref_spec = dct(dctn(blocks_basic[rows, cols].copy(),
                                axes=(1, 2), norm="ortho"),
                           axis=0, norm="ortho")
            shrink = ref_spec**2 / (ref_spec**2 + var)
            spec = dct(dctn(blocks_noisy[rows, cols].copy(),
                            axes=(1, 2), norm="ortho"),
                       axis=0, norm="ortho")
            group = idctn(idct(spec * shrink, axis=0, norm="ortho"),
                          axes=(1, 2), norm="ortho")
            weight = 1.0 / (var * float((shrink**2).sum()) + 1e-12)
            _aggregate(num, den, rows, cols, group, weight)
    return num / den


def bm3d(image, sigma):
    """Denoise one grayscale frame at noise standard deviation sigma."""
    image = np.asarray(image, dtype=float)
    if min(image.shape) < BLOCK:
        return image.copy()  # frame smaller than a block
    if sigma <= 1e-12:
        return image.copy()
    basic = _hard_stage(image, sigma)
    return _wiener_stage(image, basic, sigma)
