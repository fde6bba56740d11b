"""Denoising engines the plugin can serve."""

import numpy as np
from scipy.ndimage import gaussian_filter
from skimage.restoration import denoise_nl_means, denoise_wavelet

from .bm3d import bm3d


def _identity(field, sigma):
    return field


def _gaussian(field, sigma):
    return gaussian_filter(field, sigma=max(10.0 * sigma, 0.5))


def _nlm(field, sigma):
    return denoise_nl_means(field, patch_size=5, patch_distance=5,
                            h=0.8 * sigma, sigma=sigma, fast_mode=True)


def _wavelet(field, sigma):
    return denoise_wavelet(field, sigma=sigma, rescale_sigma=True)


ENGINES = {
    "identity": _identity,
    "gaussian": _gaussian,
    "nlm": _nlm,
    "wavelet": _wavelet,
    "bm3d": bm3d,
}


def get_engine(mode):
    try:
        return ENGINES[mode]
    except KeyError:
        raise ValueError(
            f"unknown mode {mode!r}; choose from {sorted(ENGINES)}") from None


def denoise(field, sigma, mode="bm3d"):
    return np.asarray(get_engine(mode)(field, sigma), dtype=float)
