"""Recovery metrics: relative squared error and log-domain mean SSIM.

The SSIM score follows the canonical construction (11 x 11 Gaussian
window, sigma 1.5, K1 = 0.01, K2 = 0.03 on unit dynamic range) applied
per frequency band after a log-power transform: both slices are mapped
through 10*log10(. + floor) and jointly affine-normalized to [0, 1],
so the score rewards fidelity in low-power regions and neither slice's
dynamic range can skew the comparison unilaterally.
"""

import csv
import os

import numpy as np
from skimage.metrics import structural_similarity

from .core import RadioMap
from .errors import ShapeError

CSV_FIELDS = ["run_id", "method", "tau", "sigma_s", "snr", "rse", "mssim",
              "seconds"]


def _as_array(x):
    return x.data if isinstance(x, RadioMap) else np.asarray(x, dtype=float)


def rse(estimate, truth):
    """||estimate - truth||_F^2 / ||truth||_F^2."""
    est = _as_array(estimate)
    ref = _as_array(truth)
    if est.shape != ref.shape:
        raise ShapeError(f"shape mismatch {est.shape} vs {ref.shape}")
    denom = float(np.sum(ref**2))
    if denom == 0:
        raise ValueError("reference map is identically zero")
    return float(np.sum((est - ref) ** 2)) / denom


def _log_slice(img, floor):
    return 10.0 * np.log10(np.maximum(img, 0.0) + floor)


def mssim(estimate, truth):
    """Mean per-band SSIM of the log-power maps, in [0, 1]."""
    est = _as_array(estimate)
    ref = _as_array(truth)
    if est.shape != ref.shape:
        raise ShapeError(f"shape mismatch {est.shape} vs {ref.shape}")
    floor = 1e-12 * ref.max() if ref.max() > 0 else 1.0
    scores = []
    for k in range(est.shape[2]):
        a = _log_slice(est[:, :, k], floor)
        b = _log_slice(ref[:, :, k], floor)
        lo = min(a.min(), b.min())
        hi = max(a.max(), b.max())
        if hi - lo <= 0:
            scores.append(1.0)  # both slices are the same constant
            continue
        a = (a - lo) / (hi - lo)
        b = (b - lo) / (hi - lo)
        scores.append(structural_similarity(
            a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False))
    return float(np.mean(scores))


def metrics_row(run_id, method, tau, sigma_s, snr, rse_value, mssim_value,
                seconds):
    return {"run_id": run_id, "method": method, "tau": tau,
            "sigma_s": sigma_s, "snr": snr, "rse": rse_value,
            "mssim": mssim_value, "seconds": seconds}


def write_metrics_csv(path, rows, append=False):
    """Write metric rows with the fixed column layout."""
    exists = os.path.exists(path)
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        if not (append and exists):
            writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
