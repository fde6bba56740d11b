"""Statistical-model synthetic radio maps.

Each emitter contributes a spatial loss field built from an isotropic
power law around its location multiplied by log-normal shadowing, and a
power spectral density made of a few raised-cosine bumps.  Shadowing is
an exponentially correlated Gaussian field sampled exactly through a
dense covariance Cholesky factor, which restricts grids to 64 x 64.

Every generator takes an explicit numpy Generator, so a fixed seed
reproduces the dataset bit for bit and independent trials can run
concurrently with independent seeds.
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .core import FactorModel, RadioMap, SamplingMask, compose
from .errors import NumericalError, ShapeError

MAX_EXACT_GRID = 64
MIN_EMITTER_SEPARATION = 5.0
PLACEMENT_RETRIES = 100


@dataclass(frozen=True)
class PsdConfig:
    """Raised-cosine bump mixture for emitter spectra."""

    bumps: tuple = (2, 4)
    half_width: tuple = (2, 6)
    amplitude: tuple = (0.5, 2.0)


@dataclass(frozen=True)
class StatModelConfig:
    m: int = 51
    n: int = 51
    k: int = 32
    r: int = 6
    d0: float = 2.5
    gamma_pl_range: tuple = (2.0, 2.5)
    sigma_s: float = 6.0
    d_c: float = 50.0
    psd: PsdConfig = field(default_factory=PsdConfig)
    seed: int = 0

    def __post_init__(self):
        if min(self.m, self.n, self.k) < 1 or self.r < 1:
            raise ShapeError("grid dims, bin count and emitter count must be >= 1")
        if self.d0 <= 0 or self.d_c <= 0 or self.sigma_s < 0:
            raise ValueError("d0 and d_c must be positive, sigma_s nonnegative")
        lo, hi = self.gamma_pl_range
        if not (0 < lo <= hi):
            raise ValueError("path-loss exponent range must sit in (0, inf)")


@dataclass(frozen=True)
class NoiseSpec:
    """Target SNR in dB; None means clean."""

    snr_db: float | None = None

    def __post_init__(self):
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")

    @classmethod
    def parse(cls, text):
        if text is None or str(text).lower() == "clean":
            return cls(None)
        return cls(float(text))

    @property
    def clean(self):
        return self.snr_db is None


_chol_cache: dict = {}


def _shadow_cholesky(m, n, d0, sigma_s, d_c):
    key = (m, n, float(d0), float(sigma_s), float(d_c))
    hit = _chol_cache.get(key)
    if hit is not None:
        return hit
    mm, nn = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    pts = np.column_stack([mm.ravel(order="F"), nn.ravel(order="F")]).astype(float)
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    cov = sigma_s**2 * np.exp(-d0 * dist / d_c)
    cov[np.diag_indices_from(cov)] += 1e-10 * sigma_s**2
    try:
        lower = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"shadowing covariance not positive definite for {key}") from exc
    _chol_cache[key] = lower
    return lower


def gen_shadow_field(cfg, rng):
    """Sample one zero-mean shadowing field (dB units) of shape (M, N).

    The field has covariance sigma_s^2 * exp(-d0 * ||p1 - p2|| / d_c)
    with p in grid units.  Exact dense sampling; grids above 64 x 64
    are rejected.
    """
    if max(cfg.m, cfg.n) > MAX_EXACT_GRID:
        raise ShapeError(
            f"exact field sampling supports grids up to {MAX_EXACT_GRID}; "
            f"got {cfg.m} x {cfg.n}")
    if cfg.sigma_s == 0:
        # keep the draw so the rng stream does not depend on sigma_s
        rng.standard_normal(cfg.m * cfg.n)
        return np.zeros((cfg.m, cfg.n))
    lower = _shadow_cholesky(cfg.m, cfg.n, cfg.d0, cfg.sigma_s, cfg.d_c)
    sample = lower @ rng.standard_normal(cfg.m * cfg.n)
    return sample.reshape(cfg.n, cfg.m).T.copy()


def gen_slf(cfg, emitter_loc, rng, shadow=None, gamma=None):
    """Spatial loss field of one emitter.

    S(m, n) = 10^(shadow(m,n)/10) / (d0 * max(dist, 1))^gamma with dist
    the grid-unit distance to the emitter, clamped at one grid unit to
    avoid the singularity at the emitter cell.  gamma is drawn uniform
    over cfg.gamma_pl_range unless given.
    """
    em, en = emitter_loc
    if not (0 <= em < cfg.m and 0 <= en < cfg.n):
        raise ShapeError(f"emitter {emitter_loc} outside grid")
    if gamma is None:
        gamma = rng.uniform(*cfg.gamma_pl_range)
    if shadow is None:
        shadow = gen_shadow_field(cfg, rng)
    mm, nn = np.meshgrid(np.arange(cfg.m), np.arange(cfg.n), indexing="ij")
    dist = np.hypot(mm - em, nn - en)
    np.maximum(dist, 1.0, out=dist)
    return 10.0 ** (shadow / 10.0) / (cfg.d0 * dist) ** gamma, float(gamma)


def gen_psd(k, psd_cfg, rng):
    """Nonnegative length-K mixture of raised-cosine bumps."""
    if k < 4:
        raise ShapeError("spectra need at least 4 bins")
    bins = np.arange(k, dtype=float)
    for _ in range(100):
        psd = np.zeros(k)
        n_bumps = rng.integers(psd_cfg.bumps[0], psd_cfg.bumps[1] + 1)
        for _ in range(n_bumps):
            center = rng.uniform(0, k - 1)
            half = rng.integers(psd_cfg.half_width[0], psd_cfg.half_width[1] + 1)
            amp = rng.uniform(*psd_cfg.amplitude)
            offs = np.abs(bins - center)
            lobe = 0.5 * (1.0 + np.cos(np.pi * offs / (half + 1)))
            psd += amp * np.where(offs <= half, lobe, 0.0)
        if psd.max() > 0:
            return psd
    raise NumericalError("PSD sampling kept returning all-zero spectra")


def place_emitters(cfg, rng):
    """Uniform emitter cells with pairwise separation >= 5 grid units.

    Resamples the whole layout up to 100 times, then accepts whatever
    the last draw produced.
    """
    locs = []
    for attempt in range(PLACEMENT_RETRIES + 1):
        locs = [(int(rng.integers(cfg.m)), int(rng.integers(cfg.n)))
                for _ in range(cfg.r)]
        ok = all(
            math.hypot(a[0] - b[0], a[1] - b[1]) >= MIN_EMITTER_SEPARATION
            for i, a in enumerate(locs) for b in locs[:i])
        if ok:
            break
    return locs


def sample_mask(dims, tau, rng):
    """Uniform without-replacement mask with |Omega| = round(tau * M * N)."""
    big_m, big_n = dims
    if not 0 < tau <= 1:
        raise ValueError(f"sampling rate must sit in (0, 1], got {tau}")
    count = int(round(tau * big_m * big_n))
    if count < 1:
        raise ValueError(f"sampling rate {tau} selects no cells")
    idx = rng.choice(big_m * big_n, size=count, replace=False)
    cells = [(int(j % big_m), int(j // big_m)) for j in idx]
    return SamplingMask(m=big_m, n=big_n, omega=tuple(cells))


def add_noise(x, spec, rng):
    """Additive zero-mean Gaussian noise hitting the requested SNR exactly.

    Returns (y, v) as plain arrays; the noise draw is rescaled after the
    fact so 10*log10(||x||^2 / ||v||^2) equals spec.snr_db to machine
    precision.
    """
    data = x.data if isinstance(x, RadioMap) else np.asarray(x, dtype=float)
    if spec.clean:
        return data.copy(), np.zeros_like(data)
    power = float(np.sum(data**2))
    if power == 0:
        raise ValueError("cannot calibrate SNR against an all-zero map")
    draw = rng.standard_normal(data.shape)
    target = power / 10.0 ** (spec.snr_db / 10.0)
    draw *= math.sqrt(target / float(np.sum(draw**2)))
    return data + draw, draw


def generate_map(cfg, rng=None):
    """Build one synthetic map; returns (RadioMap, FactorModel, sidecar dict)."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    locs = place_emitters(cfg, rng)
    slfs, psds, gammas = [], [], []
    for loc in locs:
        field_r, gamma = gen_slf(cfg, loc, rng)
        slfs.append(field_r)
        gammas.append(gamma)
        psds.append(gen_psd(cfg.k, cfg.psd, rng))
    model = FactorModel(slfs=np.stack(slfs), psds=np.stack(psds))
    sidecar = {
        "config": asdict(cfg),
        "seed": cfg.seed,
        "emitter_locs": [list(loc) for loc in locs],
        "gamma_draws": gammas,
    }
    return compose(model), model, sidecar
