"""Dense radio-map tensors, sampling masks, factor models and the
index conventions tying them together.

A radio map is a nonnegative M x N x K tensor of received power over an
M x N spatial grid and K frequency bins.  All grid coordinates are
0-based, and vectorization of a spatial field is column-major:

    vec_index(m, n) = n * M + m        (m runs fastest)

so column j of the matricized K x (M*N) view holds the spectrum of the
grid cell with linear index j.  Every type here is immutable after
construction; the operations are pure functions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import RangeError, ShapeError


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


def vec_index(m, n, dims):
    """Column-major linear index of grid cell (m, n) on an M x N grid."""
    big_m, big_n = dims
    if not (0 <= m < big_m and 0 <= n < big_n):
        raise RangeError(f"cell ({m}, {n}) outside {big_m} x {big_n} grid")
    return n * big_m + m


def inv_vec_index(j, dims):
    """Grid cell (m, n) for linear index j; inverse of vec_index."""
    big_m, big_n = dims
    if not 0 <= j < big_m * big_n:
        raise RangeError(f"linear index {j} outside {big_m} x {big_n} grid")
    return j % big_m, j // big_m


@dataclass(frozen=True)
class RadioMap:
    """Dense nonnegative power tensor over grid (M, N) and K bins."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"radio map must be M x N x K, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("radio map entries must be finite")
        if data.min() < 0:
            raise ValueError("radio map entries must be nonnegative")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def m(self):
        return self.data.shape[0]

    @property
    def n(self):
        return self.data.shape[1]

    @property
    def k(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class SamplingMask:
    """Set of observed grid cells Omega on an M x N grid.

    `omega` is kept sorted by linear index; `omega_vec` is its image
    under vec_index and `complement_vec` the unobserved indices, both
    ascending.
    """

    m: int
    n: int
    omega: tuple

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ShapeError("grid dimensions must be positive")
        cells = {(int(mm), int(nn)) for mm, nn in self.omega}
        if not cells:
            raise ValueError("sampling mask must contain at least one cell")
        idx = sorted(vec_index(mm, nn, (self.m, self.n)) for mm, nn in cells)
        ordered = tuple(inv_vec_index(j, (self.m, self.n)) for j in idx)
        object.__setattr__(self, "omega", ordered)
        object.__setattr__(self, "_omega_vec", _frozen(idx, dtype=np.int64))
        comp = np.setdiff1d(np.arange(self.m * self.n, dtype=np.int64), idx,
                            assume_unique=True)
        object.__setattr__(self, "_complement_vec", _frozen(comp, dtype=np.int64))

    @property
    def omega_vec(self):
        return self._omega_vec

    @property
    def complement_vec(self):
        return self._complement_vec

    @property
    def size(self):
        return len(self.omega)

    @property
    def observed_bool(self):
        """Boolean indicator over the M*N linear indices."""
        o = np.zeros(self.m * self.n, dtype=bool)
        o[self._omega_vec] = True
        return o


@dataclass(frozen=True)
class FactorModel:
    """R latent emitter factors: spatial loss fields and PSDs.

    slfs has shape (R, M, N), psds has shape (R, K); all entries
    nonnegative.
    """

    slfs: np.ndarray
    psds: np.ndarray

    def __post_init__(self):
        slfs = np.asarray(self.slfs, dtype=float)
        psds = np.asarray(self.psds, dtype=float)
        if slfs.ndim != 3 or psds.ndim != 2:
            raise ShapeError("slfs must be (R, M, N) and psds (R, K)")
        if slfs.shape[0] != psds.shape[0] or slfs.shape[0] < 1:
            raise ShapeError(
                f"factor count mismatch: {slfs.shape[0]} fields, "
                f"{psds.shape[0]} spectra")
        if slfs.min() < 0 or psds.min() < 0:
            raise ValueError("factors must be nonnegative")
        object.__setattr__(self, "slfs", _frozen(slfs))
        object.__setattr__(self, "psds", _frozen(psds))

    @property
    def r(self):
        return self.slfs.shape[0]

    @property
    def grid(self):
        return self.slfs.shape[1:]

    @property
    def k(self):
        return self.psds.shape[1]


@dataclass(frozen=True)
class MeasurementSet:
    """Observed columns Y(:, Omega_vec) plus the mask and the recorded
    normalization constant (max observed entry, used by the solvers)."""

    ymat: np.ndarray
    mask: SamplingMask
    scale: float

    def __post_init__(self):
        ymat = np.asarray(self.ymat, dtype=float)
        if ymat.ndim != 2 or ymat.shape[1] != self.mask.size:
            raise ShapeError(
                f"measurement matrix has {ymat.shape[1]} columns for "
                f"{self.mask.size} observed cells")
        if not self.scale > 0:
            raise ValueError("normalization scale must be positive")
        object.__setattr__(self, "ymat", _frozen(ymat))

    @property
    def k(self):
        return self.ymat.shape[0]


def compose(model):
    """Assemble the radio map sum_r S_r(m,n) * c_r(k) from its factors."""
    data = np.einsum("rmn,rk->mnk", model.slfs, model.psds)
    return RadioMap(data)


def matricize(x):
    """K x (M*N) view of a tensor; column j = X(m, n, :) at j = vec_index(m, n)."""
    data = x.data if isinstance(x, RadioMap) else np.asarray(x, dtype=float)
    if data.ndim != 3:
        raise ShapeError(f"expected M x N x K tensor, got {data.shape}")
    big_m, big_n, big_k = data.shape
    return data.transpose(2, 1, 0).reshape(big_k, big_n * big_m)


def unmatricize(ymat, dims):
    """Inverse of matricize for grid dims (M, N)."""
    big_m, big_n = dims
    ymat = np.asarray(ymat, dtype=float)
    if ymat.ndim != 2 or ymat.shape[1] != big_m * big_n:
        raise ShapeError(
            f"matrix with {ymat.shape} cannot unfold to grid {dims}")
    return ymat.reshape(ymat.shape[0], big_n, big_m).transpose(2, 1, 0)


def restrict(ymat, mask):
    """Gather the observed columns of a K x (M*N) matrix into a MeasurementSet.

    Columns come out in ascending linear-index order and are copied
    bit-exactly; the recorded scale is the max observed entry (1.0 when
    the observations are not positive).
    """
    ymat = np.asarray(ymat, dtype=float)
    if ymat.ndim != 2 or ymat.shape[1] != mask.m * mask.n:
        raise ShapeError(
            f"matrix shape {ymat.shape} does not match grid "
            f"{mask.m} x {mask.n}")
    cols = ymat[:, mask.omega_vec]
    top = cols.max() if cols.size else 0.0
    scale = float(top) if top > 0 else 1.0
    return MeasurementSet(ymat=cols, mask=mask, scale=scale)
