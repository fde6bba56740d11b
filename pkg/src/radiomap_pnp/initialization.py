"""Initial factors for the latent-domain solver.

Anchor spectra are picked from the observed columns by successive
projection (greedy max-norm column selection followed by orthogonal
deflation).  The observed parts of the spatial fields then come from a
short run of block-coordinate nonnegative least squares against the
fixed anchors, and the unobserved cells are filled from their nearest
observed neighbor.
"""

import numpy as np

from .errors import RankDeficiencyError

SPA_COLLAPSE_RTOL = 1e-12
NNLS_SWEEPS = 50


def spa_select(ymat, r):
    """Indices of r anchor columns of a nonnegative K x |Omega| matrix.

    Greedy: repeatedly take the column of largest l2 norm, then project
    every column onto the orthogonal complement of the pick.  Raises
    RankDeficiencyError when the residual collapses before r picks.
    """
    work = np.array(ymat, dtype=float)
    k, cols = work.shape
    if r > min(k, cols):
        raise RankDeficiencyError(
            f"cannot pick {r} anchors from a {k} x {cols} matrix")
    norms_sq = (work**2).sum(axis=0)
    initial = np.sqrt(norms_sq.max())
    picks = []
    for _ in range(r):
        idx = int(np.argmax(norms_sq))  # first index wins ties
        if np.sqrt(norms_sq[idx]) <= SPA_COLLAPSE_RTOL * initial:
            raise RankDeficiencyError(
                f"column norms collapsed after {len(picks)} of {r} picks")
        picks.append(idx)
        q = work[:, idx] / np.linalg.norm(work[:, idx])
        work -= np.outer(q, q @ work)
        norms_sq = (work**2).sum(axis=0)
    return picks


def init_factors(meas, r):
    """Anchor spectra plus nonnegative fit of the observed field values.

    Operates on the normalization-scaled measurements (max observed
    entry = 1).  Returns (s_obs, psds): s_obs is |Omega| x R, psds is
    R x K with unit-l2 rows (the scale of each pair is pushed into the
    field so a single set of solver regularization weights works across
    datasets).  The fit runs a fixed number of block-coordinate sweeps
    starting from the all-ones field, so its objective never exceeds
    the all-ones objective.
    """
    ymat = np.asarray(meas.ymat, dtype=float) / meas.scale
    picks = spa_select(ymat, r)
    anchors = ymat[:, picks].copy()
    norms = np.linalg.norm(anchors, axis=0)
    norms[norms == 0] = 1.0
    anchors /= norms

    n_obs = ymat.shape[1]
    s_obs = np.ones((n_obs, r))
    resid = ymat - anchors @ s_obs.T
    for _ in range(NNLS_SWEEPS):
        for j in range(r):
            col = anchors[:, j]
            resid += np.outer(col, s_obs[:, j])
            s_new = np.maximum(resid.T @ col, 0.0)  # ||col|| = 1
            resid -= np.outer(col, s_new)
            s_obs[:, j] = s_new
    return s_obs, anchors.T.copy()


def nn_fill(values, mask):
    """Spread observed values over the full grid by nearest neighbor.

    `values` holds one number per observed cell, ordered like
    mask.omega_vec.  Unobserved cells copy their Euclidean-nearest
    observed cell; exact distance ties go to the smallest linear index.
    """
    values = np.asarray(values, dtype=float)
    grid = np.empty(mask.m * mask.n)
    grid[mask.omega_vec] = values
    comp = mask.complement_vec
    if comp.size:
        obs_m = np.asarray([c[0] for c in mask.omega], dtype=np.int64)
        obs_n = np.asarray([c[1] for c in mask.omega], dtype=np.int64)
        un_m = comp % mask.m
        un_n = comp // mask.m
        # integer squared distances make ties exact; omega is sorted by
        # linear index so argmin's first-hit rule breaks them as stated
        d2 = (un_m[:, None] - obs_m[None, :]) ** 2 \
            + (un_n[:, None] - obs_n[None, :]) ** 2
        grid[comp] = values[np.argmin(d2, axis=1)]
    return grid.reshape(mask.n, mask.m).T.copy()


def init_latent_state(meas, r):
    """Full starting fields and spectra for the ADMM loop."""
    s_obs, psds = init_factors(meas, r)
    fields = np.stack([nn_fill(s_obs[:, j], meas.mask) for j in range(r)])
    return fields, psds


def field_vec(field):
    """Column-major vectorization matching vec_index."""
    return np.asarray(field).ravel(order="F")


def vec_field(vec, dims):
    return np.asarray(vec).reshape(dims[1], dims[0]).T.copy()


__all__ = [
    "spa_select", "init_factors", "nn_fill", "init_latent_state",
    "field_vec", "vec_field",
]
