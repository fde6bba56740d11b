"""Numerical verification of the solver's supporting theory.

Four groups of checks, all reading the solver's normalized problem
(max observed entry = 1):

* spectral admissibility of an explicit denoising matrix (nonnegative,
  symmetric, irreducible, spectrum in [0, 1] with a simple top
  eigenvalue);
* the closed-form quadratic regularizer a linear denoiser implicitly
  minimizes, with its range indicator;
* a-priori norm balls containing any optimal factor pair, via the
  masked Kronecker Gram matrix G and the objective value at the ground
  truth;
* a high-probability recovery bound assembled from those balls through
  a covering-number argument (evaluated in log space), plus the KKT
  residual of a converged run under a frozen linear denoiser.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .denoise import LinearDenoiser
from .errors import ShapeError, UnsupportedDenoiserError

EIG_RANK_TOL = 1e-10
MAX_EIG_DIM = 4096
RANGE_RTOL = 1e-8


def _dense(w):
    if isinstance(w, LinearDenoiser):
        return w.matrix()
    if sp.issparse(w):
        return np.asarray(w.todense())
    return np.asarray(w, dtype=float)


@dataclass
class SpectralReport:
    """Admissibility checks of one denoising matrix."""

    symmetric_err: float
    min_entry: float
    row_sum_dev: float
    col_sum_dev: float
    irreducible: bool
    lambda_max: float
    lambda_min: float
    second_eig: float
    eigs_in_unit_interval: bool

    @property
    def passes(self):
        return (self.min_entry >= -1e-12
                and self.symmetric_err <= 1e-10
                and self.irreducible
                and self.eigs_in_unit_interval
                and self.second_eig < 1.0 - 1e-9)

    def as_dict(self):
        out = dict(self.__dict__)
        out["passes"] = self.passes
        return out


def verify_assumption1(w):
    """Full spectral/structural report for an explicit denoiser matrix."""
    dense = _dense(w)
    n = dense.shape[0]
    if dense.shape[0] != dense.shape[1]:
        raise ShapeError("denoising matrix must be square")
    if n > MAX_EIG_DIM:
        raise ShapeError(
            f"full eigendecomposition limited to {MAX_EIG_DIM} dims, got {n}")
    symmetric_err = float(np.abs(dense - dense.T).max())
    min_entry = float(dense.min())
    row_sums = dense.sum(axis=1)
    col_sums = dense.sum(axis=0)
    row_dev = float(np.abs(row_sums - 1.0).max())
    col_dev = float(np.abs(col_sums - 1.0).max())

    offdiag = sp.csr_matrix(dense - np.diag(np.diag(dense)))
    offdiag.eliminate_zeros()
    n_comp, _ = connected_components(offdiag, directed=False)
    irreducible = bool(n_comp == 1) and n > 1

    eigs = np.linalg.eigvalsh((dense + dense.T) * 0.5)
    lam_max = float(eigs[-1])
    lam_min = float(eigs[0])
    second = float(eigs[-2]) if n > 1 else lam_max
    in_unit = bool(lam_max <= 1 + 1e-8 and lam_min >= -1e-8)
    return SpectralReport(
        symmetric_err=symmetric_err, min_entry=min_entry,
        row_sum_dev=row_dev, col_sum_dev=col_dev, irreducible=irreducible,
        lambda_max=lam_max, lambda_min=lam_min, second_eig=second,
        eigs_in_unit_interval=in_unit)


def eig_split(w, tol=EIG_RANK_TOL):
    """Eigenvectors of the (near-)nonzero and zero eigenvalues.

    Returns (q, lam, q_null) with w = q diag(lam) q^T on its range.
    """
    dense = _dense(w)
    eigs, vecs = np.linalg.eigh((dense + dense.T) * 0.5)
    keep = eigs > tol
    return vecs[:, keep], eigs[keep], vecs[:, ~keep]


def _vec(field):
    arr = np.asarray(field, dtype=float)
    return arr.ravel(order="F") if arr.ndim == 2 else arr


def explicit_regularizer(w, z_field, rho, lam, eig=None):
    """Value of the implicit quadratic regularizer at one field.

    (rho / 2 lam) * z^T Q (Lam^-1 - I) Q^T z on the denoiser's range,
    +inf when z leaves the range by more than a relative tolerance.
    """
    q, lam_d, _ = eig_split(w) if eig is None else eig
    z = _vec(z_field)
    coords = q.T @ z
    out_of_range = np.linalg.norm(z - q @ coords)
    if out_of_range > RANGE_RTOL * max(np.linalg.norm(z), 1e-300):
        return math.inf
    value = (rho / (2.0 * lam)) * float(coords**2 @ (1.0 / lam_d - 1.0))
    return max(value, 0.0)


@dataclass
class BoundReport:
    """Norm-ball and recovery-bound quantities of one instance."""

    v_obj_natural: float
    alpha: float
    beta: float
    lambda_min_g: float
    rank_deficient: bool
    iota: float = math.nan
    xi: float = math.nan
    theorem1_rhs: float = math.nan
    gap_bound: float = math.nan

    def as_dict(self):
        return dict(self.__dict__)


def lemma2_bounds(ground_truth, meas, w_per_r, rho, zeta, lam,
                  solution_psds=None):
    """Norm balls for the spectra and fields of any optimal factor pair.

    ground_truth supplies the factors in raw data units (synthetic
    runs); everything is evaluated in the solver's normalized units, so
    the resulting alpha/beta bound the factors a solver run reports in
    its normalized state.  The masked Gram matrix G uses the spectra of
    the solution when given (that is what the bound is stated for),
    falling back to the scaled ground-truth spectra.
    """
    scale = meas.scale
    idx = meas.mask.omega_vec
    y_obs = np.asarray(meas.ymat, dtype=float) / scale
    rank = ground_truth.r
    s_nat = np.stack([ground_truth.slfs[r].ravel(order="F")
                      for r in range(rank)])
    c_nat = np.asarray(ground_truth.psds, dtype=float) / scale

    eig_cache = [eig_split(w) for w in w_per_r]

    fit = y_obs - c_nat.T @ s_nat[:, idx]
    v_obj = float(np.sum(fit**2)) + zeta * float(np.sum(c_nat**2))
    for r in range(rank):
        # the objective carries lam * r(z) = (rho/2) z^T Q (L^-1 - I) Q^T z
        v_obj += lam * explicit_regularizer(
            w_per_r[r], s_nat[r], rho, lam, eig=eig_cache[r])
        if math.isinf(v_obj):
            break

    alpha = v_obj / zeta

    psds = c_nat if solution_psds is None \
        else np.asarray(solution_psds, dtype=float)
    blocks = []
    for r in range(rank):
        row = []
        q_r = eig_cache[r][0]
        for r2 in range(rank):
            q_r2 = eig_cache[r2][0]
            gram = float(psds[r] @ psds[r2]) * (q_r[idx].T @ q_r2[idx])
            row.append(gram)
        blocks.append(row)
    g = np.block(blocks)
    pos = 0
    for r in range(rank):
        lam_d = eig_cache[r][1]
        ln = lam_d.size
        g[pos:pos + ln, pos:pos + ln] += np.diag(
            (rho / 2.0) * (1.0 / lam_d - 1.0))
        pos += ln

    lam_min_g = float(np.linalg.eigvalsh((g + g.T) * 0.5)[0])
    rank_deficient = lam_min_g <= 1e-12
    if rank_deficient or math.isinf(v_obj):
        beta = math.inf
    else:
        beta = (math.sqrt(2.0 * v_obj) + float(np.linalg.norm(y_obs)))**2 \
            / lam_min_g
    return BoundReport(v_obj_natural=v_obj, alpha=alpha, beta=beta,
                       lambda_min_g=lam_min_g, rank_deficient=rank_deficient)


def theorem1_bound(alpha, beta, iota, dims, omega_size, rank, delta, eps,
                   v_obj, noise_fro=0.0):
    """High-probability recovery bound; returns (rhs, gap_bound).

    rhs bounds the per-entry RMS distance between any optimal estimate
    and the ground truth; gap_bound is the sampling-gap part.  The
    covering number enters through its natural logarithm, so huge ball
    volumes never overflow.
    """
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must sit in (0, 1)")
    if min(alpha, beta, iota) < 0 or omega_size < 1:
        raise ValueError("alpha, beta, iota must be nonnegative, |Omega| >= 1")
    big_m, big_n, big_k = dims
    cells = big_m * big_n
    xi = (big_k * iota**2 + alpha * beta) / big_k
    log_cover = (big_k * rank / 2.0) * math.log(max(alpha, 1e-300)) \
        + (cells * rank / 2.0) * math.log(max(beta, 1e-300)) \
        + rank * (big_k + cells) * math.log(
            3.0 * (math.sqrt(alpha) + math.sqrt(beta)) / eps)
    log_term = math.log(2.0) + log_cover - math.log(delta)
    factor = 1.0 / omega_size - 1.0 / cells + 1.0 / (cells * omega_size)
    eps_omega = math.sqrt(factor * xi**2 / 2.0 * max(log_term, 0.0))
    gap_bound = math.sqrt(eps**2 / omega_size + eps**2 / cells + eps_omega)
    rhs = math.sqrt(v_obj / (omega_size * big_k)) \
        + noise_fro / math.sqrt(cells * big_k) + gap_bound
    return rhs, gap_bound


def evaluate_bounds(report, dims, omega_size, rank, iota, delta=0.05,
                    eps=None, noise_fro=0.0):
    """Fill the recovery-bound fields of a BoundReport in place."""
    if eps is None:
        eps = 0.01 * math.sqrt(max(report.alpha * report.beta, 1e-300))
    rhs, gap = theorem1_bound(
        report.alpha, report.beta, iota, dims, omega_size, rank, delta, eps,
        report.v_obj_natural, noise_fro)
    report.iota = iota
    report.xi = (dims[2] * iota**2 + report.alpha * report.beta) / dims[2]
    report.theorem1_rhs = rhs
    report.gap_bound = gap
    return report


def kkt_residual(s_vec, c_mat, psi_vec, meas, w_per_r, rho, lam, zeta):
    """Stationarity, complementarity, sign and range residuals of a run.

    Takes the solver's final normalized iterates: s_vec (R, MN), c_mat
    (K, R), psi_vec (R, MN).  Multipliers are recovered from the block
    subproblems, so the reported stationarity residual measures how far
    the run is from a stationary point of the explicit-regularizer
    problem under its frozen linear denoisers.  All terms are divided
    by the problem scale 1 + ||Y_obs||_F.
    """
    for w in w_per_r:
        if not (isinstance(w, LinearDenoiser) or sp.issparse(w)
                or isinstance(w, np.ndarray)):
            raise UnsupportedDenoiserError(
                "KKT residuals need explicit linear denoising matrices")
    idx = meas.mask.omega_vec
    y_obs = np.asarray(meas.ymat, dtype=float) / meas.scale
    rank = s_vec.shape[0]
    resid = y_obs - c_mat @ s_vec[:, idx]

    parts = {"stationarity_s": 0.0, "complementarity_s": 0.0,
             "sign_s": 0.0, "complementarity_c": 0.0, "sign_c": 0.0,
             "range": 0.0}
    for r in range(rank):
        q, lam_d, _ = eig_split(w_per_r[r])
        s_r = s_vec[r]
        psi_r = psi_vec[r]
        c_r = c_mat[:, r]

        grad_s = np.zeros_like(s_r)
        grad_s[idx] = -2.0 * (resid.T @ c_r)
        coords = q.T @ s_r
        lam_grad_g = rho * (q @ ((1.0 / lam_d - 1.0) * coords))
        alpha_r = -(grad_s + rho * psi_r)
        gamma_part = rho * (psi_r - q @ (q.T @ psi_r))
        stat = np.linalg.norm(grad_s + lam_grad_g + alpha_r + gamma_part)

        grad_c = -2.0 * (resid @ s_r[idx])
        beta_r = -(grad_c + 2.0 * zeta * c_r)

        parts["stationarity_s"] = max(parts["stationarity_s"], float(stat))
        parts["complementarity_s"] = max(
            parts["complementarity_s"], float(np.abs(alpha_r * s_r).max()))
        parts["sign_s"] = max(parts["sign_s"], float(max(alpha_r.max(), 0.0)))
        parts["complementarity_c"] = max(
            parts["complementarity_c"], float(np.abs(beta_r * c_r).max()))
        parts["sign_c"] = max(parts["sign_c"], float(max(beta_r.max(), 0.0)))
        parts["range"] = max(parts["range"],
                             float(np.linalg.norm(s_r - q @ coords)))

    problem_scale = 1.0 + float(np.linalg.norm(y_obs))
    out = {key: value / problem_scale for key, value in parts.items()}
    out["max_residual"] = max(out.values())
    out["problem_scale"] = problem_scale
    return out
