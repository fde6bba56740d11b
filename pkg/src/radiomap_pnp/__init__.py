"""Spatio-spectral radio map reconstruction from sparse measurements.

The package pairs a latent-domain plug-and-play ADMM solver (denoising
applied to the per-emitter spatial fields) with a data-domain baseline,
a statistical-model data generator, an explicit linear denoiser suite,
recoverability/stationarity verifiers and a batch CLI.
"""

from .core import (FactorModel, MeasurementSet, RadioMap, SamplingMask,
                   compose, matricize, restrict, unmatricize, vec_index)
from .datagen import (NoiseSpec, PsdConfig, StatModelConfig, add_noise,
                      gen_psd, gen_shadow_field, gen_slf, generate_map,
                      sample_mask)
from .denoise import (DenoiserBank, DenoiserSpec, ExternalDenoiser,
                      LinearDenoiser, build_kernel_matrix, dsg_normalize,
                      freeze_policy, identity_denoiser, log_forward,
                      log_inverse)
from .initialization import init_factors, nn_fill, spa_select
from .metrics import mssim, rse
from .solver import SolverParams, dapnp_solve, lapnp_solve

__version__ = "0.1.0"

__all__ = [
    "FactorModel", "MeasurementSet", "RadioMap", "SamplingMask",
    "compose", "matricize", "restrict", "unmatricize", "vec_index",
    "NoiseSpec", "PsdConfig", "StatModelConfig", "add_noise", "gen_psd",
    "gen_shadow_field", "gen_slf", "generate_map", "sample_mask",
    "DenoiserBank", "DenoiserSpec", "ExternalDenoiser", "LinearDenoiser",
    "build_kernel_matrix", "dsg_normalize", "freeze_policy",
    "identity_denoiser", "log_forward", "log_inverse",
    "init_factors", "nn_fill", "spa_select",
    "mssim", "rse",
    "SolverParams", "dapnp_solve", "lapnp_solve",
    "__version__",
]
