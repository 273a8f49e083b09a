"""Gaussian processes with gradient and Hessian observations for BO and BQ."""

__version__ = "0.1.0"

from .kernels import (DerivOrder, Family, KernelSpec, NoiseSpec, UnsupportedOrderError,  # noqa: E402
                      build_joint_gram, cross_cov, eval_cross_block, eval_kernel)
from .dual import (FactorizationFailed, ObservationSet, fit, fit_rescaled,  # noqa: E402
                   log_marginal_likelihood, predict, rescale)
from .spectral import (FrequencyGrid, build_grid, reconstruct_kernel, spectral_model,  # noqa: E402
                       spectral_predict, spectral_update)

__all__ = [
    "DerivOrder", "Family", "KernelSpec", "NoiseSpec", "UnsupportedOrderError",
    "build_joint_gram", "cross_cov", "eval_cross_block", "eval_kernel",
    "FactorizationFailed", "ObservationSet", "fit", "fit_rescaled",
    "log_marginal_likelihood", "predict", "rescale",
    "FrequencyGrid", "build_grid", "reconstruct_kernel", "spectral_model",
    "spectral_predict", "spectral_update",
]
