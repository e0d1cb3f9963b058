from .density import (
    Bandwidths,
    Dataset,
    KernelBank,
    cond_density_lc,
    cond_density_ll,
    fx_deconv,
    joint_density,
    joint_density_dy,
    joint_density_dyy,
    s_hat,
    t_hat,
)
from .error_model import ErrorKind, ErrorModel, phi_u, sample_errors, sigma2_from_reliability
from .kernels import build_table, k1, k2, ku_ell
from .mode_seek import (
    Estimator,
    GridSpec,
    ModeCurves,
    ModeSet,
    SeekOptions,
    StartRule,
    estimate_mode_set,
    mean_shift_lc,
    mean_shift_ll,
    mode_curves,
    starting_values,
)

__all__ = [
    "Bandwidths",
    "Dataset",
    "KernelBank",
    "cond_density_lc",
    "cond_density_ll",
    "fx_deconv",
    "joint_density",
    "joint_density_dy",
    "joint_density_dyy",
    "s_hat",
    "t_hat",
    "ErrorKind",
    "ErrorModel",
    "phi_u",
    "sample_errors",
    "sigma2_from_reliability",
    "build_table",
    "k1",
    "k2",
    "ku_ell",
    "Estimator",
    "GridSpec",
    "ModeCurves",
    "ModeSet",
    "SeekOptions",
    "StartRule",
    "estimate_mode_set",
    "mean_shift_lc",
    "mean_shift_ll",
    "mode_curves",
    "starting_values",
]
