from .core import *

__all__ = [
    "Bandwidths",
    "Dataset",
    "ErrorKind",
    "ErrorModel",
    "Estimator",
    "GridSpec",
    "ModeCurves",
    "ModeSet",
    "SeekOptions",
    "StartRule",
    "estimate_mode_set",
    "mode_curves",
]
