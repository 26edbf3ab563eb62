"""IVIM bi-exponential fitting by variable projection.

Stages: projection of the linear amplitudes, global search over the decay
rates (simplicial homology or differential evolution), simplex-constrained
fractions, and trust-region-reflective refinement of all parameters.
"""

from .evalstats import cross_validate, mse_report, speed_report
from .model import (
    AcquisitionScheme,
    DecayCurve,
    IvimParams,
    NoiseSpec,
    ParamBounds,
    evaluate_signal,
    jacobian,
    simulate,
)
from .pipeline import (
    FitConfig,
    FitResult,
    VoxelVolume,
    fit,
    fit_baseline_dstar_fixed,
    fit_baseline_msnlls,
    fit_curve,
    fit_volume,
)
from .varpro import build_dictionary, project_linear, reduced_objective

__version__ = "0.1.0"

__all__ = [
    "AcquisitionScheme",
    "DecayCurve",
    "FitConfig",
    "FitResult",
    "IvimParams",
    "NoiseSpec",
    "ParamBounds",
    "VoxelVolume",
    "build_dictionary",
    "cross_validate",
    "evaluate_signal",
    "fit",
    "fit_baseline_dstar_fixed",
    "fit_baseline_msnlls",
    "fit_curve",
    "fit_volume",
    "jacobian",
    "mse_report",
    "project_linear",
    "reduced_objective",
    "simulate",
    "speed_report",
]
