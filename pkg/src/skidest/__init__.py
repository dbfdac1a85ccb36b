"""Skid-steer motion-model clustering and multiple-model state estimation.

Pipeline: sliding-window least-squares identification of local linear
angular-velocity models, diagonal Gaussian-mixture clustering of the
model cloud, an interacting multiple-model Kalman bank over the cluster
models, and chi-squared innovation-consistency validation.
"""

from .consistency import NisReport, NisSeries, chi2_bounds, nis_report, nis_step
from .gmm import EmTrace, GmmParams, em_step, extract_models, gmm_fit, responsibilities
from .imm import ImmBank, ImmStepOutput, imm_mix, imm_step, model_likelihood, run_imm
from .kalman import FilterState, UpdateOutcome, kf_predict, kf_update, run_kf
from .synth import SynthConfig, generate
from .sysid import LinearModel, ModelCloud, ModelPoint, fit_global, fit_linear, fit_local_models
from .trajectory import Trajectory, TrajectorySample, Window, load_trajectories, sliding_windows

__version__ = "0.1.0"

__all__ = [
    "NisReport",
    "NisSeries",
    "chi2_bounds",
    "nis_report",
    "nis_step",
    "EmTrace",
    "GmmParams",
    "em_step",
    "extract_models",
    "gmm_fit",
    "responsibilities",
    "ImmBank",
    "ImmStepOutput",
    "imm_mix",
    "imm_step",
    "model_likelihood",
    "run_imm",
    "FilterState",
    "UpdateOutcome",
    "kf_predict",
    "kf_update",
    "run_kf",
    "SynthConfig",
    "generate",
    "LinearModel",
    "ModelCloud",
    "ModelPoint",
    "fit_global",
    "fit_linear",
    "fit_local_models",
    "Trajectory",
    "TrajectorySample",
    "Window",
    "load_trajectories",
    "sliding_windows",
]
