"""Partial least squares for scalar-on-function regression with sparse, noisy curves."""

from pleass import backend
from pleass.datamodel import (
    DataError,
    EvalGrid,
    GridFunction1D,
    GridFunction2D,
    LabeledSubject,
    SparseDataset,
    SparseTrajectory,
    load_dataset,
    load_trajectories,
)
from pleass.fpls import PleassModel, fit_coefficients
from pleass.numerics import EPANECHNIKOV, KernelSpec, NumericalError
from pleass.predictor import PredictionWithCI, predict, wald_ci
from pleass.smoother import Bandwidths, MomentEstimates, estimate_moments
from pleass.tuning import CvCurve, PleassConfig, fit_pleass, fve_pmax, loo_cv

__version__ = "0.1.0"

__all__ = [
    "backend",
    "DataError",
    "NumericalError",
    "EvalGrid",
    "GridFunction1D",
    "GridFunction2D",
    "SparseTrajectory",
    "LabeledSubject",
    "SparseDataset",
    "load_dataset",
    "load_trajectories",
    "KernelSpec",
    "EPANECHNIKOV",
    "Bandwidths",
    "MomentEstimates",
    "estimate_moments",
    "PleassModel",
    "fit_coefficients",
    "PredictionWithCI",
    "predict",
    "wald_ci",
    "CvCurve",
    "PleassConfig",
    "fit_pleass",
    "fve_pmax",
    "loo_cv",
]
