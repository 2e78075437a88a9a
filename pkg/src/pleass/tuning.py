"""Choosing the number of components: FVE upper bound and leave-one-out CV."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pleass.datamodel import DataError, EvalGrid, SparseDataset
from pleass.fpls import DEFAULT_THRESHOLD, PleassModel, fit_coefficients
from pleass.numerics import EPANECHNIKOV, KernelSpec, NumericalError
from pleass.predictor import predict_path
from pleass.smoother import (
    CANDIDATE_MULTIPLIERS,
    Bandwidths,
    BandwidthWarning,
    MomentEngine,
    select_bandwidths,
)

__all__ = ["PleassConfig", "CvCurve", "fve_pmax", "loo_cv", "fit_pleass", "loo_predictions"]

logger = logging.getLogger(__name__)

MAX_FAILED_FOLDS = 0.2


@dataclass(frozen=True)
class PleassConfig:
    """Numerical settings shared by the PLEASS and FPC fits."""

    grid_size: int = 51
    kernel: KernelSpec = EPANECHNIKOV
    fve_threshold: float = 0.95
    threshold: float = DEFAULT_THRESHOLD
    psd_tol: float = 1e-8
    h_mu: float | None = None
    h_A: float | None = None
    h_C: float | None = None
    h_sigma: float | None = None
    bandwidth_multipliers: tuple = CANDIDATE_MULTIPLIERS
    legacy_vc_centering: bool = False
    p_max: int | None = None

    def __post_init__(self):
        if not 0 < self.fve_threshold <= 1:
            raise ValueError("fve_threshold must lie in (0, 1]")
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        object.__setattr__(self, "bandwidth_multipliers", tuple(self.bandwidth_multipliers))

    @property
    def grid(self) -> EvalGrid:
        return EvalGrid(self.grid_size)

    def bandwidth_overrides(self) -> dict:
        return {"h_mu": self.h_mu, "h_A": self.h_A, "h_C": self.h_C, "h_sigma": self.h_sigma}


@dataclass(frozen=True)
class CvCurve:
    """CV(p) for p = 0..len(values)-1 and its minimizer (smallest p on ties)."""

    values: tuple
    p_opt: int
    failed_folds: int = 0

    @classmethod
    def from_values(cls, values: Sequence[float], failed_folds: int = 0) -> "CvCurve":
        vals = tuple(float(v) for v in values)
        return cls(vals, int(np.argmin(vals)), failed_folds)

    def items(self):
        return list(enumerate(self.values))

    def to_dict(self) -> dict:
        return {"p": list(range(len(self.values))), "cv": list(self.values),
                "p_opt": self.p_opt, "failed_folds": self.failed_folds}

    @classmethod
    def from_dict(cls, d: dict) -> "CvCurve":
        return cls(tuple(float(v) for v in d["cv"]), int(d["p_opt"]), int(d.get("failed_folds", 0)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["p", "cv"])
            for p, v in self.items():
                w.writerow([p, repr(v)])


def fve_pmax(eigenvalues: Sequence[float], fve_threshold: float = 0.95,
             n: int | None = None) -> int:
    """Smallest ``j`` whose leading eigenvalues explain ``fve_threshold`` of
    the total, capped at ``n // 2`` when ``n`` is given (never below 1)."""
    lam = np.asarray(eigenvalues, dtype=float)
    lam = np.clip(lam, 0.0, None)
    total = lam.sum()
    if not total > 0:
        raise NumericalError("all-zero spectrum: FVE undefined")
    if not 0 < fve_threshold <= 1:
        raise ValueError("fve_threshold must lie in (0, 1]")
    frac = np.cumsum(lam) / total
    # relative slack so that an exact 100% is reached despite rounding
    j = int(np.argmax(frac >= fve_threshold * (1 - 1e-12))) + 1
    if n is not None:
        j = min(j, max(1, n // 2))
    return j


def _engine(data: SparseDataset, cfg: PleassConfig, bandwidths: Bandwidths | None):
    grid = cfg.grid
    if bandwidths is None:
        bandwidths = select_bandwidths(data, grid, cfg.kernel, cfg.bandwidth_overrides(),
                                       cfg.bandwidth_multipliers)
    return MomentEngine(data, bandwidths, grid, cfg.kernel, cfg.psd_tol, cfg.legacy_vc_centering)


def _fold_failure(failed: int, n: int):
    if failed > MAX_FAILED_FOLDS * n:
        raise NumericalError(f"{failed} of {n} leave-one-out folds failed")
    if failed:
        warnings.warn(f"{failed} leave-one-out fold(s) failed and were skipped", RuntimeWarning,
                      stacklevel=3)


def loo_predictions(engine: MomentEngine, p_max: int, cfg: PleassConfig):
    """Held-out predictions ``(n, p_max + 1)``; rows of failed folds are NaN."""
    data = engine.data
    out = np.full((data.n, p_max + 1), np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BandwidthWarning)
        for i, subj in enumerate(data.subjects):
            try:
                mom = engine.fit(exclude=i)
                if p_max == 0:
                    out[i, 0] = mom.y_bar
                    continue
                model = fit_coefficients(mom, p_max, cfg.threshold)
                out[i] = predict_path(model, subj.trajectory, p_max)
            except (NumericalError, DataError, np.linalg.LinAlgError) as exc:
                logger.warning("fold %d skipped: %s", i, exc)
    return out


def _curve(preds: np.ndarray, y: np.ndarray) -> CvCurve:
    ok = ~np.isnan(preds).any(axis=1)
    failed = int((~ok).sum())
    _fold_failure(failed, y.size)
    err = (y[ok, None] - preds[ok]) ** 2
    return CvCurve.from_values(err.mean(axis=0), failed)


def loo_cv(data: SparseDataset, config: PleassConfig | None = None, *,
           p_max: int | None = None, bandwidths: Bandwidths | None = None) -> CvCurve:
    """Leave-one-out CV over ``p = 0..p_max``.

    Moments are re-estimated in every fold with the bandwidths held at
    their full-data values. ``p_max`` defaults to the effective component
    count of the full-data fit.
    """
    cfg = config or PleassConfig()
    if data.n < 3:
        raise DataError("leave-one-out CV needs at least three subjects")
    engine = _engine(data, cfg, bandwidths)
    if p_max is None:
        p_max = _fit_full(engine, data, cfg).p_effective
    preds = loo_predictions(engine, p_max, cfg)
    return _curve(preds, np.asarray(data.responses))


def _pmax_from(moments, data, cfg) -> int:
    if cfg.p_max is not None:
        return max(1, min(int(cfg.p_max), max(1, data.n // 2)))
    spec = moments.spectrum
    if spec.rank == 0:
        return 1
    return fve_pmax(spec.eigenvalues, cfg.fve_threshold, data.n)


def _fit_full(engine, data, cfg) -> PleassModel:
    moments = engine.fit()
    return fit_coefficients(moments, _pmax_from(moments, data, cfg), cfg.threshold)


def fit_pleass(data: SparseDataset, config: PleassConfig | None = None, *,
               bandwidths: Bandwidths | None = None, cv: bool = True) -> PleassModel:
    """Smoothing, FVE cap, Krylov basis and leave-one-out choice of ``p``.

    With ``cv=False`` the model is returned with ``p_opt`` unset.
    """
    cfg = config or PleassConfig()
    engine = _engine(data, cfg, bandwidths)
    model = _fit_full(engine, data, cfg)
    if not cv:
        return model
    if data.n < 3:
        raise DataError("leave-one-out CV needs at least three subjects")
    p_eff = model.p_effective
    preds = loo_predictions(engine, p_eff, cfg)
    curve = _curve(preds, np.asarray(data.responses))
    return model.with_p_opt(curve.p_opt, curve)
