"""Functional principal component regression with conditional-expectation scores.

The comparator shares the smoothed moments with PLEASS. Components are the
eigenfunctions of the discretized auto-covariance; the slope coefficients
are the moment ratios ``b_j = int phi_j vC / lambda_j``; new-subject scores
are conditional expectations ``lambda_j phi_j(T)' Sigma^{-1} (x - mu)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from pleass.datamodel import DataError, GridFunction1D, SparseDataset, SparseTrajectory
from pleass.numerics import NumericalError, normal_quantile
from pleass.predictor import PredictionWithCI, _check_subject, _sigma, solve_spd
from pleass.smoother import Bandwidths, BandwidthWarning, MomentEstimates
from pleass.tuning import CvCurve, PleassConfig, _curve, _engine, fve_pmax

__all__ = ["FpcModel", "fpc_fit", "fpc_coefficients", "fpc_predict", "fpc_predict_ci", "fpc_predict_path"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FpcModel:
    moments: MomentEstimates
    eigenvalues: np.ndarray
    eigenfunctions: tuple  # GridFunction1D, length K_max
    regression_coefs: np.ndarray
    K_max: int
    K_opt: int | None = None
    cv_curve: object = field(default=None, repr=False)

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=float)
        b = np.array(self.regression_coefs, dtype=float)
        for a in (lam, b):
            a.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "regression_coefs", b)
        object.__setattr__(self, "eigenfunctions", tuple(self.eigenfunctions))
        if not lam.size == b.size == len(self.eigenfunctions) == self.K_max:
            raise ValueError("eigen-objects and coefficients must have K_max entries")
        if self.K_opt is not None and not 0 <= self.K_opt <= self.K_max:
            raise ValueError("K_opt out of range")

    @property
    def grid(self):
        return self.moments.grid

    @property
    def p_opt(self):
        return self.K_opt

    @property
    def phi_matrix(self) -> np.ndarray:
        if not self.eigenfunctions:
            return np.zeros((self.grid.size, 0))
        return np.column_stack([f.values for f in self.eigenfunctions])

    def _k(self, K):
        if K is None:
            K = self.K_opt if self.K_opt is not None else self.K_max
        if not 0 <= K <= self.K_max:
            raise ValueError(f"K must lie in [0, {self.K_max}]")
        return int(K)

    def beta(self, K: int | None = None) -> GridFunction1D:
        K = self._k(K)
        vals = self.phi_matrix[:, :K] @ self.regression_coefs[:K]
        return GridFunction1D(self.grid, vals if K else np.zeros(self.grid.size))

    def with_k_opt(self, K_opt: int, cv_curve=None) -> "FpcModel":
        return FpcModel(self.moments, self.eigenvalues, self.eigenfunctions,
                        self.regression_coefs, self.K_max, K_opt, cv_curve)

    def to_dict(self) -> dict:
        out = {
            "method": "fpc",
            "moments": self.moments.to_dict(),
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "eigenfunctions": [[float(v) for v in f.values] for f in self.eigenfunctions],
            "regression_coefs": [float(v) for v in self.regression_coefs],
            "K_max": self.K_max,
            "K_opt": self.K_opt,
        }
        if self.cv_curve is not None:
            out["cv_curve"] = self.cv_curve.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FpcModel":
        mom = MomentEstimates.from_dict(d["moments"])
        return cls(
            moments=mom,
            eigenvalues=d["eigenvalues"],
            eigenfunctions=[GridFunction1D(mom.grid, v) for v in d["eigenfunctions"]],
            regression_coefs=d["regression_coefs"],
            K_max=int(d["K_max"]),
            K_opt=d.get("K_opt"),
            cv_curve=CvCurve.from_dict(d["cv_curve"]) if d.get("cv_curve") else None,
        )


def fpc_coefficients(moments: MomentEstimates, K_max: int) -> FpcModel:
    """Leading ``K_max`` eigen-pairs and ``b_j = int phi_j vC / lambda_j``.

    Components beyond the numerical rank get ``lambda = b = 0``.
    """
    spec = moments.spectrum
    grid = moments.grid
    lam = np.zeros(K_max)
    phi = np.zeros((grid.size, K_max))
    k = min(K_max, spec.rank)
    lam[:k] = spec.eigenvalues[:k]
    phi[:, :k] = spec.functions[:, :k]
    proj = phi.T @ (grid.weights * moments.vC_hat.values)
    b = np.divide(proj, lam, out=np.zeros(K_max), where=lam > 0)
    funcs = [GridFunction1D(grid, phi[:, j]) for j in range(K_max)]
    return FpcModel(moments, lam, funcs, b, K_max)


def _conditioning(model: FpcModel, subject: SparseTrajectory, K: int):
    t, x = _check_subject(subject)
    m = model.moments
    S = _sigma(m, t)
    mu = np.interp(t, m.grid.points, m.mu_hat.values)
    phi = model.phi_matrix[:, :K]
    H = np.column_stack([np.interp(t, m.grid.points, phi[:, j]) for j in range(K)]) if K else np.zeros((t.size, 0))
    H = H * model.eigenvalues[:K]
    sol, _ = solve_spd(S, np.column_stack([x - mu, H]))
    return H, sol[:, 0], sol[:, 1:]


def fpc_predict_path(model: FpcModel, subject: SparseTrajectory, K_max: int | None = None) -> np.ndarray:
    """Predictions for ``K = 0..K_max``."""
    K_max = model.K_max if K_max is None else K_max
    if K_max == 0:
        _check_subject(subject)
        return np.array([model.moments.y_bar])
    H, sx, _ = _conditioning(model, subject, K_max)
    scores = H.T @ sx
    steps = model.regression_coefs[:K_max] * scores
    return model.moments.y_bar + np.concatenate([[0.0], np.cumsum(steps)])


def fpc_predict(model: FpcModel, subject: SparseTrajectory, K: int | None = None) -> float:
    K = model._k(K)
    return float(fpc_predict_path(model, subject, K)[-1])


def fpc_predict_ci(model: FpcModel, subject: SparseTrajectory, alpha: float = 0.05,
                   K: int | None = None) -> PredictionWithCI:
    """Prediction with the Wald interval of variance
    ``b' (diag(lambda) - H' Sigma^{-1} H) b``; ``K = 0`` gives a zero-width
    interval at ``Ybar`` flagged as clamped.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    K = model._k(K)
    sid = subject.subject_id
    if K == 0:
        _check_subject(subject)
        y = model.moments.y_bar
        return PredictionWithCI(y, 0, y, y, 0.0, True, sid)
    H, sx, SinvH = _conditioning(model, subject, K)
    b = model.regression_coefs[:K]
    eta = float(model.moments.y_bar + b @ (H.T @ sx))
    M = np.diag(model.eigenvalues[:K]) - H.T @ SinvH
    v = float(b @ M @ b)
    hw = normal_quantile(1 - alpha / 2) * np.sqrt(max(v, 0.0))
    return PredictionWithCI(eta, K, eta - hw, eta + hw, hw, v < 0, sid)


def _kmax(moments, data, cfg) -> int:
    spec = moments.spectrum
    if spec.rank == 0:
        return 0
    k = fve_pmax(spec.eigenvalues, cfg.fve_threshold, data.n)
    if cfg.p_max is not None:
        k = min(k, int(cfg.p_max))
    return min(k, spec.rank)


def fpc_fit(data: SparseDataset, config: PleassConfig | None = None, *,
            bandwidths: Bandwidths | None = None, cv: bool = True) -> FpcModel:
    """Fit the FPC comparator; ``K`` is chosen by leave-one-out CV over
    ``0..K_max`` with ``K_max`` from the FVE rule (bandwidths frozen)."""
    cfg = config or PleassConfig()
    engine = _engine(data, cfg, bandwidths)
    moments = engine.fit()
    K_max = _kmax(moments, data, cfg)
    model = fpc_coefficients(moments, K_max)
    if not cv:
        return model
    if data.n < 3:
        raise DataError("leave-one-out CV needs at least three subjects")
    preds = np.full((data.n, K_max + 1), np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BandwidthWarning)
        for i, subj in enumerate(data.subjects):
            try:
                fold = fpc_coefficients(engine.fit(exclude=i), K_max)
                preds[i] = fpc_predict_path(fold, subj.trajectory, K_max)
            except (NumericalError, DataError, np.linalg.LinAlgError) as exc:
                logger.warning("fold %d skipped: %s", i, exc)
    curve = _curve(preds, np.asarray(data.responses))
    return model.with_k_opt(curve.p_opt, curve)
