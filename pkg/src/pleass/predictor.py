"""Prediction for a new sparsely observed subject.

Scores are best linear unbiased predictions given the subject's noisy
observations; the interval uses the conditional covariance of the scores,
``I - H' Sigma^{-1} H``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pleass.datamodel import SparseTrajectory, interpolate2
from pleass.fpls import PleassModel
from pleass.numerics import NumericalError, normal_quantile

__all__ = [
    "NewSubjectConditioning",
    "PredictionWithCI",
    "build_conditioning",
    "predict",
    "wald_ci",
    "conditional_scores",
    "solve_spd",
    "predict_path",
]

JITTER_START = 1e-8
JITTER_STEPS = 3


@dataclass(frozen=True, eq=False)
class NewSubjectConditioning:
    times: np.ndarray
    obs: np.ndarray
    sigma_matrix: np.ndarray
    mu_star: np.ndarray
    H: np.ndarray
    jitter: float = 0.0

    @property
    def centered(self) -> np.ndarray:
        return self.obs - self.mu_star


@dataclass(frozen=True)
class PredictionWithCI:
    eta_hat: float
    p_used: int
    ci_lower: float
    ci_upper: float
    half_width: float
    variance_clamped: bool = False
    subject_id: str = ""


def solve_spd(S: np.ndarray, rhs: np.ndarray):
    """Solve ``S x = rhs`` through Cholesky, adding diagonal jitter
    ``1e-8 * trace / L`` (times 10 per retry, at most 3 retries) when the
    factorization fails. Returns ``(x, jitter)``.
    """
    L = S.shape[0]
    scale = float(np.trace(S)) / L if L else 0.0
    jit = 0.0
    for step in range(JITTER_STEPS + 1):
        try:
            C = np.linalg.cholesky(S + jit * np.eye(L))
        except np.linalg.LinAlgError:
            jit = JITTER_START * (10.0**step) * (scale if scale > 0 else 1.0)
            continue
        z = np.linalg.solve(C, rhs)
        return np.linalg.solve(C.T, z), jit
    cond = np.linalg.cond(S)
    raise NumericalError(
        f"observation covariance is singular after jitter {jit:.3g} "
        f"(size {L}, trace {np.trace(S):.4g}, condition {cond:.3g})"
    )


def _check_subject(subject: SparseTrajectory):
    t = np.asarray(subject.times)
    if t.size == 0:
        raise ValueError("subject has no observations")
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("observation times must lie in [0, 1]")
    return t, np.asarray(subject.values)


def _sigma(moments, t):
    S = interpolate2(moments.vA_hat, t[:, None], t[None, :])
    S = np.atleast_2d(S) + moments.sigma_e2_hat * np.eye(t.size)
    return S


def _resolve_p(model: PleassModel, p):
    if p is None:
        p = model.p_opt if model.p_opt is not None else model.p_effective
    if not 0 <= p <= model.p_max:
        raise ValueError(f"p must lie in [0, {model.p_max}]")
    return int(p)


def build_conditioning(model: PleassModel, subject: SparseTrajectory, p: int | None = None,
                       ) -> NewSubjectConditioning:
    """Observation covariance, mean and ``H`` matrix at the subject's times."""
    t, x = _check_subject(subject)
    p = _resolve_p(model, p)
    m = model.moments
    S = _sigma(m, t)
    mu = np.interp(t, m.grid.points, m.mu_hat.values)
    VW = model.cov_basis_matrix[:, :p]
    H = np.column_stack([np.interp(t, m.grid.points, VW[:, j]) for j in range(p)]) if p else np.zeros((t.size, 0))
    return NewSubjectConditioning(t, x, S, mu, H)


def conditional_scores(cond: NewSubjectConditioning):
    """Score predictions ``H' Sigma^{-1} (x - mu)`` and ``Sigma^{-1} H``."""
    rhs = np.column_stack([cond.centered, cond.H])
    sol, jit = solve_spd(cond.sigma_matrix, rhs)
    scores = cond.H.T @ sol[:, 0]
    return scores, sol[:, 1:], jit


def predict(model: PleassModel, subject: SparseTrajectory, p: int | None = None) -> float:
    """``Ybar + c_p' H' Sigma^{-1} (x - mu)``; ``p = 0`` gives ``Ybar``."""
    p = _resolve_p(model, p)
    if p == 0:
        _check_subject(subject)
        return model.moments.y_bar
    cond = build_conditioning(model, subject, p)
    scores, _, _ = conditional_scores(cond)
    return float(model.moments.y_bar + model.c_hat[:p] @ scores)


def _ci(eta, c, H, SinvH, alpha, p, subject_id):
    z = normal_quantile(1 - alpha / 2)
    if p == 0:
        return PredictionWithCI(eta, 0, eta, eta, 0.0, True, subject_id)
    M = np.eye(p) - H.T @ SinvH
    v = float(c @ M @ c)
    clamped = v < 0
    hw = z * np.sqrt(max(v, 0.0))
    return PredictionWithCI(eta, p, eta - hw, eta + hw, hw, clamped, subject_id)


def wald_ci(model: PleassModel, subject: SparseTrajectory, p: int | None = None,
            alpha: float = 0.05) -> PredictionWithCI:
    """Prediction with the conditional Wald interval

    ``eta_hat +- z_{1-alpha/2} * sqrt(c' (I - H' Sigma^{-1} H) c)``.

    A negative variance (discretization noise) is clamped to zero and
    flagged. ``p = 0`` yields a zero-width interval at ``Ybar``, also
    flagged.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    p = _resolve_p(model, p)
    if p == 0:
        return _ci(model.moments.y_bar, None, None, None, alpha, 0, subject.subject_id)
    cond = build_conditioning(model, subject, p)
    scores, SinvH, _ = conditional_scores(cond)
    c = model.c_hat[:p]
    eta = float(model.moments.y_bar + c @ scores)
    return _ci(eta, c, cond.H, SinvH, alpha, p, subject.subject_id)


def predict_path(model: PleassModel, subject: SparseTrajectory, p_max: int) -> np.ndarray:
    """Predictions for every ``p = 0..p_max`` from one conditioning solve."""
    if p_max == 0:
        return np.array([model.moments.y_bar])
    cond = build_conditioning(model, subject, p_max)
    scores, _, _ = conditional_scores(cond)
    steps = model.c_hat[:p_max] * scores
    return model.moments.y_bar + np.concatenate([[0.0], np.cumsum(steps)])
