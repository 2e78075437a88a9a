"""Monte Carlo harness: Legendre-basis Gaussian curves, sparse noisy
sampling, and the ReISEE / CP / ReMSPE comparison metrics."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from pleass.datamodel import EvalGrid, GridFunction1D, LabeledSubject, SparseDataset, SparseTrajectory
from pleass.numerics import NumericalError
from pleass.tuning import PleassConfig, _engine

__all__ = [
    "DEFAULT_EIGENVALUES",
    "SimConfig",
    "SimTruth",
    "MetricsReport",
    "legendre_basis",
    "simulate_dataset",
    "split_dataset",
    "evaluate_metrics",
    "run_replicate",
    "run_experiment",
    "replicate_seeds",
]

logger = logging.getLogger(__name__)

DEFAULT_EIGENVALUES = (100.0, 90.0, 80.0, 10.0, 9.0, 8.0, 1.0, 0.9, 0.8)
SCENARIOS = {1: (1, 2, 3), 2: (4, 5, 6), 3: (7, 8, 9)}
METHODS = ("pleass", "fpc")
METRICS = ("reisee", "cp", "remspe")
HARNESS_GRID = 101
MAX_ORDER = 12
MAX_FAILED_REPLICATES = 0.2


def legendre_basis(max_order: int, grid: EvalGrid) -> list:
    """Normalized shifted Legendre polynomials ``P_1..P_max_order`` on ``grid``.

    Values come from the three-term recurrence on ``x = 2t - 1``; the
    family (with ``P_0``) is then Gram-Schmidt orthonormalized under the
    grid's trapezoid rule, so the discrete Gram matrix is the identity.
    """
    if not 1 <= max_order <= MAX_ORDER:
        raise ValueError(f"max_order must lie in [1, {MAX_ORDER}]")
    x = 2.0 * grid.points - 1.0
    polys = [np.ones_like(x), x.copy()]
    for k in range(1, max_order):
        polys.append(((2 * k + 1) * x * polys[k] - k * polys[k - 1]) / (k + 1))
    w = grid.weights
    out = []
    for p in polys:
        v = p.copy()
        for _ in range(2):
            for q in out:
                v -= q * (w @ (v * q))
        v /= math.sqrt(w @ (v * v))
        out.append(v)
    return [GridFunction1D(grid, v) for v in out[1:]]


@dataclass(frozen=True)
class SimConfig:
    n: int = 300
    eigenvalues: tuple = DEFAULT_EIGENVALUES
    beta_scenario: int = 1
    snr: float = 3.0
    L_range: tuple = (3, 4, 5, 6)
    replicates: int = 20
    test_fraction: float = 0.2
    seed: int = 0
    fit: PleassConfig = field(default_factory=PleassConfig)
    alpha: float = 0.05

    def __post_init__(self):
        lam = tuple(float(v) for v in self.eigenvalues)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "L_range", tuple(int(v) for v in self.L_range))
        if self.n < 10:
            raise ValueError("n must be >= 10")
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if any(v < 0 for v in lam) or any(a < b for a, b in zip(lam, lam[1:])):
            raise ValueError("eigenvalues must be nonnegative and descending")
        if not 1 <= len(lam) <= MAX_ORDER:
            raise ValueError(f"between 1 and {MAX_ORDER} eigenvalues are supported")
        if self.beta_scenario not in SCENARIOS:
            raise ValueError("beta_scenario must be 1, 2 or 3")
        if max(SCENARIOS[self.beta_scenario]) > len(lam):
            raise ValueError("scenario uses more components than eigenvalues given")
        if not self.L_range or min(self.L_range) < 1:
            raise ValueError("L_range must hold positive integers")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")

    @property
    def beta_coefs(self) -> np.ndarray:
        b = np.zeros(len(self.eigenvalues))
        b[[j - 1 for j in SCENARIOS[self.beta_scenario]]] = 1.0
        return b

    @property
    def sigma_e(self) -> float:
        return math.sqrt(sum(self.eigenvalues)) / self.snr

    @property
    def sd_eta(self) -> float:
        lam = np.asarray(self.eigenvalues)
        return float(np.sqrt(lam @ self.beta_coefs**2))

    @property
    def sigma_eps(self) -> float:
        return self.sd_eta / self.snr


@dataclass(frozen=True, eq=False)
class SimTruth:
    beta: GridFunction1D
    eta: dict  # subject id -> int beta X_i
    scores: np.ndarray  # (n, J) latent component scores


def simulate_dataset(cfg: SimConfig, rng: np.random.Generator):
    """Draw one dataset and its truth (zero means for X and Y).

    Curves are built on the harness grid from the Legendre basis and
    linearly interpolated to the observation times; ``eta_i`` uses the
    basis coefficients, so it is exact.
    """
    grid = EvalGrid(HARNESS_GRID)
    J = len(cfg.eigenvalues)
    basis = np.column_stack([f.values for f in legendre_basis(J, grid)])
    lam = np.asarray(cfg.eigenvalues)
    b = cfg.beta_coefs
    se = cfg.sigma_e
    sy = cfg.sigma_eps
    z = rng.standard_normal((cfg.n, J)) * np.sqrt(lam)
    eta = z @ b
    Ls = np.asarray(cfg.L_range)
    subjects = []
    ids = [f"s{i:05d}" for i in range(cfg.n)]
    for i in range(cfg.n):
        L = int(rng.choice(Ls))
        t = np.sort(rng.uniform(0.0, 1.0, L))
        x = np.interp(t, grid.points, basis @ z[i])
        if se > 0:
            x = x + se * rng.standard_normal(L)
        y = eta[i] + (sy * rng.standard_normal() if sy > 0 else 0.0)
        subjects.append(LabeledSubject(SparseTrajectory(ids[i], t, x), float(y)))
    truth = SimTruth(GridFunction1D(grid, basis @ b), dict(zip(ids, eta.tolist())), z)
    return SparseDataset(tuple(subjects)), truth


def split_dataset(data: SparseDataset, test_fraction: float, rng: np.random.Generator):
    """Random train/test split without replacement; returns ``(train, test)``."""
    n_test = max(1, int(round(test_fraction * data.n)))
    if n_test >= data.n:
        raise ValueError("test fraction leaves no training subjects")
    test_idx = np.sort(rng.choice(data.n, size=n_test, replace=False))
    mask = np.zeros(data.n, dtype=bool)
    mask[test_idx] = True
    train = SparseDataset(tuple(s for s, m in zip(data.subjects, mask) if not m))
    test = SparseDataset(tuple(s for s, m in zip(data.subjects, mask) if m))
    return train, test


def _on_grid(f: GridFunction1D, grid: EvalGrid) -> np.ndarray:
    return f.values if f.grid == grid else np.interp(grid.points, f.grid.points, f.values)


def evaluate_metrics(truth_beta: GridFunction1D, fitted_beta: GridFunction1D, predictions: Sequence,
                     eta_true: dict, y_true: dict, y_bar_train: float) -> dict:
    """ReISEE, CP and ReMSPE for one fitted method.

    ``predictions`` are :class:`PredictionWithCI` objects keyed to test
    subjects through ``subject_id``; ``eta_true`` and ``y_true`` map those
    ids to the true conditional mean and the observed response. The
    fitted slope is interpolated onto the truth grid.
    """
    if not predictions:
        raise ValueError("empty test set")
    grid = truth_beta.grid
    w = grid.weights
    beta = truth_beta.values
    diff = beta - _on_grid(fitted_beta, grid)
    reisee = float(w @ diff**2) / float(w @ beta**2)
    hits = 0
    num = den = 0.0
    for pr in predictions:
        eta = eta_true[pr.subject_id]
        y = y_true[pr.subject_id]
        hits += pr.ci_lower <= eta <= pr.ci_upper
        num += (y - pr.eta_hat) ** 2
        den += (y - y_bar_train) ** 2
    return {"reisee": reisee, "cp": hits / len(predictions),
            "remspe": num / den if den > 0 else math.inf}


@dataclass
class MetricsReport:
    """Tidy rows ``(replicate, method, metric, value)`` plus failed replicates."""

    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (replicate, message)

    def values(self, method: str, metric: str) -> np.ndarray:
        return np.array([v for r, m, k, v in self.rows if m == method and k == metric])

    def reisee(self, method: str) -> np.ndarray:
        return self.values(method, "reisee")

    def cp(self, method: str) -> np.ndarray:
        return self.values(method, "cp")

    def remspe(self, method: str) -> np.ndarray:
        return self.values(method, "remspe")

    def median(self, method: str, metric: str) -> float:
        return float(np.median(self.values(method, metric)))

    @property
    def methods(self) -> list:
        return list(dict.fromkeys(m for _, m, _, _ in self.rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replicate", "method", "metric", "value"])
        for r, m, k, v in self.rows:
            w.writerow([r, m, k, repr(float(v))])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "metric", "count", "q1", "median", "q3"])
        for m in self.methods:
            for k in METRICS:
                v = self.values(m, k)
                q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
                w.writerow([m, k, v.size, repr(float(q1)), repr(float(med)), repr(float(q3))])
        return buf.getvalue()


def replicate_seeds(seed: int, replicates: int) -> list:
    """Independent child seed sequences, one per replicate."""
    return np.random.SeedSequence(seed).spawn(replicates)


def run_replicate(cfg: SimConfig, methods: Sequence[str], seed_seq) -> list:
    """Simulate, split, fit each method and score. Returns ``(method, metric, value)``."""
    from pleass.fpc_baseline import fpc_fit, fpc_predict_ci
    from pleass.predictor import wald_ci
    from pleass.tuning import fit_pleass

    rng = np.random.default_rng(seed_seq)
    data, truth = simulate_dataset(cfg, rng)
    train, test = split_dataset(data, cfg.test_fraction, rng)
    bw = _engine(train, cfg.fit, None).bandwidths
    y_bar = float(np.mean(train.responses))
    y_true = {s.subject_id: s.response for s in test.subjects}
    out = []
    for method in methods:
        if method == "pleass":
            model = fit_pleass(train, cfg.fit, bandwidths=bw)
            preds = [wald_ci(model, s.trajectory, model.p_opt, cfg.alpha) for s in test.subjects]
            beta = model.beta(model.p_opt)
        elif method == "fpc":
            model = fpc_fit(train, cfg.fit, bandwidths=bw)
            preds = [fpc_predict_ci(model, s.trajectory, cfg.alpha) for s in test.subjects]
            beta = model.beta()
        else:
            raise ValueError(f"unknown method {method!r}")
        scores = evaluate_metrics(truth.beta, beta, preds, truth.eta, y_true, y_bar)
        out.extend((method, k, scores[k]) for k in METRICS)
    return out


def _job(args):
    cfg, methods, r, seq = args
    try:
        return r, run_replicate(cfg, methods, seq), None
    except (NumericalError, ValueError, np.linalg.LinAlgError) as exc:
        return r, None, f"{type(exc).__name__}: {exc}"


def run_experiment(cfg: SimConfig, methods: Sequence[str] = METHODS, threads: int | None = None,
                   ) -> MetricsReport:
    """All replicates of ``cfg``; rows are reduced in replicate order so the
    report does not depend on ``threads``. A replicate that fails is
    recorded; more than 20% failures is an error."""
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    seeds = replicate_seeds(cfg.seed, cfg.replicates)
    jobs = [(cfg, methods, r, s) for r, s in enumerate(seeds)]
    threads = threads or os.cpu_count() or 1
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as ex:
            results = list(ex.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    report = MetricsReport()
    for r, rows, err in sorted(results, key=lambda x: x[0]):
        if err is not None:
            logger.warning("replicate %d failed: %s", r, err)
            report.failures.append((r, err))
            continue
        report.rows.extend((r, m, k, v) for m, k, v in rows)
    if len(report.failures) > MAX_FAILED_REPLICATES * cfg.replicates:
        raise NumericalError(f"{len(report.failures)} of {cfg.replicates} replicates failed")
    return report
