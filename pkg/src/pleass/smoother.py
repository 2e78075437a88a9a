"""Local linear recovery of the mean, auto-covariance, cross-covariance and
measurement-error variance from pooled sparse observations.

All four targets are intercepts of kernel-weighted least-squares fits
(:func:`pleass.numerics.intercept_from_moments`); only the responses,
design and weights differ:

* mean: observations against observation times;
* cross-covariance: centered products ``(X - mu(T)) (Y - Ybar)``;
* auto-covariance: off-diagonal within-subject products against pairs of
  times, with a product kernel;
* diagonal variance: squared centered observations against time, whose
  excess over the auto-covariance diagonal on [1/4, 3/4] gives the noise
  variance.

Bandwidths are chosen by generalized cross-validation over a rule-of-thumb
candidate pool.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from pleass import backend
from pleass.datamodel import (
    DataError,
    EvalGrid,
    GridFunction1D,
    GridFunction2D,
    SparseDataset,
    grid_function_from_dict,
    grid_function_to_dict,
)
from pleass.numerics import (
    EPANECHNIKOV,
    KernelSpec,
    NumericalError,
    PsdDecomposition,
    intercept_from_moments,
    psd_project,
    trapz_interval,
)

__all__ = [
    "BandwidthError",
    "BandwidthWarning",
    "Bandwidths",
    "MomentEstimates",
    "estimate_mean",
    "estimate_cross_cov",
    "estimate_auto_cov",
    "estimate_noise_var",
    "gcv_scores",
    "gcv_bandwidth",
    "default_candidates",
    "estimate_moments",
    "MomentEngine",
    "CANDIDATE_MULTIPLIERS",
]

logger = logging.getLogger(__name__)

CANDIDATE_MULTIPLIERS = (0.5, 0.75, 1.0, 1.5, 2.0, 3.0)
NOISE_WINDOW = (0.25, 0.75)
MAX_WIDENINGS = 40
# cap on distinct query locations when evaluating GCV
MAX_GCV_QUERIES = 4000


class BandwidthError(NumericalError):
    """A kernel window holds too few observations to fit a local line."""


class BandwidthWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Bandwidths:
    h_mu: float
    h_A: float
    h_C: float
    h_sigma: float

    def __post_init__(self):
        for name in ("h_mu", "h_A", "h_C", "h_sigma"):
            v = float(getattr(self, name))
            if not v > 0:
                raise ValueError(f"bandwidth {name} must be positive")
            object.__setattr__(self, name, v)

    def as_dict(self) -> dict:
        return {"h_mu": self.h_mu, "h_A": self.h_A, "h_C": self.h_C, "h_sigma": self.h_sigma}


@dataclass(frozen=True, eq=False)
class MomentEstimates:
    """Smoothed first and second moments shared by every downstream step."""

    mu_hat: GridFunction1D
    vA_hat: GridFunction2D
    vC_hat: GridFunction1D
    sigma_e2_hat: float
    y_bar: float
    bandwidths: Bandwidths
    psd_tol: float = 1e-8

    def __post_init__(self):
        if not (self.mu_hat.grid == self.vA_hat.grid == self.vC_hat.grid):
            raise ValueError("moment estimates live on different grids")
        if self.sigma_e2_hat < 0:
            raise ValueError("sigma_e2_hat must be nonnegative")
        object.__setattr__(self, "sigma_e2_hat", float(self.sigma_e2_hat))
        object.__setattr__(self, "y_bar", float(self.y_bar))

    @property
    def grid(self) -> EvalGrid:
        return self.mu_hat.grid

    @cached_property
    def spectrum(self) -> PsdDecomposition:
        return psd_project(self.vA_hat, self.psd_tol)

    def to_dict(self) -> dict:
        return {
            "mu_hat": grid_function_to_dict(self.mu_hat),
            "vA_hat": grid_function_to_dict(self.vA_hat),
            "vC_hat": grid_function_to_dict(self.vC_hat),
            "sigma_e2_hat": self.sigma_e2_hat,
            "y_bar": self.y_bar,
            "bandwidths": self.bandwidths.as_dict(),
            "psd_tol": self.psd_tol,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MomentEstimates":
        return cls(
            mu_hat=grid_function_from_dict(d["mu_hat"]),
            vA_hat=grid_function_from_dict(d["vA_hat"]),
            vC_hat=grid_function_from_dict(d["vC_hat"]),
            sigma_e2_hat=d["sigma_e2_hat"],
            y_bar=d["y_bar"],
            bandwidths=Bandwidths(**d["bandwidths"]),
            psd_tol=d.get("psd_tol", 1e-8),
        )


# ------------------------------------------------------------------ designs


@dataclass
class _Design1D:
    """Pooled 1-D design with coincident locations merged."""

    loc: np.ndarray  # sorted distinct locations
    mult: np.ndarray
    usum: np.ndarray
    inverse: np.ndarray  # raw point -> location index
    u: np.ndarray

    @classmethod
    def build(cls, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        loc, inv = np.unique(x, return_inverse=True)
        inv = inv.reshape(-1)
        mult = np.bincount(inv, minlength=loc.size).astype(float)
        usum = np.bincount(inv, weights=u, minlength=loc.size)
        return cls(loc, mult, usum, inv, u)

    @property
    def size(self) -> int:
        return int(self.u.size)


@dataclass
class _Design2D:
    a: np.ndarray  # distinct (a, b) locations sorted by a then b
    b: np.ndarray
    mult: np.ndarray
    usum: np.ndarray
    inverse: np.ndarray
    u: np.ndarray

    @classmethod
    def build(cls, a, b, u):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        u = np.asarray(u, dtype=float)
        if a.size == 0:
            e = np.zeros(0)
            return cls(e, e, e, e, np.zeros(0, dtype=int), e)
        locs, inv = np.unique(np.column_stack([a, b]), axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        mult = np.bincount(inv, minlength=len(locs)).astype(float)
        usum = np.bincount(inv, weights=u, minlength=len(locs))
        return cls(
            np.ascontiguousarray(locs[:, 0]), np.ascontiguousarray(locs[:, 1]), mult, usum, inv, u
        )

    @property
    def size(self) -> int:
        return int(self.u.size)


def _c(x):
    return np.ascontiguousarray(x, dtype=float)


def _warn_widened(count: int, dim: str):
    warnings.warn(
        f"{count} {dim} query point(s) had fewer than two observations in the kernel "
        "window; their bandwidth was widened",
        BandwidthWarning,
        stacklevel=3,
    )


def _moments_1d(query, design: _Design1D, h: float, kernel: KernelSpec, widen: bool):
    query = _c(query)
    mom = backend.moments_1d(
        query, _c(design.loc), _c(design.mult), _c(design.usum), float(h), kernel.gamma, kernel.const
    )
    bad = np.flatnonzero(mom[:, 5] < 2)
    if bad.size:
        if not widen:
            raise BandwidthError(
                f"bandwidth {h:g} too small for design: {bad.size} query point(s) see fewer "
                "than two observations"
            )
        if design.size < 2:
            raise BandwidthError("fewer than two pooled observations")
        for i in bad:
            hh = h
            for _ in range(MAX_WIDENINGS):
                hh *= 2
                row = backend.moments_1d(
                    query[i:i + 1], _c(design.loc), _c(design.mult), _c(design.usum),
                    hh, kernel.gamma, kernel.const,
                )
                if row[0, 5] >= 2:
                    break
            mom[i] = row[0]
        _warn_widened(bad.size, "1-D")
    return mom


def _lls_1d(query, design: _Design1D, h, kernel, widen=True, with_leverage=False):
    m = _moments_1d(query, design, h, kernel, widen)
    return intercept_from_moments(m[:, 0], m[:, 1], m[:, 2], m[:, 3], m[:, 4],
                                  with_leverage=with_leverage)


def _split_2d(m):
    S1 = np.stack([m[..., 1], m[..., 2]], axis=-1)
    S2 = np.stack(
        [np.stack([m[..., 3], m[..., 4]], axis=-1), np.stack([m[..., 4], m[..., 5]], axis=-1)],
        axis=-2,
    )
    STu = np.stack([m[..., 7], m[..., 8]], axis=-1)
    return m[..., 0], S1, S2, m[..., 6], STu


def _widen_2d(qs, qt, design: _Design2D, h, kernel):
    if design.size < 2:
        raise BandwidthError("fewer than two within-subject pairs")
    hh = h
    for _ in range(MAX_WIDENINGS):
        hh *= 2
        row = backend.moments_2d(
            _c([qs]), _c([qt]), design.a, design.b, design.mult, design.usum,
            hh, kernel.gamma, kernel.const,
        )
        if row[0, 9] >= 2:
            return row[0]
    raise BandwidthError("could not find a window with two observations")


def _moments_2d_points(qs, qt, design: _Design2D, h, kernel, widen):
    mom = backend.moments_2d(
        _c(qs), _c(qt), design.a, design.b, design.mult, design.usum,
        float(h), kernel.gamma, kernel.const,
    )
    bad = np.flatnonzero(mom[:, 9] < 2)
    if bad.size:
        if not widen:
            raise BandwidthError(f"bandwidth {h:g} too small for the pair design")
        for i in bad:
            mom[i] = _widen_2d(qs[i], qt[i], design, h, kernel)
        _warn_widened(bad.size, "2-D")
    return mom


_GEMM_CHUNK = 1 << 16


def _grid_moments_2d(points, a, b, mult, u, h, kernel: KernelSpec):
    """Moments of every (s, t) in points x points; separable product kernel
    turns each sum into a matrix product."""
    G = points.size
    out = np.zeros((G, G, 10))
    for start in range(0, a.size, _GEMM_CHUNK):
        sl = slice(start, start + _GEMM_CHUNK)
        Ta = points[:, None] - a[None, sl]
        Tb = points[:, None] - b[None, sl]
        A = kernel(Ta / h)
        B = kernel(Tb / h)
        m = mult[sl]
        uu = u[sl]
        Am = A * m
        out[..., 0] += Am @ B.T
        out[..., 1] += (Am * Ta) @ B.T
        out[..., 2] += Am @ (B * Tb).T
        out[..., 3] += (Am * Ta * Ta) @ B.T
        out[..., 4] += (Am * Ta) @ (B * Tb).T
        out[..., 5] += Am @ (B * Tb * Tb).T
        Au = A * uu
        out[..., 6] += Au @ B.T
        out[..., 7] += (Au * Ta) @ B.T
        out[..., 8] += Au @ (B * Tb).T
        out[..., 9] += ((A > 0) * m) @ (B > 0).T.astype(float)
    return out


# ------------------------------------------------------------------ pooled data


class _Pooled:
    """Flattened observations and within-subject pairs of a dataset."""

    def __init__(self, data: SparseDataset, include_diagonal: bool = False):
        if data.n < 2:
            raise DataError("smoothing needs at least two subjects")
        self.data = data
        self.n = data.n
        self.t = np.asarray(data.pooled_times)
        self.x = np.asarray(data.pooled_values)
        self.owner = np.asarray(data.owner)
        self.y = np.asarray(data.responses)
        starts = np.concatenate([[0], np.cumsum(data.counts)[:-1]])
        i1, i2 = [], []
        for s, L in zip(starts, data.counts):
            idx = np.arange(s, s + L)
            p, q = np.meshgrid(idx, idx, indexing="ij")
            keep = np.ones((L, L), dtype=bool) if include_diagonal else ~np.eye(L, dtype=bool)
            i1.append(p[keep])
            i2.append(q[keep])
        self.i1 = np.concatenate(i1)
        self.i2 = np.concatenate(i2)
        self.pair_owner = self.owner[self.i1]
        self.pa = self.t[self.i1]
        self.pb = self.t[self.i2]
        self.pu = self.x[self.i1] * self.x[self.i2]


def _require_pairs(pooled: _Pooled):
    if pooled.pa.size == 0:
        raise DataError("auto-covariance unidentifiable: no subject has two observations")


def _interp_grid(f: GridFunction1D, t):
    return np.interp(t, f.grid.points, f.values)


def _mean_from(pooled, keep, h, grid, kernel, widen=True):
    d = _Design1D.build(pooled.t[keep], pooled.x[keep])
    return GridFunction1D(grid, _lls_1d(grid.points, d, h, kernel, widen))


def _cross_u(pooled, keep, mu_hat):
    y = pooled.y
    sub_keep = np.ones(pooled.n, dtype=bool)
    sub_keep[np.unique(pooled.owner[~keep])] = False
    ybar = y[sub_keep].mean()
    t = pooled.t[keep]
    u = (pooled.x[keep] - _interp_grid(mu_hat, t)) * (y[pooled.owner[keep]] - ybar)
    return t, u, ybar


def _cross_from(pooled, keep, mu_hat, h, grid, kernel, legacy=False, widen=True):
    t, u, ybar = _cross_u(pooled, keep, mu_hat)
    a0 = _lls_1d(grid.points, _Design1D.build(t, u), h, kernel, widen)
    if legacy:
        a0 = a0 - ybar * mu_hat.values
    return GridFunction1D(grid, a0)


def _noise_u(pooled, keep, mu_hat):
    t = pooled.t[keep]
    return t, (pooled.x[keep] - _interp_grid(mu_hat, t)) ** 2


def _diag_var_from(pooled, keep, mu_hat, h, grid, kernel, widen=True):
    t, u = _noise_u(pooled, keep, mu_hat)
    return GridFunction1D(grid, _lls_1d(grid.points, _Design1D.build(t, u), h, kernel, widen))


def _noise_from_diag(vtilde: GridFunction1D, vA_hat: GridFunction2D) -> float:
    lo, hi = NOISE_WINDOW
    diff = GridFunction1D(vtilde.grid, vtilde.values - np.diag(vA_hat.values))
    return max(0.0, 2.0 * trapz_interval(diff, lo, hi))


def _autocov_from_moments(mom, mu_hat: GridFunction1D, pair_design_fn, h, kernel, widen, psd_tol):
    """Finish the auto-covariance surface from grid moments (G, G, 10)."""
    grid = mu_hat.grid
    bad = np.argwhere(mom[..., 9] < 2)
    if bad.size:
        if not widen:
            raise BandwidthError(f"bandwidth {h:g} too small for the pair design")
        design = pair_design_fn()
        pts = grid.points
        for i, j in bad:
            mom[i, j] = _widen_2d(pts[i], pts[j], design, h, kernel)
        _warn_widened(len(bad), "2-D grid")
    a0 = intercept_from_moments(*_split_2d(mom))
    raw = a0 - np.outer(mu_hat.values, mu_hat.values)
    raw = GridFunction2D(grid, raw, symmetric=True)
    if psd_tol is None:
        return raw, None
    dec = psd_project(raw, psd_tol)
    return dec.kernel(), dec


# ------------------------------------------------------------------ public ops


def estimate_mean(data: SparseDataset, h_mu: float, grid: EvalGrid,
                  kernel: KernelSpec = EPANECHNIKOV, widen: bool = True) -> GridFunction1D:
    """Local linear estimate of the mean function on ``grid``."""
    pooled = _Pooled(data)
    return _mean_from(pooled, np.ones(pooled.t.size, dtype=bool), h_mu, grid, kernel, widen)


def estimate_cross_cov(data: SparseDataset, mu_hat: GridFunction1D, h_C: float, grid: EvalGrid,
                       kernel: KernelSpec = EPANECHNIKOV, legacy_vc_centering: bool = False,
                       widen: bool = True) -> GridFunction1D:
    """Cross-covariance ``cov{Y, X(t)}`` from centered products.

    The products are already centered, so the local intercept is returned
    as is. ``legacy_vc_centering`` additionally subtracts ``Ybar * mu_hat``.
    """
    pooled = _Pooled(data)
    keep = np.ones(pooled.t.size, dtype=bool)
    return _cross_from(pooled, keep, mu_hat, h_C, grid, kernel, legacy_vc_centering, widen)


def estimate_auto_cov(data: SparseDataset, mu_hat: GridFunction1D, h_A: float, grid: EvalGrid,
                      kernel: KernelSpec = EPANECHNIKOV, psd_tol: float | None = 1e-8,
                      include_diagonal: bool = False, widen: bool = True) -> GridFunction2D:
    """Auto-covariance surface from off-diagonal within-subject products.

    Returns the symmetrized surface projected onto the PSD cone
    (``psd_tol=None`` skips the projection). ``include_diagonal`` also
    smooths the squared observations ``l1 == l2``, which carry the noise
    variance; it exists for diagnostics.
    """
    pooled = _Pooled(data, include_diagonal=include_diagonal)
    _require_pairs(pooled)
    design = _Design2D.build(pooled.pa, pooled.pb, pooled.pu)
    mom = _grid_moments_2d(grid.points, design.a, design.b, design.mult, design.usum, h_A, kernel)
    surf, _ = _autocov_from_moments(mom, mu_hat, lambda: design, h_A, kernel, widen, psd_tol)
    return surf


def estimate_noise_var(data: SparseDataset, mu_hat: GridFunction1D, vA_hat: GridFunction2D,
                       h_sigma: float, grid: EvalGrid, kernel: KernelSpec = EPANECHNIKOV,
                       widen: bool = True) -> float:
    """Measurement-error variance, clamped at zero.

    Twice the integral over [1/4, 3/4] of the smoothed squared centered
    observations minus the auto-covariance diagonal.
    """
    pooled = _Pooled(data)
    keep = np.ones(pooled.t.size, dtype=bool)
    vtilde = _diag_var_from(pooled, keep, mu_hat, h_sigma, grid, kernel, widen)
    return _noise_from_diag(vtilde, vA_hat)


def default_candidates(data: SparseDataset, multipliers: Sequence[float] = CANDIDATE_MULTIPLIERS):
    """Rule-of-thumb pilot ``range(T) * N^(-1/5)`` times ``multipliers``."""
    t = np.asarray(data.pooled_times)
    span = float(t.max() - t.min()) or 1.0
    h0 = span * t.size ** (-0.2)
    return [h0 * m for m in multipliers]


def _gcv_ratio(u, fitted_at_points, leverage_points):
    resid = u - fitted_at_points
    M = u.size
    dof = M - np.sum(leverage_points)
    if not np.all(np.isfinite(resid)) or dof <= 0:
        return np.inf
    return float(resid @ resid / dof**2)


def _subsample(nloc: int, cap: int):
    if nloc <= cap:
        return None
    return np.unique(np.linspace(0, nloc - 1, cap).round().astype(int))


def _gcv_1d(design: _Design1D, h, kernel, cap=MAX_GCV_QUERIES):
    sub = _subsample(design.loc.size, cap)
    locs = design.loc if sub is None else design.loc[sub]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BandwidthWarning)
        try:
            m = _moments_1d(locs, design, h, kernel, widen=True)
        except BandwidthError:
            return np.inf
    a0, lev = intercept_from_moments(m[:, 0], m[:, 1], m[:, 2], m[:, 3], m[:, 4],
                                     with_leverage=True)
    lev = lev * kernel.at_zero
    return _gcv_pooled(design, sub, a0, lev)


def _gcv_2d(design: _Design2D, h, kernel, cap=MAX_GCV_QUERIES):
    sub = _subsample(design.a.size, cap)
    qa = design.a if sub is None else design.a[sub]
    qb = design.b if sub is None else design.b[sub]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BandwidthWarning)
        try:
            m = _moments_2d_points(qa, qb, design, h, kernel, widen=True)
        except BandwidthError:
            return np.inf
    a0, lev = intercept_from_moments(*_split_2d(m), with_leverage=True)
    lev = lev * kernel.at_zero**2
    return _gcv_pooled(design, sub, a0, lev)


def _gcv_pooled(design, sub, a0_loc, lev_loc):
    if sub is None:
        return _gcv_ratio(design.u, a0_loc[design.inverse], lev_loc[design.inverse])
    # evaluate at the subsampled locations and rescale to the full design
    pos = np.full(design.mult.size, -1)
    pos[sub] = np.arange(sub.size)
    sel = pos[design.inverse] >= 0
    k = pos[design.inverse[sel]]
    resid = design.u[sel] - a0_loc[k]
    scale = design.size / sel.sum()
    rss = scale * float(resid @ resid)
    dof = design.size - scale * float(np.sum(lev_loc[k]))
    if not np.isfinite(rss) or dof <= 0:
        return np.inf
    return rss / dof**2


_OBJECTIVES = ("mean", "autocov", "crosscov", "noise")


def gcv_scores(objective: str, data: SparseDataset, candidates: Sequence[float], *,
               kernel: KernelSpec = EPANECHNIKOV, mu_hat: GridFunction1D | None = None,
               grid: EvalGrid | None = None) -> np.ndarray:
    """GCV criterion ``RSS / (M - tr S)^2`` for each candidate bandwidth.

    The local fit is evaluated at every distinct design location, ``RSS``
    sums the squared residuals of the pooled responses and ``tr S`` is the
    trace of the smoother matrix. Candidates whose fit degenerates score
    ``inf``. ``crosscov`` and ``noise`` need ``mu_hat``; when missing it is
    estimated with a GCV-chosen bandwidth on ``grid``.
    """
    if objective not in _OBJECTIVES:
        raise ValueError(f"objective must be one of {_OBJECTIVES}")
    if not len(candidates):
        raise ValueError("no candidate bandwidths")
    pooled = _Pooled(data)
    if objective in ("crosscov", "noise") and mu_hat is None:
        grid = grid or EvalGrid()
        h = gcv_bandwidth("mean", data, default_candidates(data), kernel=kernel)
        mu_hat = estimate_mean(data, h, grid, kernel)
    keep = np.ones(pooled.t.size, dtype=bool)
    if objective == "mean":
        d = _Design1D.build(pooled.t, pooled.x)
        return np.array([_gcv_1d(d, h, kernel) for h in candidates])
    if objective == "crosscov":
        t, u, _ = _cross_u(pooled, keep, mu_hat)
        d = _Design1D.build(t, u)
        return np.array([_gcv_1d(d, h, kernel) for h in candidates])
    if objective == "noise":
        d = _Design1D.build(*_noise_u(pooled, keep, mu_hat))
        return np.array([_gcv_1d(d, h, kernel) for h in candidates])
    _require_pairs(pooled)
    d = _Design2D.build(pooled.pa, pooled.pb, pooled.pu)
    return np.array([_gcv_2d(d, h, kernel) for h in candidates])


def gcv_bandwidth(objective: str, data: SparseDataset, candidates: Sequence[float], *,
                  kernel: KernelSpec = EPANECHNIKOV, mu_hat: GridFunction1D | None = None,
                  grid: EvalGrid | None = None) -> float:
    """Candidate with the smallest GCV score; ties go to the larger bandwidth."""
    cands = [float(h) for h in candidates]
    if len(cands) == 1:
        return cands[0]
    scores = gcv_scores(objective, data, cands, kernel=kernel, mu_hat=mu_hat, grid=grid)
    if not np.any(np.isfinite(scores)):
        diag = ", ".join(f"h={h:.4g}: {s}" for h, s in zip(cands, scores))
        raise BandwidthError(f"GCV ({objective}) degenerate for every candidate ({diag})")
    order = sorted(range(len(cands)), key=lambda k: -cands[k])
    best = min(order, key=lambda k: scores[k])
    logger.debug("GCV %s: %s -> %.4g", objective, list(zip(cands, scores)), cands[best])
    return cands[best]


# ------------------------------------------------------------------ engine


class MomentEngine:
    """Moment estimation for a dataset and its leave-one-out folds.

    Bandwidths are fixed at construction. ``fit()`` smooths the full data;
    ``fit(exclude=i)`` gives the same result as smoothing the dataset with
    subject ``i`` removed, but downdates the auto-covariance sums instead of
    recomputing them.
    """

    def __init__(self, data: SparseDataset, bandwidths: Bandwidths, grid: EvalGrid,
                 kernel: KernelSpec = EPANECHNIKOV, psd_tol: float = 1e-8,
                 legacy_vc_centering: bool = False, widen: bool = True):
        self.data = data
        self.bw = bandwidths
        self.grid = grid
        self.kernel = kernel
        self.psd_tol = psd_tol
        self.legacy = legacy_vc_centering
        self.widen = widen
        self.pooled = _Pooled(data)
        _require_pairs(self.pooled)
        p = self.pooled
        self._pair_design = _Design2D.build(p.pa, p.pb, p.pu)
        d = self._pair_design
        self._full_mom = _grid_moments_2d(
            grid.points, d.a, d.b, d.mult, d.usum, bandwidths.h_A, kernel
        )
        order = np.argsort(p.pair_owner, kind="stable")
        bounds = np.searchsorted(p.pair_owner[order], np.arange(p.n + 1))
        self._pairs_of = [order[bounds[i]:bounds[i + 1]] for i in range(p.n)]

    @property
    def bandwidths(self) -> Bandwidths:
        return self.bw

    def fit(self, exclude: int | None = None) -> MomentEstimates:
        p, grid, k, bw = self.pooled, self.grid, self.kernel, self.bw
        keep = np.ones(p.t.size, dtype=bool)
        mom = self._full_mom.copy()
        pair_design = lambda: self._pair_design  # noqa: E731
        if exclude is not None:
            if p.n - 1 < 2:
                raise DataError("smoothing needs at least two subjects")
            keep = p.owner != exclude
            idx = self._pairs_of[exclude]
            if idx.size:
                mom -= _grid_moments_2d(
                    grid.points, p.pa[idx], p.pb[idx], np.ones(idx.size), p.pu[idx], bw.h_A, k
                )
                # counts are integers; guard against drift from the subtraction
                np.round(mom[..., 9], out=mom[..., 9])
            pkeep = p.pair_owner != exclude
            if not pkeep.any():
                raise DataError("auto-covariance unidentifiable: no subject has two observations")
            pair_design = lambda: _Design2D.build(p.pa[pkeep], p.pb[pkeep], p.pu[pkeep])  # noqa: E731
        mu = _mean_from(p, keep, bw.h_mu, grid, k, self.widen)
        vA, dec = _autocov_from_moments(mom, mu, pair_design, bw.h_A, k, self.widen, self.psd_tol)
        vC = _cross_from(p, keep, mu, bw.h_C, grid, k, self.legacy, self.widen)
        vt = _diag_var_from(p, keep, mu, bw.h_sigma, grid, k, self.widen)
        sigma2 = _noise_from_diag(vt, vA)
        ybar = float(np.mean(np.delete(p.y, exclude))) if exclude is not None else float(p.y.mean())
        est = MomentEstimates(mu, vA, vC, sigma2, ybar, bw, self.psd_tol)
        est.__dict__["spectrum"] = dec
        return est


def select_bandwidths(data: SparseDataset, grid: EvalGrid, kernel: KernelSpec = EPANECHNIKOV,
                      overrides: dict | None = None,
                      multipliers: Sequence[float] = CANDIDATE_MULTIPLIERS) -> Bandwidths:
    """GCV choice of every bandwidth not fixed in ``overrides``."""
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    cands = default_candidates(data, multipliers)
    h_mu = overrides.get("h_mu") or gcv_bandwidth("mean", data, cands, kernel=kernel)
    mu = estimate_mean(data, h_mu, grid, kernel)
    h_A = overrides.get("h_A") or gcv_bandwidth("autocov", data, cands, kernel=kernel)
    h_C = overrides.get("h_C") or gcv_bandwidth("crosscov", data, cands, kernel=kernel, mu_hat=mu)
    h_s = overrides.get("h_sigma") or gcv_bandwidth("noise", data, cands, kernel=kernel, mu_hat=mu)
    return Bandwidths(h_mu, h_A, h_C, h_s)


def estimate_moments(data: SparseDataset, grid: EvalGrid | None = None,
                     kernel: KernelSpec = EPANECHNIKOV, bandwidths: Bandwidths | dict | None = None,
                     psd_tol: float = 1e-8, legacy_vc_centering: bool = False,
                     multipliers: Sequence[float] = CANDIDATE_MULTIPLIERS) -> MomentEstimates:
    """Full smoothing pipeline; bandwidths not supplied are chosen by GCV."""
    grid = grid or EvalGrid()
    if not isinstance(bandwidths, Bandwidths):
        bandwidths = select_bandwidths(data, grid, kernel, bandwidths, multipliers)
    engine = MomentEngine(data, bandwidths, grid, kernel, psd_tol, legacy_vc_centering)
    return engine.fit()
