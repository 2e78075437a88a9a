"""Quadrature, smoothing kernels, the local-linear intercept and PSD eigen tools."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from statistics import NormalDist

import numpy as np

from pleass.datamodel import EvalGrid, GridFunction1D, GridFunction2D

__all__ = [
    "KernelSpec",
    "EPANECHNIKOV",
    "NumericalError",
    "PINV_RCOND",
    "kernel_eval",
    "trapz",
    "trapz_interval",
    "quadform",
    "apply_kernel",
    "wls_intercept",
    "intercept_from_moments",
    "PsdDecomposition",
    "psd_project",
    "normal_quantile",
]

# relative singular-value cutoff for every Moore-Penrose inverse
PINV_RCOND = 1e-10
COND_NOISE = 100.0


class NumericalError(ArithmeticError):
    """A numerical step could not produce a usable answer."""


@dataclass(frozen=True)
class KernelSpec:
    """Symmetric Beta-family kernel ``C (1 - t^2)^gamma`` on [-1, 1].

    ``gamma=1`` is the Epanechnikov kernel 0.75 (1 - t^2).
    """

    family: str = "epanechnikov"
    gamma: int = 1

    def __post_init__(self):
        fam = self.family.lower().replace("_", "-")
        if fam == "epanechnikov":
            gamma = 1
        elif fam in ("beta", "symmetric-beta"):
            fam = "symmetric-beta"
            gamma = self.gamma
            if int(gamma) != gamma or gamma < 1:
                raise ValueError("symmetric-beta kernel needs a positive integer gamma")
        else:
            raise ValueError(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "gamma", int(gamma))
        grid = np.linspace(-1.0, 1.0, 1001)
        vals = self(grid)
        mass = float(np.sum((vals[1:] + vals[:-1]) / 2) * (grid[1] - grid[0]))
        if abs(mass - 1.0) > 1e-6:
            raise ValueError(f"kernel does not integrate to one (got {mass})")

    @cached_property
    def const(self) -> float:
        # 1 / Beta(1/2, gamma + 1)
        g = self.gamma
        return math.exp(math.lgamma(g + 1.5) - math.lgamma(0.5) - math.lgamma(g + 1.0))

    @property
    def at_zero(self) -> float:
        return self.const

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        r = np.clip(1.0 - t * t, 0.0, None)
        out = self.const * r**self.gamma
        return float(out) if out.ndim == 0 else out


EPANECHNIKOV = KernelSpec()


def kernel_eval(k: KernelSpec, t: float) -> float:
    return k(t)


def trapz(f: GridFunction1D) -> float:
    """Composite trapezoid integral over [0, 1]."""
    return float(f.grid.weights @ f.values)


def trapz_interval(f: GridFunction1D, lo: float, hi: float) -> float:
    """Exact integral over [lo, hi] of the piecewise-linear interpolant of ``f``."""
    pts = f.grid.points
    inner = pts[(pts > lo) & (pts < hi)]
    x = np.concatenate([[lo], inner, [hi]])
    y = np.interp(x, pts, f.values)
    return float(np.sum((y[1:] + y[:-1]) / 2 * np.diff(x)))


def _same_grid(*objs):
    g = objs[0].grid
    for o in objs[1:]:
        if o.grid != g:
            raise ValueError("grid functions live on different grids")
    return g


def quadform(f: GridFunction1D, K: GridFunction2D, g: GridFunction1D) -> float:
    """Tensor-trapezoid approximation of the double integral of f(s) K(s,t) g(t)."""
    grid = _same_grid(f, K, g)
    w = grid.weights
    return float((w * f.values) @ K.values @ (w * g.values))


def apply_kernel(K: GridFunction2D, f: GridFunction1D) -> GridFunction1D:
    """Integral operator ``(Kf)(s) = int K(s, t) f(t) dt`` by trapezoid rule."""
    grid = _same_grid(K, f)
    return GridFunction1D(grid, K.values @ (grid.weights * f.values))


def _pinv_sym(G: np.ndarray, with_cond: bool = False):
    """Batched Moore-Penrose inverse of symmetric PSD matrices (..., m, m).

    With ``with_cond`` also returns the condition number over the kept
    eigenvalues.
    """
    evals, evecs = np.linalg.eigh(G)
    top = np.abs(evals).max(axis=-1, keepdims=True)
    keep = np.abs(evals) > PINV_RCOND * top
    inv = np.where(keep, 1.0 / np.where(keep, evals, 1.0), 0.0)
    out = np.einsum("...ik,...k,...jk->...ij", evecs, inv, evecs)
    if not with_cond:
        return out
    low = np.where(keep, np.abs(evals), np.inf).min(axis=-1)
    return out, np.where(np.isfinite(low), top[..., 0] / np.where(np.isfinite(low), low, 1.0), 1.0)


def _identified(d, S0, cond):
    # d is a cancellation-prone difference; its rounding noise grows with cond(S2)
    return d > np.maximum(PINV_RCOND, COND_NOISE * np.finfo(float).eps * cond) * S0


def intercept_from_moments(S0, S1, S2, Su, STu, *, with_leverage: bool = False):
    """Local-linear intercept from weighted moment sums.

    With ``T`` the ``M x m`` design, ``W`` the diagonal weights and ``u`` the
    responses, the inputs are ``S0 = 1'W1``, ``S1 = T'W1``, ``S2 = T'WT``,
    ``Su = 1'Wu`` and ``STu = T'Wu`` (leading batch axis, ``m`` trailing).
    The intercept is

        [1'{W - WT (T'WT)^+ T'W}1]^+ 1'{W - WT (T'WT)^+ T'W}u.

    When the bracket vanishes (intercept confounded with the slope, e.g. a
    single effective point) the weighted mean ``Su / S0`` is returned.
    Entries with ``S0 == 0`` come back as NaN.

    If ``with_leverage`` is set, also returns the factor multiplying a data
    point's own kernel weight in the intercept when the query sits on that
    point (``T = 0``); this is the smoother-matrix diagonal used by GCV.
    """
    S0 = np.asarray(S0, dtype=float)
    S1 = np.asarray(S1, dtype=float)
    S2 = np.asarray(S2, dtype=float)
    Su = np.asarray(Su, dtype=float)
    STu = np.asarray(STu, dtype=float)
    if S1.ndim == S0.ndim:  # m == 1 given as plain vectors
        S1 = S1[..., None]
        STu = STu[..., None]
        S2 = S2[..., None, None]
    Gp, cond = _pinv_sym(S2, with_cond=True)
    d = S0 - np.einsum("...i,...ij,...j->...", S1, Gp, S1)
    num = Su - np.einsum("...i,...ij,...j->...", S1, Gp, STu)
    ok = _identified(d, S0, cond)
    safe_d = np.where(ok, d, 1.0)
    safe_s0 = np.where(S0 > 0, S0, 1.0)
    a0 = np.where(ok, num / safe_d, Su / safe_s0)
    a0 = np.where(S0 > 0, a0, np.nan)
    if not with_leverage:
        return a0
    lev = np.where(ok, 1.0 / safe_d, 1.0 / safe_s0)
    return a0, np.where(S0 > 0, lev, np.nan)


def wls_intercept(u, T, w) -> float:
    """Intercept ``a0`` of the weighted fit ``u ~ a0 + T a`` (see
    :func:`intercept_from_moments` for the closed form and degenerate case).
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    T = np.asarray(T, dtype=float)
    if T.ndim == 1:
        T = T[:, None]
    w = np.asarray(w, dtype=float).reshape(-1)
    if not (u.size == T.shape[0] == w.size) or u.size == 0:
        raise ValueError("u, T and w must have matching, nonzero length")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if not np.any(w > 0):
        raise NumericalError("no effective data in window (all weights are zero)")
    S0 = w.sum()
    S1 = T.T @ w
    S2 = (T * w[:, None]).T @ T
    Gp, cond = _pinv_sym(S2, with_cond=True)
    if not _identified(S0 - S1 @ Gp @ S1, S0, cond):
        return float(w @ u / S0)
    # identified intercept: solve on the square-root-weighted data, which is
    # better conditioned than the moment form
    sw = np.sqrt(w)
    X = np.column_stack([sw, T * sw[:, None]])
    coef = np.linalg.lstsq(X, sw * u, rcond=None)[0]
    return float(coef[0])


@dataclass(frozen=True, eq=False)
class PsdDecomposition:
    """Spectrum of the integral operator of a symmetric grid kernel.

    ``eigenvectors`` are orthonormal columns of the quadrature-weighted
    matrix ``Wq^{1/2} K Wq^{1/2}``; ``functions`` holds the matching
    eigenfunctions on the grid, orthonormal under the trapezoid rule.
    """

    grid: EvalGrid
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    tolerance: float

    @property
    def rank(self) -> int:
        return int(self.eigenvalues.size)

    @cached_property
    def functions(self) -> np.ndarray:
        return self.eigenvectors / np.sqrt(self.grid.weights)[:, None]

    def eigenfunction(self, j: int) -> GridFunction1D:
        return GridFunction1D(self.grid, self.functions[:, j])

    def kernel(self) -> GridFunction2D:
        phi = self.functions
        return GridFunction2D(self.grid, (phi * self.eigenvalues) @ phi.T, symmetric=True)


def psd_project(K: GridFunction2D, tol_rel: float = 1e-8) -> PsdDecomposition:
    """Eigendecompose the discretized covariance operator and drop the
    eigenvalues below ``tol_rel * lambda_max`` (negative ones included).
    """
    if not np.all(np.isfinite(K.values)):
        raise NumericalError("kernel has non-finite entries")
    grid = K.grid
    sw = np.sqrt(grid.weights)
    A = (K.values + K.values.T) / 2
    A = sw[:, None] * A * sw[None, :]
    evals, evecs = np.linalg.eigh(A)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    top = evals[0] if evals.size else 0.0
    keep = evals > tol_rel * top if top > 0 else np.zeros(evals.size, dtype=bool)
    # deterministic sign: largest-magnitude entry of each eigenvector positive
    vecs = evecs[:, keep]
    if vecs.size:
        piv = np.argmax(np.abs(vecs), axis=0)
        vecs = vecs * np.sign(vecs[piv, np.arange(vecs.shape[1])])
    return PsdDecomposition(grid, evals[keep].copy(), vecs, tol_rel)


_STD_NORMAL = NormalDist()


def normal_quantile(p: float) -> float:
    """Standard normal quantile."""
    if not 0.0 < p < 1.0:
        raise ValueError("probability must lie in (0, 1)")
    return _STD_NORMAL.inv_cdf(p)
