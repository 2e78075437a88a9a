"""Functional PLS basis from the empirical Krylov sequence.

The basis spans ``{vC, V(vC), ..., V^{p-1}(vC)}`` where ``V`` is the
integral operator of the smoothed auto-covariance; it is orthonormalized
in the covariance inner product ``<f, g> = int int f(s) vA(s,t) g(t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from pleass.datamodel import GridFunction1D, GridFunction2D, grid_function_from_dict, grid_function_to_dict
from pleass.numerics import apply_kernel, quadform, trapz
from pleass.smoother import MomentEstimates

__all__ = [
    "PleassModel",
    "krylov_sequence",
    "orthonormalize",
    "fit_coefficients",
    "DEFAULT_THRESHOLD",
]

DEFAULT_THRESHOLD = 1e-10
_REORTH_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class PleassModel:
    moments: MomentEstimates
    basis: tuple  # GridFunction1D, length p_max; zero functions past degeneracy
    c_hat: np.ndarray
    p_max: int
    p_opt: int | None = None
    degenerate_from: int | None = None
    cv_curve: object = field(default=None, repr=False)

    def __post_init__(self):
        c = np.array(self.c_hat, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "c_hat", c)
        object.__setattr__(self, "basis", tuple(self.basis))
        if len(self.basis) != self.p_max or c.size != self.p_max:
            raise ValueError("basis and c_hat must both have p_max entries")
        if self.p_opt is not None and not 0 <= self.p_opt <= self.p_max:
            raise ValueError("p_opt out of range")

    @property
    def grid(self):
        return self.moments.grid

    @property
    def p_effective(self) -> int:
        """Number of usable components (degenerate directions dropped)."""
        if self.degenerate_from is None:
            return self.p_max
        return self.degenerate_from - 1

    @property
    def basis_matrix(self) -> np.ndarray:
        """Columns are the basis functions on the grid."""
        if not self.basis:
            return np.zeros((self.grid.size, 0))
        return np.column_stack([w.values for w in self.basis])

    @property
    def cov_basis_matrix(self) -> np.ndarray:
        """Columns ``V(w_j)``: the auto-covariance operator applied to each basis function."""
        B = self.basis_matrix
        return self.moments.vA_hat.values @ (self.grid.weights[:, None] * B)

    def beta(self, p: int | None = None) -> GridFunction1D:
        """Slope estimate ``sum_{j <= p} c_j w_j``; ``p`` defaults to ``p_opt``."""
        p = self._p(p)
        vals = self.basis_matrix[:, :p] @ self.c_hat[:p]
        return GridFunction1D(self.grid, vals if p else np.zeros(self.grid.size))

    @property
    def beta_hat(self) -> list:
        return [self.beta(p) for p in range(1, self.p_max + 1)]

    def _p(self, p):
        if p is None:
            p = self.p_opt if self.p_opt is not None else self.p_max
        if not 0 <= p <= self.p_max:
            raise ValueError(f"p must lie in [0, {self.p_max}]")
        return int(p)

    def with_p_opt(self, p_opt: int, cv_curve=None) -> "PleassModel":
        return PleassModel(self.moments, self.basis, self.c_hat, self.p_max, p_opt,
                           self.degenerate_from, cv_curve)

    def to_dict(self) -> dict:
        out = {
            "method": "pleass",
            "moments": self.moments.to_dict(),
            "basis": [grid_function_to_dict(w) for w in self.basis],
            "c_hat": [float(c) for c in self.c_hat],
            "p_max": self.p_max,
            "p_opt": self.p_opt,
            "degenerate_from": self.degenerate_from,
        }
        if self.cv_curve is not None:
            out["cv_curve"] = self.cv_curve.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PleassModel":
        from pleass.tuning import CvCurve

        return cls(
            moments=MomentEstimates.from_dict(d["moments"]),
            basis=[grid_function_from_dict(w) for w in d["basis"]],
            c_hat=d["c_hat"],
            p_max=int(d["p_max"]),
            p_opt=d.get("p_opt"),
            degenerate_from=d.get("degenerate_from"),
            cv_curve=CvCurve.from_dict(d["cv_curve"]) if d.get("cv_curve") else None,
        )


def krylov_sequence(vC_hat: GridFunction1D, vA_hat: GridFunction2D, p_max: int) -> list:
    """``[vC, V(vC), ..., V^{p_max-1}(vC)]`` by repeated trapezoid application."""
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    seq = [vC_hat]
    for _ in range(p_max - 1):
        seq.append(apply_kernel(vA_hat, seq[-1]))
    return seq


def _inner(K, w, f, g):
    return float((w * f) @ K @ (w * g))


def _mgs_pass(vectors, K, w, threshold):
    out = []
    for j, v in enumerate(vectors):
        v = v.copy()
        for q in out:
            if q is not None:
                v = v - q * _inner(K, w, v, q)
        nrm2 = _inner(K, w, v, v)
        out.append(v / np.sqrt(nrm2) if nrm2 > threshold else None)
    return out


def orthonormalize(funcs: Sequence[GridFunction1D], vA_hat: GridFunction2D,
                   threshold: float = DEFAULT_THRESHOLD):
    """Modified Gram-Schmidt in the ``vA_hat`` inner product.

    A function whose squared norm after the sweep is at most ``threshold``
    becomes the zero function. Returns ``(basis, degenerate_from)`` where
    ``degenerate_from`` is the 1-based index of the first zeroed function,
    or None.
    """
    if not funcs:
        raise ValueError("nothing to orthonormalize")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    grid = vA_hat.grid
    K = vA_hat.values
    w = grid.weights
    vecs = _mgs_pass([f.values for f in funcs], K, w, threshold)
    alive = [v for v in vecs if v is not None]
    if len(alive) > 1:
        A = np.column_stack(alive)
        gram = (A * w[:, None]).T @ K @ (A * w[:, None])
        if np.max(np.abs(gram - np.eye(len(alive)))) > _REORTH_TOL:
            again = _mgs_pass(alive, K, w, threshold)
            it = iter(again)
            vecs = [next(it) if v is not None else None for v in vecs]
    zero = np.zeros(grid.size)
    basis = [GridFunction1D(grid, zero if v is None else v) for v in vecs]
    degenerate = next((j + 1 for j, v in enumerate(vecs) if v is None), None)
    return basis, degenerate


def fit_coefficients(moments: MomentEstimates, p_max: int,
                     threshold: float = DEFAULT_THRESHOLD) -> PleassModel:
    """Basis ``w_1..w_pmax`` and coefficients ``c_j = int w_j vC``.

    The Krylov functions are rescaled to unit covariance norm before the
    Gram-Schmidt sweep (their span is unchanged), so ``threshold`` acts on
    the relative residual. Signs are fixed so every ``c_j >= 0``.
    """
    vA, vC = moments.vA_hat, moments.vC_hat
    seq = krylov_sequence(vC, vA, p_max)
    scaled = []
    for f in seq:
        nrm2 = quadform(f, vA, f)
        scaled.append(GridFunction1D(f.grid, f.values / np.sqrt(nrm2)) if nrm2 > 0 else f)
    basis, degenerate = orthonormalize(scaled, vA, threshold)
    c = np.array([trapz(GridFunction1D(vC.grid, b.values * vC.values)) for b in basis])
    flipped = []
    for j, b in enumerate(basis):
        if c[j] < 0:
            c[j] = -c[j]
            b = GridFunction1D(b.grid, -b.values)
        flipped.append(b)
    return PleassModel(moments, flipped, c, p_max, None, degenerate)
