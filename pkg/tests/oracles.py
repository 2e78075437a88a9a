"""Independent reference computations used by the tests."""

import numpy as np
from numpy.polynomial import legendre


def wls_intercept_dense(u, T, w):
    """Intercept from the M x M projector form with numpy's pinv.

    When the intercept is not identified (the constant lies in the span of
    the design columns on the support of ``w``) the weighted mean is
    returned, the convention of the library.
    """
    u = np.asarray(u, float)
    w = np.asarray(w, float)
    T = np.asarray(T, float).reshape(len(u), -1)
    sup = w > 0
    one = np.ones(len(u))
    Ts = T[sup]
    if np.linalg.matrix_rank(np.column_stack([one[sup], Ts])) == np.linalg.matrix_rank(Ts):
        return float(w @ u / w.sum())
    W = np.diag(w)
    G = T.T @ W @ T
    P = W - W @ T @ np.linalg.pinv(G, rcond=1e-10, hermitian=True) @ T.T @ W
    return float(one @ P @ u / (one @ P @ one))


def wls_intercept_lstsq(u, T, w):
    """Intercept of the weighted least-squares fit via lstsq (identified case)."""
    u = np.asarray(u, float)
    T = np.asarray(T, float).reshape(len(u), -1)
    sw = np.sqrt(np.asarray(w, float))
    X = np.column_stack([np.ones(len(u)), T])
    coef, *_ = np.linalg.lstsq(sw[:, None] * X, sw * u, rcond=None)
    return float(coef[0])


def shifted_legendre(k, t):
    """Continuous normalized shifted Legendre polynomial of order ``k``."""
    c = np.zeros(k + 1)
    c[k] = 1.0
    return np.sqrt(2 * k + 1) * legendre.legval(2 * np.asarray(t) - 1, c)


def lls_smoother_matrix(x, h, kernel):
    """Dense 1-D local linear smoother matrix at the design points."""
    x = np.asarray(x, float)
    S = np.zeros((x.size, x.size))
    for k, q in enumerate(x):
        T = q - x
        w = kernel(T / h)
        X = np.column_stack([np.ones_like(T), T])
        A = X.T @ (w[:, None] * X)
        S[k] = np.linalg.solve(A, X.T * w)[0]
    return S


def true_moments(grid, lam, Phi, b, sigma2=0.0, mu=None, y_bar=0.0):
    """Population moments of ``X = mu + sum z_j Phi_j``, ``Y = y_bar + sum b_j z_j``
    with ``var z_j = lam_j``, packaged as :class:`MomentEstimates`."""
    from pleass.datamodel import GridFunction1D, GridFunction2D
    from pleass.smoother import Bandwidths, MomentEstimates

    lam = np.asarray(lam, float)
    Phi = np.asarray(Phi, float).reshape(grid.size, -1)
    mu = np.zeros(grid.size) if mu is None else np.asarray(mu, float)
    vA = GridFunction2D(grid, (Phi * lam) @ Phi.T, symmetric=True)
    vC = GridFunction1D(grid, Phi @ (lam * np.asarray(b, float)))
    return MomentEstimates(GridFunction1D(grid, mu), vA, vC, sigma2, y_bar,
                           Bandwidths(0.1, 0.1, 0.1, 0.1))


def oracle_coverage(draws, seed, alpha=0.05):
    """Coverage of eta by the Wald interval built from true moments
    (scenario-1 truth, four fixed times, Gaussian scores and noise)."""
    from pleass.datamodel import EvalGrid, SparseTrajectory
    from pleass.fpls import fit_coefficients
    from pleass.predictor import wald_ci
    from pleass.simharness import DEFAULT_EIGENVALUES, legendre_basis

    G = EvalGrid(51)
    P9 = np.column_stack([p.values for p in legendre_basis(9, G)])
    LAM = np.asarray(DEFAULT_EIGENVALUES, float)
    B1 = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0.0])
    t = np.array([0.1, 0.4, 0.6, 0.9])
    sigma2 = 4.0
    m = fit_coefficients(true_moments(G, LAM, P9, B1, sigma2, np.zeros(G.size), 0.0), 3)
    Pt = np.column_stack([np.interp(t, G.points, P9[:, j]) for j in range(9)])
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(draws):
        xi = rng.normal(size=9) * np.sqrt(LAM)
        x = Pt @ xi + rng.normal(size=4) * np.sqrt(sigma2)
        ci = wald_ci(m, SparseTrajectory("new", t, x), 3, alpha)
        hits += ci.ci_lower <= B1 @ xi <= ci.ci_upper
    return hits / draws
