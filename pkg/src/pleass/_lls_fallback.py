"""Pure-numpy versions of the local-moment kernels in ``_lls_core``.

Same signatures and outputs; the data need not be sorted here but callers
sort anyway so both backends see identical inputs.
"""

import numpy as np

_CHUNK = 1 << 21


def _kern(z, gamma, const):
    r = np.clip(1.0 - z * z, 0.0, None)
    return const * r**gamma


def moments_1d(query, x, mult, usum, h, gamma, const):
    query = np.asarray(query, dtype=float)
    out = np.zeros((query.size, 6))
    if x.size == 0:
        return out
    step = max(1, _CHUNK // x.size)
    for start in range(0, query.size, step):
        q = query[start:start + step]
        T = q[:, None] - x[None, :]
        W = _kern(T / h, gamma, const)
        WM = W * mult
        WT = W * T
        out[start:start + step, 0] = WM.sum(axis=1)
        out[start:start + step, 1] = (WM * T).sum(axis=1)
        out[start:start + step, 2] = (WM * T * T).sum(axis=1)
        out[start:start + step, 3] = W @ usum
        out[start:start + step, 4] = WT @ usum
        out[start:start + step, 5] = (W > 0) @ mult
    return out


def moments_2d(qs, qt, a, b, mult, usum, h, gamma, const):
    qs = np.asarray(qs, dtype=float)
    qt = np.asarray(qt, dtype=float)
    out = np.zeros((qs.size, 10))
    if a.size == 0:
        return out
    step = max(1, _CHUNK // a.size)
    for start in range(0, qs.size, step):
        sl = slice(start, start + step)
        Ta = qs[sl, None] - a[None, :]
        Tb = qt[sl, None] - b[None, :]
        W = _kern(Ta / h, gamma, const) * _kern(Tb / h, gamma, const)
        WM = W * mult
        out[sl, 0] = WM.sum(axis=1)
        out[sl, 1] = (WM * Ta).sum(axis=1)
        out[sl, 2] = (WM * Tb).sum(axis=1)
        out[sl, 3] = (WM * Ta * Ta).sum(axis=1)
        out[sl, 4] = (WM * Ta * Tb).sum(axis=1)
        out[sl, 5] = (WM * Tb * Tb).sum(axis=1)
        out[sl, 6] = W @ usum
        out[sl, 7] = (W * Ta) @ usum
        out[sl, 8] = (W * Tb) @ usum
        out[sl, 9] = (W > 0) @ mult
    return out
