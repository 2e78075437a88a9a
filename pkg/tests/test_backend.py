import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import dense_dataset
from pleass import backend
from pleass.smoother import Bandwidths, estimate_moments
from pleass.tuning import PleassConfig

compiled = pytest.mark.skipif("compiled" not in backend.available(), reason="extension not built")


def inputs(rng, N=300):
    x = np.sort(rng.uniform(0, 1, N))
    return x, rng.integers(1, 3, N).astype(float), rng.normal(size=N)


@compiled
@pytest.mark.parametrize("gamma", [1, 2, 3])
def test_moments_1d_agree(rng, gamma):
    x, mult, u = inputs(rng)
    q = np.linspace(0, 1, 41)
    const = 1.0 / [4 / 3, 16 / 15, 32 / 35][gamma - 1]
    a = backend.get("compiled").moments_1d(q, x, mult, u, 0.13, gamma, const)
    b = backend.get("python").moments_1d(q, x, mult, u, 0.13, gamma, const)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@compiled
def test_moments_2d_agree(rng):
    a_, mult, u = inputs(rng)
    b_ = rng.uniform(0, 1, a_.size)
    qs, qt = (g.ravel() for g in np.meshgrid(np.linspace(0, 1, 15), np.linspace(0, 1, 15)))
    A = backend.get("compiled").moments_2d(qs, qt, a_, b_, mult, u, 0.2, 1, 0.75)
    B = backend.get("python").moments_2d(qs, qt, a_, b_, mult, u, 0.2, 1, 0.75)
    assert np.allclose(A, B, rtol=1e-12, atol=1e-12)


@compiled
def test_empty_data():
    e = np.zeros(0)
    for name in ("compiled", "python"):
        assert np.array_equal(backend.get(name).moments_1d(np.linspace(0, 1, 3), e, e, e, 0.1, 1, 0.75),
                              np.zeros((3, 6)))


@compiled
def test_full_pipeline_agrees(rng, monkeypatch):
    d = dense_dataset(rng, 30, 6, lambda i, t, r: r.normal() * np.sin(np.pi * t), 0.2,
                      lambda i, x, r: float(x.sum()))
    cfg = PleassConfig(grid_size=21)
    bw = Bandwidths(0.2, 0.25, 0.25, 0.25)
    res = {}
    for name in ("compiled", "python"):
        monkeypatch.setattr(backend, "NAME", name)
        res[name] = estimate_moments(d, cfg.grid, cfg.kernel, bw)
    a, b = res["compiled"], res["python"]
    assert np.allclose(a.vA_hat.values, b.vA_hat.values, atol=1e-10)
    assert np.allclose(a.vC_hat.values, b.vC_hat.values, atol=1e-10)
    assert a.sigma_e2_hat == pytest.approx(b.sigma_e2_hat, abs=1e-10)


def test_env_override():
    env = dict(os.environ, PLEASS_BACKEND="python")
    r = subprocess.run([sys.executable, "-c", "from pleass import backend; print(backend.NAME)"],
                       capture_output=True, text=True, env=env)
    assert r.stdout.strip() == "python"
