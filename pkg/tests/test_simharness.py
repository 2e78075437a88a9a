import math

import numpy as np
import pytest

from pleass.datamodel import EvalGrid, GridFunction1D
from pleass.predictor import PredictionWithCI
from pleass.simharness import (DEFAULT_EIGENVALUES, SimConfig, evaluate_metrics, legendre_basis,
                               run_experiment, simulate_dataset, split_dataset)
from pleass.tuning import PleassConfig


class TestLegendre:
    def test_p1_endpoint(self):
        P1 = legendre_basis(1, EvalGrid(2001))[0]
        assert P1.values[-1] == pytest.approx(math.sqrt(3), abs=1e-6)
        assert P1.values[0] == pytest.approx(-math.sqrt(3), abs=1e-6)

    def test_orthogonal_to_constant(self):
        g = EvalGrid(101)
        P2 = legendre_basis(2, g)[1]
        assert abs(g.weights @ P2.values) < 1e-6

    def test_gram_identity(self):
        for G in (51, 101):
            g = EvalGrid(G)
            P = np.column_stack([p.values for p in legendre_basis(9, g)])
            assert np.allclose(P.T @ (g.weights[:, None] * P), np.eye(9), atol=1e-5)

    def test_close_to_analytic(self):
        from oracles import shifted_legendre

        g = EvalGrid(2001)
        P = legendre_basis(6, g)
        for k, p in enumerate(P, start=1):
            assert np.allclose(p.values, shifted_legendre(k, g.points), atol=1e-3)

    def test_order_range(self):
        for bad in (0, 13):
            with pytest.raises(ValueError):
                legendre_basis(bad, EvalGrid(11))


class TestConfig:
    def test_constants(self):
        cfg = SimConfig()
        assert cfg.sigma_e == pytest.approx(math.sqrt(299.7) / 3, abs=1e-12)
        assert cfg.sigma_e == pytest.approx(5.770, abs=1e-3)
        assert cfg.sd_eta == pytest.approx(math.sqrt(270), rel=1e-12)
        assert SimConfig(beta_scenario=2).sd_eta == pytest.approx(math.sqrt(27), rel=1e-12)

    @pytest.mark.parametrize("kw", [dict(n=9), dict(snr=0), dict(eigenvalues=(1, 2)),
                                    dict(beta_scenario=4), dict(test_fraction=1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SimConfig(**kw)


class TestSimulate:
    def test_noiseless_limit(self):
        cfg = SimConfig(n=30, snr=math.inf)
        d, truth = simulate_dataset(cfg, np.random.default_rng(1))
        g = truth.beta.grid
        basis = np.column_stack([p.values for p in legendre_basis(9, g)])
        for i, s in enumerate(d.subjects):
            x = np.interp(s.trajectory.times, g.points, basis @ truth.scores[i])
            assert np.array_equal(s.trajectory.values, x)
            assert s.response == truth.eta[s.subject_id]
        assert 3 <= min(d.counts) and max(d.counts) <= 6

    def test_dense_autocov(self):
        g = EvalGrid(101)
        P = np.column_stack([p.values for p in legendre_basis(9, g)])
        lam = np.asarray(DEFAULT_EIGENVALUES)
        z = np.random.default_rng(3).standard_normal((2000, 9)) * np.sqrt(lam)
        X = z @ P.T
        S = X.T @ X / 2000
        V = (P * lam) @ P.T
        W = np.outer(g.weights, g.weights)
        assert np.sqrt(np.sum(W * (S - V) ** 2) / np.sum(W * V**2)) < 0.1

    def test_split(self):
        d, _ = simulate_dataset(SimConfig(n=50), np.random.default_rng(2))
        train, test = split_dataset(d, 0.2, np.random.default_rng(0))
        assert test.n == 10 and train.n == 40
        assert set(train.ids).isdisjoint(test.ids)
        assert sorted(train.ids + test.ids) == sorted(d.ids)


def _preds(etas, hw):
    return [PredictionWithCI(e, 1, e - hw, e + hw, hw, False, f"s{i}") for i, e in enumerate(etas)]


class TestMetrics:
    g = EvalGrid(101)
    beta = GridFunction1D(g, np.cos(3 * g.points))

    def test_exact_and_zero(self):
        eta = {"s0": 1.0, "s1": 2.0}
        y = {"s0": 1.5, "s1": 1.0}
        m = evaluate_metrics(self.beta, self.beta, _preds([1.0, 2.0], 0.1), eta, y, 0.0)
        assert m["reisee"] == 0.0 and m["cp"] == 1.0
        z = evaluate_metrics(self.beta, GridFunction1D(self.g, np.zeros(101)), _preds([0, 0], 0.1),
                             eta, y, 0.0)
        assert z["reisee"] == 1.0 and z["cp"] == 0.0

    def test_infinite_ci(self):
        eta = {f"s{i}": float(i) for i in range(5)}
        m = evaluate_metrics(self.beta, self.beta, _preds([100.0] * 5, math.inf), eta, eta, 0.0)
        assert m["cp"] == 1.0

    def test_remspe(self):
        eta = {"s0": 0.0, "s1": 0.0}
        y = {"s0": 1.0, "s1": 3.0}
        m = evaluate_metrics(self.beta, self.beta, _preds([1.0, 1.0], 0.1), eta, y, 0.0)
        assert m["remspe"] == pytest.approx(4 / 10)

    def test_order_invariance(self, rng):
        eta = {f"s{i}": float(rng.normal()) for i in range(10)}
        y = {k: v + rng.normal() for k, v in eta.items()}
        preds = _preds(rng.normal(size=10), 1.0)
        a = evaluate_metrics(self.beta, self.beta, preds, eta, y, 0.1)
        b = evaluate_metrics(self.beta, self.beta, preds[::-1], eta, y, 0.1)
        assert a["cp"] == b["cp"] and a["remspe"] == pytest.approx(b["remspe"], rel=1e-14)

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate_metrics(self.beta, self.beta, [], {}, {}, 0.0)


class TestExperiment:
    cfg = SimConfig(n=40, replicates=2, seed=5, fit=PleassConfig(grid_size=21))

    def test_deterministic(self):
        a = run_experiment(self.cfg, threads=1)
        b = run_experiment(self.cfg, threads=1)
        assert a.to_csv() == b.to_csv()
        assert a.methods == ["pleass", "fpc"]

    def test_threads_match(self):
        assert run_experiment(self.cfg, threads=1).to_csv() == run_experiment(self.cfg, threads=2).to_csv()

    def test_report_shape(self):
        r = run_experiment(self.cfg, ("pleass",), threads=1)
        assert r.to_csv().splitlines()[0] == "replicate,method,metric,value"
        assert len(r.reisee("pleass")) == 2
        assert all(0 <= c <= 1 for c in r.cp("pleass"))
        assert r.summary_csv().splitlines()[0] == "method,metric,count,q1,median,q3"

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            run_experiment(self.cfg, ("pca",))
