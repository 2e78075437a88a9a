import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from pleass.cli import run_cli

SMALL = ["--grid-size", "21", "--seed", "7"]


def sim_dir(tmp_path, name="data"):
    d = tmp_path / name
    assert run_cli(["simulate", "--n", "40", "--dataset-dir", str(d), *SMALL]) == 0
    return d


def fit(tmp_path, d, method="pleass", extra=()):
    model = tmp_path / f"{method}.json"
    code = run_cli(["fit", "--obs", str(d / "train_obs.csv"), "--resp", str(d / "train_resp.csv"),
                    "--out", str(model), "--method", method, *SMALL, *extra])
    assert code == 0
    return model


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestHappyPaths:
    def test_simulate_metrics(self, tmp_path, capsys):
        out, summ = tmp_path / "m.csv", tmp_path / "s.csv"
        code = run_cli(["simulate", "--scenario", "1", "--snr", "3", "--n", "40", "--replicates", "2",
                        "--methods", "pleass,fpc", "--out", str(out), "--summary", str(summ),
                        "--threads", "1", *SMALL])
        assert code == 0
        rows = read_csv(out)
        assert {r["method"] for r in rows} == {"pleass", "fpc"}
        assert len(rows) == 2 * 2 * 3
        assert summ.read_text().startswith("method,metric,count,q1,median,q3")
        assert "median reisee" in capsys.readouterr().out

    def test_fit_predict_evaluate(self, tmp_path, capsys):
        d = sim_dir(tmp_path)
        cv = tmp_path / "cv.csv"
        model = fit(tmp_path, d, extra=["--cv-out", str(cv)])
        out = capsys.readouterr().out
        assert "p_opt:" in out and "sigma_e2_hat:" in out
        assert cv.read_text().startswith("p,cv\n")
        doc = json.loads(model.read_text())
        assert "c_hat" in doc and doc["p_opt"] is not None
        pred = tmp_path / "pred.csv"
        assert run_cli(["predict", "--model", str(model), "--obs", str(d / "test_obs.csv"),
                        "--alpha", "0.05", "--out", str(pred)]) == 0
        rows = read_csv(pred)
        assert list(rows[0]) == ["subject_id", "eta_hat", "ci_lower", "ci_upper", "p_used",
                                 "variance_clamped"]
        for r in rows:
            assert float(r["ci_lower"]) <= float(r["eta_hat"]) <= float(r["ci_upper"])
        met = tmp_path / "met.csv"
        assert run_cli(["evaluate", "--model", str(model), "--pred", str(pred),
                        "--truth", str(d / "truth.json"), "--out", str(met)]) == 0
        vals = {r["metric"]: float(r["value"]) for r in read_csv(met)}
        assert set(vals) == {"reisee", "cp", "remspe"}
        assert 0 <= vals["cp"] <= 1

    def test_fpc_method_column(self, tmp_path):
        d = sim_dir(tmp_path)
        model = fit(tmp_path, d, "fpc")
        pred = tmp_path / "pred.csv"
        assert run_cli(["predict", "--model", str(model), "--obs", str(d / "test_obs.csv"),
                        "--out", str(pred)]) == 0
        rows = read_csv(pred)
        assert rows[0]["method"] == "fpc"

    def test_insample_matches_predict(self, tmp_path, capsys):
        d = sim_dir(tmp_path)
        capsys.readouterr()
        model = fit(tmp_path, d, extra=["--report-insample"])
        out = capsys.readouterr().out
        lines = out[out.index("subject_id,eta_hat"):].splitlines()[1:]
        insample = {l.split(",")[0]: float(l.split(",")[1]) for l in lines}
        pred = tmp_path / "pred.csv"
        assert run_cli(["predict", "--model", str(model), "--obs", str(d / "train_obs.csv"),
                        "--out", str(pred)]) == 0
        for r in read_csv(pred):
            assert float(r["eta_hat"]) == pytest.approx(insample[r["subject_id"]], abs=1e-10)

    def test_help_documents_formats(self, capsys):
        assert run_cli(["predict", "--help"]) == 0
        out = capsys.readouterr().out
        assert "subject_id,time,value" in out and "exit codes" in out

    def test_console_script(self):
        r = subprocess.run([sys.executable, "-m", "pleass", "--help"], capture_output=True, text=True)
        assert r.returncode == 0 and "simulate" in r.stdout


class TestDeterminism:
    def test_simulate_bytes(self, tmp_path):
        outs = []
        for k in range(2):
            out = tmp_path / f"m{k}.csv"
            d = tmp_path / f"d{k}"
            assert run_cli(["simulate", "--n", "40", "--replicates", "2", "--out", str(out),
                            "--dataset-dir", str(d), "--threads", str(k + 1), *SMALL]) == 0
            outs.append([out.read_bytes()] + [(d / f).read_bytes() for f in
                                             ("train_obs.csv", "train_resp.csv", "test_obs.csv", "truth.json")])
        assert outs[0] == outs[1]

    def test_fit_predict_bytes(self, tmp_path):
        d = sim_dir(tmp_path)
        a = fit(tmp_path, d).read_bytes()
        b = fit(tmp_path, d).read_bytes()
        assert a == b


class TestConfigAndErrors:
    def test_config_merge(self, tmp_path, capsys):
        d = sim_dir(tmp_path)
        conf = tmp_path / "c.ini"
        conf.write_text("grid_size = 15\nfve_threshold = 0.9\n")
        model = tmp_path / "m.json"
        base = ["fit", "--obs", str(d / "train_obs.csv"), "--resp", str(d / "train_resp.csv"),
                "--out", str(model), "--config", str(conf)]
        assert run_cli(base) == 0
        assert json.loads(model.read_text())["moments"]["mu_hat"]["grid_size"] == 15
        assert run_cli(base + ["--grid-size", "17"]) == 0
        assert json.loads(model.read_text())["moments"]["mu_hat"]["grid_size"] == 17

    def test_unknown_config_key(self, tmp_path):
        conf = tmp_path / "c.ini"
        conf.write_text("bogus = 1\n")
        assert run_cli(["simulate", "--out", str(tmp_path / "x"), "--config", str(conf)]) == 1

    def test_usage_errors(self, tmp_path, capsys):
        assert run_cli(["fit", "--no-such-flag"]) == 1
        assert run_cli([]) == 1
        assert run_cli(["simulate", "--n", "5", "--out", str(tmp_path / "x")]) == 1
        assert run_cli(["simulate", "--methods", "pca", "--out", str(tmp_path / "x")]) == 1
        assert capsys.readouterr().err

    def test_data_error(self, tmp_path):
        bad = tmp_path / "obs.csv"
        bad.write_text("subject_id,time,value\ns1,1.5,2\n")
        assert run_cli(["fit", "--obs", str(bad), "--resp", str(bad), "--out", str(tmp_path / "m")]) == 2
        assert run_cli(["predict", "--model", str(tmp_path / "missing.json"), "--obs", str(bad),
                        "--out", str(tmp_path / "p")]) == 2

    def test_constant_curves_fit(self, tmp_path, capsys):
        obs, resp = tmp_path / "obs.csv", tmp_path / "resp.csv"
        rows = ["subject_id,time,value"]
        for i in range(12):
            rows += [f"s{i},{t},1.0" for t in np.linspace(0, 1, 5)]
        obs.write_text("\n".join(rows) + "\n")
        resp.write_text("subject_id,y\n" + "".join(f"s{i},{i}\n" for i in range(12)))
        assert run_cli(["fit", "--obs", str(obs), "--resp", str(resp), "--out", str(tmp_path / "m")]) == 0
        assert "p_opt: 0" in capsys.readouterr().out

    def test_numerical_error(self, tmp_path, monkeypatch):
        import pleass.tuning
        from pleass.numerics import NumericalError

        def boom(*a, **k):
            raise NumericalError("singular")

        monkeypatch.setattr(pleass.tuning, "fit_pleass", boom)
        d = sim_dir(tmp_path)
        assert run_cli(["fit", "--obs", str(d / "train_obs.csv"), "--resp", str(d / "train_resp.csv"),
                        "--out", str(tmp_path / "m")]) == 3
