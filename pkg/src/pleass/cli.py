"""Command-line front end: ``pleass {simulate,fit,predict,evaluate}``."""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from pleass.datamodel import DataError, EvalGrid, GridFunction1D, load_dataset, load_trajectories, save_dataset, save_trajectories
from pleass.numerics import KernelSpec, NumericalError

__all__ = ["main", "run_cli", "build_parser"]

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

FORMATS = """\
file formats
  observations CSV   subject_id,time,value      (times in [0, 1])
                     s1,0.12,1.7
                     s1,0.58,-0.3
  responses CSV      subject_id,y
                     s1,2.41
  dataset JSON       {"subjects": [{"id": "s1", "times": [0.12, 0.58],
                                    "values": [1.7, -0.3], "y": 2.41}]}
  model JSON         written by `fit`, read by `predict` and `evaluate`
  prediction CSV     subject_id,eta_hat,ci_lower,ci_upper,p_used,variance_clamped[,method]
  CV curve CSV       p,cv
  metrics CSV        replicate,method,metric,value
  summary CSV        method,metric,count,q1,median,q3
  truth JSON         {"grid_size": 101, "beta": [...], "eta": {"s1": 0.3}, "y": {"s1": 0.5}}

config file (--config): key = value lines using long option names, e.g.
  grid_size = 51
  fve_threshold = 0.9
Flags given on the command line override the file.

exit codes: 0 ok, 1 usage error, 2 data error, 3 numerical failure
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bool(text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("numerics")
    g.add_argument("--config", help="key = value file merged under the flags")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--grid-size", type=int, default=51, help="evaluation grid size (default 51)")
    g.add_argument("--fve-threshold", type=float, default=0.95,
                   help="variance fraction capping the component count (default 0.95)")
    g.add_argument("--threshold", type=float, default=1e-10,
                   help="Gram-Schmidt degeneracy threshold (default 1e-10)")
    g.add_argument("--psd-tol", type=float, default=1e-8,
                   help="relative eigenvalue cutoff of the PSD projection (default 1e-8)")
    g.add_argument("--p-max", type=int, default=None, help="fixed upper bound on components")
    g.add_argument("--alpha", type=float, default=0.05, help="CI level is 1 - alpha (default 0.05)")
    g.add_argument("--kernel", choices=("epanechnikov", "symmetric-beta"), default="epanechnikov")
    g.add_argument("--kernel-gamma", type=int, default=1, help="exponent of the symmetric-beta kernel")
    for name in ("mu", "A", "C", "sigma"):
        g.add_argument(f"--h-{name.lower()}", dest=f"h_{name}", type=float, default=None,
                       help=f"fixed bandwidth h_{name} (default: GCV)")
    g.add_argument("--bandwidth-multipliers", type=_floats, default=(0.5, 0.75, 1.0, 1.5, 2.0, 3.0),
                   help="GCV candidates as multiples of the pilot bandwidth")
    g.add_argument("--legacy-vc-centering", type=_bool, default=False, nargs="?", const=True,
                   help="also subtract Ybar*mu from the cross-covariance")
    g.add_argument("--threads", type=int, default=None,
                   help="worker processes for the harness (default: all cores)")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="pleass", description="Functional PLS for sparse, noisy curves.",
                     epilog=FORMATS, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", metavar="{simulate,fit,predict,evaluate}",
                                parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", parents=[common], epilog=FORMATS, formatter_class=fmt,
                       help="run the Monte Carlo harness or write one simulated dataset")
    s.add_argument("--scenario", type=int, choices=(1, 2, 3), default=1,
                   help="slope P1+P2+P3, P4+P5+P6 or P7+P8+P9")
    s.add_argument("--snr", type=float, default=3.0)
    s.add_argument("--n", type=int, default=300)
    s.add_argument("--replicates", type=int, default=20)
    s.add_argument("--methods", default="pleass,fpc", help="comma-separated subset of pleass,fpc")
    s.add_argument("--L-range", dest="L_range", type=_ints, default=(3, 4, 5, 6))
    s.add_argument("--eigenvalues", type=_floats, default=None)
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--out", help="tidy metrics CSV")
    s.add_argument("--summary", help="quartile summary CSV")
    s.add_argument("--dataset-dir",
                   help="write one simulated train/test split and its truth file here")

    f = sub.add_parser("fit", parents=[common], epilog=FORMATS, formatter_class=fmt,
                       help="fit a model")
    f.add_argument("--obs", help="observations CSV or dataset JSON")
    f.add_argument("--resp", help="responses CSV (needed with CSV observations)")
    f.add_argument("--out", required=True, help="model JSON")
    f.add_argument("--method", choices=("pleass", "fpc"), default="pleass")
    f.add_argument("--cv-out", help="CV curve CSV")
    f.add_argument("--report-insample", action="store_true",
                   help="print in-sample predictions (subject_id,eta_hat) after the summary")

    p = sub.add_parser("predict", parents=[common], epilog=FORMATS, formatter_class=fmt,
                       help="predict new subjects with Wald intervals")
    p.add_argument("--model", required=True)
    p.add_argument("--obs", required=True, help="observations CSV or JSON")
    p.add_argument("--out", required=True, help="prediction CSV")
    p.add_argument("--p", type=int, default=None, help="components to use (default: CV choice)")

    e = sub.add_parser("evaluate", parents=[common], epilog=FORMATS, formatter_class=fmt,
                       help="score predictions against a truth file")
    e.add_argument("--model", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out", required=True, help="metrics CSV (metric,value)")
    return parser


def _read_config(path: str) -> dict:
    text = Path(path).read_text()
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string("[pleass]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"config file {path}: {exc}") from None
    out = {}
    for section in cp.sections():
        for k, v in cp.items(section):
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _parse(argv: list) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            conf = _read_config(args.config)
        except OSError as exc:
            raise DataError(f"cannot read config file: {exc}") from None
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        lower = {d.lower(): d for d in known}
        defaults = {}
        for k, v in conf.items():
            dest = lower.get(k.lower())
            if dest is None or dest in ("config", "help"):
                raise UsageError(f"config file {args.config}: unknown key {k!r}")
            defaults[dest] = v
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _fit_config(args):
    from pleass.tuning import PleassConfig

    kernel = KernelSpec(args.kernel, args.kernel_gamma)
    return PleassConfig(
        grid_size=args.grid_size, kernel=kernel, fve_threshold=args.fve_threshold,
        threshold=args.threshold, psd_tol=args.psd_tol, h_mu=args.h_mu, h_A=args.h_A,
        h_C=args.h_C, h_sigma=args.h_sigma, bandwidth_multipliers=args.bandwidth_multipliers,
        legacy_vc_centering=bool(args.legacy_vc_centering), p_max=args.p_max,
    )


def _validate(args):
    if not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    if args.threads is not None and args.threads < 1:
        raise UsageError("--threads must be >= 1")
    if args.p_max is not None and args.p_max < 1:
        raise UsageError("--p-max must be >= 1")
    for h in (args.h_mu, args.h_A, args.h_C, args.h_sigma):
        if h is not None and not h > 0:
            raise UsageError("bandwidths must be positive")
    if not args.bandwidth_multipliers or min(args.bandwidth_multipliers) <= 0:
        raise UsageError("--bandwidth-multipliers must be positive")
    try:
        return _fit_config(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _load_model(path):
    from pleass.fpc_baseline import FpcModel
    from pleass.fpls import PleassModel

    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from None
    try:
        if doc.get("method") == "fpc":
            return "fpc", FpcModel.from_dict(doc)
        return "pleass", PleassModel.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed model file {path}: {exc}") from None


def _predict_rows(method, model, trajs, alpha, p=None):
    from pleass.fpc_baseline import fpc_predict_ci
    from pleass.predictor import wald_ci

    if method == "fpc":
        return [fpc_predict_ci(model, t, alpha, p) for t in trajs]
    return [wald_ci(model, t, p, alpha) for t in trajs]


# ------------------------------------------------------------------ commands


def cmd_simulate(args, cfg) -> int:
    from pleass.simharness import DEFAULT_EIGENVALUES, SimConfig, run_experiment, simulate_dataset, split_dataset

    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if not methods or any(m not in ("pleass", "fpc") for m in methods):
        raise UsageError("--methods must be a comma-separated subset of pleass,fpc")
    if not (args.out or args.summary or args.dataset_dir):
        raise UsageError("simulate needs --out, --summary or --dataset-dir")
    try:
        sim = SimConfig(
            n=args.n, eigenvalues=args.eigenvalues or DEFAULT_EIGENVALUES, beta_scenario=args.scenario,
            snr=args.snr, L_range=args.L_range, replicates=args.replicates,
            test_fraction=args.test_fraction, seed=args.seed, fit=cfg, alpha=args.alpha,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.dataset_dir:
        d = Path(args.dataset_dir)
        d.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(np.random.SeedSequence(args.seed))
        data, truth = simulate_dataset(sim, rng)
        train, test = split_dataset(data, sim.test_fraction, rng)
        save_dataset(train, d / "train_obs.csv", responses=d / "train_resp.csv")
        save_trajectories(test.trajectories(), d / "test_obs.csv")
        _write_json(d / "truth.json", {
            "grid_size": truth.beta.grid.size,
            "beta": [float(v) for v in truth.beta.values],
            "eta": {s.subject_id: float(truth.eta[s.subject_id]) for s in test.subjects},
            "y": {s.subject_id: float(s.response) for s in test.subjects},
        })
        print(f"dataset: {train.n} training and {test.n} test subjects in {d}")
    if args.out or args.summary:
        report = run_experiment(sim, methods, threads=args.threads)
        if args.out:
            Path(args.out).write_text(report.to_csv())
        if args.summary:
            Path(args.summary).write_text(report.summary_csv())
        for m in report.methods:
            print(f"{m}: median reisee {report.median(m, 'reisee'):.4g}, "
                  f"median cp {report.median(m, 'cp'):.4g}, median remspe {report.median(m, 'remspe'):.4g}")
        if report.failures:
            print(f"failed replicates: {', '.join(str(r) for r, _ in report.failures)}")
    return EXIT_OK


def cmd_fit(args, cfg) -> int:
    from pleass.fpc_baseline import fpc_fit
    from pleass.tuning import fit_pleass

    if not args.obs:
        raise UsageError("fit needs --obs")
    data = load_dataset(args.obs, responses=args.resp)
    if args.method == "fpc":
        model = fpc_fit(data, cfg)
    else:
        model = fit_pleass(data, cfg)
    _write_json(args.out, model.to_dict())
    if args.cv_out:
        model.cv_curve.write_csv(args.cv_out)
    bw = model.moments.bandwidths
    print(f"method: {args.method}")
    print(f"subjects: {data.n}")
    print(f"p_opt: {model.p_opt}")
    print(f"sigma_e2_hat: {model.moments.sigma_e2_hat!r}")
    print("bandwidths: " + ", ".join(f"{k}={v!r}" for k, v in bw.as_dict().items()))
    print(f"cv_curve: {args.cv_out or '-'}")
    print("cv: " + ", ".join(f"{p}:{v:.6g}" for p, v in model.cv_curve.items()))
    print(f"model: {args.out}")
    if args.report_insample:
        rows = _predict_rows(args.method, model, data.trajectories(), args.alpha)
        print("subject_id,eta_hat")
        for r in rows:
            print(f"{r.subject_id},{r.eta_hat!r}")
    return EXIT_OK


def cmd_predict(args, cfg) -> int:
    method, model = _load_model(args.model)
    trajs = load_trajectories(args.obs)
    rows = _predict_rows(method, model, trajs, args.alpha, args.p)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["subject_id", "eta_hat", "ci_lower", "ci_upper", "p_used", "variance_clamped"]
        w.writerow(head + (["method"] if method == "fpc" else []))
        for r in rows:
            row = [r.subject_id, repr(r.eta_hat), repr(float(r.ci_lower)), repr(float(r.ci_upper)),
                   r.p_used, str(bool(r.variance_clamped)).lower()]
            w.writerow(row + (["fpc"] if method == "fpc" else []))
    print(f"predicted {len(rows)} subject(s) with {method}; written to {args.out}")
    return EXIT_OK


def _read_predictions(path):
    from pleass.datamodel import _float, _read_csv
    from pleass.predictor import PredictionWithCI

    out = []
    for rowno, (sid, eta, lo, hi) in _read_csv(Path(path), ("subject_id", "eta_hat", "ci_lower", "ci_upper")):
        e, a, b = (_float(x, path, rowno, n) for x, n in ((eta, "eta_hat"), (lo, "ci_lower"), (hi, "ci_upper")))
        out.append(PredictionWithCI(e, 0, a, b, (b - a) / 2, False, sid))
    if not out:
        raise DataError(f"{path}: no predictions")
    return out


def cmd_evaluate(args, cfg) -> int:
    from pleass.simharness import evaluate_metrics

    _, model = _load_model(args.model)
    try:
        truth = json.loads(Path(args.truth).read_text())
        beta = GridFunction1D(EvalGrid(int(truth["grid_size"])), truth["beta"])
        eta, y = truth["eta"], truth["y"]
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read truth file {args.truth}: {exc}") from None
    preds = _read_predictions(args.pred)
    missing = [p.subject_id for p in preds if p.subject_id not in eta or p.subject_id not in y]
    if missing:
        raise DataError(f"subjects missing from the truth file: {', '.join(missing[:5])}")
    scores = evaluate_metrics(beta, model.beta(), preds, eta, y, model.moments.y_bar)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k in ("reisee", "cp", "remspe"):
            w.writerow([k, repr(float(scores[k]))])
    for k in ("reisee", "cp", "remspe"):
        print(f"{k}: {scores[k]:.6g}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict, "evaluate": cmd_evaluate}


def run_cli(argv: list | None = None) -> int:
    """Run one command; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
        cfg = _validate(args)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                            format="%(levelname)s %(name)s: %(message)s")
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore")
            return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (DataError, OSError, ValueError) as exc:
        print(f"pleass: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"pleass: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(run_cli())
