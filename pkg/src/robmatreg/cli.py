"""Command-line front end: run experiments, fit models, predict.

Subcommands: shape-recovery, tau-sweep, finance, fit, predict. A JSON
config file (``--config``) supplies defaults and explicit flags override
it. Reports are deterministic JSON (stable key order, shortest-round-trip
floats): identical config plus seed reproduces identical bytes, serial or
parallel. Exit codes: 0 success, 1 validation error, 2 solver
non-convergence.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import data_bench, grmr, qp_smo, rmr
from .exceptions import (ConfigError, ContractViolation, ConvergenceError,
                         MetricError, NumericalError)
from .linalg import load_matrix_csv, save_matrix_csv

SOLVERS = ("svr", "rmr", "grmr")
SHAPES = tuple(k.value for k in data_bench.ShapeKind)

_SHARED_DEFAULTS = {
    "seed": 0,
    "out": "runs",
    "jobs": 1,
    "solvers": ["rmr"],
    # model hyper-parameters
    "box_c": 1e3,
    "epsilon": 1e-2,
    "tau": 1.0,
    "rho": 1.0,
    "eta": 0.999,
    "max_iters": 500,
    "primal_tol": 1e-5,
    # decomposition hyper-parameters
    "gamma": 1.0,
    "l1_lambda": 1.0,
    "mu": 1.0,
    "inner_max_iters": 300,
    "outer_max_iters": 20,
    "outer_tol": 1e-4,
    # synthetic dataset
    "shape": "square",
    "size": 64,
    "n_samples": 1000,
    "b_true": 0.0,
    "noise_scale": 0.1,
    "corrupt_fraction": 0.0,
    "corrupt_block": 8,
    "rounds": 10,
    # finance dataset
    "csv": None,
    "lag_window": 4,
    "target": None,
    "train_fraction": 0.3,
    # sweep
    "tau_grid": [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
    # fit/predict artifacts
    "model_out": "model.txt",
    "model": None,
    "inputs": None,
    "predictions_out": "predictions.csv",
    "dump_data": False,
    "trace": None,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.cmd is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        cfg = _resolve_config(args)
        return args.entry(cfg)
    except (ConfigError, ContractViolation, MetricError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, NumericalError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="robmatreg",
        description="Matrix regression experiments: tube-loss fits with "
                    "nuclear-norm regularization and outlier-aware variants.")
    parser.set_defaults(cmd=None)
    sub = parser.add_subparsers(dest="cmd")

    def add_common(sp):
        sp.add_argument("--config", help="JSON file with config defaults")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--jobs", type=int, help="parallel rounds")
        sp.add_argument("--solvers", help="comma list from svr,rmr,grmr")
        for name in ("box-c", "epsilon", "tau", "rho", "eta", "primal-tol",
                     "gamma", "l1-lambda", "mu", "outer-tol"):
            sp.add_argument(f"--{name}", type=float)
        for name in ("max-iters", "inner-max-iters", "outer-max-iters"):
            sp.add_argument(f"--{name}", type=int)

    def add_synth(sp):
        sp.add_argument("--shape", choices=SHAPES)
        sp.add_argument("--size", type=int)
        sp.add_argument("--n-samples", type=int)
        sp.add_argument("--b-true", type=float)
        sp.add_argument("--noise-scale", type=float)
        sp.add_argument("--corrupt-fraction", type=float)
        sp.add_argument("--corrupt-block", type=int)
        sp.add_argument("--rounds", type=int)

    def add_csv(sp):
        sp.add_argument("--csv", help="daily returns CSV")
        sp.add_argument("--lag-window", type=int)
        sp.add_argument("--target", help="target index column")
        sp.add_argument("--train-fraction", type=float)

    sp = sub.add_parser("shape-recovery", help="signal recovery experiment")
    add_common(sp)
    add_synth(sp)
    sp.set_defaults(entry=cmd_shape_recovery)

    sp = sub.add_parser("tau-sweep", help="nuclear weight solution path")
    add_common(sp)
    add_synth(sp)
    sp.add_argument("--tau-grid", help="comma list of tau values")
    sp.set_defaults(entry=cmd_tau_sweep)

    sp = sub.add_parser("finance", help="return-prediction experiment")
    add_common(sp)
    add_csv(sp)
    sp.set_defaults(entry=cmd_finance)

    sp = sub.add_parser("fit", help="fit a model and write the artifact")
    add_common(sp)
    add_synth(sp)
    add_csv(sp)
    sp.add_argument("--model-out")
    sp.add_argument("--dump-data", action="store_true", default=None,
                    help="also dump vectorized predictors and labels")
    sp.add_argument("--trace", help="iteration trace CSV path")
    sp.set_defaults(entry=cmd_fit)

    sp = sub.add_parser("predict", help="predict from a model artifact")
    add_common(sp)
    sp.add_argument("--model", help="model artifact path")
    sp.add_argument("--inputs", help="CSV of row-major vectorized predictors")
    sp.add_argument("--predictions-out")
    sp.set_defaults(entry=cmd_predict)
    return parser


def _resolve_config(args):
    cfg = dict(_SHARED_DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ConfigError("config", "config file must hold a JSON object")
        for key, value in loaded.items():
            norm = key.replace("-", "_")
            if norm not in cfg:
                raise ConfigError(norm, "unknown config field")
            cfg[norm] = value
    for key, value in vars(args).items():
        if key in ("cmd", "entry", "config") or value is None:
            continue
        cfg[key] = value
    if isinstance(cfg["solvers"], str):
        cfg["solvers"] = [s.strip() for s in cfg["solvers"].split(",") if s.strip()]
    if isinstance(cfg["tau_grid"], str):
        cfg["tau_grid"] = [float(v) for v in cfg["tau_grid"].split(",") if v.strip()]
    _validate_config(cfg)
    return cfg


def _require(cond, field, legal):
    if not cond:
        raise ConfigError(field, f"must be {legal}")


def _validate_config(cfg):
    _require(cfg["seed"] >= 0, "seed", "a non-negative integer")
    _require(cfg["jobs"] >= 1, "jobs", ">= 1")
    _require(len(cfg["solvers"]) > 0, "solvers", "a non-empty list")
    for s in cfg["solvers"]:
        _require(s in SOLVERS, "solvers", f"a subset of {SOLVERS}, got '{s}'")
    _require(cfg["box_c"] > 0, "box_c", "> 0")
    _require(cfg["epsilon"] >= 0, "epsilon", ">= 0")
    _require(cfg["tau"] >= 0, "tau", ">= 0")
    _require(cfg["rho"] > 0, "rho", "> 0")
    _require(0 < cfg["eta"] < 1, "eta", "in the open interval (0, 1)")
    _require(cfg["max_iters"] >= 1, "max_iters", ">= 1")
    _require(cfg["primal_tol"] > 0, "primal_tol", "> 0")
    _require(cfg["gamma"] >= 0, "gamma", ">= 0")
    _require(cfg["l1_lambda"] >= 0, "l1_lambda", ">= 0")
    _require(cfg["mu"] > 0, "mu", "> 0")
    _require(cfg["inner_max_iters"] >= 1, "inner_max_iters", ">= 1")
    _require(cfg["outer_max_iters"] >= 0, "outer_max_iters", ">= 0")
    _require(cfg["outer_tol"] > 0, "outer_tol", "> 0")
    _require(cfg["shape"] in SHAPES, "shape", f"one of {SHAPES}")
    _require(cfg["size"] >= 8, "size", ">= 8")
    _require(cfg["n_samples"] >= 2, "n_samples", ">= 2")
    _require(cfg["noise_scale"] >= 0, "noise_scale", ">= 0")
    _require(0 <= cfg["corrupt_fraction"] <= 1, "corrupt_fraction", "in [0, 1]")
    _require(cfg["corrupt_block"] >= 1, "corrupt_block", ">= 1")
    _require(cfg["rounds"] >= 1, "rounds", ">= 1")
    _require(cfg["lag_window"] >= 1, "lag_window", ">= 1")
    _require(0 < cfg["train_fraction"] < 1, "train_fraction",
             "in the open interval (0, 1)")
    _require(len(cfg["tau_grid"]) >= 1, "tau_grid", "a non-empty list")
    for t in cfg["tau_grid"]:
        _require(t >= 0, "tau_grid", "a list of values >= 0")


def _rmr_params(cfg, tau=None):
    return rmr.RmrHyperParams(
        box_c=cfg["box_c"], epsilon=cfg["epsilon"],
        tau=cfg["tau"] if tau is None else tau, rho=cfg["rho"],
        eta=cfg["eta"], max_iters=cfg["max_iters"],
        primal_tol=cfg["primal_tol"])


def _grmr_params(cfg, tau=None):
    return grmr.GrmrHyperParams(
        rmr=_rmr_params(cfg, tau=tau), gamma=cfg["gamma"],
        l1_lambda=cfg["l1_lambda"], mu=cfg["mu"],
        inner_max_iters=cfg["inner_max_iters"],
        outer_max_iters=cfg["outer_max_iters"], outer_tol=cfg["outer_tol"],
        eta=cfg["eta"])


def _fit_solver(solver, train, cfg, tau=None):
    """Fit one solver; returns (model, converged)."""
    if solver == "svr":
        model = qp_smo.solve_linear_svr(train, box_c=cfg["box_c"],
                                        epsilon=cfg["epsilon"])
        return model, True
    if solver == "rmr":
        res = rmr.fit(train, _rmr_params(cfg, tau=tau))
        return res.model, res.converged
    res = grmr.fit_grmr(train, params=_grmr_params(cfg, tau=tau))
    return res.model, res.converged


def _echo_config(cfg, fields):
    skip = {"out", "jobs"}
    return {k: cfg[k] for k in sorted(fields) if k not in skip}


_SYNTH_FIELDS = ("seed", "solvers", "box_c", "epsilon", "tau", "rho", "eta",
                 "max_iters", "primal_tol", "gamma", "l1_lambda", "mu",
                 "inner_max_iters", "outer_max_iters", "outer_tol", "shape",
                 "size", "n_samples", "b_true", "noise_scale",
                 "corrupt_fraction", "corrupt_block", "rounds")


def _shape_round(cfg, round_idx, tau=None):
    """One experiment round: generate, split, fit each solver, score."""
    w_true = data_bench.generate_shape(cfg["shape"], cfg["size"])
    spec = data_bench.NoiseSpec(
        label_noise_scale=cfg["noise_scale"],
        corrupt_fraction=cfg["corrupt_fraction"],
        corrupt_block=cfg["corrupt_block"],
        seed=data_bench.round_seed(cfg["seed"], round_idx))
    samples = data_bench.generate_synthetic(w_true, cfg["b_true"],
                                            cfg["n_samples"], spec)
    train, test = data_bench.train_test_split_half(samples)
    y_test = np.array([s.y for s in test])
    out = {}
    for solver in cfg["solvers"]:
        entry = {"round": round_idx, "seed": spec.seed}
        try:
            model, converged = _fit_solver(solver, train, cfg, tau=tau)
        except (ConvergenceError, NumericalError) as exc:
            entry.update(failed=True, error=str(exc))
            out[solver] = entry
            continue
        preds = np.array([rmr.predict(model, s.x) for s in test])
        entry.update(
            failed=False, converged=bool(converged),
            rae_w=data_bench.rae(model.w, w_true),
            rae_y=data_bench.rae(preds, y_test))
        out[solver] = entry
        out[solver + "_w"] = model.w
    return out


def _run_rounds(cfg, tau=None):
    rounds = range(cfg["rounds"])
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            results = list(pool.map(_shape_round_star,
                                    [(cfg, r, tau) for r in rounds]))
    else:
        results = [_shape_round(cfg, r, tau=tau) for r in rounds]
    return results


def _shape_round_star(args):
    return _shape_round(*args)


def _aggregate(results, solvers):
    report = {}
    flagged = False
    for solver in solvers:
        rounds = [res[solver] for res in results]
        ok = [r for r in rounds if not r["failed"]]
        entry = {
            "rounds": rounds,
            "failed_rounds": [r["round"] for r in rounds if r["failed"]],
            "all_converged": all(r.get("converged", False) for r in ok) and not any(
                r["failed"] for r in rounds),
        }
        for metric in ("rae_w", "rae_y"):
            mean, std = data_bench.mean_std([r[metric] for r in ok])
            entry[f"{metric}_mean"] = mean
            entry[f"{metric}_std"] = std
        report[solver] = entry
        if not entry["all_converged"]:
            flagged = True
    return report, flagged


def _write_report(cfg, report):
    os.makedirs(cfg["out"], exist_ok=True)
    path = os.path.join(cfg["out"], "report.json")
    with open(path, "w", encoding="ascii") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def cmd_shape_recovery(cfg):
    results = _run_rounds(cfg)
    agg, flagged = _aggregate(results, cfg["solvers"])
    report = {"command": "shape-recovery",
              "config": _echo_config(cfg, _SYNTH_FIELDS),
              "results": agg}
    path = _write_report(cfg, report)
    for solver in cfg["solvers"]:
        for res in results:
            w = res.get(solver + "_w")
            if w is None:
                continue
            stem = os.path.join(cfg["out"], f"w_{solver}_round{res[solver]['round']}")
            save_matrix_csv(w, stem + ".csv")
            data_bench.write_pgm(w, stem + ".pgm")
    print(path)
    return 2 if flagged else 0


def cmd_tau_sweep(cfg):
    sweep = []
    flagged = False
    for tau in cfg["tau_grid"]:
        results = _run_rounds(cfg, tau=tau)
        agg, bad = _aggregate(results, cfg["solvers"])
        flagged = flagged or bad
        sweep.append({"tau": tau,
                      "results": {s: {k: v for k, v in agg[s].items()
                                      if k != "rounds"}
                                  for s in cfg["solvers"]}})
    best = {}
    for solver in cfg["solvers"]:
        scored = [(pt["results"][solver]["rae_w_mean"], pt["tau"])
                  for pt in sweep
                  if not np.isnan(pt["results"][solver]["rae_w_mean"])]
        if scored:
            rae_w, tau = min(scored)
            best[solver] = {"tau": tau, "rae_w_mean": rae_w}
    report = {"command": "tau-sweep",
              "config": {**_echo_config(cfg, _SYNTH_FIELDS),
                         "tau_grid": cfg["tau_grid"]},
              "sweep": sweep, "best": best}
    path = _write_report(cfg, report)
    print(path)
    return 2 if flagged else 0


def cmd_finance(cfg):
    if not cfg["csv"]:
        raise ConfigError("csv", "a readable returns CSV path")
    samples, labels = data_bench.ingest_financial_csv(
        cfg["csv"], cfg["lag_window"], target=cfg["target"])
    n_train = int(len(samples) * cfg["train_fraction"])
    if n_train < 1 or n_train >= len(samples):
        raise ConfigError("train_fraction",
                          "large enough to leave both train and test days")
    train, test = samples[:n_train], samples[n_train:]
    y_test = labels[n_train:]
    results = {}
    flagged = False
    for solver in cfg["solvers"]:
        entry = {"n_train": n_train, "n_test": len(test)}
        try:
            model, converged = _fit_solver(solver, train, cfg)
        except (ConvergenceError, NumericalError) as exc:
            entry.update(failed=True, error=str(exc))
            results[solver] = entry
            flagged = True
            continue
        preds = np.array([rmr.predict(model, s.x) for s in test])
        entry.update(failed=False, converged=bool(converged),
                     rae_y=data_bench.rae(preds, y_test),
                     pcp=data_bench.pcp(preds, y_test),
                     d100=data_bench.d100(preds, y_test))
        flagged = flagged or not converged
        results[solver] = entry
    report = {"command": "finance",
              "config": _echo_config(
                  cfg, ("seed", "solvers", "box_c", "epsilon", "tau", "rho",
                        "eta", "max_iters", "primal_tol", "gamma",
                        "l1_lambda", "mu", "inner_max_iters",
                        "outer_max_iters", "outer_tol", "csv", "lag_window",
                        "target", "train_fraction")),
              "results": results}
    path = _write_report(cfg, report)
    print(path)
    return 2 if flagged else 0


def _fit_dataset(cfg):
    if cfg["csv"]:
        samples, _ = data_bench.ingest_financial_csv(
            cfg["csv"], cfg["lag_window"], target=cfg["target"])
        return samples
    w_true = data_bench.generate_shape(cfg["shape"], cfg["size"])
    spec = data_bench.NoiseSpec(
        label_noise_scale=cfg["noise_scale"],
        corrupt_fraction=cfg["corrupt_fraction"],
        corrupt_block=cfg["corrupt_block"], seed=cfg["seed"])
    return data_bench.generate_synthetic(w_true, cfg["b_true"],
                                         cfg["n_samples"], spec)


def cmd_fit(cfg):
    samples = _fit_dataset(cfg)
    solver = cfg["solvers"][0]
    flagged = False
    if solver == "svr":
        model = qp_smo.solve_linear_svr(samples, box_c=cfg["box_c"],
                                        epsilon=cfg["epsilon"])
    elif solver == "rmr":
        res = rmr.fit(samples, _rmr_params(cfg), trace_sink=cfg["trace"])
        model, flagged = res.model, not res.converged
    else:
        res = grmr.fit_grmr(samples, params=_grmr_params(cfg),
                            trace_sink=cfg["trace"])
        model, flagged = res.model, not res.converged
    os.makedirs(cfg["out"], exist_ok=True)
    if solver == "grmr":
        save_matrix_csv(res.x_clean, os.path.join(cfg["out"], "x_clean.csv"))
        save_matrix_csv(res.e_outliers,
                        os.path.join(cfg["out"], "e_outliers.csv"))
    model_path = os.path.join(cfg["out"], cfg["model_out"])
    write_model(model, model_path, solver=solver, cfg=cfg)
    if cfg["dump_data"]:
        xv, y = qp_smo.stack_samples(samples)
        save_matrix_csv(xv, os.path.join(cfg["out"], "samples.csv"))
        save_matrix_csv(y.reshape(-1, 1), os.path.join(cfg["out"], "labels.csv"))
    print(model_path)
    return 2 if flagged else 0


def cmd_predict(cfg):
    if not cfg["model"] or not cfg["inputs"]:
        raise ConfigError("model", "both --model and --inputs are required")
    model, _header = read_model(cfg["model"])
    rows = load_matrix_csv(cfg["inputs"])
    p, q = model.w.shape
    if rows.shape[1] != p * q:
        raise ContractViolation(
            f"input rows have {rows.shape[1]} values, model expects {p * q}")
    preds = rows @ model.w.ravel() + model.b
    os.makedirs(cfg["out"], exist_ok=True)
    out_path = os.path.join(cfg["out"], cfg["predictions_out"])
    with open(out_path, "w", encoding="ascii") as fh:
        for v in preds:
            fh.write(f"{float(v)!r}\n")
    print(out_path)
    return 0


_MODEL_FORMAT = "robmatreg-model-v1"


def write_model(model, path, solver="rmr", cfg=None):
    """Model artifact: one JSON header line, then the matrix as CSV rows."""
    p, q = model.w.shape
    header = {"format": _MODEL_FORMAT, "p": p, "q": q, "b": float(model.b),
              "solver": solver}
    if cfg is not None:
        header["hyper_params"] = {
            k: cfg[k] for k in ("box_c", "epsilon", "tau", "rho", "eta",
                                "max_iters", "primal_tol", "gamma",
                                "l1_lambda", "mu", "inner_max_iters",
                                "outer_max_iters", "outer_tol")}
    with open(path, "w", encoding="ascii") as fh:
        fh.write(json.dumps(header, sort_keys=True))
        fh.write("\n")
        for row in model.w:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_model(path):
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ContractViolation(f"{path}: empty model file")
    header = json.loads(lines[0])
    if header.get("format") != _MODEL_FORMAT:
        raise ContractViolation(f"{path}: not a {_MODEL_FORMAT} artifact")
    rows = [[float(c) for c in line.split(",")] for line in lines[1:] if line]
    w = np.array(rows, dtype=np.float64)
    if w.shape != (header["p"], header["q"]):
        raise ContractViolation(
            f"{path}: matrix block is {w.shape}, header says "
            f"({header['p']}, {header['q']})")
    return rmr.RmrModel(w=w, b=float(header["b"])), header


if __name__ == "__main__":
    sys.exit(main())
