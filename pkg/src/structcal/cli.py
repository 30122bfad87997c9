"""Command-line front end: ``structcal {fit,apply,eval,synth,sweep,bench}``.

Prediction files are CSV with a header: ``p_0 .. p_{k-1}`` (probabilities) or
``z_0 .. z_{k-1}`` (logits), an optional integer label column ``y`` and, for
``sweep``, an optional ``split`` column (0 = fit, 1 = held out). Parameters,
specs and reports are JSON.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""

import argparse
import csv
import itertools
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import gaussian_lab as gl
from .calibrators import CalibratorParams, FitOptions, Method, apply, fit
from .exceptions import DegenerateInputError, NonFiniteError
from .metrics import evaluate, relative_improvement
from .penalties import Family, PenaltySpec
from .probcore import softmax_rows
from .saga import SolverConfig

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
METRICS = ("logloss", "brier")
QUANTILES = (10, 25, 50, 75, 90)
NUMERIC_ERRORS = (NonFiniteError, DegenerateInputError, FloatingPointError, np.linalg.LinAlgError)


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# prediction files
# --------------------------------------------------------------------------


def _indexed_columns(header, prefix):
    cols = {}
    for j, name in enumerate(header):
        if name.startswith(prefix) and name[len(prefix):].isdigit():
            cols[int(name[len(prefix):])] = j
    if cols and sorted(cols) != list(range(len(cols))):
        raise CliError(f"{prefix}* columns must be numbered 0..k-1")
    return [cols[i] for i in range(len(cols))]


def read_predictions(path):
    """Parse a prediction file into ``{"p", "y", "split", "source"}``.

    Logit files are converted to probabilities with the softmax.
    """
    path = Path(path)
    try:
        with open(path, newline="") as f:
            header = [h.strip() for h in next(csv.reader(f))]
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.float64)
    except (OSError, StopIteration, ValueError) as exc:
        raise CliError(f"cannot parse {path}: {exc}") from None
    if data.shape[0] == 0:
        raise CliError(f"{path} has no rows")
    if data.shape[1] != len(header):
        raise CliError(f"{path}: {data.shape[1]} columns but {len(header)} header fields")
    pcols, zcols = _indexed_columns(header, "p_"), _indexed_columns(header, "z_")
    if pcols and zcols:
        raise CliError(f"{path}: p_* and z_* columns are mutually exclusive")
    if not pcols and not zcols:
        raise CliError(f"{path}: no p_* or z_* columns")
    if len(pcols or zcols) < 2:
        raise CliError(f"{path}: need at least 2 classes")
    if zcols:
        z = data[:, zcols]
        if not np.all(np.isfinite(z)):
            raise CliError(f"{path}: non-finite logits")
        p, source = softmax_rows(z), "logits"
    else:
        p, source = data[:, pcols], "probabilities"
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise CliError(f"{path}: probabilities must lie in [0, 1]")
    out = {"p": p, "y": None, "split": None, "source": source}
    for name in ("y", "split"):
        if name in header:
            col = data[:, header.index(name)]
            if np.any(col != np.round(col)):
                raise CliError(f"{path}: column {name} must be integer")
            out[name] = col.astype(np.int64)
    if out["y"] is not None and (out["y"].min() < 0 or out["y"].max() >= p.shape[1]):
        raise CliError(f"{path}: labels must lie in 0..{p.shape[1] - 1}")
    return out


def write_predictions(path, p, y=None, split=None):
    k = p.shape[1]
    header = [f"p_{i}" for i in range(k)]
    cols, fmt = [p], ["%.17g"] * k
    for name, col in (("y", y), ("split", split)):
        if col is not None:
            header.append(name)
            cols.append(np.asarray(col, dtype=np.float64)[:, None])
            fmt.append("%d")
    np.savetxt(path, np.hstack(cols), fmt=fmt, delimiter=",",
               header=",".join(header), comments="")


def _labels(pred, labels_path=None):
    if labels_path is not None:
        y = read_labels(labels_path)
    else:
        y = pred["y"]
    if y is None:
        raise CliError("labels required: add a y column or pass --labels")
    if y.shape[0] != pred["p"].shape[0]:
        raise CliError(f"{y.shape[0]} labels for {pred['p'].shape[0]} rows")
    if y.min() < 0 or y.max() >= pred["p"].shape[1]:
        raise CliError("labels out of range")
    return y


def read_labels(path):
    try:
        with open(path, newline="") as f:
            header = [h.strip() for h in next(csv.reader(f))]
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, StopIteration, ValueError) as exc:
        raise CliError(f"cannot parse {path}: {exc}") from None
    if "y" not in header:
        raise CliError(f"{path}: no y column")
    col = data[:, header.index("y")]
    if np.any(col != np.round(col)):
        raise CliError(f"{path}: labels must be integer")
    return col.astype(np.int64)


def _read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read {path}: {exc}") from None


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

# Keys of a sweep/bench configuration and their defaults.
CONFIG_DEFAULTS = {
    "method": "sms",
    "penalty": "ridge",
    "rho": 1.0,
    "tau": 1.0,
    "lambda_intercept": 1.0,
    "lambda_diagonal": 1.0,
    "lambda_off_diagonal": 1.0,
    "preprocess_ts": True,
}


def normalize_config(cfg):
    unknown = set(cfg) - set(CONFIG_DEFAULTS)
    if unknown:
        raise CliError(f"unknown configuration keys: {sorted(unknown)}")
    out = dict(CONFIG_DEFAULTS)
    out.update(cfg)
    try:
        out["method"] = Method(out["method"]).value
        out["penalty"] = Family(out["penalty"]).value
    except ValueError as exc:
        raise CliError(str(exc)) from None
    for key in ("rho", "tau", "lambda_intercept", "lambda_diagonal", "lambda_off_diagonal"):
        out[key] = float(out[key])
    out["preprocess_ts"] = bool(out["preprocess_ts"])
    return out


def fit_options(cfg, seed=0, max_epochs=1000, tol=1e-7):
    try:
        penalty = PenaltySpec(
            family=cfg["penalty"], rho=cfg["rho"], tau=cfg["tau"],
            lambda_b=cfg["lambda_intercept"], lambda_v=cfg["lambda_diagonal"],
            lambda_M=cfg["lambda_off_diagonal"],
        )
        solver = SolverConfig(max_epochs=max_epochs, tol=tol, seed=seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    return FitOptions(penalty=penalty, solver=solver, preprocess_ts=cfg["preprocess_ts"])


def _fit(method, p, y, options):
    method = Method(method)
    if method.is_binary and p.shape[1] != 2:
        raise CliError("binary method requires k=2")
    try:
        return fit(method, p, y, options)
    except NUMERIC_ERRORS as exc:
        raise CliError(f"fit failed: {exc}", EXIT_NUMERIC) from None


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_fit(args):
    pred = read_predictions(args.train_file)
    y = _labels(pred)
    cfg = normalize_config({
        "method": args.method, "penalty": args.penalty, "rho": args.rho, "tau": args.tau,
        "lambda_intercept": args.lambda_intercept, "lambda_diagonal": args.lambda_diagonal,
        "lambda_off_diagonal": args.lambda_off_diagonal,
        "preprocess_ts": not args.no_preprocess_ts,
    })
    options = fit_options(cfg, seed=args.seed, max_epochs=args.max_epochs, tol=args.tol)
    params = _fit(cfg["method"], pred["p"], y, options)
    text = params.to_json() + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return EXIT_OK


def load_params(path):
    try:
        return CalibratorParams.from_json(Path(path).read_text())
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"cannot read parameters {path}: {exc}") from None


def cmd_apply(args):
    params = load_params(args.params)
    pred = read_predictions(args.in_file)
    if pred["p"].shape[1] != params.k:
        raise CliError(f"parameters have k={params.k} but {args.in_file} has k={pred['p'].shape[1]}")
    try:
        out = apply(params, pred["p"])
    except NUMERIC_ERRORS as exc:
        raise CliError(f"apply failed: {exc}", EXIT_NUMERIC) from None
    write_predictions(args.out_file, out, pred["y"], pred["split"])
    return EXIT_OK


def _report(p, y, metric):
    rep = evaluate(p, y).to_dict()
    if metric != "both":
        rep = {key: val for key, val in rep.items() if key not in METRICS or key == metric}
    return rep


def cmd_eval(args):
    metric = args.metric
    names = list(METRICS) if metric == "both" else [metric]
    if (args.before is None) != (args.after is None):
        raise CliError("--before and --after must be given together")
    if args.before is not None:
        if args.in_file is not None:
            raise CliError("give either a file or a --before/--after pair")
        before, after = read_predictions(args.before), read_predictions(args.after)
        if before["p"].shape != after["p"].shape:
            raise CliError("before and after files differ in shape")
        if args.labels is not None:
            y = _labels(before, args.labels)
        else:
            y = _labels(after if after["y"] is not None else before)
        rb, ra = _report(before["p"], y, metric), _report(after["p"], y, metric)
        rel = {}
        for m in names:
            try:
                rel[m] = relative_improvement(rb[m], ra[m])
            except ValueError:
                rel[m] = None  # the before score is zero: no relative scale
        _dump({"before": rb, "after": ra, "relative_improvement": rel})
        return EXIT_OK
    if args.in_file is None:
        raise CliError("no input file")
    pred = read_predictions(args.in_file)
    _dump(_report(pred["p"], _labels(pred, args.labels), metric))
    return EXIT_OK


def load_spec(args):
    if (args.preset is None) == (args.spec is None):
        raise CliError("give exactly one of --preset or a spec path")
    try:
        if args.preset is not None:
            return gl.preset(args.preset), gl.preset_sizes(args.preset)
        spec = gl.GaussianMixtureSpec.from_dict(_read_json(args.spec))
    except (KeyError, ValueError, TypeError) as exc:
        raise CliError(f"invalid spec: {exc}") from None
    return spec, dict(n_train=10_000, n_cal=10_000, n_test=100_000)


def _oracle_document(spec, n_mc, seed):
    orc = gl.oracle(spec)
    mean, se = gl.bayes_logloss(spec, n_mc=n_mc, seed=seed)
    if spec.binary:
        constant = orc.a == 0.0
    else:
        constant = orc.quadratic_term_constant
    return {
        "kind": "binary" if spec.binary else "multiclass",
        "coefficients": orc.to_dict(),
        "quadratic_term_constant": bool(constant),
        "bayes_logloss": mean,
        "bayes_logloss_se": se,
        "n_mc": int(n_mc),
        "spec": spec.to_dict(),
    }


def cmd_synth(args):
    spec, sizes = load_spec(args)
    for name in ("n_train", "n_cal", "n_test"):
        if getattr(args, name) is not None:
            sizes[name] = getattr(args, name)
        if sizes[name] < 1:
            raise CliError(f"{name} must be positive")
    if args.n_mc < 10_000:
        raise CliError("--n-mc must be at least 10000")
    try:
        gl.oracle(spec)
    except (ValueError, DegenerateInputError) as exc:
        raise CliError(f"invalid spec: {exc}") from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).spawn(4)
    for part, seq in zip(("train", "cal", "test"), seeds):
        p, y, _ = gl.sample(spec, sizes[f"n_{part}"], seq)
        write_predictions(out / f"{part}.csv", p, y)
    doc = _oracle_document(spec, args.n_mc, seeds[3])
    doc.update(seed=int(args.seed), sizes=sizes, preset=args.preset)
    _dump(doc, out / "oracle.json")
    return EXIT_OK


def expand_grid(grid):
    """Configurations from ``{"axes": {...}}``, ``{"configs": [...]}`` or a list.

    Axes are expanded as a cartesian product; duplicates are dropped.
    """
    if isinstance(grid, list):
        raw = grid
    elif isinstance(grid, dict) and ("axes" in grid or "configs" in grid):
        raw = list(grid.get("configs", []))
        axes = grid.get("axes") or {}
        if axes:
            if any(not isinstance(v, list) or not v for v in axes.values()):
                raise CliError("every grid axis must be a non-empty list")
            keys = sorted(axes)
            raw += [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]
    else:
        raise CliError("grid must be a list or an object with 'axes' and/or 'configs'")
    seen, configs = set(), []
    for cfg in raw:
        if not isinstance(cfg, dict):
            raise CliError("grid entries must be objects")
        cfg = normalize_config(cfg)
        key = json.dumps(cfg, sort_keys=True)
        if key not in seen:
            seen.add(key)
            configs.append(cfg)
    return configs


def _thread_count():
    raw = os.environ.get("CALIB_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise CliError("CALIB_THREADS must be a positive integer") from None
    if n < 1:
        raise CliError("CALIB_THREADS must be a positive integer")
    return n


def _held_out_split(pred, cal_frac, seed):
    n = pred["p"].shape[0]
    if pred["split"] is not None:
        if not set(np.unique(pred["split"])) <= {0, 1}:
            raise CliError("split column must hold 0 (fit) or 1 (held out)")
        fit_idx = np.flatnonzero(pred["split"] == 0)
        val_idx = np.flatnonzero(pred["split"] == 1)
    elif cal_frac is not None:
        if not 0 < cal_frac < 1:
            raise CliError("--cal-frac must lie in (0, 1)")
        perm = np.random.default_rng(seed).permutation(n)
        n_fit = min(max(int(np.floor(cal_frac * n)), 1), n - 1)
        fit_idx, val_idx = np.sort(perm[:n_fit]), np.sort(perm[n_fit:])
    else:
        raise CliError("need a split column or --cal-frac")
    if fit_idx.size == 0 or val_idx.size == 0:
        raise CliError("both the fit and the held-out part must be non-empty")
    return fit_idx, val_idx


def _sweep_one(cfg, p_fit, y_fit, p_val, y_val, objective, args):
    rec = {"config": cfg}
    try:
        params = _fit(cfg["method"], p_fit, y_fit,
                      fit_options(cfg, seed=args.seed, max_epochs=args.max_epochs, tol=args.tol))
        rep = evaluate(apply(params, p_val), y_val)
        rec.update(logloss=rep.logloss, brier=rep.brier, objective=getattr(rep, objective))
    except (CliError, ValueError) + NUMERIC_ERRORS as exc:
        rec.update(objective=None, error=str(exc))
    return rec


def cmd_sweep(args):
    configs = expand_grid(_read_json(args.grid))
    if not configs:
        raise CliError("grid is empty")
    pred = read_predictions(args.train_file)
    y = _labels(pred)
    fit_idx, val_idx = _held_out_split(pred, args.cal_frac, args.seed)
    p, objective = pred["p"], args.objective
    with ThreadPoolExecutor(max_workers=_thread_count()) as pool:
        records = list(pool.map(
            lambda cfg: _sweep_one(cfg, p[fit_idx], y[fit_idx], p[val_idx], y[val_idx], objective, args),
            configs))
    records.sort(key=lambda r: (r["objective"] is None, r["objective"] or 0.0,
                                json.dumps(r["config"], sort_keys=True)))
    for rank, rec in enumerate(records, start=1):
        rec["rank"] = rank
    _dump({"objective": objective, "n_fit": int(fit_idx.size), "n_held_out": int(val_idx.size),
           "records": records}, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# bench
# --------------------------------------------------------------------------


def _bench_methods(raw):
    methods = []
    for entry in raw:
        if isinstance(entry, str):
            entry = {"method": entry}
        if not isinstance(entry, dict):
            raise CliError("methods must be names or objects")
        entry = dict(entry)
        label = entry.pop("label", None)
        cfg = normalize_config(entry)
        methods.append((label or cfg["method"], cfg))
    labels = [m[0] for m in methods]
    if len(set(labels)) != len(labels):
        raise CliError("method labels must be unique")
    return methods


def _bench_dataset(entry, base, seed):
    """Load ``(p_cal, y_cal, p_test, y_test)`` for one dataset entry."""
    if "preset" in entry:
        spec = gl.preset(entry["preset"])
        sizes = gl.preset_sizes(entry["preset"])
        s_cal, s_test = np.random.SeedSequence(entry.get("seed", seed)).spawn(2)
        p_cal, y_cal, _ = gl.sample(spec, int(entry.get("n_cal", sizes["n_cal"])), s_cal)
        p_test, y_test, _ = gl.sample(spec, int(entry.get("n_test", sizes["n_test"])), s_test)
        return p_cal, y_cal, p_test, y_test
    cal = read_predictions(base / entry["cal"])
    test = read_predictions(base / entry["test"])
    if cal["p"].shape[1] != test["p"].shape[1]:
        raise CliError("calibration and test files differ in k")
    return cal["p"], _labels(cal), test["p"], _labels(test)


def _check_datasets(datasets, base):
    ids = set()
    for entry in datasets:
        if not isinstance(entry, dict) or "id" not in entry:
            raise CliError("every dataset needs an id")
        key = (str(entry["id"]), str(entry.get("model", "")))
        if key in ids:
            raise CliError(f"duplicate dataset {key}")
        ids.add(key)
        if "preset" in entry:
            if entry["preset"] not in gl.PRESETS:
                raise CliError(f"unknown preset {entry['preset']!r}")
            continue
        for part in ("cal", "test"):
            if part not in entry:
                raise CliError(f"dataset {entry['id']} needs '{part}' or 'preset'")
            if not (base / entry[part]).is_file():
                raise CliError(f"missing file {base / entry[part]}")


def warm_up():
    """Compile the solver kernels so that timings exclude one-time JIT cost."""
    rng = np.random.default_rng(0)
    p = softmax_rows(rng.standard_normal((8, 3)))
    y = np.arange(8) % 3
    fit(Method.SMS, p, y, FitOptions(solver=SolverConfig(max_epochs=2)))
    pb = softmax_rows(rng.standard_normal((8, 2)))
    fit(Method.BINARY_QUADRATIC, pb, y % 2,
        FitOptions(solver=SolverConfig(max_epochs=2), binary_penalty=PenaltySpec()))


def _bench_records(entry, methods, metrics, base, args):
    did, model = str(entry["id"]), str(entry.get("model", ""))
    try:
        p_cal, y_cal, p_test, y_test = _bench_dataset(entry, base, args.seed)
    except (CliError, ValueError, KeyError) as exc:
        p_cal, failure = None, f"dataset: {exc}"
    out = []
    for label, cfg in methods:
        base_rec = {"dataset_id": did, "model": model, "method": label}
        if p_cal is None:
            out += [dict(base_rec, metric=m, error=failure) for m in metrics]
            continue
        try:
            options = fit_options(cfg, seed=args.seed, max_epochs=args.max_epochs, tol=args.tol)
            t0 = time.perf_counter()
            params = _fit(cfg["method"], p_cal, y_cal, options)
            elapsed_ms = 1e3 * (time.perf_counter() - t0)
            calibrated = apply(params, p_test)
            before, after = evaluate(p_test, y_test), evaluate(calibrated, y_test)
        except (CliError, ValueError) + NUMERIC_ERRORS as exc:
            out += [dict(base_rec, metric=m, error=str(exc)) for m in metrics]
            continue
        n_cal, k = int(p_cal.shape[0]), int(p_cal.shape[1])
        for m in metrics:
            b, a = getattr(before, m), getattr(after, m)
            rec = dict(base_rec, metric=m, before=b, after=a, n_cal=n_cal, k=k,
                       relative_improvement=relative_improvement(b, a) if b > 0 else None)
            if not args.omit_timing:
                rec["fit_time_ms"] = elapsed_ms
                rec["fit_time_ms_per_1000"] = elapsed_ms * 1000.0 / n_cal
            out.append(rec)
    return out


def quantile_table(records):
    """Per-method, per-metric quantiles of the relative improvement."""
    table = {}
    for rec in records:
        if rec.get("relative_improvement") is None:
            continue
        table.setdefault(rec["method"], {}).setdefault(rec["metric"], []).append(rec["relative_improvement"])
    return {
        method: {m: {str(q): float(np.percentile(vals, q)) for q in QUANTILES}
                 for m, vals in by_metric.items()}
        for method, by_metric in table.items()
    }


def timing_table(records):
    """Mean fit time per 1000 samples with error bars ``std / sqrt(n_datasets * n_models)``."""
    seen, times = {}, {}
    for rec in records:
        if "fit_time_ms_per_1000" not in rec:
            continue
        key = (rec["method"], rec["dataset_id"], rec["model"])
        if key in seen:
            continue  # one fit serves every metric
        seen[key] = True
        times.setdefault(rec["method"], []).append((rec["dataset_id"], rec["model"], rec["fit_time_ms_per_1000"]))
    out = {}
    for method, rows in times.items():
        vals = np.array([r[2] for r in rows])
        n_data, n_models = len({r[0] for r in rows}), len({r[1] for r in rows})
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out[method] = {"mean_ms_per_1000": float(vals.mean()),
                       "error_bar": std / np.sqrt(n_data * n_models),
                       "n_records": int(vals.size)}
    return out


def cmd_bench(args):
    path = Path(args.config)
    cfg = _read_json(path)
    if not isinstance(cfg, dict):
        raise CliError("bench config must be an object")
    datasets = cfg.get("datasets") or []
    if not datasets:
        raise CliError("dataset list is empty")
    methods = _bench_methods(cfg.get("methods") or ["ts", "svs", "sms"])
    metrics = cfg.get("metrics") or list(METRICS)
    if any(m not in METRICS for m in metrics):
        raise CliError(f"metrics must be among {METRICS}")
    base = path.parent
    _check_datasets(datasets, base)
    if not args.omit_timing:
        warm_up()
    with ThreadPoolExecutor(max_workers=_thread_count()) as pool:
        chunks = list(pool.map(lambda e: _bench_records(e, methods, metrics, base, args), datasets))
    records = sorted((r for chunk in chunks for r in chunk),
                     key=lambda r: (r["dataset_id"], r["model"], r["method"], r["metric"]))
    doc = {"records": records}
    if args.quantiles or cfg.get("quantiles"):
        doc["quantiles"] = quantile_table(records)
    if not args.omit_timing:
        doc["timing"] = timing_table(records)
    _dump(doc, args.out)
    if all("error" in r for r in records):
        print("every benchmark record failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _solver_flags(sp):
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-epochs", type=int, default=1000)
    sp.add_argument("--tol", type=float, default=1e-7)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def build_parser():
    parser = _Parser(prog="structcal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("fit", help="fit a calibrator and write its parameters as JSON")
    sp.add_argument("train_file")
    sp.add_argument("--method", default="sms", choices=[m.value for m in Method])
    sp.add_argument("--penalty", default="ridge", choices=[f.value for f in Family])
    sp.add_argument("--rho", type=float, default=1.0)
    sp.add_argument("--tau", type=float, default=1.0)
    sp.add_argument("--lambda-intercept", type=float, default=1.0)
    sp.add_argument("--lambda-diagonal", type=float, default=1.0)
    sp.add_argument("--lambda-off-diagonal", type=float, default=1.0)
    sp.add_argument("--no-preprocess-ts", action="store_true")
    sp.add_argument("--out", "-o", help="parameter file (default: standard output)")
    _solver_flags(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("apply", help="calibrate a prediction file")
    sp.add_argument("params")
    sp.add_argument("in_file")
    sp.add_argument("out_file")
    sp.set_defaults(func=cmd_apply)

    sp = sub.add_parser("eval", help="score predictions (JSON to standard output)")
    sp.add_argument("in_file", nargs="?")
    sp.add_argument("--labels", help="CSV with a y column")
    sp.add_argument("--metric", default="both", choices=["logloss", "brier", "both"])
    sp.add_argument("--before")
    sp.add_argument("--after")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("synth", help="sample a Gaussian problem with its exact calibration map")
    sp.add_argument("spec", nargs="?", help="GaussianMixtureSpec JSON")
    sp.add_argument("--preset", choices=sorted(gl.PRESETS))
    sp.add_argument("--n-train", type=int)
    sp.add_argument("--n-cal", type=int)
    sp.add_argument("--n-test", type=int)
    sp.add_argument("--n-mc", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("sweep", help="exhaustive hyperparameter grid on a held-out split")
    sp.add_argument("train_file")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--objective", default="logloss", choices=list(METRICS))
    sp.add_argument("--cal-frac", type=float)
    sp.add_argument("--out", "-o")
    _solver_flags(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("bench", help="datasets x methods benchmark summary")
    sp.add_argument("config")
    sp.add_argument("--quantiles", action="store_true")
    sp.add_argument("--omit-timing", action="store_true",
                    help="drop wall-clock fields so output is byte-reproducible")
    sp.add_argument("--out", "-o")
    _solver_flags(sp)
    sp.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"structcal: error: {exc}", file=sys.stderr)
        return exc.code
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
