"""``mixhmm`` command-line front end.

Subcommands: fit, simulate, study, decode, predict, roc.  Each writes its
artifacts into ``--out`` and reports errors on standard error as one
``error kind=... message=...`` line.  Exit codes: 0 success, 2 validation
error, 3 numerical failure, 4 non-convergence (results still written).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .estimation import FitConfig, NumericalError, fit
from .model import (
    PARAM_NAMES,
    SIMULATION_TRUTH,
    TEEN_DRIVING_ESTIMATES,
    Dataset,
    ModelParams,
    ValidationError,
)
from .prediction import decode, loso_cv, predict_series, roc
from .simulation import (
    CorrelatedTruth,
    SimStudyConfig,
    lognormal_miles,
    run_study,
    simulate_correlated,
    simulate_shared,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_NONCONVERGED = 0, 2, 3, 4

PRESETS = {"simulation": SIMULATION_TRUTH, "teen": TEEN_DRIVING_ESTIMATES}

_FIT_KEYS = {
    "max_outer_iters": int,
    "outer_tol": float,
    "param_tol": float,
    "optimizer_tol": float,
    "fd_step": float,
    "max_inner_iters": int,
    "compute_se": lambda v: v.lower() in ("1", "true", "yes"),
}


def _emit_error(kind: str, message: str):
    message = " ".join(str(message).split())
    sys.stderr.write(f"error kind={kind} message={json.dumps(message)}\n")


# -- configuration -----------------------------------------------------------

def _resolve(args) -> dict[str, str]:
    """Config file values overridden by explicit flags."""
    cfg = io.read_config(args.config) if args.config else {}
    if args.quadrature is not None:
        cfg["Q"] = str(args.quadrature)
    if args.variant is not None:
        cfg["variant"] = args.variant
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    if getattr(args, "replications", None) is not None:
        cfg["replications"] = str(args.replications)
    return cfg


def _params_with_prefix(cfg, prefix: str, base: ModelParams | None) -> ModelParams | None:
    over = {k[len(prefix):]: float(v) for k, v in cfg.items() if k.startswith(prefix)}
    unknown = [k for k in over if k not in PARAM_NAMES]
    if unknown:
        raise ValidationError(f"unknown parameter(s) {','.join(unknown)} in {prefix}*")
    if not over:
        return base
    if base is None:
        missing = [n for n in PARAM_NAMES if n not in over]
        if missing:
            raise ValidationError(f"{prefix}* needs all parameters or a preset; missing {','.join(missing)}")
        return ModelParams(**over)
    return base.replace(**over)


def _preset(name: str | None):
    if name is None:
        return None
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {','.join(PRESETS)}")
    return PRESETS[name]


def _single_q(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValidationError(f"quadrature order must be an integer, got {text!r}") from None


def fit_config_from(cfg: dict[str, str]) -> FitConfig:
    kw = {}
    for k, conv in _FIT_KEYS.items():
        if k in cfg:
            try:
                kw[k] = conv(cfg[k])
            except ValueError:
                raise ValidationError(f"bad value for {k}: {cfg[k]!r}") from None
    if "Q" in cfg:
        kw["Q"] = _single_q(cfg["Q"])
    variant = cfg.get("variant", "mixed2")
    name, K = FitConfig.parse_variant(variant)
    kw["variant"], kw["K"] = name, K
    init = _params_with_prefix(cfg, "init.", _preset(cfg.get("init")))
    if init is not None:
        kw["init"] = init
    fixed = {k[len("fixed."):]: float(v) for k, v in cfg.items() if k.startswith("fixed.")}
    if fixed:
        kw["fixed"] = fixed
    return FitConfig(**kw)


def _miles_from(cfg):
    kind = cfg.get("miles", "unit")
    if kind == "unit":
        return None
    if kind == "lognormal":
        return lognormal_miles(float(cfg.get("miles_mean", 358.1)), float(cfg.get("miles_sdlog", 0.5)))
    raise ValidationError(f"miles must be unit or lognormal, got {kind!r}")


def _truth_from(cfg):
    base = _params_with_prefix(cfg, "truth.", _preset(cfg.get("truth", "simulation")))
    scenario = cfg.get("scenario", "shared")
    if scenario == "shared":
        return base
    if scenario == "correlated":
        return CorrelatedTruth.from_rho(
            base, float(cfg.get("rho", 1.0)), float(cfg.get("sd1", 1.0)), float(cfg.get("sd2", 2.0)),
            emission_effect=cfg.get("emission_effect", "u1"),
        )
    raise ValidationError(f"scenario must be shared or correlated, got {scenario!r}")


def _seed(cfg) -> int:
    try:
        return int(cfg.get("seed", 0))
    except ValueError:
        raise ValidationError("seed must be an integer") from None


# -- helpers -----------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(args) -> Dataset:
    if not args.data:
        raise ValidationError("--data is required")
    d, report = io.ingest(args.data, return_report=True)
    if report.clamped_cnc:
        logging.getLogger("mixhmm").warning(
            "clamped %d cnc value(s) to 1 (lines %s)", report.clamped_cnc,
            ",".join(map(str, report.clamped_lines)),
        )
    return d


def _meta(command, cfg) -> dict:
    resolved = dict(cfg)
    resolved["command"] = command
    return {"version": io.VERSION, "seed": _seed(cfg), "config": io.config_hash(resolved)}


def _header(command, cfg) -> str:
    m = _meta(command, cfg)
    return f"# mixhmm {m['version']} seed={m['seed']} config={m['config']}"


def _write_fit(out: Path, res, fmt, command, cfg):
    if fmt == "json":
        path = out / "fit.json"
        path.write_text(io.fit_to_json(res, _meta(command, cfg)))
        return path
    path = out / "fit.csv"
    names = list(res.names)
    rows = [
        [n, res.values[i], res.se[i], *np.asarray(res.vcov)[i]] for i, n in enumerate(names)
    ]
    if res.params is not None:
        for n, v in res.params.to_dict().items():
            if n not in names:
                rows.append([n, v, float("nan"), *([float("nan")] * len(names))])
    summary = (
        f"# loglik={res.loglik!r} aic={res.aic!r} converged={int(res.converged)} "
        f"outer_iters={res.outer_iters} variant={res.variant}"
    )
    io.write_table(path, ["parameter", "estimate", "se", *[f"vcov_{n}" for n in names]], rows,
                   _header(command, cfg) + "\n" + summary)
    return path


def _model_for(args, d, cfg):
    if getattr(args, "fit", None):
        return io.params_from_fit_file(args.fit), True
    fcfg = fit_config_from(cfg)
    if fcfg.variant != "mixed2":
        raise ValidationError("decoding and prediction need the mixed two-state model")
    res = fit(d, fcfg)
    return res, res.converged


# -- commands ----------------------------------------------------------------

def cmd_fit(args) -> int:
    cfg = _resolve(args)
    d = _load_data(args)
    res = fit(d, fit_config_from(cfg))
    path = _write_fit(_out_dir(args), res, args.format, "fit", cfg)
    print(f"wrote {path} loglik={res.loglik:.6f} aic={res.aic:.6f} converged={res.converged}")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_simulate(args) -> int:
    cfg = _resolve(args)
    truth = _truth_from(cfg)
    N, n = int(cfg.get("N", 60)), int(cfg.get("n", 20))
    seed = _seed(cfg)
    reps = int(cfg.get("replications", 1))
    out = _out_dir(args)
    header = _header("simulate", cfg)
    for r in range(reps):
        s = seed if reps == 1 else (seed, r)
        if isinstance(truth, CorrelatedTruth):
            d = simulate_correlated(truth, N, n, s, _miles_from(cfg))
        else:
            d = simulate_shared(truth, N, n, _miles_from(cfg), s)
        name = "records.csv" if reps == 1 else f"records_{r:04d}.csv"
        io.write_dataset(out / name, d, header)
    print(f"wrote {reps} dataset(s) to {out}")
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = _resolve(args)
    q_text = cfg.get("Q", "5,11")
    orders = tuple(_single_q(q) for q in q_text.split(",") if q.strip())
    fixed = {k[len("fixed."):]: float(v) for k, v in cfg.items() if k.startswith("fixed.")}
    if not fixed:
        fixed = {"beta2": 0.0}
    overrides = {}
    for k, conv in _FIT_KEYS.items():
        if k in cfg:
            overrides[k] = conv(cfg[k])
    overrides.setdefault("compute_se", True)
    study = SimStudyConfig(
        replications=int(cfg.get("replications", 200)),
        N=int(cfg.get("N", 60)),
        n=int(cfg.get("n", 20)),
        truth=_truth_from(cfg),
        Q=orders,
        seed=_seed(cfg),
        workers=int(cfg.get("workers", 1)),
        fixed=fixed,
        init=_params_with_prefix(cfg, "init.", _preset(cfg.get("init"))),
        miles_gen=_miles_from(cfg),
        fit_overrides=overrides,
    )
    report = run_study(study)
    rows = report.to_rows()
    out = _out_dir(args)
    if args.format == "json":
        path = out / "study.json"
        path.write_text(json.dumps({"meta": _meta("study", cfg), "rows": rows}, indent=1) + "\n")
    else:
        path = out / "study.csv"
        cols = ["Q", "parameter", "truth", "mean", "sd", "mean_se", "n_used", "n_failed"]
        io.write_table(path, cols, ([r[c] for c in cols] for r in rows), _header("study", cfg))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = _resolve(args)
    d = _load_data(args)
    model, converged = _model_for(args, d, cfg)
    Q = _single_q(cfg.get("Q", "11"))
    rows = []
    for s in d:
        post, path = decode(model, s, Q)
        rows += [(s.subject_id, int(s.t[j]), post[j], int(path[j])) for j in range(len(s))]
    out = _out_dir(args)
    cols = ["subject_id", "month", "p_state1", "viterbi_state"]
    if args.format == "json":
        dest = out / "decode.json"
        dest.write_text(json.dumps({"meta": _meta("decode", cfg), "columns": cols,
                                    "rows": [list(r) for r in rows]}, indent=1) + "\n")
    else:
        dest = out / "decode.csv"
        io.write_table(dest, cols, rows, _header("decode", cfg))
    print(f"wrote {dest}")
    return EXIT_OK if converged else EXIT_NONCONVERGED


def cmd_predict(args) -> int:
    cfg = _resolve(args)
    d = _load_data(args)
    Q = _single_q(cfg.get("Q", "11"))
    converged = True
    if args.folds == "loso":
        res = loso_cv(d, fit_config_from(cfg), workers=int(cfg.get("workers", 1)))
        rows = res.rows()
        converged = all(res.fold_converged.values())
    else:
        model, converged = _model_for(args, d, cfg)
        rows = []
        for s in d:
            pred = predict_series(model, s, Q)
            rows += [(s.subject_id, int(s.t[j]), pred[j - 1], int(s.y[j])) for j in range(1, len(s))]
    out = _out_dir(args)
    cols = ["subject_id", "month", "score", "cnc"]
    if args.format == "json":
        dest = out / "predictions.json"
        dest.write_text(json.dumps({"meta": _meta("predict", cfg), "columns": cols,
                                    "rows": [list(r) for r in rows]}, indent=1) + "\n")
    else:
        dest = out / "predictions.csv"
        io.write_table(dest, cols, rows, _header("predict", cfg))
    print(f"wrote {dest}")
    return EXIT_OK if converged else EXIT_NONCONVERGED


def _read_predictions(path):
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        cols, rows = doc["columns"], doc["rows"]
    else:
        cols, rows = io.read_table(path)
    for c in ("score", "cnc"):
        if c not in cols:
            raise ValidationError(f"{path}: missing column {c}")
    i, j = cols.index("score"), cols.index("cnc")
    try:
        scores = np.array([float(r[i]) for r in rows])
        labels = np.array([int(float(r[j])) for r in rows])
    except (ValueError, IndexError):
        raise ValidationError(f"{path}: malformed prediction rows") from None
    return scores, labels


def cmd_roc(args) -> int:
    cfg = _resolve(args)
    if not args.data:
        raise ValidationError("--data (a predictions file) is required")
    scores, labels = _read_predictions(args.data)
    curve = roc(scores, labels)
    out = _out_dir(args)
    rows = list(zip(curve.fpr, curve.tpr, curve.thresholds))
    if args.format == "json":
        dest = out / "roc.json"
        dest.write_text(json.dumps({"meta": _meta("roc", cfg), "auc": curve.auc,
                                    "points": [[a, b] for a, b, _ in rows]}, indent=1) + "\n")
    else:
        dest = out / "roc.csv"
        io.write_table(dest, ["fpr", "tpr", "threshold"], rows, _header("roc", cfg))
    summary = f"auc={curve.auc!r} n={len(labels)} positives={int(labels.sum())}"
    (out / "auc.txt").write_text(summary + "\n")
    print(summary)
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "study": cmd_study,
    "decode": cmd_decode,
    "predict": cmd_predict,
    "roc": cmd_roc,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixhmm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--data", help="input records (or predictions for roc)")
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--quadrature", type=int, default=None, help="quadrature order (default 11)")
        p.add_argument("--variant", default=None, help="mixed2 | fixed2 | fixedK:K")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--replications", type=int, default=None)
        p.add_argument("--folds", choices=["loso", "none"], default="loso" if name == "predict" else "none")
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        if name in ("decode", "predict"):
            p.add_argument("--fit", help="fit file to use instead of refitting")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (NumericalError, ArithmeticError) as exc:
        _emit_error("numerical", exc)
        return EXIT_NUMERICAL
    except (ValidationError, OSError, KeyError, ValueError) as exc:
        _emit_error("validation", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
