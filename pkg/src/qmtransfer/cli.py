"""Command-line driver.

Subcommands: simulate (Monte Carlo benchmark over the built-in
scenario), augment (build an augmented CSV from target and source
files), and fit-eval (cross-validated fit on an augmented CSV plus test
MSE). Exit codes: 0 success, 1 runtime failure, 2 usage or config
error.

Settings come from, in increasing precedence: built-in defaults, a
--config file of flat dotted keys (one `key = value` per line, # for
comments), then command-line flags. The seed falls back to the
QMTRANSFER_SEED environment variable when neither flag nor file set it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .data import DomainDataset, RngStream, load_csv
from .density_ratio import KmmConfig, dump_weights_csv
from .engression import EngressionConfig
from .errors import SchemaError
from .learners import (cross_validate, default_krr_grid, default_mlp_grid,
                       evaluate_mse, fit_learner)
from .pipeline import AugmentedDataset, PipelineConfig, run_augmentation
from .quantile_match import save_fit
from .simbench import SimScenario, make_krr_grid, make_static_grid, run_benchmark

SEED_ENV_VAR = "QMTRANSFER_SEED"


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_int_list(raw: str) -> tuple:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def _parse_float_list(raw: str) -> tuple:
    return tuple(float(part) for part in raw.split(",") if part.strip())


def _parse_hidden_grid(raw: str) -> tuple:
    # semicolons separate candidates, commas separate layer widths
    return tuple(_parse_int_list(part) for part in raw.split(";") if part.strip())


def _parse_batch(raw: str):
    return None if raw.strip().lower() in ("auto", "none") else int(raw)


def _parse_bandwidth(raw: str):
    return raw.strip() if raw.strip() == "median_heuristic" else float(raw)


def _parse_xi(raw: str):
    return raw.strip() if raw.strip() == "auto" else float(raw)


# every key a config file may define, with its parser
CONFIG_KEYS = {
    "seed": int,
    "output.dir": str,
    "engression.hidden_sizes": _parse_int_list,
    "engression.noise_dim": int,
    "engression.learning_rate": float,
    "engression.epochs": int,
    "engression.m_train": int,
    "engression.batch_size": _parse_batch,
    "engression.noise_law": str,
    "kmm.bandwidth": _parse_bandwidth,
    "kmm.b_zeta": float,
    "kmm.xi": _parse_xi,
    "kmm.max_iter": int,
    "kmm.tol": float,
    "pipeline.m_synthetic": int,
    "pipeline.m_predict": int,
    "pipeline.constraint_mode": str,
    "pipeline.use_density_ratio": _parse_bool,
    "pipeline.standardize_features": _parse_bool,
    "pipeline.predict_mode": str,
    "pipeline.ridge": float,
    "simulate.n0": int,
    "simulate.ratio": float,
    "simulate.reps": int,
    "simulate.learners": str,
    "simulate.jobs": int,
    "krr.penalty_grid": _parse_float_list,
    "mlp.hidden_grid": _parse_hidden_grid,
    "mlp.lr_grid": _parse_float_list,
    "mlp.epochs": int,
    "cv.folds": int,
}


def parse_config_file(path) -> dict:
    """Flat dotted-key file into a typed dict; unknown keys are rejected."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = CONFIG_KEYS[key](raw.strip())
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad value for {key}: {exc}")
    return values


def _load_file_config(args) -> dict:
    return parse_config_file(args.config) if args.config else {}


def _resolve_seed(args, file_cfg: dict) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in file_cfg:
        return file_cfg["seed"]
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env else 0


def _pick(flag_value, file_cfg: dict, key: str, default):
    if flag_value is not None:
        return flag_value
    return file_cfg.get(key, default)


def build_pipeline_config(file_cfg: dict, seed: int, **overrides) -> PipelineConfig:
    def cfg(prefix: str, cls, **extra):
        kwargs = {key.split(".", 1)[1]: value for key, value in file_cfg.items()
                  if key.startswith(prefix + ".")}
        kwargs.update(extra)
        return cls(**kwargs)

    pipeline_kwargs = {key.split(".", 1)[1]: value
                       for key, value in file_cfg.items()
                       if key.startswith("pipeline.")}
    pipeline_kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(
        engression=cfg("engression", EngressionConfig),
        kmm=cfg("kmm", KmmConfig),
        seed=seed, **pipeline_kwargs)


def _grids_from_config(file_cfg: dict) -> dict:
    grids = {}
    if "krr.penalty_grid" in file_cfg:
        grids["krr"] = make_krr_grid(file_cfg["krr.penalty_grid"])
    hidden = file_cfg.get("mlp.hidden_grid", ((10,), (50,), (100,)))
    lrs = file_cfg.get("mlp.lr_grid", (0.0001, 0.001, 0.01))
    epochs = file_cfg.get("mlp.epochs")
    if ("mlp.hidden_grid" in file_cfg or "mlp.lr_grid" in file_cfg
            or epochs is not None):
        grid = [{"hidden": h, "lr": lr, "epochs": epochs or 1000}
                for h in hidden for lr in lrs]
        grids["mlp"] = make_static_grid(grid)
    return grids


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def _read_header(path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        row = next(csv.reader(fh), None)
    if row is None:
        raise SchemaError(f"{path}: file is empty")
    return [name.strip() for name in row]


def cmd_simulate(args) -> int:
    file_cfg = _load_file_config(args)
    seed = _resolve_seed(args, file_cfg)
    n0 = _pick(args.n0, file_cfg, "simulate.n0", 50)
    ratio = _pick(args.ratio, file_cfg, "simulate.ratio", 10.0)
    reps = _pick(args.reps, file_cfg, "simulate.reps", 50)
    jobs = _pick(args.jobs, file_cfg, "simulate.jobs", 1)
    learners_raw = _pick(args.learners, file_cfg, "simulate.learners", "krr")
    learners = [name.strip() for name in learners_raw.split(",") if name.strip()]
    out_dir = Path(_pick(args.out_dir, file_cfg, "output.dir", "results"))
    if reps < 1:
        raise ValueError(f"--reps must be at least 1, got {reps}")
    if jobs < 1:
        raise ValueError(f"--jobs must be at least 1, got {jobs}")
    for learner in learners:
        if learner not in ("krr", "mlp"):
            raise ValueError(f"unknown learner {learner!r}")

    scenario = SimScenario(n0=n0, ratio=ratio)
    config = build_pipeline_config(file_cfg, seed)
    result = run_benchmark([scenario], learners, reps, config,
                           RngStream(seed), n_jobs=jobs,
                           grids=_grids_from_config(file_cfg))
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.csv"
    summary_path = out_dir / "summary.csv"
    result.save_rows_csv(results_path)
    result.save_summary_csv(summary_path)
    print(f"wrote {results_path} ({len(result.rows)} rows) and {summary_path}")
    if result.failures:
        print(f"note: {len(result.failures)} repetitions failed and were skipped")
    for learner, regime, s_n0, s_ratio, mean, sd, n_reps in result.summarize():
        print(f"{learner:4s} {regime:12s} n0={s_n0} ratio={s_ratio} "
              f"mean_mse={mean:.4f} sd={sd:.4f} reps={n_reps}")
    return 0


def cmd_augment(args) -> int:
    file_cfg = _load_file_config(args)
    seed = _resolve_seed(args, file_cfg)
    response = args.response_column
    header = _read_header(args.target)
    for path in args.source:
        other = _read_header(path)
        if other != header:
            raise SchemaError(
                f"column mismatch: {args.target} has {header}, {path} has {other}")
    target = load_csv(args.target, response)[0]
    sources = []
    for k, path in enumerate(args.source, start=1):
        ds = load_csv(path, response)[0]
        sources.append(DomainDataset(ds.features, ds.responses, k))

    config = build_pipeline_config(
        file_cfg, seed,
        m_synthetic=args.m_synthetic, m_predict=args.m_predict,
        constraint_mode=args.constraint_mode,
        use_density_ratio=False if args.no_density_ratio else None)
    augmented, fit, diagnostics = run_augmentation(target, sources, config)
    augmented.to_csv(args.out)

    diag_path = args.diagnostics or (str(args.out) + ".diagnostics.json")
    with open(diag_path, "w", encoding="utf-8") as fh:
        json.dump(diagnostics, fh, indent=1, default=_jsonable)
    if args.fit_out and fit is not None:
        save_fit(fit, args.fit_out)
    if args.dump_weights:
        zetas = [augmented.weights[augmented.origin == k]
                 for k in range(1, len(sources) + 1)]
        dump_weights_csv(zetas, args.dump_weights)
    print(f"wrote {args.out} ({augmented.n_total} rows) and {diag_path}")
    return 0


def cmd_fit_eval(args) -> int:
    file_cfg = _load_file_config(args)
    seed = _resolve_seed(args, file_cfg)
    folds = _pick(args.folds, file_cfg, "cv.folds", 5)
    train = AugmentedDataset.from_csv(args.train).to_weighted_training_set()
    test = load_csv(args.test, args.response_column)[0]
    if test.d != train.features.shape[1]:
        raise SchemaError(
            f"feature dimension mismatch: train d={train.features.shape[1]}, "
            f"test d={test.d}")

    grids = _grids_from_config(file_cfg)
    if args.learner in grids:
        grid = grids[args.learner](train.n)
    elif args.learner == "krr":
        grid = default_krr_grid(train.n)
    else:
        grid = default_mlp_grid(file_cfg.get("mlp.epochs", 1000))

    rng = RngStream(seed)
    report = cross_validate(train, args.learner, grid, folds=folds,
                            rng=rng.substream(0))
    model = fit_learner(train, args.learner, report.chosen, rng.substream(1))
    mse = evaluate_mse(model, test)
    report_text = report.to_text() + f"test_mse = {mse!r}\n"
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report_text)
    print(f"test_mse={mse!r}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help=f"random seed (default: ${SEED_ENV_VAR} or 0)")
    common.add_argument("--config", default=None,
                        help="flat dotted-key config file; flags take precedence")

    parser = argparse.ArgumentParser(
        prog="qmtransfer",
        description="Transfer-learning data augmentation by conditional "
                    "generative models, quantile matching, and kernel mean "
                    "matching.",
        epilog=f"The {SEED_ENV_VAR} environment variable supplies the default "
               "seed when neither --seed nor a config file sets one.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser(
        "simulate", parents=[common],
        help="Monte Carlo benchmark of target-only, oracle, and augmented "
             "training on the built-in simulation")
    p_sim.add_argument("--n0", type=int, default=None,
                       help="target-domain sample size (default 50)")
    p_sim.add_argument("--ratio", type=float, default=None,
                       help="source size over target size (default 10)")
    p_sim.add_argument("--reps", type=int, default=None,
                       help="Monte Carlo repetitions (default 50)")
    p_sim.add_argument("--learners", default=None,
                       help="comma list from {krr,mlp} (default krr)")
    p_sim.add_argument("--out-dir", default=None,
                       help="directory for results.csv and summary.csv "
                            "(default results)")
    p_sim.add_argument("--jobs", type=int, default=None,
                       help="parallel worker processes (default 1)")
    p_sim.set_defaults(func=cmd_simulate)

    p_aug = sub.add_parser(
        "augment", parents=[common],
        help="augment a target CSV with calibrated synthetic responses at "
             "source covariates")
    p_aug.add_argument("--target", required=True, help="target-domain CSV")
    p_aug.add_argument("--source", action="append", required=True,
                       help="source-domain CSV; repeat per source")
    p_aug.add_argument("--out", required=True, help="augmented output CSV")
    p_aug.add_argument("--response-column", default="y")
    p_aug.add_argument("--diagnostics", default=None,
                       help="diagnostics JSON path (default <out>.diagnostics.json)")
    p_aug.add_argument("--fit-out", default=None,
                       help="write the quantile-matching fit to this JSON file")
    p_aug.add_argument("--m-synthetic", type=int, default=None,
                       help="synthetic responses per source per target "
                            "covariate (default 3000)")
    p_aug.add_argument("--m-predict", type=int, default=None,
                       help="generator draws averaged per predicted response "
                            "(default 512)")
    p_aug.add_argument("--constraint-mode", default=None,
                       choices=["unconstrained", "nonneg_slopes"])
    p_aug.add_argument("--no-density-ratio", action="store_true",
                       help="skip kernel mean matching; source rows get weight 1")
    p_aug.add_argument("--dump-weights", default=None,
                       help="also write per-source weights to this CSV")
    p_aug.set_defaults(func=cmd_augment)

    p_fit = sub.add_parser(
        "fit-eval", parents=[common],
        help="cross-validate a learner on an augmented CSV and report test MSE")
    p_fit.add_argument("--train", required=True,
                       help="training CSV in the augmented format")
    p_fit.add_argument("--test", required=True, help="test CSV")
    p_fit.add_argument("--learner", required=True, choices=["krr", "mlp"])
    p_fit.add_argument("--response-column", default="y",
                       help="response column of the test CSV")
    p_fit.add_argument("--folds", type=int, default=None)
    p_fit.add_argument("--report", default=None,
                       help="write the cross-validation report here")
    p_fit.set_defaults(func=cmd_fit_eval)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
