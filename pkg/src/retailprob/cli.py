"""Command line entry point: ``retailprob <subcommand> [options]``.

Every configuration key can be set from a TOML file (``--config``) and
overridden by a flag of the same name (``--n-lags 28``) or by
``--set key=value``.  Exit codes: 0 success, 1 configuration error, 2 data
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import _FIELD_TYPES, PROFILES, ConfigError, ExperimentConfig, load_config
from .features import NumericalError
from .series import DataError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CLASS_CHOICES = ("smooth", "erratic", "lumpy", "intermittent", "all")

logger = logging.getLogger("retailprob")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would read as a data error here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--profile", choices=PROFILES)
    p.add_argument("--dist", choices=("poisson", "negbin"))
    p.add_argument("--class", dest="demand_class", choices=CLASS_CHOICES)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    named = {"seed", "profile", "dist", "demand_class"}
    for key in _FIELD_TYPES:
        if key not in named:
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar=key.upper())
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="retailprob", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("classify", help="write ADI / CV^2 demand classes for both levels")
    _common(p)

    p = sub.add_parser("topdown", help="top-down pipeline per demand class")
    _common(p)

    p = sub.add_parser("direct", help="direct quantile boosting benchmark at the lower level")
    _common(p)
    p.add_argument("--trees", type=int, default=100)

    p = sub.add_parser("sample-study", help="MSE of pooled OLS against sample size")
    _common(p)
    p.add_argument("--sizes", default="50,100,500,1000,2500,5000")
    p.add_argument("--repeats", type=int, default=100)

    p = sub.add_parser("ensemble", help="top-down pipeline with k disjoint-fold ensembles")
    _common(p)

    p = sub.add_parser("eval", help="score a quantile CSV against held-out sales")
    _common(p)
    p.add_argument("--quantiles-file", required=True)
    p.add_argument("--model-name")

    p = sub.add_parser("emit-plots", help="rebuild leaderboard.csv from a run's metrics.csv")
    p.add_argument("run_dir")
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for key in _FIELD_TYPES:
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val if isinstance(val, str) else str(val)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    return load_config(args.config, overrides)


def _code_for(exc_name: str) -> int:
    if exc_name in ("NumericalError", "LinAlgError", "FloatingPointError"):
        return EXIT_NUMERIC
    return EXIT_DATA


def cmd_classify(cfg: ExperimentConfig, args) -> int:
    from .classify import classify_level, write_demand_classes
    from .experiments import load_dataset

    ds = load_dataset(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for level in ("A", "L"):
        part = classify_level(ds, level)
        rows += [(sid, level, prof) for sid, prof in sorted(part.profiles.items())]
        sizes = ", ".join(f"{c.value}={n}" for c, n in part.sizes.items())
        print(f"level {level}: {sizes}, unclassifiable={len(part.excluded)}")
    write_demand_classes(rows, out / "demand_classes.csv")
    return EXIT_OK


def _report_run(result) -> int:
    for group, level, model, value, n, omitted in result.leaderboard():
        print(f"{group:>12} {level} {model:<16} wspl={value:.6f} n={n} omitted={omitted}")
    for cls, kind, msg in result.failures:
        print(f"class {cls} failed ({kind}): {msg}", file=sys.stderr)
    if result.failures:
        return max(_code_for(kind) for _, kind, _ in result.failures)
    return EXIT_OK


def cmd_topdown(cfg, args) -> int:
    from .experiments import run_topdown

    return _report_run(run_topdown(cfg))


def cmd_ensemble(cfg, args) -> int:
    from .experiments import run_fold_ensemble

    result = run_fold_ensemble(cfg)
    for cls, res in result.classes.items():
        for model, rows in res.fit_rows.items():
            print(f"{cls}: {model} design rows per fit {rows}")
    return _report_run(result)


def cmd_direct(cfg, args) -> int:
    from .baselines import direct_quantile_gbt
    from .classify import classify_level
    from .evaluation import MetricRow, spl_report, write_metrics_csv
    from .experiments import load_dataset
    from .gbt import profile
    from .topdown import write_quantiles_csv

    ds = load_dataset(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    part = classify_level(ds, "A")
    params = profile("default", num_trees=args.trees)
    rows = []
    for cls in cfg.classes():
        if not part[cls]:
            continue
        sub = ds.subset(part[cls])
        train = sub.train_matrix("L")
        models = direct_quantile_gbt(train, cfg.levels, sub.horizon, n_lags=cfg.n_lags, params=params, pad=cfg.pad, seed=cfg.seed)
        q = models.predict(train)
        write_quantiles_csv(out / f"quantiles_{cls.value}_direct_L.csv", sub.ids("L"), q, cfg.levels)
        report = spl_report(sub.test_matrix("L"), q, train, cfg.levels, sub.ids("L"))
        if report.n_valid:
            rows.append(MetricRow(f"{cls.value}/L", "direct-gbt", "wspl", report.wspl(), report.n_valid, report.n_omitted))
            print(f"{cls.value}: direct-gbt wspl={report.wspl():.6f} ({len(models.models)} models)")
    write_metrics_csv(rows, out / "metrics.csv")
    return EXIT_OK


def cmd_sample_study(cfg, args) -> int:
    from .experiments import SamplingStudySpec, load_dataset, run_sampling_study, write_sampling_result

    try:
        sizes = [int(s) for s in args.sizes.split(",")]
    except ValueError:
        raise ConfigError(f"--sizes must be comma-separated integers, got {args.sizes!r}") from None
    spec = SamplingStudySpec(cfg.demand_class, sizes, args.repeats, cfg.n_lags, cfg.pad, cfg.seed)
    ds = load_dataset(cfg)
    result = run_sampling_study(spec, ds)
    write_sampling_result(result, cfg.output_dir)
    for size, value in result.mean_curve().items():
        print(f"size {size:>6}: mean mse {value:.6f}")
    return EXIT_OK


def cmd_eval(cfg, args) -> int:
    from .evaluation import MetricRow, spl_report, write_metrics_csv
    from .experiments import load_dataset
    from .topdown import read_quantiles_csv

    ids, levels, q = read_quantiles_csv(args.quantiles_file)
    ds = load_dataset(cfg)
    level = "L" if ids[0] in ds._index["lower"] else "A"
    known = set(ds.ids(level))
    missing = [s for s in ids if s not in known]
    if missing:
        raise DataError(f"quantile file names unknown series, e.g. {missing[0]!r}")
    if q.shape[1] != ds.horizon:
        raise DataError(f"quantile horizon {q.shape[1]} differs from the configured horizon {ds.horizon}")
    report = spl_report(ds.test_matrix(level, ids), q, ds.train_matrix(level, ids), levels, ids)
    if report.n_valid == 0:
        raise DataError("no series with a non-zero scale")
    name = args.model_name or Path(args.quantiles_file).stem
    row = MetricRow(f"all/{level}", name, "wspl", report.wspl(), report.n_valid, report.n_omitted)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv([row], out / "metrics.csv")
    print(f"{name}: wspl={row.value:.6f} over {row.n_series} series, {row.n_omitted} omitted")
    return EXIT_OK


def cmd_emit_plots(args) -> int:
    from .evaluation import read_metrics_csv
    from .experiments import RunResult, write_leaderboard

    run_dir = Path(args.run_dir)
    metrics = run_dir / "metrics.csv"
    if not metrics.is_file():
        raise DataError(f"{metrics} not found")
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    bundle = RunResult(config=None, metrics=read_metrics_csv(metrics))
    print(write_leaderboard(bundle, out / "leaderboard.csv"))
    if (run_dir / "sampling_curve.csv").is_file():
        print(run_dir / "sampling_curve.csv")
    return EXIT_OK


COMMANDS = {
    "classify": cmd_classify,
    "topdown": cmd_topdown,
    "direct": cmd_direct,
    "sample-study": cmd_sample_study,
    "ensemble": cmd_ensemble,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "emit-plots":
            return cmd_emit_plots(args)
        cfg = _config_from_args(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
