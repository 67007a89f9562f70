"""End-to-end runs: top-down pipeline per demand class, fold ensembles and the sampling study."""

from __future__ import annotations

import csv
import json
import logging
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .baselines import baseline_matrix
from .classify import DemandClass, classify_level, write_demand_classes
from .config import ConfigError, ExperimentConfig, ModelSpec
from .evaluation import MetricRow, mse, spl_report, wspl, write_metrics_csv
from .features import NumericalError, PadPolicy, embed, recursive_forecast_many
from .gbt import LossSpec, fit_gbt, fit_gbt_negbin, profile
from .linear import accumulate_series, fit_lasso, series_accumulators, solve_ols, stream_fold_accumulators
from .series import (
    DataError,
    Dataset,
    IngestOptions,
    ingest_long_csv,
    make_dataset,
    read_hierarchy_csv,
    read_wide_csv,
)
from .topdown import (
    compute_proportions,
    disaggregate_matrix,
    empirical_quantiles,
    quantiles_matrix,
    write_params_csv,
    write_quantiles_csv,
)

logger = logging.getLogger(__name__)

LEADERBOARD_HEADER = ("group", "level", "model", "wspl", "n_series", "n_omitted")
SAMPLING_HEADER = ("size", "repeat", "mse", "baseline_mean_mse", "baseline_zero_mse")
RUN_ERRORS = (DataError, NumericalError, ValueError, np.linalg.LinAlgError)


# -- data ------------------------------------------------------------------


def load_dataset(config: ExperimentConfig) -> Dataset:
    """Build the dataset named by the config's data source."""
    from . import synthetic

    h = config.horizon
    if config.synthetic == "toy":
        return synthetic.toy_dataset(horizon=h, seed=config.synthetic_seed)
    if config.synthetic == "benchmark":
        return synthetic.poisson_benchmark(horizon=h, seed=config.synthetic_seed)[0]
    if config.synthetic == "lumpy":
        return synthetic.lumpy_dataset(horizon=h, seed=config.synthetic_seed)
    if config.synthetic == "m5-surrogate":
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = synthetic.write_m5_surrogate(out / "m5_surrogate.csv", seed=config.synthetic_seed)
        series, parent_of = read_wide_csv(path, parent_column=config.parent_column)
        return make_dataset(series, parent_of, h)
    if config.wide:
        filters = {"store_id": config.store} if config.store else None
        series, parent_of = read_wide_csv(config.wide, parent_column=config.parent_column, filters=filters)
        if not series:
            raise DataError(f"{config.wide}: no rows left after filtering")
        return make_dataset(series, parent_of, h)
    series = ingest_long_csv(config.sales, IngestOptions.for_profile(config.profile))
    return make_dataset(series, read_hierarchy_csv(config.hierarchy), h)


# -- point models ------------------------------------------------------------


@dataclass
class FittedPoint:
    model: object
    n_rows: int


def fit_point_model(spec: ModelSpec, values: np.ndarray, n_lags: int, pad="zero", seed: int = 0) -> FittedPoint:
    """Fit one roster model on training values ``(n_series, n_train)``."""
    pad = PadPolicy(pad)
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] == 0:
        raise DataError("no series to train on")
    if spec.kind == "pr":
        acc = accumulate_series(values, None, n_lags, pad)
        if acc.n_rows == 0:
            raise DataError("no training rows after lag embedding")
        return FittedPoint(solve_ols(acc), acc.n_rows)
    if spec.kind == "lasso":
        folds = stream_fold_accumulators(values, 10, None, n_lags, pad, seed)
        n_rows = sum(f.n_rows for f in folds)
        if n_rows < 10:
            raise DataError("too few training rows for 10-fold Lasso")
        return FittedPoint(fit_lasso(folds, seed=seed), n_rows)
    matrix = embed(values, None, n_lags, pad)
    if len(matrix) == 0:
        raise DataError("no training rows after lag embedding")
    params = profile(spec.gbt_profile)
    if spec.num_trees is not None:
        params = params.updated(num_trees=spec.num_trees)
    loss = LossSpec.parse(spec.loss)
    if loss.kind.value == "negbin":
        model, _ = fit_gbt_negbin(matrix, params, seed=seed)
    else:
        model = fit_gbt(matrix, loss, params, seed=seed)
    return FittedPoint(model, len(matrix))


def forecast_level(
    spec: ModelSpec, values: np.ndarray, h: int, n_lags: int, pad="zero", seed: int = 0, folds=None
) -> tuple[np.ndarray, list[int]]:
    """Recursive forecasts for every row of ``values``.

    With ``folds`` (a list of row-index arrays) one model is fitted per fold
    and the forecasts of all fold models are averaged.  Returns the forecasts
    and the number of design rows each fit used.
    """
    values = np.asarray(values, dtype=np.float64)
    if folds is None:
        folds = [np.arange(values.shape[0])]
    total = np.zeros((values.shape[0], h))
    rows = []
    for k, idx in enumerate(folds):
        fit = fit_point_model(spec, values[idx], n_lags, pad, seed + k)
        total += recursive_forecast_many(fit.model, values, h, n_lags)
        rows.append(fit.n_rows)
    return total / len(folds), rows


def fold_partition(n: int, k: int, seed: int = 0) -> list[np.ndarray]:
    """Random partition of ``range(n)`` into ``k`` disjoint, near-equal folds."""
    if k <= 1:
        raise ValueError("fold count must be > 1")
    if n < k:
        raise ValueError(f"need at least {k} series for {k} folds, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


# -- top-down runs ---------------------------------------------------------------


@dataclass
class LevelForecast:
    ids: list[str]
    points: np.ndarray
    quantiles: np.ndarray
    params: dict


@dataclass
class ClassResult:
    demand_class: DemandClass
    n_aggregates: int
    n_lower: int
    forecasts: dict[tuple[str, str], LevelForecast] = field(default_factory=dict)
    fit_rows: dict[str, list[int]] = field(default_factory=dict)


@dataclass
class RunResult:
    """Bundle of one top-down (or fold-ensemble) run."""

    config: ExperimentConfig
    metrics: list[MetricRow] = field(default_factory=list)
    classes: dict[str, ClassResult] = field(default_factory=dict)
    failures: list[tuple[str, str, str]] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    kind: str = "topdown"

    def wspl(self, group: str, level: str, model: str) -> float:
        for m in self.metrics:
            if m.group == f"{group}/{level}" and m.model == model and m.metric == "wspl":
                return m.value
        raise KeyError((group, level, model))

    def leaderboard(self) -> list[tuple]:
        rows = []
        for m in self.metrics:
            if m.metric == "wspl":
                group, level = m.group.rsplit("/", 1)
                rows.append((group, level, m.model, m.value, m.n_series, m.n_omitted))
        rows.sort(key=lambda r: (r[3], r[0], r[1], r[2]))
        return rows


def _level_metrics(group, model, truth, hist, points, q, levels, ids, out: list[MetricRow]):
    report = spl_report(truth, q, hist, levels, ids)
    n = truth.shape[0]
    if report.n_valid:
        out.append(MetricRow(group, model, "wspl", wspl(report), report.n_valid, report.n_omitted))
    else:
        logger.warning("%s %s: every series has a zero scale; WSPL omitted", group, model)
    if points is not None:
        out.append(MetricRow(group, model, "mse", mse(truth, points), n, 0))


def _children_sum(sub: Dataset, lower_ids: Sequence[str], lower_values: np.ndarray) -> np.ndarray:
    pos = {c: k for k, c in enumerate(lower_ids)}
    return np.stack(
        [lower_values[[pos[c] for c in sub.hierarchy.children_of[a]]].sum(axis=0) for a in sub.ids("A")]
    )


def _run_class(config: ExperimentConfig, sub: Dataset, cls: DemandClass, ensemble_k: int | None) -> tuple[ClassResult, list[MetricRow]]:
    h, levels = sub.horizon, config.levels
    ids = {"A": sub.ids("A"), "L": sub.ids("L")}
    train = {lv: sub.train_matrix(lv) for lv in "AL"}
    truth = {lv: sub.test_matrix(lv).astype(np.float64) for lv in "AL"}
    rho = compute_proportions(sub)
    result = ClassResult(cls, len(ids["A"]), len(ids["L"]))
    rows: list[MetricRow] = []

    for spec in config.models:
        variants = [(spec.name, None)]
        if ensemble_k is not None:
            n_train_level = len(ids[spec.level.upper()])
            folds = fold_partition(n_train_level, ensemble_k, config.seed)
            variants.append((f"{spec.name}-ens{ensemble_k}", folds))
        for name, folds in variants:
            lv = spec.level.upper()
            pts, fit_rows = forecast_level(spec, train[lv], h, config.n_lags, config.pad, config.seed, folds)
            result.fit_rows[name] = fit_rows
            if lv == "A":
                pa = pts
                child_ids, pl = disaggregate_matrix(pa, ids["A"], sub, rho)
                order = {c: k for k, c in enumerate(child_ids)}
                pl = pl[[order[c] for c in ids["L"]]]
            else:
                pl = pts
                pa = _children_sum(sub, ids["L"], pl)
            shared = None
            for level, points in (("A", pa), ("L", pl)):
                q, params = quantiles_matrix(
                    points, train[level], config.dist, levels, config.variance_window, shared
                )
                if config.shared_p and level == "A" and params["p"] is not None:
                    parent = {a: k for k, a in enumerate(ids["A"])}
                    shared = params["p"][[parent[sub.hierarchy.parent_of[c]] for c in ids["L"]]]
                result.forecasts[(name, level)] = LevelForecast(ids[level], points, q, params)
                _level_metrics(f"{cls.value}/{level}", name, truth[level], train[level], points, q, levels, ids[level], rows)

    for kind in config.baselines:
        for level in "AL":
            if kind == "insample":
                q = np.repeat(empirical_quantiles(train[level], levels)[:, None, :], h, axis=1)
                points = None
            else:
                points, q = baseline_matrix(kind, train[level], h, levels)
            _level_metrics(f"{cls.value}/{level}", kind, truth[level], train[level], points, q, levels, ids[level], rows)
    return result, rows


def manifest(config: ExperimentConfig, dataset: Dataset | None, kind: str, outputs: Sequence[str] = ()) -> dict:
    import numba
    import scipy

    info = {
        "kind": kind,
        "config_sha256": config.digest(),
        "seed": config.seed,
        "config": config.to_dict(),
        "versions": {
            "retailprob": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
        "outputs": sorted(outputs),
    }
    if dataset is not None:
        info["dataset"] = {
            "n_lower": len(dataset.lower),
            "n_aggregate": len(dataset.aggregate),
            "length": dataset.length,
            "n_train": dataset.n_train,
            "horizon": dataset.horizon,
        }
    return info


def run_topdown(
    config: ExperimentConfig,
    dataset: Dataset | None = None,
    ensemble_k: int | None = None,
    write: bool = True,
) -> RunResult:
    """Top-down pipeline for every requested demand class.

    Aggregates are classified and each class is run on its own: the roster
    models are trained at their level, forecast recursively, split or summed
    to the other level, turned into quantiles and scored.  A class that fails
    is recorded in ``failures`` and the remaining classes still run.
    """
    dataset = dataset if dataset is not None else load_dataset(config)
    if not dataset.has_test:
        raise DataError("dataset needs a held-out horizon for evaluation")
    kind = "ensemble" if ensemble_k is not None else "topdown"
    bundle = RunResult(config, kind=kind)
    part = classify_level(dataset, "A")
    for cls in config.classes():
        agg_ids = part[cls]
        if not agg_ids:
            logger.info("class %s: no aggregates", cls.value)
            continue
        try:
            res, rows = _run_class(config, dataset.subset(agg_ids), cls, ensemble_k)
        except RUN_ERRORS as exc:
            logger.error("class %s failed: %s", cls.value, exc)
            bundle.failures.append((cls.value, type(exc).__name__, str(exc)))
            continue
        bundle.classes[cls.value] = res
        bundle.metrics.extend(rows)
    outputs = []
    if write:
        outputs = _write_run(bundle, dataset, part)
    bundle.manifest = manifest(config, dataset, kind, outputs)
    bundle.manifest["failures"] = [list(f) for f in bundle.failures]
    if write:
        _write_json(Path(config.output_dir) / "manifest.json", bundle.manifest)
    return bundle


def run_fold_ensemble(config: ExperimentConfig, k: int | None = None, dataset: Dataset | None = None, write: bool = True) -> RunResult:
    """Like :func:`run_topdown`, adding a ``k``-fold ensemble next to every roster model.

    Series at the model's training level are split into ``k`` disjoint
    folds, one model is fitted per fold and the forecasts are averaged.
    """
    k = config.folds if k is None else k
    if k <= 1:
        raise ValueError("fold count must be > 1")
    return run_topdown(config, dataset, ensemble_k=k, write=write)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _write_run(bundle: RunResult, dataset: Dataset, part) -> list[str]:
    out = Path(bundle.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = ["metrics.csv", "leaderboard.csv", "demand_classes.csv"]
    write_metrics_csv(bundle.metrics, out / "metrics.csv")
    write_leaderboard(bundle, out / "leaderboard.csv")
    write_demand_classes(((sid, "A", prof) for sid, prof in sorted(part.profiles.items())), out / "demand_classes.csv")
    levels = bundle.config.levels
    for cls, res in bundle.classes.items():
        for (model, level), fc in res.forecasts.items():
            qname = f"quantiles_{cls}_{model}_{level}.csv"
            pname = f"params_{cls}_{model}_{level}.csv"
            write_quantiles_csv(out / qname, fc.ids, fc.quantiles, levels)
            write_params_csv(out / pname, fc.ids, bundle.config.dist, fc.params)
            names += [qname, pname]
    return names


def write_leaderboard(bundle: RunResult, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LEADERBOARD_HEADER)
        for group, level, model, value, n, omitted in bundle.leaderboard():
            w.writerow((group, level, model, repr(float(value)), n, omitted))
    return path


# -- sampling study ----------------------------------------------------------------


@dataclass
class SamplingStudySpec:
    """Repeated-subsample study of pooled OLS at the lower level within one demand class."""

    demand_class: str = "lumpy"
    sizes: list[int] = field(default_factory=lambda: [50, 100, 500, 1000, 2500, 5000])
    repeats: int = 100
    n_lags: int = 100
    pad: str = "zero"
    seed: int = 0

    def validate(self, population: int) -> None:
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if not self.sizes or min(self.sizes) < 1:
            raise ConfigError("sample sizes must be >= 1")
        too_big = [s for s in self.sizes if s > population]
        if too_big:
            raise ConfigError(f"sample sizes {too_big} exceed the population of {population} series")


@dataclass
class SamplingResult:
    spec: SamplingStudySpec
    population: list[str]
    rows: list[tuple[int, int, float, float, float]]
    kind: str = "sampling"

    def mean_curve(self) -> dict[int, float]:
        out = {}
        for size in self.spec.sizes:
            vals = [r[2] for r in self.rows if r[0] == size]
            out[size] = float(np.mean(vals))
        return out


def run_sampling_study(spec: SamplingStudySpec, dataset: Dataset) -> SamplingResult:
    """MSE of pooled OLS fitted on random subsets of a demand class, forecasting the whole class.

    Per-series cross products are computed once; each subsample fit sums the
    selected series' matrices, so a repeat costs one ``(p+1)``-sized solve
    plus one batched recursive forecast.
    """
    part = classify_level(dataset, "L")
    if spec.demand_class == "all":
        population = sorted(i for ids in part.groups.values() for i in ids)
    else:
        population = part[DemandClass.parse(spec.demand_class)]
    spec.validate(len(population))
    train = dataset.train_matrix("L", population).astype(np.float64)
    truth = dataset.test_matrix("L", population).astype(np.float64)
    h = truth.shape[1]
    accs = series_accumulators(train, None, spec.n_lags, PadPolicy(spec.pad))
    mean_mse = mse(truth, np.repeat(train.mean(axis=1, keepdims=True), h, axis=1))
    zero_mse = mse(truth, np.zeros_like(truth))
    rng = np.random.default_rng(spec.seed)
    rows = []
    for size in spec.sizes:
        for rep in range(spec.repeats):
            pick = np.sort(rng.choice(len(population), size, replace=False))
            model = solve_ols(accs.pooled(pick))
            pred = recursive_forecast_many(model, train, h, spec.n_lags)
            rows.append((size, rep, mse(truth, pred), mean_mse, zero_mse))
    return SamplingResult(spec, population, rows)


# -- plot data ---------------------------------------------------------------


def emit_plot_data(bundle, out_dir) -> list[Path]:
    """Tidy CSVs for plotting: ``sampling_curve.csv`` or ``leaderboard.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(bundle, SamplingResult):
        path = out / "sampling_curve.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(SAMPLING_HEADER)
            for size, rep, m, mm, zm in bundle.rows:
                w.writerow((size, rep, repr(m), repr(mm), repr(zm)))
        return [path]
    return [write_leaderboard(bundle, out / "leaderboard.csv")]


def write_sampling_result(result: SamplingResult, out_dir) -> list[Path]:
    paths = emit_plot_data(result, out_dir)
    spec = result.spec
    info = {
        "kind": "sampling",
        "spec": {k: getattr(spec, k) for k in ("demand_class", "sizes", "repeats", "n_lags", "pad", "seed")},
        "population": len(result.population),
        "versions": {"retailprob": __version__, "numpy": np.__version__},
    }
    _write_json(Path(out_dir) / "manifest.json", info)
    return paths
