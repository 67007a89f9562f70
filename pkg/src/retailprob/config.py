"""Experiment configuration: a TOML file whose keys can all be overridden from the command line."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .classify import DemandClass
from .topdown import M5_LEVELS, RETAIL_LEVELS, Dist

PROFILES = ("m5", "favorita", "generic")
MODEL_KINDS = ("pr", "lasso", "gbt")
SYNTHETIC = ("toy", "benchmark", "lumpy", "m5-surrogate")


class ConfigError(ValueError):
    pass


@dataclass
class ModelSpec:
    """One roster entry.

    ``kind`` is ``pr`` (pooled OLS), ``lasso`` or ``gbt``; ``loss`` and
    ``gbt_profile`` only matter for ``gbt``.  ``level`` is where the model is
    trained: ``A`` for the top-down pipeline, ``L`` for bottom-level training.
    """

    name: str
    kind: str = "pr"
    loss: str = "l2"
    gbt_profile: str = "default"
    level: str = "A"
    num_trees: int | None = None

    def validate(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"model {self.name!r}: unknown kind {self.kind!r}; choose from {MODEL_KINDS}")
        if self.level.upper() not in ("A", "L"):
            raise ConfigError(f"model {self.name!r}: level must be 'A' or 'L'")
        if self.num_trees is not None and self.num_trees < 1:
            raise ConfigError(f"model {self.name!r}: num_trees must be >= 1")
        if self.kind == "gbt":
            from .gbt import LossSpec

            try:
                LossSpec.parse(self.loss)
            except ValueError as exc:
                raise ConfigError(f"model {self.name!r}: {exc}") from None


@dataclass
class ExperimentConfig:
    """Everything one run needs.

    Data comes from exactly one of ``sales`` (long CSV, with ``hierarchy``),
    ``wide`` (M5-layout file; ``parent_column`` names the aggregate column and
    ``store`` optionally keeps one store) or ``synthetic``.
    """

    profile: str = "generic"
    sales: str | None = None
    hierarchy: str | None = None
    wide: str | None = None
    parent_column: str = "item_id"
    store: str | None = None
    synthetic: str | None = None
    synthetic_seed: int = 0
    horizon: int = 28
    n_lags: int = 100
    pad: str = "zero"
    quantiles: list[float] | None = None
    dist: str = "poisson"
    variance_window: int | None = None
    shared_p: bool = False
    demand_class: str = "all"
    baselines: list[str] = field(default_factory=lambda: ["naive", "drift", "insample"])
    models: list[ModelSpec] = field(default_factory=lambda: [ModelSpec("PR")])
    folds: int = 5
    seed: int = 0
    output_dir: str = "out"

    @property
    def levels(self) -> tuple[float, ...]:
        if self.quantiles is not None:
            return tuple(float(u) for u in self.quantiles)
        return M5_LEVELS if self.profile == "m5" else RETAIL_LEVELS

    def classes(self) -> list[DemandClass]:
        if self.demand_class == "all":
            return list(DemandClass)
        return [DemandClass.parse(self.demand_class)]

    def validate(self, check_files: bool = True) -> "ExperimentConfig":
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {PROFILES}")
        sources = [s for s in (self.sales, self.wide, self.synthetic) if s]
        if len(sources) != 1:
            raise ConfigError("set exactly one of 'sales', 'wide' or 'synthetic'")
        if self.sales and not self.hierarchy:
            raise ConfigError("'sales' needs a 'hierarchy' file")
        if self.synthetic and self.synthetic not in SYNTHETIC:
            raise ConfigError(f"unknown synthetic dataset {self.synthetic!r}; choose from {SYNTHETIC}")
        if check_files:
            for key in ("sales", "hierarchy", "wide"):
                path = getattr(self, key)
                if path and not Path(path).is_file():
                    raise ConfigError(f"{key} file not found: {path}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.n_lags < 1:
            raise ConfigError("n_lags must be >= 1")
        if self.pad not in ("zero", "drop"):
            raise ConfigError("pad must be 'zero' or 'drop'")
        try:
            Dist(self.dist)
        except ValueError:
            raise ConfigError(f"dist must be 'poisson' or 'negbin', got {self.dist!r}") from None
        if self.variance_window is not None and self.variance_window < 2:
            raise ConfigError("variance_window must be >= 2")
        if self.demand_class != "all":
            try:
                DemandClass.parse(self.demand_class)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        levels = self.levels
        if not levels or any(not 0 < u < 1 for u in levels) or list(levels) != sorted(levels):
            raise ConfigError("quantiles must be sorted and inside (0, 1)")
        unknown = set(self.baselines) - {"mean", "naive", "snaive", "drift", "insample"}
        if unknown:
            raise ConfigError(f"unknown baselines {sorted(unknown)}")
        if not self.models:
            raise ConfigError("model roster is empty")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ConfigError("model names must be unique")
        for m in self.models:
            m.validate()
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_models(text: str) -> list[ModelSpec]:
    """``NAME=KIND[:LOSS][@LEVEL]`` entries separated by commas, e.g. ``PR=pr,GBT=gbt:poisson@A``."""
    out = []
    for item in filter(None, (t.strip() for t in text.split(","))):
        name, _, rest = item.partition("=")
        if not name or not rest:
            raise ConfigError(f"bad model entry {item!r}; expected NAME=KIND[:LOSS][@LEVEL]")
        rest, _, level = rest.partition("@")
        kind, _, loss = rest.partition(":")
        out.append(ModelSpec(name, kind, loss or "l2", level=level or "A"))
    return out


def _coerce(key: str, text: str):
    kind = _FIELD_TYPES[key]
    if key == "models":
        return parse_models(text)
    if text.lower() in ("none", "null", "") and "None" in kind:
        return None
    try:
        if kind == "bool":
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("list[float]"):
            return [float(u) for u in text.split(",")]
        if kind.startswith("list[str]"):
            return [s for s in text.split(",") if s]
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    unknown = set(data) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "models" in data:
        try:
            data["models"] = [m if isinstance(m, ModelSpec) else ModelSpec(**m) for m in data["models"]]
        except TypeError as exc:
            raise ConfigError(f"bad model entry: {exc}") from None
    for key, value in data.items():
        kind = _FIELD_TYPES[key]
        if value is None:
            continue
        if kind.startswith("int") and (not isinstance(value, int) or isinstance(value, bool)):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        if kind == "bool" and not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        if kind.startswith("str") and not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        if kind.startswith("list") and not isinstance(value, list):
            raise ConfigError(f"{key} must be a list, got {value!r}")
    return ExperimentConfig(**data)


def load_config(path=None, overrides: dict | None = None, check_files: bool = True) -> ExperimentConfig:
    """Read a TOML config (or start from defaults) and apply ``key=value`` overrides.

    Override values are strings as typed on the command line; lists are
    comma separated.
    """
    data = {}
    if path is not None:
        try:
            with Path(path).open("rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for key, text in (overrides or {}).items():
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"cannot override unknown key {key!r}")
        data[key] = _coerce(key, text) if isinstance(text, str) else text
    return from_dict(data).validate(check_files)
