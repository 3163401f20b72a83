"""Run configuration read from a TOML file.

Grammar (every section and key optional unless noted)::

    [data]
    path = "panel.csv"            # required for data commands; relative to the config file
    unit = "unit"                 # column names of the long-format CSV
    period = "period"
    outcome = "outcome"
    mediator = "mediator"
    covariates = ["gdp", "pop"]   # default: every other column

    [design]
    treated = ["BEL"]             # required for data commands
    donors = ["AUT", "DNK"]       # default: every non-treated unit
    exclude = ["LUX"]             # removed from the donor pool
    intervention = 1999           # first exposed period label

    [estimation]
    mediator_mode = "single-lag(0)"   # or "full-path"
    v_total = "uniform"               # uniform | user
    v_direct = "equal-pre-post"       # uniform | equal-pre-post | user
    standardize = true
    tolerance = 1e-10
    max_iter = 1000
    [[estimation.predictors]]         # default: every pre-period outcome and mediator
    variable = "outcome"              # outcome | mediator | covariate
    window = [1990, 1994]             # inclusive; a single integer means one period
    name = "gdp"                      # covariate column, only for variable = "covariate"
    [[estimation.mediator_predictors]]  # targets of the counterfactual mediator
    [estimation.v_user]               # label -> weight, for the "user" V modes
    "outcome[1990-1994]" = 2.0

    [inference]
    n_iter = 10000
    seed = 0
    pvalue_denominator = "donors"     # donors | donors+1
    effects = ["total", "direct", "indirect"]

    [run]
    output = "out"
    jobs = 1
    strict = false

    [simulate]                        # any ModelTemplate field, plus:
    n_pre = 20
    noise_seed = 0

    [mc]
    grid = [20, 200]
    reps = 500
    seed = 0
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, PredictorError
from .estimator import EFFECTS, EstimationOptions
from .predictors import MediatorMode, PredictorSpec

SECTIONS = {
    "data": {"path", "unit", "period", "outcome", "mediator", "covariates"},
    "design": {"treated", "donors", "exclude", "intervention"},
    "estimation": {
        "mediator_mode",
        "v_total",
        "v_direct",
        "standardize",
        "tolerance",
        "max_iter",
        "predictors",
        "mediator_predictors",
        "v_user",
    },
    "inference": {"n_iter", "seed", "pvalue_denominator", "effects"},
    "run": {"output", "jobs", "strict"},
    "simulate": None,
    "mc": {"grid", "reps", "seed"},
}


def _strs(value, key) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{key} must be a list of strings")
    return tuple(str(v) for v in value)


def _specs(items, key) -> tuple[PredictorSpec, ...] | None:
    if items is None:
        return None
    if not isinstance(items, list):
        raise ConfigError(f"{key} must be an array of tables")
    try:
        return tuple(PredictorSpec.from_dict(d) for d in items)
    except (PredictorError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad entry in {key}: {exc}") from None


@dataclass(frozen=True)
class EstimationConfig:
    data_path: Path | None = None
    schema: Mapping[str, Any] = field(default_factory=dict)
    treated: tuple[str, ...] = ()
    donors: tuple[str, ...] | None = None
    exclude: tuple[str, ...] = ()
    intervention: int | None = None
    predictors: tuple[PredictorSpec, ...] | None = None
    mediator_predictors: tuple[PredictorSpec, ...] | None = None
    v_total: str = "uniform"
    v_direct: str = "equal-pre-post"
    v_user: Mapping[str, float] | None = None
    mediator_mode: MediatorMode = MediatorMode()
    standardize: bool = True
    tolerance: float = 1e-10
    max_iter: int | None = None
    n_iter: int = 10_000
    seed: int = 0
    pvalue_denominator: str = "donors"
    effects: tuple[str, ...] = EFFECTS
    output: Path = Path("out")
    jobs: int = 1
    strict: bool = False
    simulate: Mapping[str, Any] = field(default_factory=dict)
    mc: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "mediator_mode", MediatorMode.parse(self.mediator_mode))
        except PredictorError as exc:
            raise ConfigError(str(exc)) from None
        if self.pvalue_denominator not in ("donors", "donors+1"):
            raise ConfigError(f"pvalue_denominator must be 'donors' or 'donors+1', not {self.pvalue_denominator!r}")
        bad = [e for e in self.effects if e not in EFFECTS]
        if bad:
            raise ConfigError(f"unknown effects {bad}")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.n_iter < 1:
            raise ConfigError("n_iter must be at least 1")

    @property
    def lag(self) -> int:
        return self.mediator_mode.lag

    def donor_pool(self, units, treated) -> tuple[str, ...]:
        pool = self.donors if self.donors else tuple(u for u in units if u not in treated)
        return tuple(u for u in pool if u not in self.exclude)

    def options(self) -> EstimationOptions:
        return EstimationOptions(
            specs=self.predictors,
            mediator_specs=self.mediator_predictors,
            v_total=self.v_total,
            v_direct=self.v_direct,
            v_user=self.v_user,
            mediator_mode=self.mediator_mode,
            standardize=self.standardize,
            tolerance=self.tolerance,
            max_iter=self.max_iter,
        )

    def replace(self, **changes) -> "EstimationConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        try:
            return dataclasses.replace(self, **changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_mapping(cls, doc: Mapping[str, Any], base_dir: Path | None = None) -> "EstimationConfig":
        for name, value in doc.items():
            if name not in SECTIONS:
                raise ConfigError(f"unknown config section [{name}]")
            if not isinstance(value, Mapping):
                raise ConfigError(f"[{name}] must be a table")
            allowed = SECTIONS[name]
            if allowed is not None:
                extra = set(value) - allowed
                if extra:
                    raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
        data = doc.get("data", {})
        design = doc.get("design", {})
        est = doc.get("estimation", {})
        inf = doc.get("inference", {})
        run = doc.get("run", {})
        base = base_dir or Path(".")
        kw: dict[str, Any] = {}
        if "path" in data:
            kw["data_path"] = base / str(data["path"])
        schema = {k: data[k] for k in ("unit", "period", "outcome", "mediator") if k in data}
        if "covariates" in data:
            schema["covariates"] = list(_strs(data["covariates"], "data.covariates"))
        kw["schema"] = schema
        kw["treated"] = _strs(design.get("treated"), "design.treated")
        if "donors" in design:
            kw["donors"] = _strs(design["donors"], "design.donors")
        kw["exclude"] = _strs(design.get("exclude"), "design.exclude")
        if "intervention" in design:
            if not isinstance(design["intervention"], int):
                raise ConfigError("design.intervention must be an integer period label")
            kw["intervention"] = design["intervention"]
        kw["predictors"] = _specs(est.get("predictors"), "estimation.predictors")
        kw["mediator_predictors"] = _specs(est.get("mediator_predictors"), "estimation.mediator_predictors")
        if "v_user" in est:
            try:
                kw["v_user"] = {str(k): float(v) for k, v in est["v_user"].items()}
            except (AttributeError, TypeError, ValueError):
                raise ConfigError("estimation.v_user must map labels to numbers") from None
        for key in ("mediator_mode", "v_total", "v_direct", "standardize", "tolerance", "max_iter"):
            if key in est:
                kw[key] = est[key]
        for key in ("n_iter", "seed", "pvalue_denominator"):
            if key in inf:
                kw[key] = inf[key]
        if "effects" in inf:
            kw["effects"] = _strs(inf["effects"], "inference.effects")
        if "output" in run:
            kw["output"] = base / str(run["output"])
        for key in ("jobs", "strict"):
            if key in run:
                kw[key] = run[key]
        kw["simulate"] = dict(doc.get("simulate", {}))
        kw["mc"] = dict(doc.get("mc", {}))
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "EstimationConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        return cls.from_mapping(doc, path.parent)
