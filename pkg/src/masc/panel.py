"""Balanced long-format panel ingestion, validation and indexing.

The canonical on-disk form is a UTF-8 CSV with header
``unit,period,outcome,mediator[,<covariate>...]``. Every (unit, period) cell
must be present exactly once and hold finite decimal numbers.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from typing import IO, Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DesignError,
    DuplicateCell,
    MissingCell,
    NonNumeric,
    UnknownColumn,
    UnknownPeriod,
    UnknownUnit,
)

CANONICAL_COLUMNS = ("unit", "period", "outcome", "mediator")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Balanced unit x period panel plus the treatment layout.

    ``periods`` holds the user-facing labels (e.g. years); all numeric
    arrays are indexed ``[unit_position, period_position]``. The design
    fields (``intervention``, ``treated``, ``donors``) may be left empty
    for a freshly loaded file and attached later with :meth:`with_design`.
    """

    units: tuple[str, ...]
    periods: tuple[int, ...]
    outcome: np.ndarray
    mediator: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    intervention: int | None = None
    treated: tuple[str, ...] = ()
    donors: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        n, t = len(self.units), len(self.periods)
        object.__setattr__(self, "units", tuple(str(u) for u in self.units))
        object.__setattr__(self, "periods", tuple(int(p) for p in self.periods))
        object.__setattr__(self, "outcome", _frozen(self.outcome))
        object.__setattr__(self, "mediator", _frozen(self.mediator))
        covs = {str(k): _frozen(v) for k, v in dict(self.covariates).items()}
        for name, arr in covs.items():
            if arr.ndim == 1:
                covs[name] = _frozen(np.repeat(arr[:, None], t, axis=1))
        object.__setattr__(self, "covariates", covs)
        object.__setattr__(self, "treated", tuple(str(u) for u in self.treated))
        object.__setattr__(self, "donors", tuple(str(u) for u in self.donors))
        for name, arr in [("outcome", self.outcome), ("mediator", self.mediator), *covs.items()]:
            if arr.shape != (n, t):
                raise ValueError(f"{name} has shape {arr.shape}, expected {(n, t)}")
        if len(set(self.units)) != n:
            raise ValueError("unit identifiers must be unique")
        if list(self.periods) != sorted(set(self.periods)):
            raise ValueError("periods must be strictly increasing")
        object.__setattr__(self, "_index", {u: i for i, u in enumerate(self.units)})

    # indexing helpers

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    @property
    def n_pre(self) -> int:
        """Number of pre-intervention periods (``T - 1`` in 1-based terms)."""
        if self.intervention is None:
            raise DesignError("no intervention period set")
        return self.period_index(self.intervention)

    @property
    def post_periods(self) -> tuple[int, ...]:
        return self.periods[self.n_pre:]

    @property
    def pre_periods(self) -> tuple[int, ...]:
        return self.periods[: self.n_pre]

    def unit_index(self, unit: str) -> int:
        try:
            return self._index[str(unit)]
        except KeyError:
            raise UnknownUnit(f"unknown unit {unit!r}") from None

    def unit_indices(self, units: Iterable[str]) -> np.ndarray:
        return np.array([self.unit_index(u) for u in units], dtype=int)

    def period_index(self, label: int) -> int:
        try:
            return self.periods.index(int(label))
        except ValueError:
            raise UnknownPeriod(f"unknown period {label!r}") from None

    def treatment_indicator(self) -> np.ndarray:
        """D[i, t] = 1 for treated units from the intervention onwards."""
        d = np.zeros((self.n_units, self.n_periods))
        if self.treated and self.intervention is not None:
            d[np.ix_(self.unit_indices(self.treated), np.arange(self.n_pre, self.n_periods))] = 1.0
        return d

    def variable(self, name: str) -> np.ndarray:
        if name == "outcome":
            return self.outcome
        if name == "mediator":
            return self.mediator
        try:
            return self.covariates[name]
        except KeyError:
            raise UnknownColumn(f"unknown covariate {name!r}") from None

    def with_design(
        self,
        intervention: int,
        treated: Sequence[str],
        donors: Sequence[str] | None = None,
    ) -> "PanelDataset":
        """Return a copy carrying a validated treatment layout.

        ``donors`` defaults to every unit that is not treated.
        """
        treated = tuple(str(u) for u in treated)
        if donors is None:
            donors = tuple(u for u in self.units if u not in treated)
        donors = tuple(str(u) for u in donors)
        for u in (*treated, *donors):
            self.unit_index(u)
        pos = self.period_index(intervention)
        if pos < 1:
            raise DesignError("intervention must leave at least one pre-period")
        if not treated:
            raise DesignError("at least one treated unit is required")
        overlap = set(treated) & set(donors)
        if overlap:
            raise DesignError(f"units both treated and donors: {sorted(overlap)}")
        if len(donors) < 2:
            raise DesignError("donor pool needs at least 2 units")
        return replace(self, intervention=int(intervention), treated=treated, donors=donors)

    def replace_values(
        self, outcome: np.ndarray | None = None, mediator: np.ndarray | None = None
    ) -> "PanelDataset":
        return replace(
            self,
            outcome=self.outcome if outcome is None else outcome,
            mediator=self.mediator if mediator is None else mediator,
        )


def _open_text(source: Any) -> IO[str]:
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"))
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, io.TextIOBase):
        return source
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return io.StringIO(data)


def _parse_float(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise NonNumeric(f"cannot parse {text!r} as a number at {where}") from None
    if not math.isfinite(value):
        raise NonNumeric(f"non-finite value {text!r} at {where}")
    return value


def load_panel(
    source: Any,
    schema: Mapping[str, Any] | None = None,
    *,
    intervention: int | None = None,
    treated: Sequence[str] = (),
    donors: Sequence[str] | None = None,
) -> PanelDataset:
    """Read a long-format CSV into a :class:`PanelDataset`.

    Parameters
    ----------
    source : path, bytes, or file-like
        UTF-8 CSV with a header row.
    schema : mapping, optional
        Maps the roles ``unit``, ``period``, ``outcome``, ``mediator`` to
        column names, and optionally ``covariates`` to a list of column
        names. Unmapped roles use their canonical names; without an explicit
        ``covariates`` entry every remaining column is a covariate.
    intervention, treated, donors
        Optional design, applied through :meth:`PanelDataset.with_design`.
    """
    schema = dict(schema or {})
    cols = {role: str(schema.get(role, role)) for role in CANONICAL_COLUMNS}
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise UnknownColumn("empty file: header row required") from None
        for role, name in cols.items():
            if name not in header:
                raise UnknownColumn(f"column {name!r} for {role} not in header")
        if "covariates" in schema:
            cov_names = [str(c) for c in schema["covariates"]]
            for c in cov_names:
                if c not in header:
                    raise UnknownColumn(f"covariate column {c!r} not in header")
        else:
            cov_names = [h for h in header if h not in cols.values()]
        pos = {name: header.index(name) for name in header}

        cells: dict[tuple[str, int], list[float]] = {}
        unit_order: dict[str, None] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise UnknownColumn(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            unit = row[pos[cols["unit"]]].strip()
            ptxt = row[pos[cols["period"]]].strip()
            try:
                period = int(ptxt)
            except ValueError:
                raise NonNumeric(f"line {lineno}: period {ptxt!r} is not a decimal integer") from None
            key = (unit, period)
            if key in cells:
                raise DuplicateCell(f"duplicate cell for unit {unit!r} at period {period}")
            values = []
            for name in (cols["outcome"], cols["mediator"], *cov_names):
                text = row[pos[name]].strip()
                if text == "":
                    raise MissingCell(f"missing {name} for ({unit},{period})")
                values.append(_parse_float(text, f"line {lineno}, column {name}"))
            cells[key] = values
            unit_order.setdefault(unit, None)
    finally:
        if isinstance(source, (str, os.PathLike)):
            fh.close()

    units = list(unit_order)
    periods = sorted({p for _, p in cells})
    data = np.empty((len(units), len(periods), 2 + len(cov_names)))
    for i, u in enumerate(units):
        for t, p in enumerate(periods):
            try:
                data[i, t] = cells[(u, p)]
            except KeyError:
                raise MissingCell(f"missing cell ({u},{p})") from None
    ds = PanelDataset(
        units=tuple(units),
        periods=tuple(periods),
        outcome=data[:, :, 0],
        mediator=data[:, :, 1],
        covariates={c: data[:, :, 2 + k] for k, c in enumerate(cov_names)},
    )
    if intervention is not None:
        ds = ds.with_design(intervention, treated, donors)
    return ds


def serialize_panel(dataset: PanelDataset) -> str:
    """Canonical CSV text; ``load_panel(serialize_panel(d))`` reproduces ``d``."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    names = list(dataset.covariates)
    w.writerow([*CANONICAL_COLUMNS, *names])
    for i, u in enumerate(dataset.units):
        for t, p in enumerate(dataset.periods):
            row = [u, str(p), repr(float(dataset.outcome[i, t])), repr(float(dataset.mediator[i, t]))]
            row += [repr(float(dataset.covariates[c][i, t])) for c in names]
            w.writerow(row)
    return out.getvalue()


def write_panel(dataset: PanelDataset, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(serialize_panel(dataset))


# validation


@dataclass(frozen=True)
class Issue:
    code: str
    message: str
    location: str = ""


@dataclass
class ValidationReport:
    errors: list[Issue] = field(default_factory=list)
    warnings: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def error(self, code: str, message: str, location: str = "") -> None:
        self.errors.append(Issue(code, message, location))

    def warn(self, code: str, message: str, location: str = "") -> None:
        self.warnings.append(Issue(code, message, location))

    def format(self) -> str:
        lines = [f"ERROR {i.code}: {i.message}" + (f" [{i.location}]" if i.location else "") for i in self.errors]
        lines += [f"WARNING {i.code}: {i.message}" + (f" [{i.location}]" if i.location else "") for i in self.warnings]
        return "\n".join(lines)


SMALL_DONOR_POOL = 5


def validate(dataset: PanelDataset, config: Any) -> ValidationReport:
    """Check a dataset against an estimation config without raising.

    ``config`` needs ``treated``, ``donors``, ``intervention`` and
    ``predictors`` attributes (see :class:`masc.config.EstimationConfig`);
    missing attributes fall back to the dataset's own design.
    """
    report = ValidationReport()
    for name in ("outcome", "mediator", *dataset.covariates):
        arr = dataset.variable(name)
        bad = np.argwhere(~np.isfinite(arr))
        for i, t in bad[:10]:
            report.error("NonFinite", f"{name} is not finite", f"{dataset.units[i]},{dataset.periods[t]}")

    treated = list(getattr(config, "treated", None) or dataset.treated)
    donors = getattr(config, "donors", None)
    donors = list(donors) if donors else [u for u in dataset.units if u not in treated]
    intervention = getattr(config, "intervention", None) or dataset.intervention

    known = set(dataset.units)
    if not treated:
        report.error("NoTreated", "at least one treated unit is required")
    for u in treated:
        if u not in known:
            report.error("UnknownUnit", f"treated unit {u!r} not in data", u)
    for u in donors:
        if u not in known:
            report.error("UnknownUnit", f"donor {u!r} not in data", u)
    overlap = sorted(set(treated) & set(donors))
    if overlap:
        report.error("TreatedInDonorPool", f"units both treated and donors: {overlap}")
    if len(donors) < 2:
        report.error("DonorPoolTooSmall", f"donor pool has {len(donors)} units, need >= 2")
    elif len(donors) < SMALL_DONOR_POOL:
        report.warn("SmallDonorPool", f"donor pool has only {len(donors)} units")

    n_pre = None
    if intervention is None:
        report.error("NoIntervention", "intervention period not set")
    elif int(intervention) not in dataset.periods:
        report.error("UnknownPeriod", f"intervention period {intervention} not in data", str(intervention))
    else:
        n_pre = dataset.periods.index(int(intervention))
        if n_pre < 1:
            report.error("NoPrePeriod", "intervention leaves no pre-period", str(intervention))

    mode = getattr(config, "mediator_mode", None) or "single-lag"
    kind = getattr(mode, "kind", str(mode).split("(")[0])
    lag = getattr(mode, "lag", None)
    lag = (getattr(config, "lag", 0) or 0) if lag is None else lag
    if n_pre is not None and kind == "single-lag":
        if n_pre + lag >= dataset.n_periods:
            report.error("LagBeforeIntervention", f"lag {lag} leaves no estimable post period")

    units_for_checks = [u for u in (*treated, *donors) if u in known]
    for k, spec in enumerate(getattr(config, "predictors", None) or ()):
        loc = f"predictors[{k}]"
        a, b = spec.window
        if a > b:
            report.error("InvalidWindow", f"window start {a} after end {b}", loc)
            continue
        if a not in dataset.periods or b not in dataset.periods:
            report.error("UnknownPeriod", f"window {a}-{b} outside data periods", loc)
            continue
        if spec.variable == "covariate" and spec.name not in dataset.covariates:
            report.error("UnknownColumn", f"covariate {spec.name!r} not in data", loc)
            continue
        if intervention is not None and b >= int(intervention):
            report.error(
                "WindowCrossesIntervention",
                f"pre-period predictor window {a}-{b} reaches intervention {intervention}",
                loc,
            )
            continue
        if units_for_checks:
            idx = dataset.unit_indices(units_for_checks)
            cols = slice(dataset.periods.index(a), dataset.periods.index(b) + 1)
            vals = dataset.variable(spec.variable if spec.variable != "covariate" else spec.name)[idx, cols].mean(axis=1)
            if np.ptp(vals) == 0.0:
                report.warn("ConstantPredictor", f"predictor {spec.label} is constant across units", loc)
    return report
