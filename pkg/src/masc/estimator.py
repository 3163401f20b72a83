"""Synthetic counterfactuals and the total / direct / indirect effect estimates.

* total effect: one weight vector fitted on pre-intervention targets,
  ``alpha_t = Y_t - sum_i l_i Y_it``;
* direct effect: for every post period ``t'`` a fresh weight vector that also
  matches the treated unit's post-intervention mediator,
  ``theta_t' = Y_t' - sum_i w_it' Y_it'``;
* indirect effect: ``delta_t' = alpha_t' - theta_t'``.

With at least two treated units the alternative decomposition
``alpha = delta(1) + theta(M(0))`` is available through :func:`estimate_delta1`,
which first builds a synthetic counterfactual mediator and then matches it
using the other treated units as donors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    OverlapWarning,
    PeriodMisalignment,
    SmallTreatedPoolWarning,
    TooFewTreated,
)
from .panel import PanelDataset
from .predictors import (
    MediatorMode,
    PredictorSpec,
    _check_pre_specs,
    build_v,
    default_specs,
    every_period,
    evaluate_specs,
)
from .solver import SolverReport, WeightVector, solve_simplex_wls

OVERLAP_THRESHOLD = 0.2
EFFECTS = ("total", "direct", "indirect")


@dataclass(frozen=True)
class EstimationOptions:
    """Everything that shapes a single MASC fit besides the data and the units."""

    specs: tuple[PredictorSpec, ...] | None = None
    mediator_specs: tuple[PredictorSpec, ...] | None = None
    v_total: str = "uniform"
    v_direct: str = "equal-pre-post"
    v_user: Mapping[str, float] | None = None
    mediator_mode: MediatorMode = MediatorMode()
    standardize: bool = True
    tolerance: float = 1e-10
    max_iter: int | None = None
    warn_overlap: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "mediator_mode", MediatorMode.parse(self.mediator_mode))
        if self.specs is not None:
            object.__setattr__(self, "specs", tuple(self.specs))
        if self.mediator_specs is not None:
            object.__setattr__(self, "mediator_specs", tuple(self.mediator_specs))


def _options(options: EstimationOptions | None, overrides: dict) -> EstimationOptions:
    options = options or EstimationOptions()
    return replace(options, **overrides) if overrides else options


@dataclass(frozen=True)
class PeriodSeries:
    """Values indexed by period labels."""

    periods: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.periods),):
            raise DimensionMismatch("one value per period is required")
        object.__setattr__(self, "periods", tuple(int(p) for p in self.periods))
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.periods)

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.periods, self.values.tolist()))

    def restrict(self, periods: Sequence[int]) -> "PeriodSeries":
        pos = [self.periods.index(p) for p in periods]
        return PeriodSeries(tuple(periods), self.values[pos])


@dataclass(frozen=True)
class SyntheticSeries:
    target: str
    periods: tuple[int, ...]
    values: np.ndarray
    weights_by_period: Mapping[object, WeightVector]
    pre_fit_rmspe: float
    reports: Mapping[object, SolverReport] = field(default_factory=dict)

    def at(self, period: int) -> float:
        return float(self.values[self.periods.index(period)])


@dataclass(frozen=True)
class EffectSeries:
    post_periods: tuple[int, ...]
    total: np.ndarray
    direct: np.ndarray
    indirect: np.ndarray

    @classmethod
    def from_total_direct(cls, periods, total, direct) -> "EffectSeries":
        total = np.asarray(total, dtype=np.float64)
        direct = np.asarray(direct, dtype=np.float64)
        return cls(tuple(periods), total, direct, total - direct)

    def get(self, effect: str) -> np.ndarray:
        return getattr(self, effect)

    def rows(self) -> list[tuple[int, float, float, float]]:
        return [
            (p, float(a), float(d), float(i))
            for p, a, d, i in zip(self.post_periods, self.total, self.direct, self.indirect)
        ]


# target construction with per-dataset caching


class _Targets:
    """Pre-period spec values and scales for every unit, computed once."""

    def __init__(self, dataset: PanelDataset, specs: Sequence[PredictorSpec], standardize: bool):
        _check_pre_specs(dataset, specs)
        self.dataset = dataset
        self.specs = list(specs)
        self.labels = tuple(s.label for s in self.specs)
        self.matrix = evaluate_specs(dataset, np.arange(dataset.n_units), self.specs)
        self.standardize = standardize
        self.scale = self._sd(self.matrix) if standardize else np.ones(len(self.specs))

    @staticmethod
    def _sd(mat: np.ndarray) -> np.ndarray:
        sd = mat.std(axis=0)
        const = sd <= 1e-12 * np.maximum(1.0, np.abs(mat).max(axis=0))
        return np.where(const, 1.0, sd)

    def alpha(self, treated_idx: int, donor_idx: np.ndarray):
        x1 = self.matrix[treated_idx] / self.scale
        x0 = self.matrix[donor_idx] / self.scale
        return x1, x0, self.labels, np.zeros(len(self.labels), bool)

    def theta(self, treated_idx, donor_idx, post_pos, mediator, treated_mediator=None):
        extra = mediator[:, post_pos]
        escale = self._sd(extra) if self.standardize else np.ones(len(post_pos))
        t_extra = extra[treated_idx] if treated_mediator is None else np.asarray(treated_mediator)[post_pos]
        x1 = np.r_[self.matrix[treated_idx] / self.scale, t_extra / escale]
        x0 = np.hstack([self.matrix[donor_idx] / self.scale, extra[donor_idx] / escale])
        labels = self.labels + tuple(f"mediator[{self.dataset.periods[p]}]@post" for p in post_pos)
        post = np.r_[np.zeros(len(self.labels), bool), np.ones(len(post_pos), bool)]
        return x1, x0, labels, post


def _solve(x1, x0, labels, post, v_mode, opts: EstimationOptions, donors):
    v = build_v(labels, v_mode, opts.v_user, post=post)
    return solve_simplex_wls(
        x1, x0, v, tolerance=opts.tolerance, max_iter=opts.max_iter, donor_ids=donors
    )


def rmspe_of(gaps: np.ndarray) -> float:
    gaps = np.asarray(gaps, dtype=np.float64)
    return float(np.sqrt(np.mean(gaps * gaps))) if gaps.size else 0.0


def _check_overlap(dataset, t_idx, pre_rmspe, treated, what, opts):
    if not opts.warn_overlap:
        return
    sd = float(np.std(dataset.outcome[t_idx, : dataset.n_pre]))
    if sd > 0 and pre_rmspe > OVERLAP_THRESHOLD * sd:
        warnings.warn(
            f"{what} pre-period fit for {treated!r} is poor "
            f"(RMSPE {pre_rmspe:.4g} > {OVERLAP_THRESHOLD} x sd {sd:.4g})",
            OverlapWarning,
            stacklevel=3,
        )


def _donor_list(dataset: PanelDataset, treated: str, donors: Sequence[str] | None) -> list[str]:
    donors = list(dataset.donors if donors is None else donors)
    if not donors:
        donors = [u for u in dataset.units if u not in dataset.treated and u != treated]
    if treated in donors:
        raise ValueError(f"treated unit {treated!r} is in its own donor pool")
    return donors


def _targets(dataset, opts, specs=None) -> _Targets:
    specs = specs if specs is not None else (opts.specs if opts.specs is not None else default_specs(dataset))
    return _Targets(dataset, specs, opts.standardize)


def estimate_total(
    dataset: PanelDataset,
    treated: str,
    donors: Sequence[str] | None = None,
    options: EstimationOptions | None = None,
    *,
    _cache: _Targets | None = None,
    **overrides,
) -> tuple[SyntheticSeries, PeriodSeries]:
    """Standard synthetic control for ``Y^{0,0}`` and the total effect."""
    opts = _options(options, overrides)
    donors = _donor_list(dataset, treated, donors)
    tg = _cache or _targets(dataset, opts)
    t_idx, d_idx = dataset.unit_index(treated), dataset.unit_indices(donors)
    x1, x0, labels, post = tg.alpha(t_idx, d_idx)
    w, rep = _solve(x1, x0, labels, post, opts.v_total, opts, donors)
    values = w.weights @ dataset.outcome[d_idx]
    n_pre = dataset.n_pre
    gaps = dataset.outcome[t_idx] - values
    pre = rmspe_of(gaps[:n_pre])
    _check_overlap(dataset, t_idx, pre, treated, "total-effect", opts)
    series = SyntheticSeries("Y00", dataset.periods, values, {"all": w}, pre, {"all": rep})
    return series, PeriodSeries(dataset.post_periods, gaps[n_pre:])


def estimate_direct(
    dataset: PanelDataset,
    treated: str,
    donors: Sequence[str] | None = None,
    options: EstimationOptions | None = None,
    *,
    _cache: _Targets | None = None,
    **overrides,
) -> tuple[SyntheticSeries, PeriodSeries]:
    """Synthetic ``Y^{0,1}`` re-fitted at every post period, and the direct effect.

    Pre-period values of the returned series use the average of the
    per-period weight vectors (itself a point of the simplex).
    """
    opts = _options(options, overrides)
    donors = _donor_list(dataset, treated, donors)
    tg = _cache or _targets(dataset, opts)
    t_idx, d_idx = dataset.unit_index(treated), dataset.unit_indices(donors)
    n_pre, mode = dataset.n_pre, opts.mediator_mode
    first = mode.first_estimable(n_pre)
    positions = list(range(first, dataset.n_periods))
    if not positions:
        raise ValueError("no post period is estimable with this mediator mode")
    weights, reports = {}, {}
    values = np.empty(dataset.n_periods)
    Yd = dataset.outcome[d_idx]
    for pos in positions:
        x1, x0, labels, post = tg.theta(t_idx, d_idx, mode.post_positions(n_pre, pos), dataset.mediator)
        w, rep = _solve(x1, x0, labels, post, opts.v_direct, opts, donors)
        period = dataset.periods[pos]
        weights[period], reports[period] = w, rep
        values[pos] = w.weights @ Yd[:, pos]
    mean_w = np.mean([w.weights for w in weights.values()], axis=0)
    other = [p for p in range(dataset.n_periods) if p not in set(positions)]
    values[other] = mean_w @ Yd[:, other]
    gaps = dataset.outcome[t_idx] - values
    pre = rmspe_of(gaps[:n_pre])
    _check_overlap(dataset, t_idx, pre, treated, "direct-effect", opts)
    series = SyntheticSeries("Y01", dataset.periods, values, weights, pre, reports)
    periods = tuple(dataset.periods[p] for p in positions)
    return series, PeriodSeries(periods, gaps[positions])


def estimate_indirect(total: PeriodSeries, direct: PeriodSeries) -> PeriodSeries:
    """Indirect effect as total minus direct, on identical periods."""
    if tuple(total.periods) != tuple(direct.periods):
        raise PeriodMisalignment(f"total periods {total.periods} != direct periods {direct.periods}")
    return PeriodSeries(total.periods, total.values - direct.values)


def estimate_counterfactual_mediator(
    dataset: PanelDataset,
    treated: str,
    donors: Sequence[str] | None = None,
    options: EstimationOptions | None = None,
    **overrides,
) -> SyntheticSeries:
    """Synthetic mediator path without the intervention.

    Matches pre-period mediator targets only (``options.mediator_specs``;
    default: every pre-period mediator value) and applies one weight vector
    to every period.
    """
    opts = _options(options, overrides)
    donors = _donor_list(dataset, treated, donors)
    specs = opts.mediator_specs if opts.mediator_specs is not None else every_period("mediator", dataset.pre_periods)
    tg = _Targets(dataset, specs, opts.standardize)
    t_idx, d_idx = dataset.unit_index(treated), dataset.unit_indices(donors)
    x1, x0, labels, post = tg.alpha(t_idx, d_idx)
    w, rep = _solve(x1, x0, labels, post, "uniform", opts, donors)
    values = w.weights @ dataset.mediator[d_idx]
    pre = rmspe_of(dataset.mediator[t_idx, : dataset.n_pre] - values[: dataset.n_pre])
    return SyntheticSeries("M0", dataset.periods, values, {"all": w}, pre, {"all": rep})


@dataclass(frozen=True)
class Delta1Result:
    y10: SyntheticSeries
    m0: SyntheticSeries
    total: PeriodSeries
    delta1: PeriodSeries
    theta0: PeriodSeries


def estimate_delta1(
    dataset: PanelDataset,
    treated: str,
    other_treated: Sequence[str],
    donors: Sequence[str] | None = None,
    options: EstimationOptions | None = None,
    **overrides,
) -> Delta1Result:
    """Two-step synthetic ``Y^{1,0}`` and the decomposition ``alpha = delta(1) + theta(M(0))``.

    Step one estimates the treated unit's mediator without the intervention
    from the donor pool. Step two matches the treated unit's pre-period
    targets plus that counterfactual mediator, using the *other treated*
    units as donors. Unbiasedness relies on the treatment-effect function
    being linear in the mediator; nothing here checks that.
    """
    opts = _options(options, overrides)
    other_treated = [u for u in other_treated if u != treated]
    if not other_treated:
        raise TooFewTreated("the two-step estimator needs at least 2 treated units")
    if len(other_treated) < 5:
        warnings.warn(
            f"only {len(other_treated)} other treated units: synthetic Y10 may be a poor approximation",
            SmallTreatedPoolWarning,
            stacklevel=2,
        )
    donors = _donor_list(dataset, treated, donors)
    m0 = estimate_counterfactual_mediator(dataset, treated, donors, opts)
    y00, total = estimate_total(dataset, treated, donors, opts)

    t_idx = dataset.unit_index(treated)
    q_idx = dataset.unit_indices(other_treated)
    treated_med = dataset.mediator[t_idx].copy()
    n_pre, mode = dataset.n_pre, opts.mediator_mode
    treated_med[n_pre:] = m0.values[n_pre:]
    tg = _targets(dataset, opts)
    positions = list(range(mode.first_estimable(n_pre), dataset.n_periods))
    weights, reports = {}, {}
    values = np.empty(dataset.n_periods)
    Yq = dataset.outcome[q_idx]
    for pos in positions:
        period = dataset.periods[pos]
        if len(other_treated) == 1:
            w = WeightVector(tuple(other_treated), np.ones(1))
            rep = SolverReport(0.0, 0, True, 0.0, "single-donor")
        else:
            x1, x0, labels, post = tg.theta(t_idx, q_idx, mode.post_positions(n_pre, pos), dataset.mediator, treated_med)
            w, rep = _solve(x1, x0, labels, post, opts.v_direct, opts, other_treated)
        weights[period], reports[period] = w, rep
        values[pos] = w.weights @ Yq[:, pos]
    mean_w = np.mean([w.weights for w in weights.values()], axis=0)
    other = [p for p in range(dataset.n_periods) if p not in set(positions)]
    values[other] = mean_w @ Yq[:, other]
    gaps = dataset.outcome[t_idx] - values
    y10 = SyntheticSeries("Y10", dataset.periods, values, weights, rmspe_of(gaps[:n_pre]), reports)
    periods = tuple(dataset.periods[p] for p in positions)
    delta1 = PeriodSeries(periods, gaps[positions])
    total = total.restrict(periods)
    theta0 = PeriodSeries(periods, total.values - delta1.values)
    return Delta1Result(y10, m0, total, delta1, theta0)


@dataclass(frozen=True)
class MascResult:
    """One treated unit's full MASC fit."""

    treated: str
    donors: tuple[str, ...]
    periods: tuple[int, ...]
    n_pre: int
    observed: np.ndarray
    y00: SyntheticSeries
    y01: SyntheticSeries
    effects: EffectSeries
    m0: SyntheticSeries | None = None

    def gaps(self, effect: str) -> np.ndarray:
        """Gap path over all periods whose post part is the effect estimate."""
        total = self.observed - self.y00.values
        direct = self.observed - self.y01.values
        if effect == "total":
            return total
        if effect == "direct":
            return direct
        if effect == "indirect":
            return total - direct
        raise ValueError(f"unknown effect {effect!r}")

    def effect_positions(self) -> list[int]:
        return [self.periods.index(p) for p in self.effects.post_periods]

    def fit_summary(self) -> dict:
        pos = self.effect_positions()
        out = {}
        for e in EFFECTS:
            g = self.gaps(e)
            out[e] = {"pre_rmspe": rmspe_of(g[: self.n_pre]), "post_rmspe": rmspe_of(g[pos])}
        if self.m0 is not None:
            out["mediator"] = {"pre_rmspe": self.m0.pre_fit_rmspe}
        return out


def estimate(
    dataset: PanelDataset,
    treated: str,
    donors: Sequence[str] | None = None,
    options: EstimationOptions | None = None,
    *,
    with_mediator: bool = False,
    **overrides,
) -> MascResult:
    """Total, direct and indirect effects for one treated unit."""
    opts = _options(options, overrides)
    donors = _donor_list(dataset, treated, donors)
    tg = _targets(dataset, opts)
    y00, total = estimate_total(dataset, treated, donors, opts, _cache=tg)
    y01, direct = estimate_direct(dataset, treated, donors, opts, _cache=tg)
    total = total.restrict(direct.periods)
    effects = EffectSeries.from_total_direct(direct.periods, total.values, direct.values)
    m0 = estimate_counterfactual_mediator(dataset, treated, donors, opts) if with_mediator else None
    return MascResult(
        treated=treated,
        donors=tuple(donors),
        periods=dataset.periods,
        n_pre=dataset.n_pre,
        observed=np.array(dataset.outcome[dataset.unit_index(treated)]),
        y00=y00,
        y01=y01,
        effects=effects,
        m0=m0,
    )


def check_decomposition(rows, tol: float = 1e-12) -> list[tuple[object, float]]:
    """Rows ``(period, total, direct, indirect)`` whose identity residual exceeds ``tol``.

    Returns ``(period, residual)`` for every violating row; an empty list
    means the table is consistent.
    """
    bad = []
    for row in rows:
        if isinstance(row, Mapping):
            period, total, direct, indirect = row["period"], row["total"], row["direct"], row["indirect"]
        else:
            period, total, direct, indirect = row
        resid = float(total) - (float(direct) + float(indirect))
        if not abs(resid) <= tol:
            bad.append((period, resid))
    return bad
