"""Prediction-error statistics, in-space placebo tests and resampling inference."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ._parallel import pmap
from .errors import (
    DimensionMismatch,
    EmptyWindow,
    InsufficientUnits,
    MascError,
    NotEstimated,
    PlaceboFailureWarning,
)
from .estimator import EFFECTS, EstimationOptions, MascResult, estimate
from .panel import PanelDataset

PERFECT_FIT = 1e-12
DENOMINATORS = ("donors", "donors+1")


def rmspe(actual, synthetic, window=None) -> float:
    """Root mean squared gap between two aligned series over ``window``.

    ``window`` is a slice, an index sequence or a boolean mask (default: all
    entries). The mean divides by the number of terms in the window.
    """
    a = np.asarray(actual, dtype=np.float64)
    s = np.asarray(synthetic, dtype=np.float64)
    if a.shape != s.shape:
        raise DimensionMismatch(f"series lengths differ: {a.shape} vs {s.shape}")
    gaps = (a - s) if window is None else (a - s)[window]
    if gaps.size == 0:
        raise EmptyWindow("RMSPE window is empty")
    return float(np.sqrt(np.mean(gaps * gaps)))


class RatioStatistic(float):
    """Post/pre RMSPE ratio; ``perfect_pre_fit`` marks the infinite sentinel."""

    perfect_pre_fit: bool

    def __new__(cls, value: float, perfect_pre_fit: bool = False):
        obj = super().__new__(cls, value)
        obj.perfect_pre_fit = perfect_pre_fit
        return obj

    def __reduce__(self):
        return (RatioStatistic, (float(self), self.perfect_pre_fit))


def ratio_statistic(pre_rmspe: float, post_rmspe: float) -> RatioStatistic:
    if pre_rmspe < 0 or post_rmspe < 0:
        raise ValueError("RMSPE values are non-negative")
    if pre_rmspe < PERFECT_FIT:
        return RatioStatistic(np.inf, True)
    return RatioStatistic(post_rmspe / pre_rmspe)


def _normalized_gaps(gaps: np.ndarray, pre: float) -> np.ndarray:
    if pre >= PERFECT_FIT:
        return np.abs(gaps) / pre
    # zero gaps stay zero under a perfect pre-fit, everything else is infinite
    return np.where(np.abs(gaps) > 0, np.inf, 0.0)


def _unit_stats(res: MascResult, effects: Sequence[str]):
    pos = res.effect_positions()
    per_unit, per_period = {}, {}
    for e in effects:
        g = res.gaps(e)
        pre = rmspe(g, np.zeros_like(g), slice(0, res.n_pre))
        post = rmspe(g, np.zeros_like(g), pos)
        per_unit[e] = {"pre_rmspe": pre, "post_rmspe": post, "ratio": ratio_statistic(pre, post)}
        per_period[e] = _normalized_gaps(g[pos], pre)
    return per_unit, per_period


def _p(count: int, n: int, denominator: str) -> float:
    if denominator == "donors":
        return count / n
    return (count + 1) / (n + 1)


@dataclass(frozen=True, eq=False)
class PlaceboResult:
    treated: str
    effects: tuple[str, ...]
    post_periods: tuple[int, ...]
    per_unit_stats: Mapping[str, Mapping[str, Mapping[str, float]]]
    per_period_stats: Mapping[tuple[str, int], Mapping[str, float]]
    p_overall: Mapping[str, float]
    p_per_period: Mapping[tuple[str, int], float]
    n_placebos: int
    denominator: str
    failed: tuple[str, ...] = ()
    baseline: MascResult | None = field(default=None, repr=False)

    def below_resolution(self, effect: str) -> bool:
        """True when no placebo reached the treated statistic (reported as ``< 1/J``)."""
        return self.denominator == "donors" and self.p_overall[effect] == 0.0


def _placebo_task(args):
    dataset, unit, pool, options = args
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return unit, estimate(dataset, unit, pool, options), None
    except (MascError, np.linalg.LinAlgError, ValueError) as exc:
        return unit, None, f"{type(exc).__name__}: {exc}"


def placebo_test(
    dataset: PanelDataset,
    treated: str,
    donors: Sequence[str] | None = None,
    options: EstimationOptions | None = None,
    effects: Sequence[str] = EFFECTS,
    *,
    pvalue_denominator: str = "donors",
    baseline: MascResult | None = None,
    jobs: int = 1,
) -> PlaceboResult:
    """In-space placebo test.

    Every donor is cast as treated in turn, with all *other* donors as its
    pool (the real treated unit never enters a placebo pool). The overall
    p-value of an effect is the share of placebos whose post/pre RMSPE ratio
    is at least the treated unit's; per-period p-values rank ``|gap_t|``
    normalized by the unit's pre-period RMSPE. Placebos whose estimation
    fails are dropped with a :class:`PlaceboFailureWarning`.
    """
    if pvalue_denominator not in DENOMINATORS:
        raise ValueError(f"pvalue_denominator must be one of {DENOMINATORS}")
    effects = tuple(effects)
    for e in effects:
        if e not in EFFECTS:
            raise ValueError(f"unknown effect {e!r}")
    donors = list(dataset.donors if donors is None else donors)
    if len(donors) < 3:
        raise InsufficientUnits("placebo runs need at least 3 donors (each placebo needs 2)")
    if baseline is None:
        baseline = estimate(dataset, treated, donors, options)
    tasks = [(dataset, j, [d for d in donors if d != j], options) for j in donors]
    outcomes = pmap(_placebo_task, tasks, jobs)

    results = {treated: baseline}
    failed = []
    for unit, res, err in outcomes:
        if res is None:
            warnings.warn(f"placebo for {unit!r} dropped: {err}", PlaceboFailureWarning, stacklevel=2)
            failed.append(unit)
        else:
            results[unit] = res
    placebos = [u for u in donors if u in results]
    if not placebos:
        raise InsufficientUnits("every placebo estimation failed")

    per_unit, per_period_raw = {}, {}
    for unit, res in results.items():
        per_unit[unit], per_period_raw[unit] = _unit_stats(res, effects)
    periods = baseline.effects.post_periods
    per_period = {
        (unit, t): {e: float(per_period_raw[unit][e][k]) for e in effects}
        for unit in results
        for k, t in enumerate(periods)
    }
    J = len(placebos)
    p_overall, p_per_period = {}, {}
    for e in effects:
        ref = per_unit[treated][e]["ratio"]
        count = sum(per_unit[j][e]["ratio"] >= ref for j in placebos)
        p_overall[e] = _p(int(count), J, pvalue_denominator)
        ref_t = per_period_raw[treated][e]
        stacked = np.array([per_period_raw[j][e] for j in placebos])
        counts = (stacked >= ref_t[None, :]).sum(axis=0)
        for k, t in enumerate(periods):
            p_per_period[(e, t)] = _p(int(counts[k]), J, pvalue_denominator)
    return PlaceboResult(
        treated=treated,
        effects=effects,
        post_periods=periods,
        per_unit_stats=per_unit,
        per_period_stats=per_period,
        p_overall=p_overall,
        p_per_period=p_per_period,
        n_placebos=J,
        denominator=pvalue_denominator,
        failed=tuple(failed),
        baseline=baseline,
    )


# resampling


@dataclass(frozen=True, eq=False)
class ResamplingResult:
    """Effect draws from randomly re-assigned treatment on the de-treated panel.

    ``draws`` has shape ``(n_iter, 3, n_periods)`` with effects ordered as
    total, direct, indirect; ``observed`` has shape ``(3, n_periods)``.
    Iterations whose estimation failed are NaN and excluded from p-values.
    """

    periods: tuple[int, ...]
    draws: np.ndarray
    observed: np.ndarray
    subsets: tuple[tuple[str, ...], ...]
    p_values: Mapping[tuple[str, int], float]
    p_overall: Mapping[str, float]
    n_iter: int
    seed: int

    def exceeds_quantile(self, effect: str, q: float = 0.95) -> bool:
        """Whether ``|observed|`` (post-period mean) is above the ``q`` quantile of ``|draws|``."""
        k = EFFECTS.index(effect)
        d = np.abs(np.nanmean(self.draws[:, k, :], axis=1))
        d = d[np.isfinite(d)]
        return bool(abs(self.observed[k].mean()) > np.quantile(d, q))

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_iter": self.n_iter,
                "seed": self.seed,
                "periods": list(self.periods),
                "subsets": [list(s) for s in self.subsets],
                "observed": self.observed.tolist(),
                "draws": self.draws.tolist(),
                "p_values": {f"{e}@{t}": p for (e, t), p in self.p_values.items()},
                "p_overall": dict(self.p_overall),
            },
            sort_keys=True,
        )


def detreat(
    dataset: PanelDataset, estimates: Mapping[str, MascResult]
) -> PanelDataset:
    """Remove the estimated effects from the treated units' post-period data.

    The outcome loses the cross-treated average total effect at each post
    period; the mediator loses the cross-treated average of ``M - M_hat(0)``.
    """
    treated = list(estimates)
    n_pre = dataset.n_pre
    for u in treated:
        if estimates[u].m0 is None:
            raise NotEstimated(f"no counterfactual mediator for {u!r}; estimate with_mediator=True")
    idx = dataset.unit_indices(treated)
    alpha = np.mean([estimates[u].gaps("total")[n_pre:] for u in treated], axis=0)
    shift = np.mean(
        [dataset.mediator[dataset.unit_index(u), n_pre:] - estimates[u].m0.values[n_pre:] for u in treated],
        axis=0,
    )
    Y = np.array(dataset.outcome)
    M = np.array(dataset.mediator)
    Y[idx, n_pre:] -= alpha
    M[idx, n_pre:] -= shift
    return dataset.replace_values(outcome=Y, mediator=M)


def _resample_task(args):
    dataset, subset, options = args
    donors = [u for u in dataset.units if u not in subset]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            fx = [estimate(dataset, u, donors, options).effects for u in subset]
        except (MascError, np.linalg.LinAlgError, ValueError):
            return subset, None
    return subset, np.array([[f.get(e) for e in EFFECTS] for f in fx]).mean(axis=0)


def resampling_inference(
    dataset: PanelDataset,
    estimates: Mapping[str, MascResult] | None,
    options: EstimationOptions | None = None,
    n_iter: int = 10_000,
    seed: int = 0,
    *,
    jobs: int = 1,
) -> ResamplingResult:
    """Distribution of effects under re-assigned treatment.

    ``estimates`` maps every treated unit to its fit (with the counterfactual
    mediator). After :func:`detreat`, each iteration draws as many
    pseudo-treated units as there are treated units, without replacement,
    from all units; the remaining units form the donor pool; the recorded
    draw is the pseudo-treated average of each effect. Iteration ``i`` uses
    the random stream ``(seed, i)``, and repeated subsets are estimated once.
    """
    if not estimates:
        raise NotEstimated("resampling needs the baseline estimates of every treated unit")
    treated = list(estimates)
    n, N = len(treated), dataset.n_units
    if n >= N - 1:
        raise InsufficientUnits(f"{n} treated units leave fewer than 2 donors among {N} units")
    if n_iter < 1:
        raise ValueError("n_iter must be positive")
    periods = estimates[treated[0]].effects.post_periods
    observed = np.array([[estimates[u].effects.get(e) for e in EFFECTS] for u in treated]).mean(axis=0)

    base = detreat(dataset, estimates)
    units = np.array(dataset.units)
    subsets = []
    for i in range(n_iter):
        rng = np.random.default_rng([seed, i])
        subsets.append(tuple(sorted(units[rng.choice(N, size=n, replace=False)].tolist())))
    unique = sorted(set(subsets))
    computed = dict(pmap(_resample_task, [(base, s, options) for s in unique], jobs))
    nan = np.full((len(EFFECTS), len(periods)), np.nan)
    draws = np.array([nan if computed[s] is None else computed[s] for s in subsets])

    p_values, p_overall = {}, {}
    ok = np.isfinite(draws).all(axis=(1, 2))
    valid = draws[ok]
    if valid.shape[0] == 0:
        raise InsufficientUnits("every resampling iteration failed")
    for k, e in enumerate(EFFECTS):
        hits = np.abs(valid[:, k, :]) >= np.abs(observed[k])[None, :]
        for j, t in enumerate(periods):
            p_values[(e, t)] = float(hits[:, j].mean())
        p_overall[e] = float(
            (np.abs(valid[:, k, :].mean(axis=1)) >= abs(observed[k].mean())).mean()
        )
    return ResamplingResult(
        periods=periods,
        draws=draws,
        observed=observed,
        subsets=tuple(subsets),
        p_values=p_values,
        p_overall=p_overall,
        n_iter=n_iter,
        seed=seed,
    )
