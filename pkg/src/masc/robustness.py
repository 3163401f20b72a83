"""Leave-one-out sensitivity of the effect estimates to the donor pool."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ._parallel import pmap
from .errors import DonorPoolTooSmall, MascError
from .estimator import EFFECTS, EffectSeries, EstimationOptions, MascResult, estimate
from .panel import PanelDataset


@dataclass(frozen=True, eq=False)
class LooResult:
    baseline: EffectSeries
    variants: Mapping[str, EffectSeries | None]
    max_abs_deviation: Mapping[str, float]
    failed: Mapping[str, str] = field(default_factory=dict)
    baseline_fit: MascResult | None = field(default=None, repr=False)

    def deviation(self, donor: str, effect: str) -> float:
        """Largest absolute change of ``effect`` when ``donor`` is left out."""
        v = self.variants[donor]
        if v is None:
            return float("nan")
        return float(np.max(np.abs(v.get(effect) - self.baseline.get(effect))))


def inactive_donors(result: MascResult, tol: float = 1e-10) -> list[str]:
    """Donors whose weight is below ``tol`` in every weight vector of the fit."""
    vectors = list(result.y00.weights_by_period.values()) + list(result.y01.weights_by_period.values())
    return [d for d in result.donors if all(w[d] < tol for w in vectors)]


def _loo_task(args):
    dataset, treated, pool, options, left_out = args
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return left_out, estimate(dataset, treated, pool, options).effects, None
    except (MascError, np.linalg.LinAlgError, ValueError) as exc:
        return left_out, None, f"{type(exc).__name__}: {exc}"


def leave_one_out(
    dataset: PanelDataset,
    treated: str,
    donors: Sequence[str] | None = None,
    options: EstimationOptions | None = None,
    effects: Sequence[str] = EFFECTS,
    *,
    baseline: MascResult | None = None,
    jobs: int = 1,
) -> LooResult:
    """Re-estimate once per donor with that donor removed from the pool.

    Failed variants are recorded in ``failed`` (variant ``None``) and skipped
    in ``max_abs_deviation``.
    """
    donors = list(dataset.donors if donors is None else donors)
    if len(donors) < 3:
        raise DonorPoolTooSmall("leave-one-out needs at least 3 donors")
    if baseline is None:
        baseline = estimate(dataset, treated, donors, options)
    tasks = [(dataset, treated, [d for d in donors if d != j], options, j) for j in donors]
    variants, failed = {}, {}
    for j, fx, err in pmap(_loo_task, tasks, jobs):
        variants[j] = fx
        if fx is None:
            failed[j] = err
    dev = {}
    for e in effects:
        vals = [np.max(np.abs(v.get(e) - baseline.effects.get(e))) for v in variants.values() if v is not None]
        dev[e] = float(max(vals)) if vals else float("nan")
    return LooResult(baseline.effects, variants, dev, failed, baseline)
