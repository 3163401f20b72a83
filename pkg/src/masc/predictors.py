"""Matching targets for the synthetic-control weight problems.

A :class:`PredictorSpec` describes one scalar characteristic (the mean of a
variable over an inclusive window of pre-intervention periods). Evaluating a
list of specs for the treated unit and each donor gives the target vector and
the donor matrix handed to :func:`masc.solver.solve_simplex_wls`. Direct-effect
problems append post-intervention mediator values to both.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ConstantPredictorWarning,
    EmptySpecList,
    EqualPrePostWithoutPostLabels,
    LagBeforeIntervention,
    PredictorError,
    WindowCrossesIntervention,
    ZeroOrNegativeUserWeight,
)
from .panel import PanelDataset

VARIABLES = ("outcome", "mediator", "covariate")


@dataclass(frozen=True)
class PredictorSpec:
    """Mean of ``variable`` over the inclusive period-label window ``[a, b]``."""

    variable: str
    window: tuple[int, int]
    name: str | None = None
    aggregation: str = "mean"

    def __post_init__(self) -> None:
        if self.variable not in VARIABLES:
            raise PredictorError(f"unknown predictor variable {self.variable!r}")
        if self.variable == "covariate" and not self.name:
            raise PredictorError("covariate predictors need a name")
        if self.aggregation != "mean":
            raise PredictorError(f"unsupported aggregation {self.aggregation!r}")
        a, b = (int(x) for x in self.window)
        if a > b:
            raise PredictorError(f"window start {a} after end {b}")
        object.__setattr__(self, "window", (a, b))

    @property
    def column(self) -> str:
        return self.name if self.variable == "covariate" else self.variable

    @property
    def label(self) -> str:
        a, b = self.window
        span = str(a) if a == b else f"{a}-{b}"
        return f"{self.column}[{span}]"

    def to_dict(self) -> dict:
        d = {"variable": self.variable, "window": list(self.window), "aggregation": self.aggregation}
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "PredictorSpec":
        window = d.get("window")
        if window is None:
            raise PredictorError("predictor needs a window")
        if isinstance(window, (int, float)):
            window = (int(window), int(window))
        return cls(
            variable=str(d["variable"]),
            window=tuple(window),
            name=d.get("name"),
            aggregation=str(d.get("aggregation", "mean")),
        )


def every_period(variable: str, periods: Sequence[int], name: str | None = None) -> list[PredictorSpec]:
    return [PredictorSpec(variable, (p, p), name) for p in periods]


def default_specs(dataset: PanelDataset) -> list[PredictorSpec]:
    """Every pre-period outcome value followed by every pre-period mediator value."""
    pre = dataset.pre_periods
    return every_period("outcome", pre) + every_period("mediator", pre)


@dataclass(frozen=True)
class MediatorMode:
    """How post-period mediator values enter the direct-effect targets.

    ``single-lag`` with lag ``k`` adds ``M[t' - k]``; ``full-path`` adds
    every mediator value from the intervention up to ``t'``.
    """

    kind: str = "single-lag"
    lag: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("single-lag", "full-path"):
            raise PredictorError(f"unknown mediator mode {self.kind!r}")
        if self.lag < 0:
            raise PredictorError("lag must be non-negative")

    @classmethod
    def parse(cls, text: "str | MediatorMode") -> "MediatorMode":
        if isinstance(text, MediatorMode):
            return text
        text = text.strip()
        if text == "full-path":
            return cls("full-path", 0)
        m = re.fullmatch(r"single-lag(?:\((\d+)\))?", text)
        if not m:
            raise PredictorError(f"cannot parse mediator mode {text!r}")
        return cls("single-lag", int(m.group(1) or 0))

    def __str__(self) -> str:
        return "full-path" if self.kind == "full-path" else f"single-lag({self.lag})"

    def post_positions(self, n_pre: int, t_prime: int) -> list[int]:
        """Period positions of the appended mediator entries for position ``t_prime``."""
        if self.kind == "full-path":
            return list(range(n_pre, t_prime + 1))
        src = t_prime - self.lag
        if src < n_pre:
            raise LagBeforeIntervention(
                f"lag {self.lag} at post position {t_prime} points before the intervention"
            )
        return [src]

    def first_estimable(self, n_pre: int) -> int:
        return n_pre + (self.lag if self.kind == "single-lag" else 0)


@dataclass(frozen=True)
class PredictorVector:
    labels: tuple[str, ...]
    values: np.ndarray
    post: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        post = np.asarray(self.post, dtype=bool)
        if values.shape != (len(self.labels),) or post.shape != values.shape:
            raise PredictorError("labels, values and post flags must align")
        if len(set(self.labels)) != len(self.labels):
            raise PredictorError("predictor labels must be unique")
        if not np.all(np.isfinite(values)):
            raise PredictorError("predictor values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "post", post)

    def __len__(self) -> int:
        return len(self.labels)


def _check_pre_specs(dataset: PanelDataset, specs: Sequence[PredictorSpec]) -> None:
    if not specs:
        raise EmptySpecList("at least one predictor spec is required")
    for s in specs:
        if s.window[1] >= dataset.intervention:
            raise WindowCrossesIntervention(
                f"{s.label} reaches the intervention period {dataset.intervention}"
            )


def evaluate_specs(dataset: PanelDataset, unit_idx: np.ndarray, specs: Sequence[PredictorSpec]) -> np.ndarray:
    """Matrix ``[unit, spec]`` of window means."""
    out = np.empty((len(unit_idx), len(specs)))
    for k, s in enumerate(specs):
        a, b = dataset.period_index(s.window[0]), dataset.period_index(s.window[1])
        out[:, k] = dataset.variable(s.column)[unit_idx, a : b + 1].mean(axis=1)
    return out


def _stack(dataset, idx, specs, post_pos, mediator):
    pre = evaluate_specs(dataset, idx, specs)
    if not post_pos:
        return pre
    return np.hstack([pre, mediator[np.ix_(idx, post_pos)]])


def _labels(dataset, specs, post_pos):
    return tuple(s.label for s in specs) + tuple(f"mediator[{dataset.periods[p]}]@post" for p in post_pos)


def build_alpha_targets(
    dataset: PanelDataset,
    treated: str,
    donors: Sequence[str],
    specs: Sequence[PredictorSpec] | None = None,
) -> tuple[PredictorVector, np.ndarray]:
    """Target vector for the treated unit and the donor matrix (rows = donors).

    Only pre-intervention information enters; ``specs`` defaults to
    :func:`default_specs`.
    """
    specs = default_specs(dataset) if specs is None else list(specs)
    _check_pre_specs(dataset, specs)
    idx = dataset.unit_indices([treated, *donors])
    mat = evaluate_specs(dataset, idx, specs)
    labels = _labels(dataset, specs, [])
    return PredictorVector(labels, mat[0], np.zeros(len(labels), bool)), mat[1:]


def build_theta_targets(
    dataset: PanelDataset,
    treated: str,
    donors: Sequence[str],
    specs: Sequence[PredictorSpec] | None,
    t_prime: int,
    mediator_mode: "MediatorMode | str" = MediatorMode(),
    treated_mediator: np.ndarray | None = None,
) -> tuple[PredictorVector, np.ndarray]:
    """Alpha targets extended by post-intervention mediator entries.

    ``t_prime`` is a period label at or after the intervention.
    ``treated_mediator`` optionally overrides the treated unit's mediator
    path (used when the target is an estimated counterfactual mediator).
    """
    mode = MediatorMode.parse(mediator_mode)
    specs = default_specs(dataset) if specs is None else list(specs)
    _check_pre_specs(dataset, specs)
    n_pre = dataset.n_pre
    pos = dataset.period_index(t_prime)
    if pos < n_pre:
        raise LagBeforeIntervention(f"period {t_prime} is before the intervention")
    post_pos = mode.post_positions(n_pre, pos)
    idx = dataset.unit_indices([treated, *donors])
    mat = _stack(dataset, idx, specs, post_pos, dataset.mediator)
    if treated_mediator is not None:
        mat[0, len(specs):] = np.asarray(treated_mediator, dtype=float)[post_pos]
    labels = _labels(dataset, specs, post_pos)
    post = np.r_[np.zeros(len(specs), bool), np.ones(len(post_pos), bool)]
    return PredictorVector(labels, mat[0], post), mat[1:]


def predictor_scales(
    dataset: PanelDataset,
    specs: Sequence[PredictorSpec],
    post_positions: Sequence[int] = (),
    warn: bool = True,
) -> np.ndarray:
    """Standard deviation of every target row across all units of the panel.

    Using the whole panel (rather than the current donor pool) keeps the
    scaling fixed when donors are dropped or swapped for placebo runs.
    Zero-variance rows get scale 1.
    """
    idx = np.arange(dataset.n_units)
    mat = _stack(dataset, idx, list(specs), list(post_positions), dataset.mediator)
    sd = mat.std(axis=0)
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(mat).max(axis=0))
    if const.any():
        if warn:
            labels = _labels(dataset, specs, list(post_positions))
            names = [labels[k] for k in np.flatnonzero(const)]
            warnings.warn(f"constant predictors left unscaled: {names}", ConstantPredictorWarning, stacklevel=2)
        sd = np.where(const, 1.0, sd)
    return sd


@dataclass(frozen=True)
class VWeights:
    diagonal: np.ndarray
    mode: str

    def __post_init__(self) -> None:
        d = np.asarray(self.diagonal, dtype=np.float64)
        if d.ndim != 1 or d.size == 0 or not np.all(d > 0):
            raise PredictorError("V diagonal must be a non-empty positive vector")
        object.__setattr__(self, "diagonal", d / d.sum())


def build_v(
    labels: "PredictorVector | Sequence[str]",
    mode: str = "uniform",
    user: Mapping[str, float] | None = None,
    post: Sequence[bool] | None = None,
) -> VWeights:
    """Diagonal weighting of the matching distance.

    ``uniform`` spreads mass equally; ``equal-pre-post`` gives half of the
    mass to post-intervention labels and half to the rest; ``user`` takes
    ``user[label]`` for every label and normalizes.
    """
    if isinstance(labels, PredictorVector):
        post = labels.post if post is None else post
        labels = labels.labels
    labels = list(labels)
    if not labels:
        raise PredictorError("labels must be non-empty")
    if post is None:
        post = [lab.endswith("@post") for lab in labels]
    post = np.asarray(post, dtype=bool)
    n = len(labels)
    if mode == "uniform":
        return VWeights(np.full(n, 1.0 / n), mode)
    if mode == "equal-pre-post":
        n_post = int(post.sum())
        if n_post == 0:
            raise EqualPrePostWithoutPostLabels("equal-pre-post needs at least one post-period label")
        if n_post == n:
            return VWeights(np.full(n, 1.0 / n), mode)
        d = np.where(post, 0.5 / n_post, 0.5 / (n - n_post))
        return VWeights(d, mode)
    if mode == "user":
        if user is None:
            raise PredictorError("user V mode needs a weight map")
        try:
            d = np.array([float(user[lab]) for lab in labels])
        except KeyError as exc:
            raise PredictorError(f"user V map has no entry for {exc.args[0]!r}") from None
        if np.any(d <= 0):
            raise ZeroOrNegativeUserWeight("user V weights must be strictly positive")
        return VWeights(d, mode)
    raise PredictorError(f"unknown V mode {mode!r}")
