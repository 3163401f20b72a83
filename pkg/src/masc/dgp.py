"""Linear factor-model simulator with closed-form ground-truth effects.

Mediator and potential outcomes for unit ``i`` at period ``t``::

    M(0)   = gamma_t + beta_t Z_i + vartheta_t varrho_i + nu_it
    M(1)   = M(0) + psi_t
    Y(0,0) = zeta_t + eta_t X_i + lam_t mu_i + phi0_t M(0) + eps_it
    Y(0,1) = zeta_t + eta_t X_i + lam_t mu_i + phi0_t M(1) + eps_it
    Y(1,0) = zeta_t + eta_t X_i + lam_t mu_i + phi1_t M(0) + rho_t(M(0)) + eps_it
    Y(1,1) = zeta_t + eta_t X_i + lam_t mu_i + phi1_t M(1) + rho_t(M(1)) + eps_it

with ``rho_t(m) = rho0_t + rho1_t m (+ rho2_t m^2)``. Treated units are
exposed from the intervention on; everyone else always reveals the
``(0, 0)`` outcome and ``M(0)``.

:class:`ModelTemplate` builds parameter sets whose structure (loadings, post
factor paths) is fixed by a template seed, so Monte Carlo runs over different
pre-period lengths share the same post-period design and only the noise varies.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._parallel import pmap
from .errors import DimensionMismatch, MascWarning
from .estimator import EstimationOptions, estimate, estimate_delta1
from .panel import PanelDataset

TRUTH_FIELDS = ("M0", "M1", "Y00", "Y01", "Y10", "Y11", "alpha", "theta", "delta0", "delta1", "theta0")


def _path(x, n_rows, n_cols=None, name="array"):
    a = np.asarray(x, dtype=np.float64)
    if n_cols is None:
        if a.ndim == 0:
            a = np.full(n_rows, float(a))
        if a.shape != (n_rows,):
            raise DimensionMismatch(f"{name} must have shape ({n_rows},), got {a.shape}")
    else:
        if a.ndim == 1 and n_cols == 1:
            a = a[:, None]
        if a.shape != (n_rows, n_cols):
            raise DimensionMismatch(f"{name} must have shape ({n_rows}, {n_cols}), got {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class FactorModelParams:
    """All structural inputs of one simulated panel.

    Units are ordered treated first, then donors. Per-period arrays have one
    row per period (pre and post); per-unit arrays one row per unit. ``Z`` is
    the subset ``X[:, z_columns]``.
    """

    n_pre: int
    n_treated: int
    X: np.ndarray
    mu: np.ndarray
    varrho: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    vartheta: np.ndarray
    psi: np.ndarray
    zeta: np.ndarray
    eta: np.ndarray
    lam: np.ndarray
    phi0: np.ndarray
    phi1: np.ndarray
    rho0: np.ndarray
    rho1: np.ndarray
    rho2: np.ndarray | None = None
    z_columns: tuple[int, ...] = ()
    nu_sd: float = 0.0
    eps_sd: float = 0.0
    noise: str = "gaussian"
    seed: int | tuple[int, ...] = 0

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise DimensionMismatch("X must be (units, r)")
        N, r = X.shape
        mu = np.asarray(self.mu, dtype=np.float64).reshape(N, -1)
        varrho = np.asarray(self.varrho, dtype=np.float64).reshape(N, -1)
        T = np.asarray(self.gamma).shape[0] if np.ndim(self.gamma) else None
        if T is None:
            raise DimensionMismatch("gamma must be a per-period path")
        F, v = mu.shape[1], varrho.shape[1]
        z = tuple(int(c) for c in self.z_columns)
        if any(c < 0 or c >= r for c in z):
            raise DimensionMismatch("z_columns must index columns of X")
        p = len(z)
        fix = {
            "X": X,
            "mu": mu,
            "varrho": varrho,
            "gamma": _path(self.gamma, T, name="gamma"),
            "beta": _path(self.beta, T, p, "beta") if p else np.zeros((T, 0)),
            "vartheta": _path(self.vartheta, T, v, "vartheta") if v else np.zeros((T, 0)),
            "psi": _path(self.psi, T, name="psi"),
            "zeta": _path(self.zeta, T, name="zeta"),
            "eta": _path(self.eta, T, r, "eta") if r else np.zeros((T, 0)),
            "lam": _path(self.lam, T, F, "lam") if F else np.zeros((T, 0)),
            "phi0": _path(self.phi0, T, name="phi0"),
            "phi1": _path(self.phi1, T, name="phi1"),
            "rho0": _path(self.rho0, T, name="rho0"),
            "rho1": _path(self.rho1, T, name="rho1"),
            "rho2": _path(0.0 if self.rho2 is None else self.rho2, T, name="rho2"),
            "z_columns": z,
        }
        for k, val in fix.items():
            object.__setattr__(self, k, val)
        if not 0 < self.n_pre < T:
            raise DimensionMismatch("n_pre must leave at least one pre and one post period")
        if not 1 <= self.n_treated < N:
            raise DimensionMismatch("need at least one treated unit and one donor")
        if self.nu_sd < 0 or self.eps_sd < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if self.noise not in ("gaussian", "uniform"):
            raise ValueError(f"unknown noise distribution {self.noise!r}")

    @property
    def n_units(self) -> int:
        return self.X.shape[0]

    @property
    def n_periods(self) -> int:
        return self.gamma.shape[0]

    @property
    def Z(self) -> np.ndarray:
        return self.X[:, list(self.z_columns)]

    def unit_ids(self) -> tuple[str, ...]:
        m = self.n_units - self.n_treated
        return tuple(f"T{i + 1}" for i in range(self.n_treated)) + tuple(f"D{i + 1}" for i in range(m))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Potential mediators, outcomes and effects of every treated unit in post periods.

    Every array has shape ``(n_treated, n_post)``.
    """

    units: tuple[str, ...]
    periods: tuple[int, ...]
    M0: np.ndarray
    M1: np.ndarray
    Y00: np.ndarray
    Y01: np.ndarray
    Y10: np.ndarray
    Y11: np.ndarray
    alpha: np.ndarray
    theta: np.ndarray
    delta0: np.ndarray
    delta1: np.ndarray
    theta0: np.ndarray

    def rows(self) -> list[dict]:
        out = []
        for i, u in enumerate(self.units):
            for k, t in enumerate(self.periods):
                row = {"unit": u, "period": t}
                row.update({f: float(getattr(self, f)[i, k]) for f in TRUTH_FIELDS})
                out.append(row)
        return out


def _noise(rng: np.random.Generator, sd: float, shape, kind: str) -> np.ndarray:
    if sd == 0:
        return np.zeros(shape)
    if kind == "gaussian":
        return rng.normal(0.0, sd, shape)
    half = sd * np.sqrt(3.0)
    return rng.uniform(-half, half, shape)


def simulate(params: FactorModelParams) -> tuple[PanelDataset, GroundTruth]:
    """Draw one panel and its ground truth.

    ``nu`` and ``eps`` come from two independent child streams of
    ``params.seed``. Ground truth uses the realized mediators (so ``nu``
    enters where the effect depends on the mediator level) and is free of
    ``eps``, which is common to all four potential outcomes.
    """
    p = params
    N, T, n, T0 = p.n_units, p.n_periods, p.n_treated, p.n_pre
    nu_ss, eps_ss = np.random.SeedSequence(p.seed).spawn(2)
    nu = _noise(np.random.default_rng(nu_ss), p.nu_sd, (N, T), p.noise)
    eps = _noise(np.random.default_rng(eps_ss), p.eps_sd, (N, T), p.noise)

    M0 = p.gamma[None, :] + p.Z @ p.beta.T + p.varrho @ p.vartheta.T + nu
    M1 = M0 + p.psi[None, :]
    base = p.zeta[None, :] + p.X @ p.eta.T + p.mu @ p.lam.T + eps

    def rho(m):
        return p.rho0 + p.rho1 * m + p.rho2 * m * m

    # effect-relevant parts of the potential outcomes, without the common base
    a = p.phi1 * M1 + rho(M1)  # (1,1)
    b = p.phi0 * M1  # (0,1)
    c = p.phi0 * M0  # (0,0)
    d = p.phi1 * M0 + rho(M0)  # (1,0)

    D = np.zeros((N, T), bool)
    D[:n, T0:] = True
    M = np.where(D, M1, M0)
    Y = np.where(D, base + a, base + c)

    units = p.unit_ids()
    periods = tuple(range(1, T + 1))
    covariates = {f"x{k + 1}": p.X[:, k] for k in range(p.X.shape[1])}
    ds = PanelDataset(
        units=units,
        periods=periods,
        outcome=Y,
        mediator=M,
        covariates=covariates,
        intervention=T0 + 1,
        treated=units[:n],
        donors=units[n:],
    )
    s = (slice(0, n), slice(T0, T))
    truth = GroundTruth(
        units=units[:n],
        periods=periods[T0:],
        M0=M0[s],
        M1=M1[s],
        Y00=(base + c)[s],
        Y01=(base + b)[s],
        Y10=(base + d)[s],
        Y11=(base + a)[s],
        alpha=(a - c)[s],
        theta=(a - b)[s],
        delta0=(b - c)[s],
        delta1=(a - d)[s],
        theta0=(d - c)[s],
    )
    return ds, truth


def ground_truth_csv(truth: GroundTruth) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("unit", "period") + TRUTH_FIELDS)
    for row in truth.rows():
        w.writerow([row["unit"], row["period"]] + [repr(row[f]) for f in TRUTH_FIELDS])
    return buf.getvalue()


def write_ground_truth(truth: GroundTruth, path) -> None:
    Path(path).write_text(ground_truth_csv(truth), encoding="utf-8")


# templates


POST_FACTOR_UNITS = ("none", "donors", "treated", "all")


@dataclass(frozen=True)
class ModelTemplate:
    """Recipe for :class:`FactorModelParams` at any pre-period length.

    Structural draws (loadings, post-period paths) depend only on ``seed``;
    pre-period factor paths are nested prefixes of one long draw, so changing
    ``n_pre`` only adds or removes pre periods.

    In hull mode the first treated unit's loadings are a random convex
    combination ``c`` of donor loadings, and the other treated units are
    placed so that the first is a combination of them as well. ``c`` is drawn
    from ``1/m + span(donor loadings)``: that makes it the minimum-norm
    weight vector reproducing the treated unit's pre-period data, so the
    synthetic control recovers ``c`` itself rather than another member of the
    exact-fit set that differs along post-only loadings. ``hull_margin``
    bounds every entry of ``c`` below by ``hull_margin / m``; a positive
    ``hull_zero_fraction`` instead gives that share of donors zero weight.

    ``covariate_effect`` is the mean of the coefficient paths on observed
    covariates (``eta`` and ``beta``); the unobserved factor paths stay
    standard normal.

    ``post_factor_units`` adds a mediator factor that is zero before the
    intervention, with random loadings on the chosen group; in hull mode the
    first treated unit's loading keeps it an exact combination. Without such post-only variation the post-period
    mediator of donors is pinned by pre-period data, and no donor combination
    can reproduce a shifted treated mediator.
    """

    n_treated: int = 1
    n_donors: int = 15
    n_post: int = 5
    r: int = 1
    z_columns: tuple[int, ...] = (0,)
    n_factors: int = 2
    n_mediator_factors: int = 1
    phi0: float = 1.0
    phi1: float = 1.0
    psi: float = 0.8
    rho0: float = 1.2
    rho1: float = 0.0
    rho2: float = 0.0
    nu_sd: float = 0.0
    eps_sd: float = 0.0
    noise: str = "gaussian"
    hull: bool = True
    hull_margin: float = 0.3
    hull_zero_fraction: float = 0.0
    treated_spread: float = 1.0
    post_factor_units: str = "donors"
    post_loading_sd: float = 1.0
    post_factor_level: float = 2.0
    covariate_effect: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.post_factor_units not in POST_FACTOR_UNITS:
            raise ValueError(f"post_factor_units must be one of {POST_FACTOR_UNITS}")
        if self.n_treated < 1 or self.n_donors < 2 or self.n_post < 1:
            raise ValueError("need >= 1 treated unit, >= 2 donors and >= 1 post period")

    def build(self, n_pre: int, seed: int | tuple[int, ...] = 0) -> FactorModelParams:
        n, m = self.n_treated, self.n_donors
        N, T = n + m, n_pre + self.n_post
        r, F, v = self.r, self.n_factors, self.n_mediator_factors
        s_load, s_post, s_pre, s_comb = (
            np.random.default_rng(c) for c in np.random.SeedSequence(self.seed).spawn(4)
        )
        # donor loadings, one row per donor: X | mu | varrho
        K = r + F + v
        donors = s_load.standard_normal((m, K))
        loadings = np.empty((N, K))
        loadings[n:] = donors
        if self.hull:
            c = _spanned_weights(donors, self.hull_margin, s_comb, self.hull_zero_fraction)
            loadings[0] = c @ donors
            if n > 1:
                e = self.treated_spread * s_comb.standard_normal((n - 1, K))
                q = _spanned_weights(e, self.hull_margin, s_comb)
                loadings[1:n] = loadings[0] + (e - q @ e)
        else:
            loadings[:n] = s_comb.standard_normal((n, K))

        n_long = max(n_pre, 1)
        paths = s_pre.standard_normal((n_long, 3 + r + F + v + len(self.z_columns)))[:n_pre]
        post = s_post.standard_normal((self.n_post, 3 + r + F + v + len(self.z_columns)))
        allp = np.vstack([paths, post])
        col = iter(range(allp.shape[1]))
        take = lambda k: allp[:, [next(col) for _ in range(k)]]  # noqa: E731
        gamma, zeta, _ = take(3).T
        eta, lam, vartheta = take(r), take(F), take(v)
        beta = take(len(self.z_columns))
        eta = eta + self.covariate_effect
        beta = beta + self.covariate_effect

        varrho = loadings[:, r + F :]
        if self.post_factor_units != "none":
            # unit 1 stays the same convex combination in every period
            extra = np.zeros(N)
            if self.post_factor_units in ("donors", "all"):
                extra[n:] = self.post_loading_sd * s_load.standard_normal(m)
                if self.hull:
                    extra[0] = c @ extra[n:]
            if n > 1:
                extra[1:n] = extra[0]
                if self.post_factor_units in ("treated", "all"):
                    e = self.post_loading_sd * s_load.standard_normal(n - 1)
                    extra[1:n] += e - (q @ e if self.hull else 0.0)
            path = np.zeros(T)
            z = s_post.standard_normal(self.n_post)
            path[n_pre:] = np.sign(z) * (self.post_factor_level + np.abs(z))
            varrho = np.hstack([varrho, extra[:, None]])
            vartheta = np.hstack([vartheta, path[:, None]])

        psi = np.zeros(T)
        psi[n_pre:] = self.psi
        return FactorModelParams(
            n_pre=n_pre,
            n_treated=n,
            X=loadings[:, :r],
            mu=loadings[:, r : r + F],
            varrho=varrho,
            gamma=gamma,
            beta=beta,
            vartheta=vartheta,
            psi=psi,
            zeta=zeta,
            eta=eta,
            lam=lam,
            phi0=np.full(T, self.phi0),
            phi1=np.full(T, self.phi1),
            rho0=np.full(T, self.rho0),
            rho1=np.full(T, self.rho1),
            rho2=np.full(T, self.rho2) if self.rho2 else None,
            z_columns=self.z_columns,
            nu_sd=self.nu_sd,
            eps_sd=self.eps_sd,
            noise=self.noise,
            seed=seed,
        )


def _spanned_weights(
    A: np.ndarray, margin: float, rng: np.random.Generator, zero_fraction: float = 0.0
) -> np.ndarray:
    """Simplex point ``c`` that is the minimum-norm convex combination reproducing ``c @ A``.

    ``c`` is proportional to ``max(b + (A - mean A) g, 0)`` for a random ``g``;
    that form satisfies the optimality conditions of the minimum-norm problem
    over ``{w >= 0, sum w = 1, w @ A = c @ A}``. With ``zero_fraction = 0`` all
    entries are positive with the smallest equal to ``margin / m``; otherwise
    that share of donors gets weight exactly zero.
    """
    m = A.shape[0]
    u = (A - A.mean(axis=0)) @ rng.standard_normal(A.shape[1])
    if zero_fraction > 0:
        if not zero_fraction < 1:
            raise ValueError("zero_fraction must lie in [0, 1)")
        k = int(round(zero_fraction * m))
        if k == 0:
            raise ValueError("zero_fraction too small for this many donors")
        c = np.maximum(u - np.sort(u)[k - 1], 0.0)
        return c / c.sum()
    if not 0 < margin <= 1:
        raise ValueError("hull_margin must lie in (0, 1]")
    low = u.min()
    # scale so the smallest entry is exactly margin / m
    t = (1.0 - margin) / (m * -low) if low < 0 else 0.0
    return 1.0 / m + t * u


# Monte Carlo


@dataclass(frozen=True)
class BiasCell:
    n_pre: int
    effect: str
    mean_bias: float
    se: float
    reps: int


@dataclass(frozen=True)
class MonteCarloTable:
    cells: tuple[BiasCell, ...]
    per_rep: dict = field(default_factory=dict, compare=False)

    def cell(self, n_pre: int, effect: str) -> BiasCell:
        for c in self.cells:
            if c.n_pre == n_pre and c.effect == effect:
                return c
        raise KeyError((n_pre, effect))

    def rows(self) -> list[dict]:
        return [c.__dict__.copy() for c in self.cells]


def _one_rep(args):
    template, n_pre, seed, rep, options = args
    ds, truth = simulate(template.build(n_pre, seed=(seed, rep)))
    t1 = ds.treated[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MascWarning)
        res = estimate(ds, t1, ds.donors, options)
        pos = [truth.periods.index(p) for p in res.effects.post_periods]
        out = {
            "total": float(np.mean(res.effects.total - truth.alpha[0, pos])),
            "direct": float(np.mean(res.effects.direct - truth.theta[0, pos])),
            "indirect": float(np.mean(res.effects.indirect - truth.delta0[0, pos])),
        }
        if len(ds.treated) > 1:
            d1 = estimate_delta1(ds, t1, ds.treated[1:], ds.donors, options)
            pos = [truth.periods.index(p) for p in d1.delta1.periods]
            out["delta1"] = float(np.mean(d1.delta1.values - truth.delta1[0, pos]))
    return out


def monte_carlo(
    template: ModelTemplate,
    pre_period_grid: Sequence[int],
    reps: int,
    seed: int = 0,
    options: EstimationOptions | None = None,
    jobs: int = 1,
) -> MonteCarloTable:
    """Mean bias and Monte Carlo standard error of each effect estimate.

    Bias of one replication is the post-period mean of ``estimate - truth``
    for the first treated unit. Replication ``rep`` draws its noise from
    seed ``(seed, rep)``, identically for every grid value.
    """
    grid = [int(g) for g in pre_period_grid]
    if reps < 2:
        raise ValueError("reps must be at least 2")
    if grid != sorted(grid):
        raise ValueError("pre_period_grid must be ascending")
    cells, per_rep = [], {}
    for n_pre in grid:
        tasks = [(template, n_pre, seed, rep, options) for rep in range(reps)]
        results = pmap(_one_rep, tasks, jobs)
        for effect in results[0]:
            b = np.array([r[effect] for r in results])
            per_rep[(n_pre, effect)] = b
            cells.append(BiasCell(n_pre, effect, float(b.mean()), float(b.std(ddof=1) / np.sqrt(reps)), reps))
    return MonteCarloTable(tuple(cells), per_rep)
