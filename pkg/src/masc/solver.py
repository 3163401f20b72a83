"""Simplex-constrained weighted least squares.

Solves

    min_w  (x1 - X0' w)' V (x1 - X0' w) + ridge * |w|^2
    s.t.   w >= 0,  sum(w) = 1

where ``x1`` is the treated unit's target vector, ``X0`` holds one donor per
row and ``V`` is diagonal. The tiny ridge (relative to the mean squared donor
column norm) makes the minimizer unique; among several exact fits it selects
the minimum-norm weight vector.

The main path is a primal active-set method (Lawson-Hanson style, adapted to
the extra equality constraint): equality-constrained subproblems on the free
set are solved in the null space of ``1'`` with a least-squares solve, and
blocking constraints are handled with the usual step-back. If it does not
certify optimality within ``max_iter`` steps, accelerated projected gradient
takes over from the best point found.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NonConvergenceWarning

RIDGE = 1e-12


@dataclass(frozen=True)
class WeightVector:
    donor_ids: tuple[str, ...]
    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64).copy()
        if w.shape != (len(self.donor_ids),):
            raise DimensionMismatch("one weight per donor is required")
        if np.any(w < -1e-12):
            raise ValueError(f"negative weight {w.min()!r}")
        w[w < 0] = 0.0
        total = w.sum()
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"weights sum to {total!r}, not 1")
        w /= total
        w.setflags(write=False)
        object.__setattr__(self, "donor_ids", tuple(self.donor_ids))
        object.__setattr__(self, "weights", w)

    def as_dict(self) -> dict[str, float]:
        return {d: float(x) for d, x in zip(self.donor_ids, self.weights)}

    def __getitem__(self, donor: str) -> float:
        return float(self.weights[self.donor_ids.index(donor)])


@dataclass(frozen=True)
class SolverReport:
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float
    method: str = "active-set"


def _as_arrays(omega1, omega0, v):
    x1 = np.asarray(omega1 if isinstance(omega1, (np.ndarray, list, tuple)) else omega1.values, dtype=np.float64)
    x0 = np.asarray(omega0, dtype=np.float64)
    if x0.ndim != 2 or x1.ndim != 1 or x0.shape[1] != x1.shape[0]:
        raise DimensionMismatch(
            f"target of length {x1.shape} does not match donor matrix {x0.shape}"
        )
    if v is None:
        d = np.full(x1.shape[0], 1.0 / max(x1.shape[0], 1))
    else:
        d = np.asarray(v if isinstance(v, (np.ndarray, list, tuple)) else v.diagonal, dtype=np.float64)
        if d.ndim == 2:
            d = np.diag(d)
    if d.shape != x1.shape:
        raise DimensionMismatch(f"V has {d.shape[0]} entries, targets have {x1.shape[0]}")
    if np.any(d < 0):
        raise ValueError("V must be non-negative")
    return x1, x0, d


def objective(omega1, omega0, v, w) -> float:
    """V-weighted distance ``sqrt(r' V r)`` with ``r = omega1 - w @ omega0``.

    ``V`` is rescaled to unit trace first, matching the solver.
    """
    x1, x0, d = _as_arrays(omega1, omega0, v)
    if d.sum() > 0:
        d = d / d.sum()
    w = np.asarray(getattr(w, "weights", w), dtype=np.float64)
    if w.shape != (x0.shape[0],):
        raise DimensionMismatch("one weight per donor row is required")
    r = x1 - w @ x0
    return float(np.sqrt(max(r @ (d * r), 0.0)))


def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(y - css[rho] / (rho + 1), 0.0)


class _Problem:
    def __init__(self, A: np.ndarray, b: np.ndarray, ridge: float):
        self.A, self.b = A, b
        self.J = A.shape[1]
        self.AtA = A.T @ A
        self.Atb = A.T @ b
        # ridge relative to the mean squared column norm: invariant to rescaling the data
        self.ridge = ridge * max(float(np.trace(self.AtA)) / self.J, np.finfo(float).tiny)
        # reduced costs this small are ridge tie-breaks, still worth pivoting on
        self.add_tol = 1e-2 * self.ridge
        na = float(np.linalg.norm(A))
        self.scale = max(1.0, 2.0 * (na * na + na * float(np.linalg.norm(b))))

    def grad(self, w):
        return 2.0 * (self.AtA @ w - self.Atb + self.ridge * w)

    def kkt(self, w, g=None):
        g = self.grad(w) if g is None else g
        free = w > 0
        nu = g[free].mean()
        res = np.abs(g[free] - nu).max()
        if (~free).any():
            res = max(res, float(np.max(nu - g[~free])))
        return max(res, 0.0) / self.scale, nu

    def subsolve(self, free_idx: np.ndarray) -> np.ndarray:
        """Minimize over the affine set sum(z) = 1 on ``free_idx`` (no sign constraints)."""
        m = free_idx.size
        if m == 1:
            return np.ones(1)
        AF = self.A[:, free_idx]
        q, _ = np.linalg.qr(np.ones((m, 1)), mode="complete")
        N = q[:, 1:]
        z0 = np.full(m, 1.0 / m)
        M = np.vstack([AF @ N, np.sqrt(self.ridge) * np.eye(m - 1)])
        rhs = np.r_[self.b - AF @ z0, np.zeros(m - 1)]
        y = np.linalg.lstsq(M, rhs, rcond=None)[0]
        return z0 + N @ y


def _active_set(p: _Problem, tol: float, max_iter: int):
    J = p.J
    single = ((p.A - p.b[:, None]) ** 2).sum(axis=0)
    w = np.zeros(J)
    w[int(np.argmin(single))] = 1.0
    free = w > 0
    rejected = np.zeros(J, bool)
    it = 0
    while it < max_iter:
        g = p.grad(w)
        nu = g[free].mean()
        gap = nu - g
        gap[free | rejected] = -np.inf
        j = int(np.argmax(gap))
        if gap[j] <= min(tol * p.scale, p.add_tol):
            return w, it, True
        free[j] = True
        newly = j
        while True:
            it += 1
            idx = np.flatnonzero(free)
            z = np.zeros(J)
            z[idx] = p.subsolve(idx)
            if np.all(z[idx] > 0):
                w = z
                rejected[:] = False
                break
            if newly is not None and z[newly] <= 0 and np.all(np.delete(z[idx], np.searchsorted(idx, newly)) > 0):
                # numerically degenerate entry: leave it out and look elsewhere
                free[newly] = False
                rejected[newly] = True
                break
            newly = None
            neg = idx[z[idx] <= 0]
            steps = w[neg] / (w[neg] - z[neg])
            k = int(np.argmin(steps))
            alpha = float(np.clip(steps[k], 0.0, 1.0))
            w = w + alpha * (z - w)
            w[neg[k]] = 0.0
            w[w <= 0] = 0.0
            free = w > 0
            if it >= max_iter:
                break
    return w, it, False


def _projected_gradient(p: _Problem, w0: np.ndarray, tol: float, max_iter: int):
    lip = 2.0 * (np.linalg.eigvalsh(p.AtA)[-1] + p.ridge)
    w = project_simplex(w0)
    y, t = w.copy(), 1.0
    for it in range(1, max_iter + 1):
        w_new = project_simplex(y - p.grad(y) / lip)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = w_new + ((t - 1.0) / t_new) * (w_new - w)
        w, t = w_new, t_new
        if it % 25 == 0 and p.kkt(w)[0] <= tol:
            return w, it, True
    return w, max_iter, p.kkt(w)[0] <= tol


def solve_simplex_wls(
    omega1,
    omega0,
    v=None,
    *,
    tolerance: float = 1e-10,
    max_iter: int | None = None,
    donor_ids: Sequence[str] | None = None,
    ridge: float = RIDGE,
) -> tuple[WeightVector, SolverReport]:
    """Simplex-constrained weights minimizing the V-weighted distance.

    Parameters
    ----------
    omega1 : array or PredictorVector, shape (k,)
        Treated-unit targets.
    omega0 : array, shape (n_donors, k)
        Donor targets, one row per donor.
    v : array, VWeights or None
        Diagonal of V (uniform when None). Only its direction matters for
        the argmin; it is normalized internally.
    tolerance : float
        Bound on the scale-relative KKT residual for ``converged``.

    Returns
    -------
    (WeightVector, SolverReport)
        On non-convergence the best point is still returned, with
        ``converged=False`` and a :class:`NonConvergenceWarning`.
    """
    x1, x0, d = _as_arrays(omega1, omega0, v)
    n_donors, k = x0.shape
    if n_donors < 2:
        raise DimensionMismatch("at least two donors are required")
    ids = tuple(donor_ids) if donor_ids is not None else tuple(str(i) for i in range(n_donors))
    if len(ids) != n_donors:
        raise DimensionMismatch("donor_ids must match the donor rows")
    if max_iter is None:
        max_iter = 10 * (n_donors + k)
    s = np.sqrt(d / d.sum()) if d.sum() > 0 else np.zeros_like(d)
    p = _Problem((x0 * s).T, x1 * s, ridge)

    method = "active-set"
    try:
        w, iters, ok = _active_set(p, tolerance, max_iter)
    except np.linalg.LinAlgError:
        w, iters, ok = np.full(n_donors, 1.0 / n_donors), 0, False
    res, _ = p.kkt(w)
    if not ok or res > tolerance:
        method = "projected-gradient"
        w2, it2, _ = _projected_gradient(p, w, tolerance, max(50 * max_iter, 5000))
        iters += it2
        if p.kkt(w2)[0] < res:
            w = w2
        res, _ = p.kkt(w)
    converged = res <= tolerance
    w = np.maximum(w, 0.0)
    w /= w.sum()
    if not converged:
        warnings.warn(
            f"simplex solver stopped with KKT residual {res:.3g} > {tolerance:.3g}",
            NonConvergenceWarning,
            stacklevel=2,
        )
    report = SolverReport(
        objective=objective(x1, x0, d, w),
        iterations=int(iters),
        converged=bool(converged),
        kkt_residual=float(res),
        method=method,
    )
    return WeightVector(ids, w), report
