"""Linear calibration of synthetic responses by quantile matching.

Given M synthetic responses per source generated at each of the n0
target covariates, pick beta so that the empirical law of beta' V_hat is
as close as possible to the target response law in the squared quantile
(Wasserstein-2) sense. The empirical objective pairs the prediction of
rank r with the target order statistic of index ceil(r/M).

The solver is block coordinate descent: given beta, the optimal pairing
of predictions to replicated target order statistics is a sort (the
rearrangement inequality), and given the pairing the optimal beta is a
least-squares fit, so the objective never increases. Initialization is
ordinary least squares on the row-aligned replicated target vector.

Rows are reordered internally into a canonical lexicographic order, so
the result depends only on the multiset of design rows; consistent
permutations of the input reproduce the fit bitwise when predictions
carry no ties.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.optimize

CONSTRAINT_MODES = ("unconstrained", "nonneg_slopes")


@dataclass(frozen=True)
class SyntheticDesign:
    """The (n0*M) x (K+1) matrix of generated responses.

    Column 0 is the intercept. Row i*M + j holds the j-th synthetic
    response of every source generated at target covariate i.
    """

    v_hat: np.ndarray
    n0: int
    m: int

    def __post_init__(self):
        v = np.array(self.v_hat, dtype=float, copy=True)
        if v.ndim != 2 or v.shape[1] < 2:
            raise ValueError("v_hat must be 2-D with an intercept and at "
                             "least one slope column")
        if self.n0 < 1 or self.m < 1:
            raise ValueError("n0 and m must be positive")
        if v.shape[0] != self.n0 * self.m:
            raise ValueError(
                f"v_hat has {v.shape[0]} rows, expected n0*m = {self.n0 * self.m}")
        if not np.isfinite(v).all():
            raise ValueError("v_hat entries must be finite")
        if not np.all(v[:, 0] == 1.0):
            raise ValueError("column 0 of v_hat must be identically 1")
        v.flags.writeable = False
        object.__setattr__(self, "v_hat", v)

    @property
    def n_sources(self) -> int:
        return self.v_hat.shape[1] - 1


@dataclass(frozen=True)
class QuantileMatchFit:
    beta: np.ndarray
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    constraint_mode: str
    rank_deficient: bool = False


def empirical_objective(target_y, predictions) -> float:
    """Mean squared gap between sorted predictions and replicated sorted
    target values, the sample version of the squared quantile distance."""
    y = np.asarray(target_y, dtype=float).ravel()
    preds = np.asarray(predictions, dtype=float).ravel()
    if y.size < 1 or preds.size < 1:
        raise ValueError("inputs must be non-empty")
    if preds.size % y.size != 0:
        raise ValueError(
            f"predictions length {preds.size} is not a multiple of "
            f"target length {y.size}")
    if not np.isfinite(y).all() or not np.isfinite(preds).all():
        raise ValueError("inputs must be finite")
    m = preds.size // y.size
    gaps = np.repeat(np.sort(y), m) - np.sort(preds)
    return float(np.mean(gaps * gaps))


class _LstsqSolver:
    """Minimum-norm least squares via one SVD of the fixed design.

    An optional ridge penalty on the slope coefficients is folded in as
    extra rows; the intercept is never penalized.
    """

    def __init__(self, v: np.ndarray, ridge: float):
        k = v.shape[1] - 1
        if ridge > 0:
            tail = np.hstack([np.zeros((k, 1)), np.sqrt(ridge) * np.eye(k)])
            a = np.vstack([v, tail])
        else:
            a = v
        self._n_extra = a.shape[0] - v.shape[0]
        u, s, vt = np.linalg.svd(a, full_matrices=False)
        cutoff = s.max() * max(a.shape) * np.finfo(float).eps
        rank = int((s > cutoff).sum())
        self.rank_deficient = rank < v.shape[1]
        self._u = u[:, :rank]
        self._inv_s = 1.0 / s[:rank]
        self._vt = vt[:rank]

    def solve(self, z: np.ndarray) -> np.ndarray:
        if self._n_extra:
            z = np.concatenate([z, np.zeros(self._n_extra)])
        return self._vt.T @ (self._inv_s * (self._u.T @ z))


class _NnlsSolver:
    """Nonnegative slopes with a free intercept.

    The intercept is profiled out by centering, leaving a pure NNLS
    problem in the slopes, solved by the Lawson-Hanson active set.
    """

    def __init__(self, v: np.ndarray, ridge: float):
        slopes = v[:, 1:]
        self._mu = slopes.mean(axis=0)
        centered = slopes - self._mu
        k = slopes.shape[1]
        if ridge > 0:
            centered = np.vstack([centered, np.sqrt(ridge) * np.eye(k)])
        self._a = centered
        self._n_rows = v.shape[0]
        cutoff = max(centered.shape) * np.finfo(float).eps
        s = np.linalg.svd(centered, compute_uv=False)
        self.rank_deficient = int((s > s.max() * cutoff).sum()) < k

    def solve(self, z: np.ndarray) -> np.ndarray:
        mu_z = z.mean()
        b = z - mu_z
        if self._a.shape[0] > self._n_rows:
            b = np.concatenate([b, np.zeros(self._a.shape[0] - self._n_rows)])
        slopes, _ = scipy.optimize.nnls(self._a, b)
        intercept = mu_z - self._mu @ slopes
        return np.concatenate([[intercept], slopes])


def fit(target_y, design: SyntheticDesign, constraint_mode: str = "unconstrained",
        tol: float = 1e-8, max_iter: int = 200,
        ridge: float = 0.0) -> QuantileMatchFit:
    """Block coordinate descent for the empirical quantile-matching
    objective.

    Alternates (a) ranking the current predictions with a stable sort,
    ties broken by row index, which assigns each design row its target
    order statistic as pseudo-target, and (b) least squares (or slope
    NNLS under nonneg_slopes) of the pseudo-targets on the design. Stops
    when the objective changes by less than tol or after max_iter
    updates. A rank-deficient design is solved by the minimum-norm
    pseudo-inverse and flagged, not rejected.
    """
    y = np.asarray(target_y, dtype=float).ravel()
    if y.size != design.n0:
        raise ValueError(f"target_y has length {y.size}, design expects {design.n0}")
    if y.size < 2:
        raise ValueError("need at least 2 target observations")
    if not np.isfinite(y).all():
        raise ValueError("target_y must be finite")
    if constraint_mode not in CONSTRAINT_MODES:
        raise ValueError(f"constraint_mode must be one of {CONSTRAINT_MODES}")
    if tol < 0 or max_iter < 1 or ridge < 0:
        raise ValueError("tol and ridge must be nonnegative, max_iter positive")
    slopes = design.v_hat[:, 1:]
    if np.all(slopes.max(axis=0) == slopes.min(axis=0)):
        raise ValueError("all slope columns of the design are constant")

    # canonical row order: the estimator only depends on the row multiset
    canon = np.lexsort(design.v_hat.T[::-1])
    v = design.v_hat[canon]
    replicated = np.repeat(y, design.m)[canon]
    sorted_rep = np.repeat(np.sort(y), design.m)

    if constraint_mode == "nonneg_slopes":
        solver = _NnlsSolver(v, ridge)
    else:
        solver = _LstsqSolver(v, ridge)

    def objective(preds):
        gaps = sorted_rep - np.sort(preds)
        return float(np.mean(gaps * gaps))

    beta = solver.solve(replicated)
    preds = v @ beta
    trace = [objective(preds)]
    converged = False
    for _ in range(max_iter):
        order = np.argsort(preds, kind="stable")
        z = np.empty_like(preds)
        z[order] = sorted_rep
        beta = solver.solve(z)
        preds = v @ beta
        trace.append(objective(preds))
        if abs(trace[-2] - trace[-1]) < tol:
            converged = True
            break
    return QuantileMatchFit(
        beta=beta, objective_trace=np.asarray(trace),
        iterations=len(trace) - 1, converged=converged,
        constraint_mode=constraint_mode,
        rank_deficient=solver.rank_deficient)


def estimate_population_objective(beta, target_sampler, v_sampler,
                                  n_mc: int, rng) -> float:
    """Monte Carlo estimate of the population quantile-matching objective.

    target_sampler(n, gen) must return n response draws and
    v_sampler(n, gen) an (n, len(beta)) matrix of V draws; both receive
    the same generator in sequence, so two calls with an equal RngStream
    reuse common random numbers.
    """
    if n_mc < 100:
        raise ValueError("n_mc must be at least 100")
    beta = np.asarray(beta, dtype=float).ravel()
    gen = rng.generator()
    y = np.asarray(target_sampler(n_mc, gen), dtype=float).ravel()
    v = np.asarray(v_sampler(n_mc, gen), dtype=float)
    if y.size != n_mc or v.shape != (n_mc, beta.size):
        raise ValueError("sampler output shapes do not match n_mc and beta")
    return empirical_objective(y, v @ beta)


def save_fit(fit_result: QuantileMatchFit, path) -> None:
    doc = {
        "beta": fit_result.beta.tolist(),
        "objective_trace": fit_result.objective_trace.tolist(),
        "iterations": fit_result.iterations,
        "converged": fit_result.converged,
        "constraint_mode": fit_result.constraint_mode,
        "rank_deficient": fit_result.rank_deficient,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def load_fit(path) -> QuantileMatchFit:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return QuantileMatchFit(
        beta=np.asarray(doc["beta"], dtype=float),
        objective_trace=np.asarray(doc["objective_trace"], dtype=float),
        iterations=int(doc["iterations"]), converged=bool(doc["converged"]),
        constraint_mode=doc["constraint_mode"],
        rank_deficient=bool(doc["rank_deficient"]))
