"""MAP-EM for the state-noise variances ``nu``.

One iteration runs the filter/smoother at the current ``nu`` (E-step),
records the cost ``log Pr(y | nu) + log Pr(nu)`` from the innovations, and
updates ``nu`` in closed form (M-step).  Constants that do not depend on
``nu`` are dropped throughout.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
import scipy.linalg

from .errors import ConfigError, DomainError, MonotonicityError, UsageError, ConditioningError
from .estimation import StateTrajectory, as_observations, smooth
from .model import ModelSpec, NoiseModel, PriorSpec, prior_log_density

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class EStepStats:
    """Sufficient statistics of one E-step.

    ``a_diag`` is always present.  The full ``a1``, ``a2``, ``a3`` and ``a``
    matrices are only materialized for small ``p``.
    """

    a_diag: np.ndarray
    T: int
    b_trace: float
    a1: Optional[np.ndarray] = None
    a2: Optional[np.ndarray] = None
    a3: Optional[np.ndarray] = None
    a: Optional[np.ndarray] = None


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 30
    rel_tol: float = 1e-5
    update_c0: bool = True
    b: Optional[float] = None
    lam: Optional[float] = None
    full_stats_limit: int = 512

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not self.rel_tol > 0:
            raise ConfigError(f"rel_tol must be > 0, got {self.rel_tol}")
        if self.b is not None and not self.b > 3:
            raise ConfigError(f"b must be > 3, got {self.b}")
        if self.lam is not None and not self.lam > 0:
            raise ConfigError(f"lam must be > 0, got {self.lam}")


@dataclass(frozen=True)
class IterationRecord:
    nu: np.ndarray
    log_lik: float
    log_prior: float

    @property
    def cost(self) -> float:
        return self.log_lik + self.log_prior


@dataclass
class EmTrace:
    records: List[IterationRecord] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])

    def rel_changes(self) -> np.ndarray:
        c = self.costs
        return np.abs(np.diff(c)) / (1.0 + np.abs(c[1:]))

    def rows(self):
        for i, r in enumerate(self.records):
            yield {
                "iteration": i,
                "logLik": r.log_lik,
                "logPrior": r.log_prior,
                "cost": r.cost,
                "nu_min": float(np.min(r.nu)),
                "nu_median": float(np.median(r.nu)),
                "nu_max": float(np.max(r.nu)),
            }

    def write_csv(self, path) -> None:
        cols = ["iteration", "logLik", "logPrior", "cost", "nu_min", "nu_median", "nu_max"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (v if k == "iteration" else repr(float(v))) for k, v in row.items()})

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "records": [dict(row, nu=r.nu.tolist()) for row, r in zip(self.rows(), self.records)],
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True)
class EmResult:
    trajectory: StateTrajectory
    nu_map: np.ndarray
    trace: EmTrace
    model: ModelSpec


def _csr_parts(F):
    F = F.tocsr()
    rows = np.repeat(np.arange(F.shape[0]), np.diff(F.indptr))
    return rows, F.indices, F.data


def e_step(model: ModelSpec, observations, full_stats: Optional[bool] = None,
           trajectory: Optional[StateTrajectory] = None) -> tuple:
    """Run filter, smoother and lag recursions and accumulate ``diag(A)``.

    ``A = A1 - phi A2 F' - phi F A2' + phi^2 F A3 F'``; its diagonal is the
    summed conditional second moment of the one-step residual
    ``beta_t - phi F beta_{t-1}``.  Returns ``(stats, trajectory)``.
    """
    Y = as_observations(model, observations)
    traj = trajectory if trajectory is not None else smooth(model, Y, with_lag=True)
    if traj.lag_cov is None:
        raise UsageError("trajectory lacks lag covariances")
    T, p = traj.T, traj.p
    phi = model.phi
    F = model.feedback.entries
    fr, fc, fv = _csr_parts(F)
    if full_stats is None:
        full_stats = p <= 512

    sm, sV, lag = traj.smoothed_mean, traj.smoothed_cov, traj.lag_cov
    X = model.lead_field
    a_diag = np.zeros(p)
    b_trace = 0.0
    if full_stats:
        a1 = np.zeros((p, p))
        a2 = np.zeros((p, p))
        a3 = np.zeros((p, p))
    for t in range(1, T + 1):
        m, m0 = sm[t], sm[t - 1]
        Fm0 = F @ m0
        d1 = np.diag(sV[t]) + m * m
        if phi != 0.0:
            # diag(L F') and diag(F V F') touch only the sparsity pattern of F
            d2 = np.bincount(fr, fv * lag[t][fr, fc], minlength=p) + m * Fm0
            FV = F @ sV[t - 1]
            d3 = np.bincount(fr, fv * FV[fr, fc], minlength=p) + Fm0 * Fm0
            a_diag += d1 - 2.0 * phi * d2 + phi * phi * d3
        else:
            a_diag += d1
        resid = Y[t - 1] - X @ m
        b_trace += float(resid @ resid + np.sum((X @ sV[t]) * X))
        if full_stats:
            a1 += sV[t] + np.outer(m, m)
            a2 += lag[t] + np.outer(m, m0)
            a3 += sV[t - 1] + np.outer(m0, m0)
    if full_stats:
        A2F = (F @ a2.T).T          # A2 F'
        FA3F = (F @ (F @ a3).T).T   # F A3 F'
        a = a1 - phi * A2F - phi * A2F.T + phi * phi * FA3F
        stats = EStepStats(a_diag, T, b_trace, a1, a2, a3, a)
    else:
        stats = EStepStats(a_diag, T, b_trace)
    return stats, traj


def m_step(stats: EStepStats, model: ModelSpec, T: Optional[int] = None) -> np.ndarray:
    """Closed-form maximizer ``(a_jj lam tr / (1 - phi^2) + 2b) / (T + 2b)``."""
    T = stats.T if T is None else T
    one_m = 1.0 - model.phi ** 2
    if one_m <= 0:
        raise DomainError("1 - phi^2 must be positive")
    a = np.asarray(stats.a_diag, dtype=float)
    tol = 1e-9 * max(1.0, float(np.max(np.abs(a))))
    if np.any(a < -tol):
        raise DomainError("diag(A) must be nonnegative")
    a = np.maximum(a, 0.0)
    b = model.prior.b
    return (a * model.noise.scale / one_m + 2.0 * b) / (T + 2.0 * b)


def expected_objective_terms(nu, a_diag, model: ModelSpec, T: int) -> np.ndarray:
    """Per-coordinate ``nu``-dependent part of the EM auxiliary function.

    ``-1/2 [T log q_j + a_jj / ((1 - phi^2) q_j)] - b log nu_j - b / nu_j``
    with ``q_j = nu_j / (lam tr)``.
    """
    nu = np.asarray(nu, dtype=float)
    q = nu / model.noise.scale
    b = model.prior.b
    one_m = 1.0 - model.phi ** 2
    return -0.5 * (T * np.log(q) + np.asarray(a_diag) / (one_m * q)) - b * np.log(nu) - b / nu


def innovations_log_likelihood(model: ModelSpec, trajectory: StateTrajectory, observations=None) -> float:
    """``log Pr(y_1..y_T | nu)`` from the one-step prediction residuals.

    Uses the Cholesky factors kept by the filter.  When observations are
    given the residuals are recomputed from the predicted means.
    """
    traj = trajectory
    T, n = traj.T, traj.n
    if observations is not None:
        Y = as_observations(model, observations)
        if Y.shape[0] != T:
            raise UsageError("observation length differs from trajectory")
        R = Y - traj.predicted_mean[1:] @ model.lead_field.T
    else:
        R = traj.innovations[1:]
    quad = 0.0
    for t in range(1, T + 1):
        z = scipy.linalg.solve_triangular(traj.innov_chol[t], R[t - 1], lower=True, check_finite=False)
        quad += float(z @ z)
    ll = -0.5 * n * T * LOG_2PI - 0.5 * float(np.sum(traj.innov_logdet[1:])) - 0.5 * quad
    if not np.isfinite(ll):
        raise ConditioningError("log-likelihood is not finite")
    return ll


def _configured(model: ModelSpec, config: EmConfig) -> ModelSpec:
    if config.b is not None:
        model = replace(model, prior=PriorSpec(config.b))
    if config.lam is not None:
        model = replace(model, noise=NoiseModel(config.lam, model.noise.tr_sigma_hat, model.noise.nu))
    return model


def dmap_em(model: ModelSpec, observations, config: EmConfig = EmConfig()) -> EmResult:
    """Alternate E- and M-steps until the cost stops changing.

    The returned trajectory, ``nu_map`` and model all belong to the last
    evaluated E-step.  With ``update_c0`` the initial covariance is replaced
    by ``V_{0|T}`` after each iteration; that step is a heuristic outside the
    EM guarantee, so the monotonicity check is only enforced without it.
    """
    Y = as_observations(model, observations)
    model = _configured(model, config)
    T = Y.shape[0]
    trace = EmTrace()
    prev = None
    for k in range(config.max_iters):
        stats, traj = e_step(model, Y, full_stats=model.p <= config.full_stats_limit)
        ll = innovations_log_likelihood(model, traj)
        lp = prior_log_density(model.noise.nu, model.prior)
        trace.records.append(IterationRecord(np.array(model.noise.nu), ll, lp))
        cost = ll + lp
        if prev is not None:
            if not config.update_c0 and cost < prev - 1e-9 * abs(prev):
                raise MonotonicityError(
                    f"cost decreased at iteration {k}: {prev!r} -> {cost!r}")
            if abs(cost - prev) / (1.0 + abs(cost)) < config.rel_tol:
                trace.converged = True
                break
        if k == config.max_iters - 1:
            break
        nu = m_step(stats, model, T)
        next_model = model.with_nu(nu)
        if config.update_c0:
            next_model = next_model.with_c0(traj.smoothed_cov[0])
        model = next_model
        prev = cost
        del stats, traj
    return EmResult(traj, np.array(model.noise.nu), trace, model)


def smap_em(model: ModelSpec, observations, config: EmConfig = EmConfig()) -> EmResult:
    """Static variant: the same EM with the temporal coupling removed."""
    return dmap_em(model.static(), observations, config)
