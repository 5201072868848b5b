"""Kalman filter, fixed-interval (RTS) smoother and lag covariances.

Every per-time array in :class:`StateTrajectory` has a leading axis of
length ``T + 1`` indexed directly by ``t``:

* ``t = 0`` holds the initial state: ``beta_{0|0} = 0`` and ``V_{0|0} = C0``
  (also stored as the "prediction" at ``t = 0``).
* ``gains[t]`` is the smoother gain ``J_t`` for ``t < T``; ``gains[T]`` is zero.
* ``lag_cov[t]`` is ``V_{t,t-1|T}`` for ``t >= 1``; ``lag_cov[0]`` is zero.
* ``innovations[t]``, ``innov_chol[t]``, ``innov_logdet[t]`` describe the
  one-step residual of ``y_t`` for ``t >= 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import ConditioningError, DataError, UsageError
from .model import ModelSpec

_PSD_TOL = 1e-10
_JITTER = 1e-10


def _ro(a):
    if a is not None:
        a.setflags(write=False)
    return a


def _sym(V):
    return 0.5 * (V + V.T)


@dataclass(frozen=True)
class StateTrajectory:
    predicted_mean: np.ndarray
    predicted_cov: np.ndarray
    filtered_mean: np.ndarray
    filtered_cov: np.ndarray
    innovations: np.ndarray
    innov_chol: np.ndarray
    innov_logdet: np.ndarray
    smoothed_mean: Optional[np.ndarray] = None
    smoothed_cov: Optional[np.ndarray] = None
    gains: Optional[np.ndarray] = None
    lag_cov: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            _ro(getattr(self, name))

    @property
    def T(self) -> int:
        return self.filtered_mean.shape[0] - 1

    @property
    def p(self) -> int:
        return self.filtered_mean.shape[1]

    @property
    def n(self) -> int:
        return self.innovations.shape[1]

    @property
    def has_smoother(self) -> bool:
        return self.smoothed_mean is not None


def as_observations(model: ModelSpec, observations) -> np.ndarray:
    """Validate observations as a ``(T, n)`` float array."""
    Y = np.asarray(observations, dtype=float)
    if Y.ndim == 1 and model.n == 1:
        Y = Y[:, None]
    if Y.ndim != 2 or Y.shape[1] != model.n:
        raise UsageError(f"observations must be (T, {model.n}), got {Y.shape}")
    if Y.shape[0] < 1:
        raise UsageError("need at least one observation")
    if not np.all(np.isfinite(Y)):
        raise DataError("observations contain non-finite values")
    return Y


def _check_psd_diag(V, what, t):
    d = np.diag(V)
    if not np.all(np.isfinite(d)):
        raise ConditioningError(f"{what} at t={t} is not finite")
    if d.min() < -_PSD_TOL * max(1.0, d.max()):
        raise ConditioningError(f"{what} at t={t} lost positive semidefiniteness")


def kalman_filter(model: ModelSpec, observations) -> StateTrajectory:
    """Forward pass: predictions and filtered estimates for ``t = 1..T``."""
    Y = as_observations(model, observations)
    T, n = Y.shape
    p = model.p
    X = model.lead_field
    M = model.feedback.transition
    w = (1.0 - model.phi ** 2) * model.q_diag()
    eye_n = np.eye(n)

    pm = np.zeros((T + 1, p))
    pV = np.empty((T + 1, p, p))
    fm = np.zeros((T + 1, p))
    fV = np.empty((T + 1, p, p))
    innov = np.zeros((T + 1, n))
    chol = np.empty((T + 1, n, n))
    logdet = np.zeros(T + 1)
    pV[0] = fV[0] = model.c0
    chol[0] = eye_n

    b = fm[0]
    V = fV[0]
    for t in range(1, T + 1):
        bp = M @ b
        Vp = M @ (M @ V).T
        Vp[np.diag_indices(p)] += w
        Vp = _sym(Vp)
        XV = X @ Vp
        S = XV @ X.T + eye_n
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise ConditioningError(f"innovation covariance not positive definite at t={t}") from exc
        r = Y[t - 1] - X @ bp
        # G' = S^{-1} X Vp
        Gt = scipy.linalg.cho_solve((L, True), XV)
        b = bp + Gt.T @ r
        V = _sym(Vp - Gt.T @ XV)
        _check_psd_diag(V, "filtered covariance", t)
        pm[t], pV[t], fm[t], fV[t] = bp, Vp, b, V
        innov[t], chol[t] = r, L
        logdet[t] = 2.0 * np.sum(np.log(np.diag(L)))
    return StateTrajectory(pm, pV, fm, fV, innov, chol, logdet)


def _cho_factor_with_jitter(A, t):
    try:
        return scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    jitter = _JITTER * float(np.mean(np.diag(A)))
    try:
        return scipy.linalg.cho_factor(A + jitter * np.eye(A.shape[0]), lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"predicted covariance singular at t={t}") from exc


def fixed_interval_smoother(model: ModelSpec, forward: StateTrajectory) -> StateTrajectory:
    """Backward Rauch-Tung-Striebel pass for ``t = T-1..0``.

    The gain ``J_t = phi V_{t|t} F' V_{t+1|t}^{-1}`` is obtained from a
    Cholesky solve against the predicted covariance.
    """
    T, p = forward.T, forward.p
    if model.p != p:
        raise UsageError("model and trajectory dimensions differ")
    M = model.feedback.transition
    sm = np.array(forward.filtered_mean)
    sV = np.array(forward.filtered_cov)
    J = np.zeros((T + 1, p, p))
    # phi = 0: no temporal coupling, J_t = 0 and the smoother is the filter
    steps = range(T - 1, -1, -1) if model.phi != 0.0 else ()
    for t in steps:
        Vp1 = forward.predicted_cov[t + 1]
        B = M @ forward.filtered_cov[t]          # phi F V_{t|t}
        Jt = scipy.linalg.cho_solve(_cho_factor_with_jitter(Vp1, t + 1), B, check_finite=False).T
        sm[t] = forward.filtered_mean[t] + Jt @ (sm[t + 1] - forward.predicted_mean[t + 1])
        sV[t] = _sym(forward.filtered_cov[t] + Jt @ (sV[t + 1] - Vp1) @ Jt.T)
        J[t] = Jt
    return replace(forward, smoothed_mean=sm, smoothed_cov=sV, gains=J)


def lag_covariance(smoothed: StateTrajectory) -> np.ndarray:
    """``V_{t,t-1|T} = V_{t|T} J_{t-1}'`` stacked as ``(T+1, p, p)``; row 0 is zero."""
    if smoothed.gains is None or smoothed.smoothed_cov is None:
        raise UsageError("lag covariances need a completed smoother pass")
    T, p = smoothed.T, smoothed.p
    out = np.zeros((T + 1, p, p))
    for t in range(1, T + 1):
        out[t] = smoothed.smoothed_cov[t] @ smoothed.gains[t - 1].T
    return out


def smooth(model: ModelSpec, observations, with_lag: bool = True) -> StateTrajectory:
    """Filter, smoother and (optionally) lag covariances in one call."""
    traj = fixed_interval_smoother(model, kalman_filter(model, observations))
    if with_lag:
        traj = replace(traj, lag_cov=lag_covariance(traj))
    return traj


def penalized_ls_solve(prior_mean, prior_cov, x, y) -> np.ndarray:
    """Minimizer of ``||y - x b||^2 + ||b - mu||^2_{V^{-1}}``.

    Written in gain form ``mu + V x' (x V x' + I)^{-1} (y - x mu)`` so that a
    singular ``V`` is allowed.
    """
    mu = np.atleast_1d(np.asarray(prior_mean, dtype=float))
    V = np.atleast_2d(np.asarray(prior_cov, dtype=float))
    X = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n, p = X.shape
    if mu.shape != (p,) or V.shape != (p, p) or y.shape != (n,):
        raise UsageError(f"shape mismatch: mu {mu.shape}, V {V.shape}, x {X.shape}, y {y.shape}")
    XV = X @ V
    S = XV @ X.T + np.eye(n)
    Gt = scipy.linalg.cho_solve(scipy.linalg.cho_factor(S, lower=True), XV)
    return mu + Gt.T @ (y - X @ mu)
