"""L2 minimum-norm estimate, the static comparator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DomainError, UsageError
from .model import sample_cov_trace


@dataclass(frozen=True)
class MneSpec:
    prior_cov: np.ndarray
    lead_field: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.prior_cov, dtype=float)
        X = np.asarray(self.lead_field, dtype=float)
        if X.ndim != 2 or C.shape != (X.shape[1], X.shape[1]):
            raise UsageError(f"prior covariance {C.shape} does not match lead field {X.shape}")
        if not np.allclose(C, C.T, rtol=0, atol=1e-12 * max(1.0, np.abs(C).max())):
            raise DomainError("prior covariance must be symmetric")
        if np.linalg.eigvalsh(0.5 * (C + C.T)).min() < -1e-10 * max(1.0, np.abs(C).max()):
            raise DomainError("prior covariance must be positive semidefinite")
        object.__setattr__(self, "prior_cov", C)
        object.__setattr__(self, "lead_field", X)

    @classmethod
    def default(cls, lead_field, snr: float = 5.0) -> "MneSpec":
        """``C = I / (lam tr(X'X)/n)`` with ``lam = 1/snr``."""
        X = np.asarray(lead_field, dtype=float)
        scale = sample_cov_trace(X) / snr
        return cls(np.eye(X.shape[1]) / scale, X)


@dataclass(frozen=True)
class MneResult:
    means: np.ndarray          # (T, p), row t-1 is the estimate for y_t
    posterior_cov: np.ndarray  # (p, p), shared by all t

    def ci_half_width(self) -> np.ndarray:
        return 2.0 * np.sqrt(np.clip(np.diag(self.posterior_cov), 0.0, None))


def mne_estimate(spec: MneSpec, observations) -> MneResult:
    """``beta_t = C X' (X C X' + I)^{-1} y_t`` independently for every ``t``."""
    X, C = spec.lead_field, spec.prior_cov
    Y = np.asarray(observations, dtype=float)
    if Y.ndim == 1:
        Y = Y[None, :]
    if Y.ndim != 2 or Y.shape[1] != X.shape[0]:
        raise UsageError(f"observations must be (T, {X.shape[0]}), got {Y.shape}")
    n = X.shape[0]
    XC = X @ C
    S = XC @ X.T + np.eye(n)
    Gt = scipy.linalg.cho_solve(scipy.linalg.cho_factor(S, lower=True), XC)  # (C X' S^{-1})'
    means = Y @ Gt
    post = C - Gt.T @ XC
    return MneResult(means, 0.5 * (post + post.T))
