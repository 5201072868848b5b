"""Model objects for the nearest-neighbor autoregressive source model.

Conventions
-----------
The state equation is ``beta_t = phi F beta_{t-1} + sqrt(1 - phi**2) omega_t``
with ``Cov(omega_t) = Q(nu) = diag(nu) / (lam * tr_sigma_hat)``.  ``F`` is
stored without ``phi`` so that its row-sum invariants can be checked; the
folded transition ``phi F`` and folded noise ``(1 - phi**2) Q`` are derived
on demand.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import DomainError, GraphError, StabilityError, UsageError

DEFAULT_PHI = 0.95
DEFAULT_B = 3.1
DEFAULT_SNR = 5.0

_ROW_TOL = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SourceGraph:
    """Dipole positions (mm) and a symmetric, distance-weighted neighbor relation.

    ``edges`` is an ``(m, 3)`` array of ``(i, j, distance)`` rows.  Each
    undirected edge may be listed once or in both directions; duplicates must
    agree on the distance.
    """

    positions: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise GraphError(f"positions must be (p, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise GraphError("positions must be finite")
        edges = np.asarray(self.edges, dtype=float).reshape(-1, 3)
        p = pos.shape[0]
        i = edges[:, 0].astype(np.int64)
        j = edges[:, 1].astype(np.int64)
        d = edges[:, 2]
        if np.any(i != edges[:, 0]) or np.any(j != edges[:, 1]):
            raise GraphError("edge endpoints must be integers")
        if np.any((i < 0) | (i >= p) | (j < 0) | (j >= p)):
            raise GraphError("edge endpoint out of range")
        if np.any(i == j):
            raise GraphError("self edges are not allowed")
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise GraphError("edge distances must be finite and > 0")
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        order = np.lexsort((hi, lo))
        lo, hi, d = lo[order], hi[order], d[order]
        if lo.size:
            dup = (lo[1:] == lo[:-1]) & (hi[1:] == hi[:-1])
            if np.any(dup & (d[1:] != d[:-1])):
                raise GraphError("duplicate edge with conflicting distances")
            keep = np.concatenate([[True], ~dup])
            lo, hi, d = lo[keep], hi[keep], d[keep]
        canon = np.column_stack([lo, hi, d]) if lo.size else np.zeros((0, 3))
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "edges", _frozen(canon))

    @property
    def p(self) -> int:
        return self.positions.shape[0]

    def distance_matrix(self) -> sp.csr_matrix:
        """Symmetric sparse matrix of edge distances (zero off the edge set)."""
        lo = self.edges[:, 0].astype(np.int64)
        hi = self.edges[:, 1].astype(np.int64)
        d = self.edges[:, 2]
        rows = np.concatenate([lo, hi])
        cols = np.concatenate([hi, lo])
        vals = np.concatenate([d, d])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.p, self.p))

    def neighbors(self, i: int) -> np.ndarray:
        D = self.distance_matrix()
        return D.indices[D.indptr[i]:D.indptr[i + 1]].copy()

    def degree(self) -> np.ndarray:
        return np.diff(self.distance_matrix().indptr)


def spectral_radius(M, iters: int = 200, tol: float = 1e-10, seed: int = 0) -> float:
    """Estimate the spectral radius of ``M`` by power iteration.

    Returns the converged norm ratio ``||M x|| / ||x||``.  When the dominant
    eigenvalues form a complex or nearly tied pair the ratio oscillates;
    the geometric mean over the second half of the run is returned instead.
    Small dense inputs use an exact eigenvalue solve.
    """
    if not sp.issparse(M):
        M = np.asarray(M, dtype=float)
        if M.shape[0] <= 64:
            return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0
    p = M.shape[0]
    if p == 0:
        return 0.0
    x = np.random.default_rng(seed).uniform(0.5, 1.5, size=p)
    x /= np.linalg.norm(x)
    norms = []
    for _ in range(iters):
        y = M @ x
        nrm = float(np.linalg.norm(y))
        if nrm == 0.0:
            return 0.0
        x = y / nrm
        if norms and abs(nrm - norms[-1]) <= tol * max(nrm, 1.0):
            return nrm
        norms.append(nrm)
    tail = np.asarray(norms[len(norms) // 2:])
    return float(np.exp(np.mean(np.log(tail))))


@dataclass(frozen=True)
class FeedbackMatrix:
    """Sparse nearest-neighbor feedback matrix ``F`` and its scalar gain ``phi``."""

    entries: sp.csr_matrix
    phi: float = DEFAULT_PHI

    def __post_init__(self):
        if not (0.0 <= self.phi < 1.0):
            raise DomainError(f"phi must lie in [0, 1), got {self.phi}")
        F = sp.csr_matrix(self.entries, dtype=float)
        if F.shape[0] != F.shape[1]:
            raise UsageError("feedback matrix must be square")
        F.sort_indices()
        object.__setattr__(self, "entries", F)
        object.__setattr__(self, "phi", float(self.phi))

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    @property
    def transition(self) -> sp.csr_matrix:
        """The folded transition ``phi F``."""
        return (self.phi * self.entries).tocsr()

    def check_invariants(self) -> None:
        F = self.entries
        diag = F.diagonal()
        rows = np.asarray(F.sum(axis=1)).ravel()
        nnz_off = np.diff(F.indptr) - (diag != 0)
        isolated = nnz_off == 0
        if np.any(np.abs(rows - 1.0) > _ROW_TOL):
            raise GraphError("feedback rows must sum to one")
        if np.any(np.abs(diag[~isolated] - 0.5) > _ROW_TOL):
            raise GraphError("self weight must equal neighbor weight")
        if np.any(np.abs(diag[isolated] - 1.0) > _ROW_TOL):
            raise GraphError("isolated rows must carry unit self weight")
        rho = self.phi * spectral_radius(F)
        if not rho < 1.0:
            raise StabilityError(f"spectral radius of phi*F is {rho:.6g} >= 1")


def build_feedback_matrix(graph: SourceGraph, phi: float = DEFAULT_PHI) -> FeedbackMatrix:
    """Inverse-distance nearest-neighbor weights.

    Every non-isolated row gets ``f_ii = 1/2`` and neighbor weights
    ``f_ij = w / d_ij`` with ``w`` chosen so the neighbor weights also sum to
    ``1/2``.  Isolated nodes keep a unit self weight.
    """
    if not (0.0 <= phi < 1.0):
        raise DomainError(f"phi must lie in [0, 1), got {phi}")
    D = graph.distance_matrix()
    if D.nnz and D.data.min() <= 0:
        raise GraphError("edge distances must be > 0")
    inv = D.copy()
    inv.data = 1.0 / inv.data
    row_total = np.asarray(inv.sum(axis=1)).ravel()
    isolated = row_total == 0
    scale = np.where(isolated, 0.0, 0.5 / np.where(isolated, 1.0, row_total))
    off = sp.diags(scale) @ inv
    diag = np.where(isolated, 1.0, 0.5)
    F = (off + sp.diags(diag)).tocsr()
    fm = FeedbackMatrix(F, phi)
    fm.check_invariants()
    return fm


@dataclass(frozen=True)
class NoiseModel:
    """Parameterization ``Q(nu) = diag(nu) / (lam * tr_sigma_hat)``.

    ``lam`` is the inverse power SNR and ``tr_sigma_hat = tr(X'X)/n``.
    """

    lam: float
    tr_sigma_hat: float
    nu: np.ndarray

    def __post_init__(self):
        nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        if not (self.lam > 0 and np.isfinite(self.lam)):
            raise DomainError(f"lam must be > 0, got {self.lam}")
        if not (self.tr_sigma_hat > 0 and np.isfinite(self.tr_sigma_hat)):
            raise DomainError(f"tr_sigma_hat must be > 0, got {self.tr_sigma_hat}")
        if nu.ndim != 1 or not np.all(np.isfinite(nu)) or np.any(nu <= 0):
            raise DomainError("nu must be a vector of positive finite values")
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "tr_sigma_hat", float(self.tr_sigma_hat))
        object.__setattr__(self, "nu", _frozen(nu))

    @property
    def scale(self) -> float:
        """``lam * tr_sigma_hat``, the inverse of the unit-nu source variance."""
        return self.lam * self.tr_sigma_hat

    def q_diag(self) -> np.ndarray:
        return self.nu / self.scale

    def with_nu(self, nu) -> "NoiseModel":
        return NoiseModel(self.lam, self.tr_sigma_hat, nu)


def build_state_noise_cov(noise: NoiseModel) -> np.ndarray:
    return np.diag(noise.q_diag())


@dataclass(frozen=True)
class PriorSpec:
    """Inverse-gamma prior ``Pr(nu) ~ nu**(-b) exp(-b/nu)`` (shape ``b-1``, scale ``b``)."""

    b: float = DEFAULT_B

    def __post_init__(self):
        if not (self.b > 3 and np.isfinite(self.b)):
            raise DomainError(f"prior hyperparameter b must be > 3, got {self.b}")
        object.__setattr__(self, "b", float(self.b))

    @property
    def mode(self) -> float:
        return 1.0

    @property
    def variance(self) -> float:
        b = self.b
        return b * b / ((b - 2.0) ** 2 * (b - 3.0))


def prior_log_density(nu, prior: PriorSpec, normalized: bool = False) -> float:
    """Sum over coordinates of ``-b log nu_j - b / nu_j``.

    With ``normalized=True`` the log normalizing constant
    ``(b-1) log b - log Gamma(b-1)`` is added per coordinate.
    """
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    if np.any(~np.isfinite(nu)) or np.any(nu <= 0):
        raise DomainError("nu must be positive and finite")
    b = prior.b
    val = float(np.sum(-b * np.log(nu) - b / nu))
    if normalized:
        from scipy.special import gammaln

        val += nu.size * ((b - 1.0) * np.log(b) - gammaln(b - 1.0))
    return val


@dataclass(frozen=True)
class ModelSpec:
    """Whitened lead field plus every fixed and estimated model parameter."""

    lead_field: np.ndarray
    feedback: FeedbackMatrix
    noise: NoiseModel
    prior: PriorSpec
    c0: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.lead_field, dtype=float)
        if X.ndim != 2:
            raise UsageError("lead field must be a 2-D array")
        n, p = X.shape
        if not np.all(np.isfinite(X)):
            raise UsageError("lead field must be finite")
        if self.feedback.p != p:
            raise UsageError(f"feedback is {self.feedback.p}x{self.feedback.p}, lead field has p={p}")
        if self.noise.nu.shape != (p,):
            raise UsageError(f"nu has shape {self.noise.nu.shape}, expected ({p},)")
        c0 = np.asarray(self.c0, dtype=float)
        if c0.shape != (p, p):
            raise UsageError(f"c0 has shape {c0.shape}, expected ({p}, {p})")
        if not np.allclose(c0, c0.T, rtol=0, atol=1e-12 * max(1.0, np.abs(c0).max())):
            raise DomainError("c0 must be symmetric")
        try:
            np.linalg.cholesky(c0)
        except np.linalg.LinAlgError as exc:
            raise DomainError("c0 must be positive definite") from exc
        object.__setattr__(self, "lead_field", _frozen(X))
        object.__setattr__(self, "c0", _frozen(0.5 * (c0 + c0.T)))

    @property
    def n(self) -> int:
        return self.lead_field.shape[0]

    @property
    def p(self) -> int:
        return self.lead_field.shape[1]

    @property
    def phi(self) -> float:
        return self.feedback.phi

    def q_diag(self) -> np.ndarray:
        return self.noise.q_diag()

    def with_nu(self, nu) -> "ModelSpec":
        return ModelSpec(self.lead_field, self.feedback, self.noise.with_nu(nu), self.prior, self.c0)

    def with_c0(self, c0) -> "ModelSpec":
        return ModelSpec(self.lead_field, self.feedback, self.noise, self.prior, c0)

    def static(self) -> "ModelSpec":
        """Same model with the temporal coupling removed (``phi = 0``)."""
        fb = FeedbackMatrix(self.feedback.entries, 0.0)
        return ModelSpec(self.lead_field, fb, self.noise, self.prior, self.c0)

    @classmethod
    def initial(
        cls,
        lead_field,
        feedback: FeedbackMatrix,
        snr: float = DEFAULT_SNR,
        b: float = DEFAULT_B,
    ) -> "ModelSpec":
        """Default starting point: ``nu = 1`` and ``C0 = I / (lam tr_sigma_hat)``.

        ``snr`` is the power SNR, so ``lam = 1 / snr``.
        """
        if not snr > 0:
            raise DomainError(f"snr must be > 0, got {snr}")
        X = np.asarray(lead_field, dtype=float)
        n, p = X.shape
        tr = sample_cov_trace(X)
        noise = NoiseModel(1.0 / snr, tr, np.ones(p))
        c0 = np.eye(p) / noise.scale
        return cls(X, feedback, noise, PriorSpec(b), c0)


def sample_cov_trace(X) -> float:
    """``tr(X'X) / n`` without forming ``X'X``."""
    X = np.asarray(X, dtype=float)
    return float(np.sum(X * X) / X.shape[0])


def _folded(transition, q):
    if isinstance(transition, FeedbackMatrix):
        phi = transition.phi
        M = (phi * transition.entries).toarray()
        W = (1.0 - phi * phi) * np.asarray(q, dtype=float)
    else:
        M = transition.toarray() if sp.issparse(transition) else np.asarray(transition, dtype=float)
        W = np.asarray(q, dtype=float)
    if W.ndim == 1:
        W = np.diag(W)
    if M.shape != W.shape or M.shape[0] != M.shape[1]:
        raise UsageError(f"shape mismatch: transition {M.shape}, noise {W.shape}")
    return M, W


def steady_state_covariance(transition, q) -> np.ndarray:
    """Stationary covariance ``C = M C M' + W``.

    With a :class:`FeedbackMatrix`, ``M = phi F`` and ``W = (1 - phi**2) q``
    (the model's actual dynamics).  With a plain matrix, ``transition`` and
    ``q`` are taken as already folded.
    """
    M, W = _folded(transition, q)
    rho = spectral_radius(M)
    if not rho < 1.0:
        raise StabilityError(f"transition spectral radius {rho:.6g} >= 1")
    C = scipy.linalg.solve_discrete_lyapunov(M, W)
    return 0.5 * (C + C.T)


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs < self.rhs or (self.lhs == 0.0 and self.rhs == 0.0)


def perturbation_bound_check(transition, q, delta) -> BoundCheck:
    """Compare ``||C~ - C||_2`` against ``4 ||C~||_2 / (1 - ||M||_2**2) * ||dM||_2``.

    ``C`` and ``C~`` are the stationary covariances for ``M`` and ``M + dM``
    under the same (folded) noise.  The bound is meaningful when
    ``||M||_2 < 1``.
    """
    M, W = _folded(transition, q)
    dM = np.asarray(delta, dtype=float)
    if dM.shape != M.shape:
        raise UsageError(f"perturbation shape {dM.shape} != {M.shape}")
    C = steady_state_covariance(M, W)
    Ct = steady_state_covariance(M + dM, W)
    lhs = float(np.linalg.norm(Ct - C, 2))
    m2 = float(np.linalg.norm(M, 2))
    if m2 >= 1.0:
        rhs = np.inf
    else:
        rhs = 4.0 * float(np.linalg.norm(Ct, 2)) / (1.0 - m2 * m2) * float(np.linalg.norm(dM, 2))
    return BoundCheck(lhs, rhs)
