import numpy as np
import pytest
from hypothesis import given, settings

from dynsolve.errors import DomainError, UsageError
from dynsolve.estimation import penalized_ls_solve, smooth
from dynsolve.model import ModelSpec, build_feedback_matrix, sample_cov_trace
from dynsolve.simulate import ring_graph
from dynsolve.static import MneSpec, mne_estimate

from _helpers import seeds


def test_identity_example():
    res = mne_estimate(MneSpec(np.eye(2), np.eye(2)), [[2.0, -2.0]])
    np.testing.assert_allclose(res.means, [[1.0, -1.0]])
    np.testing.assert_allclose(res.posterior_cov, 0.5 * np.eye(2))
    np.testing.assert_allclose(res.ci_half_width(), 2 * np.sqrt(0.5))


def test_zero_data_zero_estimate_same_ci():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((3, 5))
    spec = MneSpec.default(X, 5.0)
    a = mne_estimate(spec, np.zeros((4, 3)))
    b = mne_estimate(spec, rng.standard_normal((4, 3)))
    assert np.all(a.means == 0.0)
    np.testing.assert_array_equal(a.ci_half_width(), b.ci_half_width())


def test_default_prior_cov():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((3, 5))
    spec = MneSpec.default(X, 4.0)
    np.testing.assert_allclose(spec.prior_cov, np.eye(5) / (0.25 * sample_cov_trace(X)))


def test_spec_validation():
    with pytest.raises(UsageError):
        MneSpec(np.eye(3), np.eye(2))
    with pytest.raises(DomainError):
        MneSpec(-np.eye(2), np.eye(2))
    with pytest.raises(DomainError):
        MneSpec(np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(2))
    with pytest.raises(UsageError):
        mne_estimate(MneSpec(np.eye(2), np.eye(2)), np.zeros((3, 4)))


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_equals_penalized_ls_with_zero_mean(seed):
    rng = np.random.default_rng(seed)
    n, p = rng.integers(1, 5), rng.integers(1, 7)
    X = rng.standard_normal((n, p))
    A = rng.standard_normal((p, p))
    C = A @ A.T + 0.01 * np.eye(p)
    Y = rng.standard_normal((6, n))
    res = mne_estimate(MneSpec(C, X), Y)
    for t in range(6):
        ref = penalized_ls_solve(np.zeros(p), C, X, Y[t])
        assert np.max(np.abs(res.means[t] - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_time_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((3, 4))
    Y = rng.standard_normal((9, 3))
    perm = rng.permutation(9)
    spec = MneSpec.default(X)
    np.testing.assert_allclose(mne_estimate(spec, Y[perm]).means, mne_estimate(spec, Y).means[perm],
                               rtol=1e-13, atol=1e-15)


def test_matches_first_filtered_step_when_static():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((3, 6))
    m = ModelSpec.initial(X, build_feedback_matrix(ring_graph(6), 0.0), snr=5.0)
    y = rng.standard_normal((1, 3))
    tr = smooth(m, y)
    res = mne_estimate(MneSpec.default(X, 5.0), y)
    np.testing.assert_allclose(tr.filtered_mean[1], res.means[0], rtol=1e-12)
    np.testing.assert_allclose(tr.filtered_cov[1], res.posterior_cov, rtol=1e-10, atol=1e-15)
