import numpy as np
import pytest
from hypothesis import given, settings

from dynsolve.errors import DegenerateTruthError, UsageError
from dynsolve.evaluation import (auc_from_points, compare_methods, default_thresholds, evaluate,
                                 percent_reduction, rmse_per_dipole, rmse_summary, roc_points)

from _helpers import seeds


def truth_fixture(rng, T=20, p=30, k=5):
    S = np.zeros((T, p))
    S[:, :k] = rng.standard_normal((T, k)) + 3.0
    return S


def test_perfect_detector():
    rng = np.random.default_rng(0)
    S = truth_fixture(rng)
    c = 0.5 * np.min(np.abs(S[S != 0]))
    pts = roc_points(S, S, [c])
    assert pts[0, 1] == 0.0 and pts[0, 2] == 1.0
    assert auc_from_points(roc_points(S, S)) == pytest.approx(1.0)
    assert auc_from_points(roc_points(-S, S)) == pytest.approx(1.0)


def test_hand_case():
    S = np.array([[1.0, 1.0, 0.0, 0.0]])
    E = np.array([[3.0, 1.0, 2.0, 0.0]])
    c, fa, det = roc_points(E, S, [1.5])[0]
    assert (det, fa) == (0.5, 0.5)


def test_chance_level():
    rng = np.random.default_rng(1)
    S = np.zeros((100, 100))
    S[:, :50] = 1.0
    E = rng.standard_normal((100, 100))
    assert abs(auc_from_points(roc_points(E, S)) - 0.5) < 0.05


def test_degenerate_truth():
    with pytest.raises(DegenerateTruthError):
        roc_points(np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(DegenerateTruthError):
        roc_points(np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(UsageError):
        roc_points(np.ones((2, 3)), np.ones((2, 2)))


def test_default_grid():
    g = default_thresholds(np.array([[0.5, -4.0]]))
    assert g[0] == 0.0 and g[-1] == np.inf
    assert g.size == 514
    assert g[1] == pytest.approx(1e-6) and g[-2] == pytest.approx(4.0)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_roc_monotone_in_threshold(seed):
    rng = np.random.default_rng(seed)
    S = truth_fixture(rng)
    E = S + rng.standard_normal(S.shape)
    pts = roc_points(E, S)
    assert np.all(np.diff(pts[:, 1]) <= 0) and np.all(np.diff(pts[:, 2]) <= 0)
    assert np.all((pts[:, 1:] >= 0) & (pts[:, 1:] <= 1))
    assert 0.0 <= auc_from_points(pts) <= 1.0


def test_rmse_examples():
    rng = np.random.default_rng(2)
    S = rng.standard_normal((7, 4))
    assert np.all(rmse_per_dipole(S, S) == 0)
    E = S.copy()
    E[:, 2] += 0.3
    r = rmse_per_dipole(E, S)
    assert r[2] == pytest.approx(0.3) and r[[0, 1, 3]].max() == 0
    _, _, qs = rmse_summary(np.arange(1.0, 6.0)[None, :], np.zeros((1, 5)), np.zeros(5, bool))
    assert qs[0.5] == 3.0
    with pytest.raises(UsageError):
        rmse_per_dipole(np.zeros((0, 3)), np.zeros((0, 3)))


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_rmse_time_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    E, S = rng.standard_normal((9, 5)), rng.standard_normal((9, 5))
    perm = rng.permutation(9)
    np.testing.assert_allclose(rmse_per_dipole(E[perm], S[perm]), rmse_per_dipole(E, S), rtol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_quantiles_monotone(seed):
    rng = np.random.default_rng(seed)
    S = truth_fixture(rng)
    rep = evaluate("x", S + rng.standard_normal(S.shape), S)
    vals = [rep.outside_quantiles[q] for q in sorted(rep.outside_quantiles)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_compare_methods():
    rng = np.random.default_rng(3)
    S = truth_fixture(rng)
    E = S + rng.standard_normal(S.shape)
    a, b = evaluate("a", E, S), evaluate("b", E, S)
    c = compare_methods({"a": a, "b": b})
    assert all(v == 0.0 for v in c.reductions["a"]["b"].values())
    assert percent_reduction(0.1, 0.2) == pytest.approx(50.0)
    assert percent_reduction(0.0, 0.0) == 0.0
    worse = evaluate("w", 2 * E, S)
    c = compare_methods({"a": a, "w": worse})
    assert "reduction vs w" in c.table("a", quantile_values=a.outside_quantiles)
    other = evaluate("o", E, S + 1.0 * (S != 0))
    with pytest.raises(UsageError):
        compare_methods({"a": a, "o": other})
    with pytest.raises(UsageError):
        compare_methods({"a": a})


def test_report_files(tmp_path):
    rng = np.random.default_rng(4)
    S = truth_fixture(rng)
    rep = evaluate("m", S, S)
    rep.write(tmp_path)
    import json

    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["auc"] == 1.0 and doc["meta"]["quantile_method"] == "linear"
    assert (tmp_path / "roc.csv").read_text().startswith("c,prFA,prD\n")
    assert (tmp_path / "rmse.csv").read_text().startswith("dipole,rmse,inside\n")
