import numpy as np
import pytest

from dynsolve.errors import ConfigError, DomainError, GeometryError, UsageError
from dynsolve.io import fingerprint
from dynsolve.model import SourceGraph, sample_cov_trace
from dynsolve.simulate import (PRESETS, SimulationConfig, build_scenario, fibonacci_sphere, inv_sqrtm,
                               nearest_node_map, read_bundle, run_scenario, select_patch, simulate_patch,
                               sphere_graph, synth_lead_field, waveform, whiten, write_bundle)


@pytest.fixture(scope="module")
def small_world():
    coarse = sphere_graph(50)
    fine = sphere_graph(200, rng=np.random.default_rng(1))
    Xf = synth_lead_field(fine, 8, seed=3)
    patch = select_patch(fine, 6, np.random.default_rng(2))
    return coarse, fine, Xf, patch


def test_fibonacci_sphere_radius_and_mesh():
    pts = fibonacci_sphere(100, 70.0)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 70.0)
    g = sphere_graph(100)
    assert g.p == 100
    assert np.all(g.degree() >= 3)
    # closed triangulated sphere: E = 3V - 6
    assert len(g.edges) == 3 * 100 - 6


def test_lead_field_single_source_inverse_square():
    g = SourceGraph(np.zeros((1, 3)))
    X1 = synth_lead_field(g, 1, seed=0, sensor_radius=10.0)
    X2 = synth_lead_field(g, 1, seed=0, sensor_radius=20.0)
    assert X1.shape == (1, 1) and X1[0, 0] != 0.0
    assert X2[0, 0] == pytest.approx(X1[0, 0] / 4.0, rel=1e-12)


def test_lead_field_doubling_distances_quarters_gain():
    g = sphere_graph(30)
    g2 = SourceGraph(2 * g.positions, g.edges)
    X = synth_lead_field(g, 5, seed=4)
    X2 = synth_lead_field(g2, 5, seed=4)
    np.testing.assert_allclose(X2, X / 4.0, rtol=1e-12)


def test_lead_field_geometry_and_trace():
    g = sphere_graph(40)
    X = synth_lead_field(g, 6, seed=5)
    assert np.all(np.isfinite(X)) and np.all(np.linalg.norm(X, axis=0) > 0)
    np.testing.assert_array_equal(X, synth_lead_field(g, 6, seed=5))
    manual = sum(X[:, j] @ X[:, j] for j in range(X.shape[1])) / X.shape[0]
    assert sample_cov_trace(X) == pytest.approx(manual, rel=1e-12)
    with pytest.raises(GeometryError):
        synth_lead_field(SourceGraph(np.zeros((1, 3))), 3, seed=0, sensor_radius=0.0)
    with pytest.raises(DomainError):
        synth_lead_field(g, 0)


def test_whiten_examples():
    rng = np.random.default_rng(6)
    Y, X = rng.standard_normal((4, 3)), rng.standard_normal((3, 5))
    w = whiten(Y, X, 4 * np.eye(3))
    np.testing.assert_allclose(w.observations, Y / 2)
    np.testing.assert_allclose(w.lead_field, X / 2)
    w = whiten(Y, X, np.eye(3))
    np.testing.assert_allclose(w.observations, Y)
    with pytest.raises(DomainError):
        whiten(Y, X, -np.eye(3))


def test_whiten_monte_carlo():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((5, 5))
    Sigma = A @ A.T + 0.5 * np.eye(5)
    E = rng.multivariate_normal(np.zeros(5), Sigma, size=10_000)
    W = whiten(E, np.eye(5), Sigma).observations
    assert np.linalg.norm(np.cov(W.T) - np.eye(5)) < 0.1
    np.testing.assert_allclose(inv_sqrtm(Sigma) @ Sigma @ inv_sqrtm(Sigma), np.eye(5), atol=1e-10)


def test_config_validation():
    with pytest.raises(ConfigError):
        SimulationConfig([])
    with pytest.raises(ConfigError):
        SimulationConfig([1], target_snr=0.0)
    with pytest.raises(ConfigError):
        SimulationConfig([1], waveform_freq_hz=100.0, sample_rate_hz=200.0)
    assert SimulationConfig([1]).n_times == 200


def test_waveform_peak_at_frequency():
    cfg = SimulationConfig([0])
    s = waveform(cfg)
    spec = np.abs(np.fft.rfft(s))
    freqs = np.fft.rfftfreq(len(s), 1 / cfg.sample_rate_hz)
    assert freqs[np.argmax(spec)] == pytest.approx(10.0)


def test_snr_calibration(small_world):
    coarse, fine, Xf, patch = small_world
    out = simulate_patch(fine, Xf, SimulationConfig(patch.tolist(), rng_seed=9), coarse)
    assert 4.9 <= out.achieved_snr <= 5.1
    clean = out.true_fine @ Xf.T
    noise = out.observations - clean
    assert np.sum(clean ** 2) / np.sum(noise ** 2) == pytest.approx(out.achieved_snr, rel=1e-6)
    # truth: fine patch summed onto nearest coarse nodes
    f2c = nearest_node_map(fine, coarse)
    np.testing.assert_allclose(out.true_coarse.sum(axis=1), out.true_fine.sum(axis=1), atol=1e-9)
    assert set(np.flatnonzero(out.active_mask)) == set(f2c[patch].tolist())
    np.testing.assert_array_equal(out.active_mask, np.any(out.true_coarse != 0, axis=0))


def test_noiseless_limit(small_world):
    coarse, fine, Xf, patch = small_world
    out = simulate_patch(fine, Xf, SimulationConfig(patch.tolist(), target_snr=1e6), coarse)
    np.testing.assert_allclose(out.observations, out.true_fine @ Xf.T, rtol=0, atol=1e-12 * np.abs(out.observations).max())
    assert out.achieved_snr == float("inf")


def test_determinism(small_world):
    coarse, fine, Xf, patch = small_world
    cfg = SimulationConfig(patch.tolist(), rng_seed=11)
    a = simulate_patch(fine, Xf, cfg, coarse)
    b = simulate_patch(fine, Xf, cfg, coarse)
    np.testing.assert_array_equal(a.observations, b.observations)
    assert a.truth_fingerprint == b.truth_fingerprint


def test_refuses_inverse_crime(small_world):
    coarse, fine, Xf, patch = small_world
    with pytest.raises(ConfigError):
        simulate_patch(fine, Xf, SimulationConfig(patch.tolist()), fine)
    with pytest.raises(ConfigError):
        simulate_patch(fine, Xf, SimulationConfig([fine.p]), coarse)
    with pytest.raises(UsageError):
        simulate_patch(fine, Xf[:, :10], SimulationConfig([0]), coarse)


def test_presets_and_scenario_shapes():
    scn = build_scenario(PRESETS["small-patch"], 3)
    assert scn.coarse_graph.p == 200 and scn.fine_graph.p == 800
    assert scn.coarse_lead_field.shape == (32, 200) and scn.fine_lead_field.shape == (32, 800)
    with pytest.raises(ConfigError):
        build_scenario(PRESETS["small-patch"], 3, bogus=1)
    out = run_scenario(scn)
    assert out.observations.shape == (200, 32)
    assert 1 <= out.active_mask.sum() <= 6


def test_bundle_roundtrip(tmp_path, small_world):
    coarse, fine, Xf, patch = small_world
    Xc = synth_lead_field(coarse, 8, seed=3)
    out = simulate_patch(fine, Xf, SimulationConfig(patch.tolist(), rng_seed=1), coarse)
    write_bundle(tmp_path, out, coarse, Xc, {"note": "x"})
    b = read_bundle(tmp_path)
    np.testing.assert_array_equal(b.observations, out.observations)
    np.testing.assert_array_equal(b.truth, out.true_coarse)
    np.testing.assert_array_equal(b.active_mask, out.active_mask)
    assert b.meta["truthFingerprint"] == fingerprint(out.true_coarse)
    assert b.meta["fineToCoarse"] == "nearest-coarse-node summation"
    with pytest.raises(FileNotFoundError):
        write_bundle(tmp_path / "missing", out, coarse, Xc)
