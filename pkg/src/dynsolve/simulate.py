"""Synthetic source spaces, lead fields and patch simulations.

Data are generated on a fine source graph and scored on a coarser one, so the
estimator never sees the discretization that produced the data.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.spatial

from .errors import ConfigError, DomainError, GeometryError, SimulationError, UsageError
from .io import fingerprint, graph_from_dict, graph_to_dict, read_dsmx, write_dsmx, write_json
from .model import SourceGraph

SOURCE_RADIUS_MM = 70.0
SENSOR_RADIUS_FACTOR = 1.2
NOISELESS_SNR = 1e6


# --------------------------------------------------------------------------
# graphs

def fibonacci_sphere(n: int, radius: float = SOURCE_RADIUS_MM, rotation=None) -> np.ndarray:
    """Quasi-uniform points on a sphere (golden-angle spiral)."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    theta = np.pi * (1.0 + np.sqrt(5.0)) * k
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
    if rotation is not None:
        pts = pts @ np.asarray(rotation).T
    return radius * pts


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def mesh_graph(points) -> SourceGraph:
    """Graph from the triangulated convex hull of points on a sphere."""
    points = np.asarray(points, dtype=float)
    hull = scipy.spatial.ConvexHull(points)
    tri = hull.simplices
    pairs = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [0, 2]]])
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    d = np.linalg.norm(points[pairs[:, 0]] - points[pairs[:, 1]], axis=1)
    return SourceGraph(points, np.column_stack([pairs, d]))


def sphere_graph(n: int, radius: float = SOURCE_RADIUS_MM, rng=None) -> SourceGraph:
    """Triangulated sphere mesh; a random global rotation when ``rng`` is given."""
    rot = random_rotation(rng) if rng is not None else None
    return mesh_graph(fibonacci_sphere(n, radius, rot))


def ring_graph(p: int, spacing: float = 1.0) -> SourceGraph:
    ang = 2 * np.pi * np.arange(p) / p
    rad = spacing / (2 * np.sin(np.pi / p)) if p > 2 else spacing
    pos = np.column_stack([rad * np.cos(ang), rad * np.sin(ang), np.zeros(p)])
    i = np.arange(p)
    edges = np.column_stack([i, (i + 1) % p, np.full(p, spacing)]) if p > 2 else np.zeros((0, 3))
    if p == 2:
        edges = np.array([[0, 1, spacing]])
    return SourceGraph(pos, edges)


def grid_graph(rows: int, cols: int, spacing: float = 1.0) -> SourceGraph:
    ii, jj = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    pos = np.column_stack([ii.ravel() * spacing, jj.ravel() * spacing, np.zeros(rows * cols)])
    idx = np.arange(rows * cols).reshape(rows, cols)
    right = np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()])
    down = np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])
    pairs = np.concatenate([right, down])
    return SourceGraph(pos, np.column_stack([pairs, np.full(len(pairs), spacing)]))


def nearest_node_map(fine: SourceGraph, coarse: SourceGraph) -> np.ndarray:
    """Index of the nearest coarse node for every fine node."""
    _, idx = scipy.spatial.cKDTree(coarse.positions).query(fine.positions)
    return idx.astype(np.int64)


# --------------------------------------------------------------------------
# lead fields and whitening

def _orientation_field(positions, rng) -> np.ndarray:
    radial = np.array(positions, dtype=float)
    nrm = np.linalg.norm(radial, axis=1, keepdims=True)
    radial = np.where(nrm > 0, radial / np.where(nrm > 0, nrm, 1.0), np.array([0.0, 0.0, 1.0]))
    tilt = rng.standard_normal((3, 3))
    o = radial + 0.5 * radial @ tilt.T
    o_n = np.linalg.norm(o, axis=1, keepdims=True)
    return np.where(o_n > 1e-12, o / np.where(o_n > 1e-12, o_n, 1.0), radial)


def synth_lead_field(graph: SourceGraph, n_sensors: int, seed=0, sensor_radius: Optional[float] = None,
                     gain_scale: float = 1e3) -> np.ndarray:
    """Smooth synthetic gain matrix ``(n_sensors, p)``.

    Sensors sit at seeded random directions on a sphere of radius
    ``1.2 * max |source|`` (or ``sensor_radius``).  Each dipole has an
    orientation given by a seeded smooth tilt of its radial direction, and
    ``X_ij = gain_scale * (o_j . u_ij) / d_ij**2`` where ``u_ij`` is the unit
    vector from source ``j`` to sensor ``i``.  Two graphs sampled from the
    same surface therefore share sensors and physics for a given seed.
    """
    if int(n_sensors) != n_sensors or n_sensors < 1:
        raise DomainError(f"n_sensors must be a positive integer, got {n_sensors}")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((int(n_sensors), 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    src = graph.positions
    R = SENSOR_RADIUS_FACTOR * float(np.max(np.linalg.norm(src, axis=1))) if sensor_radius is None else float(sensor_radius)
    sensors = R * dirs
    orient = _orientation_field(src, rng)
    diff = sensors[:, None, :] - src[None, :, :]      # (n, p, 3)
    dist = np.linalg.norm(diff, axis=2)
    scale = max(R, float(np.max(np.linalg.norm(src, axis=1))), 1.0)
    if np.any(dist <= 1e-9 * scale):
        raise GeometryError("a source coincides with a sensor")
    cosang = np.einsum("npk,pk->np", diff, orient) / dist
    X = gain_scale * cosang / dist ** 2
    if not np.all(np.isfinite(X)):
        raise GeometryError("non-finite gain")
    return X


@dataclass(frozen=True)
class Whitened:
    observations: np.ndarray
    lead_field: np.ndarray


def inv_sqrtm(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.allclose(A, A.T, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise DomainError("noise covariance must be a symmetric square matrix")
    w, U = np.linalg.eigh(0.5 * (A + A.T))
    if w.min() <= 0:
        raise DomainError("noise covariance must be positive definite")
    return (U / np.sqrt(w)) @ U.T


def whiten(raw_observations, raw_lead_field, noise_cov) -> Whitened:
    """Premultiply data and lead field by the symmetric inverse square root of ``noise_cov``."""
    W = inv_sqrtm(noise_cov)
    Y = np.asarray(raw_observations, dtype=float)
    X = np.asarray(raw_lead_field, dtype=float)
    if X.shape[0] != W.shape[0] or Y.shape[-1] != W.shape[0]:
        raise UsageError("noise covariance does not match sensor count")
    return Whitened(Y @ W.T, W @ X)


# --------------------------------------------------------------------------
# patch simulation

@dataclass(frozen=True)
class SimulationConfig:
    patch_indices: Sequence[int]
    waveform_freq_hz: float = 10.0
    sample_rate_hz: float = 200.0
    duration_s: float = 1.0
    target_snr: float = 5.0
    refinement_factor: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        patch = tuple(int(i) for i in self.patch_indices)
        object.__setattr__(self, "patch_indices", patch)
        if not patch:
            raise ConfigError("patch must not be empty")
        if len(set(patch)) != len(patch):
            raise ConfigError("patch indices must be unique")
        if not self.target_snr > 0:
            raise ConfigError("target_snr must be > 0")
        if not self.sample_rate_hz > 2 * self.waveform_freq_hz:
            raise ConfigError("sample rate must exceed twice the waveform frequency")
        if self.n_times < 1:
            raise ConfigError("duration yields no samples")

    @property
    def n_times(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    @property
    def noiseless(self) -> bool:
        return self.target_snr >= NOISELESS_SNR


@dataclass(frozen=True)
class SimulationOutput:
    observations: np.ndarray       # (T, n), whitened units
    true_coarse: np.ndarray        # (T, p_coarse)
    active_mask: np.ndarray        # (p_coarse,) bool
    achieved_snr: float
    true_fine: np.ndarray          # (T, p_fine)
    amplitude: float
    fine_to_coarse: np.ndarray
    config: SimulationConfig
    meta: dict = field(default_factory=dict)

    @property
    def truth_fingerprint(self) -> str:
        return fingerprint(self.true_coarse)


def waveform(config: SimulationConfig) -> np.ndarray:
    """``sin(2 pi f t / rate)`` for ``t = 1..T`` with round-off zeros snapped to 0."""
    t = np.arange(1, config.n_times + 1)
    s = np.sin(2.0 * np.pi * config.waveform_freq_hz * t / config.sample_rate_hz)
    s[np.abs(s) < 1e-12] = 0.0
    return s


def simulate_patch(fine_graph: SourceGraph, fine_lead_field, config: SimulationConfig,
                   coarse_graph: SourceGraph) -> SimulationOutput:
    """Sinusoidal patch activity on the fine graph, projected and noised.

    A single amplitude on the whole patch is calibrated so that
    ``sum ||X b_t||^2 / sum ||e_t||^2`` equals the target SNR, with unit-variance
    white noise ``e_t``.  Above ``NOISELESS_SNR`` the noise is omitted.
    Truth is summed onto the nearest coarse node for scoring.
    """
    if coarse_graph is fine_graph or (
        coarse_graph.p == fine_graph.p and np.array_equal(coarse_graph.positions, fine_graph.positions)
    ):
        raise ConfigError("simulation and estimation graphs must differ")
    X = np.asarray(fine_lead_field, dtype=float)
    if X.ndim != 2 or X.shape[1] != fine_graph.p:
        raise UsageError(f"fine lead field {X.shape} does not match fine graph p={fine_graph.p}")
    patch = np.asarray(config.patch_indices)
    if patch.min() < 0 or patch.max() >= fine_graph.p:
        raise ConfigError("patch index out of range")

    T, n = config.n_times, X.shape[0]
    rng = np.random.default_rng(config.rng_seed)
    s = waveform(config)
    unit = np.zeros((T, fine_graph.p))
    unit[:, patch] = s[:, None]
    signal = unit @ X.T
    sig_pow = float(np.sum(signal * signal))
    if not sig_pow > 0:
        raise SimulationError("patch produces no sensor signal")
    noise = rng.standard_normal((T, n))
    noise_pow = float(np.sum(noise * noise))
    amplitude = float(np.sqrt(min(config.target_snr, NOISELESS_SNR) * noise_pow / sig_pow))
    if config.noiseless:
        noise = np.zeros_like(noise)
    true_fine = amplitude * unit
    clean = true_fine @ X.T
    Y = clean + noise
    clean_pow = float(np.sum(clean * clean))
    achieved = clean_pow / float(np.sum(noise * noise)) if not config.noiseless else float("inf")
    if not config.noiseless and abs(achieved - config.target_snr) > 0.02 * config.target_snr:
        raise SimulationError(f"SNR calibration failed: {achieved} vs {config.target_snr}")

    f2c = nearest_node_map(fine_graph, coarse_graph)
    true_coarse = np.zeros((T, coarse_graph.p))
    np.add.at(true_coarse.T, f2c[patch], true_fine[:, patch].T)
    mask = np.any(true_coarse != 0.0, axis=0)
    meta = {
        "config": {**asdict(config), "patch_indices": list(config.patch_indices)},
        "achievedSnr": achieved,
        "seed": int(config.rng_seed),
        "amplitude": amplitude,
        "T": T, "n": n, "p": coarse_graph.p, "pFine": fine_graph.p,
        "fineToCoarse": "nearest-coarse-node summation",
        "truthFingerprint": fingerprint(true_coarse),
    }
    return SimulationOutput(Y, true_coarse, mask, achieved, true_fine, amplitude, f2c, config, meta)


def select_patch(graph: SourceGraph, size: int, rng, center: Optional[int] = None) -> np.ndarray:
    """``size`` nodes closest (Euclidean) to a center node, center drawn from ``rng`` if not given."""
    if not 1 <= size <= graph.p:
        raise ConfigError(f"patch size must be in [1, {graph.p}]")
    c = int(rng.integers(graph.p)) if center is None else int(center)
    d = np.linalg.norm(graph.positions - graph.positions[c], axis=1)
    return np.sort(np.argsort(d, kind="stable")[:size])


# --------------------------------------------------------------------------
# desk-scale presets

@dataclass(frozen=True)
class Preset:
    name: str
    n_coarse: int = 200
    refinement_factor: int = 4
    n_sensors: int = 32
    patch_size: int = 40           # fine nodes
    waveform_freq_hz: float = 10.0
    sample_rate_hz: float = 200.0
    duration_s: float = 1.0
    target_snr: float = 5.0


PRESETS = {
    "large-patch": Preset("large-patch", patch_size=40),
    "small-patch": Preset("small-patch", patch_size=6),
}


@dataclass(frozen=True)
class Scenario:
    coarse_graph: SourceGraph
    coarse_lead_field: np.ndarray
    fine_graph: SourceGraph
    fine_lead_field: np.ndarray
    config: SimulationConfig
    preset: Preset


def build_scenario(preset: Preset, seed: int, **overrides) -> Scenario:
    """Coarse/fine meshes, shared-physics lead fields and a seeded patch.

    ``overrides`` replace :class:`Preset` fields (``target_snr`` etc.).
    """
    unknown = set(overrides) - set(Preset.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown preset field(s): {sorted(unknown)}")
    preset = Preset(**{**asdict(preset), **{k: v for k, v in overrides.items() if v is not None}})
    ss = np.random.SeedSequence(seed)
    geo, lf, patch_ss, noise_ss = ss.spawn(4)
    lf_seed = int(lf.generate_state(1)[0])
    coarse = sphere_graph(preset.n_coarse)
    fine = sphere_graph(preset.n_coarse * preset.refinement_factor, rng=np.random.default_rng(geo))
    Xc = synth_lead_field(coarse, preset.n_sensors, lf_seed)
    Xf = synth_lead_field(fine, preset.n_sensors, lf_seed)
    patch = select_patch(fine, preset.patch_size, np.random.default_rng(patch_ss))
    cfg = SimulationConfig(
        patch_indices=patch.tolist(),
        waveform_freq_hz=preset.waveform_freq_hz,
        sample_rate_hz=preset.sample_rate_hz,
        duration_s=preset.duration_s,
        target_snr=preset.target_snr,
        refinement_factor=preset.refinement_factor,
        rng_seed=int(noise_ss.generate_state(1)[0]),
    )
    return Scenario(coarse, Xc, fine, Xf, cfg, preset)


def run_scenario(scn: Scenario) -> SimulationOutput:
    return simulate_patch(scn.fine_graph, scn.fine_lead_field, scn.config, scn.coarse_graph)


# --------------------------------------------------------------------------
# bundles

def write_bundle(directory, out: SimulationOutput, coarse_graph: SourceGraph, coarse_lead_field,
                 extra_meta: Optional[dict] = None) -> None:
    """observations.dsmx, truth.dsmx, mask.json, meta.json plus the coarse model files."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"output directory {d} does not exist")
    write_dsmx(d / "observations.dsmx", out.observations)
    write_dsmx(d / "truth.dsmx", out.true_coarse)
    write_json(d / "mask.json", {"active": [bool(v) for v in out.active_mask]})
    (d / "coarse_graph.json").write_text(json.dumps(graph_to_dict(coarse_graph)))
    write_dsmx(d / "coarse_leadfield.dsmx", coarse_lead_field)
    meta = dict(out.meta)
    if extra_meta:
        meta.update(extra_meta)
    if not np.isfinite(meta.get("achievedSnr", 0.0)):
        meta["achievedSnr"] = "inf"
    write_json(d / "meta.json", meta)


@dataclass(frozen=True)
class Bundle:
    observations: np.ndarray
    truth: np.ndarray
    active_mask: np.ndarray
    meta: dict
    coarse_graph: SourceGraph
    coarse_lead_field: np.ndarray


def read_bundle(directory) -> Bundle:
    d = Path(directory)
    Y = read_dsmx(d / "observations.dsmx")
    truth = read_dsmx(d / "truth.dsmx")
    mask = np.array(json.loads((d / "mask.json").read_text())["active"], dtype=bool)
    meta = json.loads((d / "meta.json").read_text())
    graph = graph_from_dict(json.loads((d / "coarse_graph.json").read_text()))
    X = read_dsmx(d / "coarse_leadfield.dsmx")
    return Bundle(Y, truth, mask, meta, graph, X)
