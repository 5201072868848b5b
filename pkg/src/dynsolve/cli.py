"""``dynsolve`` command line: graph | simulate | solve | evaluate.

Exit codes: 0 success, 1 configuration/usage error, 2 I/O error,
3 numerical failure.  Settings resolve as flags > ``--config`` JSON >
preset > built-in defaults, and the resolved values are written into the
metadata of every output so a run can be repeated from its files alone.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .em import EmConfig, dmap_em, smap_em
from .errors import (ConfigError, DataError, DynsolveError, UsageError)
from .evaluation import TABLE_QUANTILES, compare_methods, evaluate
from .io import fingerprint, read_dsmx, write_csv_matrix, write_dsmx, write_graph, write_json
from .model import DEFAULT_B, DEFAULT_PHI, DEFAULT_SNR, ModelSpec, build_feedback_matrix
from .simulate import PRESETS, Preset, build_scenario, read_bundle, run_scenario, sphere_graph, \
    synth_lead_field, write_bundle
from .static import MneSpec, mne_estimate

METHODS = ("mne", "fis", "smapem", "dmapem")
EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


@contextlib.contextmanager
def _thread_limit():
    n = os.environ.get("DYNSOLVE_THREADS")
    if not n:
        yield
        return
    try:
        limit = int(n)
    except ValueError:
        raise ConfigError(f"DYNSOLVE_THREADS must be an integer, got {n!r}") from None
    if limit < 1:
        raise ConfigError("DYNSOLVE_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=limit):
        yield


def _out_dir(path) -> Path:
    d = Path(path)
    if not d.is_dir():
        raise FileNotFoundError(f"output directory {d} does not exist")
    return d


def _load_config(path) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


def _resolve(flags: dict, config: dict, base: dict) -> dict:
    """``flags`` (None = unset) over ``config`` over ``base``."""
    unknown = set(config) - set(base)
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    out = dict(base)
    out.update(config)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


# --------------------------------------------------------------------------
# graph

def cmd_graph(args) -> int:
    d = _out_dir(args.output)
    rng = np.random.default_rng(args.seed) if args.rotate else None
    g = sphere_graph(args.nodes, rng=rng)
    X = synth_lead_field(g, args.sensors, args.seed)
    write_graph(d / "graph.json", g)
    write_dsmx(d / "leadfield.dsmx", X)
    write_json(d / "meta.json", {"nodes": args.nodes, "sensors": args.sensors, "seed": args.seed,
                                 "rotate": bool(args.rotate), "version": __version__})
    print(f"graph: p={g.p} edges={len(g.edges)} sensors={X.shape[0]}")
    return 0


# --------------------------------------------------------------------------
# simulate

_SIM_KEYS = ("n_coarse", "refinement_factor", "n_sensors", "patch_size", "waveform_freq_hz",
             "sample_rate_hz", "duration_s", "target_snr")


def cmd_simulate(args) -> int:
    d = _out_dir(args.output)
    if args.preset not in PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
    base = {k: v for k, v in asdict(PRESETS[args.preset]).items() if k != "name"}
    flags = {"target_snr": args.snr, "patch_size": args.patch_size, "n_coarse": args.n_coarse,
             "n_sensors": args.sensors, "waveform_freq_hz": args.freq, "sample_rate_hz": args.rate,
             "duration_s": args.duration}
    settings = _resolve(flags, _load_config(args.config), base)
    preset = Preset(args.preset, **{k: settings[k] for k in _SIM_KEYS})
    scn = build_scenario(preset, args.seed)
    out = run_scenario(scn)
    write_bundle(d, out, scn.coarse_graph, scn.coarse_lead_field, {
        "preset": args.preset, "scenarioSeed": args.seed, "settings": settings, "version": __version__,
    })
    print(f"achievedSnr={out.achieved_snr!r} seed={args.seed}")
    return 0


# --------------------------------------------------------------------------
# solve

_SOLVE_DEFAULTS = {"phi": DEFAULT_PHI, "snr": DEFAULT_SNR, "b": DEFAULT_B,
                   "max_iters": EmConfig.max_iters, "rel_tol": EmConfig.rel_tol,
                   "update_c0": EmConfig.update_c0}


def _observations(args, bundle):
    if args.observations is None:
        return bundle.observations
    return read_dsmx(args.observations)


def cmd_solve(args) -> int:
    d = _out_dir(args.output)
    if args.method not in METHODS:
        raise ConfigError(f"unknown method {args.method!r}")
    bundle = read_bundle(args.bundle)
    flags = {"phi": args.phi, "snr": args.snr, "b": args.b, "max_iters": args.max_iters,
             "rel_tol": args.rel_tol, "update_c0": False if args.no_update_c0 else None}
    s = _resolve(flags, _load_config(args.config), _SOLVE_DEFAULTS)
    if args.method == "fis":
        s["max_iters"] = 1
    Y = _observations(args, bundle)
    X = bundle.coarse_lead_field
    if Y.ndim != 2 or Y.shape[1] != X.shape[0]:
        raise UsageError(f"observations {Y.shape} do not match lead field {X.shape}")
    if not np.all(np.isfinite(Y)):
        raise DataError("observations contain non-finite values")

    meta = {"method": args.method, "settings": s, "bundle": str(args.bundle), "version": __version__,
            "truthFingerprint": bundle.meta.get("truthFingerprint"),
            "observationsFingerprint": fingerprint(Y)}
    arrays = {}
    if args.method == "mne":
        res = mne_estimate(MneSpec.default(X, s["snr"]), Y)
        arrays["estimates"] = res.means
        arrays["ci_half_width"] = np.broadcast_to(res.ci_half_width(), res.means.shape)
    else:
        model = ModelSpec.initial(X, build_feedback_matrix(bundle.coarse_graph, s["phi"]), s["snr"], s["b"])
        cfg = EmConfig(max_iters=int(s["max_iters"]), rel_tol=float(s["rel_tol"]),
                       update_c0=bool(s["update_c0"]))
        runner = smap_em if args.method == "smapem" else dmap_em
        res = runner(model, Y, cfg)
        traj = res.trajectory
        arrays["estimates"] = traj.smoothed_mean[1:]
        diag = np.einsum("tii->ti", traj.smoothed_cov[1:])
        arrays["ci_half_width"] = 2.0 * np.sqrt(np.clip(diag, 0.0, None))
        arrays["nu_map"] = res.nu_map
        res.trace.write_csv(d / "trace.csv")
        res.trace.write_json(d / "trace.json")
        meta.update(iterations=res.trace.iterations, converged=res.trace.converged,
                    finalCost=float(res.trace.costs[-1]))
    for name, a in arrays.items():
        write_dsmx(d / f"{name}.dsmx", a)
        if args.csv:
            write_csv_matrix(d / f"{name}.csv", a)
    write_json(d / "meta.json", meta)
    extra = f" iterations={meta['iterations']} converged={meta['converged']}" if "iterations" in meta else ""
    print(f"{args.method}: wrote {len(arrays)} arrays to {d}{extra}")
    return 0


# --------------------------------------------------------------------------
# evaluate

def _read_estimate(path):
    """An estimate is a solve output directory or a bare DSMX file."""
    p = Path(path)
    if p.is_dir():
        meta = json.loads((p / "meta.json").read_text())
        return meta.get("method", p.name), read_dsmx(p / "estimates.dsmx"), meta
    return p.stem, read_dsmx(p), {}


def cmd_evaluate(args) -> int:
    d = _out_dir(args.output)
    truth_dir = Path(args.truth)
    truth_file = truth_dir / "truth.dsmx" if truth_dir.is_dir() else truth_dir
    S = read_dsmx(truth_file)
    mask_file = truth_file.parent / "mask.json"
    mask = np.array(json.loads(mask_file.read_text())["active"], dtype=bool) if mask_file.exists() else None
    fp = fingerprint(S)
    reports = {}
    for path in args.estimates:
        label, E, meta = _read_estimate(path)
        recorded = meta.get("truthFingerprint")
        if recorded is not None and recorded != fp:
            raise UsageError(f"{path} was produced against different truth")
        if label in reports:
            label = f"{label}-{len(reports)}"
        reports[label] = evaluate(label, E, S, active_mask=mask)
    single = len(reports) == 1
    for label, rep in reports.items():
        target = d if single else d / label
        target.mkdir(exist_ok=True)
        rep.write(target)
        print(f"{label}: auc={rep.auc:.4f} insideMeanRmse={rep.inside_mean:.4g}")
    if not single:
        comp = compare_methods(reports)
        write_json(d / "comparison.json", comp.to_dict())
        blocks = []
        for label in reports:
            blocks.append(comp.table(label, TABLE_QUANTILES, reports[label].outside_quantiles))
        text = "\n\n".join(blocks) + "\n"
        (d / "comparison.txt").write_text(text)
        print("AUC order: " + " > ".join(comp.auc_order))
        print(text, end="")
    return 0


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dynsolve", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("graph", help="synthetic sphere graph and lead field")
    g.add_argument("--nodes", type=int, default=200)
    g.add_argument("--sensors", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rotate", action="store_true", help="randomly rotate the mesh (seeded)")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_graph)

    s = sub.add_parser("simulate", help="patch simulation bundle")
    s.add_argument("--preset", default="large-patch")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config")
    s.add_argument("--snr", type=float)
    s.add_argument("--patch-size", type=int)
    s.add_argument("--n-coarse", type=int)
    s.add_argument("--sensors", type=int)
    s.add_argument("--freq", type=float)
    s.add_argument("--rate", type=float)
    s.add_argument("--duration", type=float)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("solve", help="estimate sources from a bundle")
    v.add_argument("--bundle", required=True)
    v.add_argument("--method", required=True, choices=METHODS)
    v.add_argument("--observations", help="DSMX file replacing the bundle's observations")
    v.add_argument("--config")
    v.add_argument("--phi", type=float)
    v.add_argument("--snr", type=float)
    v.add_argument("--b", type=float)
    v.add_argument("--max-iters", type=int)
    v.add_argument("--rel-tol", type=float)
    v.add_argument("--no-update-c0", action="store_true")
    v.add_argument("--csv", action="store_true", help="also write CSV copies")
    v.add_argument("-o", "--output", required=True)
    v.set_defaults(func=cmd_solve)

    e = sub.add_parser("evaluate", help="ROC/RMSE against a bundle's truth")
    e.add_argument("--truth", required=True, help="bundle directory or truth DSMX file")
    e.add_argument("estimates", nargs="+", help="solve output directories or DSMX files")
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(func=cmd_evaluate)
    return ap


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ArithmeticError) or (isinstance(exc, RuntimeError) and isinstance(exc, DynsolveError)):
        return EXIT_NUMERIC
    if isinstance(exc, DynsolveError) or isinstance(exc, (KeyError, TypeError)):
        return EXIT_CONFIG
    if isinstance(exc, (OSError, ValueError)):
        # ValueError here is a malformed file (bad DSMX header, bad JSON)
        return EXIT_IO
    return EXIT_NUMERIC


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except (DynsolveError, OSError, ValueError, KeyError, TypeError, ArithmeticError) as exc:
        print(f"dynsolve: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
