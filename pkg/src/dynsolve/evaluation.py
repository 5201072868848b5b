"""ROC, RMSE and method comparison against simulated truth."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateTruthError, UsageError
from .io import fingerprint

QUANTILES = (0.01, 0.25, 0.5, 0.75, 0.99)
TABLE_QUANTILES = (0.5, 0.75, 0.99)
QUANTILE_METHOD = "linear"


def default_thresholds(estimates, n: int = 512, floor: float = 1e-6) -> np.ndarray:
    """0, ``n`` log-spaced values in ``[floor, max|est|]``, and +inf."""
    top = float(np.max(np.abs(estimates))) if np.size(estimates) else 0.0
    grid = np.geomspace(floor, top, n) if top > floor else np.array([top])
    return np.unique(np.concatenate([[0.0], grid, [np.inf]]))


def _check_pair(estimates, truth):
    E = np.asarray(estimates, dtype=float)
    S = np.asarray(truth, dtype=float)
    if E.shape != S.shape:
        raise UsageError(f"estimates {E.shape} and truth {S.shape} differ in shape")
    return E, S


def roc_points(estimates, truth, thresholds=None) -> np.ndarray:
    """Rows ``(c, prFA(c), prD(c))`` from indicator counts of ``|est| > c``."""
    E, S = _check_pair(estimates, truth)
    active = S != 0
    n_act = int(active.sum())
    n_in = active.size - n_act
    if n_act == 0 or n_in == 0:
        raise DegenerateTruthError("truth needs both zero and nonzero entries")
    c = default_thresholds(E) if thresholds is None else np.sort(np.asarray(thresholds, dtype=float))
    # counts of |est| > c via sorted magnitudes
    a_on = np.sort(np.abs(E[active]))
    a_off = np.sort(np.abs(E[~active]))
    det = (n_act - np.searchsorted(a_on, c, side="right")) / n_act
    fa = (n_in - np.searchsorted(a_off, c, side="right")) / n_in
    return np.column_stack([c, fa, det])


def auc_from_points(points) -> float:
    """Trapezoid area over ``(prFA, prD)`` with ``(0,0)`` and ``(1,1)`` appended."""
    pts = np.asarray(points)[:, 1:3]
    pts = np.vstack([[0.0, 0.0], pts, [1.0, 1.0]])
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    fa, det = pts[order, 0], pts[order, 1]
    return float(np.sum(np.diff(fa) * 0.5 * (det[1:] + det[:-1])))


def rmse_per_dipole(estimates, truth) -> np.ndarray:
    E, S = _check_pair(estimates, truth)
    if E.ndim != 2 or E.shape[0] < 1:
        raise UsageError("need (T, p) arrays with T >= 1")
    return np.sqrt(np.mean((E - S) ** 2, axis=0))


@dataclass
class EvalReport:
    """Scores for one method on one truth array."""

    method: str
    roc: np.ndarray                       # (k, 3): c, prFA, prD
    auc: float
    rmse_per_dipole: np.ndarray
    active_mask: np.ndarray
    inside_mean: float
    outside_quantiles: Dict[float, float]
    truth_fingerprint: str
    ci_half_widths: Optional[np.ndarray] = None
    meta: dict = field(default_factory=lambda: {"quantile_method": QUANTILE_METHOD})

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "auc": self.auc,
            "insideMeanRmse": self.inside_mean,
            "outsideQuantiles": {repr(q): v for q, v in self.outside_quantiles.items()},
            "truthFingerprint": self.truth_fingerprint,
            "nRocPoints": int(self.roc.shape[0]),
            "meta": self.meta,
        }

    def write(self, directory, prefix: str = "") -> None:
        from pathlib import Path

        d = Path(directory)
        with open(d / f"{prefix}roc.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["c", "prFA", "prD"])
            for c, fa, det in self.roc:
                w.writerow([repr(float(c)), repr(float(fa)), repr(float(det))])
        with open(d / f"{prefix}rmse.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dipole", "rmse", "inside"])
            for j, (r, m) in enumerate(zip(self.rmse_per_dipole, self.active_mask)):
                w.writerow([j, repr(float(r)), int(bool(m))])
        (d / f"{prefix}report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def rmse_summary(estimates, truth, active_mask) -> Tuple[np.ndarray, float, Dict[float, float]]:
    r = rmse_per_dipole(estimates, truth)
    mask = np.asarray(active_mask, dtype=bool)
    if mask.shape != r.shape:
        raise UsageError("active mask does not match dipole count")
    inside = float(np.mean(r[mask])) if mask.any() else float("nan")
    out = r[~mask]
    qs = {q: float(np.quantile(out, q, method=QUANTILE_METHOD)) if out.size else float("nan") for q in QUANTILES}
    return r, inside, qs


def evaluate(method: str, estimates, truth, active_mask=None, thresholds=None,
             ci_half_widths=None) -> EvalReport:
    """ROC/AUC plus RMSE summaries for one estimate array ``(T, p)``."""
    E, S = _check_pair(estimates, truth)
    mask = np.any(S != 0, axis=0) if active_mask is None else np.asarray(active_mask, dtype=bool)
    pts = roc_points(E, S, thresholds)
    r, inside, qs = rmse_summary(E, S, mask)
    return EvalReport(method, pts, auc_from_points(pts), r, mask, inside, qs, fingerprint(S), ci_half_widths)


def percent_reduction(value: float, reference: float) -> float:
    """``100 (1 - value / reference)``; 0 when both are 0."""
    if reference == 0:
        return 0.0 if value == 0 else float("-inf")
    return 100.0 * (1.0 - value / reference)


@dataclass
class Comparison:
    auc_order: List[str]
    auc: Dict[str, float]
    inside_mean: Dict[str, float]
    # reductions[method][reference][q] -> percent
    reductions: Dict[str, Dict[str, Dict[float, float]]]

    def to_dict(self) -> dict:
        return {
            "aucOrder": self.auc_order,
            "auc": self.auc,
            "insideMeanRmse": self.inside_mean,
            "reductions": {m: {r: {repr(q): v for q, v in d.items()} for r, d in refs.items()}
                           for m, refs in self.reductions.items()},
        }

    def table(self, method: str, quantiles: Sequence[float] = TABLE_QUANTILES,
              quantile_values: Optional[Mapping[float, float]] = None) -> str:
        """Text table: ``method``'s outside-patch quantiles and its reductions vs the others."""
        head = "Method \\ Quantile".ljust(28) + "".join(f"{q:>10g}" for q in quantiles)
        lines = [head]
        if quantile_values is not None:
            lines.append(f"{method} (nAm)".ljust(28) + "".join(f"{quantile_values[q]:>10.3g}" for q in quantiles))
        for ref, d in self.reductions[method].items():
            lines.append(f"  reduction vs {ref}".ljust(28) + "".join(f"{d[q]:>9.0f}%" for q in quantiles))
        return "\n".join(lines)


def compare_methods(reports: Mapping[str, EvalReport]) -> Comparison:
    """AUC ranking and pairwise percentage reductions of outside-patch RMSE quantiles."""
    if len(reports) < 2:
        raise UsageError("need at least two reports to compare")
    fps = {r.truth_fingerprint for r in reports.values()}
    if len(fps) != 1:
        raise UsageError("reports were scored against different truth")
    names = list(reports)
    auc = {m: reports[m].auc for m in names}
    order = sorted(names, key=lambda m: -auc[m])
    red = {
        m: {
            ref: {q: percent_reduction(reports[m].outside_quantiles[q], reports[ref].outside_quantiles[q])
                  for q in QUANTILES}
            for ref in names if ref != m
        }
        for m in names
    }
    return Comparison(order, auc, {m: reports[m].inside_mean for m in names}, red)
