"""Time-threshold accuracy curves and their exact area.

A policy's performance over a trial set is summarized by the curve
accuracy(theta) = fraction of trials that converged in time t < theta,
for thresholds theta in [0, window].  Because the curve is a step
function of the finitely many convergence times, its normalized area

    AUC = (1 / (window * N)) * sum_j max(0, window - t_j)

is computed exactly (failed trials contribute zero but stay in N).
A single trial converging at half the window scores exactly 0.5.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from qalign.errors import QalignError

__all__ = [
    "TrialResult",
    "RocCurve",
    "PolicyComparison",
    "PairingError",
    "accuracy_at",
    "exact_auc",
    "roc_curve",
    "compare_policies",
    "trials_to_csv",
    "trials_from_csv",
    "curve_to_csv",
    "TRIALS_CSV_HEADER",
    "CURVE_CSV_HEADER",
    "DEFAULT_WINDOW_S",
]

DEFAULT_WINDOW_S = 3600.0


class PairingError(QalignError):
    """Two trial sets claimed to be paired do not share seeds."""


@dataclass(frozen=True)
class TrialResult:
    """One alignment trial: start pose, outcome, convergence time.

    time_s is NaN when the trial did not converge.
    """

    trial_id: int
    policy: str
    seed: int
    r0_um: float
    theta0_rad: float
    z0_um: float
    converged: bool
    time_s: float


def _times(results: Sequence[TrialResult]) -> np.ndarray:
    """Convergence times with failures mapped to +inf."""
    out = np.full(len(results), np.inf)
    for i, r in enumerate(results):
        if r.converged and math.isfinite(r.time_s):
            out[i] = r.time_s
    return out


def accuracy_at(results: Sequence[TrialResult], threshold_s: float) -> float:
    """Fraction of trials converged strictly before `threshold_s`."""
    if not results:
        raise ValueError("empty trial set")
    return float(np.mean(_times(results) < threshold_s))


def exact_auc(results: Sequence[TrialResult], window_s: float = DEFAULT_WINDOW_S) -> float:
    """Exact normalized area under the accuracy-vs-threshold curve."""
    if not results:
        raise ValueError("empty trial set")
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    t = _times(results)
    contrib = np.clip(window_s - t, 0.0, None)
    contrib[~np.isfinite(t)] = 0.0
    return float(np.sum(contrib) / (window_s * len(results)))


@dataclass(frozen=True)
class RocCurve:
    """Sampled accuracy curve plus its exact area."""

    thresholds_s: np.ndarray
    accuracy: np.ndarray
    auc: float


def roc_curve(
    results: Sequence[TrialResult],
    n_thresholds: int = 121,
    window_s: float = DEFAULT_WINDOW_S,
) -> RocCurve:
    """Sample the accuracy curve on a uniform threshold grid.

    The reported `auc` is the exact step integral, not a quadrature of
    the sampled points.
    """
    if n_thresholds < 2:
        raise ValueError("n_thresholds must be >= 2")
    thresholds = np.linspace(0.0, window_s, n_thresholds)
    acc = np.array([accuracy_at(results, th) for th in thresholds])
    return RocCurve(thresholds_s=thresholds, accuracy=acc, auc=exact_auc(results, window_s))


# =====================================================================
# Paired comparison
# =====================================================================


@dataclass(frozen=True)
class PolicyComparison:
    """Head-to-head summary of two paired trial sets."""

    curve_a: RocCurve
    curve_b: RocCurve
    label_a: str
    label_b: str
    auc_a: float
    auc_b: float
    delta: float
    median_a_s: float
    median_b_s: float
    win_rate_b: float

    def format_report(self) -> str:
        """Key = value lines; medians are +inf when fewer than half of
        the trials converged."""
        lines = [
            f"auc_{self.label_a} = {self.auc_a:.6f}",
            f"auc_{self.label_b} = {self.auc_b:.6f}",
            f"delta = {self.delta:.6f}",
            f"median_{self.label_a}_s = {self.median_a_s:.3f}",
            f"median_{self.label_b}_s = {self.median_b_s:.3f}",
            f"win_rate = {self.win_rate_b:.6f}",
        ]
        return "\n".join(lines) + "\n"


def compare_policies(
    results_a: Sequence[TrialResult],
    results_b: Sequence[TrialResult],
    window_s: float = DEFAULT_WINDOW_S,
    n_thresholds: int = 121,
) -> PolicyComparison:
    """Compare paired trial sets (same trial_id/seed lists).

    Raises PairingError when the two sets were not generated from the
    same seed list, since medians and win rates are only meaningful on
    shared start poses.  win_rate is the fraction of pairs where policy
    B converged strictly faster than policy A (a converged run always
    beats an unconverged one).
    """
    key_a = [(r.trial_id, r.seed) for r in results_a]
    key_b = [(r.trial_id, r.seed) for r in results_b]
    if key_a != key_b:
        raise PairingError("trial sets are not paired: trial_id/seed lists differ")
    if not results_a:
        raise ValueError("empty trial sets")

    t_a, t_b = _times(results_a), _times(results_b)
    wins = np.sum(t_b < t_a)
    label_a = results_a[0].policy
    label_b = results_b[0].policy
    curve_a = roc_curve(results_a, n_thresholds, window_s)
    curve_b = roc_curve(results_b, n_thresholds, window_s)
    return PolicyComparison(
        curve_a=curve_a,
        curve_b=curve_b,
        label_a=label_a,
        label_b=label_b,
        auc_a=curve_a.auc,
        auc_b=curve_b.auc,
        delta=curve_b.auc - curve_a.auc,
        median_a_s=float(np.median(t_a)),
        median_b_s=float(np.median(t_b)),
        win_rate_b=float(wins / len(results_a)),
    )


# =====================================================================
# CSV serialization
# =====================================================================

TRIALS_CSV_HEADER = "trial_id,policy,seed,r0_um,theta0_rad,z0_um,converged,time_s"
CURVE_CSV_HEADER = "threshold_s,accuracy"


def trials_to_csv(results: Sequence[TrialResult], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIALS_CSV_HEADER.split(","))
        for r in results:
            writer.writerow(
                [
                    str(r.trial_id),
                    r.policy,
                    str(r.seed),
                    repr(float(r.r0_um)),
                    repr(float(r.theta0_rad)),
                    repr(float(r.z0_um)),
                    str(int(r.converged)),
                    repr(float(r.time_s)),
                ]
            )


def trials_from_csv(path) -> list[TrialResult]:
    results = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = set(TRIALS_CSV_HEADER.split(","))
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise ValueError(f"unexpected trials CSV header: {reader.fieldnames}")
        for row in reader:
            results.append(
                TrialResult(
                    trial_id=int(row["trial_id"]),
                    policy=row["policy"],
                    seed=int(row["seed"]),
                    r0_um=float(row["r0_um"]),
                    theta0_rad=float(row["theta0_rad"]),
                    z0_um=float(row["z0_um"]),
                    converged=bool(int(row["converged"])),
                    time_s=float(row["time_s"]),
                )
            )
    return results


def curve_to_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_CSV_HEADER.split(","))
        for th, acc in zip(curve.thresholds_s, curve.accuracy):
            writer.writerow([repr(float(th)), repr(float(acc))])
