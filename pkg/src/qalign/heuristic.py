"""Hypothesis-testing alignment search over a coupling stage.

The aligner recovers fiber coupling using only count-rate measurements.
It first makes a blind jump to the nominal axial working distance and
verifies that signal is detectable at all (a 5-sigma test against the
expected background); it then alternates axial and lateral search turns.
Every candidate move is accepted or rejected with a one-sided two-sample
test on Poisson rates: for counts N over time S against a reference
N_prev over S_prev,

    W = [ln(N / N_prev) - ln(S / S_prev)] / sqrt(1/N + 1/N_prev)

is approximately standard normal when the true rates are equal, so the
move is accepted when W exceeds the standard-normal quantile of the
configured confidence and rejected as significantly worse when W falls
below its negative.  Anything in between is inconclusive and stretches
the probe integration time.

Axial turns step along z, reversing direction and shrinking the step on
the first significant failure and backtracking to the last accepted pose
on the second consecutive one.  Lateral turns probe a four-point cross
around the current pose, move to the best point if it improves with high
confidence, and shrink the cross otherwise.  When both axes' steps have
shrunk below a tenth of their initial sizes without convergence, both are
re-expanded and the search continues until the time budget runs out.

The search succeeds when any single measurement reaches
success_fraction * c_max; it aborts when the initial verification finds
no signal above background.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

from scipy.stats import norm

from qalign.env import CouplingStage, MeasurementRecord

__all__ = [
    "HeuristicConfig",
    "TraceEvent",
    "SearchTrace",
    "HeuristicAligner",
    "w_statistic",
    "decision_threshold",
    "run_alignment",
    "trace_to_csv",
    "TRACE_CSV_HEADER",
    "OUTCOME_CONVERGED",
    "OUTCOME_TIMED_OUT",
    "OUTCOME_ABORTED",
]

OUTCOME_CONVERGED = "converged"
OUTCOME_TIMED_OUT = "timed_out"
OUTCOME_ABORTED = "aborted_no_signal"

# Integration time stretch factor applied after an inconclusive verdict.
_INTEGRATION_GROWTH = 1.5
# Consecutive accepted moves that end a turn (keep alternating axes).
_ACCEPTS_PER_TURN = 3
# Inconclusive verdicts tolerated per axial turn before alternating.
_MAX_INCONCLUSIVE = 4
# Cross shrinks tolerated per lateral turn before alternating.
_MAX_SHRINKS = 2


@dataclass(frozen=True)
class HeuristicConfig:
    """Tuning constants of the search.

    Count floors gate verdicts where the normal approximation or the
    evidence base would otherwise be too thin: a move is only accepted
    as better when the candidate measurement has at least
    min_counts_better counts (or xy_min_counts for lateral cross
    probes), and only rejected as worse when the reference measurement
    rests on at least min_counts_worse counts.
    """

    z_blind_jump_um: float = 1580.0
    initial_integration_s: float = 120.0
    probe_integration_s: float = 5.0
    z_confidence: float = 0.995
    xy_confidence: float = 0.999
    success_fraction: float = 0.9
    time_budget_s: float = 3600.0
    initial_z_step_um: float = 200.0
    initial_xy_step_um: float = 40.0
    step_shrink: float = 2.0 / 3.0
    min_counts_worse: float = 500.0
    min_counts_better: float = 1000.0
    xy_min_counts: float = 300.0
    xy_max_meas_time_s: float = 30.0

    def __post_init__(self):
        if not (0.5 < self.z_confidence < 1.0 and 0.5 < self.xy_confidence < 1.0):
            raise ValueError("confidences must lie in (0.5, 1)")
        if not (0.0 < self.step_shrink < 1.0):
            raise ValueError("step_shrink must lie in (0, 1)")
        if self.initial_integration_s <= 0 or self.probe_integration_s <= 0:
            raise ValueError("integration times must be positive")
        if self.time_budget_s < 0:
            raise ValueError("time_budget_s must be non-negative")
        if not (0.0 < self.success_fraction <= 1.0):
            raise ValueError("success_fraction must lie in (0, 1]")

    @property
    def z_step_floor_um(self) -> float:
        return self.initial_z_step_um / 10.0

    @property
    def xy_step_floor_um(self) -> float:
        return self.initial_xy_step_um / 10.0


def w_statistic(current: MeasurementRecord, previous: MeasurementRecord) -> float:
    """One-sided rate-comparison statistic W (standard normal under H0).

    Positive W favors the current measurement's rate over the previous
    one.  If either measurement has zero counts the log-rate contrast is
    undefined; the sentinel -inf is returned so such comparisons are
    never accepted as improvements.
    """
    n_cur, n_prev = current.counts, previous.counts
    if n_cur <= 0 or n_prev <= 0:
        return float("-inf")
    log_ratio = math.log(n_cur / n_prev) - math.log(
        current.integration_time_s / previous.integration_time_s
    )
    return log_ratio / math.sqrt(1.0 / n_cur + 1.0 / n_prev)


def decision_threshold(confidence: float) -> float:
    """Standard-normal quantile for a one-sided test at `confidence`."""
    if not (0.5 < confidence < 1.0):
        raise ValueError("confidence must lie in (0.5, 1)")
    return float(norm.ppf(confidence))


@dataclass(frozen=True)
class TraceEvent:
    """One logged search event; measurement fields are NaN for events
    that did not measure (expansions, the timeout marker)."""

    t_s: float
    r_um: float
    theta_rad: float
    z_um: float
    counts: float
    int_time_s: float
    w: float
    decision: str
    phase: str


@dataclass
class SearchTrace:
    """Full record of one alignment run."""

    events: list[TraceEvent] = field(default_factory=list)
    outcome: str = OUTCOME_TIMED_OUT
    elapsed_s: float = 0.0
    final_rate_cps: float = 0.0

    @property
    def converged(self) -> bool:
        return self.outcome == OUTCOME_CONVERGED


class _Converged(Exception):
    """Internal control flow: a measurement reached the success rate."""


class _TimedOut(Exception):
    """Internal control flow: the time budget is exhausted."""


class HeuristicAligner:
    """Stateful runner of the alignment search over one stage.

    Parameters
    ----------
    stage : CouplingStage
        The stage to align; its clock and RNG drive everything.
    config : HeuristicConfig, optional
    c_max_cps : float, optional
        Expected peak rate; defaults to the stage model's
        background + max rate.  Success is success_fraction * c_max.
    background_cps : float, optional
        Expected background rate for the verification test; defaults to
        the stage model's background rate.
    """

    def __init__(
        self,
        stage: CouplingStage,
        config: Optional[HeuristicConfig] = None,
        c_max_cps: Optional[float] = None,
        background_cps: Optional[float] = None,
    ):
        self.stage = stage
        self.cfg = config if config is not None else HeuristicConfig()
        self.c_max_cps = (
            c_max_cps if c_max_cps is not None else stage.model.peak_rate_cps
        )
        self.background_cps = (
            background_cps
            if background_cps is not None
            else stage.model.background_rate_cps
        )
        self.success_rate_cps = self.cfg.success_fraction * self.c_max_cps
        self.trace = SearchTrace()
        # Search state.
        self._ref: Optional[MeasurementRecord] = None
        self._accepted = (stage.x_um, stage.y_um, stage.z_um)
        self._z_dir = 1.0
        self._z_step = self.cfg.initial_z_step_um
        self._xy_step = self.cfg.initial_xy_step_um
        self._int_z = self.cfg.probe_integration_s
        self._int_xy = self.cfg.probe_integration_s
        self._t0 = stage.clock_s

    # -- plumbing ---------------------------------------------------------

    @property
    def elapsed_s(self) -> float:
        return self.stage.clock_s - self._t0

    def _log(self, decision: str, phase: str, rec=None, w=float("nan")) -> None:
        counts = rec.counts if rec is not None else float("nan")
        int_t = rec.integration_time_s if rec is not None else float("nan")
        self.trace.events.append(
            TraceEvent(
                t_s=self.elapsed_s,
                r_um=self.stage.r_um,
                theta_rad=self.stage.theta_rad,
                z_um=self.stage.z_um,
                counts=counts,
                int_time_s=int_t,
                w=w,
                decision=decision,
                phase=phase,
            )
        )

    def _check_budget(self) -> None:
        """Raise before starting another measurement once the budget is
        spent.  A measurement begun just inside the budget may overrun
        it by at most its own integration time."""
        if self.elapsed_s >= self.cfg.time_budget_s:
            raise _TimedOut

    def _measure(self, integration_s: float) -> MeasurementRecord:
        rec = self.stage.measure(integration_s)
        if rec.rate_cps >= self.success_rate_cps:
            self._final_rec = rec
            raise _Converged
        return rec

    def _return_to_accepted(self) -> None:
        x, y, z = self._accepted
        self.stage.move_to(x_um=x, y_um=y, z_um=z)

    def _accept_here(self, rec: MeasurementRecord) -> None:
        self._accepted = (self.stage.x_um, self.stage.y_um, self.stage.z_um)
        self._ref = rec

    # -- phases -----------------------------------------------------------

    def verify_signal(self) -> bool:
        """Blind-jump to the nominal axial distance and test for signal.

        The fiber keeps its lateral pose and moves to z_blind_jump_um;
        one long measurement is compared against the background
        expectation B*dt + 5*sqrt(B*dt).  Returns True when signal is
        present (and primes the search reference), False to abort.
        """
        self.stage.move_to(z_um=self.cfg.z_blind_jump_um)
        dt = self.cfg.initial_integration_s
        rec = self._measure(dt)
        floor = self.background_cps * dt + 5.0 * math.sqrt(self.background_cps * dt)
        if rec.counts <= floor:
            self._log("abort_no_signal", "verify", rec)
            return False
        self._log("verify_pass", "verify", rec)
        self._accept_here(rec)
        return True

    def axial_search(self) -> None:
        """One axial turn: step along z from the accepted pose until the
        turn ends (three accepts, a backtrack, too many inconclusive
        probes, or a floored step size)."""
        cfg = self.cfg
        thr = decision_threshold(cfg.z_confidence)
        accepts = fails = inconclusive = 0
        while True:
            if self._z_step < cfg.z_step_floor_um:
                return
            self._check_budget()
            x, y, z = self._accepted
            self.stage.move_to(x_um=x, y_um=y, z_um=z + self._z_dir * self._z_step)
            rec = self._measure(self._int_z)
            w = w_statistic(rec, self._ref)

            if w > thr and rec.counts >= cfg.min_counts_better:
                self._accept_here(rec)
                self._log("accept", "axial", rec, w)
                accepts += 1
                fails = 0
                if accepts >= _ACCEPTS_PER_TURN:
                    return
            elif w < -thr and self._ref.counts >= cfg.min_counts_worse:
                fails += 1
                self._return_to_accepted()
                if fails == 1:
                    self._z_dir = -self._z_dir
                    self._z_step *= cfg.step_shrink
                    self._log("reject_reverse", "axial", rec, w)
                else:
                    self._log("reject_backtrack", "axial", rec, w)
                    return
            else:
                inconclusive += 1
                self._return_to_accepted()
                self._int_z = min(
                    self._int_z * _INTEGRATION_GROWTH, cfg.initial_integration_s
                )
                self._log("inconclusive", "axial", rec, w)
                if inconclusive >= _MAX_INCONCLUSIVE:
                    return

    def radial_search(self) -> None:
        """One lateral turn: probe a plus-shaped four-point cross, move
        to the best probe when it beats the reference with high
        confidence, otherwise shrink the cross."""
        cfg = self.cfg
        thr = decision_threshold(cfg.xy_confidence)
        accepts = shrinks = 0
        while True:
            if self._xy_step < cfg.xy_step_floor_um:
                return
            x0, y0, z0 = self._accepted
            s = self._xy_step
            best_rec, best_pose, best_w = None, None, float("-inf")
            for dx, dy in ((s, 0.0), (-s, 0.0), (0.0, s), (0.0, -s)):
                self._check_budget()
                self.stage.move_to(x_um=x0 + dx, y_um=y0 + dy, z_um=z0)
                rec = self._measure(self._int_xy)
                w = w_statistic(rec, self._ref)
                self._log("probe", "radial", rec, w)
                if w > best_w:
                    best_rec, best_pose, best_w = rec, (x0 + dx, y0 + dy), w

            if best_w > thr and best_rec.counts >= cfg.xy_min_counts:
                self.stage.move_to(x_um=best_pose[0], y_um=best_pose[1], z_um=z0)
                self._accept_here(best_rec)
                self._log("accept", "radial", best_rec, best_w)
                accepts += 1
                if accepts >= _ACCEPTS_PER_TURN:
                    return
            else:
                self._return_to_accepted()
                self._xy_step *= cfg.step_shrink
                shrinks += 1
                if best_rec is not None and best_rec.counts < cfg.xy_min_counts:
                    self._int_xy = min(
                        self._int_xy * _INTEGRATION_GROWTH, cfg.xy_max_meas_time_s
                    )
                self._log("shrink", "radial", best_rec, best_w)
                if shrinks >= _MAX_SHRINKS:
                    return

    def _maybe_expand(self) -> None:
        """Re-expand both steps once both axes are floored (the search
        would otherwise idle below its resolution floors)."""
        cfg = self.cfg
        if (
            self._z_step < cfg.z_step_floor_um
            and self._xy_step < cfg.xy_step_floor_um
        ):
            self._z_step = min(self._z_step * 2.0, cfg.initial_z_step_um)
            self._xy_step = min(self._xy_step * 2.0, cfg.initial_xy_step_um)
            self._log("expand", "control")

    def run(self) -> SearchTrace:
        """Run the full search; returns the trace with outcome, elapsed
        simulated time, and the final measured rate."""
        self._final_rec = None
        try:
            if not self.verify_signal():
                self.trace.outcome = OUTCOME_ABORTED
                self.trace.elapsed_s = self.elapsed_s
                self.trace.final_rate_cps = self.trace.events[-1].counts / max(
                    self.trace.events[-1].int_time_s, 1e-12
                )
                return self.trace
            while True:
                self._check_budget()
                self.axial_search()
                self.radial_search()
                self._maybe_expand()
        except _Converged:
            rec = self._final_rec
            self._log("converged", "success", rec, float("nan"))
            self.trace.outcome = OUTCOME_CONVERGED
            self.trace.final_rate_cps = rec.rate_cps
        except _TimedOut:
            self._log("timed_out", "control")
            self.trace.outcome = OUTCOME_TIMED_OUT
            if self._ref is not None:
                self.trace.final_rate_cps = self._ref.rate_cps
        self.trace.elapsed_s = self.elapsed_s
        return self.trace


def run_alignment(
    stage: CouplingStage,
    config: Optional[HeuristicConfig] = None,
    c_max_cps: Optional[float] = None,
    background_cps: Optional[float] = None,
) -> SearchTrace:
    """Convenience wrapper: align `stage` and return the search trace."""
    return HeuristicAligner(stage, config, c_max_cps, background_cps).run()


# =====================================================================
# Trace serialization
# =====================================================================

TRACE_CSV_HEADER = "t_s,r_um,theta_rad,z_um,counts,int_time_s,W,decision,phase"


def trace_to_csv(trace: SearchTrace, path) -> None:
    """Write the event log as CSV, one row per event."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_CSV_HEADER.split(","))
        for e in trace.events:
            writer.writerow(
                [
                    repr(float(e.t_s)),
                    repr(float(e.r_um)),
                    repr(float(e.theta_rad)),
                    repr(float(e.z_um)),
                    repr(float(e.counts)),
                    repr(float(e.int_time_s)),
                    repr(float(e.w)),
                    e.decision,
                    e.phase,
                ]
            )
