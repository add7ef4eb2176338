"""Fiber-to-fiber coupling stage and the alignment MDP built on it.

The collection fiber sits on a three-axis stage: lateral offset (x, y)
from the coupled-mode axis and axial distance z from the source lens.
Coupling efficiency follows a Gaussian-beam overlap model

    eta(x, y, z) = 1 / (1 + u^2) * exp(-(x^2 + y^2) / (w^2 (1 + u^2))),
    u = (z - z_opt) / z_R,

so the detected pair rate is

    rate = background + max_rate * eta        [counts/s]

with a single global maximum at (0, 0, z_opt) and an axial-distance-
dependent effective waist w * sqrt(1 + u^2); defocusing both lowers the
ridge and flattens it laterally.  Photon counting is Poisson: a
measurement of length dt draws counts ~ Poisson(rate * dt) and every
measurement advances the simulated clock by dt.

The MDP wraps the stage in polar lateral coordinates (r, theta, z).
Actions are relative moves in [-1, 1]^3 scaled by per-axis maxima; each
step performs one fixed-length measurement.  The observation stacks the
last `obs_frames` normalized (r, theta, z, c) frames, back-filled at
reset.  Reward is a banded improvement bonus minus a constant step
penalty, clipped to [clip_lo, clip_hi]; the episode ends on reaching
success_fraction of c_max or on the step budget.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "CouplingModel",
    "RewardConfig",
    "MdpConfig",
    "MeasurementRecord",
    "AlignmentState",
    "CouplingStage",
    "AlignmentEnv",
    "TrajectoryRow",
    "true_rate",
    "sample_start_pose",
    "trajectory_to_csv",
    "TRAJECTORY_CSV_HEADER",
]


def _wrap_angle(theta: float) -> float:
    """Wrap to [0, 2 pi); the bare modulo can round a tiny negative
    angle onto 2 pi itself."""
    t = theta % (2.0 * math.pi)
    return t if t < 2.0 * math.pi else 0.0


# =====================================================================
# Static coupling model
# =====================================================================


@dataclass(frozen=True)
class CouplingModel:
    """Geometry and rate scale of the coupling stage.

    Attributes
    ----------
    z_optimal_um : float
        Axial distance of best coupling (um).
    lateral_waist_um : float
        Lateral 1/e field scale w at best focus (um).
    axial_rayleigh_um : float
        Axial scale z_R of the Lorentzian defocus factor (um).
    max_rate_cps : float
        Pair rate at perfect alignment, above background (counts/s).
    background_rate_cps : float
        Alignment-independent background rate (counts/s).
    """

    z_optimal_um: float = 1580.0
    lateral_waist_um: float = 50.0
    axial_rayleigh_um: float = 400.0
    max_rate_cps: float = 20000.0
    background_rate_cps: float = 50.0

    def __post_init__(self):
        if self.lateral_waist_um <= 0:
            raise ValueError("lateral_waist_um must be positive")
        if self.axial_rayleigh_um <= 0:
            raise ValueError("axial_rayleigh_um must be positive")
        if self.max_rate_cps < 0 or self.background_rate_cps < 0:
            raise ValueError("rates must be non-negative")

    @property
    def peak_rate_cps(self) -> float:
        """Rate at the global optimum: background + max_rate."""
        return self.background_rate_cps + self.max_rate_cps


def true_rate(model: CouplingModel, x_um, y_um, z_um):
    """Noise-free detected rate (counts/s) at a stage pose.  Vectorized."""
    x = np.asarray(x_um, dtype=float)
    y = np.asarray(y_um, dtype=float)
    z = np.asarray(z_um, dtype=float)
    u = (z - model.z_optimal_um) / model.axial_rayleigh_um
    denom = 1.0 + u * u
    w2 = model.lateral_waist_um**2
    eta = np.exp(-(x * x + y * y) / (w2 * denom)) / denom
    rate = model.background_rate_cps + model.max_rate_cps * eta
    if np.ndim(rate) == 0:
        return float(rate)
    return rate


# =====================================================================
# Measurements and the physical stage
# =====================================================================


@dataclass(frozen=True)
class MeasurementRecord:
    """One photon-counting measurement."""

    counts: float
    integration_time_s: float
    rate_cps: float

    @classmethod
    def from_counts(cls, counts, integration_time_s: float) -> "MeasurementRecord":
        if integration_time_s <= 0:
            raise ValueError("integration_time_s must be positive")
        return cls(
            counts=float(counts),
            integration_time_s=float(integration_time_s),
            rate_cps=float(counts) / float(integration_time_s),
        )


@dataclass
class AlignmentState:
    """Pose plus last measured rate, in the MDP's polar coordinates."""

    r_um: float
    theta_rad: float
    z_um: float
    rate_cps: float


class CouplingStage:
    """Movable fiber stage with Poisson photon counting and a clock.

    Moves are instantaneous; only measurements cost time.  With
    ``noise=False`` measurements return the exact expected counts, which
    keeps every downstream statistic deterministic.
    """

    def __init__(
        self,
        model: CouplingModel,
        seed: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
        noise: bool = True,
    ):
        self.model = model
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.noise = noise
        self.x_um = 0.0
        self.y_um = 0.0
        self.z_um = model.z_optimal_um
        self.clock_s = 0.0

    # -- pose ----------------------------------------------------------

    @property
    def r_um(self) -> float:
        return math.hypot(self.x_um, self.y_um)

    @property
    def theta_rad(self) -> float:
        return _wrap_angle(math.atan2(self.y_um, self.x_um))

    def move_to(self, x_um=None, y_um=None, z_um=None) -> None:
        if x_um is not None:
            self.x_um = float(x_um)
        if y_um is not None:
            self.y_um = float(y_um)
        if z_um is not None:
            self.z_um = float(z_um)

    def move_by(self, dx_um=0.0, dy_um=0.0, dz_um=0.0) -> None:
        self.x_um += float(dx_um)
        self.y_um += float(dy_um)
        self.z_um += float(dz_um)

    def set_polar(self, r_um: float, theta_rad: float, z_um: float) -> None:
        if r_um < 0:
            raise ValueError("r_um must be non-negative")
        self.x_um = r_um * math.cos(theta_rad)
        self.y_um = r_um * math.sin(theta_rad)
        self.z_um = float(z_um)

    # -- measurement ----------------------------------------------------

    def true_rate_here(self) -> float:
        return true_rate(self.model, self.x_um, self.y_um, self.z_um)

    def measure(self, integration_time_s: float) -> MeasurementRecord:
        """Count photons for `integration_time_s`; advances the clock."""
        if integration_time_s <= 0:
            raise ValueError("integration_time_s must be positive")
        lam = self.true_rate_here() * integration_time_s
        if self.noise:
            counts = int(self.rng.poisson(lam))
        else:
            counts = lam
        self.clock_s += integration_time_s
        return MeasurementRecord.from_counts(counts, integration_time_s)


# =====================================================================
# MDP configuration
# =====================================================================


@dataclass(frozen=True)
class RewardConfig:
    """Banded improvement reward.

    The bonus band size is s_b = c_max / bonus_levels; a step that
    improves the measured rate by delta_c earns
    bonus_unit * floor(delta_c / s_b) (never negative), then the step
    penalty is subtracted and the sum clipped to [clip_lo, clip_hi].
    `c_max_cps = None` derives c_max from the coupling model as
    background + max_rate.
    """

    step_penalty: float = 0.05
    bonus_unit: float = 0.6
    bonus_levels: int = 20
    c_max_cps: Optional[float] = None
    clip_lo: float = -1.0
    clip_hi: float = 1.0

    def __post_init__(self):
        if self.bonus_levels <= 0:
            raise ValueError("bonus_levels must be positive")
        if self.clip_lo > self.clip_hi:
            raise ValueError("clip_lo must not exceed clip_hi")

    def resolve_c_max(self, model: CouplingModel) -> float:
        return self.c_max_cps if self.c_max_cps is not None else model.peak_rate_cps


@dataclass(frozen=True)
class MdpConfig:
    """Step scaling, observation stacking, and episode limits."""

    t_step_s: float = 31.0
    r_step_max_um: float = 72.0
    theta_step_max_rad: float = math.pi
    z_step_max_um: float = 563.0
    obs_frames: int = 5
    episode_steps: int = 200
    success_fraction: float = 0.9
    start_r_max_um: float = 120.0
    start_z_span_um: float = 1200.0

    def __post_init__(self):
        if self.t_step_s <= 0:
            raise ValueError("t_step_s must be positive")
        if self.obs_frames < 1:
            raise ValueError("obs_frames must be >= 1")
        if not (0 < self.success_fraction <= 1):
            raise ValueError("success_fraction must be in (0, 1]")

    @property
    def obs_dim(self) -> int:
        return 4 * self.obs_frames

    @property
    def r_scale_um(self) -> float:
        """Lateral normalization scale: ten maximal radial steps."""
        return 10.0 * self.r_step_max_um

    @property
    def z_scale_um(self) -> float:
        """Axial normalization scale: ten maximal axial steps."""
        return 10.0 * self.z_step_max_um


def sample_start_pose(
    mdp: MdpConfig, model: CouplingModel, rng: np.random.Generator
) -> tuple[float, float, float]:
    """Draw a start pose: lateral offset uniform over the misalignment
    disc (area-uniform), axial offset uniform in +/- start_z_span_um
    around the optimum.  Returns (r_um, theta_rad, z_um)."""
    r = mdp.start_r_max_um * math.sqrt(rng.uniform())
    theta = rng.uniform(0.0, 2.0 * math.pi)
    z = model.z_optimal_um + rng.uniform(-mdp.start_z_span_um, mdp.start_z_span_um)
    return float(r), float(theta), float(z)


# =====================================================================
# The alignment MDP
# =====================================================================


class AlignmentEnv:
    """Episodic alignment task over a `CouplingStage`.

    step() accepts an action in [-1, 1]^3 (components are clipped),
    interpreted as relative moves (dr, dtheta, dz) scaled by
    (r_step_max_um, theta_step_max_rad, z_step_max_um).  The radius is
    clipped at 0 and theta wraps to [0, 2 pi).  Each step performs one
    t_step_s measurement and returns (obs, reward, done, info); `info`
    carries the pose, raw counts, measured rate, simulated time, and
    which termination fired ("success" or "budget").
    """

    def __init__(
        self,
        model: Optional[CouplingModel] = None,
        reward: Optional[RewardConfig] = None,
        mdp: Optional[MdpConfig] = None,
        seed: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
        noise: bool = True,
    ):
        self.model = model if model is not None else CouplingModel()
        self.reward_cfg = reward if reward is not None else RewardConfig()
        self.mdp = mdp if mdp is not None else MdpConfig()
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.noise = noise
        self.c_max_cps = self.reward_cfg.resolve_c_max(self.model)
        self.success_rate_cps = self.mdp.success_fraction * self.c_max_cps
        self.stage = CouplingStage(self.model, rng=self.rng, noise=noise)
        self._frames: deque = deque(maxlen=self.mdp.obs_frames)
        self._rate = 0.0
        self._steps = 0
        self._done = True

    # -- helpers ---------------------------------------------------------

    @property
    def obs_dim(self) -> int:
        return self.mdp.obs_dim

    @property
    def action_dim(self) -> int:
        return 3

    @property
    def time_s(self) -> float:
        """Simulated seconds spent measuring in the current episode."""
        return self.stage.clock_s

    @property
    def state(self) -> AlignmentState:
        return AlignmentState(
            r_um=self.stage.r_um,
            theta_rad=self.stage.theta_rad,
            z_um=self.stage.z_um,
            rate_cps=self._rate,
        )

    def _frame(self) -> np.ndarray:
        return np.array(
            [
                self.stage.r_um / self.mdp.r_scale_um,
                self.stage.theta_rad / math.pi - 1.0,
                self.stage.z_um / self.mdp.z_scale_um,
                self._rate / self.c_max_cps,
            ],
            dtype=np.float64,
        )

    def _obs(self) -> np.ndarray:
        return np.concatenate(list(self._frames))

    # -- episode API -----------------------------------------------------

    def reset(
        self,
        seed: Optional[int] = None,
        start_pose: Optional[tuple[float, float, float]] = None,
    ) -> np.ndarray:
        """Start a new episode; returns the initial observation.

        Performs one measurement at the start pose (costing one t_step of
        simulated time) and back-fills the frame history with it.  An
        explicit `start_pose` (r_um, theta_rad, z_um) overrides sampling,
        which is how paired policy comparisons share initial conditions.
        """
        if seed is not None:
            self.rng = np.random.default_rng(seed)
            self.stage.rng = self.rng
        self.stage.clock_s = 0.0
        if start_pose is None:
            start_pose = sample_start_pose(self.mdp, self.model, self.rng)
        r, theta, z = start_pose
        self.stage.set_polar(r, theta, z)
        rec = self.stage.measure(self.mdp.t_step_s)
        self._rate = rec.rate_cps
        self._frames.clear()
        frame = self._frame()
        for _ in range(self.mdp.obs_frames):
            self._frames.append(frame.copy())
        self._steps = 0
        self._done = False
        self._last_counts = rec.counts
        return self._obs()

    def _reward(self, delta_c: float) -> float:
        band = self.c_max_cps / self.reward_cfg.bonus_levels
        bonus = self.reward_cfg.bonus_unit * max(0.0, math.floor(delta_c / band))
        raw = bonus - self.reward_cfg.step_penalty
        return float(np.clip(raw, self.reward_cfg.clip_lo, self.reward_cfg.clip_hi))

    def step(self, action) -> tuple[np.ndarray, float, bool, dict]:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        a = np.clip(np.asarray(action, dtype=float).reshape(3), -1.0, 1.0)
        r = max(self.stage.r_um + a[0] * self.mdp.r_step_max_um, 0.0)
        theta = _wrap_angle(self.stage.theta_rad + a[1] * self.mdp.theta_step_max_rad)
        z = self.stage.z_um + a[2] * self.mdp.z_step_max_um
        self.stage.set_polar(r, theta, z)

        rec = self.stage.measure(self.mdp.t_step_s)
        prev_rate = self._rate
        self._rate = rec.rate_cps
        reward = self._reward(self._rate - prev_rate)
        self._frames.append(self._frame())
        self._steps += 1

        success = self._rate >= self.success_rate_cps
        truncated = (not success) and self._steps >= self.mdp.episode_steps
        self._done = success or truncated
        info = {
            "r_um": self.stage.r_um,
            "theta_rad": self.stage.theta_rad,
            "z_um": self.stage.z_um,
            "counts": rec.counts,
            "rate_cps": rec.rate_cps,
            "time_s": self.time_s,
            "step": self._steps,
            "success": success,
            "truncated": truncated,
        }
        return self._obs(), reward, self._done, info


# =====================================================================
# Trajectory serialization
# =====================================================================


@dataclass(frozen=True)
class TrajectoryRow:
    step: int
    r_um: float
    theta_rad: float
    z_um: float
    counts: float
    rate_cps: float
    reward: float
    done: bool


TRAJECTORY_CSV_HEADER = "step,r_um,theta_rad,z_um,counts,rate_cps,reward,done"


def trajectory_to_csv(rows: Sequence[TrajectoryRow], path) -> None:
    """Write an episode trajectory, one row per measurement (step 0 is
    the reset measurement with reward 0)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_CSV_HEADER.split(","))
        for row in rows:
            writer.writerow(
                [
                    str(row.step),
                    repr(float(row.r_um)),
                    repr(float(row.theta_rad)),
                    repr(float(row.z_um)),
                    repr(float(row.counts)),
                    repr(float(row.rate_cps)),
                    repr(float(row.reward)),
                    str(int(row.done)),
                ]
            )
