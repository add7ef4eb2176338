"""Soft actor-critic agent for the alignment MDP.

Hand-rolled SAC on torch: a tanh-squashed diagonal-Gaussian actor, twin
Q critics with Polyak-averaged target copies, automatic temperature
tuning toward a fixed entropy target, and a uniform replay buffer.  The
critic target is

    y = r + gamma * (1 - done) * (min_i Q'_i(s', a') - alpha * log pi(a'|s'))

with a' freshly sampled from the current policy.  `done` here means the
episode terminated by reaching the success rate; episodes cut off by the
step budget are stored with done = 0 so the critic still bootstraps
through the cutoff (time running out is not a property of the state).

Loss computations are module-level functions over explicit networks so
they can be checked against finite differences on miniature float64
networks; the agent wires them to its own float32 networks.
"""

from __future__ import annotations

import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
from torch import nn

from qalign.env import AlignmentEnv
from qalign.errors import CheckpointError
from qalign.metrics import TrialResult

__all__ = [
    "SacConfig",
    "SquashedGaussianActor",
    "QCritic",
    "ReplayBuffer",
    "SacAgent",
    "TrainLog",
    "compute_critic_loss",
    "compute_actor_loss",
    "compute_alpha_loss",
    "train",
    "evaluate_policy",
    "CHECKPOINT_FORMAT_VERSION",
]

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SacConfig:
    """Agent hyperparameters.

    gamma defaults to 0.99; the source hyperparameter table's 0.0003
    (a nearly myopic agent) is accepted via config and exercised in the
    tests.  total_steps defaults to a desk-scale budget; the full-scale
    reference run used 12M steps.
    """

    hidden: tuple = (256, 256)
    batch_size: int = 128
    learning_rate: float = 3e-4
    gamma: float = 0.99
    tau: float = 0.005
    replay_capacity: int = 1_000_000
    warmup_steps: int = 5000
    entropy_target: float = -3.0
    total_steps: int = 200_000
    updates_per_step: int = 1
    log_every_steps: int = 1000
    log_window_episodes: int = 20
    log_std_min: float = -20.0
    log_std_max: float = 2.0

    def __post_init__(self):
        # JSON and YAML round-trips deliver `hidden` as a list.
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must lie in [0, 1)")
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must lie in (0, 1]")


# =====================================================================
# Networks
# =====================================================================


def _mlp(sizes, out_dim):
    layers = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        layers += [nn.Linear(a, b), nn.ReLU()]
    layers.append(nn.Linear(sizes[-1], out_dim))
    return nn.Sequential(*layers)


class SquashedGaussianActor(nn.Module):
    """Policy network: obs -> tanh(Normal(mu, sigma)) in (-1, 1)^act_dim."""

    def __init__(self, obs_dim, act_dim, hidden=(256, 256), log_std_min=-20.0, log_std_max=2.0):
        super().__init__()
        self.log_std_min = log_std_min
        self.log_std_max = log_std_max
        sizes = (obs_dim,) + tuple(hidden)
        self.trunk = nn.Sequential()
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.trunk.add_module(f"fc{i}", nn.Linear(a, b))
            self.trunk.add_module(f"relu{i}", nn.ReLU())
        self.mean_head = nn.Linear(sizes[-1], act_dim)
        self.log_std_head = nn.Linear(sizes[-1], act_dim)

    def forward(self, obs):
        h = self.trunk(obs)
        mean = self.mean_head(h)
        log_std = torch.clamp(self.log_std_head(h), self.log_std_min, self.log_std_max)
        return mean, log_std

    def sample(self, obs, noise=None, deterministic=False):
        """Sample an action and its log-probability.

        `noise` optionally injects the standard-normal draw of the
        reparameterization (for deterministic finite-difference checks);
        `deterministic=True` returns tanh(mean) with the log-prob of
        that point.
        """
        mean, log_std = self(obs)
        std = torch.exp(log_std)
        if deterministic:
            u = mean
        elif noise is not None:
            u = mean + std * noise
        else:
            u = mean + std * torch.randn_like(mean)
        action = torch.tanh(u)
        # Gaussian log-density of u plus the tanh change of variables,
        # using log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)).
        log_norm = -0.5 * (((u - mean) / std) ** 2 + 2.0 * log_std + math.log(2.0 * math.pi))
        squash = 2.0 * (math.log(2.0) - u - nn.functional.softplus(-2.0 * u))
        log_prob = (log_norm - squash).sum(dim=-1)
        return action, log_prob


class QCritic(nn.Module):
    """Action-value network: (obs, action) -> scalar Q."""

    def __init__(self, obs_dim, act_dim, hidden=(256, 256)):
        super().__init__()
        self.net = _mlp((obs_dim + act_dim,) + tuple(hidden), 1)

    def forward(self, obs, action):
        return self.net(torch.cat([obs, action], dim=-1)).squeeze(-1)


# =====================================================================
# Replay buffer
# =====================================================================


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling (no replacement
    within a batch)."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, seed: Optional[int] = None):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.act = np.zeros((capacity, act_dim), dtype=np.float32)
        self.rew = np.zeros(capacity, dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)
        self.ptr = 0
        self.size = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return self.size

    def add(self, obs, act, rew, next_obs, done):
        i = self.ptr
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> dict:
        if batch_size > self.size:
            raise ValueError("not enough transitions to sample a batch")
        idx = self.rng.choice(self.size, size=batch_size, replace=False)
        return {
            "obs": torch.as_tensor(self.obs[idx]),
            "act": torch.as_tensor(self.act[idx]),
            "rew": torch.as_tensor(self.rew[idx]),
            "next_obs": torch.as_tensor(self.next_obs[idx]),
            "done": torch.as_tensor(self.done[idx]),
        }


# =====================================================================
# Losses (shared between the agent and the gradient checks)
# =====================================================================


def compute_critic_loss(q1, q2, q1_target, q2_target, actor, batch, gamma, alpha, noise=None):
    """Twin TD losses against the entropy-regularized target."""
    with torch.no_grad():
        next_act, next_logp = actor.sample(batch["next_obs"], noise=noise)
        q_next = torch.min(
            q1_target(batch["next_obs"], next_act),
            q2_target(batch["next_obs"], next_act),
        )
        y = batch["rew"] + gamma * (1.0 - batch["done"]) * (q_next - alpha * next_logp)
    loss1 = nn.functional.mse_loss(q1(batch["obs"], batch["act"]), y)
    loss2 = nn.functional.mse_loss(q2(batch["obs"], batch["act"]), y)
    return loss1 + loss2


def compute_actor_loss(actor, q1, q2, batch, alpha, noise=None):
    """Reparameterized policy loss E[alpha log pi - min Q]."""
    act, logp = actor.sample(batch["obs"], noise=noise)
    q = torch.min(q1(batch["obs"], act), q2(batch["obs"], act))
    return (alpha * logp - q).mean(), logp


def compute_alpha_loss(log_alpha, logp, entropy_target):
    """Temperature loss: minimizing it raises alpha while the policy's
    entropy sits below the target (logp above -target) and lowers it
    otherwise."""
    return -(log_alpha * (logp + entropy_target).detach()).mean()


# =====================================================================
# Agent
# =====================================================================


class SacAgent:
    """SAC agent bundling networks, optimizers, and temperature."""

    def __init__(self, obs_dim: int, act_dim: int, cfg: Optional[SacConfig] = None, seed: int = 0):
        self.cfg = cfg if cfg is not None else SacConfig()
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        torch.manual_seed(seed)
        c = self.cfg
        self.actor = SquashedGaussianActor(obs_dim, act_dim, c.hidden, c.log_std_min, c.log_std_max)
        self.q1 = QCritic(obs_dim, act_dim, c.hidden)
        self.q2 = QCritic(obs_dim, act_dim, c.hidden)
        self.q1_target = QCritic(obs_dim, act_dim, c.hidden)
        self.q2_target = QCritic(obs_dim, act_dim, c.hidden)
        self.q1_target.load_state_dict(self.q1.state_dict())
        self.q2_target.load_state_dict(self.q2.state_dict())
        for p in self.q1_target.parameters():
            p.requires_grad_(False)
        for p in self.q2_target.parameters():
            p.requires_grad_(False)
        self.log_alpha = torch.zeros(1, requires_grad=True)
        lr = c.learning_rate
        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=lr)
        self.critic_opt = torch.optim.Adam(
            list(self.q1.parameters()) + list(self.q2.parameters()), lr=lr
        )
        self.alpha_opt = torch.optim.Adam([self.log_alpha], lr=lr)
        self.train_step = 0
        # Normalization constants of the environment this agent was
        # trained against; frozen into the checkpoint at save time.
        self.env_meta: dict = {}

    @property
    def alpha(self) -> float:
        return float(self.log_alpha.exp().item())

    def act(self, obs, deterministic: bool = False) -> np.ndarray:
        with torch.no_grad():
            t = torch.as_tensor(np.asarray(obs, dtype=np.float32)).unsqueeze(0)
            a, _ = self.actor.sample(t, deterministic=deterministic)
        return a.squeeze(0).numpy()

    # -- updates ----------------------------------------------------------

    def critic_update(self, batch) -> float:
        alpha = self.log_alpha.exp().detach()
        loss = compute_critic_loss(
            self.q1, self.q2, self.q1_target, self.q2_target,
            self.actor, batch, self.cfg.gamma, alpha,
        )
        self.critic_opt.zero_grad(set_to_none=True)
        loss.backward()
        self.critic_opt.step()
        return float(loss.item())

    def actor_and_alpha_update(self, batch) -> tuple[float, float]:
        # Freeze critics so the policy gradient does not touch them.
        for p in self.critic_opt.param_groups[0]["params"]:
            p.requires_grad_(False)
        alpha = self.log_alpha.exp().detach()
        actor_loss, logp = compute_actor_loss(self.actor, self.q1, self.q2, batch, alpha)
        self.actor_opt.zero_grad(set_to_none=True)
        actor_loss.backward()
        self.actor_opt.step()
        for p in self.critic_opt.param_groups[0]["params"]:
            p.requires_grad_(True)

        alpha_loss = compute_alpha_loss(self.log_alpha, logp, self.cfg.entropy_target)
        self.alpha_opt.zero_grad(set_to_none=True)
        alpha_loss.backward()
        self.alpha_opt.step()
        return float(actor_loss.item()), float(alpha_loss.item())

    def soft_update_targets(self) -> None:
        tau = self.cfg.tau
        with torch.no_grad():
            for targ, src in (
                (self.q1_target, self.q1),
                (self.q2_target, self.q2),
            ):
                for pt, ps in zip(targ.parameters(), src.parameters()):
                    pt.mul_(1.0 - tau).add_(ps, alpha=tau)

    def update(self, batch) -> dict:
        critic_loss = self.critic_update(batch)
        actor_loss, alpha_loss = self.actor_and_alpha_update(batch)
        self.soft_update_targets()
        self.train_step += 1
        return {
            "critic_loss": critic_loss,
            "actor_loss": actor_loss,
            "alpha_loss": alpha_loss,
            "alpha": self.alpha,
        }

    # -- checkpointing ----------------------------------------------------

    def save(self, path) -> None:
        """Atomically save a versioned npz checkpoint.

        Contents: all network weights (including targets), optimizer
        moments, the temperature and its optimizer, the training step,
        torch RNG state, and the environment normalization constants in
        `env_meta`.  Arrays are stored with explicit dtypes, so the file
        is portable across byte orders.
        """
        payload = {
            "format_version": np.int64(CHECKPOINT_FORMAT_VERSION),
            "obs_dim": np.int64(self.obs_dim),
            "act_dim": np.int64(self.act_dim),
            "train_step": np.int64(self.train_step),
            "log_alpha": self.log_alpha.detach().numpy().astype(np.float64),
            "torch_rng": torch.get_rng_state().numpy(),
            "config_json": np.bytes_(json.dumps(_config_to_dict(self.cfg)).encode()),
            "env_meta_json": np.bytes_(json.dumps(self.env_meta).encode()),
        }
        for name, module in self._modules().items():
            for key, tensor in module.state_dict().items():
                payload[f"net/{name}/{key}"] = tensor.detach().numpy()
        for name, opt in self._optimizers().items():
            blob = io.BytesIO()
            torch.save(opt.state_dict(), blob)
            payload[f"opt/{name}"] = np.frombuffer(blob.getvalue(), dtype=np.uint8)
        path = os.fspath(path)
        d = os.path.dirname(os.path.abspath(path))
        os.makedirs(d, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                np.savez_compressed(fh, **payload)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)

    def _modules(self) -> dict:
        return {
            "actor": self.actor,
            "q1": self.q1,
            "q2": self.q2,
            "q1_target": self.q1_target,
            "q2_target": self.q2_target,
        }

    def _optimizers(self) -> dict:
        return {
            "actor": self.actor_opt,
            "critic": self.critic_opt,
            "alpha": self.alpha_opt,
        }

    @classmethod
    def load(cls, path) -> "SacAgent":
        try:
            data_file = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path!r}: {exc}") from exc
        with data_file as data:
            if "format_version" not in data.files:
                raise CheckpointError(f"{path!r} is not an agent checkpoint")
            version = int(data["format_version"])
            if version != CHECKPOINT_FORMAT_VERSION:
                raise CheckpointError(
                    f"checkpoint format {version} unsupported "
                    f"(expected {CHECKPOINT_FORMAT_VERSION})"
                )
            cfg = SacConfig(**json.loads(bytes(data["config_json"]).decode()))
            agent = cls(int(data["obs_dim"]), int(data["act_dim"]), cfg)
            for name, module in agent._modules().items():
                state = {}
                prefix = f"net/{name}/"
                for key in data.files:
                    if key.startswith(prefix):
                        state[key[len(prefix):]] = torch.as_tensor(data[key].copy())
                missing = set(module.state_dict()) - set(state)
                if missing:
                    raise CheckpointError(f"checkpoint missing tensors for {name}: {missing}")
                module.load_state_dict(state)
            for name, opt in agent._optimizers().items():
                blob = io.BytesIO(data[f"opt/{name}"].tobytes())
                opt.load_state_dict(torch.load(blob, weights_only=False))
            with torch.no_grad():
                agent.log_alpha.copy_(torch.as_tensor(data["log_alpha"].copy()))
            agent.train_step = int(data["train_step"])
            torch.set_rng_state(torch.as_tensor(data["torch_rng"].copy()))
            agent.env_meta = json.loads(bytes(data["env_meta_json"]).decode())
        return agent


def _config_to_dict(cfg: SacConfig) -> dict:
    d = dict(cfg.__dict__)
    d["hidden"] = list(cfg.hidden)
    return d


def env_normalization_meta(env: AlignmentEnv) -> dict:
    """Normalization constants an agent's observations depend on."""
    return {
        "obs_frames": env.mdp.obs_frames,
        "r_scale_um": env.mdp.r_scale_um,
        "z_scale_um": env.mdp.z_scale_um,
        "c_max_cps": env.c_max_cps,
        "t_step_s": env.mdp.t_step_s,
        "r_step_max_um": env.mdp.r_step_max_um,
        "theta_step_max_rad": env.mdp.theta_step_max_rad,
        "z_step_max_um": env.mdp.z_step_max_um,
    }


def check_env_compat(agent: SacAgent, env: AlignmentEnv) -> None:
    """Raise CheckpointError when the checkpointed normalization
    constants disagree with the environment's."""
    if not agent.env_meta:
        return
    current = env_normalization_meta(env)
    for key, want in agent.env_meta.items():
        have = current.get(key)
        if have is None or not math.isclose(float(want), float(have), rel_tol=1e-9):
            raise CheckpointError(
                f"checkpoint normalization constant {key}={want!r} does not "
                f"match environment value {have!r}"
            )


# =====================================================================
# Training
# =====================================================================


@dataclass
class TrainLog:
    """Windowed training statistics, one row per logging interval."""

    rows: list = field(default_factory=list)  # dicts with the CSV columns
    episodes: list = field(default_factory=list)  # (return, length, success)

    CSV_HEADER = "env_step,mean_reward,mean_ep_len,alpha,critic_loss,actor_loss"

    def to_csv(self, path) -> None:
        import csv as _csv

        with open(path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(self.CSV_HEADER.split(","))
            for row in self.rows:
                writer.writerow(
                    [
                        str(row["env_step"]),
                        repr(float(row["mean_reward"])),
                        repr(float(row["mean_ep_len"])),
                        repr(float(row["alpha"])),
                        repr(float(row["critic_loss"])),
                        repr(float(row["actor_loss"])),
                    ]
                )


def train(
    env: AlignmentEnv,
    cfg: Optional[SacConfig] = None,
    seed: int = 0,
    agent: Optional[SacAgent] = None,
    progress: bool = False,
) -> tuple[SacAgent, TrainLog]:
    """Train a (new or given) agent on `env` for cfg.total_steps env steps.

    The first warmup_steps actions are uniform in [-1, 1]^3; afterwards
    one gradient update runs per env step (updates_per_step).  The env
    is reset with seeds derived from `seed`, so a run is reproducible
    end to end given the same config.
    """
    cfg = cfg if cfg is not None else SacConfig()
    if agent is None:
        agent = SacAgent(env.obs_dim, env.action_dim, cfg, seed=seed)
    agent.env_meta = env_normalization_meta(env)
    buffer = ReplayBuffer(cfg.replay_capacity, env.obs_dim, env.action_dim, seed=seed + 1)
    warmup_rng = np.random.default_rng(seed + 2)
    log = TrainLog()

    obs = env.reset(seed=seed + 3)
    ep_return, ep_len = 0.0, 0
    ep_reward_sums: list[float] = []
    losses = {"critic_loss": float("nan"), "actor_loss": float("nan")}
    for step in range(1, cfg.total_steps + 1):
        if step <= cfg.warmup_steps:
            action = warmup_rng.uniform(-1.0, 1.0, size=env.action_dim)
        else:
            action = agent.act(obs)
        next_obs, reward, done, info = env.step(action)
        buffer.add(obs, action, reward, next_obs, info["success"])
        obs = next_obs
        ep_return += reward
        ep_len += 1
        if done:
            log.episodes.append((ep_return, ep_len, info["success"]))
            ep_reward_sums.append(ep_return)
            ep_return, ep_len = 0.0, 0
            obs = env.reset()

        if step > cfg.warmup_steps and len(buffer) >= cfg.batch_size:
            for _ in range(cfg.updates_per_step):
                losses = agent.update(buffer.sample(cfg.batch_size))

        if step % cfg.log_every_steps == 0:
            window = log.episodes[-cfg.log_window_episodes:]
            if window:
                mean_reward = float(np.mean([r / max(n, 1) for r, n, _ in window]))
                mean_len = float(np.mean([n for _, n, _ in window]))
            else:
                mean_reward, mean_len = float("nan"), float("nan")
            log.rows.append(
                {
                    "env_step": step,
                    "mean_reward": mean_reward,
                    "mean_ep_len": mean_len,
                    "alpha": agent.alpha,
                    "critic_loss": losses.get("critic_loss", float("nan")),
                    "actor_loss": losses.get("actor_loss", float("nan")),
                }
            )
            if progress:
                print(
                    f"step {step:>8d}  reward/step {mean_reward:+.4f}  "
                    f"ep_len {mean_len:7.2f}  alpha {agent.alpha:.4f}",
                    flush=True,
                )
    return agent, log


# =====================================================================
# Evaluation
# =====================================================================


def trial_seeds(master_seed: int, n_trials: int) -> np.ndarray:
    """Per-trial integer seeds derived from one master seed.  Policies
    evaluated from the same master seed see identical start poses."""
    return np.random.SeedSequence(master_seed).generate_state(n_trials)


def start_pose_for_seed(seed: int, env: AlignmentEnv) -> tuple[float, float, float]:
    """The start pose a given per-trial seed maps to (shared across
    policies; the measurement-noise stream is drawn separately)."""
    from qalign.env import sample_start_pose

    ss_pose, _ = np.random.SeedSequence(int(seed)).spawn(2)
    return sample_start_pose(env.mdp, env.model, np.random.default_rng(ss_pose))


def run_trial(
    agent: SacAgent,
    env: AlignmentEnv,
    seed: int,
    trial_id: int,
    time_budget_s: float = 3600.0,
    policy_label: str = "rl",
) -> TrialResult:
    """One deterministic-policy episode under a simulated-time budget."""
    ss_pose, ss_noise = np.random.SeedSequence(int(seed)).spawn(2)
    from qalign.env import sample_start_pose

    pose = sample_start_pose(env.mdp, env.model, np.random.default_rng(ss_pose))
    env.rng = np.random.default_rng(ss_noise)
    env.stage.rng = env.rng
    obs = env.reset(start_pose=pose)
    converged = False
    time_s = float("nan")
    while env.time_s + env.mdp.t_step_s <= time_budget_s:
        action = agent.act(obs, deterministic=True)
        obs, _, done, info = env.step(action)
        if info["success"]:
            converged = True
            time_s = env.time_s
            break
        if done:  # step-budget truncation inside the time budget
            break
    return TrialResult(
        trial_id=trial_id,
        policy=policy_label,
        seed=int(seed),
        r0_um=pose[0],
        theta0_rad=pose[1],
        z0_um=pose[2],
        converged=converged,
        time_s=time_s,
    )


def evaluate_policy(
    agent: SacAgent,
    env_factory,
    n_trials: int,
    seed: int,
    time_budget_s: float = 3600.0,
    policy_label: str = "rl",
) -> list[TrialResult]:
    """Evaluate the deterministic policy over seeded trials.

    `env_factory()` must build a fresh AlignmentEnv; its normalization
    constants are validated against the agent's checkpointed ones.
    """
    results = []
    for trial_id, trial_seed in enumerate(trial_seeds(seed, n_trials)):
        env = env_factory()
        check_env_compat(agent, env)
        results.append(
            run_trial(agent, env, int(trial_seed), trial_id, time_budget_s, policy_label)
        )
    return results
