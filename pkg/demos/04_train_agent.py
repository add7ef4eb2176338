"""
Training the soft actor-critic aligner
======================================

The alignment task wrapped as an MDP: the agent observes the last five
normalized (r, theta, z, rate) frames, moves all three axes at once,
and earns banded bonuses for rate improvements minus a small step
penalty.  With the nearly myopic discount the agent learns to drive
straight into the success basin within a few moves.

A short run here shows the learning trend; pass --steps 200000 for the
fully converged policy used in the headline comparison (about twenty
minutes on one CPU core).

Run:  python3 demos/04_train_agent.py [--steps N]
"""

import argparse

from qalign.env import AlignmentEnv
from qalign.sac import SacConfig, train

parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=30000)
parser.add_argument("--out", default="agent.npz")
args = parser.parse_args()

cfg = SacConfig(gamma=0.0003, total_steps=args.steps, warmup_steps=2000)
env = AlignmentEnv()
print(f"training for {cfg.total_steps} env steps "
      f"(gamma = {cfg.gamma}, warmup {cfg.warmup_steps})...\n")

agent, log = train(env, cfg, seed=0, progress=True)
agent.save(args.out)

episodes = log.episodes
successes = sum(1 for _, _, s in episodes if s)
print(f"\n{len(episodes)} episodes, {successes} reached the success rate")
first, last = episodes[: len(episodes) // 10], episodes[-len(episodes) // 10:]
print(f"mean episode length, first tenth of training: "
      f"{sum(n for _, n, _ in first) / len(first):.1f} steps")
print(f"mean episode length, last tenth of training:  "
      f"{sum(n for _, n, _ in last) / len(last):.1f} steps")
print(f"\ncheckpoint -> {args.out}")
