"""
Heuristic search vs. trained agent, head to head
================================================

Both policies recover the same misalignments: each trial seed fixes a
start pose shared by the two, while measurement noise stays private to
each run.  The score is the time-threshold accuracy curve - the
fraction of trials converged within a threshold, swept over the hour -
and its exact area, plus median convergence times and the per-pair win
rate.

Pass --ckpt agent.npz to reuse a checkpoint from demo 04; otherwise a
quick agent is trained first.

Run:  python3 demos/05_policy_comparison.py [--ckpt FILE] [--trials N]
"""

import argparse

import numpy as np

from qalign.env import AlignmentEnv, CouplingModel, CouplingStage, sample_start_pose
from qalign.heuristic import run_alignment
from qalign.metrics import TrialResult, compare_policies, curve_to_csv
from qalign.sac import (
    SacAgent,
    SacConfig,
    run_trial,
    train,
    trial_seeds,
)

parser = argparse.ArgumentParser()
parser.add_argument("--ckpt", help="agent checkpoint (trains one if omitted)")
parser.add_argument("--trials", type=int, default=40)
args = parser.parse_args()

env = AlignmentEnv()
if args.ckpt:
    agent = SacAgent.load(args.ckpt)
    print(f"loaded agent from {args.ckpt} ({agent.train_step} updates)")
else:
    print("no checkpoint given; training a quick agent (30k steps)...")
    agent, _ = train(
        env, SacConfig(gamma=0.0003, total_steps=30000, warmup_steps=2000), seed=0
    )

model = CouplingModel()
seeds = trial_seeds(master_seed=42, n_trials=args.trials)

print(f"\nrunning {args.trials} paired trials...")
ha_results, rl_results = [], []
for trial_id, seed in enumerate(seeds):
    # Heuristic run: pose substream shared, noise substream private.
    ss_pose, ss_noise = np.random.SeedSequence(int(seed)).spawn(2)
    pose = sample_start_pose(env.mdp, model, np.random.default_rng(ss_pose))
    stage = CouplingStage(model, rng=np.random.default_rng(ss_noise))
    stage.set_polar(*pose)
    trace = run_alignment(stage)
    ha_results.append(
        TrialResult(
            trial_id=trial_id,
            policy="ha",
            seed=int(seed),
            r0_um=pose[0],
            theta0_rad=pose[1],
            z0_um=pose[2],
            converged=trace.converged,
            time_s=trace.elapsed_s if trace.converged else float("nan"),
        )
    )
    rl_results.append(run_trial(agent, env, int(seed), trial_id))

comparison = compare_policies(ha_results, rl_results)
print()
print(comparison.format_report(), end="")

curve_to_csv(comparison.curve_a, "roc_ha.csv")
curve_to_csv(comparison.curve_b, "roc_rl.csv")
print("\nwrote roc_ha.csv and roc_rl.csv")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 5))
    ax.plot(comparison.curve_a.thresholds_s / 60.0, comparison.curve_a.accuracy,
            label=f"heuristic (AUC {comparison.auc_a:.3f})")
    ax.plot(comparison.curve_b.thresholds_s / 60.0, comparison.curve_b.accuracy,
            label=f"agent (AUC {comparison.auc_b:.3f})")
    ax.set_xlabel("time threshold (min)")
    ax.set_ylabel("fraction converged")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig("policy_comparison.png", dpi=120)
    print("wrote policy_comparison.png")
except ImportError:
    print("(matplotlib not installed; skipping the plot)")
