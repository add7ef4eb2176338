"""Command-line runner.

Subcommands:
  spdc-scan   temperature sweep of the pair source; writes opo_sweep.csv,
              spectral_sweep.csv, and biphoton.csv
  ha-run      one heuristic alignment run; writes the search trace CSV
  rl-train    train the SAC agent; writes checkpoint.npz and
              training_log.csv
  rl-eval     evaluate a checkpoint over seeded trials; writes a trials CSV
  roc         accuracy-vs-threshold curve from a trials CSV
  campaign    paired heuristic-vs-agent comparison; writes trials.csv,
              roc_ha.csv, roc_rl.csv, report.txt

Common flags: --config FILE, --set block.key=value (repeatable), --seed N,
--jobs N, --out PATH.  --out is a directory for multi-file commands and a
file path for rl-eval/roc; by default multi-file commands write into
runs/<utc-timestamp>-<command>/.  Every command echoes the fully resolved
configuration (resolved_config.yaml) next to its outputs.

Exit codes: 0 success, 2 configuration/usage error, 3 alignment aborted
with no detectable signal, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from qalign import config as config_mod
from qalign import heuristic as heuristic_mod
from qalign import metrics as metrics_mod
from qalign import sac as sac_mod
from qalign import spdc as spdc_mod
from qalign.config import RunConfig
from qalign.env import AlignmentEnv, CouplingStage, sample_start_pose
from qalign.errors import CheckpointError, ConfigError, NumericsError, QalignError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_SIGNAL = 3
EXIT_NUMERIC = 4

OPO_SWEEP_HEADER = "temperature_C,signal_nm,idler_nm,opening_angle_rad,log10_abs_dk"
SPECTRAL_SWEEP_HEADER = "temperature_C,mean_nm,mode_nm,std_nm,fwhm_nm,brightness_rel"


def _fmt(x: float) -> str:
    return repr(float(x))


# =====================================================================
# Shared plumbing
# =====================================================================


def _load_cfg(args) -> RunConfig:
    return config_mod.load_config(args.config, sets=args.set or [])


def _run_dir(args, command: str) -> str:
    if args.out:
        path = args.out
    else:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%SZ")
        path = os.path.join("runs", f"{stamp}-{command}")
    os.makedirs(path, exist_ok=True)
    return path


def _echo_config(cfg: RunConfig, directory: str) -> None:
    config_mod.write_resolved(cfg, os.path.join(directory, "resolved_config.yaml"))


def _make_env(cfg: RunConfig) -> AlignmentEnv:
    return AlignmentEnv(model=cfg.coupling, reward=cfg.reward, mdp=cfg.mdp)


def _run_ha_trial(cfg: RunConfig, trial_id: int, seed: int) -> metrics_mod.TrialResult:
    """One heuristic trial under the trial-seed scheme shared with RL
    evaluation: the pose substream is common to both policies, the
    noise substream is private."""
    ss_pose, ss_noise = np.random.SeedSequence(int(seed)).spawn(2)
    pose = sample_start_pose(cfg.mdp, cfg.coupling, np.random.default_rng(ss_pose))
    stage = CouplingStage(cfg.coupling, rng=np.random.default_rng(ss_noise))
    stage.set_polar(*pose)
    trace = heuristic_mod.run_alignment(
        stage,
        cfg.heuristic,
        c_max_cps=cfg.reward.resolve_c_max(cfg.coupling),
        background_cps=cfg.coupling.background_rate_cps,
    )
    return metrics_mod.TrialResult(
        trial_id=trial_id,
        policy="ha",
        seed=int(seed),
        r0_um=pose[0],
        theta0_rad=pose[1],
        z0_um=pose[2],
        converged=trace.converged,
        time_s=trace.elapsed_s if trace.converged else float("nan"),
    )


def _run_rl_trial(
    cfg: RunConfig, agent: sac_mod.SacAgent, trial_id: int, seed: int
) -> metrics_mod.TrialResult:
    env = _make_env(cfg)
    sac_mod.check_env_compat(agent, env)
    return sac_mod.run_trial(
        agent, env, seed, trial_id, time_budget_s=cfg.eval.time_budget_s
    )


# Worker-process state for --jobs > 1.
_WORKER: dict = {}


def _init_worker(cfg_dict: dict, ckpt_path: Optional[str]) -> None:
    import torch

    torch.set_num_threads(1)
    _WORKER["cfg"] = config_mod.from_dict(cfg_dict)
    _WORKER["agent"] = sac_mod.SacAgent.load(ckpt_path) if ckpt_path else None


def _worker_ha(arg) -> metrics_mod.TrialResult:
    trial_id, seed = arg
    return _run_ha_trial(_WORKER["cfg"], trial_id, seed)


def _worker_rl(arg) -> metrics_mod.TrialResult:
    trial_id, seed = arg
    return _run_rl_trial(_WORKER["cfg"], _WORKER["agent"], trial_id, seed)


def _map_trials(
    cfg: RunConfig,
    worker,
    inline,
    seeds,
    jobs: int,
    ckpt_path: Optional[str] = None,
) -> list:
    """Run one trial per seed, inline or across a process pool; results
    come back ordered by trial_id either way."""
    work = list(enumerate(int(s) for s in seeds))
    if jobs <= 1:
        return [inline(trial_id, seed) for trial_id, seed in work]
    cfg_dict = config_mod._as_nested_dict(cfg)
    with ProcessPoolExecutor(
        max_workers=jobs, initializer=_init_worker, initargs=(cfg_dict, ckpt_path)
    ) as pool:
        results = list(pool.map(worker, work))
    return sorted(results, key=lambda r: r.trial_id)


# =====================================================================
# Subcommands
# =====================================================================


def cmd_spdc_scan(args) -> int:
    cfg = _load_cfg(args)
    out = _run_dir(args, "spdc-scan")
    _echo_config(cfg, out)
    c = cfg.crystal
    rows = spdc_mod.temperature_sweep(
        c.to_crystal_config(),
        t_min_c=c.sweep_t_min_c,
        t_max_c=c.sweep_t_max_c,
        steps=c.sweep_steps,
        grid_points=c.grid_points,
    )

    with open(os.path.join(out, "opo_sweep.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(OPO_SWEEP_HEADER.split(","))
        for row in rows:
            if row.point is None:
                writer.writerow([_fmt(row.temperature_c)] + ["nan"] * 4)
                continue
            p = row.point
            log_dk = math.log10(max(abs(p.delta_k_inv_um), 1e-16))
            writer.writerow(
                [
                    _fmt(row.temperature_c),
                    _fmt(p.signal_nm),
                    _fmt(p.idler_nm),
                    _fmt(p.opening_angle_rad),
                    _fmt(log_dk),
                ]
            )

    with open(os.path.join(out, "spectral_sweep.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SPECTRAL_SWEEP_HEADER.split(","))
        for row in rows:
            if row.summary is None:
                writer.writerow([_fmt(row.temperature_c)] + ["nan"] * 5)
                continue
            s = row.summary
            writer.writerow(
                [
                    _fmt(row.temperature_c),
                    _fmt(s.mean_nm),
                    _fmt(s.mode_nm),
                    _fmt(s.std_nm),
                    _fmt(s.fwhm_nm),
                    _fmt(s.brightness_rel),
                ]
            )

    wf = spdc_mod.biphoton_wavefunction(c.to_crystal_config(), c.grid_points)
    spdc_mod.wavefunction_to_csv(wf, os.path.join(out, "biphoton.csv"))
    n_err = sum(1 for r in rows if r.error is not None)
    print(f"spdc-scan: {len(rows)} temperatures ({n_err} flagged) -> {out}")
    return EXIT_OK


def cmd_ha_run(args) -> int:
    cfg = _load_cfg(args)
    out = _run_dir(args, "ha-run")
    _echo_config(cfg, out)
    trace_path = args.trace or os.path.join(out, "trace.csv")

    ss_pose, ss_noise = np.random.SeedSequence(args.seed).spawn(2)
    pose = sample_start_pose(cfg.mdp, cfg.coupling, np.random.default_rng(ss_pose))
    stage = CouplingStage(cfg.coupling, rng=np.random.default_rng(ss_noise))
    stage.set_polar(*pose)
    trace = heuristic_mod.run_alignment(
        stage,
        cfg.heuristic,
        c_max_cps=cfg.reward.resolve_c_max(cfg.coupling),
        background_cps=cfg.coupling.background_rate_cps,
    )
    heuristic_mod.trace_to_csv(trace, trace_path)
    print(
        f"ha-run: outcome={trace.outcome} elapsed={trace.elapsed_s:.1f}s "
        f"final_rate={trace.final_rate_cps:.1f}cps events={len(trace.events)} "
        f"-> {trace_path}"
    )
    if trace.outcome == heuristic_mod.OUTCOME_ABORTED:
        return EXIT_NO_SIGNAL
    return EXIT_OK


def cmd_rl_train(args) -> int:
    cfg = _load_cfg(args)
    out = _run_dir(args, "rl-train")
    _echo_config(cfg, out)
    env = _make_env(cfg)
    agent, log = sac_mod.train(env, cfg.sac, seed=args.seed, progress=not args.quiet)
    ckpt = os.path.join(out, "checkpoint.npz")
    agent.save(ckpt)
    log.to_csv(os.path.join(out, "training_log.csv"))
    print(f"rl-train: {cfg.sac.total_steps} steps, checkpoint -> {ckpt}")
    return EXIT_OK


def cmd_rl_eval(args) -> int:
    cfg = _load_cfg(args)
    out_csv = args.out or os.path.join(_run_dir(args, "rl-eval"), "trials.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out_csv)), exist_ok=True)
    _echo_config(cfg, os.path.dirname(os.path.abspath(out_csv)))
    agent = sac_mod.SacAgent.load(args.ckpt)
    sac_mod.check_env_compat(agent, _make_env(cfg))
    n = args.trials if args.trials is not None else cfg.eval.trials
    seeds = sac_mod.trial_seeds(args.seed, n)
    results = _map_trials(
        cfg,
        _worker_rl,
        lambda tid, s: _run_rl_trial(cfg, agent, tid, s),
        seeds,
        args.jobs,
        ckpt_path=args.ckpt,
    )
    metrics_mod.trials_to_csv(results, out_csv)
    auc = metrics_mod.exact_auc(results, cfg.eval.time_budget_s)
    conv = sum(r.converged for r in results)
    print(f"rl-eval: {conv}/{n} converged, auc={auc:.4f} -> {out_csv}")
    return EXIT_OK


def cmd_roc(args) -> int:
    cfg = _load_cfg(args)
    try:
        results = metrics_mod.trials_from_csv(args.infile)
    except OSError as exc:
        raise ConfigError(f"cannot read trials file {args.infile!r}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad trials file {args.infile!r}: {exc}") from exc
    policies = sorted({r.policy for r in results})
    if args.policy is not None:
        results = [r for r in results if r.policy == args.policy]
        if not results:
            raise ConfigError(f"no rows with policy {args.policy!r} in {args.infile}")
    elif len(policies) > 1:
        raise ConfigError(
            f"trials file contains several policies {policies}; pass --policy"
        )
    out_csv = args.out or "roc.csv"
    curve = metrics_mod.roc_curve(results, cfg.eval.n_thresholds, cfg.eval.time_budget_s)
    metrics_mod.curve_to_csv(curve, out_csv)
    print(f"roc: {len(results)} trials, auc={curve.auc:.4f} -> {out_csv}")
    return EXIT_OK


def cmd_campaign(args) -> int:
    cfg = _load_cfg(args)
    out = _run_dir(args, "campaign")
    _echo_config(cfg, out)
    n = args.trials if args.trials is not None else cfg.eval.trials
    seeds = sac_mod.trial_seeds(args.seed, n)

    if args.ckpt:
        ckpt_path = args.ckpt
        agent = sac_mod.SacAgent.load(ckpt_path)
    else:
        print(f"campaign: no checkpoint given, training {cfg.sac.total_steps} steps...")
        env = _make_env(cfg)
        agent, log = sac_mod.train(env, cfg.sac, seed=args.seed, progress=not args.quiet)
        ckpt_path = os.path.join(out, "checkpoint.npz")
        agent.save(ckpt_path)
        log.to_csv(os.path.join(out, "training_log.csv"))
    sac_mod.check_env_compat(agent, _make_env(cfg))

    print(f"campaign: running {n} heuristic trials...")
    ha = _map_trials(
        cfg,
        _worker_ha,
        lambda tid, s: _run_ha_trial(cfg, tid, s),
        seeds,
        args.jobs,
    )
    print(f"campaign: running {n} agent trials...")
    rl = _map_trials(
        cfg,
        _worker_rl,
        lambda tid, s: _run_rl_trial(cfg, agent, tid, s),
        seeds,
        args.jobs,
        ckpt_path=ckpt_path,
    )

    metrics_mod.trials_to_csv(ha + rl, os.path.join(out, "trials.csv"))
    comp = metrics_mod.compare_policies(
        ha, rl, window_s=cfg.eval.time_budget_s, n_thresholds=cfg.eval.n_thresholds
    )
    metrics_mod.curve_to_csv(comp.curve_a, os.path.join(out, "roc_ha.csv"))
    metrics_mod.curve_to_csv(comp.curve_b, os.path.join(out, "roc_rl.csv"))
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(comp.format_report())
    print(comp.format_report(), end="")
    print(f"campaign: outputs -> {out}")
    return EXIT_OK


# =====================================================================
# Parser and entry point
# =====================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qalign",
        description="Pair-source simulation and autonomous alignment runner.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument(
            "--set",
            action="append",
            metavar="BLOCK.KEY=VALUE",
            help="override one config value (repeatable)",
        )
        p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        p.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
        p.add_argument("--out", help="output directory (or file for rl-eval/roc)")
        p.add_argument("--quiet", action="store_true", help="suppress progress lines")

    p = sub.add_parser("spdc-scan", help="temperature sweep of the pair source")
    common(p)
    p.set_defaults(func=cmd_spdc_scan)

    p = sub.add_parser("ha-run", help="one heuristic alignment run")
    common(p)
    p.add_argument("--trace", help="trace CSV path (default <out>/trace.csv)")
    p.set_defaults(func=cmd_ha_run)

    p = sub.add_parser("rl-train", help="train the SAC agent")
    common(p)
    p.set_defaults(func=cmd_rl_train)

    p = sub.add_parser("rl-eval", help="evaluate a checkpoint over seeded trials")
    common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint .npz")
    p.add_argument("--trials", type=int, help="trial count (default eval.trials)")
    p.set_defaults(func=cmd_rl_eval)

    p = sub.add_parser("roc", help="accuracy curve from a trials CSV")
    common(p)
    p.add_argument("--in", dest="infile", required=True, help="trials CSV")
    p.add_argument("--policy", help="policy label to select when mixed")
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("campaign", help="paired heuristic-vs-agent comparison")
    common(p)
    p.add_argument("--trials", type=int, help="trial count (default eval.trials)")
    p.add_argument("--ckpt", help="existing checkpoint (otherwise trains first)")
    p.set_defaults(func=cmd_campaign)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except metrics_mod.PairingError as exc:
        print(f"pairing error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericsError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except QalignError as exc:  # any domain error not mapped above
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
