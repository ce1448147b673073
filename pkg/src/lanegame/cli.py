"""Command-line entry point: train policies, run robustness batteries, and
merge evaluation results.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from lanegame import evaluation as ev
from lanegame.config import (
    ExperimentConfig,
    apply_overrides,
    config_to_text,
    default_config,
    load_config,
)
from lanegame.env import OBSERVATION_DIM, GameBundle
from lanegame.errors import CheckpointError, ConfigError, LaneGameError
from lanegame.optimizer import ADVERSARY, PROTAGONIST
from lanegame.policy import load_policy, save_policy
from lanegame.reporting import append_eval_reports, merge_eval_csvs, write_metrics_csv, write_report_csv
from lanegame import trainers
from lanegame.trainers import TrainArtifacts, metric_rows

TRAIN_MODES = (trainers.BASELINE, trainers.RARL, trainers.NFSP)
EVAL_TESTS = (ev.PARETO, ev.ADVERSARIAL, ev.LSC, ev.AXLE, ev.CLEAN)


def _bundle(cfg: ExperimentConfig) -> GameBundle:
    return GameBundle(env=cfg.env, adversary=cfg.adversary, vehicle=cfg.vehicle)


def _run_dir(cfg: ExperimentConfig, out: str | None) -> Path:
    path = Path(out) if out else Path(cfg.run.out_dir) / cfg.run.name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _save_checkpoints(art: TrainArtifacts, out_dir: Path, prefix: str) -> list[Path]:
    saved = []
    for role, policy in sorted(art.policies.items()):
        path = out_dir / f"{prefix}_{role}_final.lgpc"
        save_policy(policy, path)
        saved.append(path)
    for iteration, snapshot in art.checkpoints:
        for role, policy in sorted(snapshot.items()):
            path = out_dir / f"{prefix}_{role}_iter{iteration:05d}.lgpc"
            save_policy(policy, path)
            saved.append(path)
    return saved


def cmd_train(cfg: ExperimentConfig, mode: str, out: str | None) -> int:
    out_dir = _run_dir(cfg, out)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.run.seed))
    bundle = _bundle(cfg)
    kwargs = dict(
        hidden=cfg.policy_hidden,
        rng=rng,
        record_timing=cfg.run.record_timing,
    )
    if mode == trainers.BASELINE:
        art = trainers.train_baseline(cfg.train, bundle, cfg.optimizer, **kwargs)
    elif mode == trainers.RARL:
        art = trainers.train_rarl(cfg.train, bundle, cfg.optimizer, **kwargs)
    elif mode == trainers.NFSP:
        art = trainers.train_nfsp(cfg.train, bundle, cfg.optimizer, **kwargs)
    else:
        raise ConfigError(f"unknown training mode {mode!r}")
    write_metrics_csv(metric_rows(art.log), out_dir / f"metrics_{mode}.csv")
    (out_dir / "config.txt").write_text(config_to_text(cfg), encoding="utf-8")
    _save_checkpoints(art, out_dir, mode)
    final = art.log[-1] if art.log else None
    summary = "no iterations run"
    if final is not None:
        parts = [
            f"{player} mean_reward={stats.mean_reward:.3f} failure_rate={stats.failure_rate:.3f}"
            for player, stats in sorted(final.players.items())
        ]
        summary = f"iteration {final.iteration}: " + "; ".join(parts)
    print(f"train[{mode}] seed={cfg.run.seed} -> {out_dir}: {summary}")
    return 0


def _load_protagonist(cfg: ExperimentConfig, checkpoint: str):
    policy = load_policy(checkpoint)
    if policy.spec.input_dim != OBSERVATION_DIM:
        raise CheckpointError(
            f"{checkpoint}: input_dim {policy.spec.input_dim} does not match "
            f"the environment observation length {OBSERVATION_DIM}"
        )
    if policy.spec.output_dim != 2:
        raise CheckpointError(
            f"{checkpoint}: output_dim {policy.spec.output_dim} does not match "
            "the 2-dimensional protagonist action"
        )
    return policy


def cmd_eval(
    cfg: ExperimentConfig,
    checkpoint: str,
    test: str,
    out: str | None,
    beta_list=None,
    rollouts: int | None = None,
) -> int:
    out_dir = _run_dir(cfg, out)
    policy = _load_protagonist(cfg, checkpoint)
    policy_id = Path(checkpoint).stem
    bundle = _bundle(cfg)
    n = rollouts if rollouts is not None else cfg.eval.rollouts
    seed = cfg.run.seed
    workers = cfg.run.workers
    if test == ev.CLEAN:
        reports = [ev.run_clean_test(policy, n, bundle, seed, policy_id, workers)]
    elif test == ev.PARETO:
        betas = beta_list if beta_list else cfg.eval.beta_list
        reports = ev.run_pareto_test(
            policy,
            betas,
            n,
            bundle,
            seed,
            policy_id,
            workers,
            x_m=cfg.eval.pareto_x_m,
            sign_flip_prob=cfg.eval.pareto_sign_flip_prob,
        )
    elif test == ev.LSC:
        reports = [
            ev.run_lsc_test(
                policy,
                n,
                bundle,
                seed,
                policy_id,
                workers,
                steer_rate_limit=math.radians(cfg.eval.lsc_steer_limit_deg),
            )
        ]
    elif test == ev.AXLE:
        reports = [
            ev.run_axle_test(
                policy,
                n,
                bundle,
                seed,
                policy_id,
                workers,
                axle_low=cfg.eval.axle_low,
                axle_high=cfg.eval.axle_high,
            )
        ]
    elif test == ev.ADVERSARIAL:
        adversaries = _train_eval_adversaries(cfg, policy, out_dir, policy_id)
        reports = ev.run_adversarial_test(policy, adversaries, n, bundle, seed, policy_id, workers)
    else:
        raise ConfigError(f"unknown test {test!r}")
    append_eval_reports(reports, out_dir / f"eval_{test}.csv")
    for rep in reports:
        print(
            f"eval[{rep.test_id}] policy={rep.policy_id} param={rep.param} "
            f"mean_reward={rep.mean_reward:.3f} failure_rate={rep.failure_rate:.3f}"
        )
    return 0


def _train_eval_adversaries(
    cfg: ExperimentConfig, policy, out_dir: Path, policy_id: str
) -> list[tuple[int, object]]:
    """Train an adversary against the frozen protagonist (the adversary
    phase of alternating training) and return its checkpoint sequence."""
    train_cfg = replace(
        cfg.train,
        n_iter=cfg.eval.adversary_iters,
        n2=cfg.eval.adversary_updates,
    )
    rng = np.random.default_rng(np.random.SeedSequence((cfg.run.seed, 0xAD)))
    art = trainers.train_adversary_against(
        policy, train_cfg, _bundle(cfg), cfg.optimizer, cfg.policy_hidden, rng
    )
    adversaries = []
    for iteration, snapshot in art.checkpoints:
        adv = snapshot[ADVERSARY]
        save_policy(adv, out_dir / f"evaladv_{policy_id}_iter{iteration:05d}.lgpc")
        adversaries.append((iteration, adv))
    return adversaries


def cmd_report(run_dir: str) -> int:
    directory = Path(run_dir)
    if not directory.is_dir():
        raise ConfigError(f"report directory does not exist: {run_dir}")
    rows, warnings = merge_eval_csvs(directory)
    for message in warnings:
        print(f"warning: {message}", file=sys.stderr)
    if not rows:
        print(f"warning: no evaluation CSVs found in {run_dir}", file=sys.stderr)
    out_path = directory / "report.csv"
    write_report_csv(rows, out_path)
    print(f"report: {len(rows)} rows -> {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanegame",
        description="Adversarial lane-change training and robustness evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a policy (baseline, rarl, or nfsp)")
    train.add_argument("--config", help="configuration file (defaults apply when omitted)")
    train.add_argument("--mode", choices=TRAIN_MODES, required=True)
    train.add_argument("--seed", type=int, help="override run.seed")
    train.add_argument("--out", help="run directory (default run.out_dir/run.name)")
    train.add_argument("--workers", type=int, help="override run.workers")

    evalp = sub.add_parser("eval", help="run a robustness test battery")
    evalp.add_argument("--config", help="configuration file")
    evalp.add_argument("--checkpoint", required=True, help="protagonist checkpoint (.lgpc)")
    evalp.add_argument("--test", choices=EVAL_TESTS, required=True)
    evalp.add_argument("--beta-list", help="comma-separated shape parameters for the pareto test")
    evalp.add_argument("--rollouts", type=int, help="override eval.rollouts")
    evalp.add_argument("--seed", type=int, help="override run.seed")
    evalp.add_argument("--out", help="run directory")
    evalp.add_argument("--workers", type=int, help="override run.workers")

    report = sub.add_parser("report", help="merge eval CSVs in a run directory")
    report.add_argument("--out", required=True, help="run directory to merge")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config()
    return apply_overrides(
        cfg,
        seed=getattr(args, "seed", None),
        workers=getattr(args, "workers", None),
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(_load(args), args.mode, args.out)
        if args.command == "eval":
            beta_list = None
            if args.beta_list:
                try:
                    beta_list = tuple(float(tok) for tok in args.beta_list.split(",") if tok.strip())
                except ValueError as exc:
                    raise ConfigError(f"invalid --beta-list: {exc}") from exc
            return cmd_eval(
                _load(args), args.checkpoint, args.test, args.out, beta_list, args.rollouts
            )
        if args.command == "report":
            return cmd_report(args.out)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except LaneGameError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
