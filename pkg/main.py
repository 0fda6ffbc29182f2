#!/usr/bin/env python3
"""
DARL1N TRAINING ENTRY POINT
===========================

Distributed multi-agent actor-critic training with one-hop neighborhoods,
plus a centralized MADDPG baseline and a brute-force verification suite.

Commands:
- train  <config>               train (or train each of aggregate_seeds) and write run outputs
- eval   <config> <params-dir>  evaluate saved policies over eval_episodes rollouts
- bench  <config>               per-iteration timing for both algorithms over bench_agents
- verify [--quick | --full]     run the oracle suite

Exit codes: 0 success, 1 configuration error, 2 runtime abort, 3 verification failure.

Environment:
- DARL1N_LOG_LEVEL   logging level (default INFO)
- DARL1N_OUTPUT_DIR  output directory when the config file does not set one
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace

from baseline_maddpg import run_baseline
from coordinator import CoordinatorError, load_policy_table, run_training, save_policy_table
from envs import make_env, rollout
from oracle import SuiteSettings, run_oracle_suite
from reporting import aggregate_runs, emit_outputs, write_bench_csv
from run_config import ConfigError, env_config, format_config, load_config, parse_config
from seeding import derive_seed
from wire_protocol import ProtocolError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3

QUICK_SUITE = SuiteSettings(walk_steps=10_000, env_walk_steps=200, probes=300)
FULL_SUITE = SuiteSettings(walk_steps=100_000, env_walk_steps=100_000, probes=100_000)


def train_once(cfg, output_dir):
    """One training run of cfg.algorithm; writes config, metrics, summary, plot and policies."""
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, "config.resolved.txt"), "w", encoding="utf-8") as f:
        f.write(format_config(cfg))
    trainer = run_baseline if cfg.algorithm == "maddpg" else run_training
    result = trainer(cfg)
    summary = emit_outputs(result.rows, output_dir, label=f"{cfg.algorithm} {cfg.env} M={cfg.M} seed={cfg.seed}")
    save_policy_table(result.table, os.path.join(output_dir, "policies"))
    return result, summary


def cmd_train(args):
    cfg = load_config(args.config)
    if not cfg.aggregate_seeds:
        _, summary = train_once(cfg, cfg.output_dir)
        print(f"\n🎯 TRAINING SUMMARY:")
        print(f"  • Algorithm: {cfg.algorithm} on {cfg.env} with M={cfg.M}")
        print(f"  • Evaluation points: {summary.iterations}")
        print(f"  • Final avg total reward: {summary.final_reward}")
        print(f"  • Converged at iteration: {summary.convergence_iteration}")
        print(f"  • Outputs: {cfg.output_dir}")
        return {"success": True, "summary": asdict(summary)}

    runs = []
    for seed in cfg.aggregate_seeds:
        run_cfg = replace(cfg, seed=seed)
        result, summary = train_once(run_cfg, os.path.join(cfg.output_dir, f"seed_{seed}"))
        logger.info(f"✅ seed {seed}: final reward {summary.final_reward}, converged at {summary.convergence_iteration}")
        runs.append(result.rows)
    aggregate = emit_outputs(aggregate_runs(runs), os.path.join(cfg.output_dir, "aggregate"),
                             label=f"mean over seeds {','.join(str(s) for s in cfg.aggregate_seeds)}")
    print(f"\n🎯 AGGREGATE SUMMARY ({len(runs)} seeds):")
    print(f"  • Final mean avg total reward: {aggregate.final_reward}")
    print(f"  • Converged at iteration: {aggregate.convergence_iteration}")
    return {"success": True, "summary": asdict(aggregate)}


def cmd_eval(args):
    cfg = load_config(args.config)
    env = make_env(env_config(cfg))
    pairs = load_policy_table(args.params_dir, env.num_agents, env.policy_head)
    policies = [pairs[i].policy for i in range(env.num_agents)]
    rewards = rollout(env, policies, derive_seed(cfg.seed, "eval", "saved"), cfg.eval_episodes)
    mean = sum(rewards) / len(rewards)
    logger.info(f"EVAL_RESULT: {json.dumps({'episodes': len(rewards), 'avg_total_reward': mean})}")
    print(f"\n📊 Avg total reward over {len(rewards)} episodes: {mean}")
    return {"success": True, "avg_total_reward": mean, "episode_rewards": rewards}


def cmd_bench(args):
    with open(args.config, encoding="utf-8") as f:
        text = f.read()
    base = parse_config(text)
    records = []
    for M in base.bench_agents:
        for algorithm in ("darl1n", "maddpg"):
            cfg = parse_config(text, M=M, algorithm=algorithm, max_iterations=base.bench_iterations,
                               eval_every=1, eval_episodes=1, transport="inproc")
            trainer = run_baseline if algorithm == "maddpg" else run_training
            rows = trainer(cfg).rows
            collect = sum(r.collect_s for r in rows) / len(rows)
            update = sum(r.update_s for r in rows) / len(rows)
            records.append({"algorithm": algorithm, "M": M, "iteration_s": collect + update,
                            "collect_s": collect, "update_s": update})
            logger.info(f"📊 {algorithm} M={M}: {collect + update:.4f}s per iteration")
    smallest = min(base.bench_agents)
    for record in records:
        reference = next(r for r in records if r["algorithm"] == record["algorithm"] and r["M"] == smallest)
        record["ratio_to_smallest"] = record["iteration_s"] / reference["iteration_s"]
    os.makedirs(base.output_dir, exist_ok=True)
    path = os.path.join(base.output_dir, "bench.csv")
    write_bench_csv(records, path)
    print(f"\n🎯 BENCH SUMMARY:")
    for record in records:
        print(f"  • {record['algorithm']:>6} M={record['M']:<3} {record['iteration_s']:.4f}s/iter "
              f"(x{record['ratio_to_smallest']:.2f} vs M={smallest})")
    print(f"  • Table: {path}")
    return {"success": True, "records": records}


def cmd_verify(args):
    settings = FULL_SUITE if args.full else QUICK_SUITE if args.quick else SuiteSettings()
    settings = replace(settings, seed=args.seed)
    results = run_oracle_suite(settings)
    failed = [r for r in results if not r.passed]
    print(f"\n🎯 VERIFICATION SUMMARY:")
    for result in results:
        logger.info(f"VERIFY_RESULT: {json.dumps(asdict(result))}")
        mark = "✅" if result.passed else "❌"
        print(f"  {mark} {result.name}: measured {result.measured:.6g} (limit {result.limit:.6g}) {result.detail}")
    print(f"  • {len(results) - len(failed)}/{len(results)} checks passed")
    return {"success": not failed, "failed": [r.name for r in failed]}


def build_parser():
    parser = argparse.ArgumentParser(description="DARL1N distributed multi-agent training")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="Train and write metrics, summary, plot and policies")
    train.add_argument("config", help="key=value run configuration file")
    train.set_defaults(handler=cmd_train)

    evaluate = sub.add_parser("eval", help="Evaluate saved policies")
    evaluate.add_argument("config")
    evaluate.add_argument("params_dir", help="Directory holding agent_<i>.bin files")
    evaluate.set_defaults(handler=cmd_eval)

    bench = sub.add_parser("bench", help="Per-iteration timing for DARL1N and MADDPG over bench_agents")
    bench.add_argument("config")
    bench.set_defaults(handler=cmd_bench)

    verify = sub.add_parser("verify", help="Run the oracle verification suite")
    depth = verify.add_mutually_exclusive_group()
    depth.add_argument("--quick", action="store_true", help="Shorter scans and fewer probes")
    depth.add_argument("--full", action="store_true", help="Acceptance-scale scans (slow)")
    verify.add_argument("--seed", type=int, default=0)
    verify.set_defaults(handler=cmd_verify, failure_code=EXIT_VERIFY)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.getenv("DARL1N_LOG_LEVEL", "INFO"),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        result = args.handler(args)
    except (ConfigError, FileNotFoundError) as e:
        logger.error(f"❌ Configuration error: {e}")
        return EXIT_CONFIG
    except (CoordinatorError, ProtocolError, OSError, FloatingPointError, RuntimeError, ValueError) as e:
        logger.error(f"❌ Run aborted: {e}")
        return EXIT_RUNTIME
    if not result.get("success"):
        return getattr(args, "failure_code", EXIT_RUNTIME)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
