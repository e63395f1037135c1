#!/usr/bin/env python3
"""
Command-line entry point of the IAB lab.

Subcommands:
    train             Train every (method, seed) cell, write curves, summary and checkpoints
                      (plus per-slot metrics with --step-metrics)
    sweep-alpha       Evaluate methods across a backhaul fraction grid
    evaluate          Evaluate checkpoints written by train on fresh drops
    bench             Time actor inference and, optionally, guidance cycles
    guidance-dry-run  Print the prompt built for one synthetic drop, no endpoint involved

Exit codes: 0 success, 1 runtime or I/O failure, 2 configuration or usage error.
"""

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

import hric_iab_lab
from hric_iab_lab.agent.ddpg import AgentError, DdpgAgent, actor_forward
from hric_iab_lab.channel.channel import LinkGain, dbm_to_watts, linear_to_db, watts_to_dbm
from hric_iab_lab.environment.environment import (EnvironmentContractError, IabEnvironment, StepMetricsWriter,
                                                  encode_state)
from hric_iab_lab.guidance.client import GuidanceError
from hric_iab_lab.guidance.guidance import (GuidanceAuditLog, build_prompt, guidance_with_fallback,
                                            heuristic_guidance, serialize_policy, validate_input)
from hric_iab_lab.harness.config import ConfigError, ExperimentConfig, config_sha256, dump_config, load_config
from hric_iab_lab.trainer.trainer import (GUIDED_METHODS, METHODS, TrainerContractError, evaluate,
                                          final_window_median, run_training, write_curves)

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

SUMMARY_COLUMNS = ["method", "num_seeds", "median_final_throughput"]
SWEEP_COLUMNS = ["alpha", "method", "mean_throughput", "stderr"]
EVALUATION_COLUMNS = ["method", "seed", "episode", "alpha", "throughput"]
LATENCY_COLUMNS = ["component", "sample", "latency_s"]
LATENCY_SUMMARY_COLUMNS = ["component", "samples", "min_s", "median_s", "p99_s"]
BENCH_FOOTNOTE = "Reference values: LLM < 1.5 s, agent < 0.07 ms"


class UsageError(Exception):
    """Custom exception for command-line usage errors."""
    pass


def _parse_alphas(text: str) -> Tuple[float, ...]:
    try:
        alphas = tuple(float(tok) for tok in text.replace(",", " ").split())
    except ValueError as e:
        raise UsageError(f"--alphas must be numbers separated by commas: {e}") from e
    if not alphas:
        raise UsageError("--alphas grid is empty")
    for alpha in alphas:
        if not 0.0 < alpha < 1.0:
            raise UsageError(f"--alphas entries must lie within (0, 1), got {alpha}")
    return alphas


def _checkpoint_path(directory: str, method: str, seed: int, m: int) -> str:
    return os.path.join(directory, f"{method}_seed{seed}_mbs{m}.npz")


def _load_agents(directory: str, method: str, seed: int, num_mbs: int) -> List[DdpgAgent]:
    if method == "epa":
        return []
    return [DdpgAgent.load(_checkpoint_path(directory, method, seed, m)) for m in range(num_mbs)]


def _write_csv(path: str, columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path


def _map_cells(function: Callable, cells: Sequence[tuple], workers: Optional[int]) -> list:
    """Run function(*cell) for every cell; results come back in cell order."""
    if not workers or workers <= 1 or len(cells) <= 1:
        return [function(*cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(function, *cell) for cell in cells]
        return [future.result() for future in futures]


def _write_manifest(output_dir: str, command: str, config: ExperimentConfig, files: Sequence[str]) -> str:
    """Single writer: called from the parent process once all cells are done."""
    path = os.path.join(output_dir, "manifest.json")
    manifest = {
        "command": command,
        "config_sha256": config_sha256(config),
        "versions": {
            "hric_iab_lab": hric_iab_lab.__version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "files": sorted(os.path.relpath(p, output_dir) for p in files),
    }
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    logger.info(f"Manifest written to {path}")
    return path


def _write_config_copy(output_dir: str, config: ExperimentConfig) -> str:
    path = os.path.join(output_dir, "config.yaml")
    with open(path, "w") as f:
        f.write(dump_config(config))
    return path


def _resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config, profile=args.profile)
    if args.provider is not None:
        config = replace(config, guidance=replace(config.guidance, provider=args.provider))
    overrides = {}
    methods = getattr(args, "methods", None)
    if methods:
        unknown = [m for m in methods if m not in METHODS]
        if unknown:
            raise UsageError(f"unknown methods {unknown}; expected any of {list(METHODS)}")
        overrides["methods"] = tuple(methods)
    seeds = getattr(args, "seeds", None)
    if seeds is None and getattr(args, "seed", None) is not None:
        seeds = [args.seed]
    if seeds:
        overrides["seeds"] = tuple(seeds)
    config = config.with_overrides(epochs=getattr(args, "epochs", None), **overrides)
    if args.output is not None:
        config = replace(config, output_dir=args.output)
    return config


def _train_cell(config: ExperimentConfig, method: str, seed: int,
                step_metrics: bool = False) -> Tuple[str, int, float, List[str]]:
    output_dir = config.output_dir
    training_config = config.training_config()
    audit = None
    if method in GUIDED_METHODS:
        audit_path = os.path.join(output_dir, "audit", f"{method}_seed{seed}.jsonl")
        if os.path.exists(audit_path):
            os.remove(audit_path)
        audit = GuidanceAuditLog(audit_path)
    files = []
    step_writer = None
    if step_metrics:
        step_path = os.path.join(output_dir, "steps", f"{method}_seed{seed}.csv")
        if os.path.exists(step_path):
            os.remove(step_path)
        step_writer = StepMetricsWriter(step_path)
        files.append(step_path)
    try:
        run = run_training(training_config, method, seed, audit=audit, step_writer=step_writer)
    finally:
        if step_writer is not None:
            step_writer.close()
    curve_path = os.path.join(output_dir, "curves", f"{method}_seed{seed}.csv")
    write_curves(curve_path, run)
    files.append(curve_path)
    if audit is not None and os.path.exists(audit.path):
        files.append(audit.path)
    for m, agent in enumerate(run.agents):
        path = _checkpoint_path(os.path.join(output_dir, "checkpoints"), method, seed, m)
        agent.save(path)
        files.append(path)
    return method, seed, final_window_median(run.records), files


def cli_train(args) -> int:
    config = _resolve_config(args)
    output_dir = config.output_dir
    subdirs = ("curves", "checkpoints", "audit") + (("steps",) if args.step_metrics else ())
    for sub in subdirs:
        os.makedirs(os.path.join(output_dir, sub), exist_ok=True)
    cells = [(config, method, seed, args.step_metrics) for method in config.methods for seed in config.seeds]
    logger.info(f"Training {len(cells)} cells ({len(config.methods)} methods x {len(config.seeds)} seeds), "
                f"{config.epochs} epochs each")
    results = _map_cells(_train_cell, cells, args.workers)

    files = [_write_config_copy(output_dir, config)]
    finals: Dict[str, List[float]] = {method: [] for method in config.methods}
    for method, _seed, final, cell_files in results:
        finals[method].append(final)
        files.extend(cell_files)
    rows = [[method, len(values), repr(float(np.median(values)))] for method, values in finals.items()]
    files.append(_write_csv(os.path.join(output_dir, "summary.csv"), SUMMARY_COLUMNS, rows))
    _write_manifest(output_dir, "train", config, files)
    for method, count, median in rows:
        print(f"{method:>10}  median final throughput {float(median) / 1e6:10.2f} Mb/s over {count} seeds")
    return 0


def _sweep_cell(config: ExperimentConfig, alpha: float, method: str, seed: int,
                checkpoint_dir: Optional[str]) -> Tuple[float, str, int, List[float]]:
    training_config = config.training_config()
    training_config = replace(training_config, network=training_config.network.with_alpha(alpha))
    if method == "epa":
        agents = []
    elif checkpoint_dir is not None:
        agents = _load_agents(checkpoint_dir, method, seed, config.scenario.num_mbs_M)
    else:
        agents = run_training(training_config, method, seed).agents
    provider = training_config.guidance.create_provider() if method in GUIDED_METHODS else None
    result = evaluate(agents, training_config, config.evaluation.drops, seed, provider=provider)
    return alpha, method, seed, result.episode_throughput


def _stderr(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def cli_sweep_alpha(args) -> int:
    config = _resolve_config(args)
    alphas = _parse_alphas(args.alphas) if args.alphas is not None else config.evaluation.alphas
    if args.drops is not None:
        if args.drops < 1:
            raise UsageError(f"--drops must be >= 1, got {args.drops}")
        config = replace(config, evaluation=replace(config.evaluation, drops=args.drops))
    os.makedirs(config.output_dir, exist_ok=True)
    cells = [(config, alpha, method, seed, args.checkpoints)
             for alpha in alphas for method in config.methods for seed in config.seeds]
    logger.info(f"Sweeping {len(alphas)} alphas x {len(config.methods)} methods x {len(config.seeds)} seeds, "
                f"{config.evaluation.drops} drops each")
    results = _map_cells(_sweep_cell, cells, args.workers)

    pooled: Dict[Tuple[float, str], List[float]] = {}
    for alpha, method, _seed, episodes in results:
        pooled.setdefault((alpha, method), []).extend(episodes)
    rows = [[repr(alpha), method, repr(float(np.mean(pooled[alpha, method]))), repr(_stderr(pooled[alpha, method]))]
            for alpha in alphas for method in config.methods]
    path = _write_csv(os.path.join(config.output_dir, "sweep_alpha.csv"), SWEEP_COLUMNS, rows)
    _write_manifest(config.output_dir, "sweep-alpha", config, [path, _write_config_copy(config.output_dir, config)])
    return 0


def cli_evaluate(args) -> int:
    config = _resolve_config(args)
    if args.drops is not None:
        if args.drops < 1:
            raise UsageError(f"--drops must be >= 1, got {args.drops}")
        config = replace(config, evaluation=replace(config.evaluation, drops=args.drops))
    checkpoint_dir = args.checkpoints or os.path.join(config.output_dir, "checkpoints")
    training_config = config.training_config()
    alpha = config.scenario.backhaul_fraction_alpha
    os.makedirs(config.output_dir, exist_ok=True)
    rows = []
    for method in config.methods:
        for seed in config.seeds:
            agents = _load_agents(checkpoint_dir, method, seed, config.scenario.num_mbs_M)
            provider = config.guidance.create_provider() if method in GUIDED_METHODS else None
            result = evaluate(agents, training_config, config.evaluation.drops, seed, provider=provider)
            rows.extend([method, seed, episode, repr(alpha), repr(value)]
                        for episode, value in enumerate(result.episode_throughput))
            print(f"{method:>10} seed {seed}: {result.mean_total_throughput / 1e6:10.2f} Mb/s")
    path = _write_csv(os.path.join(config.output_dir, "evaluation.csv"), EVALUATION_COLUMNS, rows)
    _write_manifest(config.output_dir, "evaluate", config, [path, _write_config_copy(config.output_dir, config)])
    return 0


def _time_calls(call: Callable[[], object], samples: int) -> List[float]:
    latencies = []
    for _ in range(samples):
        start = time.perf_counter()
        call()
        latencies.append(time.perf_counter() - start)
    return latencies


def latency_summary(latencies: Sequence[float]) -> Tuple[float, float, float]:
    """(min, median, p99) of a latency sample in seconds."""
    values = np.asarray(latencies, dtype=float)
    return float(values.min()), float(np.median(values)), float(np.percentile(values, 99))


def cli_bench(args) -> int:
    config = _resolve_config(args)
    samples = args.samples if args.samples is not None else config.evaluation.bench_samples
    if samples < 1:
        raise UsageError(f"--samples must be >= 1, got {samples}")
    network = config.scenario
    seed = config.seeds[0]
    if args.checkpoint:
        agent = DdpgAgent.load(args.checkpoint)
    else:
        agent = DdpgAgent(4 * network.num_sbs_per_mbs_N, network.num_sbs_per_mbs_N, config.agent, seed=seed)
    env = IabEnvironment(network, seed)
    state = encode_state(env.observations[0], network)
    timings = {"agent": _time_calls(lambda: actor_forward(agent.actor, state), samples)}

    if args.guidance:
        provider = config.guidance.create_provider()
        guidance_input = env.observation_statistics(1)
        timings["guidance"] = _time_calls(
            lambda: guidance_with_fallback(guidance_input, provider, network, config.guidance.bounds), samples)

    os.makedirs(config.output_dir, exist_ok=True)
    rows, summary_rows, report = [], [], []
    for component, latencies in timings.items():
        rows.extend([component, i, repr(value)] for i, value in enumerate(latencies))
        low, median, p99 = latency_summary(latencies)
        summary_rows.append([component, len(latencies), repr(low), repr(median), repr(p99)])
        report.append(f"{component:>9}: min {low * 1e3:.4f} ms  median {median * 1e3:.4f} ms  "
                      f"p99 {p99 * 1e3:.4f} ms  ({len(latencies)} samples)")
    report.append(BENCH_FOOTNOTE)
    files = [
        _write_csv(os.path.join(config.output_dir, "latency.csv"), LATENCY_COLUMNS, rows),
        _write_csv(os.path.join(config.output_dir, "latency_summary.csv"), LATENCY_SUMMARY_COLUMNS, summary_rows),
    ]
    report_path = os.path.join(config.output_dir, "bench_report.txt")
    with open(report_path, "w") as f:
        f.write("\n".join(report) + "\n")
    files.append(report_path)
    _write_manifest(config.output_dir, "bench", config, files)
    print("\n".join(report))
    return 0


def _describe_link(label: str, link: LinkGain, tx_power_w: float) -> str:
    return (f"{label}: large-scale {linear_to_db(link.large_scale_gain_linear):.1f} dB, "
            f"fading {link.fading_gain_linear:.3f}, {'LoS' if link.is_los else 'NLoS'}, "
            f"rx {watts_to_dbm(tx_power_w * link.combined):.1f} dBm")


def _link_report(env: IabEnvironment) -> List[str]:
    """Serving links of the current snapshot; backhaul power assumes the uniform split."""
    network = env.config
    num_mbs, num_sbs, num_users = network.shape
    backhaul_w = dbm_to_watts(network.mbs_max_power_dbm) / num_sbs
    access_w = dbm_to_watts(network.sbs_access_power_dbm)
    lines = []
    for m in range(num_mbs):
        for n in range(num_sbs):
            lines.append(_describe_link(f"MBS{m + 1} -> SBS{n + 1}", env.snapshot.backhaul_link(m, m, n), backhaul_w))
            for k in range(num_users):
                lines.append(_describe_link(f"  SBS{n + 1} -> user{k + 1}", env.snapshot.access_link(m, m, n, k),
                                            access_w))
    return lines


def cli_guidance_dry_run(args) -> int:
    config = _resolve_config(args)
    network = config.scenario
    env = IabEnvironment(network, args.seed if args.seed is not None else config.seeds[0])
    guidance_input = env.observation_statistics(1)
    report = validate_input(guidance_input, config.guidance.bounds)
    if not report.accepted:
        logger.warning(f"Synthetic input would be rejected before any request: {report.describe()}")
    print(build_prompt(guidance_input, network), end="")
    if args.show_heuristic:
        print("\n# heuristic response")
        print(serialize_policy(heuristic_guidance(guidance_input)))
    if args.show_links:
        print("\n# serving links")
        print("\n".join(_link_report(env)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment file (defaults apply when omitted)")
    common.add_argument("--output", help="Output directory (overrides output_dir)")
    common.add_argument("--provider", choices=["heuristic", "endpoint"], help="Guidance provider")
    common.add_argument("--profile", choices=["desk", "paper"], help="Default profile")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    seeds = argparse.ArgumentParser(add_help=False)
    group = seeds.add_mutually_exclusive_group()
    group.add_argument("--seed", type=int, help="Single seed")
    group.add_argument("--seeds", type=int, nargs="+", help="Seed list")
    seeds.add_argument("--methods", nargs="+", choices=list(METHODS), help="Methods to run")
    seeds.add_argument("--workers", type=int, help="Process pool size for independent cells")

    parser = argparse.ArgumentParser(prog="hric-lab", description="LLM-guided hierarchical RIC lab for IAB power "
                                                                   "allocation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {hric_iab_lab.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", parents=[common, seeds], help="Train methods and write curves")
    train.add_argument("--epochs", type=int, help="Total epochs (phases rescaled 20/50/30)")
    train.add_argument("--step-metrics", action="store_true", help="Also write steps/<method>_seed<s>.csv, one row "
                                                                   "per MBS per slot")
    train.set_defaults(handler=cli_train)

    sweep = sub.add_parser("sweep-alpha", parents=[common, seeds], help="Throughput across the alpha grid")
    sweep.add_argument("--alphas", help="Comma-separated grid, e.g. 0.1,0.3,0.5")
    sweep.add_argument("--drops", type=int, help="Test drops per cell")
    sweep.add_argument("--epochs", type=int, help="Training epochs when no checkpoints are given")
    sweep.add_argument("--checkpoints", help="Directory of checkpoints from train")
    sweep.set_defaults(handler=cli_sweep_alpha)

    evaluate_parser = sub.add_parser("evaluate", parents=[common, seeds], help="Evaluate train checkpoints")
    evaluate_parser.add_argument("--drops", type=int, help="Test drops per (method, seed)")
    evaluate_parser.add_argument("--checkpoints", help="Checkpoint directory (default <output>/checkpoints)")
    evaluate_parser.set_defaults(handler=cli_evaluate)

    bench = sub.add_parser("bench", parents=[common, seeds], help="Inference latency bench")
    bench.add_argument("--samples", type=int, help="Timed calls per component")
    bench.add_argument("--checkpoint", help="Agent checkpoint to time (fresh agent when omitted)")
    bench.add_argument("--guidance", action="store_true", help="Also time guidance pipeline cycles")
    bench.set_defaults(handler=cli_bench)

    dry_run = sub.add_parser("guidance-dry-run", parents=[common], help="Print the guidance prompt only")
    dry_run.add_argument("--seed", type=int, help="Drop seed")
    dry_run.add_argument("--show-heuristic", action="store_true", help="Also print the heuristic response")
    dry_run.add_argument("--show-links", action="store_true", help="Also print the serving link gains of the drop")
    dry_run.set_defaults(handler=cli_guidance_dry_run)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        return args.handler(args)
    except (ConfigError, UsageError) as e:
        logger.error(f"Configuration error: {e}")
        return 2
    except (OSError, AgentError, GuidanceError, EnvironmentContractError, TrainerContractError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
