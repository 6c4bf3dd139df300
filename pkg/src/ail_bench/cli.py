"""cli.py

``ail-bench`` command line: generate experts, train one config, run sweeps,
analyse and report.

    ail-bench expert --env point-reach-v0 --out demos/point.csv
    ail-bench train --env point-reach-v0 --demos demos/point.csv --preset best --steps 100000
    ail-bench sweep --space main --demos demos/point.csv --n 100 --jobs 4 --out results.jsonl
    ail-bench analyze --results results.jsonl --choice gailreward --out report/
    ail-bench report --results results.jsonl --out report/

Relative paths are resolved against ``--workdir``. Exit codes: 0 success,
1 usage or configuration error, 2 runtime or numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError

from ail_bench.analysis import AnalysisQuery, conditional_percentile, top_fraction_ratio
from ail_bench.config import PRESETS, ChoiceConfig, parse_scalar, resolve_config
from ail_bench.demos import (DEFAULT_STRIDE, DEFAULT_TRAJECTORIES, EXPERT_STEPS, ReferenceScores, generate_expert,
                             load_demos, load_refs, random_policy_return, save_demos, save_refs, subsample)
from ail_bench.errors import AilBenchError, ConfigurationError, DemoFormatError, NumericError, RunError
from ail_bench.report import emit_report
from ail_bench.run_log import append_record, load_records
from ail_bench.sweep import SHIPPED_SPACES, SweepPlan, TaskBinding, load_space_file, run_sweep
from ail_bench.trainer import AilTrainer

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2

# Charts produced by ``report`` when no --choice is given.
REPORT_CHOICES = ("directrlalgorithm", "gailreward", "regularizer", "explicitabsorbingstate",
                  "obsnormalization", "gailinput", "gaildiscriminatorlearningrate", "pretrainwithbc")


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _path(args, p: Optional[str]) -> Optional[str]:
    if p is None or os.path.isabs(p):
        return p
    return os.path.join(args.workdir, p)


def _overrides(pairs: Sequence[str]) -> Dict[str, Any]:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigurationError(f"--set expects key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = parse_scalar(v)
    return out


def print_config(config: ChoiceConfig, out=None) -> None:
    out = out or sys.stdout
    print("# resolved config", file=out)
    for k, v in sorted(config.to_flat().items()):
        print(f"{k}={v}", file=out)


def _maybe_refs(demos_path: str) -> Optional[ReferenceScores]:
    try:
        return load_refs(demos_path)
    except DemoFormatError as e:
        logger.warning("scores stay unnormalized: %s", e)
        return None


def cmd_expert(args) -> int:
    out = _path(args, args.out or os.path.join("demos", f"{args.env}.csv"))
    config = resolve_config(args.preset, _path(args, args.config), _overrides(args.set))
    print_config(config)
    checkpoint = f"{out}.expert.ckpt"
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    demos = generate_expert(args.env, config, n_trajectories=args.n, seed=args.seed, total_env_steps=args.steps,
                            checkpoint_path=checkpoint, progress=True)
    save_demos(subsample(demos, args.stride), out)
    refs = ReferenceScores(env_id=args.env, random_return=random_policy_return(args.env, seed=args.seed),
                           expert_return=demos.expert_return)
    save_refs(refs, out)
    print(f"demos={out} trajectories={len(demos.trajectories)} expert_return={refs.expert_return:.3f} "
          f"random_return={refs.random_return:.3f}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.steps < 1:
        raise ConfigurationError("--steps must be >= 1; a run without steps has an empty curve")
    demos_path = _path(args, args.demos)
    config = resolve_config(args.preset, _path(args, args.config), _overrides(args.set))
    print_config(config)
    demos = load_demos(demos_path)
    trainer = AilTrainer(config, args.env, demos, args.steps, seed=args.seed, refs=_maybe_refs(demos_path),
                         demos_label=os.path.basename(demos_path), progress=True)
    record = trainer.run()
    append_record(_path(args, args.out), record)
    for step, value in record.eval_curve:
        print(f"step={step} score={value:.4f}")
    if record.status == "failed":
        print(f"run failed: {record.error}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"final_score={record.final_score:.4f} average_score={record.average_score:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    space_file = load_space_file(args.space if args.space in SHIPPED_SPACES else _path(args, args.space))
    tasks = []
    for p in args.demos:
        path = _path(args, p)
        tasks.append(TaskBinding(load_demos(path).env_id, path))
    plan = SweepPlan.from_space_file(space_file, args.n, tasks, seeds=args.seeds, total_env_steps=args.steps,
                                     fixed=_overrides(args.set), sample_seed=args.sample_seed)
    print(f"# space={args.space} configs={plan.n_configs} tasks={len(tasks)} seeds={list(plan.seeds)} "
          f"steps={plan.total_env_steps}")
    for config in plan.configs():
        print_config(config)
    records = run_sweep(plan, _path(args, args.out), parallelism=args.jobs, progress=True)
    failed = sum(r.status == "failed" for r in records)
    print(f"appended={len(records)} failed={failed}")
    return EXIT_OK


def _query(args, choice: str, by: Optional[str] = None) -> AnalysisQuery:
    try:
        return AnalysisQuery(choice=choice, by=by, metric=args.metric, percentile=args.percentile,
                             top_fraction=args.top_fraction, repeats=args.repeats, pooled=args.pooled)
    except ValidationError as e:
        raise ConfigurationError(str(e)) from e


def cmd_analyze(args) -> int:
    records = load_records(_path(args, args.results))
    query = _query(args, args.choice, args.by)
    if args.by is None:
        estimates = conditional_percentile(records, query)
        ratios = top_fraction_ratio(records, query)
        print(f"{'value':>20} {'estimate':>9} {'std':>7} {'count':>6} {'top_ratio':>9}")
        for v, e in estimates.items():
            print(f"{str(v):>20} {e.estimate:9.4f} {e.std:7.4f} {e.count:6d} {ratios.get(v, float('nan')):9.3f}")
    emit_report(records, [query], _path(args, args.out))
    return EXIT_OK


def cmd_report(args) -> int:
    records = load_records(_path(args, args.results))
    queries: List[AnalysisQuery] = []
    if any(r.status == "ok" for r in records):
        present = {k for r in records for k in r.config}
        choices = args.choice or [c for c in REPORT_CHOICES if c in present]
        queries = [_query(args, c) for c in choices]
    paths = emit_report(records, queries, _path(args, args.out))
    print(f"report={paths[-1]}")
    return EXIT_OK


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), default="best", help="starting config (default: best)")
    p.add_argument("--config", default=None, help="key=value config file layered over the preset")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one choice")


def _add_analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--results", default="results.jsonl", help="results file (default: results.jsonl)")
    p.add_argument("--metric", choices=["average_score", "final_score"], default="average_score")
    p.add_argument("--percentile", type=float, default=95.0)
    p.add_argument("--top-fraction", type=float, default=0.05)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--pooled", action="store_true", help="pool tasks instead of averaging per task")
    p.add_argument("--out", default="report", help="output directory (default: report)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ail-bench", description="Adversarial imitation learning workbench")
    ap.add_argument("--workdir", default=".", help="base for relative paths (default: .)")
    ap.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("expert", help="train an expert and write demonstrations")
    p.add_argument("--env", required=True)
    p.add_argument("--out", default=None, help="demo file (default: demos/<env>.csv)")
    p.add_argument("--n", type=int, default=DEFAULT_TRAJECTORIES, help="trajectories (default: 11)")
    p.add_argument("--stride", type=int, default=DEFAULT_STRIDE, help="subsampling stride (default: 20)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=EXPERT_STEPS, help="expert training steps")
    _add_config_flags(p)
    p.set_defaults(handler=cmd_expert)

    p = sub.add_parser("train", help="train one config and append its record")
    p.add_argument("--env", required=True)
    p.add_argument("--demos", required=True)
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results.jsonl")
    _add_config_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("sweep", help="sample configs from a space and train them")
    p.add_argument("--space", default="main", help="wide, main, tradeoffs or a space file (default: main)")
    p.add_argument("--demos", action="append", required=True, help="demo file; repeat for several tasks")
    p.add_argument("--n", type=int, required=True, help="configs to sample")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--steps", type=int, default=None, help="step budget (default: the space file's)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default: 1)")
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="fix one choice in every run")
    p.add_argument("--out", default="results.jsonl")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("analyze", help="conditional percentile and top-fraction ratio of one choice")
    p.add_argument("--choice", required=True)
    p.add_argument("--by", default=None, help="second choice for a two-way grid")
    _add_analysis_flags(p)
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("report", help="charts for several choices plus quantile tables")
    p.add_argument("--choice", action="append", default=None, help="choice to chart; repeatable")
    _add_analysis_flags(p)
    p.set_defaults(handler=cmd_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")
    try:
        return args.handler(args)
    except (ConfigurationError, DemoFormatError, FileNotFoundError) as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, RunError) as e:
        logger.error("%s diagnostics=%s", e, e.diagnostics)
        print(f"failed: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except AilBenchError as e:
        print(f"failed: {e}", file=sys.stderr)
        return EXIT_FAILURE


def cli():
    sys.exit(main())


if __name__ == "__main__":
    cli()
