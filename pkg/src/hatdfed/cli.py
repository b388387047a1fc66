"""Command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure,
3 sweep finished with some (not all) runs failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import oracles, reporting
from .config import PRESETS, ConfigError, SimConfig, resolve_config, validate_config
from .simulation import STRATEGIES, run_simulation

log = logging.getLogger("hatdfed")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3
SWEEP_PARAMETERS = ("alpha", "beta", "gamma", "lambda_dir", "rho")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for runtime failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    repeats: int = 5
    base_config: str = "table1-desk"
    strategy: str = "hat_dfed"

    def validate(self, base: SimConfig) -> List[str]:
        problems = []
        if self.parameter not in SWEEP_PARAMETERS:
            problems.append(f"parameter must be one of {', '.join(SWEEP_PARAMETERS)}, got {self.parameter!r}")
        if not self.values:
            problems.append("values must be a non-empty list")
        if self.repeats < 1:
            problems.append("repeats must be at least 1")
        if self.strategy not in STRATEGIES:
            problems.append(f"strategy must be one of {', '.join(STRATEGIES)}")
        if not problems:
            for v in self.values:
                problems.extend(f"{self.parameter}={v}: {p}" for p in validate_config(base.replace(**{self.parameter: v})))
        return problems


def load_sweep_spec(path: Path) -> SweepSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read sweep spec {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    allowed = {"parameter", "values", "repeats", "base_config", "strategy"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    if "parameter" not in data or "values" not in data:
        raise ConfigError(f"{path}: 'parameter' and 'values' are required")
    base = data.get("base_config", "table1-desk")
    if base not in PRESETS and not Path(base).is_absolute():
        base = str(Path(path).parent / base)
    return SweepSpec(parameter=data["parameter"], values=tuple(float(v) for v in data["values"]),
                     repeats=int(data.get("repeats", 5)), base_config=base,
                     strategy=data.get("strategy", "hat_dfed"))


def _config(source: str, seed: Optional[int]) -> SimConfig:
    cfg = resolve_config(source)
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    problems = validate_config(cfg)
    if problems:
        raise ConfigError(f"{source}: " + "; ".join(problems))
    return cfg


# ---------------------------------------------------------------- commands

def cmd_run(args) -> int:
    cfg = _config(args.config, args.seed)
    summary = run_simulation(cfg, args.strategy, workers=args.workers)
    out = Path(args.out)
    reporting.write_run_outputs(summary, out, extra={"seed": cfg.seed}, debug_agg=args.debug_agg)
    if args.chart:
        reporting.render_chart(*reporting.read_rounds_csv(out / "rounds.csv"), out / "chart.svg",
                               title=f"{args.strategy} seed {cfg.seed}")
    print(f"{args.strategy}: avg_acc={summary.avg_acc:.4f} var_acc={summary.var_acc:.5f} "
          f"tot_cost={summary.tot_cost_mj:.4f} MJ mt_cost={summary.mt_cost_mj:.4f} MJ -> {out}")
    return EXIT_OK


def _sweep_job(job):
    cfg, strategy, run_dir = job
    try:
        summary = run_simulation(cfg, strategy)
        reporting.write_run_outputs(summary, run_dir, extra={"seed": cfg.seed})
        return summary.as_dict(), None
    except Exception as exc:  # one failing run must not stop the sweep
        return None, f"{type(exc).__name__}: {exc}"


def cmd_sweep(args) -> int:
    spec = load_sweep_spec(args.spec)
    base = _config(spec.base_config, args.seed)
    problems = spec.validate(base)
    if problems:
        raise ConfigError(f"{args.spec}: " + "; ".join(problems))
    out = Path(args.out)
    jobs, keys = [], []
    for v in spec.values:
        for r in range(spec.repeats):
            cfg = base.replace(**{spec.parameter: v, "seed": base.seed + r})
            jobs.append((cfg, spec.strategy, out / f"{spec.parameter}={v:g}" / f"rep{r}"))
            keys.append((v, r, cfg.seed))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]

    out.mkdir(parents=True, exist_ok=True)
    run_rows, failures = [], 0
    for (v, r, seed), (res, err) in zip(keys, results):
        if err:
            failures += 1
            log.error("%s=%g repeat %d failed: %s", spec.parameter, v, r, err)
            run_rows.append([spec.parameter, v, r, seed, f"error: {err}"] + [""] * 6)
        else:
            run_rows.append([spec.parameter, v, r, seed, "ok", res["avg_acc"], res["var_acc"], res["best_acc"],
                             res["worst_acc"], res["tot_cost_MJ"], res["mt_cost_MJ"]])
    reporting._write(out / "sweep_runs.csv", reporting.SWEEP_RUNS_COLUMNS, run_rows)
    summary_rows = []
    for v in spec.values:
        ok = [row for row in run_rows if row[1] == v and row[4] == "ok"]
        if not ok:
            summary_rows.append([spec.parameter, v, 0] + [""] * 6)
            continue
        cols = np.array([[row[5], row[9], row[10]] for row in ok], dtype=float)
        mean, std = cols.mean(axis=0), cols.std(axis=0)
        summary_rows.append([spec.parameter, v, len(ok), mean[0], std[0], mean[1], std[1], mean[2], std[2]])
    reporting._write(out / "sweep_summary.csv", reporting.SWEEP_SUMMARY_COLUMNS, summary_rows)
    for row in summary_rows:
        if row[2]:
            print(f"{spec.parameter}={row[1]:g}: avg_acc={row[3]:.4f}±{row[4]:.4f} tot_cost={row[5]:.4f} MJ "
                  f"({row[2]} runs)")
    if failures == len(jobs):
        return EXIT_RUNTIME
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_bandit_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.table:
        try:
            env = oracles.load_utility_table(args.table)
        except OSError as exc:
            raise ConfigError(f"cannot read utility table {args.table}: {exc.strerror}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        n_links = args.servers * (args.servers - 1)
        if args.m > n_links:
            raise ConfigError(f"m={args.m} exceeds the {n_links} links of {args.servers} servers")
        try:
            env = oracles.make_env(args.generator, args.rounds, n_links, args.m, rng,
                                   hi=args.hi, lo=args.lo, noise=args.noise)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if args.m > env.n_links or args.m < 1:
        raise ConfigError(f"m={args.m} must lie in [1, {env.n_links}]")
    if args.eta is not None and not 0 < args.eta <= 1:
        raise ConfigError("eta must lie in (0, 1]")
    run = oracles.empirical_regret(env, args.m, eta=args.eta, rng=rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reporting.write_regret_csv(run, out / "regret.csv")
    line = reporting.write_bound_csv(run, out / "bound.csv")
    first, second = run.split_regret()
    print(f"{env.generator}: {line} first_half={first:.3f} second_half={second:.3f}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    rounds_csv = run_dir / "rounds.csv"
    if not rounds_csv.exists():
        raise ConfigError(f"no rounds.csv in {run_dir}")
    target = Path(args.output) if args.output else run_dir / "chart.svg"
    title = run_dir.name
    summary = run_dir / "summary.json"
    if summary.exists():
        data = json.loads(summary.read_text())
        title = f"{data.get('strategy', '')} avg_acc {data.get('avg_acc', 0):.4f} tot {data.get('tot_cost_MJ', 0):.3f} MJ"
    reporting.render_chart(*reporting.read_rounds_csv(rounds_csv), target, title=title)
    print(f"wrote {target}")
    return EXIT_OK


def cmd_validate(args) -> int:
    status = EXIT_OK
    for source in args.configs:
        try:
            cfg = resolve_config(source)
        except ConfigError as exc:
            print(exc, file=sys.stderr)
            status = EXIT_USAGE
            continue
        problems = validate_config(cfg)
        if problems:
            status = EXIT_USAGE
            for p in problems:
                print(f"{source}: {p}", file=sys.stderr)
        else:
            print(f"{source}: ok")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hatdfed", description="Energy-aware decentralized FL simulator with bandit topology.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one simulation")
    p.add_argument("--config", default="table1-desk", help=f"preset ({', '.join(PRESETS)}) or JSON config path")
    p.add_argument("--strategy", choices=STRATEGIES, default="hat_dfed")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1, help="threads for per-server work")
    p.add_argument("--debug-agg", action="store_true", help="also write aggregation.csv")
    p.add_argument("--chart", action="store_true", help="also write chart.svg")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sensitivity sweep over one parameter")
    p.add_argument("spec")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="base seed; repeat r uses seed + r")
    p.add_argument("--jobs", type=int, default=1, help="concurrent runs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bandit-bench", help="regret of the link selector on a utility table")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--table", help="flat text utility table, one round per line")
    src.add_argument("--generator", choices=oracles.GENERATORS, default="fixed-gap")
    p.add_argument("--servers", type=int, default=5)
    p.add_argument("--rounds", type=int, default=1000)
    p.add_argument("--m", type=int, default=6)
    p.add_argument("--eta", type=float, default=None, help="defaults to the tuned step size")
    p.add_argument("--hi", type=float, default=0.7)
    p.add_argument("--lo", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bandit_bench)

    p = sub.add_parser("report", help="re-render the chart from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate", help="lint configs")
    p.add_argument("configs", nargs="+")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
