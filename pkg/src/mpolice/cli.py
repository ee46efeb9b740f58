"""Command-line front end: run scenarios, sweep parameters, validate files.

Every run leaves a self-describing output directory (metrics.csv,
slr.csv, links.csv, summary.csv, run.meta). Sweeps fan combinations out
to a process pool and write a ratio table normalized against a run with
the scenario's own defaults.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .metrics import FORMAT_TAG, summarize, write_metrics
from .scenario import ScenarioError, bundled_scenarios, load_scenario
from .simnet.engine import run_scenario

# short spellings for the knobs people sweep most
PARAM_ALIASES = {
    "d_p": "policer.d_p_s",
    "th_cap": "policer.th_cap",
    "th_rtt": "policer.th_rtt_s",
    "th_slr_drop": "policer.th_slr_drop",
    "beta": "policer.beta",
    "th_lpass": "policer.th_lpass",
    "s_slr": "policer.s_slr",
}

_SWEEP_FIELDS = ("mean_window_norm:client", "mean_window_norm:attacker",
                 "jain_fairness")


def _canon(setting: str) -> str:
    key, sep, value = setting.partition("=")
    key = key.strip()
    return f"{PARAM_ALIASES.get(key, key)}{sep}{value.strip()}"


def _load(args, extra: Optional[List[str]] = None):
    overrides = [_canon(item) for item in (args.param or [])]
    overrides.extend(extra or [])
    return load_scenario(args.scenario, overrides=overrides,
                         seed=args.seed, duration_s=args.duration)


# ------------------------------------------------------------------ commands


def cmd_run(args) -> int:
    if args.sweep:
        return cmd_sweep(args)
    scenario = _load(args)
    result = run_scenario(scenario)
    out = Path(args.out)
    write_metrics(result, out, scenario=scenario)
    summary = summarize(result)
    print(f"{scenario.name}: seed {result.seed}, "
          f"{result.duration_s:g} s, {result.events} events")
    for key in ("jain_fairness", "mean_rate_mbps:client",
                "mean_rate_mbps:attacker", "window_ratio_attacker_client"):
        if key in summary:
            print(f"  {key} = {summary[key]:.4f}")
    print(f"  wrote {out / 'metrics.csv'}")
    return 0


def _job(ref, overrides, seed, duration, out_dir):
    """One sweep cell; must stay importable for the process pool."""
    try:
        scenario = load_scenario(ref, overrides=overrides, seed=seed,
                                 duration_s=duration)
        result = run_scenario(scenario)
        write_metrics(result, out_dir, scenario=scenario)
        summary = summarize(result)
        return {key: summary.get(key) for key in _SWEEP_FIELDS}
    except BaseException:
        shutil.rmtree(out_dir, ignore_errors=True)
        raise


def cmd_sweep(args) -> int:
    if not args.sweep:
        print("sweep: at least one --sweep param=v1,v2,... required",
              file=sys.stderr)
        return 2
    specs: List[Tuple[str, str, List[str]]] = []
    for item in args.sweep:
        key, sep, values = item.partition("=")
        key = key.strip()
        if not sep or not values.strip():
            print(f"sweep: malformed spec {item!r}, expected "
                  "param=v1,v2,...", file=sys.stderr)
            return 2
        path = PARAM_ALIASES.get(key, key)
        specs.append((key, path, [v.strip() for v in values.split(",")]))

    base = [_canon(item) for item in (args.param or [])]
    _load(args)                     # fail fast before any worker starts
    out = Path(args.out)
    jobs = [("default", base)]
    for combo in itertools.product(*(values for _, _, values in specs)):
        label = "_".join(f"{key}-{value}"
                         for (key, _, _), value in zip(specs, combo))
        overrides = base + [f"{path}={value}"
                            for (_, path, _), value in zip(specs, combo)]
        jobs.append((label, overrides))

    workers = min(len(jobs), os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_job, args.scenario, overrides, args.seed,
                               args.duration, out / label)
                   for label, overrides in jobs]
        cells = [f.result() for f in futures]

    ref = cells[0]
    table = out / "sweep.csv"
    tmp = table.with_suffix(".csv.tmp")
    with open(tmp, "w", newline="\n") as fh:
        fh.write(FORMAT_TAG + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        keys = [key for key, _, _ in specs]
        writer.writerow(keys + ["client_window", "attacker_window",
                                "jain_fairness", "client_window_ratio",
                                "attacker_window_ratio"])
        labels = ["default"] + ["" for _ in cells[1:]]
        combos = [("default",) * len(keys)]
        combos += list(itertools.product(*(values
                                           for _, _, values in specs)))
        for combo, cell in zip(combos, cells):
            row = list(combo)
            for field in _SWEEP_FIELDS:
                value = cell.get(field)
                row.append("" if value is None else repr(value))
            for field in ("mean_window_norm:client",
                          "mean_window_norm:attacker"):
                value, base_value = cell.get(field), ref.get(field)
                if value is None or not base_value:
                    row.append("")
                else:
                    row.append(repr(value / base_value))
            writer.writerow(row)
    os.replace(tmp, table)
    print(f"swept {len(jobs) - 1} settings + default; wrote {table}")
    return 0


def cmd_validate(args) -> int:
    scenario = _load(args)
    groups = ", ".join(f"{g.name} x{g.count}" for g in scenario.senders)
    print(f"{scenario.name}: ok ({scenario.duration_s:g} s, seed "
          f"{scenario.seed}, senders: {groups})")
    return 0


def cmd_list(args) -> int:
    for name, description in bundled_scenarios():
        print(f"{name:28s} {description}")
    return 0


# -------------------------------------------------------------------- parser


def _add_common(sub, scenario_required=True):
    sub.add_argument("--scenario", required=scenario_required,
                     help="bundled scenario name or path to a .scn file")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--duration", type=float, default=None,
                     help="override duration_s")
    sub.add_argument("--param", action="append", metavar="K=V",
                     help="override one scenario key (repeatable), "
                          "e.g. policer.beta=0.5 or d_p=2")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpolice",
        description="deterministic simulator for capability-feedback "
                    "traffic policing")
    subs = parser.add_subparsers(dest="command", required=True)

    run = subs.add_parser("run", help="run one scenario, write metrics")
    _add_common(run)
    run.add_argument("--out", "-o", default="out")
    run.add_argument("--sweep", action="append", metavar="K=V1,V2,...",
                     help="shortcut for the sweep command")
    run.set_defaults(func=cmd_run)

    sweep = subs.add_parser("sweep",
                            help="grid of runs, ratios vs the defaults")
    _add_common(sweep)
    sweep.add_argument("--out", "-o", default="out")
    sweep.add_argument("--sweep", action="append", metavar="K=V1,V2,...",
                       required=True)
    sweep.set_defaults(func=cmd_sweep)

    val = subs.add_parser("validate", help="parse and check a scenario")
    _add_common(val)
    val.set_defaults(func=cmd_validate)

    lst = subs.add_parser("list-scenarios", help="show bundled scenarios")
    lst.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as err:
        for line in err.errors:
            print(f"scenario error: {line}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
