"""Run artifacts: CSV tables, summary statistics, lossless round trips.

Everything a run produces is plain text. Floats are written with repr()
so parsing a file back recovers bit-identical values, and every file
goes through a temp-and-rename so readers never observe a partial
table. The reproducibility bar is byte identity: the same scenario and
seed must yield the same metrics.csv on any platform.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from pathlib import Path
from typing import Dict, List, Optional

FORMAT_TAG = "# mpolice-metrics v1"

PERIOD_COLUMNS = ("time_ms", "mbox", "sender", "as_id", "role", "period",
                  "w_r", "w_r_next", "n_r", "n_d", "llr", "recent_loss",
                  "delivered_pkts", "delivered_bytes", "window_pkts",
                  "window_norm")
SLR_COLUMNS = ("mbox", "cycle", "time_ms", "slr")
LINK_COLUMNS = ("link", "injected", "delivered", "dropped", "lost")

_FLOAT_COLUMNS = {"llr", "recent_loss", "window_norm", "slr"}
_STR_COLUMNS = {"sender", "role", "link", "key", "value"}


def window_size(w_r: int, delivered: int) -> int:
    """Effective window for one period: the grant or the observed
    delivery, whichever is larger (a sender can beat its grant on the
    best-effort queue)."""
    return w_r if w_r >= delivered else delivered


def jains_index(values) -> Optional[float]:
    """(sum x)^2 / (n * sum x^2), or None when every value is zero."""
    xs = list(values)
    square = math.fsum(x * x for x in xs)
    if not xs or square == 0.0:
        return None
    total = math.fsum(xs)
    return total * total / (len(xs) * square)


def _mean(xs) -> float:
    return math.fsum(xs) / len(xs)


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _atomic_write(path: Path, write_body) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    # explicit newline so the bytes match across platforms
    with open(tmp, "w", newline="\n") as fh:
        write_body(fh)
    os.replace(tmp, path)


def _write_table(path: Path, columns, rows) -> None:
    def body(fh):
        fh.write(FORMAT_TAG + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])

    _atomic_write(path, body)


def summarize(result) -> Dict[str, object]:
    """Flat key/value digest of one run.

    Rates and windows are averaged over the final half of the run so
    ramp-up does not wash out the steady state. Only senders policed by
    a box enter the fairness column; direct cross traffic is background.
    """
    half_ms = result.duration_s * 500.0
    span_s = result.duration_s / 2.0
    policed = [info for info in result.senders.values()
               if info.route == "mbox"]
    bytes_half = {info.name: 0 for info in policed}
    window_pkts: Dict[str, List[int]] = {}
    window_norm: Dict[str, List[float]] = {}
    for row in result.period_rows:
        if row.time_ms <= half_ms:
            continue
        if row.sender in bytes_half:
            bytes_half[row.sender] += row.delivered_bytes
        window_pkts.setdefault(row.role, []).append(row.window_pkts)
        window_norm.setdefault(row.role, []).append(row.window_norm)

    out: Dict[str, object] = {
        "scenario": result.scenario_name,
        "seed": result.seed,
        "duration_s": result.duration_s,
        "senders": len(result.senders),
        "period_rows": len(result.period_rows),
    }
    rates: Dict[str, float] = {}
    role_rates: Dict[str, List[float]] = {}
    for info in policed:
        rate = bytes_half[info.name] * 8.0 / 1e6 / span_s
        rates[info.name] = rate
        role_rates.setdefault(info.role, []).append(rate)
        out[f"rate_mbps:{info.name}"] = rate
    fi = jains_index(rates.values())
    if fi is not None:
        out["jain_fairness"] = fi
    for role in sorted(role_rates):
        out[f"mean_rate_mbps:{role}"] = _mean(role_rates[role])
    for role in sorted(window_pkts):
        out[f"mean_window_pkts:{role}"] = _mean(window_pkts[role])
        out[f"mean_window_norm:{role}"] = _mean(window_norm[role])
    att, cli = role_rates.get("attacker"), role_rates.get("client")
    if att and cli and _mean(cli) > 0:
        out["rate_ratio_attacker_client"] = _mean(att) / _mean(cli)
    att_w, cli_w = window_norm.get("attacker"), window_norm.get("client")
    if att_w and cli_w and _mean(cli_w) > 0:
        out["window_ratio_attacker_client"] = _mean(att_w) / _mean(cli_w)
    return out


def write_metrics(result, out_dir, scenario=None) -> Dict[str, Path]:
    """Write metrics.csv, slr.csv, links.csv, summary.csv and run.meta.

    Passing the scenario object adds the full parameter set to
    run.meta; without it the meta file still records name, hash, seed
    and counters.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: Dict[str, Path] = {}

    paths["metrics"] = out / "metrics.csv"
    _write_table(paths["metrics"], PERIOD_COLUMNS,
                 ([getattr(r, c) for c in PERIOD_COLUMNS]
                  for r in result.period_rows))

    paths["slr"] = out / "slr.csv"
    _write_table(paths["slr"], SLR_COLUMNS, result.slr_rows)

    paths["links"] = out / "links.csv"
    _write_table(paths["links"], LINK_COLUMNS, result.link_rows)

    summary = summarize(result)
    paths["summary"] = out / "summary.csv"
    _write_table(paths["summary"], ("key", "value"), summary.items())

    meta = {
        "format": FORMAT_TAG[2:],
        "scenario": result.scenario_name,
        "scenario_hash": result.scenario_hash,
        "seed": result.seed,
        "duration_s": result.duration_s,
        "summary_window": "final_half",
        "events": result.events,
        "senders": {name: {"as": info.as_id, "kind": info.kind,
                           "role": info.role, "route": info.route}
                    for name, info in result.senders.items()},
        "counters": dict(result.counters),
    }
    if scenario is not None:
        meta["params"] = {
            "topology": dataclasses.asdict(scenario.topology),
            "policer": dataclasses.asdict(scenario.policer),
            "policy": dataclasses.asdict(scenario.policy),
            "filter": dataclasses.asdict(scenario.filter),
            "chm": dataclasses.asdict(scenario.chm),
            "coordination": scenario.coordination,
        }
    paths["meta"] = out / "run.meta"

    def body(fh):
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")

    _atomic_write(paths["meta"], body)
    return paths


def read_metrics(path) -> List[Dict[str, object]]:
    """Parse a table written by write_metrics back into typed rows."""
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != FORMAT_TAG:
            raise ValueError(f"{path}: unrecognized table header {first!r}")
        reader = csv.reader(fh)
        columns = next(reader)
        rows = []
        for rec in reader:
            row: Dict[str, object] = {}
            for col, cell in zip(columns, rec):
                if col in _STR_COLUMNS:
                    row[col] = cell
                elif col in _FLOAT_COLUMNS:
                    row[col] = float(cell)
                else:
                    row[col] = int(cell)
            rows.append(row)
    return rows
