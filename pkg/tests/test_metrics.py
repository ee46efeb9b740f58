import math
import random

import pytest

from mpolice.metrics import (
    FORMAT_TAG,
    PERIOD_COLUMNS,
    jains_index,
    read_metrics,
    summarize,
    window_size,
    write_metrics,
)
from mpolice.scenario import build_scenario, parse_scenario_text
from mpolice.simnet.engine import run_scenario

TINY = """
name = tiny
duration_s = 12
seed = 3

[topology]
bottleneck_mbps = 20
rtt_ms = 40

[policy]
name = natural

[senders.client]
kind = legit_tcp
as = 0

[senders.noise]
kind = flat_udp
rate_mbps = 6
as = 1
"""


def tiny_scenario():
    scn = build_scenario(parse_scenario_text(TINY), "tiny")
    scn.text = TINY
    return scn


def test_window_size_takes_larger_side():
    assert window_size(10, 3) == 10
    assert window_size(3, 10) == 10
    assert window_size(7, 7) == 7
    assert window_size(0, 0) == 0


def test_jains_index_values():
    assert jains_index([5.0, 5.0, 5.0, 5.0]) == pytest.approx(1.0)
    assert jains_index([1.0, 0.0, 0.0, 0.0]) == pytest.approx(0.25)
    assert jains_index([0.0, 0.0]) is None
    assert jains_index([]) is None


def test_jains_index_scale_invariant():
    rng = random.Random(11)
    xs = [rng.random() for _ in range(30)]
    a = jains_index(xs)
    b = jains_index([x * 1e6 for x in xs])
    assert a == pytest.approx(b)
    assert 1.0 / len(xs) <= a <= 1.0


class _Row:
    def __init__(self, **kw):
        for key, value in kw.items():
            setattr(self, key, value)


class _Info:
    def __init__(self, name, role, route="mbox", as_id=0, kind="legit_tcp"):
        self.name = name
        self.role = role
        self.route = route
        self.as_id = as_id
        self.kind = kind


class _Result:
    """Hand-built stand-in for a run, with awkward float values."""

    def __init__(self):
        self.scenario_name = "fake"
        self.scenario_hash = "00" * 32
        self.seed = 9
        self.duration_s = 8.0
        self.senders = {
            "a": _Info("a", "client"),
            "b": _Info("b", "attacker"),
            "x": _Info("x", "attacker", route="direct"),
        }
        self.period_rows = [
            _Row(time_ms=4000 * (i + 1), mbox=0, sender=name, as_id=0,
                 role=self.senders[name].role, period=i + 1, w_r=40 + i,
                 w_r_next=41, n_r=50, n_d=i, llr=0.1 + 0.2,
                 recent_loss=1.0 / 3.0, delivered_pkts=48,
                 delivered_bytes=48 * 1500, window_pkts=48,
                 window_norm=48 / 6666.666666666667)
            for i in range(2) for name in ("a", "b")
        ]
        self.slr_rows = [(0, 1, 4000, 0.25), (0, 2, 8000, 1.0 / 7.0)]
        self.link_rows = [("bneck0", 100, 90, 10, 0)]
        self.delivered = {"a": (96, 96 * 1500), "b": (96, 96 * 1500)}
        self.counters = {"bypass_packets": 0, "sink_pkts": 3}
        self.events = 1234


def test_round_trip_is_lossless(tmp_path):
    result = _Result()
    paths = write_metrics(result, tmp_path)
    rows = read_metrics(paths["metrics"])
    assert len(rows) == len(result.period_rows)
    for parsed, row in zip(rows, result.period_rows):
        for col in PERIOD_COLUMNS:
            assert parsed[col] == getattr(row, col), col
    slr = read_metrics(paths["slr"])
    assert slr[1]["slr"] == 1.0 / 7.0
    links = read_metrics(paths["links"])
    assert links[0] == {"link": "bneck0", "injected": 100, "delivered": 90,
                        "dropped": 10, "lost": 0}


def test_header_line_and_no_leftover_temps(tmp_path):
    paths = write_metrics(_Result(), tmp_path)
    for path in paths.values():
        assert not path.name.endswith(".tmp")
    assert not list(tmp_path.glob("*.tmp"))
    for key in ("metrics", "slr", "links", "summary"):
        first = paths[key].read_text().splitlines()[0]
        assert first == FORMAT_TAG


def test_read_rejects_foreign_file(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_metrics(path)


def test_summary_excludes_direct_senders():
    summary = summarize(_Result())
    assert "rate_mbps:a" in summary
    assert "rate_mbps:b" in summary
    assert "rate_mbps:x" not in summary
    # 48 pkts * 1500 B in the final-half period over 4 s
    assert summary["rate_mbps:a"] == pytest.approx(48 * 1500 * 8 / 4e6)
    assert summary["jain_fairness"] == pytest.approx(1.0)
    assert summary["rate_ratio_attacker_client"] == pytest.approx(1.0)
    assert summary["window_ratio_attacker_client"] == pytest.approx(1.0)


def test_summary_jain_absent_when_nothing_delivered():
    result = _Result()
    for row in result.period_rows:
        row.delivered_bytes = 0
    summary = summarize(result)
    assert "jain_fairness" not in summary
    assert "rate_ratio_attacker_client" not in summary


def test_engine_result_writes_and_reparses(tmp_path):
    result = run_scenario(tiny_scenario())
    paths = write_metrics(result, tmp_path, scenario=tiny_scenario())
    rows = read_metrics(paths["metrics"])
    assert rows, "a 12 s run closes accounting periods"
    for parsed, row in zip(rows, result.period_rows):
        for col in PERIOD_COLUMNS:
            assert parsed[col] == getattr(row, col), col
    meta = paths["meta"].read_text()
    assert '"scenario_hash"' in meta
    assert '"d_p_s": 4.0' in meta


def test_same_seed_same_bytes(tmp_path):
    out1 = tmp_path / "one"
    out2 = tmp_path / "two"
    write_metrics(run_scenario(tiny_scenario()), out1)
    write_metrics(run_scenario(tiny_scenario()), out2)
    for name in ("metrics.csv", "slr.csv", "links.csv", "summary.csv",
                 "run.meta"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_window_rows_respect_window_size():
    result = run_scenario(tiny_scenario())
    for row in result.period_rows:
        assert row.window_pkts >= row.delivered_pkts
        assert row.window_pkts >= row.w_r
        assert row.window_pkts == window_size(row.w_r, row.delivered_pkts)
        assert math.isclose(row.window_norm,
                            row.window_pkts / (20e6 * 4 / (1500 * 8)))
