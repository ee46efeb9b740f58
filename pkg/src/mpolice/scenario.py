"""Scenario files: parsing, validation, and bundled experiment configs.

Format is line-based key-value text with nested sections:

    # first comment line doubles as the scenario description
    duration_s = 30
    seed = 1

    [topology]
    bottleneck_mbps = 100

    [senders.atk]
    kind = flat_udp
    as = 1
    rate_mbps = 100

Section headers nest with dots. Unknown sections and keys are errors, and
every validation failure is reported with its full field path so a broken
file lists all problems at once.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .bypassfilter import MTU, OUTER_OVERHEAD
from .capability import FRAME_LEN
from .policies import POLICIES

SENDER_KINDS = ("legit_tcp", "flat_udp", "shrew", "reactive_tcp")
UDP_KINDS = ("flat_udp", "shrew")
TCP_KINDS = ("legit_tcp", "reactive_tcp")

# largest UDP payload that still fits after capability + encapsulation
MAX_UDP_PAYLOAD = MTU - OUTER_OVERHEAD - FRAME_LEN - 28

_ROOT_KEYS = {"name", "duration_s", "seed"}
_SECTION_HEADS = {"topology", "policer", "policy", "filter", "chm",
                  "coordination", "senders"}


class ScenarioError(ValueError):
    """All validation problems for one file, newline-joined."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


# --------------------------------------------------------------------- model

@dataclass
class TopologyConfig:
    bottleneck_mbps: float = 100.0
    rtt_ms: float = 100.0
    buffer_packets: Optional[int] = None      # None -> bandwidth-delay product
    bottlenecks: int = 1
    mboxes: int = 1
    mbox_bottleneck: Optional[List[int]] = None   # None -> round robin
    mbox_out_factor: float = 4.0
    mbox_queue_packets: Optional[int] = None  # None -> max(64, bdp)
    burst_window_ms: int = 10
    victim_tick_ms: int = 100


@dataclass
class PolicerConfig:
    d_p_s: float = 4.0
    th_cap: int = 128
    th_rtt_s: float = 1.0
    th_slr_drop: float = 0.05
    beta: float = 0.8
    th_lpass: int = 5
    s_slr: int = 100


@dataclass
class PolicyConfig:
    name: str = "natural"
    base: str = "per_sender"                  # premium overlay fallback
    # (kind, key, fraction of bottleneck) with kind in {"as", "sender"}
    reservations: List[Tuple[str, str, float]] = field(default_factory=list)


@dataclass
class FilterConfig:
    enabled: bool = True
    seed: int = 1
    rotation_s: float = 300.0
    control_delay_ms: float = 5.0
    alarm_window_ms: int = 1000
    alarm_threshold: int = 100


@dataclass
class ChmConfig:
    flush_deadline_ms: int = 200
    replay_window_ms: float = 1000.0
    ack_capacity: int = 15


@dataclass
class SenderGroup:
    name: str
    kind: str
    as_id: int = 0
    mbox: Optional[int] = None                # None -> random assignment
    bottleneck: Optional[int] = None          # direct routes only
    route: str = "mbox"                       # mbox | direct
    dest: str = "victim"                      # victim | sink
    count: int = 1
    flows: int = 1
    rate_mbps: float = 10.0
    payload_bytes: int = 1372
    on_s: float = 1.0
    off_s: float = 1.0
    start_s: float = 0.0
    stagger_s: float = 0.0
    jitter_s: float = 0.0                     # random extra start delay
    pacing_jitter: float = 0.0                # per-train spacing wobble, fraction
    secret: str = "none"                      # none | stolen | random
    steal_at_s: float = 0.0
    role: str = "auto"                        # auto | client | attacker


@dataclass
class Scenario:
    name: str
    duration_s: float
    seed: int
    topology: TopologyConfig
    policer: PolicerConfig
    policy: PolicyConfig
    filter: FilterConfig
    chm: ChmConfig
    coordination: str                         # none | forced
    senders: List[SenderGroup]
    text: str = ""                            # canonical source for hashing

    def content_hash(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


# ------------------------------------------------------------------- parsing

Sections = Dict[Tuple[str, ...], Dict[str, str]]


def parse_scenario_text(text: str) -> Sections:
    sections: Sections = {(): {}}
    current: Tuple[str, ...] = ()
    errors = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append(f"line {lineno}: unterminated section header")
                continue
            current = tuple(part.strip() for part in line[1:-1].split("."))
            if not all(current):
                errors.append(f"line {lineno}: empty section name component")
                current = ()
                continue
            if current in sections:
                errors.append(f"line {lineno}: duplicate section "
                              f"[{'.'.join(current)}]")
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            errors.append(f"line {lineno}: empty key")
            continue
        if key in sections[current]:
            where = ".".join(current) or "top level"
            errors.append(f"line {lineno}: duplicate key {key!r} in {where}")
            continue
        sections[current][key] = value
    if errors:
        raise ScenarioError(errors)
    return sections


def apply_overrides(sections: Sections, overrides: List[str]) -> Sections:
    """Apply `--param path=value` settings on top of parsed sections."""
    out = {path: dict(keys) for path, keys in sections.items()}
    errors = []
    for item in overrides:
        if "=" not in item:
            errors.append(f"override {item!r}: expected path=value")
            continue
        path, value = item.split("=", 1)
        parts = path.strip().split(".")
        value = value.strip()
        if len(parts) == 1:
            if parts[0] not in _ROOT_KEYS:
                errors.append(f"override {path!r}: unknown top-level key")
                continue
            out[()][parts[0]] = value
        elif parts[0] == "senders" and len(parts) >= 3:
            section = ("senders", parts[1])
            if section not in out:
                errors.append(f"override {path!r}: no such sender "
                              f"section [senders.{parts[1]}]")
                continue
            out[section][".".join(parts[2:])] = value
        elif parts[0] == "policy" and len(parts) >= 3 and \
                parts[1] == "premium":
            out.setdefault(("policy", "premium"), {})
            out[("policy", "premium")][".".join(parts[2:])] = value
        elif parts[0] in _SECTION_HEADS and len(parts) == 2:
            out.setdefault((parts[0],), {})
            out[(parts[0],)][parts[1]] = value
        else:
            errors.append(f"override {path!r}: unknown parameter path")
    if errors:
        raise ScenarioError(errors)
    return out


# ------------------------------------------------------------------ building

class _Reader:
    """Pulls typed values out of one section, tracking unknown keys."""

    def __init__(self, path: Tuple[str, ...], keys: Dict[str, str],
                 errors: List[str]):
        self.where = ".".join(path) if path else "top level"
        self.keys = dict(keys)
        self.errors = errors

    def _fail(self, key: str, message: str) -> None:
        self.errors.append(f"{self.where}.{key}: {message}"
                           if self.where != "top level"
                           else f"{key}: {message}")

    def take(self, key: str, kind: str, default):
        if key not in self.keys:
            return default
        raw = self.keys.pop(key)
        try:
            if kind == "int":
                return int(raw)
            if kind == "float":
                return float(raw)
            if kind == "bool":
                if raw.lower() in ("true", "yes", "on", "1"):
                    return True
                if raw.lower() in ("false", "no", "off", "0"):
                    return False
                raise ValueError
            if kind == "int_list":
                return [int(part.strip()) for part in raw.split(",")]
            return raw
        except ValueError:
            self._fail(key, f"invalid {kind} value {raw!r}")
            return default

    def finish(self) -> None:
        for key in self.keys:
            self._fail(key, "unknown key")

    def check(self, condition: bool, key: str, message: str) -> bool:
        if not condition:
            self._fail(key, message)
        return condition


def _build_topology(reader: _Reader) -> TopologyConfig:
    t = TopologyConfig(
        bottleneck_mbps=reader.take("bottleneck_mbps", "float", 100.0),
        rtt_ms=reader.take("rtt_ms", "float", 100.0),
        buffer_packets=reader.take("buffer_packets", "int", None),
        bottlenecks=reader.take("bottlenecks", "int", 1),
        mboxes=reader.take("mboxes", "int", 1),
        mbox_bottleneck=reader.take("mbox_bottleneck", "int_list", None),
        mbox_out_factor=reader.take("mbox_out_factor", "float", 4.0),
        mbox_queue_packets=reader.take("mbox_queue_packets", "int", None),
        burst_window_ms=reader.take("burst_window_ms", "int", 10),
        victim_tick_ms=reader.take("victim_tick_ms", "int", 100),
    )
    reader.finish()
    reader.check(t.bottleneck_mbps > 0, "bottleneck_mbps", "must be > 0")
    reader.check(t.rtt_ms > 0, "rtt_ms", "must be > 0")
    reader.check(t.bottlenecks >= 1, "bottlenecks", "must be >= 1")
    reader.check(t.mboxes >= 1, "mboxes", "must be >= 1")
    reader.check(t.mbox_out_factor > 0, "mbox_out_factor", "must be > 0")
    reader.check(t.burst_window_ms >= 1, "burst_window_ms", "must be >= 1")
    reader.check(t.victim_tick_ms >= 1, "victim_tick_ms", "must be >= 1")
    if t.buffer_packets is not None:
        reader.check(t.buffer_packets >= 1, "buffer_packets", "must be >= 1")
    if t.mbox_queue_packets is not None:
        reader.check(t.mbox_queue_packets >= 1, "mbox_queue_packets",
                     "must be >= 1")
    if t.mbox_bottleneck is not None:
        if not reader.check(len(t.mbox_bottleneck) == t.mboxes,
                            "mbox_bottleneck",
                            f"needs one entry per mbox ({t.mboxes})"):
            t.mbox_bottleneck = None
        elif not all(0 <= b < t.bottlenecks for b in t.mbox_bottleneck):
            reader.check(False, "mbox_bottleneck",
                         f"indexes must be in [0, {t.bottlenecks})")
            t.mbox_bottleneck = None
    return t


def _build_policer(reader: _Reader) -> PolicerConfig:
    p = PolicerConfig(
        d_p_s=reader.take("d_p_s", "float", 4.0),
        th_cap=reader.take("th_cap", "int", 128),
        th_rtt_s=reader.take("th_rtt_s", "float", 1.0),
        th_slr_drop=reader.take("th_slr_drop", "float", 0.05),
        beta=reader.take("beta", "float", 0.8),
        th_lpass=reader.take("th_lpass", "int", 5),
        s_slr=reader.take("s_slr", "int", 100),
    )
    reader.finish()
    reader.check(p.d_p_s > 0, "d_p_s", "must be > 0")
    reader.check(0 < p.th_rtt_s < p.d_p_s, "th_rtt_s",
                 "must be in (0, d_p_s)")
    reader.check(0 < p.th_slr_drop < 1, "th_slr_drop", "must be in (0, 1)")
    reader.check(0 <= p.beta < 1, "beta", "must be in [0, 1)")
    reader.check(1 <= p.th_cap <= 128, "th_cap", "must be in [1, 128]")
    reader.check(p.th_lpass >= 1, "th_lpass", "must be >= 1")
    reader.check(p.s_slr >= 1, "s_slr", "must be >= 1")
    return p


def _build_policy(reader: _Reader, premium: Dict[str, str],
                  errors: List[str]) -> PolicyConfig:
    p = PolicyConfig(
        name=reader.take("name", "str", "natural"),
        base=reader.take("base", "str", "per_sender"),
    )
    reader.finish()
    known = sorted(POLICIES) + ["premium"]
    reader.check(p.name in known, "name", f"must be one of {known}")
    reader.check(p.base in POLICIES, "base",
                 f"must be one of {sorted(POLICIES)}")
    total = 0.0
    for key, raw in premium.items():
        where = f"policy.premium.{key}"
        parts = key.split(".", 1)
        if len(parts) != 2 or parts[0] not in ("as", "sender"):
            errors.append(f"{where}: keys look like as.<id> or sender.<name>")
            continue
        try:
            fraction = float(raw)
        except ValueError:
            errors.append(f"{where}: invalid float value {raw!r}")
            continue
        if not 0 < fraction <= 1:
            errors.append(f"{where}: fraction must be in (0, 1]")
            continue
        if parts[0] == "as":
            try:
                int(parts[1])
            except ValueError:
                errors.append(f"{where}: AS id must be an integer")
                continue
        total += fraction
        p.reservations.append((parts[0], parts[1], fraction))
    if total > 1.0:
        errors.append(f"policy.premium: reservations sum to {total}, "
                      "exceeding the bottleneck")
    if p.name == "premium" and not p.reservations:
        errors.append("policy.premium: premium policy needs at least "
                      "one reservation")
    if p.name != "premium" and p.reservations:
        errors.append("policy.premium: reservations given but policy.name "
                      "is not 'premium'")
    return p


def _build_filter(reader: _Reader) -> FilterConfig:
    f = FilterConfig(
        enabled=reader.take("enabled", "bool", True),
        seed=reader.take("seed", "int", 1),
        rotation_s=reader.take("rotation_s", "float", 300.0),
        control_delay_ms=reader.take("control_delay_ms", "float", 5.0),
        alarm_window_ms=reader.take("alarm_window_ms", "int", 1000),
        alarm_threshold=reader.take("alarm_threshold", "int", 100),
    )
    reader.finish()
    reader.check(f.rotation_s > 0, "rotation_s", "must be > 0")
    reader.check(f.control_delay_ms >= 0, "control_delay_ms",
                 "must be >= 0")
    reader.check(f.alarm_window_ms >= 1, "alarm_window_ms", "must be >= 1")
    reader.check(f.alarm_threshold >= 1, "alarm_threshold", "must be >= 1")
    return f


def _build_chm(reader: _Reader) -> ChmConfig:
    c = ChmConfig(
        flush_deadline_ms=reader.take("flush_deadline_ms", "int", 200),
        replay_window_ms=reader.take("replay_window_ms", "float", 1000.0),
        ack_capacity=reader.take("ack_capacity", "int", 15),
    )
    reader.finish()
    reader.check(c.flush_deadline_ms >= 1, "flush_deadline_ms",
                 "must be >= 1")
    reader.check(c.replay_window_ms > 0, "replay_window_ms", "must be > 0")
    reader.check(1 <= c.ack_capacity <= 15, "ack_capacity",
                 "must be in [1, 15]")
    return c


def _build_sender(name: str, reader: _Reader,
                  topology: TopologyConfig) -> SenderGroup:
    g = SenderGroup(
        name=name,
        kind=reader.take("kind", "str", ""),
        as_id=reader.take("as", "int", 0),
        mbox=reader.take("mbox", "int", None),
        bottleneck=reader.take("bottleneck", "int", None),
        route=reader.take("route", "str", "mbox"),
        dest=reader.take("dest", "str", "victim"),
        count=reader.take("count", "int", 1),
        flows=reader.take("flows", "int", 0),
        rate_mbps=reader.take("rate_mbps", "float", 10.0),
        payload_bytes=reader.take("payload_bytes", "int", 1372),
        on_s=reader.take("on_s", "float", 1.0),
        off_s=reader.take("off_s", "float", 1.0),
        start_s=reader.take("start_s", "float", 0.0),
        stagger_s=reader.take("stagger_s", "float", 0.0),
        jitter_s=reader.take("jitter_s", "float", 0.0),
        pacing_jitter=reader.take("pacing_jitter", "float", 0.0),
        secret=reader.take("secret", "str", "none"),
        steal_at_s=reader.take("steal_at_s", "float", 0.0),
        role=reader.take("role", "str", "auto"),
    )
    reader.finish()
    ok_kind = reader.check(g.kind in SENDER_KINDS, "kind",
                           f"must be one of {list(SENDER_KINDS)}")
    if g.flows == 0:
        g.flows = 10 if g.kind == "reactive_tcp" else 1
    reader.check(g.route in ("mbox", "direct"), "route",
                 "must be mbox or direct")
    reader.check(g.dest in ("victim", "sink"), "dest",
                 "must be victim or sink")
    reader.check(g.count >= 1, "count", "must be >= 1")
    reader.check(g.flows >= 1, "flows", "must be >= 1")
    reader.check(g.start_s >= 0, "start_s", "must be >= 0")
    reader.check(g.stagger_s >= 0, "stagger_s", "must be >= 0")
    reader.check(g.jitter_s >= 0, "jitter_s", "must be >= 0")
    reader.check(0 <= g.pacing_jitter <= 0.5, "pacing_jitter",
                 "must be in [0, 0.5]")
    reader.check(g.role in ("auto", "client", "attacker"), "role",
                 "must be auto, client, or attacker")
    if ok_kind and g.kind in UDP_KINDS:
        reader.check(g.rate_mbps > 0, "rate_mbps", "must be > 0")
        reader.check(1 <= g.payload_bytes <= MAX_UDP_PAYLOAD,
                     "payload_bytes", f"must be in [1, {MAX_UDP_PAYLOAD}]")
        if g.kind == "shrew":
            reader.check(g.on_s > 0, "on_s", "must be > 0")
            reader.check(g.off_s > 0, "off_s", "must be > 0")
    if ok_kind and g.kind in TCP_KINDS:
        reader.check(g.route == "mbox", "route",
                     "tcp senders must route via an mbox")
        reader.check(g.dest == "victim", "dest",
                     "tcp senders must target the victim")
    if g.route == "mbox":
        reader.check(g.as_id >= 0, "as", "must be >= 0")
        reader.check(g.secret == "none", "secret",
                     "only direct senders carry port guesses")
        if g.mbox is not None:
            reader.check(0 <= g.mbox < topology.mboxes, "mbox",
                         f"must be in [0, {topology.mboxes})")
    else:
        reader.check(g.secret in ("none", "stolen", "random"), "secret",
                     "must be none, stolen, or random")
        reader.check(g.steal_at_s >= 0, "steal_at_s", "must be >= 0")
        if g.bottleneck is not None:
            reader.check(0 <= g.bottleneck < topology.bottlenecks,
                         "bottleneck",
                         f"must be in [0, {topology.bottlenecks})")
    return g


def build_scenario(sections: Sections, name: str = "scenario") -> Scenario:
    errors: List[str] = []
    known: set = set()

    def grab(path: Tuple[str, ...]) -> _Reader:
        known.add(path)
        return _Reader(path, sections.get(path, {}), errors)

    root = grab(())
    scen_name = root.take("name", "str", name)
    duration_s = root.take("duration_s", "float", None)
    seed = root.take("seed", "int", 1)
    root.finish()
    if duration_s is None:
        errors.append("duration_s: required")
        duration_s = 0.0
    elif duration_s <= 0:
        errors.append("duration_s: must be > 0")
    if seed < 0:
        errors.append("seed: must be >= 0")

    topology = _build_topology(grab(("topology",)))
    policer = _build_policer(grab(("policer",)))
    known.add(("policy", "premium"))
    policy = _build_policy(grab(("policy",)),
                           sections.get(("policy", "premium"), {}), errors)
    filter_cfg = _build_filter(grab(("filter",)))
    chm = _build_chm(grab(("chm",)))

    coord = grab(("coordination",))
    coordination = coord.take("mode", "str", "none")
    coord.finish()
    if coordination not in ("none", "forced"):
        errors.append("coordination.mode: must be none or forced")

    senders = []
    for path in sections:
        if len(path) == 2 and path[0] == "senders":
            known.add(path)
            sender_name = path[1]
            if not sender_name.replace("_", "").replace("-", "").isalnum():
                errors.append(f"senders.{sender_name}: names use letters, "
                              "digits, '_' and '-' only")
            senders.append(_build_sender(sender_name, grab(path), topology))
        elif path == ("senders",):
            errors.append("senders: declare senders as [senders.<name>] "
                          "sections")
            known.add(path)
    if not senders:
        errors.append("senders: at least one sender section is required")
    if not any(g.route == "mbox" for g in senders):
        errors.append("senders: at least one sender must route via an mbox")

    for path in sections:
        if path not in known:
            errors.append(f"[{'.'.join(path)}]: unknown section")

    if errors:
        raise ScenarioError(sorted(errors))
    return Scenario(name=scen_name, duration_s=duration_s, seed=seed,
                    topology=topology, policer=policer, policy=policy,
                    filter=filter_cfg, chm=chm, coordination=coordination,
                    senders=senders)


# ------------------------------------------------------------------- loading

def _bundled_root():
    return resources.files("mpolice.scenarios")


def bundled_scenarios() -> List[Tuple[str, str]]:
    """(name, description) for every scenario shipped with the package."""
    out = []
    for entry in sorted(_bundled_root().iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".scn"):
            text = entry.read_text()
            description = ""
            for line in text.splitlines():
                line = line.strip()
                if line.startswith("#"):
                    description = line.lstrip("# ").strip()
                    break
                if line:
                    break
            out.append((entry.name[:-4], description))
    return out


def load_scenario(ref: str, overrides: Optional[List[str]] = None,
                  seed: Optional[int] = None,
                  duration_s: Optional[float] = None) -> Scenario:
    """Load by bundled name or filesystem path, then apply overrides."""
    path = Path(ref)
    if path.suffix == ".scn" or path.exists():
        text = path.read_text()
        name = path.stem
    else:
        entry = _bundled_root() / f"{ref}.scn"
        try:
            text = entry.read_text()
        except (FileNotFoundError, OSError):
            names = ", ".join(n for n, _ in bundled_scenarios())
            raise ScenarioError(
                [f"scenario: no file or bundled scenario named {ref!r} "
                 f"(bundled: {names})"])
        name = ref
    sections = parse_scenario_text(text)
    extra = list(overrides or [])
    if seed is not None:
        extra.append(f"seed={seed}")
    if duration_s is not None:
        extra.append(f"duration_s={duration_s}")
    if extra:
        sections = apply_overrides(sections, extra)
    scenario = build_scenario(sections, name)
    canonical = [text]
    canonical.extend(sorted(extra))
    scenario.text = "\n<override>\n".join(canonical)
    return scenario
