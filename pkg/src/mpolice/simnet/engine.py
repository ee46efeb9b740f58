"""Scenario orchestration: builds the topology and runs the event loop.

Layout (one victim, M policing boxes, B shared bottlenecks):

    sender --[5% rtt]--> mbox --pump/[10% rtt]--> bottleneck --[35% rtt]--> victim
    victim --[50% rtt, per-mbox reverse link]--> mbox --[5% rtt]--> sender

Policed senders reach the victim through exactly one box. Direct senders
(bypass attackers, cross traffic) skip the boxes and inject straight at a
bottleneck. The victim's ACL sits at bottleneck ingress and inspects only
victim-bound packets.

TCP traffic is simulated packet by packet. Constant-rate sources are
policed packet by packet too (via the policer's burst interface) but
transported as trains, quantized to one burst window; see core.py.
"""

from __future__ import annotations

import hashlib
import random
from collections import deque
from typing import Dict, List, Optional, Tuple

from ..bypassfilter import OUTER_OVERHEAD, AclFilter, SecretGenerator
from ..capability import FRAME_LEN, AesCbcMac
from ..chm import ReceiverGate
from ..coordination import CoordinationGroup
from ..metrics import window_size
from ..policer import (BEST_EFFORT, DROPPED, PRIVILEGED, Policer,
                       PolicerParams, fnv1a64)
from ..policies import PremiumOverlay, make_policy
from ..scenario import Scenario, SenderGroup
from .core import (MSS, NS_PER_MS, NS_PER_S, TCP_HEADER, UDP_HEADER,
                   EventLoop, Link, SimPacket, tx_time_ns)
from .tcp import FlowReceiver, TcpFlow

IP_BASE = 0x0A640001        # policing boxes get consecutive addresses
NORM_PKT_BYTES = 1500       # window normalization unit


class SenderInfo:
    __slots__ = ("name", "f", "as_id", "kind", "role", "mbox", "route",
                 "dest", "group")

    def __init__(self, name, f, as_id, kind, role, mbox, route, dest, group):
        self.name = name
        self.f = f
        self.as_id = as_id
        self.kind = kind
        self.role = role
        self.mbox = mbox
        self.route = route
        self.dest = dest
        self.group = group


class PeriodRow:
    """One closed accounting period for one sender at one box."""

    __slots__ = ("time_ms", "mbox", "sender", "as_id", "role", "period",
                 "w_r", "w_r_next", "n_r", "n_d", "llr", "recent_loss",
                 "delivered_pkts", "delivered_bytes", "window_pkts",
                 "window_norm")

    def __init__(self, **kw):
        for key, value in kw.items():
            setattr(self, key, value)


class RunResult:
    def __init__(self, scenario: Scenario, seed: int):
        self.scenario_name = scenario.name
        self.scenario_hash = scenario.content_hash()
        self.seed = seed
        self.duration_s = scenario.duration_s
        self.senders: Dict[str, SenderInfo] = {}
        self.period_rows: List[PeriodRow] = []
        self.slr_rows: List[Tuple[int, int, int, float]] = []
        self.link_rows: List[Tuple[str, int, int, int, int]] = []
        self.delivered: Dict[str, Tuple[int, int]] = {}
        self.counters: Dict[str, int] = {}
        self.events = 0


class _Mbox:
    """One policing box: policer + strict-priority egress pump."""

    __slots__ = ("sim", "idx", "ip", "policer", "loop", "order", "out_rate",
                 "out_prop_ns", "queue_cap", "_queues", "_qpkts", "busy",
                 "queue_drops", "policer_dropped", "bottleneck")

    def __init__(self, sim, idx, ip, policer, out_rate, out_prop_ns,
                 queue_cap, bottleneck_idx, order):
        self.sim = sim
        self.idx = idx
        self.ip = ip
        self.policer = policer
        self.loop = sim.loop
        self.order = order
        self.out_rate = out_rate
        self.out_prop_ns = out_prop_ns
        self.queue_cap = queue_cap
        self._queues = {PRIVILEGED: deque(), BEST_EFFORT: deque()}
        self._qpkts = {PRIVILEGED: 0, BEST_EFFORT: 0}
        self.busy = False
        self.queue_drops = 0
        self.policer_dropped = 0
        self.bottleneck = bottleneck_idx

    # ------------------------------------------------------------- ingress

    def _finalize(self, pkt: SimPacket) -> None:
        pkt.size += FRAME_LEN
        if self.sim.acl is not None:
            pkt.size += OUTER_OVERHEAD
            pkt.ports = self.sim.acl.secret_for_sender(
                self.loop.now_ns // NS_PER_MS).value
        pkt.mbox = self.idx

    def on_packet(self, pkt: SimPacket) -> None:
        decision = self.policer.handle_packet(pkt.f,
                                              self.loop.now_ns // NS_PER_MS)
        if decision.verdict == DROPPED:
            self.policer_dropped += 1
            return
        pkt.frames = [decision.frame]
        self._finalize(pkt)
        self._enqueue(pkt, decision.queue)

    def on_burst(self, info: SenderInfo, t0_ns: int, count: int,
                 spacing_ns: int, size: int, payload: int) -> None:
        accepted = self.policer.handle_burst(info.f, t0_ns, count, spacing_ns)
        self.policer_dropped += count - len(accepted)
        if not accepted:
            return
        # contiguous same-queue stretches become one train each
        start = 0
        for j in range(1, len(accepted) + 1):
            if j == len(accepted) or accepted[j][1] != accepted[start][1]:
                frames = [frame for _, _, frame in accepted[start:j]]
                train = SimPacket("data_udp", info.name, info.f, size=size,
                                  payload=payload, count=len(frames),
                                  frames=frames, dest=info.dest)
                self._finalize(train)
                self._enqueue(train, accepted[start][1])
                start = j

    def _enqueue(self, pkt: SimPacket, queue: str) -> None:
        room = self.queue_cap - self._qpkts[queue]
        if room <= 0:
            self.queue_drops += pkt.count
            return
        if pkt.count > room:
            self.queue_drops += pkt.count - room
            pkt.clip(room)
        self._qpkts[queue] += pkt.count
        self._queues[queue].append(pkt)
        if not self.busy:
            self._pump()

    # -------------------------------------------------------------- egress

    def _pump(self) -> None:
        if self._queues[PRIVILEGED]:
            pkt = self._queues[PRIVILEGED].popleft()
            self._qpkts[PRIVILEGED] -= pkt.count
        elif self._queues[BEST_EFFORT]:
            pkt = self._queues[BEST_EFFORT].popleft()
            self._qpkts[BEST_EFFORT] -= pkt.count
        else:
            return
        self.busy = True
        tx_total = pkt.count * tx_time_ns(pkt.size, self.out_rate)
        self.loop.schedule(self.loop.now_ns + tx_total, self.order,
                           self._sent, pkt)

    def _sent(self, pkt: SimPacket) -> None:
        self.busy = False
        self.loop.schedule(self.loop.now_ns + self.out_prop_ns, self.order,
                           self.sim.router_ingress, pkt, self.bottleneck)
        self._pump()

    # ------------------------------------------------------------- reverse

    def on_reverse(self, pkt: SimPacket, m: int, start_ns: int,
                   tx: int) -> None:
        now_ms = self.loop.now_ns // NS_PER_MS
        if pkt.fb is not None:
            self.policer.record_feedback_ack(pkt.fb, now_ms)
        if pkt.kind == "ack":
            self.loop.schedule(self.loop.now_ns + self.sim.sender_leg_ns,
                               self.order, pkt.flow.on_ack, pkt.seq)


class _Victim:
    """Receiver gate, per-flow TCP receivers, and the rekeying decision."""

    __slots__ = ("sim", "gate", "loop", "order", "receivers",
                 "delivered_pkts", "delivered_bytes", "_valid_commons",
                 "sink_pkts", "rekeys", "rotations")

    def __init__(self, sim, gate, order):
        self.sim = sim
        self.gate = gate
        self.loop = sim.loop
        self.order = order
        self.receivers: Dict[Tuple[int, int], FlowReceiver] = {}
        self.delivered_pkts: Dict[int, int] = {}
        self.delivered_bytes: Dict[int, int] = {}
        self._valid_commons: Dict[bytes, bool] = {}
        self.sink_pkts = 0
        self.rekeys = 0
        self.rotations = 0

    def _count(self, f: int, pkts: int, payload_bytes: int) -> None:
        self.delivered_pkts[f] = self.delivered_pkts.get(f, 0) + pkts
        self.delivered_bytes[f] = \
            self.delivered_bytes.get(f, 0) + payload_bytes

    def on_delivery(self, pkt: SimPacket, m: int, start_ns: int,
                    tx: int) -> None:
        if pkt.dest == "sink":
            self.sink_pkts += m
            return
        if pkt.kind == "data_tcp":
            now_ms = self.loop.now_ns // NS_PER_MS
            verdict = self.gate.ingest_trailer(pkt.frames[0], now_ms)
            if verdict == "invalid":
                return
            self._count(pkt.f, 1, pkt.payload)
            recv = self.receivers.get((pkt.f, pkt.flow_idx))
            if recv is None:
                recv = FlowReceiver()
                self.receivers[(pkt.f, pkt.flow_idx)] = recv
            ack_no = recv.on_data(pkt.seq)
            fb = self.gate.take_for_ack(IP_BASE + pkt.mbox, now_ms)
            ack = SimPacket("ack", "victim", pkt.f,
                            size=TCP_HEADER + (len(fb) if fb else 0),
                            mbox=pkt.mbox, flow=pkt.flow,
                            flow_idx=pkt.flow_idx, seq=ack_no, fb=fb)
            self.sim.reverse_links[pkt.mbox].send(ack)
            return
        if pkt.frames is None:
            # bypass traffic: no capability at all
            delay_ns = self.loop.now_ns - (start_ns + m * tx)
            for j in range(m):
                t_ms = (start_ns + (j + 1) * tx + delay_ns) // NS_PER_MS
                self.gate.ingest_trailer(None, t_ms)
            return
        # train of policed constant-rate packets
        delay_ns = self.loop.now_ns - (start_ns + m * tx)
        delivered = 0
        commons = self._valid_commons
        for j in range(m):
            frame = pkt.frames[j]
            if frame in commons:
                delivered += 1
                continue
            t_ms = (start_ns + (j + 1) * tx + delay_ns) // NS_PER_MS
            verdict = self.gate.ingest_trailer(frame, t_ms)
            if verdict == "common":
                if len(commons) > 300_000:
                    commons.clear()
                commons[frame] = True
            if verdict != "invalid":
                delivered += 1
        if delivered:
            self._count(pkt.f, delivered, delivered * pkt.payload)

    def on_tick(self) -> None:
        now_ms = self.loop.now_ns // NS_PER_MS
        for ip_mp, payload in self.gate.tick(now_ms):
            idx = ip_mp - IP_BASE
            fb = SimPacket("fb", "victim", 0, size=UDP_HEADER + len(payload),
                           mbox=idx, fb=payload)
            self.sim.reverse_links[idx].send(fb)
        acl = self.sim.acl
        if acl is not None:
            cfg = self.sim.scenario.filter
            if self.gate.bypass_alarm(now_ms, cfg.alarm_window_ms,
                                      cfg.alarm_threshold):
                acl.rotate(now_ms)
                self.gate.reset_alarm()
                self.rekeys += 1
            elif acl.rotation_due(now_ms):
                acl.rotate(now_ms)
                self.rotations += 1
        self.loop.schedule(
            self.loop.now_ns +
            self.sim.scenario.topology.victim_tick_ms * NS_PER_MS,
            self.order, self.on_tick)


class _TrainSource:
    """Emits one burst of evenly spaced packets per burst window.

    Shrew gating trims emissions to on-phases; fully-off windows are
    skipped by scheduling straight to the next on-phase start.
    """

    __slots__ = ("sim", "info", "loop", "order", "spacing_ns", "size",
                 "payload", "window_ns", "on_ns", "off_ns", "start_ns",
                 "next_emit_ns", "rng", "secret_mode", "ports",
                 "jitter", "pace_rng")

    def __init__(self, sim, info: SenderInfo, group: SenderGroup, order: int):
        self.sim = sim
        self.info = info
        self.loop = sim.loop
        self.order = order
        wire = group.payload_bytes + UDP_HEADER
        if info.route == "direct" and info.dest == "victim":
            wire += OUTER_OVERHEAD     # bypass traffic forges encapsulation
        self.size = wire
        self.payload = group.payload_bytes
        rate_bps = int(group.rate_mbps * 1e6)
        self.spacing_ns = max(1, round(wire * 8 * NS_PER_S / rate_bps))
        self.window_ns = sim.burst_window_ns
        if group.kind == "shrew":
            self.on_ns = int(group.on_s * NS_PER_S)
            self.off_ns = int(group.off_s * NS_PER_S)
        else:
            self.on_ns = self.off_ns = 0
        self.start_ns = int(group.start_s * NS_PER_S)
        self.next_emit_ns = self.start_ns
        self.rng = None
        self.secret_mode = group.secret
        self.ports = None
        if group.secret == "random":
            self.rng = random.Random(f"guess:{sim.seed}:{info.name}")
        self.jitter = group.pacing_jitter
        self.pace_rng = None
        if self.jitter > 0:
            self.pace_rng = random.Random(f"pace:{sim.seed}:{info.name}")

    def _phase(self, t_ns: int) -> Tuple[bool, int]:
        """(currently on, time this on/off state ends)."""
        if not self.on_ns:
            return True, 1 << 62
        cycle = self.on_ns + self.off_ns
        pos = (t_ns - self.start_ns) % cycle
        if pos < self.on_ns:
            return True, t_ns + (self.on_ns - pos)
        return False, t_ns + (cycle - pos)

    def start(self) -> None:
        self.loop.schedule(self.start_ns, self.order, self._window)

    def _window(self) -> None:
        t = self.loop.now_ns
        end = t + self.window_ns
        while self.next_emit_ns < end:
            on, phase_end = self._phase(self.next_emit_ns)
            if not on:
                self.next_emit_ns = phase_end
                if phase_end >= end:
                    # sleep through the dead stretch
                    self.loop.schedule(phase_end, self.order, self._window)
                    return
                continue
            stop = min(end, phase_end)
            spacing = self.spacing_ns
            if self.pace_rng is not None:
                # emission pacing wobbles train to train the way a real
                # sender's clock does; without it identical constant-rate
                # sources phase-lock and the queue they share stops mixing
                wobble = 1.0 + self.jitter * (2.0 * self.pace_rng.random() - 1.0)
                spacing = max(1, round(self.spacing_ns * wobble))
            k = (stop - 1 - self.next_emit_ns) // spacing + 1
            self._emit(self.next_emit_ns, k, spacing)
            self.next_emit_ns += k * spacing
        self.loop.schedule(end, self.order, self._window)

    def _emit(self, t0_ns: int, count: int, spacing_ns: int) -> None:
        info = self.info
        if info.route == "mbox":
            mbox = self.sim.mboxes[info.mbox]
            self.loop.schedule(t0_ns + self.sim.sender_leg_ns, self.order,
                               mbox.on_burst, info, t0_ns +
                               self.sim.sender_leg_ns, count,
                               spacing_ns, self.size, self.payload)
            return
        # direct injection at the bottleneck (bypass or cross traffic)
        ports = None
        if info.dest == "victim":
            if self.secret_mode == "random":
                ports = self.rng.randrange(1 << 32)
            else:
                ports = self.ports      # stolen; set by the steal event
        train = SimPacket("data_udp", info.name, info.f, size=self.size,
                          payload=self.payload, count=count, frames=None,
                          dest=info.dest, ports=ports)
        bneck = info.mbox              # direct senders store bottleneck here
        self.loop.schedule(t0_ns + self.sim.direct_leg_ns, self.order,
                           self.sim.router_ingress, train, bneck)

    def steal_secret(self) -> None:
        acl = self.sim.acl
        if acl is not None:
            self.ports = acl.secret_for_sender(
                self.loop.now_ns // NS_PER_MS).value


class Simulation:
    """One deterministic run of one scenario."""

    def __init__(self, scenario: Scenario, seed: Optional[int] = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.loop = EventLoop()
        self._order = 0

        topo = scenario.topology
        self.capacity_bps = int(topo.bottleneck_mbps * 1e6)
        rtt_ns = int(topo.rtt_ms * NS_PER_MS)
        self.sender_leg_ns = rtt_ns * 5 // 100
        self.mbox_out_ns = rtt_ns * 10 // 100
        self.bneck_prop_ns = rtt_ns * 35 // 100
        self.reverse_ns = rtt_ns * 50 // 100
        self.direct_leg_ns = self.sender_leg_ns + self.mbox_out_ns
        self.burst_window_ns = topo.burst_window_ms * NS_PER_MS

        bdp_pkts = max(4, int(self.capacity_bps * (topo.rtt_ms / 1000.0) /
                              (8 * NORM_PKT_BYTES)))
        self.buffer_pkts = topo.buffer_packets or bdp_pkts
        self.mbox_queue_pkts = topo.mbox_queue_packets or max(64, bdp_pkts)
        self.norm_pkts = self.capacity_bps * scenario.policer.d_p_s / \
            (NORM_PKT_BYTES * 8)

        digest = hashlib.sha256(f"mac:{self.seed}".encode()).digest()
        self.mac = AesCbcMac(digest[:16])

        self.acl: Optional[AclFilter] = None
        if scenario.filter.enabled:
            self.acl = AclFilter(
                SecretGenerator(scenario.filter.seed),
                rtt_ms=topo.rtt_ms,
                control_delay_ms=scenario.filter.control_delay_ms,
                rotation_s=scenario.filter.rotation_s)
        self.acl_rejected = 0

        self.result = RunResult(scenario, self.seed)
        self._expand_senders()
        self._build_policy()
        self._build_nodes()
        self._build_sources()

    def _next_order(self) -> int:
        self._order += 1
        return self._order

    # ------------------------------------------------------------ building

    def _expand_senders(self) -> None:
        assign = random.Random(f"assign:{self.seed}")
        topo = self.scenario.topology
        self.infos: List[SenderInfo] = []
        self.as_map: Dict[int, int] = {}
        self.name_of: Dict[int, str] = {}
        self.groups: Dict[str, SenderGroup] = {}
        for group in self.scenario.senders:
            self.groups[group.name] = group
            for i in range(group.count):
                name = group.name if group.count == 1 \
                    else f"{group.name}.{i}"
                f = fnv1a64(name)
                if f in self.name_of:
                    raise ValueError(f"sender id collision on {name!r}")
                role = group.role
                if role == "auto":
                    role = "client" if group.kind == "legit_tcp" \
                        else "attacker"
                if group.route == "mbox":
                    attach = group.mbox if group.mbox is not None \
                        else assign.randrange(topo.mboxes)
                else:
                    attach = group.bottleneck if group.bottleneck is not None \
                        else 0
                info = SenderInfo(name, f, group.as_id, group.kind, role,
                                  attach, group.route, group.dest, group)
                self.infos.append(info)
                self.as_map[f] = group.as_id
                self.name_of[f] = name
                self.result.senders[name] = info

    def _build_policy(self) -> None:
        cfg = self.scenario.policy
        if cfg.name != "premium":
            self.policy = make_policy(cfg.name)
            return
        base = make_policy(cfg.base)
        reservations = {}
        period_pkts = self.capacity_bps * self.scenario.policer.d_p_s / \
            (8 * NORM_PKT_BYTES)
        for kind, key, fraction in cfg.reservations:
            pkts = fraction * period_pkts
            if kind == "as":
                reservations[("as", int(key))] = pkts
            else:
                reservations[("sender", fnv1a64(key))] = pkts
        self.policy = PremiumOverlay(base, reservations)

    def _build_nodes(self) -> None:
        scen = self.scenario
        topo = scen.topology
        params = PolicerParams(
            d_p_s=scen.policer.d_p_s, th_cap=scen.policer.th_cap,
            th_rtt_s=scen.policer.th_rtt_s,
            th_slr_drop=scen.policer.th_slr_drop, beta=scen.policer.beta,
            th_lpass=scen.policer.th_lpass, s_slr=scen.policer.s_slr)
        mapping = topo.mbox_bottleneck or \
            [i % topo.bottlenecks for i in range(topo.mboxes)]
        out_rate = int(self.capacity_bps * topo.mbox_out_factor)

        self.mboxes: List[_Mbox] = []
        for idx in range(topo.mboxes):
            policer = Policer(self.mac, IP_BASE + idx, params, self.policy,
                              as_of=self.as_map.__getitem__)
            policer.on_rollover = self._make_rollover(idx)
            self.mboxes.append(_Mbox(self, idx, IP_BASE + idx, policer,
                                     out_rate, self.mbox_out_ns,
                                     self.mbox_queue_pkts, mapping[idx],
                                     self._next_order()))
        if scen.coordination == "forced":
            CoordinationGroup([mbox.policer.ctx for mbox in self.mboxes])

        gate = ReceiverGate(self.mac,
                            replay_window_ms=scen.chm.replay_window_ms,
                            flush_deadline_ms=scen.chm.flush_deadline_ms,
                            ack_capacity=scen.chm.ack_capacity)
        self.victim = _Victim(self, gate, self._next_order())

        self.bottlenecks: List[Link] = []
        for b in range(topo.bottlenecks):
            self.bottlenecks.append(Link(
                self.loop, self._next_order(), f"bottleneck{b}",
                self.capacity_bps, self.bneck_prop_ns, self.buffer_pkts,
                self.victim.on_delivery))
        self.reverse_links: List[Link] = []
        for idx, mbox in enumerate(self.mboxes):
            self.reverse_links.append(Link(
                self.loop, self._next_order(), f"reverse{idx}",
                self.capacity_bps, self.reverse_ns, self.buffer_pkts,
                mbox.on_reverse))

        self._last_delivered: Dict[int, Tuple[int, int]] = {}
        self.loop.schedule(topo.victim_tick_ms * NS_PER_MS,
                           self.victim.order, self.victim.on_tick)
        sweep_ns = int(scen.policer.d_p_s * NS_PER_S)
        for mbox in self.mboxes:
            self.loop.schedule(sweep_ns, mbox.order, self._sweep, mbox,
                               sweep_ns)

    def _sweep(self, mbox: _Mbox, interval_ns: int) -> None:
        mbox.policer.evict_idle(self.loop.now_ns // NS_PER_MS)
        self.loop.schedule(self.loop.now_ns + interval_ns, mbox.order,
                           self._sweep, mbox, interval_ns)

    def _build_sources(self) -> None:
        self.sources: List[_TrainSource] = []
        self.flows: List[TcpFlow] = []
        for info in self.infos:
            group = info.group
            start_s = group.start_s + group.stagger_s * \
                (0 if group.count == 1
                 else int(info.name.rsplit(".", 1)[1]))
            if group.jitter_s > 0:
                start_rng = random.Random(f"start:{self.seed}:{info.name}")
                start_s += start_rng.random() * group.jitter_s
            start_ns = int(start_s * NS_PER_S)
            if info.kind in ("flat_udp", "shrew"):
                source = _TrainSource(self, info, group, self._next_order())
                source.start_ns = max(start_ns, source.start_ns)
                source.next_emit_ns = source.start_ns
                self.sources.append(source)
                source.start()
                if info.route == "direct" and group.secret == "stolen":
                    steal_ns = int(group.steal_at_s * NS_PER_S)
                    self.loop.schedule(steal_ns, source.order,
                                       source.steal_secret)
            else:
                for flow_idx in range(group.flows):
                    flow = TcpFlow(self.loop, self._next_order(),
                                   self._make_send_fn(info, flow_idx))
                    self.flows.append(flow)
                    self.loop.schedule(start_ns + flow_idx * 5 * NS_PER_MS,
                                       flow.order, flow.start)

    def _make_send_fn(self, info: SenderInfo, flow_idx: int):
        mbox = self.mboxes[info.mbox]

        def send(flow: TcpFlow, seq: int) -> None:
            pkt = SimPacket("data_tcp", info.name, info.f,
                            size=MSS + TCP_HEADER, payload=MSS,
                            flow=flow, flow_idx=flow_idx, seq=seq)
            self.loop.schedule(self.loop.now_ns + self.sender_leg_ns,
                               flow.order, mbox.on_packet, pkt)
        return send

    # ------------------------------------------------------------- routing

    def router_ingress(self, pkt: SimPacket, bottleneck_idx: int) -> None:
        if pkt.dest == "victim" and self.acl is not None:
            ports = pkt.ports
            if ports is None or not self.acl.check_ports(
                    ports >> 16, ports & 0xFFFF,
                    self.loop.now_ns // NS_PER_MS):
                self.acl_rejected += pkt.count
                return
        self.bottlenecks[bottleneck_idx].send(pkt)

    # ------------------------------------------------------------- metrics

    def _make_rollover(self, mbox_idx: int):
        result = self.result

        def hook(policer, entry, now_ms, w_r_old, recent, n_loss):
            victim = self.victim
            f = entry.f
            pkts = victim.delivered_pkts.get(f, 0)
            bts = victim.delivered_bytes.get(f, 0)
            last_p, last_b = self._last_delivered.get(f, (0, 0))
            self._last_delivered[f] = (pkts, bts)
            period_pkts = pkts - last_p
            window = window_size(w_r_old, period_pkts)
            result.period_rows.append(PeriodRow(
                time_ms=now_ms, mbox=mbox_idx, sender=self.name_of[f],
                as_id=entry.as_id,
                role=result.senders[self.name_of[f]].role,
                period=entry.period_index, w_r=w_r_old, w_r_next=entry.w_r,
                n_r=entry.n_r, n_d=entry.n_d, llr=entry.l_r,
                recent_loss=recent, delivered_pkts=period_pkts,
                delivered_bytes=bts - last_b, window_pkts=window,
                window_norm=window / self.norm_pkts))
        return hook

    # ------------------------------------------------------------- running

    def run(self) -> RunResult:
        self.loop.run(int(self.scenario.duration_s * NS_PER_S))
        result = self.result
        result.events = self.loop.dispatched
        for mbox in self.mboxes:
            for cycle, t_ms, slr in mbox.policer.slr_samples:
                result.slr_rows.append((mbox.idx, cycle, t_ms, slr))
        for link in self.bottlenecks + self.reverse_links:
            result.link_rows.append(link.stats())
        for info in self.infos:
            result.delivered[info.name] = (
                self.victim.delivered_pkts.get(info.f, 0),
                self.victim.delivered_bytes.get(info.f, 0))
        counters = result.counters
        gate = self.victim.gate
        counters["bypass_packets"] = gate.bypass_total
        counters["delivered_distinct"] = gate.delivered_distinct
        counters["delivered_common"] = gate.delivered_common
        counters["acl_rejected"] = self.acl_rejected
        counters["rekeys"] = self.victim.rekeys
        counters["scheduled_rotations"] = self.victim.rotations
        counters["sink_pkts"] = self.victim.sink_pkts
        for mbox in self.mboxes:
            prefix = f"mbox{mbox.idx}"
            counters[f"{prefix}_policer_dropped"] = mbox.policer_dropped
            counters[f"{prefix}_queue_drops"] = mbox.queue_drops
            counters[f"{prefix}_feedback_frames"] = \
                mbox.policer.feedback_accepted
            for reason, n in sorted(mbox.policer.feedback_discards.items()):
                counters[f"{prefix}_feedback_discard_{reason}"] = n
        return result


def run_scenario(scenario: Scenario, seed: Optional[int] = None) -> RunResult:
    return Simulation(scenario, seed).run()
