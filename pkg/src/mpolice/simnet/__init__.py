"""Deterministic discrete-event network simulator.

Wires traffic sources, policing boxes, drop-tail links, the receiver gate,
and the bypass filter into runnable scenarios.
"""

from .core import EventLoop, Link, SimPacket, MSS, TCP_HEADER, UDP_HEADER
from .engine import PeriodRow, RunResult, Simulation, run_scenario

__all__ = [
    "EventLoop",
    "Link",
    "MSS",
    "PeriodRow",
    "RunResult",
    "SimPacket",
    "Simulation",
    "TCP_HEADER",
    "UDP_HEADER",
    "run_scenario",
]
