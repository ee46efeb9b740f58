"""Bypass-traffic filtering with a rotating port secret.

Boxes tunnel victim-bound traffic inside IP-in-UDP, hiding a shared 32-bit
secret in the outer port pair (source port carries the high 16 bits,
destination port the low 16). The choke-point ACL admits only exact
matches, so traffic that skipped the boxes has a 2^-32 chance per frame of
guessing its way through. When the receiver's bypass alarm fires (secret
leaked) or a scheduled rotation comes due, a new secret is generated; boxes
switch after a short control delay and the ACL honors the old epoch for one
extra round trip so in-flight frames are not cut off.

Outer frame layout (28 bytes + inner):

    bytes 0-19   IPv4-shaped header: 0x45, tos 0, total length (u16),
                 id/frag zero, ttl 64, proto 17, checksum zero,
                 source address, destination address
    bytes 20-27  UDP header: src port, dst port, length (u16), checksum 0
"""

from __future__ import annotations

import hashlib
import struct
from typing import Optional, Set, Tuple

MTU = 1500
OUTER_OVERHEAD = 28
MAX_INNER = MTU - OUTER_OVERHEAD

_IP_HEADER = struct.Struct(">BBHHHBBHII")
_UDP_HEADER = struct.Struct(">HHHH")


class PortSecret:
    """One epoch's 32-bit port secret."""

    __slots__ = ("value", "epoch")

    def __init__(self, value: int, epoch: int):
        if not 0 <= value <= 0xFFFFFFFF:
            raise ValueError("port secret must fit 32 bits")
        self.value = value
        self.epoch = epoch

    @property
    def src_port(self) -> int:
        return self.value >> 16

    @property
    def dst_port(self) -> int:
        return self.value & 0xFFFF

    def __repr__(self):
        return f"PortSecret(0x{self.value:08x}, epoch={self.epoch})"


class SecretGenerator:
    """Deterministic seeded secret stream; values are never repeated."""

    def __init__(self, seed: int):
        self._seed = seed
        self._counter = 0
        self._used: Set[int] = set()

    def next(self) -> PortSecret:
        epoch = self._counter
        while True:
            material = f"{self._seed}:{self._counter}".encode()
            value = int.from_bytes(hashlib.sha256(material).digest()[:4], "big")
            self._counter += 1
            if value not in self._used:
                self._used.add(value)
                return PortSecret(value, epoch)


def encapsulate(inner: bytes, secret: PortSecret, src_ip: int = 0,
                dst_ip: int = 0) -> bytes:
    """Wrap an inner frame for the tunnel; rejects frames too big to fit."""
    if len(inner) > MAX_INNER:
        raise ValueError(f"inner frame {len(inner)} exceeds "
                         f"{MAX_INNER} (MTU {MTU} minus {OUTER_OVERHEAD})")
    total = 20 + 8 + len(inner)
    ip = _IP_HEADER.pack(0x45, 0, total, 0, 0, 64, 17, 0, src_ip, dst_ip)
    udp = _UDP_HEADER.pack(secret.src_port, secret.dst_port, 8 + len(inner), 0)
    return ip + udp + inner


def decapsulate(frame: bytes) -> Tuple[int, int, bytes]:
    """Return (src_port, dst_port, inner) from an outer frame."""
    if len(frame) < OUTER_OVERHEAD:
        raise ValueError("outer frame shorter than its headers")
    if frame[0] != 0x45 or frame[9] != 17:
        raise ValueError("not a tunnel frame")
    src_port, dst_port, _, _ = _UDP_HEADER.unpack_from(frame, 20)
    return src_port, dst_port, frame[OUTER_OVERHEAD:]


class AclFilter:
    """Choke-point ACL keyed on the rotating port secret.

    ``secret_for_sender`` is what a box must stamp at a given time: the old
    secret until the control delay after a rotation has passed, then the
    new one. ``check_ports`` is the admission test: the current secret
    always passes; the previous epoch passes until control delay plus one
    round trip after the rotation, covering frames already in flight.
    """

    def __init__(self, generator: SecretGenerator, rtt_ms: float,
                 control_delay_ms: float = 5, rotation_s: float = 300):
        if rtt_ms <= 0 or control_delay_ms < 0 or rotation_s <= 0:
            raise ValueError("filter timing parameters must be positive")
        self.generator = generator
        self.rtt_ms = rtt_ms
        self.control_delay_ms = control_delay_ms
        self.rotation_ms = int(rotation_s * 1000)
        self.current = generator.next()
        self.previous: Optional[PortSecret] = None
        self.rotated_at_ms = 0
        self.admitted = 0
        self.rejected = 0
        self.rotations = 0

    # ------------------------------------------------------------ rotation

    def rotate(self, now_ms: int) -> PortSecret:
        """Start a new epoch at ``now_ms``."""
        self.previous = self.current
        self.current = self.generator.next()
        self.rotated_at_ms = now_ms
        self.rotations += 1
        return self.current

    def rotation_due(self, now_ms: int) -> bool:
        return now_ms - self.rotated_at_ms >= self.rotation_ms

    def secret_for_sender(self, now_ms: int) -> PortSecret:
        """The secret boxes stamp at ``now_ms`` (switch after the delay)."""
        if self.previous is not None and \
                now_ms < self.rotated_at_ms + self.control_delay_ms:
            return self.previous
        return self.current

    # ----------------------------------------------------------- admission

    def check_ports(self, src_port: int, dst_port: int, now_ms: int) -> bool:
        value = (src_port << 16) | dst_port
        if value == self.current.value:
            self.admitted += 1
            return True
        prev = self.previous
        if prev is not None and value == prev.value and \
                now_ms <= self.rotated_at_ms + self.control_delay_ms + self.rtt_ms:
            self.admitted += 1
            return True
        self.rejected += 1
        return False

    def check(self, frame: bytes, now_ms: int) -> bool:
        try:
            src_port, dst_port, _ = decapsulate(frame)
        except ValueError:
            self.rejected += 1
            return False
        return self.check_ports(src_port, dst_port, now_ms)
