"""Capability frames: generation, encoding, and verification.

A capability is a 40-byte trailer stamped onto forwarded packets. Distinct
capabilities identify one privileged packet of one sender inside the current
accounting period and are echoed back by the receiver; common capabilities
only prove the packet crossed a policing box. Both carry a 16-byte
authentication tag so receivers can reject forged or tampered trailers.

Frame layout (big-endian, 40 bytes total):

    byte 0      version (0x01)
    byte 1      type tag (0x01 distinct, 0x02 common)
    bytes 2-5   policing-box address (u32)
    bytes 6-9   issue timestamp, simulated ms (u32)
    distinct only:
    bytes 10-11 per-period capability id (u16, first id is 1)
    bytes 12-19 sender id (u64)
    bytes 20-23 accounting-period start, simulated ms (u32)
    common: bytes 10-23 are zero
    bytes 24-39 MAC tag

The MAC is AES-128 CBC-MAC with zero IV over the frame's payload fields in
declaration order; messages are zero-padded to a 16-byte multiple and the
unpadded bit length is appended as a final 16-byte block. Any object with a
``tag(message) -> 16 bytes`` method can replace the default scheme.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

FRAME_LEN = 40
MAC_LEN = 16
VERSION = 0x01
TAG_DISTINCT = 0x01
TAG_COMMON = 0x02

_U32 = 0xFFFFFFFF
_U16 = 0xFFFF
_U64 = 0xFFFFFFFFFFFFFFFF

# payload field packing, shared by encode and the MAC message builders
_DISTINCT_FIELDS = struct.Struct(">IIHQI")   # ip_mp, ts, p_id, f, t_a
_COMMON_FIELDS = struct.Struct(">II")        # ip_mp, ts
_DISTINCT_PREFIX = struct.Struct(">BBIIHQI")
_COMMON_PREFIX = struct.Struct(">BBII")


class Verdict(enum.Enum):
    VALID = "valid"
    STALE = "stale"
    FORGED = "forged"
    MALFORMED = "malformed"


class DecodeError(ValueError):
    """Frame rejected before or during authentication.

    ``reason`` is one of "length", "version", "tag", "padding", "mac".
    """

    def __init__(self, reason: str):
        super().__init__(f"capability frame rejected: {reason}")
        self.reason = reason


def pad_for_mac(message: bytes) -> bytes:
    """Zero-pad to a 16-byte multiple, then append the bit length block."""
    pad = (-len(message)) % 16
    return message + bytes(pad) + (len(message) * 8).to_bytes(16, "big")


class AesCbcMac:
    """AES-128 CBC-MAC with a zero IV, 16-byte tags.

    One stateless ECB context is reused for every message; the CBC chain is
    applied here. Output is identical to encrypting the padded message under
    CBC and keeping the last block.
    """

    def __init__(self, key: bytes):
        if not isinstance(key, (bytes, bytearray)) or len(key) != 16:
            raise ValueError("MAC key must be exactly 16 bytes")
        if not any(key):
            raise ValueError("MAC key must not be all zero")
        self.key = bytes(key)
        self._ecb = Cipher(algorithms.AES(self.key), modes.ECB()).encryptor()

    def tag(self, message: bytes) -> bytes:
        padded = pad_for_mac(message)
        enc = self._ecb.update
        int_from = int.from_bytes
        block = enc(padded[0:16])
        for off in range(16, len(padded), 16):
            mixed = int_from(block, "big") ^ int_from(padded[off:off + 16], "big")
            block = enc(mixed.to_bytes(16, "big"))
        return block

    # ECB contexts hold no chaining state but are not picklable; rebuild.
    def __getstate__(self):
        return self.key

    def __setstate__(self, key):
        self.__init__(key)


@dataclass(frozen=True)
class DistinctCapability:
    ip_mp: int     # policing-box address
    ts: int        # issue time, ms
    p_id: int      # per-period capability id, >= 1
    f: int         # sender id
    t_a: int       # accounting-period start, ms
    mac: bytes


@dataclass(frozen=True)
class CommonCapability:
    ip_mp: int
    ts: int
    mac: bytes


def _check_u32(value: int, name: str) -> None:
    if not 0 <= value <= _U32:
        raise ValueError(f"{name} out of u32 range: {value}")


def distinct_frame(mac: AesCbcMac, ip_mp: int, ts: int, p_id: int, f: int,
                   t_a: int) -> bytes:
    """Build an encoded distinct capability directly (hot path)."""
    tag = mac.tag(_DISTINCT_FIELDS.pack(ip_mp, ts, p_id, f, t_a))
    return _DISTINCT_PREFIX.pack(VERSION, TAG_DISTINCT, ip_mp, ts, p_id, f,
                                 t_a) + tag


def common_frame(mac: AesCbcMac, ip_mp: int, ts: int) -> bytes:
    """Build an encoded common capability directly (hot path)."""
    tag = mac.tag(_COMMON_FIELDS.pack(ip_mp, ts))
    return _COMMON_PREFIX.pack(VERSION, TAG_COMMON, ip_mp, ts) + bytes(14) + tag


def generate_distinct(mac: AesCbcMac, ip_mp: int, ts: int, p_id: int, f: int,
                      t_a: int) -> DistinctCapability:
    _check_u32(ip_mp, "ip_mp")
    _check_u32(ts, "ts")
    _check_u32(t_a, "t_a")
    if not 1 <= p_id <= _U16:
        raise ValueError(f"p_id must be in [1, {_U16}]: {p_id}")
    if not 0 <= f <= _U64:
        raise ValueError(f"sender id out of u64 range: {f}")
    tag = mac.tag(_DISTINCT_FIELDS.pack(ip_mp, ts, p_id, f, t_a))
    return DistinctCapability(ip_mp, ts, p_id, f, t_a, tag)


def generate_common(mac: AesCbcMac, ip_mp: int, ts: int) -> CommonCapability:
    _check_u32(ip_mp, "ip_mp")
    _check_u32(ts, "ts")
    return CommonCapability(ip_mp, ts, mac.tag(_COMMON_FIELDS.pack(ip_mp, ts)))


def encode(cap) -> bytes:
    if isinstance(cap, DistinctCapability):
        return _DISTINCT_PREFIX.pack(VERSION, TAG_DISTINCT, cap.ip_mp, cap.ts,
                                     cap.p_id, cap.f, cap.t_a) + cap.mac
    if isinstance(cap, CommonCapability):
        return (_COMMON_PREFIX.pack(VERSION, TAG_COMMON, cap.ip_mp, cap.ts)
                + bytes(14) + cap.mac)
    raise TypeError(f"not a capability: {cap!r}")


def decode(frame: bytes, mac: AesCbcMac):
    """Parse and authenticate a 40-byte frame.

    Returns the capability object; raises DecodeError naming the first
    check that failed. The MAC is always verified before fields are trusted.
    """
    if len(frame) != FRAME_LEN:
        raise DecodeError("length")
    if frame[0] != VERSION:
        raise DecodeError("version")
    kind = frame[1]
    if kind == TAG_DISTINCT:
        ip_mp, ts, p_id, f, t_a = _DISTINCT_FIELDS.unpack_from(frame, 2)
        if mac.tag(frame[2:24]) != frame[24:40]:
            raise DecodeError("mac")
        return DistinctCapability(ip_mp, ts, p_id, f, t_a, frame[24:40])
    if kind == TAG_COMMON:
        if any(frame[10:24]):
            # the pad region is outside the MAC, so it must be structurally zero
            raise DecodeError("padding")
        ip_mp, ts = _COMMON_FIELDS.unpack_from(frame, 2)
        if mac.tag(frame[2:10]) != frame[24:40]:
            raise DecodeError("mac")
        return CommonCapability(ip_mp, ts, frame[24:40])
    raise DecodeError("tag")


def verify(mac: AesCbcMac, frame: bytes, now: int,
           replay_window_ms: float = 1000) -> Verdict:
    """Classify a frame as valid, stale, forged, or malformed.

    ``now`` and the frame's issue timestamp are simulated milliseconds; a
    frame older than ``replay_window_ms`` is stale even when authentic.
    """
    if replay_window_ms <= 0:
        raise ValueError("replay window must be positive")
    try:
        cap = decode(frame, mac)
    except DecodeError as err:
        return Verdict.FORGED if err.reason == "mac" else Verdict.MALFORMED
    if now - cap.ts > replay_window_ms:
        return Verdict.STALE
    return Verdict.VALID
