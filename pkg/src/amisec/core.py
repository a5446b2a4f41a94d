"""Shared identifiers, packet header wire format and seeded RNG streams."""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

CONTROL_CENTER = 0
MASTER_SERVER = 1
AUXILIARY_SERVER = 2
DATA_CONCENTRATOR = 3
FIRST_METER_ID = 10
TICKS_PER_SECOND = 1000  # one tick is one millisecond

HEADER_VERSION = 1
# version, msg_type, sender, session, seq_index, total_blocks, payload_len, send_time
_HEADER = struct.Struct(">BBIIHHHQ")
HEADER_SIZE = _HEADER.size  # 24

_U16 = 0xFFFF
_U32 = 0xFFFFFFFF
_U64 = 0xFFFFFFFFFFFFFFFF


class WireError(ValueError):
    pass


class EncodingError(WireError):
    pass


class MalformedPacketError(WireError):
    pass


class TruncatedPacketError(WireError):
    pass


class MsgType(enum.IntEnum):
    KEY_REQUEST = 0
    PUBLIC_KEY = 1
    PRIVATE_KEY_DIST = 2
    SEQUENCE_CIPHER = 3
    SEQUENCE_FORWARD = 4
    DATA_BLOCK = 5
    ATTACH_REQUEST = 6
    ATTACH_APPROVAL = 7
    ALERT = 8


def is_meter(node_id: int) -> bool:
    return node_id >= FIRST_METER_ID


@dataclass(frozen=True)
class PacketHeader:
    msg_type: MsgType
    sender: int
    session: int
    seq_index: int = 0
    total_blocks: int = 0
    payload_len: int = 0
    send_time: int = 0
    version: int = HEADER_VERSION

    def validate(self) -> None:
        checks = (
            ("version", self.version, 0xFF),
            ("sender", self.sender, _U32),
            ("session", self.session, _U32),
            ("seq_index", self.seq_index, _U16),
            ("total_blocks", self.total_blocks, _U16),
            ("payload_len", self.payload_len, _U16),
            ("send_time", self.send_time, _U64),
        )
        for name, value, hi in checks:
            if not 0 <= value <= hi:
                raise EncodingError(f"{name}={value} out of range [0, {hi}]")
        if self.msg_type == MsgType.DATA_BLOCK and self.seq_index >= self.total_blocks:
            raise EncodingError(
                f"seq_index {self.seq_index} must be < total_blocks {self.total_blocks}")


def encode_header(h: PacketHeader, payload: bytes | None = None) -> bytes:
    """Pack ``h`` into the fixed big-endian header layout.

    When ``payload`` is given its length must equal ``h.payload_len``.
    """
    h.validate()
    if payload is not None and len(payload) != h.payload_len:
        raise EncodingError(
            f"payload_len={h.payload_len} but payload has {len(payload)} bytes")
    return _HEADER.pack(h.version, int(h.msg_type), h.sender, h.session, h.seq_index,
                        h.total_blocks, h.payload_len, h.send_time)


def decode_header(b: bytes) -> PacketHeader:
    if len(b) < HEADER_SIZE:
        raise TruncatedPacketError(f"need {HEADER_SIZE} header bytes, got {len(b)}")
    version, mtype, sender, session, seq, total, plen, t = _HEADER.unpack_from(b)
    try:
        msg_type = MsgType(mtype)
    except ValueError:
        raise MalformedPacketError(f"unknown msg_type 0x{mtype:02X}") from None
    h = PacketHeader(msg_type, sender, session, seq, total, plen, t, version)
    if msg_type == MsgType.DATA_BLOCK and seq >= total:
        raise MalformedPacketError(f"seq_index {seq} >= total_blocks {total}")
    return h


def encode_frame(h: PacketHeader, payload: bytes = b"") -> bytes:
    return encode_header(h, payload) + payload


def decode_frame(frame: bytes) -> tuple[PacketHeader, bytes]:
    h = decode_header(frame)
    payload = frame[HEADER_SIZE:]
    if len(payload) != h.payload_len:
        raise TruncatedPacketError(
            f"payload_len={h.payload_len} but frame carries {len(payload)} bytes")
    return h, payload


def trace_line(tick: int, frame: bytes) -> str:
    return f"{tick} {frame.hex()}"


def parse_trace_line(line: str) -> tuple[int, bytes]:
    tick, hexframe = line.split()
    return int(tick), bytes.fromhex(hexframe)


class Stream(enum.IntEnum):
    """Purpose-specific stream ids; each purpose draws from its own generator."""
    CRYPTO = 1
    SEQUENCER = 2
    NOISE = 3
    PSO = 4
    DATA = 5
    NETWORK = 6
    ADVERSARY = 7


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream addressed by (seed, stream_id[, sub-keys]).

    Equal addresses give equal draw sequences; ``child`` derives independent
    sub-streams (per trial, per meter, ...) without touching the parent.
    """
    seed: int
    stream_id: int
    path: tuple[int, ...] = field(default=())

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed) & _U64,
                                    spawn_key=(int(self.stream_id),) + self.path)
        return np.random.Generator(np.random.PCG64(ss))


def streams(seed: int) -> dict[Stream, RngStream]:
    return {s: RngStream(seed, int(s)) for s in Stream}
