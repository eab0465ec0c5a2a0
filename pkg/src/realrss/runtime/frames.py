"""Wire frames and the JSON-lines frame log.

Header layout (23 bytes, little-endian)::

    magic "PMLP" | version u8 | session_id u64 | protocol_tag u16 |
    round_index u16 | sender u8 | receiver u8 | payload_len u32

followed by ``payload_len`` bytes of little-endian float64 values.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from ..errors import ProtocolError, SessionError
from .stats import RoundStats

MAGIC = b"PMLP"
VERSION = 1
HEADER = struct.Struct("<4sBQHHBBI")

# Stable numeric tags for the outermost protocol of an invocation.
PROTOCOL_TAGS = {
    "raw": 0,
    "hello": 1,
    "setup": 2,
    "share": 3,
    "reconstruct": 4,
    "mul": 5,
    "add2mul": 6,
    "mul2add": 7,
    "relu": 8,
    "softmax": 9,
    "checkpoint": 10,
    "reconstruct_mul": 11,
    "reshare": 12,
}
TAG_NAMES = {v: k for k, v in PROTOCOL_TAGS.items()}


@dataclass(frozen=True)
class Frame:
    session_id: int
    protocol_tag: int
    round_index: int
    sender: int
    receiver: int
    payload: bytes
    version: int = VERSION

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    def header_bytes(self) -> bytes:
        return HEADER.pack(MAGIC, self.version, self.session_id, self.protocol_tag,
                           self.round_index, self.sender, self.receiver, len(self.payload))

    def encode(self) -> bytes:
        return self.header_bytes() + self.payload

    def matrix(self, shape: tuple[int, int]) -> np.ndarray:
        expected = shape[0] * shape[1] * 8
        if len(self.payload) != expected:
            raise ProtocolError(
                f"frame from P{self.sender} carries {len(self.payload)} bytes, expected {expected}")
        return np.frombuffer(self.payload, dtype="<f8").reshape(shape).astype(np.float64)


def encode_matrix(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def decode_header(buf: bytes) -> tuple[int, int, int, int, int, int, int]:
    magic, version, session_id, tag, rnd, sender, receiver, plen = HEADER.unpack(buf)
    if magic != MAGIC:
        raise SessionError(f"bad frame magic {magic!r}")
    if version != VERSION:
        raise SessionError(f"protocol version mismatch: peer speaks v{version}, we speak v{VERSION}")
    if plen % 8:
        raise SessionError(f"payload length {plen} is not a multiple of 8")
    return version, session_id, tag, rnd, sender, receiver, plen


def read_frame(stream: IO[bytes]) -> Frame:
    """Read one frame from a binary stream (e.g. ``socket.makefile('rb')``)."""
    head = stream.read(HEADER.size)
    if len(head) < HEADER.size:
        raise SessionError("peer closed the connection")
    version, session_id, tag, rnd, sender, receiver, plen = decode_header(head)
    payload = stream.read(plen)
    if len(payload) < plen:
        raise SessionError("truncated frame payload")
    return Frame(session_id, tag, rnd, sender, receiver, payload, version)


def log_record(frame: Frame, invocation: int, protocol: str) -> dict:
    return {
        "session": frame.session_id,
        "invocation": invocation,
        "protocol": protocol,
        "tag": frame.protocol_tag,
        "round": frame.round_index,
        "sender": frame.sender,
        "receiver": frame.receiver,
        "payload_len": frame.payload_len,
        "sha256": hashlib.sha256(frame.payload).hexdigest(),
    }


def dump_log(records: Iterable[dict], fh: IO[str]) -> None:
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_log(fh: IO[str]) -> list[dict]:
    return [json.loads(line) for line in fh if line.strip()]


def replay_stats(records: Iterable[dict]) -> list[RoundStats]:
    """Rebuild per-invocation RoundStats from frame-log records."""
    by_inv: dict[int, RoundStats] = {}
    rounds: dict[int, set[int]] = {}
    for rec in records:
        inv = rec["invocation"]
        st = by_inv.setdefault(inv, RoundStats(rec["protocol"]))
        st.bytes_total += rec["payload_len"]
        rounds.setdefault(inv, set()).add(rec["round"])
    for inv, st in by_inv.items():
        st.rounds = max(rounds[inv]) + 1
    return [by_inv[k] for k in sorted(by_inv)]
