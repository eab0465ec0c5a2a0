"""Point-to-point links between the three parties.

Two transports share one interface: an in-process hub (queues plus a
three-way round barrier) and TCP sockets carrying :mod:`.frames` frames.
Network shaping is emulated on the receiving side: a frame becomes visible
``rtt/2 + payload_bits/bandwidth`` seconds after it arrived.
"""
from __future__ import annotations

import math
import queue
import socket
import threading
import time
from dataclasses import dataclass
from typing import Optional

from ..errors import SessionError
from .frames import PROTOCOL_TAGS, Frame, read_frame

_ABORT = object()


@dataclass(frozen=True)
class NetProfile:
    rtt_ms: float = 0.0
    bandwidth_bps: float = math.inf

    def __post_init__(self):
        if self.rtt_ms < 0:
            raise ValueError("rtt_ms must be non-negative")
        if not self.bandwidth_bps > 0:
            raise ValueError("bandwidth_bps must be positive")

    @classmethod
    def lan(cls) -> "NetProfile":
        return cls(rtt_ms=0.04, bandwidth_bps=85e9)

    @classmethod
    def wan(cls) -> "NetProfile":
        return cls(rtt_ms=40.0, bandwidth_bps=300e6)

    def delay_s(self, payload_bits: int) -> float:
        d = self.rtt_ms / 2000.0
        if math.isfinite(self.bandwidth_bps):
            d += payload_bits / self.bandwidth_bps
        return d


class Transport:
    party: int
    profile: NetProfile
    timeout: float

    def send(self, frame: Frame) -> None:
        raise NotImplementedError

    def _pop(self, sender: int, deadline: float):
        raise NotImplementedError

    def recv(self, sender: int) -> Frame:
        deadline = time.monotonic() + self.timeout
        item = self._pop(sender, deadline)
        if item is _ABORT:
            raise SessionError(f"P{self.party}: session aborted")
        if isinstance(item, BaseException):
            raise SessionError(f"P{self.party}: link to P{sender} failed: {item}") from item
        arrived, frame = item
        ready = arrived + self.profile.delay_s(frame.payload_len * 8)
        wait = ready - time.monotonic()
        if wait > 0:
            time.sleep(wait)
        return frame

    def end_round(self) -> None:
        pass

    def close(self) -> None:
        pass


class InProcessHub:
    """Shared state of one in-process session: six directed queues, a round
    barrier and the global wire order used to audit round separation."""

    def __init__(self, profile: NetProfile = NetProfile(), timeout: float = 30.0):
        self.profile = profile
        self.timeout = timeout
        self.queues = {(s, r): queue.Queue() for s in range(3) for r in range(3) if s != r}
        self.barrier = threading.Barrier(3)
        self.wire: list[tuple[int, int, int, int]] = []
        self._lock = threading.Lock()
        self.aborted = False

    def transport(self, party: int) -> "InProcessTransport":
        return InProcessTransport(self, party)

    def abort(self) -> None:
        self.aborted = True
        self.barrier.abort()
        for q in self.queues.values():
            q.put(_ABORT)


class InProcessTransport(Transport):
    def __init__(self, hub: InProcessHub, party: int):
        self.hub = hub
        self.party = party
        self.profile = hub.profile
        self.timeout = hub.timeout
        self.global_round = 0

    def send(self, frame: Frame) -> None:
        if self.hub.aborted:
            raise SessionError(f"P{self.party}: session aborted")
        with self.hub._lock:
            self.hub.wire.append((self.global_round, frame.sender, frame.receiver, frame.round_index))
            self.hub.queues[(frame.sender, frame.receiver)].put((time.monotonic(), frame))

    def _pop(self, sender, deadline):
        try:
            return self.hub.queues[(sender, self.party)].get(timeout=max(0.0, deadline - time.monotonic()))
        except queue.Empty:
            raise SessionError(f"P{self.party}: timed out waiting for P{sender}") from None

    def end_round(self) -> None:
        try:
            self.hub.barrier.wait(timeout=self.timeout)
        except threading.BrokenBarrierError:
            raise SessionError(f"P{self.party}: round barrier broken") from None
        self.global_round += 1


class SocketTransport(Transport):
    """Full TCP mesh. Party ``i`` accepts from higher-indexed peers and
    connects to lower-indexed ones; the first frame on every link is a hello
    identifying the connecting party and the session."""

    def __init__(self, party: int, addresses: list[tuple[str, int]], session_id: int = 0,
                 profile: NetProfile = NetProfile(), timeout: float = 30.0,
                 listener: Optional[socket.socket] = None):
        self.party = party
        self.profile = profile
        self.timeout = timeout
        self.session_id = session_id
        self._socks: dict[int, socket.socket] = {}
        self._streams: dict = {}
        self._queues = {j: queue.Queue() for j in range(3) if j != party}
        self._send_locks = {j: threading.Lock() for j in self._queues}
        self._readers: list[threading.Thread] = []
        self._closed = False
        own = listener
        if own is None:
            own = socket.create_server(addresses[party], reuse_port=False)
        try:
            self._connect_mesh(addresses, own)
        finally:
            own.close()
        for j, stream in self._streams.items():
            t = threading.Thread(target=self._reader, args=(j, stream), daemon=True,
                                 name=f"p{party}-from-p{j}")
            t.start()
            self._readers.append(t)

    def _connect_mesh(self, addresses, listener):
        deadline = time.monotonic() + self.timeout
        for j in range(self.party):
            while True:
                try:
                    s = socket.create_connection(addresses[j], timeout=1.0)
                    break
                except OSError:
                    if time.monotonic() > deadline:
                        raise SessionError(f"P{self.party}: cannot reach P{j} at {addresses[j]}")
                    time.sleep(0.05)
            s.settimeout(None)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            hello = Frame(self.session_id, PROTOCOL_TAGS["hello"], 0, self.party, j, b"")
            s.sendall(hello.encode())
            self._socks[j] = s
            self._streams[j] = s.makefile("rb")
        listener.settimeout(max(0.1, deadline - time.monotonic()))
        while len(self._socks) < 2:
            try:
                s, _ = listener.accept()
            except socket.timeout:
                raise SessionError(f"P{self.party}: peers did not connect in time") from None
            s.settimeout(self.timeout)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            stream = s.makefile("rb")
            hello = read_frame(stream)
            if hello.session_id != self.session_id:
                s.close()
                raise SessionError(f"P{self.party}: peer joined session {hello.session_id}")
            if hello.sender in self._socks or hello.sender == self.party or hello.sender > 2:
                s.close()
                raise SessionError(f"P{self.party}: unexpected hello from P{hello.sender}")
            s.settimeout(None)
            self._socks[hello.sender] = s
            self._streams[hello.sender] = stream

    def _reader(self, peer: int, stream) -> None:
        try:
            while True:
                frame = read_frame(stream)
                self._queues[peer].put((time.monotonic(), frame))
        except BaseException as exc:  # noqa: BLE001 - forwarded to the consumer
            if not self._closed:
                self._queues[peer].put(exc)

    def send(self, frame: Frame) -> None:
        try:
            with self._send_locks[frame.receiver]:
                self._socks[frame.receiver].sendall(frame.encode())
        except OSError as exc:
            raise SessionError(f"P{self.party}: send to P{frame.receiver} failed: {exc}") from exc

    def _pop(self, sender, deadline):
        try:
            return self._queues[sender].get(timeout=max(0.0, deadline - time.monotonic()))
        except queue.Empty:
            raise SessionError(f"P{self.party}: timed out waiting for P{sender}") from None

    def abort(self) -> None:
        for q in self._queues.values():
            q.put(_ABORT)

    def close(self) -> None:
        self._closed = True
        for s in self._socks.values():
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            s.close()
