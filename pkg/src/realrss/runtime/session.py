"""Party engines and the three-party session driver."""
from __future__ import annotations

import secrets
import socket
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from contextlib import contextmanager
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from .. import sharing
from ..errors import ProtocolError, SessionError
from ..tensor import RandomRange, as_matrix
from .frames import PROTOCOL_TAGS, Frame, encode_matrix, log_record
from .stats import RoundStats, StatsTotals
from .transport import InProcessHub, NetProfile, SocketTransport, Transport


class Party:
    """One party's protocol engine.

    All communication goes through :meth:`exchange`, which is exactly one
    round: send every outgoing matrix, then block for every expected one.
    Traffic is attributed to every protocol scope currently open, and frame
    headers carry the tag and round index of the outermost scope.
    """

    def __init__(self, index: int, transport: Transport, session_id: int = 0):
        self.id = index
        self.transport = transport
        self.session_id = session_id
        self.ctx: Optional[sharing.PartyContext] = None
        self.invocations: list[RoundStats] = []
        self.frame_log: list[dict] = []
        self.reveal_log: list[dict] = []
        self.rounds_done = 0
        self._stack: list[RoundStats] = []
        self._invocation = -1

    @property
    def prev(self) -> int:
        return (self.id - 1) % 3

    @property
    def next(self) -> int:
        return (self.id + 1) % 3

    @contextmanager
    def protocol(self, name: str):
        st = RoundStats(name)
        if not self._stack:
            self._invocation += 1
        self._stack.append(st)
        try:
            yield st
        finally:
            self._stack.pop()
            if not self._stack:
                self.invocations.append(st)

    def exchange(self, sends: Mapping[int, Sequence[np.ndarray]],
                 expect: Mapping[int, Sequence[tuple[int, int]]]) -> dict[int, list[np.ndarray]]:
        if not self._stack:
            with self.protocol("raw"):
                return self.exchange(sends, expect)
        outer = self._stack[0]
        tag = PROTOCOL_TAGS.get(outer.protocol_name, 0)
        rnd = outer.rounds
        if rnd > 0xFFFF:
            raise ProtocolError("round index overflows the frame header")
        sent = 0
        for peer in sorted(sends):
            for mat in sends[peer]:
                frame = Frame(self.session_id, tag, rnd, self.id, peer, encode_matrix(mat))
                self.transport.send(frame)
                self.frame_log.append(log_record(frame, self._invocation, outer.protocol_name))
                sent += frame.payload_len
        got: dict[int, list[np.ndarray]] = {}
        for peer in sorted(expect):
            got[peer] = []
            for shape in expect[peer]:
                frame = self.transport.recv(peer)
                if frame.protocol_tag != tag or frame.round_index != rnd:
                    raise ProtocolError(
                        f"P{self.id}: expected tag {tag} round {rnd} from P{peer}, got "
                        f"tag {frame.protocol_tag} round {frame.round_index}")
                got[peer].append(frame.matrix(tuple(shape)))
        self.transport.end_round()
        for st in self._stack:
            st.rounds += 1
            st.bytes_total += sent
        self.rounds_done += 1
        return got


class Shared:
    """Driver-side bundle of the three parties' local values of one object."""

    __slots__ = ("parts",)

    def __init__(self, parts: Sequence[Any]):
        if len(parts) != 3:
            raise ValueError("a Shared value needs exactly three parts")
        self.parts = tuple(parts)

    def __getitem__(self, i: int):
        return self.parts[i]

    def __iter__(self):
        return iter(self.parts)

    @property
    def shape(self):
        return next(p for p in self.parts if p is not None).shape

    def plaintext(self) -> np.ndarray:
        """Test oracle only: combine all three views without running a protocol."""
        return sharing.combine(self.parts)

    def __repr__(self):
        return f"Shared({type(self.parts[0]).__name__}, shape={getattr(self.parts[0], 'shape', None)})"


def _wrap(results: list[Any]) -> Any:
    if all(r is None for r in results):
        return None
    first = next(r for r in results if r is not None)
    if isinstance(first, (tuple, list)):
        out = [_wrap([None if r is None else r[k] for r in results]) for k in range(len(first))]
        return tuple(out) if isinstance(first, tuple) else out
    return Shared(results)


def _unwrap(arg: Any, p: int) -> Any:
    if isinstance(arg, Shared):
        return arg.parts[p]
    if isinstance(arg, (list, tuple)) and arg and any(isinstance(a, Shared) for a in arg):
        return type(arg)(_unwrap(a, p) for a in arg)
    return arg


class Cluster:
    """Drives all three parties, each on its own worker thread.

    ``run(fn, *args)`` calls ``fn(party, *args_p)`` on every party, where a
    :class:`Shared` argument is replaced by that party's part. Results come
    back as :class:`Shared` bundles. Any failure aborts the session.
    """

    def __init__(self, parties: list[Party], hub: Optional[InProcessHub] = None):
        self.parties = parties
        self.hub = hub
        self.invocations: list[RoundStats] = []
        self._seen = 0
        self.broken = False
        self._pools = [ThreadPoolExecutor(1, thread_name_prefix=f"P{i}") for i in range(3)]

    # -- construction ----------------------------------------------------------

    @classmethod
    def inprocess(cls, seeds: Optional[Sequence[int]] = None,
                  randomness_range: RandomRange = sharing.DEFAULT_RANGE,
                  profile: NetProfile = NetProfile(), timeout: float = 30.0,
                  session_id: int = 0) -> "Cluster":
        hub = InProcessHub(profile, timeout)
        parties = [Party(i, hub.transport(i), session_id) for i in range(3)]
        cl = cls(parties, hub)
        cl._setup(seeds, randomness_range)
        return cl

    @classmethod
    def loopback(cls, seeds: Optional[Sequence[int]] = None,
                 randomness_range: RandomRange = sharing.DEFAULT_RANGE,
                 profile: NetProfile = NetProfile(), timeout: float = 30.0,
                 session_id: int = 0, host: str = "127.0.0.1") -> "Cluster":
        """Three parties in this process, talking over real TCP sockets."""
        listeners = [socket.create_server((host, 0)) for _ in range(3)]
        addrs = [ls.getsockname()[:2] for ls in listeners]
        with ThreadPoolExecutor(3) as pool:
            futs = [pool.submit(SocketTransport, i, addrs, session_id, profile, timeout, listeners[i])
                    for i in range(3)]
            transports = [f.result() for f in futs]
        cl = cls([Party(i, transports[i], session_id) for i in range(3)])
        cl._setup(seeds, randomness_range)
        return cl

    def _setup(self, seeds, randomness_range):
        if seeds is None:
            seeds = [secrets.randbits(64) for _ in range(3)]
        if len(seeds) != 3:
            raise ValueError("need one seed per party")
        self.run_each(lambda p: sharing.setup(p, int(seeds[p.id]), randomness_range))

    # -- execution --------------------------------------------------------------

    def run_each(self, fn: Callable[[Party], Any]) -> list[Any]:
        """Run ``fn(party)`` on all parties; return the raw per-party results."""
        if self.broken:
            raise SessionError("session was aborted by an earlier failure")
        futs = [self._pools[i].submit(fn, self.parties[i]) for i in range(3)]
        done, _ = wait(futs, return_when=FIRST_EXCEPTION)
        if any(f.exception() is not None for f in done):
            self._abort()
            wait(futs)
        errors = [f.exception() for f in futs if f.exception() is not None]
        if errors:
            self.broken = True
            primary = next((e for e in errors if not isinstance(e, SessionError)), errors[0])
            raise primary
        self._collect_stats()
        return [f.result() for f in futs]

    def run(self, fn: Callable, *args, **kwargs) -> Any:
        def task(p: Party):
            return fn(p, *[_unwrap(a, p.id) for a in args],
                      **{k: _unwrap(v, p.id) for k, v in kwargs.items()})
        return _wrap(self.run_each(task))

    def _abort(self):
        if self.hub is not None:
            self.hub.abort()
        else:
            for p in self.parties:
                p.transport.abort()

    def _collect_stats(self):
        n = min(len(p.invocations) for p in self.parties)
        for k in range(self._seen, n):
            self.invocations.append(RoundStats.merge([p.invocations[k] for p in self.parties]))
        self._seen = n

    # -- conveniences -------------------------------------------------------------

    def share(self, x, owner: int = 0) -> Shared:
        x = as_matrix(x)
        return self.run_each_shared(
            lambda p: sharing.share(p, owner, x if p.id == owner else None, x.shape))

    def run_each_shared(self, fn: Callable[[Party], Any]) -> Any:
        return _wrap(self.run_each(fn))

    def reveal(self, sh: Shared, target="all", label: Optional[str] = None) -> np.ndarray:
        """Open an additive or multiplicative sharing and return the plaintext
        as seen by the first target party."""
        kind = sh.parts[0]
        fn = sharing.reconstruct_mul if isinstance(kind, sharing.MultiplicativeShare) else sharing.reconstruct
        out = self.run(fn, sh, target, label)
        return next(v for v in out.parts if v is not None)

    def checkpoint(self) -> None:
        self.run_each(sharing.checkpoint)

    def last_stats(self) -> RoundStats:
        return self.invocations[-1]

    def totals(self, since: int = 0) -> StatsTotals:
        t = StatsTotals()
        for st in self.invocations[since:]:
            t.add(st)
        return t

    def frame_log(self) -> list[dict]:
        recs = [r for p in self.parties for r in p.frame_log]
        return sorted(recs, key=lambda r: (r["invocation"], r["round"], r["sender"], r["receiver"]))

    def close(self) -> None:
        for pool in self._pools:
            pool.shutdown(wait=False)
        for p in self.parties:
            p.transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SoloCluster:
    """One party of a multi-process session, with the driver interface of
    :class:`Cluster`. Results are :class:`Shared` bundles holding only this
    party's view (the other two slots are ``None``). Stats are this party's
    own: rounds as seen locally, bytes it sent."""

    def __init__(self, party: Party):
        self.party = party
        self.broken = False

    @classmethod
    def socket(cls, index: int, addresses, seed: Optional[int] = None,
               randomness_range: RandomRange = sharing.DEFAULT_RANGE,
               profile: NetProfile = NetProfile(), timeout: float = 60.0,
               session_id: int = 0) -> "SoloCluster":
        transport = SocketTransport(index, addresses, session_id, profile, timeout)
        party = Party(index, transport, session_id)
        sharing.setup(party, secrets.randbits(64) if seed is None else int(seed), randomness_range)
        return cls(party)

    @property
    def invocations(self) -> list[RoundStats]:
        return self.party.invocations

    def run_each(self, fn: Callable[[Party], Any]) -> list[Any]:
        if self.broken:
            raise SessionError("session was aborted by an earlier failure")
        out = [None, None, None]
        try:
            out[self.party.id] = fn(self.party)
        except BaseException:
            self.broken = True
            self.party.transport.abort()
            raise
        return out

    def run(self, fn: Callable, *args, **kwargs) -> Any:
        i = self.party.id
        return _wrap(self.run_each(lambda p: fn(p, *[_unwrap(a, i) for a in args],
                                                **{k: _unwrap(v, i) for k, v in kwargs.items()})))

    def run_each_shared(self, fn: Callable[[Party], Any]) -> Any:
        return _wrap(self.run_each(fn))

    def share(self, x, owner: int = 0) -> Shared:
        """Non-owners pass anything with the right ``shape``; only the owner's
        values are read."""
        x = as_matrix(x)
        mine = x if self.party.id == owner else None
        return self.run_each_shared(lambda p: sharing.share(p, owner, mine, x.shape))

    def reveal(self, sh: Shared, target="all", label: Optional[str] = None) -> Optional[np.ndarray]:
        kind = sh.parts[self.party.id]
        fn = sharing.reconstruct_mul if isinstance(kind, sharing.MultiplicativeShare) else sharing.reconstruct
        return self.run(fn, sh, target, label).parts[self.party.id]

    def checkpoint(self) -> None:
        self.run_each(sharing.checkpoint)

    def last_stats(self) -> RoundStats:
        return self.invocations[-1]

    def totals(self, since: int = 0) -> StatsTotals:
        t = StatsTotals()
        for st in self.invocations[since:]:
            t.add(st)
        return t

    def close(self) -> None:
        self.party.transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
