import io
import threading
import time

import numpy as np
import pytest

from realrss import protocols, sharing
from realrss.errors import ProtocolError, SessionError
from realrss.runtime import Cluster, NetProfile, RoundStats, Shared, replay_stats
from realrss.runtime import frames
from realrss.runtime.frames import Frame


def test_frame_encode_decode_roundtrip():
    f = Frame(7, 5, 3, 1, 2, frames.encode_matrix(np.arange(6.0).reshape(2, 3)))
    raw = f.encode()
    assert len(raw) == frames.HEADER.size + 48 and raw[:4] == b"PMLP"
    back = frames.read_frame(io.BytesIO(raw))
    assert back == f
    assert np.array_equal(back.matrix((2, 3)), np.arange(6.0).reshape(2, 3))


def test_frame_rejects_bad_magic_and_version():
    raw = bytearray(Frame(0, 0, 0, 0, 1, b"").encode())
    with pytest.raises(SessionError):
        frames.decode_header(b"XXXX" + bytes(raw[4:]))
    raw[4] = 9
    with pytest.raises(SessionError, match="version"):
        frames.decode_header(bytes(raw))


def test_frame_wrong_payload_size():
    with pytest.raises(ProtocolError):
        Frame(0, 0, 0, 0, 1, b"\0" * 16).matrix((3, 3))


def test_stats_merge():
    m = RoundStats.merge([RoundStats("mul", 1, 10), RoundStats("mul", 1, 20), RoundStats("mul", 1, 30)])
    assert (m.rounds, m.bytes_total, m.bits_total) == (1, 60, 480)
    with pytest.raises(ValueError):
        RoundStats.merge([RoundStats("mul"), RoundStats("relu")])


def test_frame_log_replay_matches_stats(cluster, rng):
    xs = cluster.share(rng.normal(size=(4, 4)))
    mark = len(cluster.invocations)
    cluster.run(protocols.relu, xs)
    cluster.run(protocols.softmax, xs)
    buf = io.StringIO()
    frames.dump_log(cluster.frame_log(), buf)
    buf.seek(0)
    replayed = replay_stats(frames.load_log(buf))
    live = cluster.invocations
    assert [(s.protocol_name, s.rounds, s.bytes_total) for s in replayed[mark:]] == \
        [(s.protocol_name, s.rounds, s.bytes_total) for s in live[mark:]]


def test_round_barrier_separates_rounds(cluster, rng):
    cluster.run(protocols.softmax, cluster.share(rng.normal(size=(3, 3))))
    wire = cluster.hub.wire
    # Every frame of protocol round r is sent before any frame of round r + 1.
    g = [w[0] for w in wire]
    assert g == sorted(g)


def test_failure_aborts_session(cluster):
    def boom(p):
        if p.id == 1:
            raise RuntimeError("party 1 crashed")
        return p.exchange({(p.id + 1) % 3: [np.zeros((1, 1))]}, {(p.id - 1) % 3: [(1, 1)]})

    t0 = time.monotonic()
    with pytest.raises(RuntimeError, match="crashed"):
        cluster.run_each(boom)
    assert time.monotonic() - t0 < 5
    assert cluster.broken
    with pytest.raises(SessionError):
        cluster.share(np.ones((1, 1)))


def test_timeout_raises_session_error():
    cl = Cluster.inprocess(seeds=[1, 2, 3], timeout=0.3)
    try:
        def lonely(p):
            if p.id == 0:
                return p.exchange({}, {1: [(1, 1)]})
            return None
        with pytest.raises(SessionError):
            cl.run_each(lonely)
    finally:
        cl.close()


def test_latency_shaping_per_round():
    with Cluster.inprocess(seeds=[1, 2, 3], profile=NetProfile(rtt_ms=20)) as cl:
        xs = cl.share(np.ones((2, 2)))
        t0 = time.perf_counter()
        cl.run(protocols.hadamard, xs, xs)
        assert time.perf_counter() - t0 >= 0.010


def test_bandwidth_shaping():
    p = NetProfile(rtt_ms=0, bandwidth_bps=1e6)
    assert p.delay_s(1e6) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        NetProfile(rtt_ms=-1)


def test_loopback_matches_inprocess(rng):
    x, y = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
    outs = []
    for make in (Cluster.inprocess, Cluster.loopback):
        with make(seeds=[5, 6, 7]) as cl:
            xs, ys = cl.share(x), cl.share(y, owner=1)
            outs.append([cl.run(protocols.matmul, xs, ys).plaintext(),
                         cl.run(protocols.relu, xs)[1].plaintext(),
                         cl.run(protocols.softmax, xs).plaintext()])
    for a, b in zip(*outs):
        assert np.array_equal(a, b)


def test_loopback_session_id_mismatch():
    import socket
    from concurrent.futures import ThreadPoolExecutor
    from realrss.runtime import SocketTransport

    ls = [socket.create_server(("127.0.0.1", 0)) for _ in range(3)]
    addrs = [l.getsockname()[:2] for l in ls]
    with ThreadPoolExecutor(3) as pool:
        futs = [pool.submit(SocketTransport, i, addrs, 1 if i == 2 else 0, NetProfile(), 2.0, ls[i])
                for i in range(3)]
        errors = [f.exception() for f in futs]
    assert any(isinstance(e, SessionError) for e in errors)


def test_shared_requires_three_parts():
    with pytest.raises(ValueError):
        Shared([1, 2])
