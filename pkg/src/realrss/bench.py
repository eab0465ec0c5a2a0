"""Protocol benchmarks: timing, exact traffic and precision against plaintext."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import protocols
from .errors import ConfigurationError, RssError
from .runtime import Cluster, NetProfile
from .sharing import DEFAULT_RANGE
from .tensor import RandomRange

PROTOCOLS = ("matmul", "hadamard", "relu", "softmax")


@dataclass
class BenchSpec:
    protocol: str
    sizes: list[int]
    repetitions: int = 10
    exponent_span: int = 0

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigurationError(f"unknown protocol {self.protocol!r}; choose from {PROTOCOLS}")
        if not self.sizes or any(n < 1 for n in self.sizes):
            raise ConfigurationError("sizes must be a non-empty list of positive integers")
        if self.repetitions < 1 or self.exponent_span < 0:
            raise ConfigurationError("repetitions must be >= 1 and exponent_span >= 0")


@dataclass
class BenchRow:
    protocol: str
    n: int
    exponent_span: int
    mean_ms: float
    bytes: int
    bits: int
    rounds: int
    mre: float
    finite: bool = True
    error: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def random_matrix(rng: np.random.Generator, rows: int, cols: int, span: int) -> np.ndarray:
    """Elements ``+-a0.a1...a15 x 10^d`` with a0 in 1..9, d uniform in [-span, span]."""
    lead = rng.integers(1, 10, size=(rows, cols))
    frac = rng.integers(0, 10 ** 15, size=(rows, cols)) / 1e15
    expo = rng.integers(-span, span + 1, size=(rows, cols))
    sign = rng.choice([-1.0, 1.0], size=(rows, cols))
    return sign * (lead + frac) * 10.0 ** expo


def mean_relative_error(secure: np.ndarray, plain: np.ndarray) -> float:
    """Mean of ``|secure - plain| / |plain|``; where ``plain`` is exactly 0 the
    absolute error is used instead."""
    err = np.abs(secure - plain)
    denom = np.abs(plain)
    with np.errstate(over="ignore"):
        rel = np.where(denom > 0, err / np.where(denom > 0, denom, 1.0), err)
        return float(rel.mean())


def softmax_plain(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _oracle(protocol: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if protocol == "matmul":
        return x @ y
    if protocol == "hadamard":
        return x * y
    if protocol == "relu":
        return np.maximum(x, 0.0)
    return softmax_plain(x)


def run_once(cl: Cluster, protocol: str, x: np.ndarray, y: np.ndarray):
    """Share inputs, run one protocol invocation, open the result, and return
    ``(secure_output, plain_output, stats, seconds)``. Time and stats cover
    the protocol invocation only, not sharing or opening."""
    xs = cl.share(x, owner=0)
    ys = cl.share(y, owner=1) if protocol in ("matmul", "hadamard") else None
    t0 = time.perf_counter()
    if protocol == "matmul":
        out = cl.run(protocols.matmul, xs, ys)
    elif protocol == "hadamard":
        out = cl.run(protocols.hadamard, xs, ys)
    elif protocol == "relu":
        out = cl.run(protocols.relu, xs)[1]
    else:
        out = cl.run(protocols.softmax, xs)
    dt = time.perf_counter() - t0
    stats = cl.last_stats()
    return cl.reveal(out, "all", label="bench"), _oracle(protocol, x, y), stats, dt


def bench(spec: BenchSpec, seed: int = 0, profile: NetProfile = NetProfile(),
          randomness_range: RandomRange = DEFAULT_RANGE, mode: str = "inprocess",
          progress: Optional[Callable[[BenchRow], None]] = None, session=None) -> list[BenchRow]:
    """Benchmark ``spec``. By default each size gets a fresh session
    (``mode`` "inprocess" or "loopback"); pass ``session`` to reuse an
    existing one, for example a single socket party."""
    rows = []
    data_rng = np.random.default_rng(seed)
    factory = Cluster.inprocess if mode == "inprocess" else Cluster.loopback
    for n in spec.sizes:
        if session is None:
            seeds = np.random.default_rng([seed, n]).integers(0, 2 ** 63, size=3)
            cl = factory(seeds=[int(s) for s in seeds], randomness_range=randomness_range, profile=profile)
        else:
            cl = session
        times, mres = [], []
        stats = None
        finite, error = True, ""
        try:
            for _ in range(spec.repetitions):
                x = random_matrix(data_rng, n, n, spec.exponent_span)
                y = random_matrix(data_rng, n, n, spec.exponent_span)
                try:
                    sec, plain, stats, dt = run_once(cl, spec.protocol, x, y)
                except RssError as exc:
                    finite, error = False, f"{type(exc).__name__}: {exc}"
                    break
                finite = finite and bool(np.all(np.isfinite(sec)))
                times.append(dt * 1e3)
                mres.append(mean_relative_error(sec, plain))
        finally:
            if session is None:
                cl.close()
        row = BenchRow(
            protocol=spec.protocol, n=n, exponent_span=spec.exponent_span,
            mean_ms=float(np.mean(times)) if times else float("nan"),
            bytes=stats.bytes_total if stats else 0,
            bits=stats.bits_total if stats else 0,
            rounds=stats.rounds if stats else 0,
            mre=float(np.mean(mres)) if mres and not error else float("nan"),
            finite=finite and not error, error=error)
        rows.append(row)
        if progress:
            progress(row)
    return rows
