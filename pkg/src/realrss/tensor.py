"""Dense real matrices, element-wise helpers and the seeded counter-mode PRG.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and ndim 2.
Every helper here is a pure function except :func:`prg_draw`, which advances
the counter of the :class:`PrgSeed` it is given.

PRG construction
----------------
Output word ``k`` of seed ``s`` is word ``k % 4`` of the Philox4x64-10 block
computed with key ``s`` and counter ``k // 4`` (``numpy.random.Philox``; the
raw bit stream of this generator is frozen across numpy releases). A word
``w`` maps to a real as ``low + (w >> 11) * (high - low) * 2**-53``, i.e. a
53-bit uniform grid over ``[low, high)``. When ``high - low`` is a power of
two and ``low`` lies on that grid, every draw is exactly representable, so
differences of two draws are exact and zero-sharings sum to exactly 0.0.
A range with a ``quantum`` rounds draws down to multiples of it instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.random import Philox

from .errors import ConfigurationError, DimensionError, DomainError

_TWO_M53 = 2.0 ** -53
_WORDS_PER_BLOCK = 4


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` (scalar, 1-D or 2-D) to a 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(1, -1)
    elif m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError(f"{name} must have positive dimensions, got {m.shape}")
    return m


@dataclass(frozen=True)
class RandomRange:
    low: float
    high: float
    nonzero_floor: float = 0.0
    # When non-zero, draws are multiples of this power of two, so sums and
    # products of a few draws are exact in float64.
    quantum: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise ConfigurationError("random range bounds must be finite")
        if not self.low < self.high:
            raise ConfigurationError(f"empty random range [{self.low}, {self.high}]")
        if self.nonzero_floor < 0 or self.nonzero_floor >= max(abs(self.low), abs(self.high)):
            raise ConfigurationError(
                f"nonzero_floor {self.nonzero_floor} incompatible with [{self.low}, {self.high}]")
        if self.quantum:
            cells = self.width / self.quantum
            if (math.frexp(self.quantum)[0] != 0.5 or not cells.is_integer() or cells > 2 ** 53
                    or math.frexp(cells)[0] != 0.5 or not (self.low / self.quantum).is_integer()):
                raise ConfigurationError(
                    f"quantum {self.quantum} must be a power of two that tiles [{self.low}, {self.high}] "
                    "in a power-of-two number of cells")

    @property
    def width(self) -> float:
        return self.high - self.low

    @classmethod
    def symmetric(cls, half_width: float) -> "RandomRange":
        return cls(-half_width, half_width)

    @classmethod
    def parse(cls, text: str) -> "RandomRange":
        """Parse ``"LO:HI"`` as used on the command line."""
        try:
            lo, hi = text.split(":")
            return cls(float(lo), float(hi))
        except ValueError as exc:
            raise ConfigurationError(f"bad range {text!r}, expected LO:HI") from exc


@dataclass
class PrgSeed:
    """A PRG key plus the index of the next unread 64-bit output word."""

    seed: int
    counter: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    def copy(self) -> "PrgSeed":
        return PrgSeed(self.seed, self.counter)

    def words(self, n: int) -> np.ndarray:
        """Return the next ``n`` raw words and advance the counter."""
        block, skip = divmod(self.counter, _WORDS_PER_BLOCK)
        bitgen = Philox(key=self.seed, counter=block)
        out = bitgen.random_raw(n + skip)[skip:]
        self.counter += n
        return out


def _to_unit(words: np.ndarray) -> np.ndarray:
    return (words >> np.uint64(11)).astype(np.float64) * _TWO_M53


def prg_draw(seed: PrgSeed, rows: int, cols: int, rng_range: RandomRange,
             require_nonzero: bool = False) -> np.ndarray:
    """Draw a ``rows x cols`` matrix uniform over ``rng_range``.

    With ``require_nonzero`` every element with ``|v| < nonzero_floor`` (or
    exactly zero) is redrawn from the continuing stream, in element order,
    until none remain. Both holders of a seed therefore consume the same
    number of words.
    """
    if rows < 1 or cols < 1:
        raise DimensionError(f"invalid shape {rows}x{cols}")
    n = rows * cols
    lo, width, q = rng_range.low, rng_range.width, rng_range.quantum

    def draw(k: int) -> np.ndarray:
        u = _to_unit(seed.words(k))
        return lo + (np.floor(u * (width / q)) * q if q else u * width)

    out = draw(n)
    if require_nonzero:
        floor = rng_range.nonzero_floor
        bad = np.flatnonzero((np.abs(out) < floor) | (out == 0.0))
        while bad.size:
            out[bad] = draw(bad.size)
            bad = bad[(np.abs(out[bad]) < floor) | (out[bad] == 0.0)]
    return out.reshape(rows, cols)


def prg_draw_scale(seed: PrgSeed, rows: int, cols: int,
                   low: float = 0.5, high: float = 2.0) -> np.ndarray:
    """Draw non-zero multiplicative parts: magnitude log-uniform in
    ``[low, high)``, sign from the lowest bit of the same word."""
    if not 0 < low < high:
        raise ConfigurationError("scale bounds must satisfy 0 < low < high")
    w = seed.words(rows * cols)
    mag = low * (high / low) ** _to_unit(w)
    sign = np.where((w & np.uint64(1)) == 0, 1.0, -1.0)
    return (sign * mag).reshape(rows, cols)


def sign(a: np.ndarray) -> np.ndarray:
    """+1 where ``a >= 0`` (including -0.0), -1 elsewhere."""
    return np.where(a >= 0, 1.0, -1.0)


def affine(a: np.ndarray, scale: float, offset: float) -> np.ndarray:
    return a * scale + offset


def divide(a: np.ndarray, b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if np.any(b == 0):
        raise DomainError("division by exact zero")
    return a / b


def exp(a: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.exp(a)


def _check_same_shape(a, b):
    if np.ndim(b) and np.shape(a) != np.shape(b):
        raise DimensionError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")


_BINARY: dict[str, Callable] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": divide,
}
_UNARY: dict[str, Callable] = {"exp": exp, "sign": sign}


def elementwise(op: str, a, b=None, *, scale: float = 1.0, offset: float = 0.0) -> np.ndarray:
    """Dispatch one of ``add, sub, mul, div, exp, sign, affine`` by name."""
    a = as_matrix(a)
    if op in _BINARY:
        if b is None:
            raise DimensionError(f"{op} needs a second operand")
        _check_same_shape(a, b)
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    if op == "affine":
        return affine(a, scale, offset)
    raise ConfigurationError(f"unknown element-wise op {op!r}")


def rowsum_broadcast(a: np.ndarray) -> np.ndarray:
    """Sum each row and broadcast the sums back to the shape of ``a``."""
    return np.repeat(a.sum(axis=1, keepdims=True), a.shape[1], axis=1)


def matmul_plain(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b
