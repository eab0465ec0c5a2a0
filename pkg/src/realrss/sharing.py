"""2-out-of-3 replicated sharing of real matrices.

Party ``P_i`` holds the pair ``(x_i, x_{i+1})`` (indices mod 3) of an
additive sharing ``x = x_0 + x_1 + x_2`` or of a multiplicative sharing
``x = x_0 * x_1 * x_2`` (element-wise). Correlated randomness comes from
pairwise seeds: ``P_i`` holds ``s_i`` (shared with ``P_{i-1}``) and
``s_{i+1}`` (shared with ``P_{i+1}``).

Functions taking a ``party`` argument run on one party's engine and must be
called by all three parties in lockstep (see :class:`realrss.runtime.Party`).
"""
from __future__ import annotations

import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import DimensionError, IntegrityError, ProtocolError
from .tensor import PrgSeed, RandomRange, as_matrix, prg_draw, prg_draw_scale

if TYPE_CHECKING:
    from .runtime.session import Party

# Masks on [-2, 2): a power-of-two width puts draws on a dyadic grid, so
# zero-sharings cancel exactly. Wider ranges cost softmax precision.
DEFAULT_RANGE = RandomRange(-2.0, 2.0)
SCALE_LOW, SCALE_HIGH = 0.5, 2.0


def nxt(i: int) -> int:
    return (i + 1) % 3


def prv(i: int) -> int:
    return (i - 1) % 3


@dataclass
class PartyContext:
    id: int
    seed_prev: PrgSeed
    seed_next: PrgSeed
    randomness_range: RandomRange = DEFAULT_RANGE

    def counters(self) -> tuple[int, int]:
        return self.seed_prev.counter, self.seed_next.counter


@dataclass(frozen=True)
class AdditiveShare:
    owner: int
    part_a: np.ndarray
    part_b: np.ndarray

    def __post_init__(self):
        if self.part_a.shape != self.part_b.shape:
            raise DimensionError(f"share parts differ in shape: {self.part_a.shape} vs {self.part_b.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.part_a.shape


@dataclass(frozen=True)
class MultiplicativeShare:
    owner: int
    part_a: np.ndarray
    part_b: np.ndarray

    def __post_init__(self):
        if self.part_a.shape != self.part_b.shape:
            raise DimensionError(f"share parts differ in shape: {self.part_a.shape} vs {self.part_b.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.part_a.shape


AnyShare = Union[AdditiveShare, MultiplicativeShare]


def setup(party: "Party", own_seed: int, randomness_range: RandomRange = DEFAULT_RANGE) -> PartyContext:
    """Cyclic seed distribution: ``P_i`` sends ``s_i`` to ``P_{i-1}``. One round."""
    i = party.id
    word = np.array([[own_seed]], dtype="<u8").view("<f8")
    with party.protocol("setup"):
        got = party.exchange({prv(i): [word]}, {nxt(i): [(1, 1)]})
    next_seed = int(got[nxt(i)][0].astype("<f8").view("<u8")[0, 0])
    ctx = PartyContext(i, PrgSeed(own_seed), PrgSeed(next_seed), randomness_range)
    party.ctx = ctx
    return ctx


@contextmanager
def masking_range(ctx: PartyContext, randomness_range: Optional[RandomRange]):
    """Temporarily draw zero-sharing masks from ``randomness_range``. Every
    party must enter the same range for the same calls."""
    if randomness_range is None:
        yield ctx
        return
    saved = ctx.randomness_range
    ctx.randomness_range = randomness_range
    try:
        yield ctx
    finally:
        ctx.randomness_range = saved


def zero_sharing(ctx: PartyContext, rows: int, cols: int) -> np.ndarray:
    """Local ``alpha_i = r_i - r_{i+1}``; the three alphas sum to zero."""
    r_i = prg_draw(ctx.seed_prev, rows, cols, ctx.randomness_range)
    r_next = prg_draw(ctx.seed_next, rows, cols, ctx.randomness_range)
    return r_i - r_next


def draw_common(ctx: PartyContext, seed_index: int, rows: int, cols: int) -> Optional[np.ndarray]:
    """Non-zero multiplicative part from seed ``s_{seed_index}``; ``None`` at
    the one party that does not hold that seed."""
    if seed_index == ctx.id:
        return prg_draw_scale(ctx.seed_prev, rows, cols, SCALE_LOW, SCALE_HIGH)
    if seed_index == nxt(ctx.id):
        return prg_draw_scale(ctx.seed_next, rows, cols, SCALE_LOW, SCALE_HIGH)
    return None


def share_many(party: "Party", requests: Sequence[tuple[int, Optional[np.ndarray], tuple[int, int]]]
               ) -> list[AdditiveShare]:
    """Run several ``Shr_owner`` calls in one round.

    ``requests`` holds ``(owner, value_or_None, shape)``; only the owner's
    entry carries a value. Each party masks with a fresh zero-sharing and
    sends its part to ``P_{i-1}``.
    """
    i = party.id
    mine = []
    for owner, value, shape in requests:
        alpha = zero_sharing(party.ctx, *shape)
        if owner == i:
            if value is None:
                raise ProtocolError(f"P{i} owns a share request but supplied no value")
            value = as_matrix(value)
            if value.shape != tuple(shape):
                raise ProtocolError(f"owner value shape {value.shape} disagrees with declared {shape}")
            alpha = value + alpha
        mine.append(alpha)
    got = party.exchange({prv(i): mine}, {nxt(i): [tuple(r[2]) for r in requests]})[nxt(i)]
    return [AdditiveShare(i, a, b) for a, b in zip(mine, got)]


def share(party: "Party", owner: int, x: Optional[np.ndarray], shape: Optional[tuple[int, int]] = None
          ) -> AdditiveShare:
    """``Shr_owner(x)``. Non-owners pass ``x=None`` and the public shape."""
    if x is not None:
        x = as_matrix(x)
        shape = shape or x.shape
    if shape is None:
        raise ProtocolError("non-owner must supply the shape of the shared value")
    with party.protocol("share"):
        return share_many(party, [(owner, x, tuple(shape))])[0]


def _targets(target) -> list[int]:
    if target == "all" or target is None:
        return [0, 1, 2]
    if isinstance(target, int):
        return [target]
    return sorted(set(target))


def _record_reveal(party: "Party", targets: list[int], shape, label: Optional[str]) -> None:
    party.reveal_log.append({"label": label, "targets": targets, "shape": tuple(shape)})


def reconstruct(party: "Party", sh: AdditiveShare, target="all", label: Optional[str] = None
                ) -> Optional[np.ndarray]:
    """Open ``sh`` to ``target`` ("all", a party index or an iterable of them).

    Each target ``P_j`` receives the missing part ``x_{j-1}`` from ``P_{j-1}``
    and sums ``x_0 + x_1 + x_2`` in index order, so every target obtains
    bit-identical plaintext. Non-targets return ``None``.
    """
    i = party.id
    targets = _targets(target)
    sends = {nxt(i): [sh.part_a]} if nxt(i) in targets else {}
    expect = {prv(i): [sh.shape]} if i in targets else {}
    with party.protocol("reconstruct"):
        got = party.exchange(sends, expect)
    _record_reveal(party, targets, sh.shape, label)
    if i not in targets:
        return None
    parts = {i: sh.part_a, nxt(i): sh.part_b, prv(i): got[prv(i)][0]}
    return (parts[0] + parts[1]) + parts[2]


def reconstruct_mul(party: "Party", sh: MultiplicativeShare, target="all", label: Optional[str] = None
                    ) -> Optional[np.ndarray]:
    """Open a multiplicative sharing; the product is taken in index order."""
    i = party.id
    targets = _targets(target)
    sends = {nxt(i): [sh.part_a]} if nxt(i) in targets else {}
    expect = {prv(i): [sh.shape]} if i in targets else {}
    with party.protocol("reconstruct_mul"):
        got = party.exchange(sends, expect)
    _record_reveal(party, targets, sh.shape, label)
    if i not in targets:
        return None
    parts = {i: sh.part_a, nxt(i): sh.part_b, prv(i): got[prv(i)][0]}
    for k in (0, 1, 2):
        if np.any(parts[k] == 0):
            raise IntegrityError(f"multiplicative part {k} contains a zero element")
    return (parts[0] * parts[1]) * parts[2]


def checkpoint(party: "Party") -> None:
    """Exchange seed counters with both neighbours; raise on any mismatch."""
    i = party.id
    prev_ctr, next_ctr = party.ctx.counters()
    with party.protocol("checkpoint"):
        got = party.exchange(
            {prv(i): [np.array([[prev_ctr]], dtype="<u8").view("<f8")],
             nxt(i): [np.array([[next_ctr]], dtype="<u8").view("<f8")]},
            {prv(i): [(1, 1)], nxt(i): [(1, 1)]})
    # P_{i-1} reports its counter of s_i (its seed_next); P_{i+1} of s_{i+1}.
    theirs_prev = int(got[prv(i)][0].view("<u8")[0, 0])
    theirs_next = int(got[nxt(i)][0].view("<u8")[0, 0])
    if theirs_prev != prev_ctr or theirs_next != next_ctr:
        raise IntegrityError(
            f"P{i}: PRG counters out of sync (s_{i}: {prev_ctr} vs {theirs_prev}, "
            f"s_{nxt(i)}: {next_ctr} vs {theirs_next})")


def audit_replication(parts: Sequence[AnyShare]) -> None:
    """Debug check over all three parties' views: ``P_i.part_b == P_{i+1}.part_a``."""
    for i in range(3):
        if parts[i].owner != i:
            raise IntegrityError(f"share at position {i} belongs to P{parts[i].owner}")
        if not np.array_equal(parts[i].part_b, parts[nxt(i)].part_a):
            raise IntegrityError(f"replication broken between P{i} and P{nxt(i)}")


def combine(parts: Sequence[AnyShare]) -> np.ndarray:
    """Test oracle: rebuild the secret from the three parties' views."""
    audit_replication(parts)
    x = [parts[k].part_a for k in range(3)]
    if isinstance(parts[0], MultiplicativeShare):
        return (x[0] * x[1]) * x[2]
    return (x[0] + x[1]) + x[2]


# -- share-at-rest files ------------------------------------------------------

_FILE_HEADER = struct.Struct("<5sBIIB")
FILE_MAGIC = b"PRSS1"


def write_share_file(path: Union[str, Path], sh: AnyShare) -> None:
    rows, cols = sh.shape
    with open(path, "wb") as fh:
        fh.write(_FILE_HEADER.pack(FILE_MAGIC, sh.owner, rows, cols, 64))
        fh.write(np.ascontiguousarray(sh.part_a, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(sh.part_b, dtype="<f8").tobytes())


def read_share_file(path: Union[str, Path], kind: type = AdditiveShare) -> AnyShare:
    data = Path(path).read_bytes()
    if len(data) < _FILE_HEADER.size:
        raise IntegrityError(f"{path}: truncated header")
    magic, owner, rows, cols, ell = _FILE_HEADER.unpack_from(data)
    if magic != FILE_MAGIC:
        raise IntegrityError(f"{path}: bad magic {magic!r}")
    if ell != 64 or owner > 2:
        raise IntegrityError(f"{path}: unsupported element width {ell} or party {owner}")
    n = rows * cols
    body = np.frombuffer(data, dtype="<f8", offset=_FILE_HEADER.size)
    if body.size != 2 * n:
        raise IntegrityError(f"{path}: expected {2 * n} values, found {body.size}")
    a = body[:n].reshape(rows, cols).astype(np.float64)
    b = body[n:].reshape(rows, cols).astype(np.float64)
    return kind(owner, a, b)
