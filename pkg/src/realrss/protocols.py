"""Secure computation on replicated shares.

Every function runs on one party (first argument ``party``) and is called by
all three parties in lockstep. Cost per invocation on n x n inputs, with
64-bit elements:

=============  ==========  ======
protocol       bits        rounds
=============  ==========  ======
add / public   0           0
mul (any)      3 n^2 64    1
add2mul        7 n^2 64    2
mul2add        9 n^2 64    2
relu           19 n^2 64   5
softmax        25 n^2 64   6
reshare        16 n^2 64   4
=============  ==========  ======
"""
from __future__ import annotations

from typing import TYPE_CHECKING, Union

import numpy as np

from . import tensor
from .errors import DimensionError, ExpOverflowError, IntegrityError
from .sharing import (AdditiveShare, MultiplicativeShare, draw_common, masking_range, nxt, prv,
                      share_many, zero_sharing)
from .tensor import RandomRange

if TYPE_CHECKING:
    from .runtime.session import Party

EXP_GUARD = 700.0
# Mask range used when re-sharing softmax inputs.
RESHARE_RANGE = RandomRange(-1.0 / 16, 1.0 / 16)
# Largest additive part exponentiated by the stabilized softmax.
STABILIZE_CEILING = 4.0
# Masks for the sign conversion inside relu. On this grid every product and
# sum of +-1 signs and masks is exact, so the derivative opens to exactly 0 or 1.
SIGN_RANGE = RandomRange(-2.0, 2.0, quantum=2.0 ** -20)
# Public offset added before taking signs. Shared values below about 1e-15
# are rounding noise of the masks, so Sign(0) = +1 is enforced by reading
# every x in [-SIGN_OFFSET, 0) as non-negative.
SIGN_OFFSET = 2.0 ** -30
# |x2_hat| at or below this many ulps of sum(|z_i|) is rounding noise of a zero secret.
ZERO_FLUSH_ULPS = 32.0

Public = Union[float, np.ndarray]


# -- local linear operations ----------------------------------------------------

def add(a: AdditiveShare, b: AdditiveShare) -> AdditiveShare:
    return AdditiveShare(a.owner, a.part_a + b.part_a, a.part_b + b.part_b)


def sub(a: AdditiveShare, b: AdditiveShare) -> AdditiveShare:
    return AdditiveShare(a.owner, a.part_a - b.part_a, a.part_b - b.part_b)


def neg(a: AdditiveShare) -> AdditiveShare:
    return AdditiveShare(a.owner, -a.part_a, -a.part_b)


def mul_public(a: AdditiveShare, c: Public) -> AdditiveShare:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim and np.broadcast_shapes(c.shape, a.shape) != a.shape:
        raise DimensionError(f"public factor {c.shape} does not fit share {a.shape}")
    return AdditiveShare(a.owner, a.part_a * c, a.part_b * c)


def add_public(a: AdditiveShare, c: Public) -> AdditiveShare:
    """Add a public constant: it is folded into part x_0 only."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim and np.broadcast_shapes(c.shape, a.shape) != a.shape:
        raise DimensionError(f"public term {c.shape} does not fit share {a.shape}")
    pa, pb = a.part_a, a.part_b
    if a.owner == 0:
        pa = pa + c
    elif a.owner == 2:
        pb = pb + c
    return AdditiveShare(a.owner, np.broadcast_to(pa, a.shape).copy(), np.broadcast_to(pb, a.shape).copy())


def affine_public(a: AdditiveShare, scale: float, offset: float) -> AdditiveShare:
    return add_public(mul_public(a, scale), offset)


def add_bias(a: AdditiveShare, bias: AdditiveShare) -> AdditiveShare:
    """Add a shared 1 x m row vector to every row of a shared n x m matrix."""
    if bias.shape != (1, a.shape[1]):
        raise DimensionError(f"bias {bias.shape} does not match {a.shape}")
    return AdditiveShare(a.owner, a.part_a + bias.part_a, a.part_b + bias.part_b)


def transpose(a: AdditiveShare) -> AdditiveShare:
    return AdditiveShare(a.owner, a.part_a.T.copy(), a.part_b.T.copy())


def rowsum(a: AdditiveShare) -> AdditiveShare:
    return AdditiveShare(a.owner, tensor.rowsum_broadcast(a.part_a), tensor.rowsum_broadcast(a.part_b))


def colsum(a: AdditiveShare) -> AdditiveShare:
    return AdditiveShare(a.owner, a.part_a.sum(axis=0, keepdims=True), a.part_b.sum(axis=0, keepdims=True))


def take_rows(a: AdditiveShare, idx) -> AdditiveShare:
    return AdditiveShare(a.owner, a.part_a[idx], a.part_b[idx])


def take_cols(a: AdditiveShare, idx) -> AdditiveShare:
    return AdditiveShare(a.owner, a.part_a[:, idx], a.part_b[:, idx])


def hstack(blocks: list[AdditiveShare]) -> AdditiveShare:
    return AdditiveShare(blocks[0].owner,
                         np.hstack([b.part_a for b in blocks]),
                         np.hstack([b.part_b for b in blocks]))


def sign_parts(m: MultiplicativeShare) -> MultiplicativeShare:
    return MultiplicativeShare(m.owner, tensor.sign(m.part_a), tensor.sign(m.part_b))


# -- multiplication -------------------------------------------------------------

def _output_shape(a_shape, b_shape, kind: str) -> tuple[int, int]:
    if kind == "matmul":
        if a_shape[1] != b_shape[0]:
            raise DimensionError(f"cannot multiply {a_shape} by {b_shape}")
        return a_shape[0], b_shape[1]
    if kind in ("hadamard", "scalar"):
        if a_shape != b_shape:
            raise DimensionError(f"element-wise product needs equal shapes, got {a_shape} and {b_shape}")
        return a_shape
    raise ValueError(f"unknown multiplication kind {kind!r}")


def _partial_product(party: "Party", a: AdditiveShare, b: AdditiveShare, kind: str) -> np.ndarray:
    """z_i = x_i (y_i + y_{i+1}) + x_{i+1} y_i + alpha_i."""
    op = np.matmul if kind == "matmul" else np.multiply
    shape = _output_shape(a.shape, b.shape, kind)
    alpha = zero_sharing(party.ctx, *shape)
    return op(a.part_a, b.part_a + b.part_b) + op(a.part_b, b.part_a) + alpha


def mul(party: "Party", a: AdditiveShare, b: AdditiveShare, kind: str = "hadamard") -> AdditiveShare:
    """Secure product of two additive sharings; each party sends z_i to P_{i-1}."""
    i = party.id
    with party.protocol("mul"):
        z = _partial_product(party, a, b, kind)
        got = party.exchange({prv(i): [z]}, {nxt(i): [z.shape]})
    return AdditiveShare(i, z, got[nxt(i)][0])


def hadamard(party: "Party", a: AdditiveShare, b: AdditiveShare) -> AdditiveShare:
    return mul(party, a, b, "hadamard")


def matmul(party: "Party", a: AdditiveShare, b: AdditiveShare) -> AdditiveShare:
    return mul(party, a, b, "matmul")


# -- share conversion -------------------------------------------------------------

def add2mul(party: "Party", a: AdditiveShare, zero_tolerant: bool = False) -> MultiplicativeShare:
    """Additive to multiplicative sharing in two rounds.

    x0_hat and x1_hat come from the pairwise seeds s_0 and s_1. P_0 shares
    t = 1 / (x0_hat * x1_hat); the Hadamard product [x] * [t] is opened only
    to P_1 and P_2 in the same round as its partial products are formed.

    In ``zero_tolerant`` mode an opened x2_hat indistinguishable from
    rounding noise (see ``ZERO_FLUSH_ULPS``) is set to exactly 0; otherwise
    a zero x2_hat raises :class:`IntegrityError` at P_1 and P_2.
    """
    i = party.id
    rows, cols = a.shape
    with party.protocol("add2mul"):
        x0 = draw_common(party.ctx, 0, rows, cols)
        x1 = draw_common(party.ctx, 1, rows, cols)
        t = 1.0 / (x0 * x1) if i == 0 else None
        (t_sh,) = share_many(party, [(0, t, (rows, cols))])
        z = _partial_product(party, a, t_sh, "hadamard")
        if i == 0:
            got = party.exchange({1: [z], 2: [z]}, {})
        elif i == 1:
            got = party.exchange({2: [z]}, {0: [(rows, cols)], 2: [(rows, cols)]})
        else:
            got = party.exchange({1: [z]}, {0: [(rows, cols)], 1: [(rows, cols)]})
    if i == 0:
        return MultiplicativeShare(0, x0, x1)
    zs = {i: z, **{k: v[0] for k, v in got.items()}}
    x2 = (zs[0] + zs[1]) + zs[2]
    if zero_tolerant:
        noise = ZERO_FLUSH_ULPS * np.finfo(np.float64).eps * (np.abs(zs[0]) + np.abs(zs[1]) + np.abs(zs[2]))
        x2 = np.where(np.abs(x2) <= noise, 0.0, x2)
    elif np.any(x2 == 0):
        raise IntegrityError("add2mul produced a zero multiplicative part (secret has zero elements)")
    if i == 1:
        return MultiplicativeShare(1, x1, x2)
    return MultiplicativeShare(2, x2, x0)


def mul2add(party: "Party", m: MultiplicativeShare) -> AdditiveShare:
    """Multiplicative to additive: P_0 shares x0_hat * x1_hat while P_2 shares
    x2_hat (same round), then one secure Hadamard product."""
    i = party.id
    shape = m.shape
    t = m.part_a * m.part_b if i == 0 else None
    x2 = m.part_a if i == 2 else None
    with party.protocol("mul2add"):
        t_sh, x2_sh = share_many(party, [(0, t, shape), (2, x2, shape)])
        return hadamard(party, t_sh, x2_sh)


def reshare(party: "Party", a: AdditiveShare, randomness_range: RandomRange = RESHARE_RANGE
            ) -> AdditiveShare:
    """Fresh additive sharing of the same secret whose parts are of the
    order of the secret plus masks from ``randomness_range``.

    Products of shares carry cross terms far larger than the secret, which
    ruins the precision of anything exponentiated part-wise. A round trip
    through a multiplicative sharing discards them: the mul2add leg shares
    fresh values with narrow masks. The narrow range is also what hides the
    secret in that leg, so it trades range-hiding for precision.
    """
    with party.protocol("reshare"):
        m = add2mul(party, a, zero_tolerant=True)
        with masking_range(party.ctx, randomness_range):
            return mul2add(party, m)


# -- activations ------------------------------------------------------------------

def relu(party: "Party", a: AdditiveShare) -> tuple[AdditiveShare, AdditiveShare]:
    """Return ``(ReLU'(x), ReLU(x))`` with ReLU'(x) = (Sign(x) + 1) / 2 and
    Sign(0) = +1 (see ``SIGN_OFFSET``)."""
    with party.protocol("relu"):
        m = add2mul(party, add_public(a, SIGN_OFFSET), zero_tolerant=True)
        with masking_range(party.ctx, SIGN_RANGE):
            signs = mul2add(party, sign_parts(m))
        deriv = affine_public(signs, 0.5, 0.5)
        value = hadamard(party, deriv, a)
    return deriv, value


def _centre_rows(x: np.ndarray) -> np.ndarray:
    shift = np.maximum(x.mean(axis=1, keepdims=True), x.max(axis=1, keepdims=True) - STABILIZE_CEILING)
    return x - shift


def softmax(party: "Party", a: AdditiveShare, exp_guard: float = EXP_GUARD,
            stabilize: bool = True) -> AdditiveShare:
    """Row-wise softmax: exponentiate parts locally, convert to additive,
    row-sum, convert the sums back to multiplicative, divide part-wise and
    convert the quotient to additive.

    With ``stabilize`` each additive part is first shifted by a per-row
    constant computed from that part alone: its row mean, raised where
    needed so no entry ends up above ``STABILIZE_CEILING``. Both holders of
    a part compute the same shift, the three shifts add up to one constant
    per row, and softmax ignores per-row constants, so the result is
    unchanged while the exponentials stay finite and centred near 1.
    Without it, parts above ``exp_guard`` raise :class:`ExpOverflowError`
    before any communication.
    """
    if not (np.all(np.isfinite(a.part_a)) and np.all(np.isfinite(a.part_b))):
        raise ExpOverflowError(f"P{party.id}: non-finite share entering softmax")
    if stabilize:
        a = AdditiveShare(a.owner, _centre_rows(a.part_a), _centre_rows(a.part_b))
    else:
        worst = max(np.max(np.abs(a.part_a)), np.max(np.abs(a.part_b)))
        if worst > exp_guard:
            raise ExpOverflowError(
                f"P{party.id}: share magnitude {worst:.4g} exceeds the exponent guard {exp_guard}")
    with party.protocol("softmax"):
        e = MultiplicativeShare(party.id, tensor.exp(a.part_a), tensor.exp(a.part_b))
        e_add = mul2add(party, e)
        t = add2mul(party, rowsum(e_add))
        y = MultiplicativeShare(party.id, e.part_a / t.part_a, e.part_b / t.part_b)
        return mul2add(party, y)
