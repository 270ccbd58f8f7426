"""Darboux-chart geometry on M and on its tangent bundle TM.

Sign convention: the bracket is ``{f, g} = sum_i df/dp_i * dg/dq_i - df/dq_i * dg/dp_i``,
so ``{q1, p1} = -1`` and the time derivative of f along the flow of H is
``{H, f}``.  This is the opposite of the more common ``{q, p} = +1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .dsl import (
    BASE_KINDS,
    TANGENT_OF,
    ZERO,
    Coord,
    Expr,
    add,
    compile_exprs,
    diff,
    max_index,
    mul,
    neg,
    simplify,
    sub,
    symbol_names,
)


@dataclass(frozen=True, eq=False)
class PhaseState:
    """Point (q, p) of M; flat order q1..qm, p1..pm."""

    q: np.ndarray
    p: np.ndarray
    kinds = BASE_KINDS

    def __post_init__(self):
        q = np.array(self.q, dtype=float).ravel()
        p = np.array(self.p, dtype=float).ravel()
        if q.shape != p.shape:
            raise ValueError("q and p must have the same length")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("state entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def m(self) -> int:
        return len(self.q)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_flat(cls, x) -> "PhaseState":
        x = np.asarray(x, dtype=float).ravel()
        if len(x) % 2:
            raise ValueError("flat phase state must have even length")
        m = len(x) // 2
        return cls(x[:m], x[m:])


@dataclass(frozen=True, eq=False)
class TangentState:
    """Point (q, p, dq, dp) of TM; flat order q, p, dq, dp."""

    base: PhaseState
    dq: np.ndarray
    dp: np.ndarray
    kinds = ("q", "p", "dq", "dp")

    def __post_init__(self):
        dq = np.array(self.dq, dtype=float).ravel()
        dp = np.array(self.dp, dtype=float).ravel()
        if dq.shape != (self.base.m,) or dp.shape != (self.base.m,):
            raise ValueError("tangent block must match the base dimension")
        if not (np.all(np.isfinite(dq)) and np.all(np.isfinite(dp))):
            raise ValueError("state entries must be finite")
        object.__setattr__(self, "dq", dq)
        object.__setattr__(self, "dp", dp)

    @property
    def m(self) -> int:
        return self.base.m

    @property
    def v(self) -> np.ndarray:
        return np.concatenate([self.dq, self.dp])

    def flat(self) -> np.ndarray:
        return np.concatenate([self.base.q, self.base.p, self.dq, self.dp])

    @classmethod
    def from_flat(cls, x) -> "TangentState":
        x = np.asarray(x, dtype=float).ravel()
        if len(x) % 4:
            raise ValueError("flat tangent state length must be a multiple of 4")
        m = len(x) // 4
        return cls(PhaseState(x[:m], x[m:2 * m]), x[2 * m:3 * m], x[3 * m:])


class CanonicalStructure:
    """Constant symplectic form ``dp_i ^ dq^i`` and its Poisson tensor on M."""

    def __init__(self, m: int):
        self.m = m

    @property
    def omega(self) -> np.ndarray:
        """Matrix of Omega in the order (q, p): Omega(u, w) = u^T omega w."""
        m = self.m
        eye, zero = np.eye(m), np.zeros((m, m))
        return np.block([[zero, -eye], [eye, zero]])

    @property
    def poisson_tensor(self) -> np.ndarray:
        """w^{ab} with {f, g} = w^{ab} d_a f d_b g."""
        m = self.m
        eye, zero = np.eye(m), np.zeros((m, m))
        return np.block([[zero, -eye], [eye, zero]])

    @property
    def J(self) -> np.ndarray:
        """Generator of the flow, dx/dt = J grad H, in the order (q, p)."""
        return self.poisson_tensor.T


class TangentCanonicalStructure:
    """Symplectic form ``dp_i ^ d(dq^i) + d(dp_i) ^ dq^i`` on TM.

    Conjugate pairs are (q^i, dp_i) and (dq^i, p_i).
    """

    def __init__(self, m: int):
        self.m = m

    @property
    def omega(self) -> np.ndarray:
        """Matrix in the order (q, p, dq, dp)."""
        m = self.m
        o = np.zeros((4 * m, 4 * m))
        q, p, dq, dp = (slice(k * m, (k + 1) * m) for k in range(4))
        eye = np.eye(m)
        # dp ^ d(dq): p-row, dq-column
        o[p, dq] += eye
        o[dq, p] -= eye
        # d(dp) ^ dq
        o[dp, q] += eye
        o[q, dp] -= eye
        return o

    @property
    def conjugate_pairs(self) -> list[tuple[str, str]]:
        return [(f"q{i}", f"dp{i}") for i in range(1, self.m + 1)] + \
               [(f"dq{i}", f"p{i}") for i in range(1, self.m + 1)]


def _dim(m, *exprs, kinds=BASE_KINDS) -> int:
    return m if m is not None else max_index(*exprs, kinds=kinds)


def poisson(f: Expr, g: Expr, m: int | None = None, kinds: Sequence[str] = BASE_KINDS) -> Expr:
    """Symbolic bracket ``sum_i df/dp_i dg/dq_i - df/dq_i dg/dp_i``."""
    qk, pk = kinds
    out = ZERO
    for i in range(1, _dim(m, f, g, kinds=kinds) + 1):
        qi, pi = Coord(qk, i), Coord(pk, i)
        out = add(out, sub(mul(diff(f, pi), diff(g, qi)), mul(diff(f, qi), diff(g, pi))))
    return simplify(out)


def hamiltonian_vf(H: Expr, m: int | None = None, kinds: Sequence[str] = BASE_KINDS) -> list[Expr]:
    """Components (dq_i/dt, dp_i/dt) = (dH/dp_i, -dH/dq_i)."""
    qk, pk = kinds
    m = _dim(m, H, kinds=kinds)
    return [diff(H, Coord(pk, i)) for i in range(1, m + 1)] + \
           [neg(diff(H, Coord(qk, i))) for i in range(1, m + 1)]


def tangent_lift(f: Expr, m: int | None = None, kinds: Sequence[str] = BASE_KINDS) -> Expr:
    """``sum_i dq_i * df/dq_i + dp_i * df/dp_i``, linear in the velocity coordinates."""
    m = _dim(m, f, kinds=kinds)
    out = ZERO
    for kind in kinds:
        for i in range(1, m + 1):
            d = diff(f, Coord(kind, i))
            out = add(out, mul(d, Coord(TANGENT_OF[kind], i)))
    return out


def tangent_poisson(g: Expr, h: Expr, m: int | None = None,
                    kinds: Sequence[str] = BASE_KINDS) -> Expr:
    """Bracket on TM pairing p with dq and dp with q."""
    qk, pk = kinds
    dqk, dpk = TANGENT_OF[qk], TANGENT_OF[pk]
    allk = (qk, pk, dqk, dpk)
    out = ZERO
    for i in range(1, _dim(m, g, h, kinds=allk) + 1):
        q, p, dq, dp = Coord(qk, i), Coord(pk, i), Coord(dqk, i), Coord(dpk, i)
        first = sub(mul(diff(g, p), diff(h, dq)), mul(diff(g, dq), diff(h, p)))
        second = sub(mul(diff(g, dp), diff(h, q)), mul(diff(g, q), diff(h, dp)))
        out = add(out, add(first, second))
    return simplify(out)


def tangent_hamiltonian_vf(Ht: Expr, m: int, kinds: Sequence[str] = BASE_KINDS) -> list[Expr]:
    """Flow of ``Ht`` on TM, component x -> {Ht, x}_T, order (q, p, dq, dp)."""
    qk, pk = kinds
    allk = (qk, pk, TANGENT_OF[qk], TANGENT_OF[pk])
    return [tangent_poisson(Ht, Coord(k, i), m, kinds) for k in allk for i in range(1, m + 1)]


class LiftResiduals(NamedTuple):
    """Worst absolute residual of each bracket identity over a point set."""

    pullback: float  # {f, g}_T = 0
    mixed: float  # {lift f, g}_T = {f, lift g}_T = {f, g}
    lifted: float  # {lift f, lift g}_T = lift {f, g}
    bracket: float  # value of {f, g} at the first point, for reporting


def lift_identity_exprs(f: Expr, g: Expr, m: int) -> list[Expr]:
    """The expressions compared by :func:`check_lift_identities`, in order:
    {f,g}_T, {lift f, g}_T, {f, lift g}_T, {f,g}, {lift f, lift g}_T, lift {f,g}."""
    tf, tg = tangent_lift(f, m), tangent_lift(g, m)
    fg = poisson(f, g, m)
    return [
        tangent_poisson(f, g, m),
        tangent_poisson(tf, g, m),
        tangent_poisson(f, tg, m),
        fg,
        tangent_poisson(tf, tg, m),
        simplify(tangent_lift(fg, m)),
    ]


def check_lift_identities(f: Expr, g: Expr, points, m: int | None = None,
                          params=None) -> LiftResiduals:
    """Evaluate the three lift/bracket identities at tangent points.

    ``points`` is a sequence of TangentState or flat 4m vectors.
    """
    pts = [np.asarray(p.flat() if isinstance(p, TangentState) else p, dtype=float) for p in points]
    if not pts:
        raise ValueError("need at least one point")
    if m is None:
        m = len(pts[0]) // 4
    fn = compile_exprs(lift_identity_exprs(f, g, m), symbol_names(("q", "p", "dq", "dp"), m), params)
    r1 = r2 = r3 = 0.0
    first = None
    for x in pts:
        zero, lf_g, f_lg, fg, lf_lg, l_fg = fn(x)
        if first is None:
            first = fg
        r1 = max(r1, abs(zero))
        r2 = max(r2, abs(lf_g - fg), abs(f_lg - fg))
        r3 = max(r3, abs(lf_lg - l_fg))
    return LiftResiduals(r1, r2, r3, first)
