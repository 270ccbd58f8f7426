"""Forward-mode differentiation of expression trees with first- and second-order jets.

This is deliberately independent of :func:`cisjac.dsl.diff`: the two are
cross-checked against each other and against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dsl import (
    BASE_KINDS,
    BINARY_SYMBOLS,
    Const,
    Coord,
    DomainError,
    Expr,
    Param,
    Unary,
    _FUNCS,
    _NUMERIC_ERRORS,
    _pow,
    evaluate,
    symbol_names,
)


@dataclass(frozen=True)
class Jet1:
    """Value and directional derivative along one seed."""

    val: float
    dot: float

    def __add__(self, o):
        return Jet1(self.val + o.val, self.dot + o.dot)

    def __sub__(self, o):
        return Jet1(self.val - o.val, self.dot - o.dot)

    def __mul__(self, o):
        return Jet1(self.val * o.val, self.dot * o.val + self.val * o.dot)

    def __truediv__(self, o):
        w = self.val / o.val
        return Jet1(w, (self.dot - w * o.dot) / o.val)

    def __neg__(self):
        return Jet1(-self.val, -self.dot)

    def chain(self, val, d1, d2=None):
        return Jet1(val, d1 * self.dot)

    def powc(self, c: float):
        val = _pow(self.val, c)
        if c == 0.0:
            return Jet1(val, 0.0)
        return Jet1(val, c * _pow(self.val, c - 1.0) * self.dot)


@dataclass(frozen=True)
class Jet2:
    """Value, derivatives along seeds a and b, and the mixed second derivative.

    Every formula is written so that swapping the seeds swaps operands of
    commutative operations only; ``dot_ab`` is then bit-identical under the swap.
    """

    val: float
    dot_a: float
    dot_b: float
    dot_ab: float

    def __add__(self, o):
        return Jet2(self.val + o.val, self.dot_a + o.dot_a, self.dot_b + o.dot_b,
                    self.dot_ab + o.dot_ab)

    def __sub__(self, o):
        return Jet2(self.val - o.val, self.dot_a - o.dot_a, self.dot_b - o.dot_b,
                    self.dot_ab - o.dot_ab)

    def __mul__(self, o):
        return Jet2(
            self.val * o.val,
            self.dot_a * o.val + self.val * o.dot_a,
            self.dot_b * o.val + self.val * o.dot_b,
            (self.dot_ab * o.val + self.val * o.dot_ab) + (self.dot_a * o.dot_b + self.dot_b * o.dot_a),
        )

    def __truediv__(self, o):
        w = self.val / o.val
        wa = (self.dot_a - w * o.dot_a) / o.val
        wb = (self.dot_b - w * o.dot_b) / o.val
        wab = (self.dot_ab - (wa * o.dot_b + wb * o.dot_a) - w * o.dot_ab) / o.val
        return Jet2(w, wa, wb, wab)

    def __neg__(self):
        return Jet2(-self.val, -self.dot_a, -self.dot_b, -self.dot_ab)

    def chain(self, val, d1, d2):
        return Jet2(val, d1 * self.dot_a, d1 * self.dot_b,
                    d2 * (self.dot_a * self.dot_b) + d1 * self.dot_ab)

    def powc(self, c: float):
        u = self.val
        val = _pow(u, c)
        if c == 0.0:
            return Jet2(val, 0.0, 0.0, 0.0)
        d1 = c * _pow(u, c - 1.0)
        d2 = 0.0 if c == 1.0 else c * (c - 1.0) * _pow(u, c - 2.0)
        return self.chain(val, d1, d2)


def _unary(op: str, u):
    x = u.val
    if op == "neg":
        return -u
    f = _FUNCS[op](x)
    if op == "sin":
        return u.chain(f, math.cos(x), -f)
    if op == "cos":
        return u.chain(f, -math.sin(x), -f)
    if op == "tan":
        d1 = 1.0 + f * f
        return u.chain(f, d1, 2.0 * f * d1)
    if op in ("exp",):
        return u.chain(f, f, f)
    if op == "log":
        return u.chain(f, 1.0 / x, -1.0 / (x * x))
    if op == "sqrt":
        d1 = 0.5 / f
        return u.chain(f, d1, -d1 / (2.0 * x))
    if op == "sinh":
        return u.chain(f, math.cosh(x), f)
    return u.chain(f, math.sinh(x), f)  # cosh


def jet_eval(e: Expr, seeds: Mapping[str, object], params: Mapping[str, float] | None,
             const) -> object:
    """Evaluate ``e`` over jets; ``seeds`` maps coordinate names to jets and
    ``const`` lifts a float to a jet with zero derivatives."""
    params = params or {}
    memo: dict[int, object] = {}

    def go(n: Expr):
        key = id(n)
        if key in memo:
            return memo[key]
        if isinstance(n, Const):
            out = const(n.value)
        elif isinstance(n, Coord):
            out = seeds[n.name]
        elif isinstance(n, Param):
            out = const(float(params[n.name]))
        elif isinstance(n, Unary):
            a = go(n.arg)
            try:
                out = _unary(n.op, a)
            except _NUMERIC_ERRORS as exc:
                raise DomainError(f"{n.op}: {exc}", n) from None
        else:
            a = go(n.left)
            try:
                if n.op == "pow":
                    out = a.powc(evaluate(n.right, {}))
                else:
                    b = go(n.right)
                    if n.op == "add":
                        out = a + b
                    elif n.op == "sub":
                        out = a - b
                    elif n.op == "mul":
                        out = a * b
                    else:
                        out = a / b
            except _NUMERIC_ERRORS as exc:
                raise DomainError(f"{BINARY_SYMBOLS[n.op]}: {exc}", n) from None
        memo[key] = out
        return out

    return go(e)


def _flat(x) -> np.ndarray:
    flat = getattr(x, "flat", None)
    if flat is not None and not isinstance(x, np.ndarray):
        x = flat() if callable(flat) else flat
    return np.asarray(x, dtype=float).ravel()


def _kinds_for(x, kinds):
    if kinds is not None:
        return kinds
    return getattr(x, "kinds", BASE_KINDS)


def directional(e: Expr, x, v, params=None, kinds: Sequence[str] | None = None) -> Jet1:
    """Single forward sweep: value of ``e`` at ``x`` and its derivative along ``v``."""
    kinds = _kinds_for(x, kinds)
    xs, vs = _flat(x), _flat(v)
    if xs.shape != vs.shape:
        raise ValueError("direction must match the state dimension")
    names = symbol_names(kinds, len(xs) // len(kinds))
    seeds = {n: Jet1(float(a), float(b)) for n, a, b in zip(names, xs, vs)}
    return jet_eval(e, seeds, params, lambda c: Jet1(c, 0.0))


def grad(e: Expr, x, params=None, kinds: Sequence[str] | None = None) -> np.ndarray:
    """Gradient in the flat chart order (q1..qm, p1..pm for a PhaseState).

    Assembled from one unit-seed forward sweep per coordinate.
    """
    kinds = _kinds_for(x, kinds)
    xs = _flat(x)
    n = len(xs)
    out = np.empty(n)
    eye = np.eye(n)
    for i in range(n):
        out[i] = directional(e, xs, eye[i], params, kinds).dot
    return out


def hess_vec(e: Expr, x, v, params=None, kinds: Sequence[str] | None = None) -> np.ndarray:
    """Hessian of ``e`` at ``x`` applied to ``v``, one Jet2 sweep per component."""
    kinds = _kinds_for(x, kinds)
    xs, vs = _flat(x), _flat(v)
    n = len(xs)
    if vs.shape != (n,):
        raise ValueError(f"vector must have length {n}")
    names = symbol_names(kinds, n // len(kinds))
    out = np.empty(n)
    for i in range(n):
        seeds = {
            name: Jet2(float(xs[j]), 1.0 if i == j else 0.0, float(vs[j]), 0.0)
            for j, name in enumerate(names)
        }
        out[i] = jet_eval(e, seeds, params, lambda c: Jet2(c, 0.0, 0.0, 0.0)).dot_ab
    return out


def mixed_second(e: Expr, x, a, b, params=None, kinds: Sequence[str] | None = None) -> Jet2:
    """Full second-order jet of ``e`` at ``x`` for the seed pair (a, b)."""
    kinds = _kinds_for(x, kinds)
    xs, av, bv = _flat(x), _flat(a), _flat(b)
    names = symbol_names(kinds, len(xs) // len(kinds))
    seeds = {n: Jet2(float(xs[j]), float(av[j]), float(bv[j]), 0.0) for j, n in enumerate(names)}
    return jet_eval(e, seeds, params, lambda c: Jet2(c, 0.0, 0.0, 0.0))
