"""Expression language for phase-space functions and the ``.cis`` system format.

Expressions are immutable trees.  Nodes compare structurally and cache their
hash, so repeated subtrees produced by differentiation can be shared and
deduplicated cheaply (see :func:`compile_exprs`).
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

BASE_KINDS = ("q", "p")
TANGENT_KINDS = ("q", "p", "dq", "dp")
AA_KINDS = ("z", "I")
AA_TANGENT_KINDS = ("z", "I", "dz", "dI")
ALL_KINDS = ("q", "p", "dq", "dp", "z", "I", "dz", "dI")

#: base coordinate kind -> kind of its velocity coordinate on the tangent bundle
TANGENT_OF = {"q": "dq", "p": "dp", "z": "dz", "I": "dI"}

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "sinh", "cosh")
UNARY_OPS = ("neg",) + FUNCTIONS
BINARY_SYMBOLS = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}
CONSTANTS = {"pi": math.pi, "e": math.e}

_COORD_RE = re.compile(r"^(dq|dp|dz|dI|q|p|z|I)([0-9]+)$")


class ParseError(ValueError):
    """Syntax or validation error in expression or system source.

    ``line`` and ``column`` are 1-based.
    """

    def __init__(self, message: str, line: int = 1, column: int = 1, token: str = ""):
        self.message = message
        self.line = line
        self.column = column
        self.token = token
        where = f"line {line}, column {column}"
        tail = f" (at {token!r})" if token else ""
        super().__init__(f"{where}: {message}{tail}")


class DomainError(ArithmeticError):
    """Evaluation left the domain of an operation (log of 0, division by 0, ...)."""

    def __init__(self, message: str, node: "Expr | None" = None):
        self.node = node
        if node is not None:
            message = f"{message} in {to_string(node)}"
        super().__init__(message)


# ---------------------------------------------------------------------------
# AST


class Expr:
    """Base class of expression nodes."""

    __slots__ = ()

    def _key(self) -> tuple:
        raise NotImplementedError

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other) or self._h != other._h:
            return False
        return self._key() == other._key()

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return self._h

    def __str__(self):
        return to_string(self)

    # building sugar; results go through the simplifying constructors
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __neg__(self):
        return neg(self)


@dataclass(frozen=True, eq=False)
class Const(Expr):
    value: float
    _h: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "_h", hash(("const", self.value)))

    def _key(self):
        return (self.value,)


@dataclass(frozen=True, eq=False)
class Coord(Expr):
    kind: str
    index: int
    _h: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown coordinate kind {self.kind!r}")
        if self.index < 1:
            raise ValueError("coordinate indices start at 1")
        object.__setattr__(self, "_h", hash(("coord", self.kind, self.index)))

    @property
    def name(self) -> str:
        return f"{self.kind}{self.index}"

    def _key(self):
        return (self.kind, self.index)


@dataclass(frozen=True, eq=False)
class Param(Expr):
    name: str
    _h: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_h", hash(("param", self.name)))

    def _key(self):
        return (self.name,)


@dataclass(frozen=True, eq=False)
class Unary(Expr):
    op: str
    arg: Expr
    _h: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise ValueError(f"unknown unary op {self.op!r}")
        object.__setattr__(self, "_h", hash(("unary", self.op, self.arg._h)))

    def _key(self):
        return (self.op, self.arg)


@dataclass(frozen=True, eq=False)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr
    _h: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.op not in BINARY_SYMBOLS:
            raise ValueError(f"unknown binary op {self.op!r}")
        if self.op == "pow" and not is_constant(self.right):
            raise ValueError("exponent must be a constant subtree")
        object.__setattr__(self, "_h", hash(("binary", self.op, self.left._h, self.right._h)))

    def _key(self):
        return (self.op, self.left, self.right)


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float)):
        return Const(x)
    raise TypeError(f"cannot convert {type(x).__name__} to Expr")


def coord(name: str) -> Coord:
    """``coord("dq2") -> Coord("dq", 2)``."""
    m = _COORD_RE.match(name)
    if not m:
        raise ValueError(f"not a coordinate name: {name!r}")
    return Coord(m.group(1), int(m.group(2)))


def is_constant(e: Expr) -> bool:
    """True when ``e`` contains no coordinates and no parameters."""
    if isinstance(e, Const):
        return True
    if isinstance(e, (Coord, Param)):
        return False
    if isinstance(e, Unary):
        return is_constant(e.arg)
    return is_constant(e.left) and is_constant(e.right)


def walk(e: Expr) -> Iterable[Expr]:
    """Yield every distinct node of ``e`` once (shared subtrees visited once)."""
    seen = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        yield node
        if isinstance(node, Unary):
            stack.append(node.arg)
        elif isinstance(node, Binary):
            stack.append(node.left)
            stack.append(node.right)


def coordinates(e: Expr) -> set[Coord]:
    return {n for n in walk(e) if isinstance(n, Coord)}


def parameters(e: Expr) -> set[str]:
    return {n.name for n in walk(e) if isinstance(n, Param)}


def max_index(*exprs: Expr, kinds: Iterable[str] | None = None) -> int:
    allowed = set(kinds) if kinds is not None else None
    idx = 0
    for e in exprs:
        for c in coordinates(e):
            if allowed is None or c.kind in allowed:
                idx = max(idx, c.index)
    return idx


def symbol_names(kinds: Sequence[str], m: int) -> list[str]:
    """Flat symbol order for a chart: all of kind[0] (1..m), then kind[1], ..."""
    return [f"{k}{i}" for k in kinds for i in range(1, m + 1)]


# ---------------------------------------------------------------------------
# numeric primitives shared by every evaluator (interpreter, codegen, jets)


def _pow(base: float, expo: float) -> float:
    if base < 0.0 and not float(expo).is_integer():
        raise ValueError("negative base with non-integer exponent")
    return base ** expo


_FUNCS: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "sinh": math.sinh,
    "cosh": math.cosh,
}

_NUMERIC_ERRORS = (ValueError, ZeroDivisionError, OverflowError)


def _apply_unary(op: str, a: float) -> float:
    if op == "neg":
        return -a
    return _FUNCS[op](a)


def _apply_binary(op: str, a: float, b: float) -> float:
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    return _pow(a, b)


# ---------------------------------------------------------------------------
# simplifying constructors
#
# Every rewrite here evaluates identically to the unsimplified node wherever
# the latter is defined; folding uses the same primitives as evaluation.


def _fold_unary(op: str, a: Const) -> Expr:
    try:
        return Const(_apply_unary(op, a.value))
    except _NUMERIC_ERRORS:
        return Unary(op, a)


def _fold_binary(op: str, a: Const, b: Const) -> Expr:
    try:
        v = _apply_binary(op, a.value, b.value)
    except _NUMERIC_ERRORS:
        return Binary(op, a, b)
    if not math.isfinite(v):
        return Binary(op, a, b)
    return Const(v)


def _is(e: Expr, v: float) -> bool:
    return isinstance(e, Const) and e.value == v


def _same_product(a: Expr, b: Expr) -> bool:
    if a == b:
        return True
    return (
        isinstance(a, Binary)
        and isinstance(b, Binary)
        and a.op == b.op == "mul"
        and a.left == b.right
        and a.right == b.left
    )


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def func(op: str, a: Expr) -> Expr:
    if op == "neg":
        return neg(a)
    if isinstance(a, Const):
        return _fold_unary(op, a)
    return Unary(op, a)


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold_binary("add", a, b)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Binary("add", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold_binary("sub", a, b)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if _same_product(a, b):
        return ZERO
    return Binary("sub", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold_binary("mul", a, b)
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return neg(b)
    if _is(b, -1.0):
        return neg(a)
    return Binary("mul", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold_binary("div", a, b)
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return Binary("div", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if not is_constant(b):
        raise ValueError("exponent must be a constant subtree")
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold_binary("pow", a, b)
    if _is(b, 1.0):
        return a
    if _is(b, 0.0):
        return ONE
    return Binary("pow", a, b)


_BUILD = {"add": add, "sub": sub, "mul": mul, "div": div, "pow": power}


def simplify(e: Expr) -> Expr:
    """Constant folding plus the identities x+0, x*1, x*0, x^1, 0/x (and kin)."""
    memo: dict[int, Expr] = {}

    def go(n: Expr) -> Expr:
        key = id(n)
        if key in memo:
            return memo[key]
        if isinstance(n, Unary):
            out = func(n.op, go(n.arg))
        elif isinstance(n, Binary):
            out = _BUILD[n.op](go(n.left), go(n.right))
        else:
            out = n
        memo[key] = out
        return out

    return go(e)


# ---------------------------------------------------------------------------
# differentiation


def diff(e: Expr, s: Coord | str) -> Expr:
    """Exact symbolic partial derivative of ``e`` with respect to coordinate ``s``."""
    target = coord(s) if isinstance(s, str) else s
    memo: dict[int, Expr] = {}

    def d(n: Expr) -> Expr:
        key = id(n)
        if key in memo:
            return memo[key]
        out = _diff_node(n, target, d)
        memo[key] = out
        return out

    return d(e)


def _diff_node(n: Expr, s: Coord, d: Callable[[Expr], Expr]) -> Expr:
    if isinstance(n, Const) or isinstance(n, Param):
        return ZERO
    if isinstance(n, Coord):
        return ONE if n == s else ZERO
    if isinstance(n, Unary):
        u = n.arg
        du = d(u)
        if _is(du, 0.0):
            return ZERO
        op = n.op
        if op == "neg":
            return neg(du)
        if op == "sin":
            return mul(func("cos", u), du)
        if op == "cos":
            return mul(neg(func("sin", u)), du)
        if op == "tan":
            return div(du, power(func("cos", u), Const(2)))
        if op == "exp":
            return mul(n, du)
        if op == "log":
            return div(du, u)
        if op == "sqrt":
            return div(du, mul(Const(2), n))
        if op == "sinh":
            return mul(func("cosh", u), du)
        return mul(func("sinh", u), du)  # cosh
    u, v = n.left, n.right
    op = n.op
    if op == "pow":
        du = d(u)
        if _is(du, 0.0):
            return ZERO
        return mul(mul(v, power(u, simplify(sub(v, ONE)))), du)
    du, dv = d(u), d(v)
    if op == "add":
        return add(du, dv)
    if op == "sub":
        return sub(du, dv)
    if op == "mul":
        return add(mul(du, v), mul(u, dv))
    # div
    if _is(dv, 0.0):
        return div(du, v)
    return div(sub(mul(du, v), mul(u, dv)), power(v, Const(2)))


# ---------------------------------------------------------------------------
# evaluation


def evaluate(e: Expr, env: Mapping[str, float]) -> float:
    """IEEE double evaluation; ``env`` maps coordinate and parameter names to values.

    Raises DomainError (naming the failing node) when an operation leaves its
    domain and KeyError for unbound symbols.
    """
    memo: dict[int, float] = {}

    def go(n: Expr) -> float:
        key = id(n)
        if key in memo:
            return memo[key]
        if isinstance(n, Const):
            out = n.value
        elif isinstance(n, Coord):
            out = float(env[n.name])
        elif isinstance(n, Param):
            out = float(env[n.name])
        elif isinstance(n, Unary):
            a = go(n.arg)
            try:
                out = _apply_unary(n.op, a)
            except _NUMERIC_ERRORS as exc:
                raise DomainError(f"{n.op}({a!r}): {exc}", n) from None
        else:
            a = go(n.left)
            b = go(n.right)
            try:
                out = _apply_binary(n.op, a, b)
            except _NUMERIC_ERRORS as exc:
                raise DomainError(f"{a!r} {BINARY_SYMBOLS[n.op]} {b!r}: {exc}", n) from None
        memo[key] = out
        return out

    return go(e)


def make_env(x: Sequence[float], kinds: Sequence[str] = BASE_KINDS,
             params: Mapping[str, float] | None = None) -> dict[str, float]:
    n = len(kinds)
    if len(x) % n:
        raise ValueError(f"state length {len(x)} is not a multiple of {n}")
    env = dict(zip(symbol_names(kinds, len(x) // n), map(float, x)))
    if params:
        env.update(params)
    return env


def compile_exprs(exprs: Sequence[Expr], symbols: Sequence[str],
                  params: Mapping[str, float] | None = None) -> Callable:
    """Generate one Python function evaluating all ``exprs`` at a flat state.

    Shared subtrees are computed once.  The function performs the same
    primitive operations as :func:`evaluate`, so results agree bit-for-bit;
    numeric failures are re-run through :func:`evaluate` to name the node.
    """
    params = dict(params or {})
    exprs = tuple(exprs)
    index = {s: i for i, s in enumerate(symbols)}
    names: dict[Expr, str] = {}
    lines: list[str] = []

    def emit(n: Expr) -> str:
        if isinstance(n, Const):
            return f"({n.value!r})"
        if isinstance(n, Coord):
            if n.name not in index:
                raise KeyError(f"unbound coordinate {n.name}")
            return f"x{index[n.name]}"
        if isinstance(n, Param):
            if n.name not in params:
                raise KeyError(f"unbound parameter {n.name}")
            return f"({float(params[n.name])!r})"
        if n in names:
            return names[n]
        if isinstance(n, Unary):
            a = emit(n.arg)
            code = f"-{a}" if n.op == "neg" else f"_{n.op}({a})"
        elif n.op == "pow":
            a = emit(n.left)
            c = evaluate(n.right, {})
            if c.is_integer():
                code = f"{a} ** ({c!r})"
            else:
                code = f"_pow({a}, {c!r})"
        else:
            code = f"{emit(n.left)} {BINARY_SYMBOLS[n.op]} {emit(n.right)}"
        name = f"t{len(names)}"
        names[n] = name
        lines.append(f"    {name} = {code}")
        return name

    outs = [emit(e) for e in exprs]
    src = ["def _compiled(x):"]
    if symbols:
        src.append(f"    {', '.join(f'x{i}' for i in range(len(symbols)))}, = x")
    src.extend(lines)
    src.append(f"    return ({''.join(o + ', ' for o in outs)})")
    namespace: dict = {f"_{k}": v for k, v in _FUNCS.items()}
    namespace["_pow"] = _pow
    exec(compile("\n".join(src), "<cisjac-compiled>", "exec"), namespace)
    raw = namespace["_compiled"]
    symbols = list(symbols)

    def compiled(x):
        xs = [float(v) for v in x]
        try:
            return raw(xs)
        except _NUMERIC_ERRORS as exc:
            env = dict(zip(symbols, xs))
            env.update(params)
            for e in exprs:
                evaluate(e, env)
            raise DomainError(str(exc)) from None

    compiled.source = "\n".join(src)
    return compiled


# ---------------------------------------------------------------------------
# printing


def _fmt(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_string(e: Expr) -> str:
    """Fully parenthesised canonical text that parses back to the same tree."""
    if isinstance(e, Const):
        return _fmt(e.value)
    if isinstance(e, Coord):
        return e.name
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Unary):
        inner = to_string(e.arg)
        if e.op == "neg":
            if isinstance(e.arg, Const):
                inner = f"({inner})"
            return f"(-{inner})"
        return f"{e.op}({inner})"
    left = to_string(e.left)
    if e.op == "pow" and isinstance(e.left, Const) and e.left.value < 0:
        left = f"({left})"
    return f"({left} {BINARY_SYMBOLS[e.op]} {to_string(e.right)})"


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"(?P<num>(?:[0-9]+\.[0-9]*|\.[0-9]+|[0-9]+)(?:[eE][+-]?[0-9]+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
)


@dataclass
class _Tok:
    kind: str  # num | name | op | end
    text: str
    col: int


def _tokenize(text: str, line: int, col0: int) -> list[_Tok]:
    toks = []
    i = 0
    while i < len(text):
        if text[i].isspace():
            i += 1
            continue
        m = _TOKEN_RE.match(text, i)
        if not m:
            raise ParseError("unexpected character", line, col0 + i, text[i])
        toks.append(_Tok(m.lastgroup, m.group(), col0 + i))
        i = m.end()
    toks.append(_Tok("end", "", col0 + len(text)))
    return toks


class _Parser:
    def __init__(self, text, m, params, kinds, line, col0):
        self.toks = _tokenize(text, line, col0)
        self.pos = 0
        self.m = m
        self.params = set(params)
        self.kinds = set(kinds)
        self.line = line

    def peek(self, k=0) -> _Tok:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def next(self) -> _Tok:
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def error(self, msg, tok: _Tok):
        raise ParseError(msg, self.line, tok.col, tok.text)

    def expect(self, text):
        tok = self.next()
        if tok.text != text or tok.kind == "end":
            self.error(f"expected {text!r}", tok)
        return tok

    def parse(self) -> Expr:
        if self.peek().kind == "end":
            self.error("empty expression", self.peek())
        e = self.additive()
        if self.peek().kind != "end":
            self.error("unexpected token", self.peek())
        return e

    def additive(self) -> Expr:
        e = self.multiplicative()
        while self.peek().text in ("+", "-") and self.peek().kind == "op":
            op = "add" if self.next().text == "+" else "sub"
            e = Binary(op, e, self.multiplicative())
        return e

    def multiplicative(self) -> Expr:
        e = self.unary()
        while self.peek().text in ("*", "/") and self.peek().kind == "op":
            op = "mul" if self.next().text == "*" else "div"
            e = Binary(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.next()
            # "-3" is a negative literal unless it is the base of a power
            if self.peek().kind == "num" and self.peek(1).text != "^":
                return Const(-float(self.next().text))
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.next()
            at = self.peek()
            expo = self.unary()
            if not is_constant(expo):
                self.error("exponent must be constant", at)
            return Binary("pow", base, expo)
        return base

    def primary(self) -> Expr:
        tok = self.next()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "op" and tok.text == "(":
            e = self.additive()
            self.expect(")")
            return e
        if tok.kind == "name":
            name = tok.text
            if name in FUNCTIONS:
                self.expect("(")
                e = self.additive()
                self.expect(")")
                return Unary(name, e)
            if name in CONSTANTS:
                return Const(CONSTANTS[name])
            if name in self.params:
                return Param(name)
            cm = _COORD_RE.match(name)
            if cm:
                kind, idx = cm.group(1), int(cm.group(2))
                if kind not in self.kinds:
                    self.error(f"coordinate kind {kind!r} not allowed here", tok)
                if not 1 <= idx <= self.m:
                    self.error(f"coordinate index out of range 1..{self.m}", tok)
                return Coord(kind, idx)
            self.error("unknown identifier", tok)
        if tok.kind == "end":
            self.error("unexpected end of input", tok)
        self.error("unexpected token", tok)


def parse_expr(text: str, m: int, params: Iterable[str] = (),
               kinds: Sequence[str] = TANGENT_KINDS, *, line: int = 1, column: int = 1) -> Expr:
    """Parse ``text`` over coordinates ``<kind><1..m>`` and the named parameters.

    Precedence, high to low: calls and parentheses, ``^`` (right
    associative, constant exponents only), unary minus, ``* /``, ``+ -``.
    """
    return _Parser(text, m, params, kinds, line, column).parse()


# ---------------------------------------------------------------------------
# system definitions


@dataclass(frozen=True, eq=False)
class SystemDef:
    """A completely integrable system in one chart: Hamiltonian plus m integrals.

    ``chart`` is ``"darboux"`` (coordinates q, p) or ``"action-angle"``
    (coordinates z, I).
    """

    m: int
    params: Mapping[str, float]
    H: Expr
    F: tuple[Expr, ...]
    separable: bool = False
    chart: str = "darboux"
    name: str = ""

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("dimension must be positive")
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "F", tuple(self.F))
        if len(self.F) != self.m:
            raise ValueError(f"expected {self.m} first integrals, got {len(self.F)}")
        if self.chart not in ("darboux", "action-angle"):
            raise ValueError(f"unknown chart {self.chart!r}")
        allowed = set(self.kinds)
        for e in (self.H, *self.F):
            for c in coordinates(e):
                if c.kind not in allowed or c.index > self.m:
                    raise ValueError(f"coordinate {c.name} not valid for this system")
            missing = parameters(e) - set(self.params)
            if missing:
                raise ValueError(f"undeclared parameters {sorted(missing)}")

    @property
    def kinds(self) -> tuple[str, str]:
        return BASE_KINDS if self.chart == "darboux" else AA_KINDS

    @property
    def tangent_kinds(self) -> tuple[str, ...]:
        return TANGENT_KINDS if self.chart == "darboux" else AA_TANGENT_KINDS

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(format_system(self).encode()).hexdigest()[:16]

    def env(self, x: Sequence[float]) -> dict[str, float]:
        kinds = self.kinds if len(x) == 2 * self.m else self.tangent_kinds
        return make_env(x, kinds, self.params)


_RESERVED = set(FUNCTIONS) | set(CONSTANTS)


def parse_system(source: str) -> SystemDef:
    """Parse the line-oriented ``.cis`` format.

    Directives: ``dim <int>``, ``param <name> <float>``,
    ``separable <true|false>``, ``H <expr>``, ``F<k> <expr>``.  ``#`` starts
    a comment; blank lines are ignored.
    """
    m = None
    params: dict[str, float] = {}
    separable = False
    h_src = None
    f_src: dict[int, tuple[str, int, int]] = {}
    seen_sep = False

    for lineno, raw in enumerate(source.splitlines(), start=1):
        text = raw.split("#", 1)[0]
        stripped = text.strip()
        if not stripped:
            continue
        col = len(text) - len(text.lstrip()) + 1
        parts = stripped.split(None, 1)
        key = parts[0]
        rest = parts[1] if len(parts) > 1 else ""
        rest_col = text.find(rest, col - 1 + len(key)) + 1 if rest else col + len(key)
        if key == "dim":
            if m is not None:
                raise ParseError("duplicate dim", lineno, col, key)
            try:
                m = int(rest)
            except ValueError:
                raise ParseError("dim expects an integer", lineno, rest_col, rest) from None
            if m < 1:
                raise ParseError("dim must be positive", lineno, rest_col, rest)
        elif key == "param":
            bits = rest.split()
            if len(bits) != 2:
                raise ParseError("param expects a name and a value", lineno, col, key)
            name, value = bits
            if not re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", name) or name in _RESERVED \
                    or _COORD_RE.match(name):
                raise ParseError("invalid parameter name", lineno, rest_col, name)
            if name in params:
                raise ParseError("duplicate parameter", lineno, rest_col, name)
            try:
                params[name] = float(value)
            except ValueError:
                raise ParseError("invalid parameter value", lineno, rest_col, value) from None
        elif key == "separable":
            if seen_sep:
                raise ParseError("duplicate separable", lineno, col, key)
            seen_sep = True
            if rest.strip() not in ("true", "false"):
                raise ParseError("separable expects true or false", lineno, rest_col, rest)
            separable = rest.strip() == "true"
        elif key == "H":
            if h_src is not None:
                raise ParseError("duplicate H", lineno, col, key)
            h_src = (rest, lineno, rest_col)
        elif re.fullmatch(r"F[0-9]+", key):
            k = int(key[1:])
            if k in f_src:
                raise ParseError(f"duplicate {key}", lineno, col, key)
            f_src[k] = (rest, lineno, rest_col)
        else:
            raise ParseError("unknown directive", lineno, col, key)

    last = max(1, len(source.splitlines()))
    if m is None:
        raise ParseError("missing dim", last, 1)
    if h_src is None:
        raise ParseError("missing H", last, 1)
    for k, (_, lineno, c) in f_src.items():
        if not 1 <= k <= m:
            raise ParseError(f"F{k} exceeds dim {m}", lineno, max(1, c - len(f"F{k}") - 1), f"F{k}")
    for k in range(1, m + 1):
        if k not in f_src:
            raise ParseError(f"missing F{k}", last, 1)

    def expr(src):
        text, lineno, c = src
        if not text.strip():
            raise ParseError("missing expression", lineno, c)
        return parse_expr(text, m, params, BASE_KINDS, line=lineno, column=c)

    H = expr(h_src)
    F = tuple(expr(f_src[k]) for k in range(1, m + 1))
    return SystemDef(m=m, params=params, H=H, F=F, separable=separable)


def format_system(sys: SystemDef) -> str:
    """Serialize to the ``.cis`` format (Darboux charts round-trip exactly)."""
    lines = [f"dim {sys.m}"]
    for name, value in sys.params.items():
        lines.append(f"param {name} {value!r}")
    lines.append(f"separable {'true' if sys.separable else 'false'}")
    lines.append(f"H {to_string(sys.H)}")
    for k, f in enumerate(sys.F, start=1):
        lines.append(f"F{k} {to_string(f)}")
    if sys.chart != "darboux":
        lines.insert(0, f"# chart {sys.chart}")
    return "\n".join(lines) + "\n"
