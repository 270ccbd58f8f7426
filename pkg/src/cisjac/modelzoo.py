"""Built-in integrable systems; the oscillator carries a closed-form action-angle chart."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dsl import SystemDef, parse_expr, parse_system, AA_KINDS
from .flow import ActionAngleState

Predicate = Callable[[np.ndarray], bool]


@dataclass(frozen=True, eq=False)
class OscillatorChart:
    """(q_k, p_k) <-> (z_k, I_k) with I_k = (p_k^2 + w_k^2 q_k^2) / (2 w_k), z_k = atan2(w_k q_k, p_k)."""

    omegas: np.ndarray

    @property
    def m(self) -> int:
        return len(self.omegas)

    def _split(self, x):
        x = np.asarray(x, dtype=float).ravel()
        m = self.m
        return x[:m], x[m:2 * m]

    def to_action_angle(self, x) -> ActionAngleState:
        q, p = self._split(x)
        w = self.omegas
        I = (p * p + w * w * q * q) / (2.0 * w)
        z = np.arctan2(w * q, p)
        return ActionAngleState(z, I).reduced()

    def from_action_angle(self, s: ActionAngleState) -> np.ndarray:
        w = self.omegas
        q = np.sqrt(2.0 * s.I / w) * np.sin(s.z)
        p = np.sqrt(2.0 * s.I * w) * np.cos(s.z)
        return np.concatenate([q, p])

    def tangent_to(self, x, v) -> ActionAngleState:
        """Image of the tangent vector v at x under the differential of the chart."""
        q, p = self._split(x)
        dq, dp = self._split(v)
        w = self.omegas
        r2 = p * p + w * w * q * q
        dI = w * q * dq + p * dp / w
        dz = w * (p * dq - q * dp) / r2
        base = self.to_action_angle(x)
        return ActionAngleState(base.z, base.I, dz, dI)

    def tangent_from(self, s: ActionAngleState) -> tuple[np.ndarray, np.ndarray]:
        """Inverse differential: (x, v) from an action-angle state with (dz, dI)."""
        w = self.omegas
        a = np.sqrt(2.0 * s.I / w)
        b = np.sqrt(2.0 * s.I * w)
        sz, cz = np.sin(s.z), np.cos(s.z)
        dq = a * cz * s.dz + sz / b * s.dI
        dp = -b * sz * s.dz + w * cz / b * s.dI
        return self.from_action_angle(s), np.concatenate([dq, dp])


@dataclass(frozen=True, eq=False)
class BuiltinSystem:
    name: str
    system: SystemDef
    source: str
    chart: OscillatorChart | None = None
    aa_system: SystemDef | None = None
    exclusions: tuple = field(default_factory=tuple)
    omegas: np.ndarray | None = None

    def excluded(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return any(pred(x) for pred in self.exclusions)


def _num(v: float) -> str:
    return repr(float(v))


def oscillator(m: int = 1, omegas: Sequence[float] | None = None) -> BuiltinSystem:
    """Uncoupled oscillators: H = sum F_k, F_k = (p_k^2 + w_k^2 q_k^2)/2."""
    if m < 1:
        raise ValueError("m must be positive")
    w = np.ones(m) if omegas is None else np.asarray(omegas, dtype=float).ravel()
    if w.shape != (m,):
        raise ValueError(f"need {m} frequencies")
    if np.any(w <= 0):
        raise ValueError("frequencies must be positive")
    lines = [f"# uncoupled harmonic oscillators, m = {m}", f"dim {m}", "separable true"]
    lines += [f"param w{k} {_num(w[k - 1])}" for k in range(1, m + 1)]
    Fk = [f"(p{k}^2 + w{k}^2*q{k}^2)/2" for k in range(1, m + 1)]
    lines.append("H " + " + ".join(Fk))
    lines += [f"F{k} {Fk[k - 1]}" for k in range(1, m + 1)]
    source = "\n".join(lines) + "\n"
    sys = parse_system(source)
    params = dict(sys.params)
    aa_F = tuple(parse_expr(f"w{k}*I{k}", m, params, AA_KINDS) for k in range(1, m + 1))
    aa_H = parse_expr(" + ".join(f"w{k}*I{k}" for k in range(1, m + 1)), m, params, AA_KINDS)
    aa = SystemDef(m, params, aa_H, aa_F, chart="action-angle", name="oscillator-aa")

    def small_mode(x, w=w, m=m):
        q, p = x[:m], x[m:2 * m]
        return bool(np.any(p * p + w * w * q * q < 1e-2))

    return BuiltinSystem(
        name=f"osc:m={m},w={','.join(_num(v) for v in w)}",
        system=sys,
        source=source,
        chart=OscillatorChart(w),
        aa_system=aa,
        exclusions=(small_mode,),
        omegas=w,
    )


def kepler(mu: float = 1.0) -> BuiltinSystem:
    """Planar Kepler problem with integrals (H, angular momentum); no action-angle chart."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    H = "(p1^2 + p2^2)/2 - mu/sqrt(q1^2 + q2^2)"
    source = "\n".join([
        "# planar Kepler problem",
        "dim 2",
        f"param mu {_num(mu)}",
        "separable true",
        f"H {H}",
        f"F1 {H}",
        "F2 q1*p2 - q2*p1",
    ]) + "\n"

    def near_origin(x):
        return bool(np.hypot(x[0], x[1]) < 0.1)

    def small_angular_momentum(x):
        return bool(abs(x[0] * x[3] - x[1] * x[2]) < 0.05)

    return BuiltinSystem(
        name=f"kepler:mu={_num(mu)}",
        system=parse_system(source),
        source=source,
        exclusions=(near_origin, small_angular_momentum),
    )


def quartic() -> BuiltinSystem:
    """H = F1 = p^2/2 + q^4/4.  Its action-angle chart needs elliptic integrals and is not provided."""
    source = "\n".join([
        "# quartic oscillator",
        "dim 1",
        "separable true",
        "H p1^2/2 + q1^4/4",
        "F1 p1^2/2 + q1^4/4",
    ]) + "\n"

    def near_origin(x):
        return bool(np.hypot(x[0], x[1]) < 0.1)

    return BuiltinSystem("quartic", parse_system(source), source, exclusions=(near_origin,))


def builtin(spec: str) -> BuiltinSystem:
    """Build from a shorthand: ``osc:m=2,w=1,1``, ``kepler:mu=1``, ``quartic``."""
    name, _, args = spec.partition(":")
    opts: dict[str, list[str]] = {}
    key = None
    for tok in filter(None, (t.strip() for t in args.split(","))):
        if "=" in tok:
            key, val = tok.split("=", 1)
            opts[key.strip()] = [val.strip()]
        elif key is None:
            raise ValueError(f"bad builtin option {tok!r} in {spec!r}")
        else:
            opts[key].append(tok)
    try:
        if name in ("osc", "oscillator"):
            m = int(opts.pop("m", ["1"])[0])
            w = [float(v) for v in opts.pop("w", ["1"] * m)]
            if len(w) == 1 and m > 1:
                w = w * m
            out = oscillator(m, w)
        elif name == "kepler":
            out = kepler(float(opts.pop("mu", ["1"])[0]))
        elif name == "quartic":
            out = quartic()
        else:
            raise ValueError(f"unknown builtin system {name!r}")
    except (TypeError, IndexError) as exc:
        raise ValueError(f"bad builtin spec {spec!r}: {exc}") from None
    if opts:
        raise ValueError(f"unknown options {sorted(opts)} for {name!r}")
    return out


BUILTIN_NAMES = ("osc", "kepler", "quartic")


def all_builtins() -> list[BuiltinSystem]:
    return [oscillator(1), oscillator(2, [1.0, 1.0]), oscillator(2, [1.0, np.sqrt(2.0)]),
            kepler(1.0), quartic()]
