"""Fixed-step integration of the base and tangent Hamilton equations.

The tangent system on TM is integrated as one 4m-dimensional Hamiltonian
system (q, p, dq, dp); its last 2m components are the Jacobi field along the
base solution.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .canonical import PhaseState, TangentState, hamiltonian_vf, tangent_lift
from .diffcore import hess_vec
from .dsl import (
    Coord,
    DomainError,
    SystemDef,
    compile_exprs,
    coordinates,
    diff,
    neg,
    simplify,
    symbol_names,
)

SCHEMES = ("midpoint", "verlet", "rk4")
TWO_PI = 2.0 * math.pi


class IntegrationError(ArithmeticError):
    """Integration stopped at ``index``; ``trajectory`` holds the states before it."""

    def __init__(self, message: str, index: int, trajectory: "Trajectory | None" = None):
        super().__init__(f"step {index}: {message}")
        self.index = index
        self.trajectory = trajectory


class ConvergenceError(ArithmeticError):
    def __init__(self, state, h, iterations, residual):
        super().__init__(
            f"implicit midpoint did not converge in {iterations} iterations "
            f"(h={h!r}, last update {residual:.3e})"
        )
        self.state = np.array(state)
        self.h = h
        self.residual = residual


class SeparabilityError(ValueError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "midpoint"
    h: float = 0.01
    steps: int = 1
    fixed_point_tol: float = 1e-13
    max_fixed_point_iters: int = 50

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not self.h > 0:
            raise ValueError("step size must be positive")
        if self.steps < 1:
            raise ValueError("need at least one step")
        if not self.fixed_point_tol > 0:
            raise ValueError("fixed-point tolerance must be positive")


@dataclass(eq=False)
class Trajectory:
    t0: float
    h: float
    states: np.ndarray
    scheme: str
    fingerprint: str = ""

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(len(self.states))

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __len__(self):
        return len(self.states)


@dataclass(eq=False)
class VectorField:
    """Right-hand side built from expressions, compiled once.

    ``kind`` is ``"base"`` (2m) or ``"tangent"`` (4m).
    """

    exprs: tuple
    system: SystemDef | None
    kind: str
    symbols: list = field(default_factory=list)

    def __post_init__(self):
        self.exprs = tuple(self.exprs)
        params = self.system.params if self.system is not None else {}
        self._fn = compile_exprs(self.exprs, self.symbols, params)

    @property
    def dim(self) -> int:
        return len(self.exprs)

    def __call__(self, x) -> np.ndarray:
        return np.array(self._fn(x))


_BASE_CACHE: "weakref.WeakKeyDictionary[SystemDef, VectorField]" = weakref.WeakKeyDictionary()
_TANGENT_CACHE: "weakref.WeakKeyDictionary[SystemDef, VectorField]" = weakref.WeakKeyDictionary()
_SEPARABLE_CACHE: "weakref.WeakKeyDictionary[SystemDef, float]" = weakref.WeakKeyDictionary()


def rhs_base(sys: SystemDef) -> VectorField:
    """Hamilton equations (dH/dp, -dH/dq) on M, cached per system."""
    vf = _BASE_CACHE.get(sys)
    if vf is None:
        exprs = hamiltonian_vf(sys.H, sys.m, sys.kinds)
        vf = VectorField(exprs, sys, "base", symbol_names(sys.kinds, sys.m))
        _BASE_CACHE[sys] = vf
    return vf


def rhs_tangent(sys: SystemDef) -> VectorField:
    """Hamilton equations of the lifted Hamiltonian on TM.

    Blocks (dH/dp, -dH/dq, lift(dH/dp), -lift(dH/dq)); the last two are the
    variational equations, linear in (dq, dp).
    """
    vf = _TANGENT_CACHE.get(sys)
    if vf is None:
        qk, pk = sys.kinds
        m = sys.m
        dHdp = [diff(sys.H, Coord(pk, i)) for i in range(1, m + 1)]
        dHdq = [diff(sys.H, Coord(qk, i)) for i in range(1, m + 1)]
        exprs = (
            dHdp
            + [neg(d) for d in dHdq]
            + [simplify(tangent_lift(d, m, sys.kinds)) for d in dHdp]
            + [neg(simplify(tangent_lift(d, m, sys.kinds))) for d in dHdq]
        )
        vf = VectorField(exprs, sys, "tangent", symbol_names(sys.tangent_kinds, m))
        _TANGENT_CACHE[sys] = vf
    return vf


def _as_flat(x) -> np.ndarray:
    if isinstance(x, (PhaseState, TangentState)):
        return x.flat()
    return np.array(x, dtype=float).ravel()


# ---------------------------------------------------------------------------
# one-step maps


def step_midpoint(field: Callable, state, h: float, cfg: IntegratorConfig | None = None) -> np.ndarray:
    """Implicit midpoint ``x' = x + h f((x + x')/2)`` by fixed-point iteration.

    Starts from the explicit Euler predictor.  Converged once successive
    iterates differ by less than ``fixed_point_tol`` (max norm, scaled by
    ``max(1, |x|)`` so large states are not held below their own rounding).
    """
    tol = cfg.fixed_point_tol if cfg else 1e-13
    max_iter = cfg.max_fixed_point_iters if cfg else 50
    x = _as_flat(state)
    if h == 0:
        return x.copy()
    scale = max(1.0, float(np.max(np.abs(x))))
    new = x + h * field(x)
    delta = math.inf
    for _ in range(max_iter):
        nxt = x + h * field(0.5 * (x + new))
        delta = float(np.max(np.abs(nxt - new)))
        new = nxt
        if delta < tol * scale:
            return new
    raise ConvergenceError(x, h, max_iter, delta)


def step_rk4(field: Callable, state, h: float) -> np.ndarray:
    x = _as_flat(state)
    k1 = field(x)
    k2 = field(x + 0.5 * h * k1)
    k3 = field(x + 0.5 * h * k2)
    k4 = field(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def check_separable(sys: SystemDef, n_points: int = 10, seed: int = 0, tol: float = 1e-10) -> float:
    """Largest |d^2 H / dq_i dp_j| over seeded random points; raises when >= tol."""
    worst = _SEPARABLE_CACHE.get(sys)
    if worst is None:
        m = sys.m
        rng = np.random.default_rng(seed)
        worst = 0.0
        found = attempts = 0
        eye = np.eye(2 * m)
        while found < n_points:
            attempts += 1
            if attempts > 100 * n_points:
                raise SeparabilityError("could not find points where H is defined")
            x = rng.uniform(-2.0, 2.0, 2 * m)
            try:
                # column p_j of the Hessian, rows q_i
                block = [hess_vec(sys.H, x, eye[m + j], sys.params, sys.kinds)[:m] for j in range(m)]
            except DomainError:
                continue
            worst = max(worst, float(np.max(np.abs(block))))
            found += 1
        _SEPARABLE_CACHE[sys] = worst
    if worst >= tol:
        raise SeparabilityError(
            f"H is not separable: mixed second derivative {worst:.3e} >= {tol:g}"
        )
    return worst


def _verlet_blocks(m: int, n: int):
    if n == 2 * m:
        return np.arange(0, m), np.arange(m, 2 * m)
    # on TM, q and dq play coordinates, p and dp momenta
    return (np.concatenate([np.arange(0, m), np.arange(2 * m, 3 * m)]),
            np.concatenate([np.arange(m, 2 * m), np.arange(3 * m, 4 * m)]))


def step_verlet(sys: SystemDef, state, h: float) -> np.ndarray:
    """Stormer-Verlet (kick-drift-kick) for H = T(p) + V(q).

    Requires ``sys.separable`` and numerically confirms it.  Accepts a base
    (2m) or tangent (4m) state; the lifted Hamiltonian of a separable H is
    again separable in the conjugate pairs (q, dp), (dq, p).
    """
    if not sys.separable:
        raise SeparabilityError("system is not declared separable")
    check_separable(sys)
    x = _as_flat(state)
    m = sys.m
    if len(x) == 2 * m:
        f = rhs_base(sys)
    elif len(x) == 4 * m:
        f = rhs_tangent(sys)
    else:
        raise ValueError(f"state length {len(x)} does not fit m={m}")
    pos, mom = _verlet_blocks(m, len(x))
    y = x.copy()
    y[mom] = y[mom] + 0.5 * h * f(y)[mom]
    y[pos] = y[pos] + h * f(y)[pos]
    y[mom] = y[mom] + 0.5 * h * f(y)[mom]
    return y


# ---------------------------------------------------------------------------
# trajectories


def integrate(field: VectorField, x0, cfg: IntegratorConfig) -> Trajectory:
    """Apply ``cfg.steps`` steps of the chosen scheme, recording every state.

    Stops at the first domain error, solver failure or non-finite state and
    raises IntegrationError carrying the partial trajectory.
    """
    x = _as_flat(x0)
    if len(x) != field.dim:
        raise ValueError(f"initial state has length {len(x)}, field expects {field.dim}")
    sys = field.system
    if cfg.scheme == "verlet" and sys is None:
        raise ValueError("verlet needs the system definition")
    fingerprint = sys.fingerprint if sys is not None else ""
    states = np.empty((cfg.steps + 1, len(x)))
    states[0] = x
    h = cfg.h
    for i in range(cfg.steps):
        try:
            if cfg.scheme == "midpoint":
                x = step_midpoint(field, x, h, cfg)
            elif cfg.scheme == "rk4":
                x = step_rk4(field, x, h)
            else:
                x = step_verlet(sys, x, h)
        except (DomainError, ConvergenceError) as exc:
            partial = Trajectory(0.0, h, states[: i + 1].copy(), cfg.scheme, fingerprint)
            raise IntegrationError(str(exc), i + 1, partial) from exc
        if not np.all(np.isfinite(x)):
            partial = Trajectory(0.0, h, states[: i + 1].copy(), cfg.scheme, fingerprint)
            raise IntegrationError("non-finite state", i + 1, partial)
        states[i + 1] = x
    return Trajectory(0.0, h, states, cfg.scheme, fingerprint)


def integrate_tangent(sys: SystemDef, x0, v0, cfg: IntegratorConfig) -> Trajectory:
    """Integrate a base solution together with a Jacobi field along it."""
    x0 = _as_flat(x0)
    v0 = np.asarray(v0, dtype=float).ravel()
    if x0.shape != (2 * sys.m,) or v0.shape != (2 * sys.m,):
        raise ValueError(f"expected base and tangent vectors of length {2 * sys.m}")
    return integrate(rhs_tangent(sys), np.concatenate([x0, v0]), cfg)


# ---------------------------------------------------------------------------
# action-angle flows


@dataclass(frozen=True, eq=False)
class ActionAngleState:
    """Angles z and actions I, optionally with tangent components (dz, dI).

    ``toroidal[i]`` marks z_i as an angle (reduced into [0, 2 pi) by
    :meth:`reduced`); non-toroidal z are cyclic coordinates on a line.
    """

    z: np.ndarray
    I: np.ndarray
    dz: np.ndarray | None = None
    dI: np.ndarray | None = None
    toroidal: tuple | None = None

    def __post_init__(self):
        for name in ("z", "I", "dz", "dI"):
            val = getattr(self, name)
            if val is None:
                continue
            arr = np.array(val, dtype=float).ravel()
            if not np.all(np.isfinite(arr)):
                raise ValueError("state entries must be finite")
            object.__setattr__(self, name, arr)
        if self.z.shape != self.I.shape:
            raise ValueError("z and I must have the same length")
        if self.toroidal is None:
            object.__setattr__(self, "toroidal", (True,) * len(self.z))

    @property
    def m(self) -> int:
        return len(self.z)

    def reduced(self) -> "ActionAngleState":
        z = self.z.copy()
        mask = np.array(self.toroidal, dtype=bool)
        z[mask] = np.mod(z[mask], TWO_PI)
        return ActionAngleState(z, self.I, self.dz, self.dI, self.toroidal)


def angle_distance(a, b) -> np.ndarray:
    """Distance on the circle, min(|a-b|, 2 pi - |a-b|) after reduction."""
    d = np.mod(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)), TWO_PI)
    return np.minimum(d, TWO_PI - d)


_AA_CACHE: "weakref.WeakKeyDictionary[SystemDef, tuple]" = weakref.WeakKeyDictionary()


def _aa_derivatives(aa: SystemDef):
    cached = _AA_CACHE.get(aa)
    if cached is None:
        if aa.chart != "action-angle":
            raise ValueError("exact flow needs a system in action-angle coordinates")
        if any(c.kind != "I" for c in coordinates(aa.H)):
            raise ValueError("Hamiltonian must depend on the actions I only")
        m = aa.m
        freqs = [diff(aa.H, Coord("I", i)) for i in range(1, m + 1)]
        hess = [diff(f, Coord("I", k)) for f in freqs for k in range(1, m + 1)]
        fn = compile_exprs(freqs + hess, symbol_names(("I",), m), aa.params)
        cached = (fn,)
        _AA_CACHE[aa] = cached
    return cached[0]


def exact_flow_action_angle(aa: SystemDef, s0: ActionAngleState, t: float) -> ActionAngleState:
    """Closed-form flow: actions and their variations are constant, angles
    advance with the frequencies dH/dI, angle variations with the frequency
    Hessian applied to dI."""
    fn = _aa_derivatives(aa)
    m = aa.m
    vals = np.array(fn(s0.I))
    omega = vals[:m]
    hess = vals[m:].reshape(m, m)  # hess[i, k] = d^2 H / dI_i dI_k
    z = s0.z + t * omega
    dz = dI = None
    if s0.dI is not None:
        dI = s0.dI.copy()
        dz0 = s0.dz if s0.dz is not None else np.zeros(m)
        dz = dz0 + t * (hess @ s0.dI)
    return ActionAngleState(z, s0.I.copy(), dz, dI, s0.toroidal).reduced()
