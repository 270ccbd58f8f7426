"""Integrability checks, conservation monitoring and relative-motion reconstruction.

Given two solutions s, s' of an integrable system, the offsets
F_k(s') - F_k(s) are reproduced by the lifted integrals lift(F_k)(s, v)
for a suitable Jacobi field v along s.  In a Darboux chart the linear
conditions on v(0) are underdetermined (m equations, 2m unknowns); we take
the minimum Euclidean-norm solution.  In action-angle coordinates the
system is square and its solution is unique.
"""

from __future__ import annotations

import itertools
import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .canonical import poisson, tangent_lift
from .diffcore import grad
from .dsl import Coord, DomainError, SystemDef, compile_exprs, diff, simplify, symbol_names
from .flow import IntegratorConfig, Trajectory, _as_flat, integrate, integrate_tangent, rhs_base


class RankDeficiencyError(ArithmeticError):
    def __init__(self, message: str, ratio: float):
        super().__init__(message)
        self.ratio = ratio


@dataclass
class IntegrabilityReport:
    max_h_bracket: float
    max_f_bracket: float
    min_independence: float
    n_samples: int
    seed: int
    n_skipped: int = 0

    def failures(self, bracket_tol: float = 1e-10, ratio_tol: float = 1e-3) -> list[str]:
        out = []
        if not self.max_h_bracket < bracket_tol:
            out.append(f"{{H, F_k}} = {self.max_h_bracket:.3e} not below {bracket_tol:g} (H not in involution)")
        if not self.max_f_bracket < bracket_tol:
            out.append(f"{{F_k, F_r}} = {self.max_f_bracket:.3e} not below {bracket_tol:g} (integrals not in involution)")
        if not self.min_independence > ratio_tol:
            out.append(f"independence ratio {self.min_independence:.3e} not above {ratio_tol:g} (dF_k dependent)")
        return out

    def passed(self, bracket_tol: float = 1e-10, ratio_tol: float = 1e-3) -> bool:
        return not self.failures(bracket_tol, ratio_tol)


@dataclass
class DriftReport:
    integrals: np.ndarray
    lifted: np.ndarray | None = None

    @property
    def worst(self) -> float:
        vals = [np.max(self.integrals)]
        if self.lifted is not None:
            vals.append(np.max(self.lifted))
        return float(max(vals))


@dataclass
class ReconstructionResult:
    v0: np.ndarray
    delta_f: np.ndarray
    initial_residual: float
    sigma_ratio: float = np.nan
    persistence_residual: float | None = None
    lifted_drift: np.ndarray | None = None
    offset_drift: np.ndarray | None = None
    times: np.ndarray | None = field(default=None, repr=False)
    residuals: np.ndarray | None = field(default=None, repr=False)


@dataclass
class DivergenceResult:
    times: np.ndarray
    D: np.ndarray
    R: np.ndarray
    v0: np.ndarray

    @property
    def growth_factor(self) -> float:
        """D at the final time over the largest D for t <= 1."""
        early = float(np.max(self.D[self.times <= 1.0 + 1e-12]))
        if early == 0.0:
            return 0.0 if self.D[-1] == 0.0 else np.inf
        return float(self.D[-1] / early)

    @property
    def max_residual(self) -> float:
        return float(np.max(self.R))


class _Compiled:
    """Per-system compiled integrals, lifted integrals and brackets."""

    def __init__(self, sys: SystemDef):
        m = sys.m
        self.F = compile_exprs(sys.F, symbol_names(sys.kinds, m), sys.params)
        self.TF = compile_exprs([simplify(tangent_lift(f, m, sys.kinds)) for f in sys.F],
                                symbol_names(sys.tangent_kinds, m), sys.params)
        pairs_h = [poisson(sys.H, f, m, sys.kinds) for f in sys.F]
        pairs_f = [poisson(sys.F[k], sys.F[r], m, sys.kinds)
                   for k, r in itertools.combinations(range(m), 2)]
        self.n_h = len(pairs_h)
        self.brackets = compile_exprs(pairs_h + pairs_f, symbol_names(sys.kinds, m), sys.params)


_CACHE: "weakref.WeakKeyDictionary[SystemDef, _Compiled]" = weakref.WeakKeyDictionary()


def _compiled(sys: SystemDef) -> _Compiled:
    c = _CACHE.get(sys)
    if c is None:
        c = _CACHE[sys] = _Compiled(sys)
    return c


def integral_jacobian(sys: SystemDef, x) -> np.ndarray:
    """m x 2m matrix of gradients of the first integrals (forward-mode)."""
    x = _as_flat(x)
    return np.array([grad(f, x, sys.params, sys.kinds) for f in sys.F])


def independence_ratio(J: np.ndarray) -> float:
    s = np.linalg.svd(J, compute_uv=False)
    if s[0] == 0.0:
        return 0.0
    return float(s[-1] / s[0])


def validate_cis(sys: SystemDef, n_samples: int = 100, seed: int = 0, box: float = 2.0,
                 exclusions: Sequence[Callable] = (), max_attempts: int | None = None) -> IntegrabilityReport:
    """Sample the box [-box, box]^{2m} and measure involution and independence.

    Points hit by an exclusion predicate are redrawn; points where some
    expression is undefined are skipped and counted.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    c = _compiled(sys)
    rng = np.random.default_rng(seed)
    max_attempts = max_attempts or 1000 * n_samples
    hb = fb = 0.0
    ratio = np.inf
    taken = skipped = attempts = 0
    while taken < n_samples:
        attempts += 1
        if attempts > max_attempts:
            raise RuntimeError(f"only {taken} admissible samples in {max_attempts} draws")
        x = rng.uniform(-box, box, 2 * sys.m)
        if any(pred(x) for pred in exclusions):
            continue
        try:
            vals = np.abs(c.brackets(x))
            J = integral_jacobian(sys, x)
        except DomainError:
            skipped += 1
            continue
        if c.n_h:
            hb = max(hb, float(np.max(vals[: c.n_h])))
        if len(vals) > c.n_h:
            fb = max(fb, float(np.max(vals[c.n_h:])))
        ratio = min(ratio, independence_ratio(J))
        taken += 1
    return IntegrabilityReport(hb, fb, float(ratio), taken, seed, skipped)


def drift(sys: SystemDef, traj: Trajectory) -> DriftReport:
    """Max deviation of each F_k (and of each lifted integral for 4m trajectories) from t=0."""
    m = sys.m
    c = _compiled(sys)
    if traj.dim == 2 * m:
        base = traj.states
        tang = None
    elif traj.dim == 4 * m:
        base = traj.states[:, : 2 * m]
        tang = traj.states
    else:
        raise ValueError(f"trajectory dimension {traj.dim} does not fit m={m}")
    F = np.array([c.F(x) for x in base])
    rep = DriftReport(np.max(np.abs(F - F[0]), axis=0))
    if tang is not None:
        T = np.array([c.TF(x) for x in tang])
        rep.lifted = np.max(np.abs(T - T[0]), axis=0)
    return rep


def min_norm_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimum-norm solution of the full-row-rank system A x = b via QR of A^T."""
    Q, R = np.linalg.qr(A.T)
    y = np.linalg.solve(R.T, b)
    return Q @ y


def reconstruct_jacobi(sys: SystemDef, s0, s0p, rank_tol: float = 1e-8) -> ReconstructionResult:
    """Initial Jacobi field v0 with lift(F_k)(s0, v0) = F_k(s0') - F_k(s0) for all k."""
    x, xp = _as_flat(s0), _as_flat(s0p)
    c = _compiled(sys)
    J = integral_jacobian(sys, x)
    ratio = independence_ratio(J)
    if not ratio > rank_tol:
        raise RankDeficiencyError(
            f"integral differentials are dependent at s0: sigma_min/sigma_max = {ratio:.3e} "
            f"(need > {rank_tol:g})", ratio)
    dF = np.array(c.F(xp)) - np.array(c.F(x))
    v0 = min_norm_solve(J, dF)
    lifted = np.array(c.TF(np.concatenate([x, v0])))
    resid = float(np.max(np.abs(lifted - dF)))
    return ReconstructionResult(v0=v0, delta_f=dF, initial_residual=resid, sigma_ratio=ratio)


def reconstruct_action(aa_sys: SystemDef, I, Ip, det_tol: float = 1e-12) -> np.ndarray:
    """Unique a with F_k(I') - F_k(I) = sum_i a_i dF_k/dI_i(I)."""
    if aa_sys.chart != "action-angle":
        raise ValueError("system must be given in action-angle coordinates")
    m = aa_sys.m
    I = np.asarray(I, dtype=float).ravel()
    Ip = np.asarray(Ip, dtype=float).ravel()
    syms = symbol_names(("I",), m)
    jac = compile_exprs([diff(f, Coord("I", i)) for f in aa_sys.F for i in range(1, m + 1)],
                        syms, aa_sys.params)
    Fn = compile_exprs(aa_sys.F, syms, aa_sys.params)
    A = np.array(jac(I)).reshape(m, m)
    norms = np.linalg.norm(A, axis=1)
    scaled = abs(np.linalg.det(A)) / np.prod(norms) if np.all(norms > 0) else 0.0
    if not scaled > det_tol:
        raise RankDeficiencyError(f"dF/dI is singular (scaled determinant {scaled:.3e})", scaled)
    dF = np.array(Fn(Ip)) - np.array(Fn(I))
    return np.linalg.solve(A, dF)


def verify_persistence(sys: SystemDef, s0, s0p, v0, cfg: IntegratorConfig) -> ReconstructionResult:
    """Integrate s', and (s, v) jointly; track lift(F)(s, v) - (F(s') - F(s)) over time."""
    x, xp = _as_flat(s0), _as_flat(s0p)
    v0 = np.asarray(v0, dtype=float).ravel()
    c = _compiled(sys)
    m = sys.m
    other = integrate(rhs_base(sys), xp, cfg)
    joint = integrate_tangent(sys, x, v0, cfg)
    Fs = np.array([c.F(s) for s in joint.states[:, : 2 * m]])
    Fp = np.array([c.F(s) for s in other.states])
    TF = np.array([c.TF(s) for s in joint.states])
    offsets = Fp - Fs
    res = TF - offsets
    return ReconstructionResult(
        v0=v0,
        delta_f=offsets[0],
        initial_residual=float(np.max(np.abs(res[0]))),
        persistence_residual=float(np.max(np.abs(res))),
        lifted_drift=np.max(np.abs(TF - TF[0]), axis=0),
        offset_drift=np.max(np.abs(offsets - offsets[0]), axis=0),
        times=joint.times,
        residuals=res,
    )


def divergence_experiment(sys: SystemDef, s0, epsilon: float, direction, cfg: IntegratorConfig) -> DivergenceResult:
    """Compare s' with its first-order model s + v while tracking the offset identity.

    D(t) = |s'(t) - (s(t) + v(t))| may grow without bound; R(t), the worst
    offset residual over k, stays at integrator accuracy.
    """
    x = _as_flat(s0)
    d = np.asarray(direction, dtype=float).ravel()
    if d.shape != x.shape:
        raise ValueError("direction must match the state dimension")
    xp = x + epsilon * d
    if epsilon == 0.0:
        v0 = np.zeros_like(x)
    else:
        v0 = reconstruct_jacobi(sys, x, xp).v0
    m = sys.m
    c = _compiled(sys)
    other = integrate(rhs_base(sys), xp, cfg)
    joint = integrate_tangent(sys, x, v0, cfg)
    s = joint.states[:, : 2 * m]
    v = joint.states[:, 2 * m:]
    D = np.linalg.norm(other.states - (s + v), axis=1)
    Fs = np.array([c.F(y) for y in s])
    Fp = np.array([c.F(y) for y in other.states])
    TF = np.array([c.TF(y) for y in joint.states])
    R = np.max(np.abs(TF - (Fp - Fs)), axis=1)
    return DivergenceResult(joint.times, D, R, v0)


def random_tangent_points(m: int, n: int, seed: int, box: float = 2.0,
                          exclusions: Sequence[Callable] = ()) -> np.ndarray:
    """Seeded points of TM whose base part avoids the exclusion predicates."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        x = rng.uniform(-box, box, 4 * m)
        if any(pred(x[: 2 * m]) for pred in exclusions):
            continue
        out.append(x)
    return np.array(out)
