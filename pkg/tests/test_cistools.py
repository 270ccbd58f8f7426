import numpy as np
import pytest

from cisjac.cistools import (
    RankDeficiencyError,
    divergence_experiment,
    drift,
    independence_ratio,
    integral_jacobian,
    min_norm_solve,
    reconstruct_action,
    reconstruct_jacobi,
    validate_cis,
    verify_persistence,
)
from cisjac.dsl import AA_KINDS, SystemDef, parse_expr, parse_system
from cisjac.flow import IntegratorConfig, Trajectory, integrate, rhs_base
from cisjac.modelzoo import kepler, oscillator, quartic

DEPENDENT = parse_system("""dim 2
H (p1^2 + q1^2)/2 + (p2^2 + q2^2)/2
F1 (p1^2 + q1^2)/2
F2 2*((p1^2 + q1^2)/2)
""")

MID = IntegratorConfig("midpoint", 0.01, 10_000)
EPS = 1e-3
E1 = np.array([1.0, 0.0])


def aa(F_texts, H_text):
    m = len(F_texts)
    F = tuple(parse_expr(t, m, (), AA_KINDS) for t in F_texts)
    return SystemDef(m, {}, parse_expr(H_text, m, (), AA_KINDS), F, chart="action-angle")


# --- integrability ---------------------------------------------------------------


def test_validate_oscillator_pair():
    bs = oscillator(2, [1.0, 1.0])
    rep = validate_cis(bs.system, 100, seed=0, exclusions=bs.exclusions)
    assert rep.max_h_bracket < 1e-12 and rep.max_f_bracket < 1e-12
    J = integral_jacobian(bs.system, [1.0, 1.0, 1.0, 1.0])
    assert np.array_equal(J, [[1, 0, 1, 0], [0, 1, 0, 1]])
    assert independence_ratio(J) == pytest.approx(1.0, abs=1e-15)


def test_validate_kepler_involution():
    k = kepler()
    rep = validate_cis(k.system, 100, seed=1, exclusions=k.exclusions)
    assert rep.max_h_bracket < 1e-12 and rep.max_f_bracket < 1e-12
    assert rep.passed()


def test_validate_flags_dependent_system():
    rep = validate_cis(DEPENDENT, 50, seed=2)
    assert rep.min_independence < 1e-12
    assert not rep.passed()
    assert any("dependent" in msg for msg in rep.failures())


def test_validate_counts_skipped_points():
    sys = parse_system("dim 1\nH log(q1)\nF1 log(q1)\n")
    rep = validate_cis(sys, 20, seed=3)
    assert rep.n_samples == 20 and rep.n_skipped > 0


def test_validate_needs_samples():
    with pytest.raises(ValueError):
        validate_cis(DEPENDENT, 0)


# --- drift -----------------------------------------------------------------------


def test_oscillator_drift():
    sys = oscillator(2, [1.0, 1.5]).system
    tr = integrate(rhs_base(sys), [1.0, -0.5, 0.2, 0.7], MID)
    assert drift(sys, tr).worst < 1e-11


def test_kepler_rk4_circular_drift():
    sys = kepler().system
    tr = integrate(rhs_base(sys), [1.0, 0.0, 0.0, 1.0], IntegratorConfig("rk4", 0.001, 10_000))
    assert drift(sys, tr).integrals[0] < 1e-9


def test_constant_trajectory_has_zero_drift():
    sys = oscillator(1).system
    tr = Trajectory(0.0, 0.1, np.tile([0.3, 0.4], (5, 1)), "midpoint")
    assert drift(sys, tr).worst == 0.0


def test_drift_dimension_mismatch():
    sys = oscillator(1).system
    with pytest.raises(ValueError):
        drift(sys, Trajectory(0.0, 0.1, np.zeros((3, 3)), "rk4"))


# --- reconstruction ----------------------------------------------------------------


def test_reconstruct_oscillator_by_hand():
    r = reconstruct_jacobi(oscillator(1).system, [1.0, 0.0], [1.1, 0.0])
    assert r.delta_f[0] == pytest.approx(0.105, abs=1e-15)
    assert r.v0 == pytest.approx([0.105, 0.0], abs=1e-15)
    assert r.initial_residual == 0.0


def test_reconstruct_identical_points():
    r = reconstruct_jacobi(quartic().system, [1.0, 0.3], [1.0, 0.3])
    assert np.array_equal(r.v0, [0.0, 0.0])


def test_kepler_circular_orbit_is_rank_deficient():
    """dH and dL are parallel on circular orbits, so the solve must refuse."""
    with pytest.raises(RankDeficiencyError) as info:
        reconstruct_jacobi(kepler().system, [1.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 1.001])
    assert info.value.ratio < 1e-8


def test_kepler_reconstruction_off_circular():
    s0 = np.array([1.0, 0.0, 0.0, 1.05])
    r = reconstruct_jacobi(kepler().system, s0, s0 + [0.0, 0.0, 0.0, EPS])
    assert r.initial_residual < 1e-12


def test_min_norm_solve_matches_pseudoinverse(rng):
    for _ in range(20):
        A = rng.normal(size=(2, 5))
        b = rng.normal(size=2)
        x = min_norm_solve(A, b)
        assert np.allclose(A @ x, b, atol=1e-13)
        assert np.allclose(x, np.linalg.pinv(A) @ b, atol=1e-12)


def test_reconstruct_action_examples():
    osc = aa(["I1"], "I1")
    assert reconstruct_action(osc, [0.5], [0.605]) == pytest.approx([0.105], abs=1e-15)
    mixed = aa(["I1 + I2", "I1 - I2"], "I1")
    a = reconstruct_action(mixed, [1.0, 1.0], [1.2, 0.9])  # dF = (0.1, 0.3)
    assert a == pytest.approx([0.2, -0.1], abs=1e-15)
    a = reconstruct_action(mixed, [0.0, 0.0], [0.2, 0.1])  # dF = (0.3, 0.1)
    assert a == pytest.approx([0.2, 0.1], abs=1e-15)
    assert np.array_equal(reconstruct_action(mixed, [0.3, 0.4], [0.3, 0.4]), [0.0, 0.0])


def test_reconstruct_action_singular():
    with pytest.raises(RankDeficiencyError):
        reconstruct_action(aa(["I1 + I2", "2*I1 + 2*I2"], "I1"), [1.0, 1.0], [1.1, 1.0])
    with pytest.raises(ValueError):
        reconstruct_action(oscillator(1).system, [1.0], [1.0])


# --- persistence ------------------------------------------------------------------


def _persist(sys, s0, direction):
    s0 = np.asarray(s0, dtype=float)
    s0p = s0 + EPS * np.asarray(direction, dtype=float)
    v0 = reconstruct_jacobi(sys, s0, s0p).v0
    return s0, s0p, verify_persistence(sys, s0, s0p, v0, MID)


def test_oscillator_persistence():
    sys = oscillator(1).system
    s0, s0p, res = _persist(sys, [1.0, 0.0], E1)
    assert res.initial_residual < 1e-12
    assert res.persistence_residual < 1e-9
    assert np.max(res.lifted_drift) < 1e-9 and np.max(res.offset_drift) < 1e-9


def test_quartic_persistence_and_naive_contrast():
    sys = quartic().system
    s0, s0p, res = _persist(sys, [1.0, 0.0], E1)
    assert res.initial_residual < 1e-12
    assert res.persistence_residual < 1e-6
    assert np.max(res.lifted_drift) < 1e-6 and np.max(res.offset_drift) < 1e-6
    naive = verify_persistence(sys, s0, s0p, s0p - s0, IntegratorConfig("midpoint", 0.01, 1))
    # Taylor remainder of F = p^2/2 + q^4/4 along dq: 3 q^2 eps^2 / 2
    assert naive.initial_residual == pytest.approx(1.5 * EPS ** 2, rel=1e-2)


def test_residual_series_shapes():
    sys = oscillator(1).system
    _, _, res = _persist(sys, [1.0, 0.0], E1)
    assert res.residuals.shape == (MID.steps + 1, 1)
    assert res.times[-1] == pytest.approx(100.0)


# --- divergence -------------------------------------------------------------------


def test_divergence_oscillator_bounded():
    sys = oscillator(1).system
    res = divergence_experiment(sys, [1.0, 0.0], EPS, E1, IntegratorConfig("midpoint", 0.01, 20_000))
    assert res.growth_factor < 2.0
    assert np.max(res.D) < 10 * EPS ** 2
    assert res.max_residual < 1e-9


def test_divergence_zero_epsilon():
    res = divergence_experiment(quartic().system, [1.0, 0.0], 0.0, E1, IntegratorConfig("midpoint", 0.01, 300))
    assert not np.any(res.D) and not np.any(res.R)


def test_divergence_direction_shape():
    with pytest.raises(ValueError):
        divergence_experiment(quartic().system, [1.0, 0.0], EPS, [1.0], IntegratorConfig("midpoint", 0.01, 3))
