import math
from pathlib import Path

import numpy as np
import pytest

from cisjac.cistools import validate_cis
from cisjac.dsl import evaluate, parse_system
from cisjac.flow import ActionAngleState, IntegratorConfig, integrate, rhs_base
from cisjac.modelzoo import builtin, kepler, oscillator, quartic

SYSTEMS = Path(__file__).resolve().parent.parent / "systems"


def test_oscillator_chart_hand_value():
    s = oscillator(1).chart.to_action_angle([1.0, 0.0])
    assert s.I[0] == 0.5 and s.z[0] == pytest.approx(math.pi / 2, abs=1e-15)


@pytest.mark.parametrize("omegas", [[1.0], [1.0, math.sqrt(2.0)], [0.5, 2.0, 3.0]])
def test_chart_round_trip(omegas):
    bs = oscillator(len(omegas), omegas)
    r = np.random.default_rng(0)
    m = len(omegas)
    done = 0
    while done < 1000:
        x = r.uniform(-2, 2, 2 * m)
        if bs.excluded(x):
            continue
        back = bs.chart.from_action_angle(bs.chart.to_action_angle(x))
        assert np.max(np.abs(back - x)) < 1e-12
        done += 1


def test_hamiltonian_in_actions(rng):
    bs = oscillator(2, [1.0, math.sqrt(2.0)])
    sys = bs.system
    for _ in range(100):
        I = rng.uniform(0.05, 2.0, 2)
        z = rng.uniform(0, 2 * math.pi, 2)
        x = bs.chart.from_action_angle(ActionAngleState(z, I))
        assert abs(evaluate(sys.H, sys.env(x)) - bs.omegas @ I) < 1e-12


def test_integrals_independent_of_angles(rng):
    bs = oscillator(2, [1.0, 3.0])
    sys = bs.system
    I = np.array([0.4, 1.3])
    vals = np.array([[evaluate(f, sys.env(bs.chart.from_action_angle(ActionAngleState(z, I))))
                      for f in sys.F] for z in rng.uniform(0, 2 * math.pi, (50, 2))])
    assert np.max(np.ptp(vals, axis=0)) < 1e-10


def test_tangent_chart_is_differential(rng):
    bs = oscillator(2, [1.0, 2.5])
    d = 1e-6
    for _ in range(20):
        x, v = rng.uniform(0.3, 2, 4), rng.normal(size=4)
        s = bs.chart.tangent_to(x, v)
        a = bs.chart.to_action_angle(x + d * v)
        b = bs.chart.to_action_angle(x - d * v)
        dz = (np.angle(np.exp(1j * (a.z - b.z)))) / (2 * d)
        assert np.allclose(s.dz, dz, atol=1e-7)
        assert np.allclose(s.dI, (a.I - b.I) / (2 * d), atol=1e-7)
        x2, v2 = bs.chart.tangent_from(s)
        assert np.allclose(x2, x, atol=1e-12) and np.allclose(v2, v, atol=1e-12)


def test_action_angle_system():
    aa = oscillator(2, [1.0, 2.0]).aa_system
    assert aa.chart == "action-angle"
    assert evaluate(aa.H, {"w1": 1.0, "w2": 2.0, "I1": 0.5, "I2": 0.25}) == 1.0


def test_invalid_frequencies():
    with pytest.raises(ValueError):
        oscillator(1, [0.0])
    with pytest.raises(ValueError):
        oscillator(2, [1.0])
    with pytest.raises(ValueError):
        kepler(-1.0)


def test_kepler_circular_values():
    sys = kepler().system
    env = sys.env([1.0, 0.0, 0.0, 1.0])
    assert evaluate(sys.F[0], env) == -0.5 and evaluate(sys.F[1], env) == 1.0


def test_kepler_circular_period():
    """After 6284 steps of h=1e-3 the orbit sits at the exact solution for t=6.284,
    and linear interpolation of the return through q2=0 recovers 2 pi."""
    sys = kepler().system
    tr = integrate(rhs_base(sys), [1.0, 0.0, 0.0, 1.0], IntegratorConfig("midpoint", 1e-3, 6284))
    t = tr.times[-1]
    exact = np.array([math.cos(t), math.sin(t), -math.sin(t), math.cos(t)])
    assert np.max(np.abs(tr.states[-1] - exact)) < 1e-5
    q2 = tr.states[:, 1]
    i = np.nonzero((q2[:-1] < 0) & (q2[1:] >= 0))[0][-1]
    t_ret = tr.times[i] + tr.h * (-q2[i]) / (q2[i + 1] - q2[i])
    assert abs(t_ret - 2 * math.pi) < 1e-5


def test_quartic_values():
    sys = quartic().system
    assert np.array_equal(rhs_base(sys)([2.0, 0.0]), [0.0, -8.0])
    assert evaluate(sys.H, sys.env([1.0, 0.0])) == 0.25


def _quartic_period(amplitude, h=1e-3):
    sys = quartic().system
    tr = integrate(rhs_base(sys), [amplitude, 0.0], IntegratorConfig("midpoint", h, int(8.0 / h)))
    q, t = tr.states[:, 0], tr.times
    down = np.nonzero((q[:-1] > 0) & (q[1:] <= 0))[0][0]
    up = np.nonzero((q[:-1] < 0) & (q[1:] >= 0))[0][0]

    def cross(i):
        return t[i] + h * q[i] / (q[i] - q[i + 1])

    return 2.0 * (cross(up) - cross(down))


def test_quartic_period_scaling():
    # E = A^4 / 4: amplitude 1 gives E = 0.25, amplitude 2 gives E = 4
    ratio = _quartic_period(1.0) / _quartic_period(2.0)
    assert abs(ratio - 2.0) < 1e-3


def test_builtins_pass_integrability_gate(builtins):
    for bs in builtins:
        assert validate_cis(bs.system, 100, seed=0, exclusions=bs.exclusions).passed(), bs.name


@pytest.mark.parametrize("spec, m", [("osc", 1), ("osc:m=2,w=1,1", 2), ("osc:m=3,w=2", 3),
                                     ("kepler:mu=1", 2), ("kepler", 2), ("quartic", 1)])
def test_builtin_shorthand(spec, m):
    assert builtin(spec).system.m == m


@pytest.mark.parametrize("spec", ["toda", "osc:m=2,w=1,2,3", "osc:x=1", "kepler:mu=0", "osc:m=two", "osc:1"])
def test_builtin_shorthand_errors(spec):
    with pytest.raises(ValueError):
        builtin(spec)


@pytest.mark.parametrize("fname, spec", [("oscillator.cis", "osc"), ("oscillator2.cis", "osc:m=2,w=1,1"),
                                         ("kepler.cis", "kepler"), ("quartic.cis", "quartic")])
def test_shipped_system_files(fname, spec):
    sys = parse_system((SYSTEMS / fname).read_text())
    ref = builtin(spec).system
    assert sys.H == ref.H and sys.F == ref.F and sys.params == ref.params
