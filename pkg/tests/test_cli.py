import csv
import io
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cisjac import IntegratorConfig, integrate, kepler, rhs_base
from cisjac.cli import main

SYSTEMS = Path(__file__).resolve().parent.parent / "systems"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    data = list(csv.reader(io.StringIO(text)))
    return data[0], np.array([[float(v) for v in r] for r in data[1:]])


# --- check ----------------------------------------------------------------------


def test_check_kepler_file(capsys):
    code, out, _ = run(capsys, "check", "--system", str(SYSTEMS / "kepler.cis"), "--samples", "200", "--seed", "7")
    assert code == 0
    assert "PASS" in out


def test_check_dependent_file(capsys):
    code, out, err = run(capsys, "check", "--system", str(SYSTEMS / "dependent.cis"), "--samples", "50")
    assert code == 1
    assert "independence" in out + err


def test_check_malformed_file(tmp_path, capsys):
    bad = tmp_path / "bad.cis"
    bad.write_text("dim 1\nH (p1^2 +\nF1 q1\n")
    code, _, err = run(capsys, "check", "--system", str(bad))
    assert code == 2
    assert "line 2" in err


def test_missing_file_is_usage_error(capsys):
    code, _, _ = run(capsys, "check", "--system", "no/such/file.cis")
    assert code == 2


def test_seed_from_environment(monkeypatch, capsys):
    monkeypatch.setenv("CISJAC_SEED", "11")
    _, a, _ = run(capsys, "check", "--system", "kepler", "--samples", "20")
    _, b, _ = run(capsys, "check", "--system", "kepler", "--samples", "20", "--seed", "11")
    assert a == b


# --- simulate / tangent ---------------------------------------------------------------


def test_simulate_quartic(capsys):
    code, out, _ = run(capsys, "simulate", "--system", "quartic", "--x0", "1,0", "--h", "0.01",
                       "--steps", "1000", "--integrator", "midpoint")
    assert code == 0
    header, data = rows(out)
    assert header == ["t", "q1", "p1", "F1"]
    assert len(data) == 1001
    # quartic energy is not a quadratic invariant: midpoint keeps it to O(h^2)
    spread = np.ptp(data[:, 3])
    assert spread < 1e-5
    _, out, _ = run(capsys, "simulate", "--system", "quartic", "--x0", "1,0", "--h", "0.005", "--steps", "2000")
    assert np.ptp(rows(out)[1][:, 3]) == pytest.approx(spread / 4, rel=1e-2)


def test_tangent_oscillator(capsys):
    code, out, _ = run(capsys, "tangent", "--system", "osc:m=1,w=1", "--x0", "0,1", "--v0", "1,0",
                       "--h", "0.01", "--steps", "2000")
    assert code == 0
    header, data = rows(out)
    assert header == ["t", "q1", "p1", "dq1", "dp1", "F1", "TF1"]
    assert np.ptp(data[:, 6]) < 1e-11


def test_zero_steps_single_row(capsys):
    code, out, _ = run(capsys, "simulate", "--system", "quartic", "--x0", "1,0", "--steps", "0")
    assert code == 0
    assert len(rows(out)[1]) == 1


def test_record_every(capsys):
    _, out, _ = run(capsys, "simulate", "--system", "osc", "--x0", "1,0", "--steps", "100", "--record-every", "25")
    assert rows(out)[1][:, 0] == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])


def test_csv_round_trip_and_determinism(tmp_path, capsys):
    args = ["simulate", "--system", "kepler", "--x0", "1,0,0,1.2", "--steps", "300", "--integrator", "rk4"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    tr = integrate(rhs_base(kepler().system), [1, 0, 0, 1.2], IntegratorConfig("rk4", 0.01, 300))
    _, data = rows(a.read_text())
    assert np.array_equal(data[:, 1:5], tr.states)


def test_wrong_state_length(capsys):
    code, _, _ = run(capsys, "simulate", "--system", "kepler", "--x0", "1,0")
    assert code == 2


def test_numeric_failure_keeps_partial_csv(capsys):
    code, out, err = run(capsys, "simulate", "--system", "kepler", "--x0", "0,0,0,1", "--steps", "3")
    assert code == 3
    assert out.startswith("t,q1,q2,p1,p2,F1,F2")
    assert "row" in err or "numeric" in err


def test_verlet_separability_failure(tmp_path, capsys):
    f = tmp_path / "qp.cis"
    f.write_text("dim 1\nseparable true\nH q1*p1\nF1 q1*p1\n")
    code, _, err = run(capsys, "simulate", "--system", str(f), "--x0", "1,1", "--steps", "3", "--integrator", "verlet")
    assert code == 1
    assert "separable" in err


# --- brackets --------------------------------------------------------------------------


def test_brackets_kepler(capsys):
    code, out, _ = run(capsys, "brackets", "--system", "kepler", "--seed", "3")
    assert code == 0
    worst = [float(line.rsplit(":", 1)[1]) for line in out.splitlines() if line.startswith("worst")]
    assert len(worst) == 3 and max(worst) < 1e-10


def test_brackets_oscillator_pair(capsys):
    code, out, _ = run(capsys, "brackets", "--system", "osc", "--samples", "10")
    assert code == 0
    line = next(l for l in out.splitlines() if l.startswith("q1,p1"))
    bracket, *res = line.split()[1:]
    assert float(bracket) == -1.0 and all(float(r) == 0.0 for r in res)


def test_brackets_deterministic(capsys):
    _, a, _ = run(capsys, "brackets", "--system", "quartic", "--seed", "5")
    _, b, _ = run(capsys, "brackets", "--system", "quartic", "--seed", "5")
    assert a == b


# --- reconstruct / diverge --------------------------------------------------------------


def _report_value(text, key):
    line = next(l for l in text.splitlines() if l.startswith(key))
    return float(line.split()[-1])


def test_reconstruct_oscillator(capsys):
    code, out, _ = run(capsys, "reconstruct", "--system", "osc", "--x0", "1,0", "--x0p", "1.001,0", "--T", "100")
    assert code == 0
    assert _report_value(out, "R(T") < 1e-9


def test_reconstruct_quartic_csv(tmp_path, capsys):
    out_csv = tmp_path / "r.csv"
    code, out, _ = run(capsys, "reconstruct", "--system", "quartic", "--x0", "1,0", "--x0p", "1.001,0",
                       "--T", "100", "--out", str(out_csv))
    assert code == 0
    assert _report_value(out, "R(T") < 1e-6
    header, data = rows(out_csv.read_text())
    assert header == ["t", "R1"] and len(data) == 10_001


def test_reconstruct_rank_deficient(capsys):
    code, _, err = run(capsys, "reconstruct", "--system", "osc", "--x0", "0,0", "--x0p", "0.001,0", "--T", "1")
    assert code == 1
    assert "sigma" in err


def test_reconstruct_tolerance_failure(capsys):
    code, out, _ = run(capsys, "reconstruct", "--system", "quartic", "--x0", "1,0", "--x0p", "1.001,0",
                       "--T", "10", "--tol", "1e-15")
    assert code == 1 and "FAIL" in out


def test_diverge_oscillator(tmp_path, capsys):
    code, out, _ = run(capsys, "diverge", "--system", "osc", "--x0", "1,0", "--eps", "1e-3",
                       "--out", str(tmp_path / "d.csv"))
    assert code == 0
    growth, max_r = float(out.split()[2]), float(out.split()[5])
    assert growth < 2 and max_r < 1e-9


def test_diverge_zero_eps(capsys):
    code, out, _ = run(capsys, "diverge", "--system", "quartic", "--x0", "1,0", "--eps", "0", "--T", "1")
    assert code == 0
    header, data = rows(out)
    assert header == ["t", "D", "R"]
    assert not np.any(data[:, 1:])


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cisjac.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "osc:m=2" in proc.stdout or "reconstruct" in proc.stdout
