import re

import numpy as np
import pytest

from cisjac.modelzoo import all_builtins

ACCEPTANCE = {
    1: "bracket identities on TM",
    2: "tangent integrals conserved",
    3: "reconstruction persistence",
    4: "divergence contrast",
    5: "action-angle conjugacy",
    6: "integrability gate",
    7: "differentiation cross-validation",
    8: "integrator structure",
}


@pytest.fixture(scope="session")
def builtins():
    return all_builtins()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def sample_points(bs, n, seed=0, box=2.0):
    """Seeded base points avoiding the system's singular sets."""
    r = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        x = r.uniform(-box, box, 2 * bs.system.m)
        if not bs.excluded(x):
            out.append(x)
    return np.array(out)


def pytest_terminal_summary(terminalreporter):
    outcomes = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", nodeid)
            if not m:
                continue
            n = int(m.group(1))
            ok = key == "passed"
            outcomes[n] = outcomes.get(n, True) and ok
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        if n in outcomes:
            status = "PASS" if outcomes[n] else "FAIL"
        else:
            status = "NOT RUN"
        terminalreporter.write_line(f"criterion {n}: {status}  {ACCEPTANCE[n]}")
