import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from fracopt.eigensolve import add_listener, poincare_lower_bound  # noqa: E402
from fracopt.geometry import Params  # noqa: E402

# every converged eigenvalue with a nonempty mask is checked against
# 0.95 times the Poincare bound, whichever test produced it
POINCARE = {"checked": 0, "violations": []}
# smallest component over every returned (unit-norm) eigenfunction
SIGN = {"count": 0, "min": 0.0}
CRITERIA: dict[int, tuple[bool, str]] = {}


def _poincare_check(result, op, params):
    u = result.u
    SIGN["count"] += 1
    SIGN["min"] = min(SIGN["min"], float(u.min()))
    mask = op.mask
    if not result.converged or mask.is_empty:
        return
    base = op.base
    par = Params(base.n, base.s, base.p, 1.0, base.mesh.R)
    bound = poincare_lower_bound(mask, base.mesh.omega, par)
    POINCARE["checked"] += 1
    if result.lam < 0.95 * bound:
        POINCARE["violations"].append((base.n, base.s, base.p, result.lam, bound))
        raise AssertionError(f"Poincare bound violated: lambda={result.lam} < 0.95 * {bound}")


add_listener(_poincare_check)


class _Criterion:
    def __init__(self, number):
        self.number = number
        self.done = False

    def record(self, ok: bool, detail: str) -> bool:
        CRITERIA[self.number] = (bool(ok), detail)
        self.done = True
        print(f"criterion {self.number:2d} {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)


@pytest.fixture
def criterion():
    made = []

    def factory(number):
        c = _Criterion(number)
        made.append(c)
        return c

    yield factory
    for c in made:
        if not c.done:
            CRITERIA[c.number] = (False, "raised before completion")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    if 3 in CRITERIA:
        ok = CRITERIA[3][0] and not POINCARE["violations"]
        CRITERIA[3] = (ok, f"{POINCARE['checked']} converged eigenvalues checked over the "
                           f"session, {len(POINCARE['violations'])} below 0.95 x bound")
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {detail}")
