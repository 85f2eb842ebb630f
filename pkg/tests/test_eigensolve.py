import math

import numpy as np
import pytest

from oracles import dense_first_eig

from fracopt.eigensolve import (EigenResult, descent, first_eigenpair, inverse_iteration,
                                local_reference, local_reference_closed_form, pi_p,
                                poincare_lower_bound)
from fracopt.geometry import (CANDIDATE, GeometryError, ParameterError, Params, build_mesh,
                              mask_from_cells, mask_from_intervals, translated_ball)
from fracopt.kernel import ConstraintError, Potential, assemble_base, assemble_kernel, rayleigh

UNIT = ("interval", 0.0, 1.0)


def setup(s, p, D, h=0.05, R=2.0):
    par = Params(1, s, p, 0.5, R)
    mesh = build_mesh(UNIT, par, h)
    mask = mask_from_intervals(mesh, D)
    return par, mesh, mask, assemble_kernel(mesh, mask, s, p)


# --------------------------------------------------------------------------
# p = 2


def test_dense_example():
    par, mesh, mask, op = setup(0.5, 2.0, [(-1.0, 0.0), (1.0, 2.0)], h=0.01)
    res = first_eigenpair(mask, par, op)
    free = op.free
    lam, _ = dense_first_eig(op.energy_matrix()[np.ix_(free, free)],
                             op.base.mass_matrix[np.ix_(free, free)])
    assert res.converged
    assert res.lam == pytest.approx(lam, rel=1e-8)
    assert res.residual <= 1e-6


def test_result_invariants():
    par, mesh, mask, op = setup(0.6, 2.0, [(1.0, 1.5)])
    res = first_eigenpair(mask, par, op)
    assert isinstance(res, EigenResult)
    assert op.mass_form.value(res.u, 2.0) == pytest.approx(1.0, rel=1e-12)
    assert res.u.min() >= -1e-10 and res.lam > 0
    assert np.all(res.u[op.forced] == 0)
    assert res.lam == pytest.approx(rayleigh(res.u, mask, op), rel=1e-9)
    assert res.fingerprint == mask.fingerprint()


def test_empty_mask():
    par, mesh, mask, op = setup(0.5, 2.0, [])
    res = first_eigenpair(mask, par, op)
    assert res.lam == pytest.approx(0.0, abs=1e-10)
    assert np.allclose(res.u, 1.0, atol=1e-8)  # |Omega| = 1


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_empty_mask_constant_potential(p):
    par, mesh, mask, op = setup(0.5, p, [], h=0.1)
    res = first_eigenpair(mask, par, op, V=2.5)
    assert res.lam == pytest.approx(2.5, rel=1e-7)
    assert np.ptp(res.u) < 1e-3


def test_mismatched_operator():
    par, mesh, mask, op = setup(0.5, 2.0, [(1.0, 1.5)])
    other = mask_from_intervals(mesh, [(1.0, 1.6)])
    with pytest.raises(ValueError):
        first_eigenpair(other, par, op)
    with pytest.raises(ParameterError):
        first_eigenpair(mask, Params(1, 0.4, 2.0, 0.5, 2.0), op)


def test_inverse_iteration_small():
    A = np.diag([3.0, 1.0, 2.0])
    lam, x, its, conv, hist = inverse_iteration(A, np.eye(3))
    assert conv and lam == pytest.approx(1.0, rel=1e-12)
    assert abs(abs(x[1]) - np.linalg.norm(x)) < 1e-8
    with pytest.raises(ConstraintError):
        inverse_iteration(np.zeros((0, 0)), np.zeros((0, 0)))


def test_not_converged_is_flagged():
    par, mesh, mask, op = setup(0.5, 3.0, [(1.0, 1.5)], h=0.1)
    res = first_eigenpair(mask, par, op, cap=2)
    assert not res.converged


def test_nested_masks_monotone():
    par = Params(1, 0.5, 2.0, 0.5, 2.0)
    mesh = build_mesh(UNIT, par, 0.05)
    base = assemble_base(mesh, 0.5, 2.0)
    cand = mesh.cells_with(CANDIDATE)
    lams = []
    for k in (4, 10, 20, len(cand)):
        mask = mask_from_cells(mesh, cand[:k])
        lams.append(first_eigenpair(mask, par, base.with_mask(mask)).lam)
    assert all(a <= b + 1e-9 for a, b in zip(lams, lams[1:]))


# --------------------------------------------------------------------------
# general p


def test_p3_restarts():
    # 19 free dofs
    par, mesh, mask, op = setup(0.5, 3.0, [(1.25, 2.0)], h=1 / 19)
    res = first_eigenpair(mask, par, op, restarts=20, seed=3)
    assert res.restart_best is not None
    assert res.lam <= res.restart_best * 1.01
    assert res.u.min() >= -1e-10


def test_descent_monotone_history():
    par, mesh, mask, op = setup(0.4, 1.5, [(1.5, 2.0)], h=0.1)
    res = first_eigenpair(mask, par, op)
    h = np.array(res.history)
    assert len(h) >= 1
    assert np.all(np.diff(h) <= 1e-12 * h[0])


def test_descent_direct():
    par, mesh, mask, op = setup(0.5, 3.0, [(1.5, 2.0)], h=0.1)
    free = op.free
    energy = op.energy_form().restrict(free)
    mass = op.mass_form.restrict(free)
    lam, x, its, conv, hist = descent(energy, mass, 3.0, np.ones(len(free)))
    assert conv
    assert lam == pytest.approx(energy.value(x, 3.0) / mass.value(x, 3.0), rel=1e-12)
    assert lam <= hist[0]


def test_general_p_matches_p2_path():
    # the descent on p = 2 data must agree with the linear eigensolver
    par, mesh, mask, op = setup(0.5, 2.0, [(1.0, 1.5)], h=0.1)
    free = op.free
    energy = op.energy_form().restrict(free)
    mass = op.mass_form.restrict(free)
    lam, *_ = descent(energy, mass, 2.0, np.ones(len(free)), tol=1e-12, cap=20000,
                      precond=energy.matrix(), refresh=10)
    assert lam == pytest.approx(first_eigenpair(mask, par, op).lam, rel=1e-8)


# --------------------------------------------------------------------------
# Poincare bounds


def test_poincare_example():
    par, mesh, mask, op = setup(0.5, 2.0, [(1.0, 2.0)])
    assert poincare_lower_bound(mask, mesh.omega, par) == pytest.approx(0.125, rel=1e-12)


def test_poincare_half_variant():
    par, mesh, mask, op = setup(0.5, 2.0, [(1.0, 2.0)])
    full = poincare_lower_bound(mask, mesh.omega, par)
    half = poincare_lower_bound(mask, mesh.omega, par, variant="half", d=2.0)
    assert half == pytest.approx(0.5 * full, rel=1e-14)
    auto = poincare_lower_bound(mask, mesh.omega, par, variant="half")
    assert 0 < auto and math.isfinite(auto)
    with pytest.raises(ValueError):
        poincare_lower_bound(mask, mesh.omega, par, variant="quarter")


def test_poincare_decreases_under_translation():
    par = Params(1, 0.5, 2.0, 0.5, 4.0)
    mesh = build_mesh(UNIT, par, 0.05)
    vals = [poincare_lower_bound(translated_ball(mesh, 0.25, c), mesh.omega, par)
            for c in (1.5, 2.0, 2.5, 3.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_poincare_empty():
    par, mesh, mask, op = setup(0.5, 2.0, [])
    with pytest.raises(ConstraintError, match="empty Dirichlet set"):
        poincare_lower_bound(mask, mesh.omega, par)


def test_poincare_holds_for_computed():
    for s in (0.2, 0.5, 0.8):
        par, mesh, mask, op = setup(s, 2.0, [(1.0, 1.5)])
        res = first_eigenpair(mask, par, op)
        assert res.lam >= poincare_lower_bound(mask, mesh.omega, par)


# --------------------------------------------------------------------------
# local references


def test_local_dirichlet():
    assert local_reference(2.0, "dirichlet") == pytest.approx(math.pi ** 2, rel=1e-4)


def test_local_mixed():
    assert local_reference(2.0, "mixed", gamma=(1.0,)) == pytest.approx(math.pi ** 2 / 4, rel=1e-4)
    assert local_reference(2.0, "mixed(0)") == pytest.approx(math.pi ** 2 / 4, rel=1e-4)


def test_local_neumann_constant_potential():
    assert local_reference(2.0, "neumann", V=1.7) == 1.7
    assert local_reference(2.0, "neumann") == pytest.approx(0.0, abs=1e-9)


def test_local_ordering():
    n = local_reference(2.0, "neumann")
    m = local_reference(2.0, "mixed", gamma=(1.0,))
    d = local_reference(2.0, "dirichlet")
    assert n <= m <= d


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_local_general_p_closed_form(p):
    val = local_reference(p, "dirichlet", h=1e-2)
    assert val == pytest.approx(local_reference_closed_form(p), rel=2e-3)


def test_pi_p():
    assert pi_p(2.0) == pytest.approx(math.pi, rel=1e-15)
    assert local_reference_closed_form(2.0, "mixed", gamma=(0.0,), V=1.0) == pytest.approx(
        math.pi ** 2 / 4 + 1)


def test_local_piecewise_potential_bounds():
    V = Potential.piecewise([0.5], [1.0, 2.0])
    val = local_reference(2.0, "neumann", V=V, h=1e-2)
    assert 1.0 < val < 1.5


def test_local_errors():
    with pytest.raises(GeometryError, match="local reference is 1D only"):
        local_reference(2.0, n=2)
    with pytest.raises(ParameterError):
        local_reference(2.0, "mixed", gamma=(0.5,))
    with pytest.raises(ParameterError):
        local_reference(2.0, "robin")
