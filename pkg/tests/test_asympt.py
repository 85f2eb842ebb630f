import math

import pytest

from oracles import dense_first_eig

from fracopt.asympt import SweepRecord, default_h, nonlocal_neumann_value, s_sweep, summarize
from fracopt.geometry import ParameterError, Params, build_mesh, mask_from_intervals
from fracopt.kernel import Potential, assemble_kernel

UNIT = ("interval", 0.0, 1.0)
TWO_STEP = Potential.piecewise([0.5], [1.0, 2.0])


def empty_op(s=0.5, p=2.0, h=0.05):
    par = Params(1, s, p, 0.5, 2.0)
    mesh = build_mesh(UNIT, par, h)
    return par, assemble_kernel(mesh, mesh.empty_mask(), s, p)


def test_neumann_constant_potential():
    for s in (0.3, 0.8):
        par, op = empty_op(s)
        assert nonlocal_neumann_value(par, 1.7, op) == pytest.approx(1.7, rel=1e-12)


def test_neumann_two_step_bounds_and_dense():
    par, op = empty_op()
    val = nonlocal_neumann_value(par, TWO_STEP, op)
    assert 1.0 <= val <= 1.5
    lam, _ = dense_first_eig(op.energy_matrix(TWO_STEP), op.base.mass_matrix)
    assert val == pytest.approx(lam, rel=1e-8)


def test_neumann_ignores_mask():
    par = Params(1, 0.5, 2.0, 0.5, 2.0)
    mesh = build_mesh(UNIT, par, 0.05)
    op = assemble_kernel(mesh, mask_from_intervals(mesh, [(1.0, 1.5)]), 0.5, 2.0)
    assert nonlocal_neumann_value(par, 2.0, op) == pytest.approx(2.0, rel=1e-12)


def test_default_h():
    assert default_h(0.5) == 0.1
    assert default_h(0.9) == 1 / 40
    assert default_h(0.95) == 1 / 80
    assert default_h(0.2, h_max=0.05) == 0.05


def test_sweep_chain_and_trend():
    base = Params(1, 0.5, 2.0, 0.5, 2.0)
    res = s_sweep(base, [0.5, 0.7, 0.8], h_max=0.1)
    assert len(res.records) == 3
    for rec in res.records:
        assert not rec.skipped and rec.chain_holds()
        assert rec.local_dirichlet_ref == pytest.approx(math.pi ** 2)
        assert rec.local_neumann_ref == 0.0
        assert math.isnan(rec.lambda_neumann_nonlocal)
    assert res.plus_increasing and res.minus_decreasing
    assert res.final_dirichlet_gap == res.dirichlet_gaps[-1]
    assert all(g > 0 for g in res.dirichlet_gaps)


def test_sweep_with_potential_sandwich():
    base = Params(1, 0.5, 2.0, 0.5, 2.0)
    res = s_sweep(base, [0.5, 0.7], V=TWO_STEP, h_max=0.1, h_local=1e-2)
    for rec in res.records:
        assert rec.potential and rec.chain_holds()
        assert rec.lambda_neumann_nonlocal <= rec.lambda_minus_R
        assert 1.0 < rec.local_neumann_ref < 1.5


def test_sweep_without_minimization():
    res = s_sweep(Params(1, 0.5, 2.0, 0.5, 2.0), [0.6], minimize=False)
    assert math.isnan(res.records[0].lambda_minus_R)


def test_sweep_skips_large_meshes():
    base = Params(1, 0.5, 2.0, 0.5, 2.0)
    res = s_sweep(base, [0.5, 0.9], h_rule=lambda s: 0.1 if s < 0.8 else 4e-4)
    assert not res.records[0].skipped
    assert res.records[1].skipped and "too large" in res.records[1].note
    assert res.records[1].chain_holds()


def test_sweep_s_list_errors():
    base = Params(1, 0.5, 2.0, 0.5, 2.0)
    with pytest.raises(ParameterError, match="strictly increasing"):
        s_sweep(base, [0.6, 0.5])
    with pytest.raises(ParameterError, match="strictly increasing"):
        s_sweep(base, [])
    with pytest.raises(ParameterError, match="0 < s < 1"):
        s_sweep(base, [0.5, 1.0])
    with pytest.raises(ParameterError, match="override"):
        s_sweep(base, [0.5, 0.97])


def test_sweep_high_s_warns():
    base = Params(1, 0.5, 2.0, 0.5, 2.0)
    with pytest.warns(RuntimeWarning, match="slow"):
        res = s_sweep(base, [0.96], allow_high_s=True, minimize=False,
                      h_rule=lambda s: 4e-4)
    assert res.records[0].skipped


def test_summarize_flags():
    recs = [SweepRecord(0.5, 0.1, 3.0, 2.0, 1.0, local_dirichlet_ref=10.0, local_neumann_ref=0.0),
            SweepRecord(0.7, 0.1, 4.0, 2.5, 0.5, local_dirichlet_ref=10.0, local_neumann_ref=0.0),
            SweepRecord(0.8, 0.1, skipped=True)]
    res = summarize(recs)
    assert res.plus_increasing and res.minus_decreasing
    assert res.dirichlet_gaps == [0.7, 0.6]
    assert res.neumann_gaps == [1.0, 0.5]
    bad = SweepRecord(0.5, 0.1, 1.0, 2.0, 1.0)
    assert not bad.chain_holds()
