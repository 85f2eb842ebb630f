"""Ladders in s toward 1 comparing nonlocal optimal values with local ones.

Per s a fresh mesh is built with h <= (1 - s) / 4 so that the stiffening
kernel stays resolved.  Each record holds the full-candidate value (the
stand-in for the supremum over masks), the annulus value, the alternating
minimum and, with a potential, the value for the empty mask.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .eigensolve import first_eigenpair, local_reference, local_reference_closed_form
from .geometry import Params, ParameterError, build_mesh, fattened_annulus
from .kernel import KernelOperator, Potential, ProblemTooLarge, assemble_base
from .shapeopt import alternating_minimize

HIGH_S = 0.95
DEFAULT_S_LIST = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95)


@dataclass(frozen=True)
class SweepRecord:
    s: float
    h: float
    lambda_plus_proxy: float = math.nan
    lambda_annulus: float = math.nan
    lambda_minus_R: float = math.nan
    lambda_neumann_nonlocal: float = math.nan
    local_dirichlet_ref: float = math.nan
    local_neumann_ref: float = math.nan
    potential: bool = False
    skipped: bool = False
    note: str = ""

    def chain_holds(self, tol: float = 1e-9) -> bool:
        """minus <= annulus <= plus (+ tol), and the empty-mask value below."""
        if self.skipped:
            return True
        rel = tol * max(1.0, abs(self.lambda_plus_proxy))
        ok = self.lambda_minus_R <= self.lambda_annulus + rel
        ok &= self.lambda_annulus <= self.lambda_plus_proxy + rel
        if self.potential:
            ok &= self.lambda_neumann_nonlocal <= self.lambda_minus_R + rel
        return bool(ok)


@dataclass
class SweepResult:
    records: list
    plus_increasing: bool = False
    minus_decreasing: bool = False
    dirichlet_gaps: list = field(default_factory=list)  # (ref - plus) / ref per record
    neumann_gaps: list = field(default_factory=list)  # (minus - ref) / max(ref, 1) per record

    @property
    def final_dirichlet_gap(self) -> float:
        return self.dirichlet_gaps[-1] if self.dirichlet_gaps else math.nan


def default_h(s: float, h_max: float = 0.1) -> float:
    """Largest h = 1/N with h <= min(h_max, (1 - s) / 4)."""
    return 1.0 / math.ceil(1.0 / min(h_max, (1.0 - s) / 4.0) - 1e-9)


def nonlocal_neumann_value(params: Params, V: Potential | float, op: KernelOperator,
                           tol: float | None = None) -> float:
    """First eigenvalue with the potential and no Dirichlet cells."""
    if not op.mask.is_empty:
        op = op.base.with_mask(op.mask.mesh.empty_mask())
    return first_eigenpair(op.mask, params, op, V=V, tol=tol).lam


def _local_refs(p: float, V: Potential | None, n: int, h_local: float):
    if n != 1:
        return math.nan, math.nan
    if V is None or V.v1 == V.v2:
        c = None if V is None else V.v1
        return (local_reference_closed_form(p, "dirichlet", c),
                local_reference_closed_form(p, "neumann", c))
    return (local_reference(p, "dirichlet", V, h=h_local),
            local_reference(p, "neumann", V, h=h_local))


def s_sweep(base: Params, s_list=DEFAULT_S_LIST, domain=("interval", 0.0, 1.0), h_rule=None,
            V: Potential | float | None = None, h_max: float = 0.1, minimize: bool = True,
            allow_high_s: bool = False, h_local: float = 1e-3, cap: int = 100) -> SweepResult:
    """One record per s in the strictly increasing ``s_list``.

    ``h_rule(s)`` gives the mesh size (default ``default_h``).  Values of s
    above 0.95 need ``allow_high_s`` and emit a warning about run time.
    Records whose mesh exceeds the size caps are marked skipped.
    """
    s_list = [float(s) for s in s_list]
    if not s_list or any(b <= a for a, b in zip(s_list, s_list[1:])):
        raise ParameterError("s_list must be strictly increasing")
    if any(not 0.0 < s < 1.0 for s in s_list):
        raise ParameterError("invalid params: every s must satisfy 0 < s < 1")
    if max(s_list) > HIGH_S:
        if not allow_high_s:
            raise ParameterError(f"s above {HIGH_S} needs an explicit override")
        warnings.warn(f"s above {HIGH_S}: mesh refinement makes this run slow", RuntimeWarning)
    if V is not None and not isinstance(V, Potential):
        V = Potential.constant(float(V))
    h_rule = h_rule or (lambda s: default_h(s, h_max))

    records = []
    for s in s_list:
        params = base.with_s(s)
        h = float(h_rule(s))
        dref, nref = _local_refs(params.p, V, params.n, h_local)
        common = dict(s=s, h=h, local_dirichlet_ref=dref, local_neumann_ref=nref,
                      potential=V is not None)
        try:
            mesh = build_mesh(domain, params, h)
            kb = assemble_base(mesh, s, params.p)
            plus = first_eigenpair(mesh.candidate, params, kb.with_mask(mesh.candidate), V=V)
            ann = fattened_annulus(mesh, params.alpha)
            ann_eig = first_eigenpair(ann, params, kb.with_mask(ann), V=V)
            minus = math.nan
            if minimize:
                minus = alternating_minimize(params, kb, ann, cap=cap, V=V).lam
            neu = math.nan
            if V is not None:
                neu = nonlocal_neumann_value(params, V, kb.with_mask(mesh.empty_mask()))
        except ProblemTooLarge as exc:
            records.append(SweepRecord(skipped=True, note=str(exc), **common))
            continue
        records.append(SweepRecord(lambda_plus_proxy=plus.lam, lambda_annulus=ann_eig.lam,
                                   lambda_minus_R=minus, lambda_neumann_nonlocal=neu, **common))
    return summarize(records)


def summarize(records) -> SweepResult:
    done = [r for r in records if not r.skipped]
    plus = np.array([r.lambda_plus_proxy for r in done])
    minus = np.array([r.lambda_minus_R for r in done])
    res = SweepResult(list(records))
    res.plus_increasing = bool(len(plus) > 1 and np.all(np.diff(plus) > 0))
    res.minus_decreasing = bool(len(minus) > 1 and np.all(np.diff(minus) < 0))
    res.dirichlet_gaps = [(r.local_dirichlet_ref - r.lambda_plus_proxy) / r.local_dirichlet_ref
                          for r in done]
    res.neumann_gaps = [(r.lambda_minus_R - r.local_neumann_ref) / max(abs(r.local_neumann_ref), 1.0)
                        for r in done]
    return res
