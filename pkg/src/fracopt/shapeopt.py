"""Optimization of the Dirichlet mask and the related experiments.

The score of a candidate cell c for a fixed u is

    f_c(u) = int_Omega |u(x)|^p int_c |x - y|^{-(n+sp)} dy dx,

the only mask-dependent part of the energy when u is extended by zero.
Minimizing sum_{c in D} f_c over masks of fixed cell count is a sorting
problem (bathtub principle), which drives the alternating scheme.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .eigensolve import EigenResult, first_eigenpair, poincare_lower_bound
from .geometry import (CANDIDATE, GeometryError, Mesh, Params, SetMask, build_mesh,
                       cells_for_measure, fattened_annulus, inf_distance, mask_from_cells,
                       mask_measure_in_ball, translated_ball)
from .kernel import ConstraintError, KernelBase, Potential, assemble_base, normalization_K

FIXED_POINT = "fixed_point"
TOLERANCE = "tolerance"
CAP = "cap"


@dataclass
class OptResult:
    mask: SetMask
    eigen: EigenResult
    history: list = field(default_factory=list)  # (iteration, lambda, fingerprint)
    best_so_far: tuple | None = None  # (lambda, mask), maximization only
    terminated_by: str = CAP

    @property
    def lam(self) -> float:
        return self.eigen.lam


def _cell_count(mesh: Mesh, alpha: float) -> int:
    cand = mesh.cells_with(CANDIDATE)
    m = cells_for_measure(mesh, alpha)
    if alpha >= mesh.candidate_measure or m > len(cand):
        raise GeometryError(f"alpha too large: alpha={alpha} but the candidate measure is "
                            f"{mesh.candidate_measure:g}")
    return m


def bathtub_rearrange(u: np.ndarray, base: KernelBase, alpha: float,
                      order: str = "ascending") -> SetMask:
    """Mask of the cells with the smallest (or largest) scores f_c(u).

    The cell count is the nearest multiple of the cell volume to alpha.
    Ties go to the lowest cell index.  Cells whose score is infinite
    (u nonzero where the cell would force it to vanish) sort last in
    ascending order and first in descending order.
    """
    if order not in ("ascending", "descending"):
        raise ValueError(f"unknown order {order!r}")
    u = np.asarray(u, dtype=float)
    if u.shape != (base.ndof,):
        raise ValueError(f"u must have {base.ndof} nodal values on Omega")
    if not np.any(u):
        raise ConstraintError("u vanishes identically")
    mesh = base.mesh
    m = _cell_count(mesh, alpha)
    cand = base.candidate_cells
    f = base.cell_scores(u, cand)
    key = f if order == "ascending" else -f
    pick = np.lexsort((cand, key))[:m]
    return mask_from_cells(mesh, cand[pick])


def _solve(base: KernelBase, mask: SetMask, params: Params, V, **kw) -> EigenResult:
    return first_eigenpair(mask, params, base.with_mask(mask), V=V, **kw)


def alternating_minimize(params: Params, base: KernelBase, init: SetMask, tol: float = 1e-12,
                         cap: int = 100, V: Potential | None = None) -> OptResult:
    """Alternate eigensolves and ascending bathtub steps starting at ``init``.

    Stops at a repeated mask (fixed_point), a decrease below ``tol``
    relative to lambda (tolerance) or after ``cap`` iterations.
    """
    mask = init
    eig = _solve(base, mask, params, V)
    history = [(0, eig.lam, mask.fingerprint())]
    seen = {mask.fingerprint()}
    best = (eig, mask)
    for it in range(1, cap + 1):
        nxt = bathtub_rearrange(eig.u, base, params.alpha, "ascending")
        fp = nxt.fingerprint()
        if fp == mask.fingerprint() or fp in seen:
            return OptResult(best[1], best[0], history, None, FIXED_POINT)
        seen.add(fp)
        new = _solve(base, nxt, params, V)
        history.append((it, new.lam, fp))
        drop = best[0].lam - new.lam
        if new.lam < best[0].lam:
            best = (new, nxt)
        if drop < tol * max(abs(best[0].lam), 1e-300):
            return OptResult(best[1], best[0], history, None, TOLERANCE)
        mask, eig = nxt, new
    return OptResult(best[1], best[0], history, None, CAP)


def maximize_heuristic(params: Params, base: KernelBase, init: SetMask | None = None,
                       restarts: int = 0, cap: int = 30, seed: int | None = None,
                       V: Potential | None = None) -> OptResult:
    """Best mask found by descending bathtub alternation.

    The starts are ``init`` (default: the fattened annulus), the annulus
    itself and ``restarts`` random masks.  The value is a lower bound for
    the discrete supremum; the annulus is always among the compared masks.
    """
    mesh = base.mesh
    m = _cell_count(mesh, params.alpha)
    annulus = fattened_annulus(mesh, params.alpha)
    starts = [init if init is not None else annulus]
    if init is not None:
        starts.append(annulus)
    rng = np.random.default_rng(seed)
    cand = base.candidate_cells
    for _ in range(restarts):
        starts.append(mask_from_cells(mesh, np.sort(rng.choice(cand, m, replace=False))))

    cache: dict[str, EigenResult] = {}

    def value(mask):
        fp = mask.fingerprint()
        if fp not in cache:
            cache[fp] = _solve(base, mask, params, V)
        return cache[fp]

    history = []
    best = None
    how = CAP
    step = 0
    for start in starts:
        mask = start
        seen = set()
        for _ in range(cap + 1):
            fp = mask.fingerprint()
            if fp in seen:
                how = FIXED_POINT
                break
            seen.add(fp)
            eig = value(mask)
            history.append((step, eig.lam, fp))
            step += 1
            if best is None or eig.lam > best[0].lam:
                best = (eig, mask)
            mask = bathtub_rearrange(eig.u, base, params.alpha, "descending")
        else:
            how = CAP
    return OptResult(best[1], best[0], history, (best[0].lam, best[1]), how)


# --------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class DecayRecord:
    k: float
    lam: float
    measure: float
    error: str = ""


@dataclass(frozen=True)
class DecayResult:
    records: tuple
    slope: float  # fitted d log(lambda) / d log(k), smallest k excluded
    target: float  # -(n + sp)


def _fit_slope(ks, lams) -> float:
    ks, lams = np.asarray(ks, dtype=float), np.asarray(lams, dtype=float)
    if len(ks) < 2:
        return math.nan
    return float(np.polyfit(np.log(ks), np.log(lams), 1)[0])


def decay_experiment(params: Params, r: float, k_list, domain=("interval", 0.0, 1.0),
                     h: float = 1.0 / 16, tol: float | None = None) -> DecayResult:
    """lambda(B_r(k e_1)) along the offsets k and the fitted log-log slope.

    The mesh covers B_R with R from ``params``; offsets whose ball leaves
    the mesh or meets Omega get an error entry instead of a value.
    """
    mesh = build_mesh(domain, params, h)
    base = assemble_base(mesh, params.s, params.p)
    records = []
    for k in sorted(float(k) for k in k_list):
        try:
            mask = translated_ball(mesh, r, k)
        except GeometryError as exc:
            records.append(DecayRecord(k, math.nan, 0.0, str(exc)))
            continue
        eig = _solve(base, mask, params, None, tol=tol)
        records.append(DecayRecord(k, eig.lam, mask.measure))
    good = [(rec.k, rec.lam) for rec in records if not rec.error and rec.lam > 0]
    fit = good[1:] if len(good) > 2 else good
    slope = _fit_slope([k for k, _ in fit], [lam for _, lam in fit])
    return DecayResult(tuple(records), slope, -(params.n + params.sp))


@dataclass(frozen=True)
class RateRecord:
    s: float
    lam: float
    ratio: float  # lambda / (1 - s)
    bound: float  # 2 K |D| / dist^{n+sp}
    poincare: float


def separated_rate_experiment(params_list, mask: SetMask, V: Potential | None = None
                              ) -> list[RateRecord]:
    """lambda(mask) along an s ladder for a mask at positive distance from Omega.

    ``bound`` is the quotient of the constant function,
    2 K |D| dist(D, Omega)^{-(n+sp)}, an upper bound for lambda.
    """
    mesh = mask.mesh
    dist = inf_distance(mesh.omega, mask)
    if dist <= 0.0:
        raise ConstraintError("mask touches Omega")
    out = []
    for params in params_list:
        base = assemble_base(mesh, params.s, params.p)
        eig = _solve(base, mask, params, V)
        k = normalization_K(params.n, params.s, params.p)
        bound = 2.0 * k * mask.measure / dist ** (params.n + params.sp)
        lb = poincare_lower_bound(mask, mesh.omega, params)
        out.append(RateRecord(params.s, eig.lam, eig.lam / (1.0 - params.s), bound, lb))
    return out


@dataclass(frozen=True)
class SurroundRecord:
    x: tuple
    measure: float
    covered: bool


def surround_diagnostic(mask: SetMask, eps: float, samples=None) -> list[SurroundRecord]:
    """Mask measure inside B_eps(x) for boundary points x of Omega."""
    mesh = mask.mesh
    if not eps > mesh.cell_diameter:
        raise GeometryError(f"eps={eps} must exceed the cell diameter {mesh.cell_diameter:g}")
    pts = mesh.domain.boundary_samples() if samples is None else samples
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if pts.shape[1] != mesh.n:
        pts = pts.reshape(-1, mesh.n)
    out = []
    for x in pts:
        meas = mask_measure_in_ball(mask, x, eps)
        out.append(SurroundRecord(tuple(float(v) for v in x), meas, meas > 0.0))
    return out
