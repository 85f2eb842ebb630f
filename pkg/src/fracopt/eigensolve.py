"""First eigenpair of the regional operator, Poincare bounds, local references.

For p = 2 the discrete problem is a symmetric generalized eigenproblem and
is solved by inverse power iteration.  For general p the Rayleigh quotient
is minimized by preconditioned normalized descent with an Armijo line
search, so the quotient decreases monotonically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .forms import PowerForm, gauss_legendre
from .geometry import GeometryError, Params, ParameterError, Region, SetMask, sup_distance
from .kernel import ConstraintError, KernelOperator, Potential, normalization_K, weak_residual

DEFAULT_TOL_P2 = 1e-9
DEFAULT_TOL_P = 1e-7
DEFAULT_CAP = 10_000
STALL_WINDOW = 5
RESTART_DISAGREEMENT = 0.01
HESSIAN_REFRESH = 10


@dataclass(frozen=True, eq=False)
class EigenResult:
    """First eigenvalue and eigenfunction on the Omega nodes.

    ``u`` is nonnegative with unit L^p norm over Omega; it vanishes on the
    Dirichlet set by construction.
    """

    lam: float
    u: np.ndarray
    iterations: int
    residual: float
    converged: bool
    history: tuple = ()
    restart_best: float | None = None
    disagreement: bool = False
    fingerprint: str = ""

    def row(self) -> dict:
        return {"lambda": self.lam, "iterations": self.iterations,
                "residual": self.residual, "converged": int(self.converged)}


# callbacks (result, op, params) run after every solve; the tests use this
# to check the Poincare bound on every converged eigenvalue
_listeners: list[Callable] = []


def add_listener(fn: Callable) -> None:
    _listeners.append(fn)


def remove_listener(fn: Callable) -> None:
    if fn in _listeners:
        _listeners.remove(fn)


# --------------------------------------------------------------------------
# solver cores


def inverse_iteration(A: np.ndarray, M: np.ndarray, tol: float = DEFAULT_TOL_P2,
                      cap: int = DEFAULT_CAP, x0: np.ndarray | None = None):
    """Smallest eigenpair of A x = lam M x for symmetric A >= 0, M > 0.

    Stops when the predicted remaining error of lam, estimated from two
    successive changes, is below tol relative and the eigen-equation
    residual |A x - lam M x| is below tol relative to |A x| + lam |M x|.
    Both tests carry an absolute floor of 1e-12 trace(A)/trace(M).
    Returns (lam, x, iterations, converged, history).
    """
    n = len(A)
    if n == 0:
        raise ConstraintError("no free degrees of freedom")
    scale = np.trace(A) / np.trace(M)
    sigma = 1e-8 * scale
    factor = scipy.linalg.cho_factor(A + sigma * M)
    x = np.ones(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    x /= math.sqrt(x @ M @ x)
    lam = float(x @ A @ x)
    history = [lam]
    prev_change = None
    # eigenvalues below this are indistinguishable from zero in floating point
    floor = 1e-12 * scale
    for it in range(1, cap + 1):
        Mx = M @ x
        y = scipy.linalg.cho_solve(factor, Mx)
        x = y / math.sqrt(y @ M @ y)
        Ax, Mx = A @ x, M @ x
        new = float(x @ Ax)
        change = abs(new - lam)
        lam = new
        history.append(lam)
        bound = max(tol * abs(lam), floor)
        done = change <= bound
        if done and prev_change:
            r = min(change / prev_change, 0.999)
            done = change * r / (1 - r) <= bound
        if done:
            res = np.abs(Ax - lam * Mx).max()
            done = res <= (tol * (np.abs(Ax).max() + abs(lam) * np.abs(Mx).max())
                           + floor * np.abs(Mx).max())
        if done:
            return lam, x, it, True, history
        prev_change = change
    return lam, x, cap, False, history


def _normalize(x: np.ndarray, mass: PowerForm, p: float) -> np.ndarray:
    return x / mass.value(x, p) ** (1.0 / p)


def _hessian(form: PowerForm, x: np.ndarray, p: float) -> np.ndarray:
    """p (p-1) B^T diag(w |Bx|^{p-2}) B with |Bx| floored for p < 2."""
    r = np.abs(form.B @ x)
    r = np.maximum(r, 1e-6 * r.max())
    w = p * (p - 1) * form.w * r ** (p - 2)
    return PowerForm(form.B, w).matrix()


def descent(energy: PowerForm, mass: PowerForm, p: float, x0: np.ndarray,
            precond: np.ndarray | None = None, tol: float = DEFAULT_TOL_P,
            cap: int = DEFAULT_CAP, window: int = STALL_WINDOW, refresh: int = 0):
    """Minimize energy(x) / mass(x) (both p-homogeneous) by normalized descent.

    Directions are the gradient of the quotient preconditioned by
    ``precond``; steps are accepted only under the Armijo condition, so the
    quotient sequence is nonincreasing.  Stops when both the relative
    decrease over ``window`` iterations and the preconditioned decrement
    -g.d (relative to the quotient) are below tol.  Returns
    (lam, x, iterations, converged, history).

    With ``refresh`` > 0 the preconditioner is replaced every ``refresh``
    iterations by the Hessian of the energy at the current iterate
    (plus the initial preconditioner scaled to a small multiple).
    """
    def factorize(P):
        try:
            return scipy.linalg.cho_factor(P)
        except np.linalg.LinAlgError:
            return None

    factor = factorize(precond) if precond is not None else None
    x = _normalize(np.asarray(x0, dtype=float), mass, p)
    lam = energy.value(x, p)
    history = [lam]
    step = 1.0
    scale = None
    for it in range(1, cap + 1):
        if refresh and precond is not None and (it - 1) % refresh == 0:
            H = _hessian(energy, x, p)
            factor = factorize(H + 1e-6 * np.trace(H) / np.trace(precond) * precond) or factor
        g = energy.gradient(x, p) - lam * mass.gradient(x, p)
        d = -(scipy.linalg.cho_solve(factor, g) if factor is not None else g)
        slope = float(g @ d)
        if slope >= 0 or not np.isfinite(slope):
            d, slope = -g, -float(g @ g)
        if slope == 0.0:
            return lam, x, it, True, history
        if scale is None:
            scale = np.abs(x).max() / max(np.abs(d).max(), 1e-300)
            step = scale
        accepted = False
        t = min(2.0 * step, 1e6 * scale)
        for _ in range(60):
            xt = _normalize(x + t * d, mass, p)
            lt = energy.value(xt, p)
            if lt <= lam + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no further decrease representable in floating point
            return lam, x, it, True, history
        step = t
        x, lam = xt, lt
        history.append(lam)
        if len(history) > window:
            old = history[-1 - window]
            if old - lam <= tol * max(abs(lam), 1e-300) and -slope <= tol * max(abs(lam), 1e-300):
                return lam, x, it, True, history
    return lam, x, cap, False, history


def _sign_fix(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    if weights @ x < 0:
        x = -x
    return x


# --------------------------------------------------------------------------
# nonlocal eigenpair


def _as_potential(V) -> Potential | None:
    if V is None or isinstance(V, Potential):
        return V
    return Potential.constant(float(V))


def first_eigenpair(mask: SetMask | None, params: Params | None, op: KernelOperator,
                    V: Potential | float | None = None, tol: float | None = None,
                    cap: int = DEFAULT_CAP, restarts: int = 0,
                    seed: int | None = None) -> EigenResult:
    """First eigenpair of K(-Delta_p)^s (+ V) on Omega with u = 0 on ``mask``.

    ``op`` must be assembled for ``mask``.  With ``restarts`` > 0 (general p
    only) additional descents from seeded random starts are run; the best
    value is kept and a spread above 1% is flagged in ``disagreement``.
    """
    if mask is not None and mask != op.mask:
        raise ValueError("operator was assembled for a different mask")
    if params is not None and (params.s != op.s or params.p != op.p or params.n != op.base.n):
        raise ParameterError("invalid params: operator was assembled for other (n, s, p)")
    V = _as_potential(V)
    p = op.p
    free = op.free
    masses = op.mass_form.B.T @ op.mass_form.w
    if p == 2.0:
        tol = DEFAULT_TOL_P2 if tol is None else tol
        A = op.energy_matrix(V)[np.ix_(free, free)]
        M = op.base.mass_matrix[np.ix_(free, free)]
        lam, x, its, conv, hist = inverse_iteration(A, M, tol, cap)
        # the form sums nonnegative terms, so it avoids cancellation in A
        lam = op.energy_form(V).restrict(free).value(x, p) / op.mass_form.restrict(free).value(x, p)
        best = None
        disagree = False
    else:
        tol = DEFAULT_TOL_P if tol is None else tol
        energy = op.energy_form(V).restrict(free)
        mass = op.mass_form.restrict(free)
        P2 = energy.matrix()
        M2 = mass.matrix()
        # start from the first eigenvector of the quadratic surrogate
        _, vec = scipy.linalg.eigh(P2 + 1e-10 * np.trace(P2) / np.trace(M2) * M2, M2,
                                   subset_by_index=[0, 0])
        x0 = np.abs(vec[:, 0]) + 1e-3 * np.abs(vec[:, 0]).max()
        precond = P2 + 1e-8 * np.trace(P2) / np.trace(M2) * M2
        lam, x, its, conv, hist = descent(energy, mass, p, x0, precond, tol, cap, refresh=HESSIAN_REFRESH)
        best, disagree = None, False
        if restarts > 0:
            rng = np.random.default_rng(seed)
            vals = []
            for _ in range(restarts):
                r = descent(energy, mass, p, rng.random(len(free)) + 0.05, precond, tol, cap,
                            refresh=HESSIAN_REFRESH)
                vals.append(r)
            rb = min(vals, key=lambda r: r[0])
            best = rb[0]
            disagree = abs(lam - best) > RESTART_DISAGREEMENT * max(abs(best), 1e-300)
            if rb[0] < lam:
                lam, x, its, conv, hist = rb
        # |u| never has a larger quotient
        x = np.abs(_sign_fix(x, masses[free]))
        lam = op.energy_form(V).restrict(free).value(x, p) / op.mass_form.restrict(free).value(x, p)
    x = _sign_fix(x, masses[free])
    x = np.where(np.abs(x) <= 1e-14 * np.abs(x).max(), np.abs(x), x)
    u = np.zeros(op.ndof)
    u[free] = x
    u /= op.mass_form.value(u, p) ** (1.0 / p)
    lam = max(float(lam), 0.0)
    res = weak_residual(u, lam, None, op, V=V)
    result = EigenResult(lam, u, its, res, conv, tuple(hist), best, disagree,
                         op.mask.fingerprint())
    for fn in list(_listeners):
        fn(result, op, params)
    return result


# --------------------------------------------------------------------------
# Poincare bound


def poincare_lower_bound(mask: SetMask, omega: Region, params: Params,
                         variant: str = "full", d: float | None = None) -> float:
    """K d^{-(n+sp)} |D| with d the sup distance between Omega and D.

    ``variant="half"`` uses half the measure and, unless ``d`` is given,
    d_R = sup_{x in Omega} |x| + R' where B_R' holds half the mask measure.
    """
    if mask is None or mask.is_empty:
        raise ConstraintError("empty Dirichlet set")
    k = normalization_K(params.n, params.s, params.p)
    e = params.n + params.sp
    if variant == "full":
        d = sup_distance(omega, mask) if d is None else d
        return k * d ** (-e) * mask.measure
    if variant == "half":
        if d is None:
            mesh = mask.mesh
            idx = mask.indices
            radii = np.linalg.norm(mesh.centers[idx], axis=1)
            order = np.argsort(radii, kind="stable")
            cum = np.cumsum(np.full(len(idx), mesh.cell_volume))
            j = int(np.searchsorted(cum, 0.5 * mask.measure - 1e-12))
            r_half = radii[order[j]] + 0.5 * mesh.cell_diameter
            d = float(np.linalg.norm(omega.vertices(), axis=1).max()) + r_half
        return k * d ** (-e) * 0.5 * mask.measure
    raise ValueError(f"unknown variant {variant!r}")


# --------------------------------------------------------------------------
# local references on (0, 1)


def _parse_bc(bc, gamma):
    if isinstance(bc, str) and bc.startswith("mixed") and gamma is None:
        inside = bc[len("mixed"):].strip("()[]{} ")
        gamma = tuple(float(v) for v in inside.replace(",", " ").split()) if inside else (1.0,)
        bc = "mixed"
    if bc == "dirichlet":
        return {0.0, 1.0}
    if bc == "neumann":
        return set()
    if bc == "mixed":
        g = {float(v) for v in (gamma if gamma is not None else (1.0,))}
        if not g <= {0.0, 1.0}:
            raise ParameterError("mixed boundary set must be a subset of {0, 1}")
        return g
    raise ParameterError(f"unknown boundary condition {bc!r}")


def local_reference(p: float, bc="dirichlet", V: Potential | float | None = None,
                    h: float = 1e-3, n: int = 1, gamma=None, tol: float | None = None,
                    cap: int = DEFAULT_CAP) -> float:
    """First eigenvalue of -Delta_p (+ V) on (0, 1) with boundary condition
    ``bc`` ("dirichlet", "neumann" or "mixed" with zero set ``gamma``).

    Piecewise-linear elements; p = 2 by inverse iteration, other p by the
    same descent as the nonlocal solver.
    """
    if n != 1:
        raise GeometryError("local reference is 1D only")
    if not p > 1:
        raise ParameterError(f"invalid params: p={p}")
    zero = _parse_bc(bc, gamma)
    V = _as_potential(V)
    if V is not None and V.v1 == V.v2:
        # a constant potential shifts the spectrum
        return local_reference(p, bc, None, h, n, gamma, tol, cap) + V.v1
    N = max(2, int(round(1.0 / h)))
    h = 1.0 / N
    x = np.linspace(0.0, 1.0, N + 1)
    fixed = np.zeros(N + 1, bool)
    if 0.0 in zero:
        fixed[0] = True
    if 1.0 in zero:
        fixed[-1] = True
    free = np.flatnonzero(~fixed)
    e = np.arange(N)
    grad = PowerForm.from_coo(np.repeat(e, 2), np.column_stack([e, e + 1]).ravel(),
                              np.tile([-1.0 / h, 1.0 / h], N), np.full(N, h), N + 1)
    xi, wi = gauss_legendre(6)
    k = len(xi)
    rows = np.repeat(np.arange(N * k), 2)
    cols = np.stack([np.repeat(e, k), np.repeat(e + 1, k)], -1).ravel()
    vals = np.stack([np.tile(1 - xi, N), np.tile(xi, N)], -1).ravel()
    mass = PowerForm.from_coo(rows, cols, vals, np.tile(h * wi, N), N + 1)
    energy = grad
    if V is not None:
        xq = (x[:-1, None] + h * xi[None, :]).ravel()
        vq = np.asarray(V.func(xq[:, None]), dtype=float).reshape(-1)
        energy = grad + PowerForm(mass.B, mass.w * vq)
    energy, mass = energy.restrict(free), mass.restrict(free)
    if p == 2.0:
        _, x, _, _, _ = inverse_iteration(energy.matrix(), mass.matrix(),
                                          DEFAULT_TOL_P2 if tol is None else tol, cap)
        lam = energy.value(x, p) / mass.value(x, p)
    else:
        P2 = energy.matrix()
        M2 = mass.matrix()
        shift = 1e-8 * np.trace(P2) / np.trace(M2)
        _, x0, _, _, _ = inverse_iteration(P2 + shift * M2, M2, 1e-10, 200)
        lam, _, _, _, _ = descent(energy, mass, p, np.abs(x0), P2 + shift * M2,
                                  DEFAULT_TOL_P if tol is None else tol, cap)
    return max(float(lam), 0.0)


def pi_p(p: float) -> float:
    """Half-period of the p-sine: 2 pi / (p sin(pi / p))."""
    return 2.0 * math.pi / (p * math.sin(math.pi / p))


def local_reference_closed_form(p: float, bc="dirichlet", V: float | None = None,
                                gamma=None) -> float:
    """Closed form on (0, 1) for constant (or absent) V.

    Dirichlet: (p-1) pi_p^p; one-sided mixed: (p-1) (pi_p / 2)^p;
    Neumann: 0; a constant potential c adds c.
    """
    zero = _parse_bc(bc, gamma)
    if isinstance(V, Potential):
        if V.v1 != V.v2:
            raise ParameterError("closed form needs a constant potential")
        V = V.v1
    c = 0.0 if V is None else float(V)
    if len(zero) == 2:
        base = (p - 1) * pi_p(p) ** p
    elif len(zero) == 1:
        base = (p - 1) * (0.5 * pi_p(p)) ** p
    else:
        base = 0.0
    return base + c
