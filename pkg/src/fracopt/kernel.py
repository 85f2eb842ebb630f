"""Regional fractional p-Laplacian energies on Omega union D.

A function lives on the Omega nodes (continuous piecewise linear on the
Omega cells) and vanishes on the Dirichlet cells.  For u = 0 on D,

    [u]^p_{Omega u D} = [u]^p_{Omega x Omega} + 2 sum_{c in D} f_c(u),
    f_c(u) = int_Omega |u(x)|^p kappa_c(x) dx,
    kappa_c(x) = int_c |x - y|^{-(n+sp)} dy,

so the Omega-Omega part is assembled once per (mesh, s, p) and a mask only
selects cell terms f_c.  The same f_c are the bathtub scores used by the
shape optimizer.  When sp >= 1, f_c is infinite unless u vanishes on the
nodes shared by c and Omega, so those nodes become Dirichlet nodes; when
sp < 1 a jump across the interface has finite energy and they stay free.

1D element pairs are integrated as follows: same-element pairs exactly
(u(x) - u(y) = g (x - y)); pairs sharing a node by factoring the radial
variable out of the two triangles of the square e x f, which leaves a
smooth one-dimensional integral; all other pairs by tensor Gauss rules.
Cells touching the domain use Gauss-Jacobi rules for the a^{-sp} endpoint
singularity of kappa_c.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.special import roots_jacobi

from .forms import PowerForm, gauss_legendre
from .geometry import CANDIDATE, OMEGA, GeometryError, Mesh, ParameterError, SetMask

DEFAULT_MAX_DOFS = 2000
DEFAULT_MAX_ROWS = 30_000_000


class ProblemTooLarge(RuntimeError):
    """Raised when an assembly would exceed the configured size caps."""


class ConstraintError(ValueError):
    """Raised when a function violates the Dirichlet constraint or is zero."""


def normalization_K(n: int, s: float, p: float) -> float:
    """K(n, s, p) = (1-s) sqrt(pi) Gamma((n+p)/2) / (Gamma(n/2) Gamma((p+1)/2))."""
    if n not in (1, 2) or not 0 < s < 1 or not p > 1:
        raise ParameterError(f"invalid params: n={n}, s={s}, p={p}")
    log_ratio = (0.5 * math.log(math.pi) + math.lgamma(0.5 * (n + p))
                 - math.lgamma(0.5 * n) - math.lgamma(0.5 * (p + 1)))
    return (1.0 - s) * math.exp(log_ratio)


# --------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class Potential:
    """A bounded positive potential V with 0 < v1 <= V <= v2."""

    func: Callable[[np.ndarray], np.ndarray]
    v1: float
    v2: float
    label: str = "custom"

    def __post_init__(self):
        if not 0 < self.v1 <= self.v2 < math.inf:
            raise ParameterError(f"invalid potential bounds v1={self.v1}, v2={self.v2}")

    @classmethod
    def constant(cls, c: float) -> "Potential":
        c = float(c)
        return cls(lambda x: np.full(len(x), c), c, c, f"constant {c!r}")

    @classmethod
    def piecewise(cls, breaks, values) -> "Potential":
        """Step function along the first axis: ``values[i]`` on
        ``[breaks[i-1], breaks[i])`` with open ends."""
        breaks = np.asarray(breaks, dtype=float)
        values = np.asarray(values, dtype=float)
        if len(values) != len(breaks) + 1:
            raise ParameterError("piecewise potential needs len(values) == len(breaks) + 1")

        def f(x):
            x = np.atleast_2d(np.asarray(x, dtype=float).T).T
            return values[np.searchsorted(breaks, x[:, 0], side="right")]

        return cls(f, float(values.min()), float(values.max()), "piecewise")

    def nodal(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        v = np.asarray(self.func(points), dtype=float).reshape(-1)
        if np.any(v < self.v1 - 1e-12) or np.any(v > self.v2 + 1e-12) or np.any(v <= 0):
            raise ParameterError("potential leaves its declared bounds [v1, v2]")
        return v


# --------------------------------------------------------------------------
# 1D quadrature of element pairs


@dataclass(frozen=True)
class QuadratureOptions:
    """Quadrature orders and size caps.

    Separated 1D pairs use ``near_order`` when the gap is below 1.5 h and
    otherwise the first tier of ``far_tiers`` whose gap bound (in units of
    h) exceeds the gap; the Gauss error decays like (h / gap)^(2 order).
    """
    near_order: int = 12
    far_tiers: tuple = ((4.0, 8), (10.0, 6), (math.inf, 4))
    adjacent_order: int = 24
    point_order: int = 10
    singular_order: int = 16
    depth: int = 2  # subdivision depth for touching pairs in 2D
    max_dofs: int = DEFAULT_MAX_DOFS
    max_rows: int = DEFAULT_MAX_ROWS


def _pair_rows_1d(x: np.ndarray, cells: np.ndarray, col: np.ndarray, s: float, p: float,
                  opts: QuadratureOptions):
    """Rows of [u]^p over (union of cells)^2.

    ``cells`` holds global node pairs; ``col`` maps global nodes to columns.
    Returns (row, col, val, weight, pair) arrays; ``pair`` is (i, j) per row
    with i <= j indices into ``cells``.
    """
    sp_ = s * p
    q = p - sp_
    c0, c1 = cells[:, 0], cells[:, 1]
    x0, x1 = x[c0], x[c1]
    h = x1 - x0
    if np.ptp(h) > 1e-9 * h.max():
        raise GeometryError("1D assembly requires a uniform grid")
    m = len(cells)
    out_r, out_c, out_v, out_w, out_p = [], [], [], [], []
    nrow = 0

    def emit(ncoef_cols, ncoef_vals, weights, pairs):
        nonlocal nrow
        k = len(weights)
        rows = nrow + np.repeat(np.arange(k), ncoef_cols.shape[1])
        out_r.append(rows)
        out_c.append(ncoef_cols.ravel())
        out_v.append(ncoef_vals.ravel())
        out_w.append(weights)
        out_p.append(pairs)
        nrow += k

    # same element: u(x) - u(y) = g (x - y)
    w_self = 2.0 * h ** (q + 1) / (q * (q + 1))
    cols = np.column_stack([col[c0], col[c1]])
    vals = np.column_stack([-1 / h, 1 / h])
    idx = np.arange(m)
    emit(cols, vals, w_self, np.column_stack([idx, idx]))

    # pairs sharing a node: e = [x0, z], f = [z, x2]
    left, right = [], []
    by_left = {int(a): i for i, a in enumerate(c0)}
    for i in range(m):
        j = by_left.get(int(c1[i]))
        if j is not None:
            left.append(i)
            right.append(j)
    if left:
        e, f = np.array(left), np.array(right)
        t, wt = gauss_legendre(opts.adjacent_order)
        he = h[e]
        base = 2.0 * he ** (q + 1) / (q + 1)
        k_t = wt / (1.0 + t) ** (1.0 + sp_)
        ge_cols = np.column_stack([col[c0[e]], col[c1[e]]])
        gf_cols = np.column_stack([col[c0[f]], col[c1[f]]])
        ie, jf = np.minimum(e, f), np.maximum(e, f)
        for flip in (False, True):
            # |ge + t gf|^p and |t ge + gf|^p over the two triangles
            ae = np.where(flip, t[None, :], 1.0) * np.ones((len(e), 1))
            af = np.where(flip, 1.0, t[None, :]) * np.ones((len(e), 1))
            cols4 = np.concatenate([np.repeat(ge_cols[:, None, :], len(t), 1),
                                    np.repeat(gf_cols[:, None, :], len(t), 1)], axis=2)
            vals4 = np.concatenate([(ae / he[:, None])[..., None] * np.array([-1.0, 1.0]),
                                    (af / h[f][:, None])[..., None] * np.array([-1.0, 1.0])],
                                   axis=2)
            w = base[:, None] * k_t[None, :]
            pairs = np.repeat(np.column_stack([ie, jf]), len(t), axis=0)
            emit(cols4.reshape(-1, 4), vals4.reshape(-1, 4), w.ravel(), pairs)

    # separated pairs
    ii, jj = np.triu_indices(m, k=1)
    touching = (c0[ii] == c0[jj]) | (c0[ii] == c1[jj]) | (c1[ii] == c0[jj]) | (c1[ii] == c1[jj])
    ii, jj = ii[~touching], jj[~touching]
    # uniform grid: gaps are whole cells, rounded so mirror pairs share a tier
    gap = np.rint(np.maximum(x0[jj] - x1[ii], x0[ii] - x1[jj]) / h[ii])
    tiers = [(1.5, opts.near_order)] + list(opts.far_tiers)
    lo = -np.inf
    groups = []
    for bound, order in tiers:
        groups.append(((gap >= lo) & (gap < bound), order))
        lo = bound
    for sel, order in groups:
        a, b = ii[sel], jj[sel]
        if len(a) == 0:
            continue
        xi, wi = gauss_legendre(order)
        XA = x0[a][:, None] + h[a][:, None] * xi[None, :]
        XB = x0[b][:, None] + h[b][:, None] * xi[None, :]
        WA = h[a][:, None] * wi[None, :]
        WB = h[b][:, None] * wi[None, :]
        dist = np.abs(XA[:, :, None] - XB[:, None, :])
        w = 2.0 * WA[:, :, None] * WB[:, None, :] * dist ** (-(1.0 + sp_))
        k = order
        shape = (len(a), k, k)
        cols4 = np.stack([np.broadcast_to(col[c0[a]][:, None, None], shape),
                          np.broadcast_to(col[c1[a]][:, None, None], shape),
                          np.broadcast_to(col[c0[b]][:, None, None], shape),
                          np.broadcast_to(col[c1[b]][:, None, None], shape)], axis=-1)
        la = np.broadcast_to((1 - xi)[None, :, None], shape)
        ra = np.broadcast_to(xi[None, :, None], shape)
        lb = np.broadcast_to((1 - xi)[None, None, :], shape)
        rb = np.broadcast_to(xi[None, None, :], shape)
        vals4 = np.stack([la, ra, -lb, -rb], axis=-1)
        pairs = np.repeat(np.column_stack([a, b]), k * k, axis=0)
        emit(cols4.reshape(-1, 4), vals4.reshape(-1, 4), w.ravel(), pairs)

    return (np.concatenate(out_r), np.concatenate(out_c), np.concatenate(out_v),
            np.concatenate(out_w), np.concatenate(out_p), nrow)


def _estimate_rows_1d(m: int, opts: QuadratureOptions) -> int:
    near = 2 * m * opts.near_order ** 2 + 2 * m * sum(o ** 2 for b, o in opts.far_tiers if b < 20)
    return m + 2 * m * opts.adjacent_order + near + (m * (m - 1) // 2) * opts.far_tiers[-1][1] ** 2


def kappa_1d(xq: np.ndarray, lo: np.ndarray, hi: np.ndarray, sp_: float) -> np.ndarray:
    """int_lo^hi |x - y|^{-(1+sp)} dy for x outside [lo, hi]; broadcasts."""
    near = np.maximum(lo - xq, xq - hi)
    far = np.maximum(hi - xq, xq - lo)
    return (near ** (-sp_) - far ** (-sp_)) / sp_


# --------------------------------------------------------------------------
# base operator (Omega part, cached per mesh, s, p)


@dataclass(frozen=True)
class TouchingCell:
    """Special rows for a candidate cell sharing nodes with Omega."""

    cell: int
    shared: np.ndarray  # local Omega node indices shared with the cell
    skip_points: np.ndarray  # quadrature points replaced by the special rows
    free: PowerForm | None  # contribution to f_c when the shared nodes are free
    forced: PowerForm  # contribution to f_c when the shared nodes vanish


@dataclass(eq=False)
class KernelBase:
    """Omega-Omega energy, L^p quadrature and candidate-cell couplings."""

    mesh: Mesh
    s: float
    p: float
    opts: QuadratureOptions
    k_const: float
    omega_cells: np.ndarray
    omega_nodes: np.ndarray  # global node ids, index = local dof
    omega_form: PowerForm  # [u]^p over Omega x Omega
    points: PowerForm  # rows: u at quadrature points, w: quadrature weights
    point_coords: np.ndarray
    touching: dict[int, TouchingCell]
    _coupling: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.mesh.n

    @property
    def sp(self) -> float:
        return self.s * self.p

    @property
    def ndof(self) -> int:
        return len(self.omega_nodes)

    @cached_property
    def node_coords(self) -> np.ndarray:
        return self.mesh.nodes[self.omega_nodes]

    @cached_property
    def omega_matrix(self) -> np.ndarray:
        """Dense p = 2 matrix of the Omega x Omega form (p = 2 bases only)."""
        return self.omega_form.matrix()

    @cached_property
    def mass_matrix(self) -> np.ndarray:
        return self.points.matrix()

    @cached_property
    def candidate_cells(self) -> np.ndarray:
        return self.mesh.cells_with(CANDIDATE)

    def coupling(self, cells: np.ndarray) -> np.ndarray:
        """Rows G[c, q] = w_q kappa_c(x_q) for regular quadrature points."""
        cells = np.asarray(cells, dtype=int)
        missing = [c for c in cells.tolist() if c not in self._coupling]
        if missing:
            rows = self._coupling_rows(np.asarray(missing))
            for c, r in zip(missing, rows):
                self._coupling[c] = r
        if len(cells) == 0:
            return np.zeros((0, self.points.nrows))
        return np.vstack([self._coupling[c] for c in cells.tolist()])

    def _coupling_rows(self, cells: np.ndarray) -> np.ndarray:
        if self.n == 2:
            from .kernel2d import coupling_rows_2d
            return coupling_rows_2d(self, cells)
        x = self.mesh.nodes[:, 0]
        lo = x[self.mesh.cells[cells, 0]][:, None]
        hi = x[self.mesh.cells[cells, 1]][:, None]
        xq = self.point_coords[None, :, 0]
        G = np.zeros((len(cells), len(self.point_coords)))
        chunk = max(1, 2_000_000 // max(1, len(self.point_coords)))
        for k in range(0, len(cells), chunk):
            sl = slice(k, k + chunk)
            G[sl] = self.points.w[None, :] * kappa_1d(xq, lo[sl], hi[sl], self.sp)
        for i, c in enumerate(cells.tolist()):
            t = self.touching.get(c)
            if t is not None:
                G[i, t.skip_points] = 0.0
        return G

    def forced_nodes(self, mask: SetMask) -> np.ndarray:
        forced = np.zeros(self.ndof, dtype=bool)
        if self.sp >= 1.0:
            for c in mask.indices.tolist():
                t = self.touching.get(c)
                if t is not None:
                    forced[t.shared] = True
        return forced

    def cell_scores(self, u: np.ndarray, cells: np.ndarray | None = None) -> np.ndarray:
        """f_c(u) for candidate cells (all of them by default)."""
        cells = self.candidate_cells if cells is None else np.asarray(cells, dtype=int)
        u = np.asarray(u, dtype=float)
        vals = np.abs(self.points.B @ u) ** self.p
        scores = self.coupling(cells) @ vals
        for i, c in enumerate(cells.tolist()):
            t = self.touching.get(c)
            if t is None:
                continue
            if self.sp >= 1.0 or t.free is None:
                if np.any(u[t.shared] != 0.0):
                    scores[i] = np.inf
                else:
                    scores[i] += t.forced.value(u, self.p)
            else:
                scores[i] += t.free.value(u, self.p)
        return scores

    def dirichlet_form(self, mask: SetMask, forced: np.ndarray) -> PowerForm:
        """sum_{c in mask} f_c as a power form over the Omega dofs."""
        cells = mask.indices
        G = self.coupling(cells)
        form = PowerForm(self.points.B, G.sum(axis=0) if len(cells) else np.zeros(self.points.nrows))
        for c in cells.tolist():
            t = self.touching.get(c)
            if t is None:
                continue
            if forced[t.shared].all():
                form = form + t.forced
            elif t.free is not None:
                form = form + t.free
            else:
                raise ConstraintError("touching cell requires its shared nodes to vanish")
        return form

    def with_mask(self, mask: SetMask) -> "KernelOperator":
        if mask.mesh is not self.mesh:
            raise GeometryError("mask belongs to a different mesh")
        forced = self.forced_nodes(mask)
        return KernelOperator(self, mask, forced, self.dirichlet_form(mask, forced))


def assemble_base(mesh: Mesh, s: float, p: float, opts: QuadratureOptions | None = None) -> KernelBase:
    opts = opts or QuadratureOptions()
    k_const = normalization_K(mesh.n, s, p)
    omega_cells = mesh.cells_with(OMEGA)
    omega_nodes = np.unique(mesh.cells[omega_cells])
    if len(omega_nodes) > opts.max_dofs:
        raise ProblemTooLarge(f"problem too large: {len(omega_nodes)} degrees of freedom "
                              f"exceed the cap {opts.max_dofs}")
    col = np.full(len(mesh.nodes), -1)
    col[omega_nodes] = np.arange(len(omega_nodes))
    if mesh.n == 2:
        from .kernel2d import assemble_base_2d
        return assemble_base_2d(mesh, s, p, opts, k_const, omega_cells, omega_nodes, col)

    if _estimate_rows_1d(len(omega_cells), opts) > opts.max_rows:
        raise ProblemTooLarge("problem too large: quadrature rows exceed the memory cap")
    x = mesh.nodes[:, 0]
    cells = mesh.cells[omega_cells]
    r, c, v, w, _, nrow = _pair_rows_1d(x, cells, col, s, p, opts)
    omega_form = PowerForm.from_coo(r, c, v, w, len(omega_nodes))

    xi, wi = gauss_legendre(opts.point_order)
    h = mesh.h
    m, k = len(cells), opts.point_order
    xq = x[cells[:, 0]][:, None] + h * xi[None, :]
    rows = np.repeat(np.arange(m * k), 2)
    cols = np.stack([np.broadcast_to(col[cells[:, 0]][:, None], (m, k)),
                     np.broadcast_to(col[cells[:, 1]][:, None], (m, k))], -1).ravel()
    vals = np.stack([np.broadcast_to(1 - xi, (m, k)), np.broadcast_to(xi, (m, k))], -1).ravel()
    points = PowerForm.from_coo(rows, cols, vals, np.tile(h * wi, m), len(omega_nodes))

    touching = _touching_1d(mesh, s, p, opts, omega_cells, col, k)
    return KernelBase(mesh, s, p, opts, k_const, omega_cells, omega_nodes, omega_form,
                      points, xq.reshape(-1, 1), touching)


def _touching_1d(mesh, s, p, opts, omega_cells, col, k) -> dict[int, TouchingCell]:
    sp_ = s * p
    h = mesh.h
    nd = int(col.max()) + 1
    out = {}
    omega_set = set(omega_cells.tolist())
    cand = set(mesh.cells_with(CANDIDATE).tolist())
    for pos, e in enumerate(omega_cells.tolist()):
        for side, nb in ((0, e - 1), (1, e + 1)):
            if nb in omega_set or nb not in cand:
                continue
            z = mesh.cells[e, side]
            o = mesh.cells[e, 1 - side]
            zl, ol = col[z], col[o]
            hc = mesh.h
            # forced: u = u_o a / h on the element, a = distance to z
            xj, wj = roots_jacobi(opts.singular_order, 0.0, p)
            a = 0.5 * h * (1 + xj)
            tail = (0.5 * h) ** (p + 1) * np.sum(wj * (a + hc) ** (-sp_))
            c_forced = (h ** (p - sp_ + 1) / (p - sp_ + 1) - tail) / (sp_ * h ** p)
            forced = PowerForm.from_coo([0], [ol], [1.0], [c_forced], nd)
            free = None
            if sp_ < 1.0:
                xj, wj = roots_jacobi(opts.singular_order, 0.0, -sp_)
                a1 = 0.5 * h * (1 + xj)
                w1 = wj * (0.5 * h) ** (1 - sp_) / sp_
                a2, w2 = gauss_legendre(opts.singular_order, 0.0, h)
                w2 = -w2 * (a2 + hc) ** (-sp_) / sp_
                aa = np.concatenate([a1, a2])
                ww = np.concatenate([w1, w2])
                nr = len(aa)
                free = PowerForm.from_coo(np.repeat(np.arange(nr), 2),
                                          np.tile([zl, ol], nr),
                                          np.column_stack([1 - aa / h, aa / h]).ravel(), ww, nd)
            out[nb] = TouchingCell(nb, np.array([zl]), np.arange(pos * k, (pos + 1) * k),
                                   free, forced)
    return out


# --------------------------------------------------------------------------
# operator for a given Dirichlet mask


@dataclass(eq=False)
class KernelOperator:
    """Energy of the regional operator on Omega union ``mask``."""

    base: KernelBase
    mask: SetMask
    forced: np.ndarray  # Omega dofs constrained to zero
    d_form: PowerForm

    @property
    def k_const(self) -> float:
        return self.base.k_const

    @property
    def s(self) -> float:
        return self.base.s

    @property
    def p(self) -> float:
        return self.base.p

    @property
    def ndof(self) -> int:
        return self.base.ndof

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.forced)

    @cached_property
    def seminorm_form(self) -> PowerForm:
        return self.base.omega_form + self.d_form.scaled(2.0)

    def stiffness(self) -> np.ndarray:
        """p = 2 matrix of [u]^2 over the Omega dofs (forced dofs included)."""
        if self.p != 2:
            raise ValueError("stiffness matrix is defined for p = 2 only")
        return self.base.omega_matrix + 2.0 * self.d_form.matrix()

    def energy_matrix(self, V: Potential | None = None) -> np.ndarray:
        """p = 2 matrix of K [u]^2 + int V u^2."""
        A = self.k_const * self.stiffness()
        pv = self.potential_form(V)
        return A if pv is None else A + pv.matrix()

    def potential_form(self, V: Potential | None) -> PowerForm | None:
        if V is None:
            return None
        vq = self.base.points.B @ V.nodal(self.base.node_coords)
        return PowerForm(self.base.points.B, self.base.points.w * vq)

    def energy_form(self, V: Potential | None = None) -> PowerForm:
        """K [u]^p + int V |u|^p as one power form."""
        form = self.seminorm_form.scaled(self.k_const)
        pv = self.potential_form(V)
        return form if pv is None else form + pv

    @property
    def mass_form(self) -> PowerForm:
        return self.base.points

    def check(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.ndof,):
            raise ValueError(f"bad vector length: expected {self.ndof}, got {u.shape}")
        return u


def assemble_kernel(mesh: Mesh, mask: SetMask, s: float, p: float,
                    opts: QuadratureOptions | None = None,
                    base: KernelBase | None = None) -> KernelOperator:
    """Assemble the operator on Omega union ``mask``; reuse ``base`` when given."""
    if base is None or base.mesh is not mesh or base.s != s or base.p != p:
        base = assemble_base(mesh, s, p, opts)
    return base.with_mask(mask)


# --------------------------------------------------------------------------
# evaluation


def gagliardo_seminorm(u: np.ndarray, op: KernelOperator, p: float | None = None) -> float:
    """[u]^p over (Omega u D)^2 for u on the Omega dofs, zero on D."""
    if p is not None and p != op.p:
        raise ValueError(f"operator was assembled for p={op.p}, not p={p}")
    u = op.check(u)
    return max(op.seminorm_form.value(u, op.p), 0.0)


def _validate(u, mask, op) -> np.ndarray:
    u = op.check(u)
    if mask is not None and mask != op.mask:
        raise ValueError("operator was assembled for a different mask")
    scale = max(np.abs(u).max(), 1e-300)
    if np.any(np.abs(u[op.forced]) > 1e-12 * scale):
        raise ConstraintError("violates Dirichlet constraint: u is nonzero on a Dirichlet node")
    return u


def rayleigh(u, mask: SetMask | None, op: KernelOperator, params=None, V: Potential | None = None) -> float:
    """(K [u]^p + int V |u|^p) / ||u||_p^p."""
    u = _validate(u, mask, op)
    denom = op.mass_form.value(u, op.p)
    if denom <= 0.0:
        raise ConstraintError("zero denominator: u vanishes on Omega")
    return op.energy_form(V).value(u, op.p) / denom


def lumped_mass(op: KernelOperator) -> np.ndarray:
    pts = op.mass_form
    return pts.B.T @ pts.w


def weak_residual(u, lam: float, mask: SetMask | None, op: KernelOperator, params=None,
                  V: Potential | None = None) -> float:
    """max_i |<A(u), phi_i> - lam <|u|^{p-2}u, phi_i>| / int phi_i over free nodes."""
    u = _validate(u, mask, op)
    norm = op.mass_form.value(u, op.p)
    if norm <= 0.0:
        raise ConstraintError("zero denominator: u vanishes on Omega")
    u = u / norm ** (1.0 / op.p)
    g = (op.energy_form(V).gradient(u, op.p) - lam * op.mass_form.gradient(u, op.p)) / op.p
    free = op.free
    if len(free) == 0:
        return 0.0
    return float(np.max(np.abs(g[free]) / lumped_mass(op)[free]))


def pair_weights(op: KernelOperator):
    """(e, f, w) for element pairs of the active region, e <= f.

    w(e, f) is the trace of the p = 2 interaction matrix of the pair in the
    continuous piecewise-linear basis of Omega union D.  1D only.
    """
    mesh = op.base.mesh
    if mesh.n != 1:
        raise GeometryError("pair weight export is 1D only")
    active = np.flatnonzero((mesh.labels == OMEGA) | op.mask.cells)
    nodes = np.unique(mesh.cells[active])
    col = np.full(len(mesh.nodes), -1)
    col[nodes] = np.arange(len(nodes))
    r, c, v, w, pairs, nrow = _pair_rows_1d(mesh.nodes[:, 0], mesh.cells[active], col,
                                            op.s, 2.0, op.base.opts)
    # trace of B^T W B restricted to a pair = sum over rows of w * sum(coef^2)
    B = PowerForm.from_coo(r, c, v, w, len(nodes)).B
    sq = np.asarray(B.multiply(B).sum(axis=1)).ravel()
    key = pairs[:, 0] * len(active) + pairs[:, 1]
    uniq, inv = np.unique(key, return_inverse=True)
    tw = np.bincount(inv, weights=w * sq)
    e, f = uniq // len(active), uniq % len(active)
    return active[e], active[f], tw
