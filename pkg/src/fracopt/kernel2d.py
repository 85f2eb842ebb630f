"""Two-dimensional assembly of the regional energy on triangle meshes.

Same-element pairs use the covariogram of a triangle T: for z in T - T,
|T n (T + z)| = |T| (1 - |z| / L(theta))^2 with L the radial function of
the hexagon T - T, so the singular 4D integral reduces to an angular one.
Pairs of elements sharing a vertex or an edge are subdivided toward the
contact; other pairs use tensor products of a degree-4 triangle rule.
Intended for small meshes.
"""
from __future__ import annotations

import numpy as np
from scipy.special import roots_jacobi

from .forms import PowerForm, gauss_legendre
from .geometry import CANDIDATE, GeometryError
from .kernel import KernelBase, ProblemTooLarge, TouchingCell

# Dunavant degree-4 rule: barycentric points and weights (sum to 1)
_A, _B = 0.445948490915965, 0.091576213509771
_WA, _WB = 0.223381589678011, 0.109951743655322
TRI_BARY = np.array([[_A, _A, 1 - 2 * _A], [_A, 1 - 2 * _A, _A], [1 - 2 * _A, _A, _A],
                     [_B, _B, 1 - 2 * _B], [_B, 1 - 2 * _B, _B], [1 - 2 * _B, _B, _B]])
TRI_W = np.array([_WA] * 3 + [_WB] * 3)
THETA_ORDER = 8
POINT_LEVEL = 1
EDGE_ORDER = 16
TOUCH_ORDER = 12


def _area(V: np.ndarray) -> np.ndarray:
    d1, d2 = V[:, 1] - V[:, 0], V[:, 2] - V[:, 0]
    return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def subdivide(V: np.ndarray) -> np.ndarray:
    """Split each triangle of V (k, 3, 2) into four; returns (4k, 3, 2)."""
    a, b, c = V[:, 0], V[:, 1], V[:, 2]
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    kids = np.stack([np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1),
                     np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1)], 1)
    return kids.reshape(-1, 3, 2)


def refined_points(V: np.ndarray, level: int):
    """Quadrature points (k, m, 2) and weights (k, m) on V refined ``level`` times."""
    k = len(V)
    W = V
    for _ in range(level):
        W = subdivide(W)
    W = W.reshape(k, -1, 3, 2)
    pts = np.einsum("qi,kcid->kcqd", TRI_BARY, W).reshape(k, -1, 2)
    wts = (_area(W.reshape(-1, 3, 2)).reshape(k, -1)[:, :, None] * TRI_W).reshape(k, -1)
    return pts, wts


class _Elements:
    """Affine data of the Omega triangles."""

    def __init__(self, mesh, omega_cells, col):
        self.tri = mesh.cells[omega_cells]
        self.V = mesh.nodes[self.tri]
        self.cols = col[self.tri]
        self.area = _area(self.V)
        d1 = self.V[:, 1] - self.V[:, 0]
        d2 = self.V[:, 2] - self.V[:, 0]
        J = np.stack([d1, d2], axis=2)  # columns d1, d2
        self.Jinv = np.linalg.inv(J)
        # gradients of the three barycentric functions, (m, 3, 2)
        g12 = np.transpose(self.Jinv, (0, 2, 1))
        self.grad = np.stack([-g12[:, :, 0] - g12[:, :, 1], g12[:, :, 0], g12[:, :, 1]], axis=1)

    def bary(self, e: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of points x (..., 2) in elements e (...)."""
        r = x - self.V[e, 0]
        l12 = np.einsum("...ij,...j->...i", self.Jinv[e], r)
        return np.concatenate([1 - l12.sum(-1, keepdims=True), l12], axis=-1)


def _self_rows(el: _Elements, s: float, p: float):
    """Rows grad(u) . theta with covariogram weights, one element at a time."""
    q = p - s * p
    beta = 2.0 / (q * (q + 1) * (q + 2))
    t_nodes, t_w = gauss_legendre(THETA_ORDER)
    rows_c, rows_v, rows_w = [], [], []
    for e in range(len(el.V)):
        v = el.V[e]
        edges = np.array([v[1] - v[0], v[2] - v[1], v[0] - v[2]])
        hexv = np.concatenate([edges, -edges])
        ang = np.arctan2(hexv[:, 1], hexv[:, 0])
        order = np.argsort(ang)
        hexv, ang = hexv[order], ang[order]
        for k in range(6):
            a, b = hexv[k], hexv[(k + 1) % 6]
            t0, t1 = ang[k], ang[(k + 1) % 6]
            if t1 <= t0:
                t1 += 2 * np.pi
            th = t0 + (t1 - t0) * t_nodes
            wt = (t1 - t0) * t_w
            dirs = np.column_stack([np.cos(th), np.sin(th)])
            ba = b - a
            L = (a[0] * ba[1] - a[1] * ba[0]) / (dirs[:, 0] * ba[1] - dirs[:, 1] * ba[0])
            rows_c.append(np.broadcast_to(el.cols[e], (len(th), 3)))
            rows_v.append(dirs @ el.grad[e].T)
            rows_w.append(el.area[e] * beta * L ** q * wt)
    return np.concatenate(rows_c), np.concatenate(rows_v), np.concatenate(rows_w)


def _touch(A: np.ndarray, B: np.ndarray, tol: float) -> np.ndarray:
    d = np.linalg.norm(A[:, :, None, :] - B[:, None, :, :], axis=-1)
    return (d < tol).any(axis=(1, 2))


def _gauss_pair_rows(el, e, f, A, B, sp_):
    """6 x 6 tensor rows for sub-triangle pairs A of element e and B of f."""
    xa, wa = refined_points(A, 0)
    xb, wb = refined_points(B, 0)
    k = len(e)
    la = el.bary(np.repeat(e, 6).reshape(k, 6), xa)  # (k, 6, 3)
    lb = el.bary(np.repeat(f, 6).reshape(k, 6), xb)
    dist = np.linalg.norm(xa[:, :, None, :] - xb[:, None, :, :], axis=-1)
    w = 2.0 * wa[:, :, None] * wb[:, None, :] * dist ** (-(2.0 + sp_))
    vals = np.concatenate([np.broadcast_to(la[:, :, None, :], (k, 6, 6, 3)),
                           -np.broadcast_to(lb[:, None, :, :], (k, 6, 6, 3))], axis=-1)
    cols = np.concatenate([el.cols[e], el.cols[f]], axis=1)
    cols = np.broadcast_to(cols[:, None, None, :], (k, 6, 6, 6))
    return cols.reshape(-1, 6), vals.reshape(-1, 6), w.ravel()


def _pair_rows(el, e, f, sp_, depth, tol):
    """Rows for element pairs e < f, subdividing pairs that touch."""
    out = []
    A, B = el.V[e], el.V[f]
    level = 0
    while len(e):
        touching = _touch(A, B, tol)
        near = touching if level < depth else np.zeros(len(e), bool)
        far = ~near
        if far.any():
            out.append(_gauss_pair_rows(el, e[far], f[far], A[far], B[far], sp_))
        e, f, A, B = e[near], f[near], A[near], B[near]
        if not len(e):
            break
        A4, B4 = subdivide(A).reshape(-1, 4, 3, 2), subdivide(B).reshape(-1, 4, 3, 2)
        A = np.repeat(A4, 4, axis=1).reshape(-1, 3, 2)
        B = np.tile(B4, (1, 4, 1, 1)).reshape(-1, 3, 2)
        e, f = np.repeat(e, 16), np.repeat(f, 16)
        level += 1
    if not out:
        return np.zeros((0, 6), int), np.zeros((0, 6)), np.zeros(0)
    return (np.concatenate([o[0] for o in out]), np.concatenate([o[1] for o in out]),
            np.concatenate([o[2] for o in out]))


def _emit(cols, vals, w, ncols):
    k, m = cols.shape
    rows = np.repeat(np.arange(k), m)
    return PowerForm.from_coo(rows, cols.ravel(), vals.ravel(), w, ncols)


def assemble_base_2d(mesh, s, p, opts, k_const, omega_cells, omega_nodes, col) -> KernelBase:
    sp_ = s * p
    nd = len(omega_nodes)
    el = _Elements(mesh, omega_cells, col)
    m = len(omega_cells)
    if m * (m - 1) // 2 * 36 > opts.max_rows:
        raise ProblemTooLarge("problem too large: quadrature rows exceed the memory cap")
    tol = 1e-9 * mesh.h

    self_c, self_v, self_w = _self_rows(el, s, p)
    parts = []
    ii, jj = np.triu_indices(m, k=1)
    shares = (el.tri[ii][:, :, None] == el.tri[jj][:, None, :]).any(axis=(1, 2))
    cen = el.V.mean(axis=1)
    gap = np.linalg.norm(cen[ii] - cen[jj], axis=1)
    close = ~shares & (gap < 1.5 * mesh.cell_diameter)
    chunk = 20000
    for kind, sel in (("touch", shares), ("close", close), ("far", ~shares & ~close)):
        a, b = ii[sel], jj[sel]
        for k in range(0, len(a), chunk):
            e, f = a[k:k + chunk], b[k:k + chunk]
            if kind == "touch":
                rc = _pair_rows(el, e, f, sp_, opts.depth, tol)
            elif kind == "close":
                # refine both once; children cannot touch
                A = np.repeat(subdivide(el.V[e]).reshape(-1, 4, 3, 2), 4, axis=1).reshape(-1, 3, 2)
                B = np.tile(subdivide(el.V[f]).reshape(-1, 4, 3, 2), (1, 4, 1, 1)).reshape(-1, 3, 2)
                rc = _gauss_pair_rows(el, np.repeat(e, 16), np.repeat(f, 16), A, B, sp_)
            else:
                rc = _gauss_pair_rows(el, e, f, el.V[e], el.V[f], sp_)
            parts.append(rc)

    pc = np.concatenate([o[0] for o in parts]) if parts else np.zeros((0, 6), int)
    pv = np.concatenate([o[1] for o in parts]) if parts else np.zeros((0, 6))
    pw = np.concatenate([o[2] for o in parts]) if parts else np.zeros(0)
    form = _emit(self_c, self_v, self_w, nd) + _emit(pc, pv, pw, nd)

    xq, wq = refined_points(el.V, POINT_LEVEL)
    npt = xq.shape[1]
    lam = el.bary(np.repeat(np.arange(m), npt).reshape(m, npt), xq)
    points = _emit(np.broadcast_to(el.cols[:, None, :], (m, npt, 3)).reshape(-1, 3),
                   lam.reshape(-1, 3), wq.ravel(), nd)
    touching = _touching_2d(mesh, el, col, sp_, p, nd, npt)
    return KernelBase(mesh, s, p, opts, k_const, omega_cells, omega_nodes, form,
                      points, xq.reshape(-1, 2), touching)


def _ccw(V: np.ndarray) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    d1, d2 = V[1] - V[0], V[2] - V[0]
    return V[[0, 2, 1]] if d1[0] * d2[1] - d1[1] * d2[0] < 0 else V


def kappa_triangle(x: np.ndarray, V: np.ndarray, sp_: float) -> np.ndarray:
    """kappa(x) = int_T |x - y|^{-(2+sp)} dy for points x (k, 2) outside the triangle V (3, 2)."""
    return edge_fluxes(x, V, sp_).sum(axis=0)


def edge_fluxes(x: np.ndarray, V: np.ndarray, sp_: float) -> np.ndarray:
    """Edge contributions (3, k) to kappa; edge j runs from V[j] to V[j+1]
    after orienting V counterclockwise.

    With F(y) = -(y - x) |y - x|^{-(2+sp)} / sp, div F is the integrand, so
    kappa is a sum of edge fluxes; on an edge at signed distance d from x
    the flux is -sign(d) |d|^{-sp} / sp times int cos^sp(phi) dphi.
    """
    V = _ccw(V)
    phi_n, phi_w = gauss_legendre(EDGE_ORDER, -1.0, 1.0)
    out = np.zeros((3, len(x)))
    for k in range(3):
        a, b = V[k], V[(k + 1) % 3]
        ln = np.linalg.norm(b - a)
        tau = (b - a) / ln
        nrm = np.array([tau[1], -tau[0]])  # outward for counterclockwise order
        d = (a - x) @ nrm
        ad = np.abs(d)
        ok = ad > 0
        t0 = (a - x) @ tau
        t1 = t0 + ln
        f0 = np.arctan2(t0[ok], ad[ok])
        f1 = np.arctan2(t1[ok], ad[ok])
        mid, half = 0.5 * (f0 + f1), 0.5 * (f1 - f0)
        phi = mid[:, None] + half[:, None] * phi_n[None, :]
        integral = half * (np.cos(phi) ** sp_ @ phi_w)
        out[k, ok] = -np.sign(d[ok]) * ad[ok] ** (-sp_) * integral / sp_
    return out


def _kappa(x: np.ndarray, cells_V: np.ndarray, sp_: float) -> np.ndarray:
    return np.stack([kappa_triangle(x, V, sp_) for V in cells_V]) if len(cells_V) else \
        np.zeros((0, len(x)))


def coupling_rows_2d(base: KernelBase, cells: np.ndarray) -> np.ndarray:
    mesh = base.mesh
    CV = mesh.nodes[mesh.cells[cells]]
    G = base.points.w[None, :] * _kappa(base.point_coords, CV, base.sp)
    for i, c in enumerate(cells.tolist()):
        t = base.touching.get(c)
        if t is not None:
            G[i, t.skip_points] = 0.0
    return G


def _jacobi01(n: int, gamma: float):
    """Nodes and weights of int_0^1 f(t) t^gamma dt."""
    x, w = roots_jacobi(n, 0.0, gamma)
    return 0.5 * (1 + x), w * 0.5 ** (gamma + 1)


def _duffy(P, B, C, a: float, b: float, order: int):
    """Rule for int_T f over T = (P, B, C) with x = P + r((1 - t)(B - P) + t(C - P)).

    Gauss-Jacobi weights r^a, t^b absorb the singular factors; the returned
    ``scale`` must multiply f(x) to complete the rule.
    """
    area = 0.5 * abs((B - P)[0] * (C - P)[1] - (B - P)[1] * (C - P)[0])
    r, wr = _jacobi01(order, a)
    t, wt = _jacobi01(order, b)
    R, T = np.meshgrid(r, t, indexing="ij")
    pts = P + R[..., None] * ((1 - T)[..., None] * (B - P) + T[..., None] * (C - P))
    scale = np.outer(wr, wt) * 2 * area * R ** (1 - a) * T ** (-b)
    return pts.reshape(-1, 2), scale.ravel(), R.ravel(), T.ravel()


def _contact_rows(el, e, sing, sp_, p, forced, order):
    """Rules on element e graded toward its contact ``sing`` with a cell.

    Returns a list of (tag, points, weights without kappa, barycentric rows).
    A shared edge A B is split at its midpoint M into (A, M, C) and
    (B, M, C), each collapsed at the edge vertex so that the distance to
    the edge is proportional to r t.  The flux of kappa through the shared
    edge (tag "shared") then carries (r t)^{-sp}, the other fluxes (tag
    "rest") only r^{-sp}.  A shared vertex is collapsed at itself (tag
    "all").  If ``forced`` the shared vertices carry u = 0; the vanishing
    factor of u joins the singular weight and the rows hold u divided by it.
    """
    Vt = el.V[e]
    others = [i for i in range(3) if i not in sing]
    extra = p if forced else 0.0
    if len(sing) == 2:
        A, B, C = Vt[sing[0]], Vt[sing[1]], Vt[others[0]]
        M = 0.5 * (A + B)
        specs = [("shared", -sp_ + extra), ("rest", extra)]
        rules = [(tag, _duffy(P, M, C, 1 - sp_ + extra, b, order)) for tag, b in specs
                 for P in (A, B)]
        rules = [(tag, q[0], q[1], q[2] * q[3]) for tag, q in rules]
    else:
        P, B, C = Vt[sing[0]], Vt[others[0]], Vt[others[1]]
        q = _duffy(P, B, C, 1 - sp_ + extra, 0.0, order)
        rules = [("all", q[0], q[1], q[2])]
    out = []
    for tag, pts, W, fac in rules:
        lam = el.bary(np.full(len(pts), e), pts)
        if forced:
            lam = lam / fac[:, None]
            lam[:, sing] = 0.0
            W = W * fac ** p
        out.append((tag, pts, W, lam))
    return out


def _kappa_parts(pts, cellV, edge, sp_):
    """Flux of kappa through the cell edge ``edge`` (two points) and the rest."""
    F = edge_fluxes(pts, cellV, sp_)
    V = _ccw(cellV)
    k = next(j for j in range(3)
             if {tuple(V[j]), tuple(V[(j + 1) % 3])} == {tuple(edge[0]), tuple(edge[1])})
    return F[k], F.sum(axis=0) - F[k]


def _touching_2d(mesh, el, col, sp_, p, nd, npt) -> dict[int, TouchingCell]:
    """Special rows for candidate cells sharing a vertex with Omega.

    When sp >= 1 the nodes of an edge shared with Omega must vanish; a single
    common vertex has finite energy as long as sp < 2.
    """
    cand = mesh.cells_with(CANDIDATE)
    omega_node_set = set(el.tri.ravel().tolist())
    elem_of_node: dict[int, list[int]] = {}
    for pos, tri in enumerate(el.tri.tolist()):
        for v in tri:
            elem_of_node.setdefault(v, []).append(pos)
    out = {}
    for c in cand.tolist():
        cnodes = mesh.cells[c].tolist()
        if len(cnodes) != 3:
            raise GeometryError("2D assembly expects triangles")
        common = [v for v in cnodes if v in omega_node_set]
        if not common:
            continue
        elems = sorted({e for v in common for e in elem_of_node[v]})
        contacts = []
        for e in elems:
            tri = el.tri[e].tolist()
            sing = [i for i, v in enumerate(tri) if v in cnodes]
            contacts.append((e, sing))
        need = [v for e, sing in contacts
                if (len(sing) >= 2 and sp_ >= 1.0) or sp_ >= 2.0
                for v in np.asarray(el.tri[e])[sing].tolist()]
        shared = np.unique(col[np.array(need, dtype=int)]) if need else np.zeros(0, int)
        forced_rows, free_rows = [], []
        for e, sing in contacts:
            for forced, bucket in ((True, forced_rows), (False, free_rows)):
                sing_nodes = col[el.tri[e][sing]]
                if forced and not np.isin(sing_nodes, shared).all():
                    forced = False
                if not forced and sp_ >= (1.0 if len(sing) == 2 else 2.0):
                    continue
                cellV = mesh.nodes[mesh.cells[c]]
                for tag, pts, W, lam in _contact_rows(el, e, sing, sp_, p, forced, TOUCH_ORDER):
                    if tag == "all":
                        kap = kappa_triangle(pts, cellV, sp_)
                    else:
                        parts = _kappa_parts(pts, cellV, el.V[e][sing], sp_)
                        kap = parts[0] if tag == "shared" else parts[1]
                    bucket.append((np.broadcast_to(el.cols[e], (len(W), 3)), lam, W * kap))
        skip = (np.array(elems)[:, None] * npt + np.arange(npt)[None, :]).ravel()

        def build(rows):
            return _emit(np.concatenate([r[0] for r in rows]), np.concatenate([r[1] for r in rows]),
                         np.concatenate([r[2] for r in rows]), nd)

        forced_form = build(forced_rows)
        free_form = build(free_rows) if len(free_rows) == len(contacts) else None
        out[c] = TouchingCell(c, shared, skip, free_form, forced_form)
    return out
