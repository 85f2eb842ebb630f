"""Meshes of the interior domain and its exterior candidate region.

Cells are labelled OMEGA, CANDIDATE (inside B_R but outside the domain) or
EXTERIOR.  In 1D the cells are intervals of a uniform grid anchored at the
left endpoint of the domain; in 2D a uniform square grid is split into
right triangles.  A cell belongs to the domain when its centroid does,
up to a correction of the few cells nearest the boundary that keeps every
labelled measure within one cell volume of the exact value.

Dirichlet sets are unions of candidate cells (:class:`SetMask`).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

OMEGA = 0
CANDIDATE = 1
EXTERIOR = 2

_EPS = 1e-12


class GeometryError(ValueError):
    """Raised for inconsistent or unsupported geometric input."""


class ParameterError(ValueError):
    """Raised when problem parameters leave their admissible range."""


@dataclass(frozen=True)
class Params:
    """Problem parameters (n, s, p, alpha, R)."""

    n: int
    s: float
    p: float
    alpha: float
    R: float

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ParameterError(f"invalid params: dimension n={self.n} must be 1 or 2")
        if not 0.0 < self.s < 1.0:
            raise ParameterError(f"invalid params: s={self.s} must satisfy 0 < s < 1")
        if not 1.0 < self.p < math.inf:
            raise ParameterError(f"invalid params: p={self.p} must satisfy 1 < p < inf")
        if not self.alpha > 0.0:
            raise ParameterError(f"invalid params: alpha={self.alpha} must be positive")
        if not self.R > 0.0:
            raise ParameterError(f"invalid params: R={self.R} must be positive")

    @property
    def sp(self) -> float:
        return self.s * self.p

    def with_s(self, s: float) -> "Params":
        return Params(self.n, s, self.p, self.alpha, self.R)


def ball_volume(n: int, r: float) -> float:
    return 2.0 * r if n == 1 else math.pi * r * r


# --------------------------------------------------------------------------
# continuum domains


@dataclass(frozen=True)
class Interval:
    a: float
    b: float

    n = 1

    def __post_init__(self):
        if not self.b > self.a:
            raise GeometryError(f"empty interval ({self.a}, {self.b})")

    @property
    def measure(self) -> float:
        return self.b - self.a

    @property
    def inradius(self) -> float:
        return 0.5 * (self.b - self.a)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        return (x > self.a) & (x < self.b)

    def distance(self, x: np.ndarray) -> np.ndarray:
        """Distance to the closed interval (zero inside)."""
        x = np.asarray(x, dtype=float).reshape(-1)
        return np.maximum(np.maximum(self.a - x, x - self.b), 0.0)

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        return np.maximum(self.a - x, x - self.b)

    def max_norm(self) -> float:
        return max(abs(self.a), abs(self.b))

    def boundary_samples(self) -> np.ndarray:
        return np.array([[self.a], [self.b]])


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    n = 2

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError("disk radius must be positive")

    @property
    def measure(self) -> float:
        return math.pi * self.radius**2

    @property
    def inradius(self) -> float:
        return self.radius

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.hypot(x[:, 0] - self.center[0], x[:, 1] - self.center[1]) < self.radius

    def distance(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        r = np.hypot(x[:, 0] - self.center[0], x[:, 1] - self.center[1])
        return np.maximum(r - self.radius, 0.0)

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.hypot(x[:, 0] - self.center[0], x[:, 1] - self.center[1]) - self.radius

    def max_norm(self) -> float:
        return math.hypot(*self.center) + self.radius

    def boundary_samples(self, count: int = 16) -> np.ndarray:
        t = 2 * np.pi * np.arange(count) / count
        return np.column_stack([self.center[0] + self.radius * np.cos(t),
                                self.center[1] + self.radius * np.sin(t)])


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[tuple[float, float], ...]

    n = 2

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise GeometryError("polygon needs at least three vertices")
        if abs(self.measure) < _EPS:
            raise GeometryError("degenerate polygon")

    @property
    def _v(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    @property
    def measure(self) -> float:
        v = self._v
        x, y = v[:, 0], v[:, 1]
        return abs(0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def contains(self, x: np.ndarray) -> np.ndarray:
        # even-odd ray casting
        x = np.atleast_2d(x)
        v = self._v
        inside = np.zeros(len(x), dtype=bool)
        for (x0, y0), (x1, y1) in zip(v, np.roll(v, -1, axis=0)):
            crosses = (y0 > x[:, 1]) != (y1 > x[:, 1])
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = x0 + (x[:, 1] - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (x[:, 0] < xc)
        return inside

    def _edge_distance(self, x: np.ndarray) -> np.ndarray:
        v = self._v
        d = np.full(len(x), np.inf)
        for p0, p1 in zip(v, np.roll(v, -1, axis=0)):
            e = p1 - p0
            t = np.clip(((x - p0) @ e) / (e @ e), 0.0, 1.0)
            d = np.minimum(d, np.linalg.norm(x - (p0 + t[:, None] * e), axis=1))
        return d

    def distance(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.where(self.contains(x), 0.0, self._edge_distance(x))

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.where(self.contains(x), -1.0, 1.0) * self._edge_distance(x)

    @property
    def inradius(self) -> float:
        v = self._v
        lo, hi = v.min(axis=0), v.max(axis=0)
        g = np.stack(np.meshgrid(np.linspace(lo[0], hi[0], 101),
                                 np.linspace(lo[1], hi[1], 101)), -1).reshape(-1, 2)
        g = g[self.contains(g)]
        return float(self._edge_distance(g).max()) if len(g) else 0.0

    def max_norm(self) -> float:
        return float(np.linalg.norm(self._v, axis=1).max())

    def boundary_samples(self) -> np.ndarray:
        return self._v.copy()


def parse_domain(spec) -> Interval | Disk | Polygon:
    """Build a domain from a tuple like ``("interval", 0, 1)``,
    ``("disk", cx, cy, r)`` or ``("polygon", x0, y0, x1, y1, ...)``, or
    from the equivalent whitespace-separated string."""
    if isinstance(spec, (Interval, Disk, Polygon)):
        return spec
    if isinstance(spec, str):
        spec = spec.split()
    kind, *vals = spec
    vals = [float(v) for v in vals]
    kind = str(kind).lower()
    if kind == "interval" and len(vals) == 2:
        return Interval(*vals)
    if kind == "disk" and len(vals) == 3:
        return Disk((vals[0], vals[1]), vals[2])
    if kind == "polygon" and len(vals) >= 6 and len(vals) % 2 == 0:
        return Polygon(tuple(zip(vals[0::2], vals[1::2])))
    raise GeometryError(f"cannot parse domain specification {spec!r}")


# --------------------------------------------------------------------------
# mesh


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform cell decomposition of a box covering B_R(0)."""

    domain: Interval | Disk | Polygon
    R: float
    h: float
    nodes: np.ndarray  # (n_nodes, n)
    cells: np.ndarray  # (n_cells, n + 1) node indices
    labels: np.ndarray  # (n_cells,)
    cell_volume: float
    centers: np.ndarray = field(repr=False)  # (n_cells, n)

    @property
    def n(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def cell_diameter(self) -> float:
        return self.h * math.sqrt(self.n)

    def cells_with(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    @property
    def omega_measure(self) -> float:
        return self.cell_volume * np.count_nonzero(self.labels == OMEGA)

    @property
    def candidate_measure(self) -> float:
        return self.cell_volume * np.count_nonzero(self.labels == CANDIDATE)

    @property
    def omega(self) -> "Region":
        return Region(self, self.labels == OMEGA)

    @property
    def candidate(self) -> "SetMask":
        return SetMask(self, self.labels == CANDIDATE)

    def empty_mask(self) -> "SetMask":
        return SetMask(self, np.zeros(self.n_cells, dtype=bool))

    def omega_nodes(self) -> np.ndarray:
        return np.unique(self.cells[self.labels == OMEGA])


def build_mesh(domain_spec, params: Params, h: float) -> Mesh:
    """Tile a box covering B_R(0) with cells of size ``h`` and label them."""
    domain = parse_domain(domain_spec)
    if domain.n != params.n:
        raise GeometryError(f"inconsistent geometry: domain is {domain.n}D but n={params.n}")
    if not h > 0:
        raise GeometryError("cell size h must be positive")
    if h > domain.inradius + _EPS:
        raise GeometryError(f"mesh too coarse: h={h} exceeds the inradius {domain.inradius:g}")
    if domain.max_norm() > params.R + _EPS:
        raise GeometryError("inconsistent geometry: Omega is not contained in B_R(0)")

    if params.n == 1:
        i0 = math.floor((-params.R - domain.a) / h + 1e-9)
        i1 = math.ceil((params.R - domain.a) / h - 1e-9)
        x = domain.a + h * np.arange(i0, i1 + 1, dtype=float)
        nodes = x[:, None]
        cells = np.column_stack([np.arange(len(x) - 1), np.arange(1, len(x))])
        centers = 0.5 * (nodes[cells[:, 0]] + nodes[cells[:, 1]])
        volume = h
    else:
        m = math.ceil(params.R / h - 1e-9)
        g = h * np.arange(-m, m + 1, dtype=float)
        X, Y = np.meshgrid(g, g, indexing="ij")
        nodes = np.column_stack([X.ravel(), Y.ravel()])
        k = len(g)
        i, j = np.meshgrid(np.arange(k - 1), np.arange(k - 1), indexing="ij")
        v00 = (i * k + j).ravel()
        v10, v01, v11 = v00 + k, v00 + 1, v00 + k + 1
        # alternate the diagonal so the triangulation has no preferred direction
        flip = ((i + j) % 2 == 1).ravel()
        t1 = np.where(flip[:, None], np.column_stack([v00, v10, v01]), np.column_stack([v00, v10, v11]))
        t2 = np.where(flip[:, None], np.column_stack([v10, v11, v01]), np.column_stack([v00, v11, v01]))
        cells = np.vstack([t1, t2])
        centers = nodes[cells].mean(axis=1)
        volume = 0.5 * h * h

    inside = _balanced(domain.signed_distance(centers), domain.measure / volume)
    in_ball = _balanced(np.linalg.norm(centers, axis=1) - params.R,
                        ball_volume(params.n, params.R) / volume)
    labels = np.where(inside, OMEGA, np.where(in_ball, CANDIDATE, EXTERIOR))
    mesh = Mesh(domain, params.R, h, nodes, cells, labels.astype(np.int8), volume, centers)
    if mesh.omega_measure == 0:
        raise GeometryError("mesh too coarse: no cell lies inside Omega")
    exact_candidate = ball_volume(params.n, params.R) - domain.measure
    if params.alpha >= exact_candidate:
        raise GeometryError(
            f"alpha too large for R: alpha={params.alpha} but |B_R minus Omega|={exact_candidate:g}")
    return mesh


def _balanced(signed_dist: np.ndarray, exact_count: float) -> np.ndarray:
    """Cells with negative signed centroid distance, corrected so that the
    count is the nearest integer to ``exact_count``.

    Centroid classification alone can miss the exact measure by many cells
    on curved boundaries; the correction flips only the cells whose
    centroids lie closest to the boundary.
    """
    inside = signed_dist < 0
    target = int(math.floor(exact_count + 0.5))
    surplus = int(np.count_nonzero(inside)) - target
    if surplus > 0:
        idx = np.flatnonzero(inside)
        drop = idx[np.lexsort((idx, -signed_dist[idx]))[:surplus]]
        inside[drop] = False
    elif surplus < 0:
        idx = np.flatnonzero(~inside)
        add = idx[np.lexsort((idx, signed_dist[idx]))[:-surplus]]
        inside[add] = True
    return inside


# --------------------------------------------------------------------------
# regions and masks


@dataclass(frozen=True, eq=False)
class Region:
    """A union of mesh cells."""

    mesh: Mesh
    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=bool)
        if cells.shape != (self.mesh.n_cells,):
            raise GeometryError("region indicator has the wrong length")
        cells = cells.copy()
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.cells))

    @property
    def measure(self) -> float:
        return self.count * self.mesh.cell_volume

    @property
    def is_empty(self) -> bool:
        return self.count == 0

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.cells)

    def vertices(self) -> np.ndarray:
        return self.mesh.nodes[np.unique(self.mesh.cells[self.cells])]

    def fingerprint(self) -> str:
        return hashlib.sha1(np.packbits(self.cells).tobytes()).hexdigest()[:16]

    def __eq__(self, other):
        return (isinstance(other, Region) and other.mesh is self.mesh
                and bool(np.array_equal(other.cells, self.cells)))

    def __hash__(self):
        return hash((id(self.mesh), self.fingerprint()))

    def __or__(self, other: "Region") -> "Region":
        return type(self)(self.mesh, self.cells | other.cells)

    def issubset(self, other: "Region") -> bool:
        return not np.any(self.cells & ~other.cells)


class SetMask(Region):
    """Dirichlet set: a union of candidate cells."""

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.cells & (self.mesh.labels != CANDIDATE)):
            raise GeometryError("a Dirichlet mask may only select Candidate cells")


def cells_for_measure(mesh: Mesh, alpha: float) -> int:
    """Cell count whose measure is the closest cell multiple to ``alpha``."""
    return max(1, int(math.floor(alpha / mesh.cell_volume + 0.5 + 1e-9)))


def mask_from_cells(mesh: Mesh, indices: Iterable[int]) -> SetMask:
    cells = np.zeros(mesh.n_cells, dtype=bool)
    cells[np.asarray(list(indices), dtype=int)] = True
    return SetMask(mesh, cells)


def mask_from_intervals(mesh: Mesh, intervals: Sequence[tuple[float, float]]) -> SetMask:
    """1D mask of the candidate cells whose centers lie in one of the intervals."""
    if mesh.n != 1:
        raise GeometryError("interval masks are 1D only")
    c = mesh.centers[:, 0]
    sel = np.zeros(mesh.n_cells, dtype=bool)
    for lo, hi in intervals:
        sel |= (c > lo) & (c < hi)
    return SetMask(mesh, sel & (mesh.labels == CANDIDATE))


def mask_from_annulus(mesh: Mesh, r_in: float, r_out: float, center=(0.0, 0.0)) -> SetMask:
    d = np.linalg.norm(mesh.centers - np.asarray(center)[: mesh.n], axis=1)
    return SetMask(mesh, (d > r_in) & (d < r_out) & (mesh.labels == CANDIDATE))


def _as_region(a) -> Region:
    if isinstance(a, Region):
        return a
    raise TypeError(f"expected a Region or SetMask, got {type(a).__name__}")


def sup_distance(a: Region, b: Region) -> float:
    """Largest distance between cell vertices of ``a`` and of ``b``."""
    a, b = _as_region(a), _as_region(b)
    if a.is_empty or b.is_empty:
        raise GeometryError("empty region")
    pa, pb = _hull_points(a.vertices()), _hull_points(b.vertices())
    diff = pa[:, None, :] - pb[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max())


def inf_distance(a: Region, b: Region) -> float:
    """Smallest distance between cell vertices of ``a`` and of ``b``."""
    a, b = _as_region(a), _as_region(b)
    if a.is_empty or b.is_empty:
        raise GeometryError("empty region")
    if np.any(a.cells & b.cells):
        return 0.0
    d, _ = cKDTree(b.vertices()).query(a.vertices())
    return float(d.min())


def _hull_points(pts: np.ndarray) -> np.ndarray:
    if pts.shape[1] == 1:
        return np.array([pts.min(axis=0), pts.max(axis=0)])
    try:
        return pts[ConvexHull(pts).vertices]
    except (QhullError, ValueError):
        return pts


def fattened_annulus(mesh: Mesh, alpha: float) -> SetMask:
    """Collar of candidate cells hugging the domain with measure ~ alpha.

    Selecting the cells nearest to the domain (ties by cell index) is the
    limit of bisecting on the collar width r; ``collar_width`` reports r.
    """
    cand = mesh.cells_with(CANDIDATE)
    m = cells_for_measure(mesh, alpha)
    if alpha >= mesh.candidate_measure or m > len(cand):
        raise GeometryError(f"alpha too large for R: alpha={alpha}, candidate measure "
                            f"{mesh.candidate_measure:g}")
    dist = np.round(mesh.domain.distance(mesh.centers[cand]), 12)
    order = np.lexsort((cand, dist))
    return mask_from_cells(mesh, cand[order[:m]])


def collar_width(mask: SetMask) -> float:
    """Distance from the domain to the farthest selected cell center."""
    if mask.is_empty:
        return 0.0
    return float(mask.mesh.domain.distance(mask.mesh.centers[mask.indices]).max())


def translated_ball(mesh: Mesh, r: float, k: float) -> SetMask:
    """Mask of cells whose centers lie in B_r(k e_1), with the cell count
    corrected to the nearest integer to |B_r| / cell volume."""
    center = np.zeros(mesh.n)
    center[0] = k
    if mesh.domain.distance(center[None, :])[0] < r - _EPS:
        raise GeometryError("ball overlaps Omega")
    if np.linalg.norm(center) + r > mesh.R + _EPS:
        raise GeometryError(f"out of range: B_{r}({k} e1) leaves B_R with R={mesh.R}")
    d = np.linalg.norm(mesh.centers - center, axis=1) - r
    d[mesh.labels != CANDIDATE] = np.inf
    sel = _balanced(d, ball_volume(mesh.n, r) / mesh.cell_volume)
    if not sel.any():
        raise GeometryError("out of range: ball contains no candidate cell")
    return SetMask(mesh, sel)


def mask_measure_in_ball(mask: Region, x: np.ndarray, eps: float) -> float:
    """Measure of the mask cells whose centers lie in B_eps(x)."""
    d = np.linalg.norm(mask.mesh.centers - np.asarray(x, dtype=float), axis=1)
    return float(np.count_nonzero(mask.cells & (d < eps)) * mask.mesh.cell_volume)


def mask_rows(mask: Region):
    """CSV rows ``cell_index, center coords..., selected`` for a mask."""
    mesh = mask.mesh
    for i in range(mesh.n_cells):
        if mesh.labels[i] == CANDIDATE or mask.cells[i]:
            yield (i, *mesh.centers[i].tolist(), int(mask.cells[i]))
