"""Triangular meshes of a square domain with an optional circular exclusion.

The generator produces deterministic meshes: a structured "union jack" grid
away from the circle and a Delaunay-filled band around it, so the circle is
resolved by an exact inscribed polygon whose edges are tagged separately from
the outer square. When the circle is centred on the vertical grid axis the
mesh is exactly mirror symmetric about that axis (the left half is built by
reflecting the right half), which downstream symmetry checks rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay


class MeshError(Exception):
    """Raised when mesh generation or validation fails."""


class EdgeTag(Enum):
    OUTER = "outer"
    CELL = "cell"


# mean edge length of a union-jack grid cell, in units of the grid spacing
_AVG_EDGE_PER_SPACING = (2.0 + math.sqrt(2.0)) / 3.0


@dataclass(frozen=True)
class Point2:
    """A point in the plane with finite coordinates."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"point coordinates must be finite, got ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def __iter__(self):
        yield self.x
        yield self.y


def as_point(p) -> Point2:
    """Coerce a Point2, pair, or length-2 array into a Point2."""
    if isinstance(p, Point2):
        return p
    x, y = (float(v) for v in p)
    return Point2(x, y)


@dataclass(frozen=True)
class DomainSpec:
    """Square domain [-L, L]^2 with a circular cell of radius R at ``cell_center``.

    ``with_hole`` selects between the exclusion mesh (circle removed, its
    polygon tagged ``CELL``) and the full square. ``graded`` inserts an extra
    ring of points next to the circle for a locally finer band; default off.
    """

    half_width: float
    cell_center: Point2
    cell_radius: float
    with_hole: bool
    target_h: float
    graded: bool = False

    def __post_init__(self):
        object.__setattr__(self, "cell_center", as_point(self.cell_center))
        L, R = self.half_width, self.cell_radius
        if not (L > R > 0.0):
            raise ValueError(f"need half_width > cell_radius > 0, got L={L}, R={R}")
        c = self.cell_center
        if max(abs(c.x), abs(c.y)) + R >= L:
            raise ValueError("cell must lie strictly inside the square")
        if not (self.target_h > 0.0 and math.isfinite(self.target_h)):
            raise ValueError(f"target_h must be positive and finite, got {self.target_h}")

    @property
    def tol_geom(self) -> float:
        """Geometric classification tolerance, scale-relative."""
        return 1e-9 * self.half_width


class TriMesh:
    """Immutable triangulation with tagged boundary edges.

    Parameters
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, CCW vertex order
    edge_tags : dict mapping sorted boundary vertex pairs to EdgeTag
    characteristic_size : target edge length the mesh was built for
    domain : the DomainSpec the mesh was generated from, if any
    """

    def __init__(self, vertices, triangles, edge_tags, characteristic_size,
                 domain: DomainSpec | None = None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int32)
        self.edge_tags = dict(edge_tags)
        self.characteristic_size = float(characteristic_size)
        self.domain = domain
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, each row sorted."""
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Edges adjacent to exactly one triangle, each row sorted."""
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts == 1]

    @cached_property
    def average_edge_length(self) -> float:
        v = self.vertices
        d = v[self.edges[:, 0]] - v[self.edges[:, 1]]
        return float(np.mean(np.hypot(d[:, 0], d[:, 1])))

    @cached_property
    def sizing_edge_average(self) -> float:
        """Average edge length excluding the circle polygon edges.

        The circle carries at least 64 segments regardless of the target size,
        so at coarse targets its edges are deliberately shorter than h; the
        sizing contract applies to the rest of the mesh.
        """
        ring = np.zeros(self.num_vertices, dtype=bool)
        cell_edges = [e for e, t in self.edge_tags.items() if t is EdgeTag.CELL]
        if not cell_edges:
            return self.average_edge_length
        ring[np.asarray(cell_edges).ravel()] = True
        e = self.edges
        keep = ~(ring[e[:, 0]] & ring[e[:, 1]])
        v = self.vertices
        d = v[e[keep, 0]] - v[e[keep, 1]]
        return float(np.mean(np.hypot(d[:, 0], d[:, 1])))

    @cached_property
    def _locator(self) -> "_BucketLocator":
        return _BucketLocator(self)

    def tagged_edges(self, tag: EdgeTag) -> np.ndarray:
        rows = [e for e, t in self.edge_tags.items() if t is tag]
        return np.array(sorted(rows), dtype=np.int64).reshape(-1, 2)

    def validate(self) -> None:
        """Check structural invariants; raise MeshError on the first failure."""
        if np.any(self.signed_areas <= 0.0):
            bad = int(np.argmin(self.signed_areas))
            raise MeshError(f"triangle {bad} has non-positive area {self.signed_areas[bad]:g}")
        boundary = {tuple(e) for e in self.boundary_edges}
        tagged = set(self.edge_tags)
        if boundary != tagged:
            missing = boundary - tagged
            extra = tagged - boundary
            raise MeshError(
                f"boundary/tag mismatch: {len(missing)} untagged boundary edges, "
                f"{len(extra)} tags on non-boundary edges")
        for tag in EdgeTag:
            rows = self.tagged_edges(tag)
            if rows.size:
                _check_single_closed_loop(rows, tag.value)
        if self.domain is not None and self.domain.with_hole:
            c = self.domain.cell_center.as_array()
            R = self.domain.cell_radius
            tol = self.domain.tol_geom
            dist = np.hypot(*(self.vertices - c).T)
            if np.any(dist < R - tol):
                raise MeshError("vertex inside the excluded circle")
            cell_rows = self.tagged_edges(EdgeTag.CELL)
            ring = np.unique(cell_rows)
            if ring.size and np.any(np.abs(dist[ring] - R) > tol):
                raise MeshError("cell-boundary vertex off the circle")


def _check_single_closed_loop(edge_rows: np.ndarray, name: str) -> None:
    verts, counts = np.unique(edge_rows, return_counts=True)
    if np.any(counts != 2):
        raise MeshError(f"{name} boundary is not a closed loop (vertex degree != 2)")
    # walk the loop; it must visit every edge exactly once
    adjacency: dict[int, list[int]] = {}
    for a, b in edge_rows:
        adjacency.setdefault(int(a), []).append(int(b))
        adjacency.setdefault(int(b), []).append(int(a))
    start = int(edge_rows[0, 0])
    prev, cur, steps = None, start, 0
    while True:
        nxt = adjacency[cur][0] if adjacency[cur][0] != prev else adjacency[cur][1]
        prev, cur = cur, nxt
        steps += 1
        if cur == start:
            break
        if steps > len(edge_rows):
            raise MeshError(f"{name} boundary walk did not close")
    if steps != len(edge_rows):
        raise MeshError(f"{name} boundary has more than one loop")


# ----------------------------------------------------------------------------
# generation
# ----------------------------------------------------------------------------

def _grid_axis(L: float, n: int) -> np.ndarray:
    # coordinates exactly antisymmetric about 0 (n even), endpoints exactly +-L
    s = 2.0 * L / n
    xs = s * (np.arange(n + 1) - n / 2)
    xs[0], xs[-1] = -L, L
    return xs


def _symmetric_circle(center: Point2, radius: float, m: int, stagger: bool = False) -> np.ndarray:
    """m points on the circle, mirror-exact about the vertical axis.

    Angles are pi/2 + 2*pi*k/m (k=0..m-1), staggered by pi/m when requested.
    Right-half coordinates are produced by negating the left-half x values so
    mirrored pairs are exact floating-point reflections.
    """
    if m % 2:
        raise ValueError("point count must be even")
    pts = np.empty((m, 2))
    if not stagger:
        pts[0] = (0.0, radius)
        pts[m // 2] = (0.0, -radius)
        for k in range(1, m // 2):
            th = 0.5 * math.pi + 2.0 * math.pi * k / m
            pts[k] = (radius * math.cos(th), radius * math.sin(th))
        for k in range(m // 2 + 1, m):
            pts[k] = (-pts[m - k, 0], pts[m - k, 1])
    else:
        # staggered set pairs k <-> m-1-k across the axis; no on-axis points
        for k in range(0, m // 2):
            th = 0.5 * math.pi + math.pi * (2 * k + 1) / m
            pts[k] = (radius * math.cos(th), radius * math.sin(th))
        for k in range(m // 2, m):
            pts[k] = (-pts[m - 1 - k, 0], pts[m - 1 - k, 1])
    pts[:, 0] += center.x
    pts[:, 1] += center.y
    return pts


def _union_jack_cells(i: np.ndarray, j: np.ndarray, nid) -> np.ndarray:
    """Two CCW triangles per grid cell, diagonal direction alternating by parity."""
    v00, v10 = nid(i, j), nid(i + 1, j)
    v01, v11 = nid(i, j + 1), nid(i + 1, j + 1)
    even = (i + j) % 2 == 0
    t1 = np.where(even[:, None], np.stack([v00, v10, v11], axis=1),
                  np.stack([v00, v10, v01], axis=1))
    t2 = np.where(even[:, None], np.stack([v00, v11, v01], axis=1),
                  np.stack([v10, v11, v01], axis=1))
    return np.vstack([t1, t2])


def generate_mesh(spec: DomainSpec) -> TriMesh:
    """Generate a triangulation of the spec's domain.

    The result satisfies the TriMesh invariants: consistent CCW orientation,
    tagged closed boundary loops (outer square, and the circle polygon for a
    holed domain), and an average edge length within 25% of ``target_h``. The
    circle is approximated by an inscribed polygon with at least
    max(64, ceil(2*pi*R/target_h)) segments.
    """
    L, h = spec.half_width, spec.target_h
    s_goal = h / _AVG_EDGE_PER_SPACING
    n = max(2, 2 * round(L / s_goal))  # even interval count
    xs = _grid_axis(L, n)
    s = 2.0 * L / n

    if not spec.with_hole:
        mesh = _structured_square(spec, xs, n)
    else:
        mesh = _holed_mesh(spec, xs, n, s)

    mesh.validate()
    avg = mesh.sizing_edge_average
    if abs(avg - h) > 0.25 * h:
        raise MeshError(
            f"average edge length {avg:g} misses target {h:g} by more than 25%; "
            f"choose target_h well below the domain size")
    return mesh


def _structured_square(spec: DomainSpec, xs: np.ndarray, n: int) -> TriMesh:
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return i * (n + 1) + j

    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    tris = _union_jack_cells(ii.ravel(), jj.ravel(), nid)

    tags = {}
    for k in range(n):
        tags[_key(nid(k, 0), nid(k + 1, 0))] = EdgeTag.OUTER
        tags[_key(nid(k, n), nid(k + 1, n))] = EdgeTag.OUTER
        tags[_key(nid(0, k), nid(0, k + 1))] = EdgeTag.OUTER
        tags[_key(nid(n, k), nid(n, k + 1))] = EdgeTag.OUTER
    return TriMesh(verts, tris, tags, spec.target_h, domain=spec)


def _key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def circle_segment_count(spec: DomainSpec) -> int:
    m = max(64, math.ceil(2.0 * math.pi * spec.cell_radius / spec.target_h))
    return m + (m % 2)


def _holed_mesh(spec: DomainSpec, xs: np.ndarray, n: int, s: float) -> TriMesh:
    L, R = spec.half_width, spec.cell_radius
    c = spec.cell_center.as_array()
    m_circ = circle_segment_count(spec)
    ell = 2.0 * R * math.sin(math.pi / m_circ)  # circle polygon edge length
    sagitta = R * (1.0 - math.cos(math.pi / m_circ))
    # clearance radii keep the circle polygon and the structured seam locally
    # Delaunay (empty diametral circles) so the band triangulation conforms
    m_in = max(0.8 * s, 0.55 * ell + sagitta)
    m_out = m_in + max(s, 0.5 * ell)

    X, Y = np.meshgrid(xs, xs, indexing="ij")
    node_dist = np.hypot(X - c[0], Y - c[1])
    node_keep = node_dist >= R + m_in  # (n+1, n+1)

    # cell classification by exact distance of the cell rectangle to the centre
    x0, x1 = xs[:-1], xs[1:]
    dx = np.maximum.reduce([x0[:, None] - c[0], c[0] - x1[:, None],
                            np.zeros((n, 1))] )
    dy = np.maximum.reduce([x0[None, :] - c[1], c[1] - x1[None, :],
                            np.zeros((1, n))])
    cell_dmin = np.hypot(dx, dy)
    corner_dist = np.stack([node_dist[:-1, :-1], node_dist[1:, :-1],
                            node_dist[:-1, 1:], node_dist[1:, 1:]])
    cell_dmax = corner_dist.max(axis=0)

    far = cell_dmin >= R + m_out
    hole = cell_dmax <= R
    band = ~far & ~hole

    # structured part: far cells only, on nodes kept everywhere they are used
    def nid(i, j):
        return i * (n + 1) + j

    fi, fj = np.nonzero(far)
    tris_far = _union_jack_cells(fi, fj, nid)

    # band point set: kept nodes of band cells (seam nodes included) + circle
    band_nodes = np.zeros_like(node_keep)
    bi, bj = np.nonzero(band)
    for di in (0, 1):
        for dj in (0, 1):
            band_nodes[bi + di, bj + dj] = True
    band_nodes &= node_keep
    gi, gj = np.nonzero(band_nodes)
    grid_ids = nid(gi, gj)
    grid_pts = np.column_stack([xs[gi], xs[gj]])

    circle_pts = _symmetric_circle(spec.cell_center, R, m_circ)
    extra = [circle_pts]
    if spec.graded:
        extra.append(_symmetric_circle(spec.cell_center, R + 0.5 * m_in, m_circ,
                                       stagger=True))
    ring_pts = np.vstack(extra)

    n_grid_total = (n + 1) * (n + 1)
    band_pts = np.vstack([grid_pts, ring_pts])
    band_global = np.concatenate([grid_ids, n_grid_total + np.arange(len(ring_pts))])

    mirror_ok = spec.cell_center.x == 0.0
    tris_band_local = _triangulate_band(band_pts, c, R, far, L, s, mirror_ok)
    tris_band = band_global[tris_band_local]

    verts = np.vstack([np.column_stack([X.ravel(), Y.ravel()]), ring_pts])
    tris = np.vstack([tris_far, tris_band])

    # drop unused grid vertices and remap
    used = np.zeros(len(verts), dtype=bool)
    used[tris.ravel()] = True
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(used.sum())
    verts = verts[used]
    tris = remap[tris]

    tags = _tag_boundary(verts, tris, spec)
    return TriMesh(verts, tris, tags, spec.target_h, domain=spec)


def _triangulate_band(pts: np.ndarray, c: np.ndarray, R: float,
                      far: np.ndarray, L: float, s: float,
                      mirror: bool) -> np.ndarray:
    """Delaunay-triangulate the band points; keep triangles in the band region.

    With ``mirror`` set, only points with x >= 0 are triangulated and the left
    half is produced by reflection, which makes the band exactly symmetric.
    """
    def keep_mask(p: np.ndarray, t: np.ndarray) -> np.ndarray:
        cent = p[t].mean(axis=1)
        inside_circle = np.hypot(cent[:, 0] - c[0], cent[:, 1] - c[1]) <= R
        ci = np.clip(((cent[:, 0] + L) / s).astype(int), 0, far.shape[0] - 1)
        cj = np.clip(((cent[:, 1] + L) / s).astype(int), 0, far.shape[1] - 1)
        return ~inside_circle & ~far[ci, cj]

    if not mirror:
        tri = Delaunay(pts)
        t = tri.simplices[keep_mask(pts, tri.simplices)]
        return _orient_ccw(pts, t)

    right = np.nonzero(pts[:, 0] >= 0.0)[0]
    tri = Delaunay(pts[right])
    t_half = right[tri.simplices[keep_mask(pts[right], tri.simplices)]]

    # reflection partner of every band point: on-axis points map to themselves
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    mirrored = np.column_stack([-pts[:, 0], pts[:, 1]])
    order_m = np.lexsort((mirrored[:, 1], mirrored[:, 0]))
    partner = np.empty(len(pts), dtype=np.int64)
    partner[order_m] = order
    if not np.array_equal(pts[partner], mirrored):
        raise MeshError("band point set is not mirror symmetric")

    t_left = partner[t_half][:, ::-1]  # reflection flips orientation
    return _orient_ccw(pts, np.vstack([t_half, t_left]))


def _orient_ccw(pts: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = pts[tris]
    cross = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
             - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    flip = cross < 0.0
    out = tris.copy()
    out[flip] = out[flip][:, [0, 2, 1]]
    return out


def _tag_boundary(verts: np.ndarray, tris: np.ndarray, spec: DomainSpec) -> dict:
    e = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    L, tol = spec.half_width, spec.tol_geom
    c = spec.cell_center.as_array()
    R = spec.cell_radius
    tags = {}
    for a, b in bnd:
        pa, pb = verts[a], verts[b]
        on_square = any(
            abs(pa[axis] - side) <= tol and abs(pb[axis] - side) <= tol
            for axis in (0, 1) for side in (-L, L))
        if on_square:
            tags[(int(a), int(b))] = EdgeTag.OUTER
            continue
        da = abs(np.hypot(*(pa - c)) - R)
        db = abs(np.hypot(*(pb - c)) - R)
        if spec.with_hole and da <= tol and db <= tol:
            tags[(int(a), int(b))] = EdgeTag.CELL
            continue
        raise MeshError(f"boundary edge ({a},{b}) lies on neither tagged boundary")
    return tags


# ----------------------------------------------------------------------------
# queries
# ----------------------------------------------------------------------------

class _BucketLocator:
    """Uniform-grid bucket index over triangle bounding boxes."""

    def __init__(self, mesh: TriMesh):
        v = mesh.vertices
        self.lo = v.min(axis=0)
        hi = v.max(axis=0)
        target = max(mesh.average_edge_length * 2.0, 1e-300)
        self.ncell = np.maximum(((hi - self.lo) / target).astype(int), 1)
        self.size = (hi - self.lo) / self.ncell
        p = v[mesh.triangles]
        tlo = self._cell_of(p.min(axis=1))
        thi = self._cell_of(p.max(axis=1))
        wi = thi[:, 0] - tlo[:, 0] + 1
        wj = thi[:, 1] - tlo[:, 1] + 1
        cnt = wi * wj
        tri_rep = np.repeat(np.arange(len(cnt)), cnt)
        local = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        wj_rep = wj[tri_rep]
        ii = tlo[tri_rep, 0] + local // wj_rep
        jj = tlo[tri_rep, 1] + local % wj_rep
        cells = ii * self.ncell[1] + jj
        order = np.argsort(cells, kind="stable")
        counts = np.zeros(self.ncell[0] * self.ncell[1] + 1, dtype=np.int64)
        np.add.at(counts, cells + 1, 1)
        self.start = np.cumsum(counts)
        self.items = tri_rep[order]
        self.mesh = mesh

    def _cell_of(self, pts: np.ndarray) -> np.ndarray:
        idx = ((pts - self.lo) / self.size).astype(int)
        return np.clip(idx, 0, self.ncell - 1)

    def candidates(self, p: np.ndarray) -> np.ndarray:
        i, j = self._cell_of(p.reshape(1, 2))[0]
        k = i * self.ncell[1] + j
        return self.items[self.start[k]:self.start[k + 1]]


def _barycentric(mesh: TriMesh, tri_idx: np.ndarray, pts: np.ndarray) -> np.ndarray:
    p = mesh.vertices[mesh.triangles[tri_idx]]
    d1 = p[:, 0] - p[:, 2]
    d2 = p[:, 1] - p[:, 2]
    dp = pts - p[:, 2]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    l1 = (dp[:, 0] * d2[:, 1] - dp[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * dp[:, 1] - d1[:, 1] * dp[:, 0]) / det
    return np.column_stack([l1, l2, 1.0 - l1 - l2])


def locate_points(mesh: TriMesh, pts) -> tuple[np.ndarray, np.ndarray]:
    """Locate each point in the mesh.

    Returns (tri, bary): the containing triangle index per point (-1 when the
    point lies outside the mesh, including inside the hole of a holed mesh)
    and its barycentric coordinates. Points on shared edges resolve to the
    lowest containing triangle index.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    loc = mesh._locator
    tol_geom = mesh.domain.tol_geom if mesh.domain is not None else \
        1e-9 * float(np.abs(mesh.vertices).max() or 1.0)
    tri_out = np.full(len(pts), -1, dtype=np.int64)
    bary_out = np.zeros((len(pts), 3))
    for k, p in enumerate(pts):
        cand = np.sort(loc.candidates(p))
        if cand.size == 0:
            continue
        lam = _barycentric(mesh, cand, np.broadcast_to(p, (len(cand), 2)))
        areas = mesh.signed_areas[cand]
        pmesh = mesh.vertices[mesh.triangles[cand]]
        edge = np.linalg.norm(pmesh - np.roll(pmesh, -1, axis=1), axis=2).max(axis=1)
        tol = tol_geom * edge / (2.0 * areas)
        ok = np.nonzero(np.all(lam >= -tol[:, None], axis=1))[0]
        if ok.size:
            best = ok[0]  # candidates sorted, so lowest triangle index wins
            tri_out[k] = cand[best]
            bary_out[k] = lam[best]
    return tri_out, bary_out


def locate_point(mesh: TriMesh, p) -> tuple[int, np.ndarray] | None:
    """Locate a single point; None when it lies outside the mesh."""
    if isinstance(p, Point2):
        p = p.as_array()
    tri, bary = locate_points(mesh, [p])
    if tri[0] < 0:
        return None
    return int(tri[0]), bary[0]


def mirror_vertex_map(mesh: TriMesh) -> np.ndarray | None:
    """Index map pairing each vertex with its exact reflection across x = 0.

    Returns None when the vertex set is not bit-exactly mirror symmetric
    (generated meshes are, whenever the cell centre sits on the axis).
    """
    v = mesh.vertices
    mirrored = np.column_stack([-v[:, 0], v[:, 1]])
    order = np.lexsort((v[:, 1], v[:, 0]))
    order_m = np.lexsort((mirrored[:, 1], mirrored[:, 0]))
    partner = np.empty(len(v), dtype=np.int64)
    partner[order_m] = order
    if not np.array_equal(v[partner], mirrored):
        return None
    return partner


def cell_boundary_samples(mesh_or_spec, m: int) -> tuple[np.ndarray, np.ndarray]:
    """M equally spaced angles theta_j = 2*pi*j/M and their circle points."""
    if m < 4:
        raise ValueError(f"need at least 4 samples, got {m}")
    spec = mesh_or_spec.domain if isinstance(mesh_or_spec, TriMesh) else mesh_or_spec
    if spec is None:
        raise ValueError("mesh carries no domain spec to sample the circle from")
    thetas = 2.0 * math.pi * np.arange(m) / m
    pts = np.column_stack([
        spec.cell_center.x + spec.cell_radius * np.cos(thetas),
        spec.cell_center.y + spec.cell_radius * np.sin(thetas)])
    return thetas, pts


# ----------------------------------------------------------------------------
# plain-text export / import
# ----------------------------------------------------------------------------

def save_mesh(mesh: TriMesh, path) -> None:
    """Write the documented plain-text format: ``nv nt ne`` header, vertex
    lines ``x y``, triangle lines ``i j k``, tagged edge lines ``i j tag``."""
    lines = [f"{mesh.num_vertices} {mesh.num_triangles} {len(mesh.edge_tags)}"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.vertices]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    lines += [f"{a} {b} {tag.value}" for (a, b), tag in sorted(mesh.edge_tags.items())]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path) -> TriMesh:
    with open(path) as fh:
        tokens = fh.read().split("\n")
    nv, nt, ne = (int(v) for v in tokens[0].split())
    verts = np.array([[float(v) for v in line.split()]
                      for line in tokens[1:1 + nv]]).reshape(-1, 2)
    tris = np.array([[int(v) for v in line.split()]
                     for line in tokens[1 + nv:1 + nv + nt]], dtype=np.int64).reshape(-1, 3)
    tags = {}
    for line in tokens[1 + nv + nt:1 + nv + nt + ne]:
        a, b, word = line.split()
        tags[(int(a), int(b))] = EdgeTag(word)
    v = verts[tris[:, 0]] - verts[tris[:, 1]]
    size = float(np.mean(np.hypot(v[:, 0], v[:, 1]))) if nt else 1.0
    return TriMesh(verts, tris, tags, size)
