"""Planar geometry: footprints, rasterized sweeps, boundary tracing, ray casting
and collision predicates.

All obstacles are handled internally as capsules (a core segment dilated by a
radius). A wall is a thick segment; a cylinder is a capsule whose core has zero
length. Every exact query below works on that single representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np
from scipy import ndimage

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.remainder(theta, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    return a


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def translated(self, dx: float, dy: float) -> "Pose2D":
        return Pose2D(self.x + dx, self.y + dy, self.theta)


@dataclass(frozen=True)
class FootprintRect:
    length: float
    width: float
    ref_offset: float = 0.0

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"footprint extents must be positive, got {self.length}x{self.width}")

    def inflated(self, margin: float) -> "FootprintRect":
        return FootprintRect(self.length + 2 * margin, self.width + 2 * margin, self.ref_offset)

    @property
    def circumradius(self) -> float:
        """Radius around the reference point that encloses the rectangle."""
        return math.hypot(abs(self.ref_offset) + self.length / 2, self.width / 2)


@dataclass(frozen=True)
class Wall:
    p0: tuple[float, float]
    p1: tuple[float, float]
    thickness: float

    def __post_init__(self):
        object.__setattr__(self, "p0", (float(self.p0[0]), float(self.p0[1])))
        object.__setattr__(self, "p1", (float(self.p1[0]), float(self.p1[1])))
        if self.thickness <= 0:
            raise ValueError("wall thickness must be positive")
        if self.p0 == self.p1:
            raise ValueError("wall endpoints must differ")


@dataclass(frozen=True)
class Cylinder:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.radius <= 0:
            raise ValueError("cylinder radius must be positive")


Obstacle = Union[Wall, Cylinder]


@dataclass(frozen=True)
class Capsules:
    """Array form of an obstacle list: core segments ``a -> b`` and radii."""

    a: np.ndarray
    b: np.ndarray
    r: np.ndarray

    def __len__(self) -> int:
        return len(self.r)

    def subset(self, mask: np.ndarray) -> "Capsules":
        return Capsules(self.a[mask], self.b[mask], self.r[mask])

    def near(self, point: Sequence[float], reach: float) -> "Capsules":
        """Capsules whose surface may come within ``reach`` of ``point``."""
        if len(self) == 0:
            return self
        d = point_segment_distance(np.asarray(point, float), self.a, self.b)
        return self.subset(d - self.r <= reach)


def as_capsules(obstacles: Union[Capsules, Iterable[Obstacle]]) -> Capsules:
    if isinstance(obstacles, Capsules):
        return obstacles
    a, b, r = [], [], []
    for ob in obstacles:
        if isinstance(ob, Wall):
            a.append(ob.p0)
            b.append(ob.p1)
            r.append(ob.thickness / 2)
        elif isinstance(ob, Cylinder):
            a.append(ob.center)
            b.append(ob.center)
            r.append(ob.radius)
        else:
            raise TypeError(f"unknown obstacle {ob!r}")
    if not r:
        return Capsules(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))
    return Capsules(np.array(a, float), np.array(b, float), np.array(r, float))


# --------------------------------------------------------------------------
# elementary distances


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from point(s) ``p`` to segment(s) ``a-b`` (broadcasting)."""
    ab = b - a
    ap = p - a
    denom = np.sum(ab * ab, axis=-1)
    t = np.where(denom > 0, np.sum(ap * ab, axis=-1) / np.where(denom > 0, denom, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def _segments_intersect(p1, p2, q1, q2) -> np.ndarray:
    """Closed segment intersection test, broadcasting over leading axes."""
    d1 = _cross(q2 - q1, p1 - q1)
    d2 = _cross(q2 - q1, p2 - q1)
    d3 = _cross(p2 - p1, q1 - p1)
    d4 = _cross(p2 - p1, q2 - p1)
    proper = (d1 * d2 < 0) & (d3 * d4 < 0)
    return proper


def segment_segment_distance(p1, p2, q1, q2) -> np.ndarray:
    dists = np.minimum.reduce([
        point_segment_distance(p1, q1, q2),
        point_segment_distance(p2, q1, q2),
        point_segment_distance(q1, p1, p2),
        point_segment_distance(q2, p1, p2),
    ])
    return np.where(_segments_intersect(p1, p2, q1, q2), 0.0, dists)


def points_in_convex_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Closed containment test for a counter-clockwise convex polygon."""
    inside = np.ones(points.shape[:-1], dtype=bool)
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        inside &= _cross(b - a, points - a) >= -1e-12
    return inside


# --------------------------------------------------------------------------
# footprints


def footprint_polygon(pose: Pose2D, fp: FootprintRect) -> np.ndarray:
    """Corners of the footprint rectangle, counter-clockwise, shape (4, 2)."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    cx = pose.x + fp.ref_offset * c
    cy = pose.y + fp.ref_offset * s
    hl, hw = fp.length / 2, fp.width / 2
    local = np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def footprint_polygons(poses: np.ndarray, fp: FootprintRect) -> np.ndarray:
    """Vectorized :func:`footprint_polygon` for an (N, 3) pose array -> (N, 4, 2)."""
    poses = np.asarray(poses, float).reshape(-1, 3)
    c, s = np.cos(poses[:, 2]), np.sin(poses[:, 2])
    cx = poses[:, 0] + fp.ref_offset * c
    cy = poses[:, 1] + fp.ref_offset * s
    hl, hw = fp.length / 2, fp.width / 2
    local = np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])
    x = cx[:, None] + local[None, :, 0] * c[:, None] - local[None, :, 1] * s[:, None]
    y = cy[:, None] + local[None, :, 0] * s[:, None] + local[None, :, 1] * c[:, None]
    return np.stack([x, y], axis=-1)


def polygon_capsule_distance(poly: np.ndarray, caps: Capsules) -> np.ndarray:
    """Distance between a convex polygon and each capsule *core* (0 on overlap)."""
    if len(caps) == 0:
        return np.zeros(0)
    n = len(poly)
    e0 = poly[:, None, :]
    e1 = np.roll(poly, -1, axis=0)[:, None, :]
    a = caps.a[None, :, :]
    b = caps.b[None, :, :]
    d = segment_segment_distance(e0, e1, a, b).min(axis=0)
    inside = points_in_convex_polygon(caps.a, poly) | points_in_convex_polygon(caps.b, poly)
    return np.where(inside, 0.0, d)


def rect_gaps_many(poses: np.ndarray, fp: FootprintRect, caps: Capsules) -> np.ndarray:
    """Gap between the footprint at each of ``poses`` (N, 3) and each capsule -> (N, M).

    Works in the rectangle frame: slab clipping decides core/rectangle overlap,
    otherwise the distance is the smaller of endpoint-to-box and corner-to-core.
    Negative values are a lower bound on penetration depth (``-radius`` for an
    overlapping core, deeper for a point core inside the box).
    """
    poses = np.asarray(poses, float).reshape(-1, 3)
    c = np.cos(poses[:, 2])[:, None]
    s = np.sin(poses[:, 2])[:, None]
    cx = poses[:, 0][:, None] + fp.ref_offset * c
    cy = poses[:, 1][:, None] + fp.ref_offset * s
    hl, hw = fp.length / 2, fp.width / 2
    ax0, ay0 = caps.a[:, 0][None] - cx, caps.a[:, 1][None] - cy
    bx0, by0 = caps.b[:, 0][None] - cx, caps.b[:, 1][None] - cy
    ax, ay = ax0 * c + ay0 * s, ay0 * c - ax0 * s
    bx, by = bx0 * c + by0 * s, by0 * c - bx0 * s

    da = np.hypot(np.maximum(np.abs(ax) - hl, 0.0), np.maximum(np.abs(ay) - hw, 0.0))
    db = np.hypot(np.maximum(np.abs(bx) - hl, 0.0), np.maximum(np.abs(by) - hw, 0.0))
    dist = np.minimum(da, db)

    # Liang-Barsky clip of each core against the box
    dx, dy = bx - ax, by - ay
    t0 = np.zeros_like(ax)
    t1 = np.ones_like(ax)
    ok = np.ones(ax.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for p0, d, h in ((ax, dx, hl), (ay, dy, hw)):
            flat = d == 0
            ok &= ~(flat & (np.abs(p0) > h))
            ta = (-h - p0) / d
            tb = (h - p0) / d
            t0 = np.maximum(t0, np.where(flat, -np.inf, np.minimum(ta, tb)))
            t1 = np.minimum(t1, np.where(flat, np.inf, np.maximum(ta, tb)))
    hit = ok & (t0 <= t1)

    # box corners against the cores
    den = dx * dx + dy * dy
    safe = np.where(den > 0, den, 1.0)
    for qx, qy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        t = np.clip(((qx - ax) * dx + (qy - ay) * dy) / safe, 0.0, 1.0)
        dist = np.minimum(dist, np.hypot(ax + t * dx - qx, ay + t * dy - qy))

    gap = np.where(hit, 0.0, dist) - caps.r[None]
    point_core = (den == 0) & hit
    if np.any(point_core):
        depth = np.minimum(hl - np.abs(ax), hw - np.abs(ay))
        gap = np.where(point_core, -(caps.r[None] + depth), gap)
    return gap


def rect_capsule_gaps(pose: Pose2D, fp: FootprintRect, caps: Capsules) -> np.ndarray:
    """Gap between the footprint and each capsule surface (negative on overlap)."""
    return rect_gaps_many(np.array([[pose.x, pose.y, pose.theta]]), fp, caps)[0]


def footprint_clearance(pose: Pose2D, fp: FootprintRect, obstacles) -> float:
    """Smallest gap between the footprint and any obstacle surface.

    Negative values are a lower bound on penetration depth. ``inf`` when there
    are no obstacles.
    """
    caps = as_capsules(obstacles)
    if len(caps) == 0:
        return math.inf
    return float(rect_capsule_gaps(pose, fp, caps).min())


def footprint_collides(pose: Pose2D, fp: FootprintRect, obstacles) -> bool:
    """True iff the footprint touches or overlaps an obstacle (contact counts)."""
    caps = as_capsules(obstacles)
    if len(caps) == 0:
        return False
    caps = caps.near((pose.x, pose.y), fp.circumradius)
    if len(caps) == 0:
        return False
    return bool(np.any(rect_capsule_gaps(pose, fp, caps) <= 0.0))


# --------------------------------------------------------------------------
# ray casting


def raycast_many(origin: Sequence[float], angles: np.ndarray, obstacles, d_max: float) -> np.ndarray:
    """Distance along each ray to the nearest obstacle surface, clipped at ``d_max``.

    Rays starting inside an obstacle return 0.
    """
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    angles = np.atleast_1d(np.asarray(angles, float))
    out = np.full(angles.shape, float(d_max))
    caps = as_capsules(obstacles)
    if len(caps) == 0:
        return out
    o = np.asarray(origin, float)
    caps = caps.near(o, d_max)
    if len(caps) == 0:
        return out
    if np.any(point_segment_distance(o, caps.a, caps.b) <= caps.r):
        return np.zeros(angles.shape)

    u = np.stack([np.cos(angles), np.sin(angles)], axis=-1)  # (R, 2)

    # end caps
    centers = np.concatenate([caps.a, caps.b])
    radii = np.concatenate([caps.r, caps.r])
    oc = centers - o
    proj = u @ oc.T  # (R, 2N)
    perp2 = np.sum(oc * oc, axis=1)[None, :] - proj ** 2
    disc = radii[None, :] ** 2 - perp2
    with np.errstate(invalid="ignore"):
        t_circ = proj - np.sqrt(disc)
    t_circ = np.where((disc >= 0) & (t_circ >= 0), t_circ, np.inf)
    best = t_circ.min(axis=1)

    # straight flanks of non-degenerate capsules
    ab = caps.b - caps.a
    length = np.linalg.norm(ab, axis=1)
    seg = length > 0
    if np.any(seg):
        ab_s = ab[seg]
        nrm = np.stack([-ab_s[:, 1], ab_s[:, 0]], axis=1) / length[seg][:, None]
        for sign in (1.0, -1.0):
            p = caps.a[seg] + sign * caps.r[seg][:, None] * nrm
            po = p - o
            denom = u[:, 0:1] * ab_s[None, :, 1] - u[:, 1:2] * ab_s[None, :, 0]
            safe = np.where(np.abs(denom) > 1e-15, denom, 1.0)
            t = (po[None, :, 0] * ab_s[None, :, 1] - po[None, :, 1] * ab_s[None, :, 0]) / safe
            w = (po[None, :, 0] * u[:, 1:2] - po[None, :, 1] * u[:, 0:1]) / safe
            ok = (np.abs(denom) > 1e-15) & (t >= 0) & (w >= 0) & (w <= 1)
            best = np.minimum(best, np.where(ok, t, np.inf).min(axis=1))
    return np.minimum(out, best)


def raycast(origin: Sequence[float], angle: float, obstacles, d_max: float) -> float:
    return float(raycast_many(origin, np.array([angle]), obstacles, d_max)[0])


# --------------------------------------------------------------------------
# occupancy grids


@dataclass
class OccupancyGrid:
    """Binary raster. ``cells[row, col]``; row indexes y, col indexes x.

    ``origin`` is the world position of the lower-left corner of cell (0, 0).
    Queries outside the raster report occupied.
    """

    origin: tuple[float, float]
    resolution: float
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.cells = np.asarray(self.cells, dtype=bool)
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @classmethod
    def empty(cls, xmin: float, ymin: float, xmax: float, ymax: float, resolution: float) -> "OccupancyGrid":
        w = max(1, int(math.ceil((xmax - xmin) / resolution)))
        h = max(1, int(math.ceil((ymax - ymin) / resolution)))
        return cls((xmin, ymin), resolution, np.zeros((h, w), dtype=bool))

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return (x0, y0, x0 + self.width * self.resolution, y0 + self.height * self.resolution)

    def cell_of(self, xy) -> tuple[np.ndarray, np.ndarray]:
        xy = np.asarray(xy, float)
        col = np.floor((xy[..., 0] - self.origin[0]) / self.resolution).astype(int)
        row = np.floor((xy[..., 1] - self.origin[1]) / self.resolution).astype(int)
        return row, col

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution
        return xs, ys

    def occupied_at(self, xy) -> np.ndarray:
        row, col = self.cell_of(xy)
        inside = (row >= 0) & (row < self.height) & (col >= 0) & (col < self.width)
        out = np.ones(np.shape(row), dtype=bool)
        out[inside] = self.cells[row[inside], col[inside]]
        return out

    def is_occupied(self, x: float, y: float) -> bool:
        return bool(self.occupied_at(np.array([x, y])))

    def polygon_mask(self, poly: np.ndarray) -> tuple[slice, slice, np.ndarray]:
        """Cells whose centres lie in a convex polygon, as (row slice, col slice, mask)."""
        res = self.resolution
        lo = poly.min(axis=0)
        hi = poly.max(axis=0)
        c0 = max(0, int(math.floor((lo[0] - self.origin[0]) / res - 0.5)))
        c1 = min(self.width, int(math.ceil((hi[0] - self.origin[0]) / res + 0.5)))
        r0 = max(0, int(math.floor((lo[1] - self.origin[1]) / res - 0.5)))
        r1 = min(self.height, int(math.ceil((hi[1] - self.origin[1]) / res + 0.5)))
        if c1 <= c0 or r1 <= r0:
            return slice(0, 0), slice(0, 0), np.zeros((0, 0), dtype=bool)
        xs = self.origin[0] + (np.arange(c0, c1) + 0.5) * res
        ys = self.origin[1] + (np.arange(r0, r1) + 0.5) * res
        gx, gy = np.meshgrid(xs, ys)
        pts = np.stack([gx, gy], axis=-1)
        return slice(r0, r1), slice(c0, c1), points_in_convex_polygon(pts, poly)

    def fill_polygon(self, poly: np.ndarray) -> None:
        rs, cs, mask = self.polygon_mask(poly)
        self.cells[rs, cs] |= mask

    def polygon_hits(self, poly: np.ndarray) -> bool:
        """True if any occupied cell centre lies inside ``poly`` or the polygon leaves the raster."""
        x0, y0, x1, y1 = self.extent
        if poly[:, 0].min() < x0 or poly[:, 1].min() < y0 or poly[:, 0].max() > x1 or poly[:, 1].max() > y1:
            return True
        rs, cs, mask = self.polygon_mask(poly)
        return bool(np.any(self.cells[rs, cs] & mask))

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.origin, self.resolution, self.cells.copy())


def sweep_union(poses: Sequence[Pose2D], fp: FootprintRect, resolution: float, margin_cells: int = 2) -> OccupancyGrid:
    """Rasterized union of the footprint placed at every pose.

    A cell is occupied when its centre lies inside at least one footprint. The
    raster covers every footprint with ``margin_cells`` (>= 1) free cells around.
    """
    if len(poses) == 0:
        raise ValueError("sweep_union needs at least one pose")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    arr = np.array([[p.x, p.y, p.theta] for p in poses])
    polys = footprint_polygons(arr, fp)
    lo = polys.reshape(-1, 2).min(axis=0)
    hi = polys.reshape(-1, 2).max(axis=0)
    m = max(1, margin_cells) * resolution
    # snap the origin to the resolution lattice so equal pose sets give equal rasters
    x0 = math.floor((lo[0] - m) / resolution) * resolution
    y0 = math.floor((lo[1] - m) / resolution) * resolution
    grid = OccupancyGrid.empty(x0, y0, hi[0] + m, hi[1] + m, resolution)
    hl, hw = fp.length / 2 + 1e-12, fp.width / 2 + 1e-12
    c_all, s_all = np.cos(arr[:, 2]), np.sin(arr[:, 2])
    for poly, (px, py, _), c, s in zip(polys, arr, c_all, s_all):
        cx, cy = px + fp.ref_offset * c, py + fp.ref_offset * s
        c0 = max(0, int((poly[:, 0].min() - x0) / resolution - 0.5))
        c1 = min(grid.width, int(math.ceil((poly[:, 0].max() - x0) / resolution + 0.5)))
        r0 = max(0, int((poly[:, 1].min() - y0) / resolution - 0.5))
        r1 = min(grid.height, int(math.ceil((poly[:, 1].max() - y0) / resolution + 0.5)))
        dx = (x0 + (np.arange(c0, c1) + 0.5) * resolution - cx)[None, :]
        dy = (y0 + (np.arange(r0, r1) + 0.5) * resolution - cy)[:, None]
        inside = (np.abs(dx * c + dy * s) <= hl) & (np.abs(dy * c - dx * s) <= hw)
        grid.cells[r0:r1, c0:c1] |= inside
    return grid


def close_gaps(grid: OccupancyGrid, cells: int = 1) -> OccupancyGrid:
    """Morphological closing: dilate then erode by ``cells`` (8-neighbourhood)."""
    if cells <= 0:
        return grid.copy()
    pad = cells + 1
    padded = np.pad(grid.cells, pad)
    st = np.ones((3, 3), dtype=bool)
    closed = ndimage.binary_erosion(ndimage.binary_dilation(padded, st, iterations=cells), st, iterations=cells)
    return OccupancyGrid(grid.origin, grid.resolution, closed[pad:-pad, pad:-pad] | grid.cells)


def fill_holes(grid: OccupancyGrid) -> OccupancyGrid:
    return OccupancyGrid(grid.origin, grid.resolution, ndimage.binary_fill_holes(grid.cells))


# --------------------------------------------------------------------------
# boundary tracing and simplification

_RIGHT_TURN = {(1, 0): (0, -1), (0, -1): (-1, 0), (-1, 0): (0, 1), (0, 1): (1, 0)}


def _trace_cracks(occ: np.ndarray) -> list[list[tuple[int, int]]]:
    """Closed loops along occupied/free cell edges, occupied side on the left.

    Vertices are integer lattice corners ``(x, y)`` of the padded raster. At
    saddle corners the trace turns right, which keeps diagonally touching
    occupied cells in a single region (8-connectivity).
    """
    P = np.pad(occ, 1)
    out: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def add(x0, y0, x1, y1):
        out.setdefault((x0, y0), []).append((x1 - x0, y1 - y0))

    # horizontal edges at height y between rows y-1 (below) and y (above)
    below, above = P[:-1, :], P[1:, :]
    ys, xs = np.nonzero(above & ~below)
    for y, x in zip(ys + 1, xs):
        add(x, y, x + 1, y)
    ys, xs = np.nonzero(below & ~above)
    for y, x in zip(ys + 1, xs):
        add(x + 1, y, x, y)
    # vertical edges at x between cols x-1 (left) and x (right)
    left, right = P[:, :-1], P[:, 1:]
    ys, xs = np.nonzero(right & ~left)
    for y, x in zip(ys, xs + 1):
        add(x, y + 1, x, y)
    ys, xs = np.nonzero(left & ~right)
    for y, x in zip(ys, xs + 1):
        add(x, y, x, y + 1)

    saddles = {v for v, opts in out.items() if len(opts) > 1}
    starts = sorted(v for v in out if v not in saddles) + sorted(saddles)
    loops = []
    for start in starts:
        while out.get(start):
            loop = [start]
            d = out[start].pop()
            v = (start[0] + d[0], start[1] + d[1])
            while v != start:
                loop.append(v)
                options = out[v]
                if len(options) == 1:
                    d = options.pop()
                else:
                    want = _RIGHT_TURN[d]
                    d = want if want in options else options[0]
                    options.remove(d)
                v = (v[0] + d[0], v[1] + d[1])
            loops.append(loop)
    return loops


def _drop_collinear(ring: np.ndarray) -> np.ndarray:
    if len(ring) < 4:
        return ring
    prev = np.roll(ring, 1, axis=0)
    nxt = np.roll(ring, -1, axis=0)
    keep = np.abs(_cross(ring - prev, nxt - ring)) > 1e-12
    return ring[keep] if keep.sum() >= 3 else ring


def douglas_peucker(points: np.ndarray, tol: float) -> np.ndarray:
    """Open-polyline Douglas-Peucker; endpoints are always kept."""
    n = len(points)
    if n < 3:
        return points.copy()
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        d = point_segment_distance(points[i + 1:j], points[i], points[j])
        k = int(np.argmax(d))
        if d[k] > tol:
            m = i + 1 + k
            keep[m] = True
            stack.append((i, m))
            stack.append((m, j))
    return points[keep]


def simplify_ring(ring: np.ndarray, tol: float) -> np.ndarray:
    """Douglas-Peucker on a closed ring; never drops below three vertices."""
    if len(ring) <= 3:
        return ring
    far = int(np.argmax(np.linalg.norm(ring - ring[0], axis=1)))
    first = douglas_peucker(ring[: far + 1], tol)
    second = douglas_peucker(np.vstack([ring[far:], ring[:1]]), tol)
    out = np.vstack([first, second[1:-1]])
    if len(out) < 3:
        return ring
    return out


def signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def extract_boundary(grid: OccupancyGrid, simplify: bool = True) -> list[np.ndarray]:
    """Closed polylines separating occupied from free cells.

    Loops are returned as (k, 2) vertex arrays without the repeated first
    vertex. Outer boundaries run counter-clockwise, hole boundaries clockwise.
    Simplification moves no point by more than one cell and keeps every loop.
    """
    occ = grid.cells
    if not occ.any() or occ.all():
        raise ValueError("boundary extraction needs a grid with both free and occupied cells")
    res = grid.resolution
    loops = []
    for raw in _trace_cracks(occ):
        ring = np.array(raw, dtype=float)
        ring[:, 0] = grid.origin[0] + (ring[:, 0] - 1) * res
        ring[:, 1] = grid.origin[1] + (ring[:, 1] - 1) * res
        ring = _drop_collinear(ring)
        if simplify:
            ring = simplify_ring(ring, res)
        loops.append(ring)
    return loops


def count_regions(grid: OccupancyGrid) -> int:
    """Occupied 8-connected components plus enclosed 4-connected free holes."""
    occ = grid.cells
    _, n_occ = ndimage.label(occ, structure=np.ones((3, 3), dtype=bool))
    _, n_free = ndimage.label(~np.pad(occ, 1))
    return n_occ + n_free - 1


def polyline_length(points: np.ndarray, closed: bool = False) -> float:
    pts = np.vstack([points, points[:1]]) if closed else points
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def rasterize_obstacles(obstacles, grid: OccupancyGrid, pad: float = 0.0) -> OccupancyGrid:
    """Mark every cell that an obstacle (dilated by ``pad``) may touch.

    Conservative: a cell counts as occupied when its centre is within
    ``radius + pad + half cell diagonal`` of the obstacle core.
    """
    caps = as_capsules(obstacles)
    out = grid.copy()
    res = grid.resolution
    half_diag = res * math.sqrt(0.5)
    for a, b, r in zip(caps.a, caps.b, caps.r):
        reach = r + pad + half_diag
        lo = np.minimum(a, b) - reach
        hi = np.maximum(a, b) + reach
        c0 = max(0, int(math.floor((lo[0] - grid.origin[0]) / res)))
        c1 = min(grid.width, int(math.ceil((hi[0] - grid.origin[0]) / res)) + 1)
        r0 = max(0, int(math.floor((lo[1] - grid.origin[1]) / res)))
        r1 = min(grid.height, int(math.ceil((hi[1] - grid.origin[1]) / res)) + 1)
        if c1 <= c0 or r1 <= r0:
            continue
        xs = grid.origin[0] + (np.arange(c0, c1) + 0.5) * res
        ys = grid.origin[1] + (np.arange(r0, r1) + 0.5) * res
        gx, gy = np.meshgrid(xs, ys)
        d = point_segment_distance(np.stack([gx, gy], axis=-1), a, b)
        out.cells[r0:r1, c0:c1] |= d <= reach
    return out
