"""Polygonal world model: exact obstacle distance queries, ray casting, densities.

The outer boundary is obstacle index 0; the holes are indices 1..M.  All
distance computations are exact segment/vertex computations on the polygon
boundaries, vectorized over query points.
"""

from __future__ import annotations

import numpy as np

from .errors import DegeneratePoint, OutsideFreeSpace

DEGENERATE_TOL = 1e-9
TIE_TOL = 1e-9


def _as_points(q) -> np.ndarray:
    """Coerce to an (N, 2) float array; remembers nothing about the input shape."""
    arr = np.asarray(q, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def _signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def _cross2(u, v) -> float:
    return float(u[0] * v[1] - u[1] * v[0])


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """Proper intersection test for open segments p1p2 and p3p4."""
    d1 = _cross2(p4 - p3, p1 - p3)
    d2 = _cross2(p4 - p3, p2 - p3)
    d3 = _cross2(p2 - p1, p3 - p1)
    d4 = _cross2(p2 - p1, p4 - p1)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


class Polygon:
    """Simple closed polygon, either the outer boundary or one obstacle.

    Orientation is normalized on construction: counterclockwise for the outer
    boundary, clockwise for obstacles.
    """

    def __init__(self, vertices, role: str = "obstacle"):
        if role not in ("outer-boundary", "obstacle"):
            raise ValueError(f"unknown polygon role {role!r}")
        verts = np.asarray(vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise ValueError("polygon needs at least 3 two-dimensional vertices")
        if not np.all(np.isfinite(verts)):
            raise ValueError("polygon vertices must be finite")
        area = _signed_area(verts)
        if abs(area) < 1e-12:
            raise ValueError("degenerate polygon (zero area)")
        want_ccw = role == "outer-boundary"
        if (area > 0) != want_ccw:
            verts = verts[::-1].copy()
        self.vertices = verts
        self.role = role
        self._check_simple()
        # Precomputed segment data for vectorized distance queries.
        self._a = verts
        self._b = np.roll(verts, -1, axis=0)
        self._ab = self._b - self._a
        self._ab_len2 = np.einsum("ij,ij->i", self._ab, self._ab)
        if np.any(self._ab_len2 < 1e-24):
            raise ValueError("polygon has a zero-length edge")

    def _check_simple(self):
        v = self.vertices
        n = len(v)
        a = v
        b = np.roll(v, -1, axis=0)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue  # adjacent segments share a vertex
                if _segments_intersect(a[i], b[i], a[j], b[j]):
                    raise ValueError("polygon boundary self-intersects")

    def closest_points(self, q) -> tuple[np.ndarray, np.ndarray]:
        """Distance and closest boundary point for each query point.

        Returns (dist[N], closest[N, 2]).
        """
        pts = _as_points(q)
        # t: projection parameter of each point onto each segment, clamped.
        diff = pts[:, None, :] - self._a[None, :, :]          # (N, S, 2)
        t = np.einsum("nsj,sj->ns", diff, self._ab) / self._ab_len2
        t = np.clip(t, 0.0, 1.0)
        proj = self._a[None, :, :] + t[:, :, None] * self._ab[None, :, :]
        d2 = np.sum((pts[:, None, :] - proj) ** 2, axis=2)
        k = np.argmin(d2, axis=1)
        rows = np.arange(len(pts))
        return np.sqrt(d2[rows, k]), proj[rows, k]

    def distances(self, q) -> np.ndarray:
        return self.closest_points(q)[0]

    def contains_points(self, q) -> np.ndarray:
        """Even-odd rule membership (boundary points are implementation-defined)."""
        pts = _as_points(q)
        x, y = pts[:, 0], pts[:, 1]
        ax, ay = self._a[:, 0], self._a[:, 1]
        bx, by = self._b[:, 0], self._b[:, 1]
        inside = np.zeros(len(pts), dtype=bool)
        for i in range(len(ax)):
            crosses = (ay[i] > y) != (by[i] > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = ax[i] + (y - ay[i]) * (bx[i] - ax[i]) / (by[i] - ay[i])
            inside ^= crosses & (x < xint)
        return inside

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return lo[0], lo[1], hi[0], hi[1]


class World:
    """Outer boundary plus obstacle holes; obstacle index 0 is the outer boundary."""

    def __init__(self, outer: Polygon, obstacles: list[Polygon]):
        if outer.role != "outer-boundary":
            raise ValueError("outer polygon must have role 'outer-boundary'")
        for obs in obstacles:
            if obs.role != "obstacle":
                raise ValueError("hole polygons must have role 'obstacle'")
        self.outer = outer
        self.obstacles = list(obstacles)
        self._validate_placement()

    @classmethod
    def from_vertex_lists(cls, outer_vertices, obstacle_vertex_lists) -> "World":
        outer = Polygon(outer_vertices, role="outer-boundary")
        holes = [Polygon(v, role="obstacle") for v in obstacle_vertex_lists]
        return cls(outer, holes)

    def _validate_placement(self):
        for i, obs in enumerate(self.obstacles):
            if not np.all(self.outer.contains_points(obs.vertices)):
                raise ValueError(f"obstacle {i + 1} is not strictly inside the outer boundary")
        for i in range(len(self.obstacles)):
            for j in range(i + 1, len(self.obstacles)):
                a, b = self.obstacles[i], self.obstacles[j]
                if np.any(a.contains_points(b.vertices)) or np.any(b.contains_points(a.vertices)):
                    raise ValueError(f"obstacles {i + 1} and {j + 1} overlap")
                da, _ = a.closest_points(b.vertices)
                if float(np.min(da)) <= 0.0:
                    raise ValueError(f"obstacles {i + 1} and {j + 1} touch")

    @property
    def n_obstacles(self) -> int:
        """M: number of holes (indices 1..M; index 0 is the outer boundary)."""
        return len(self.obstacles)

    def polygon(self, i: int) -> Polygon:
        if i == 0:
            return self.outer
        return self.obstacles[i - 1]

    def all_polygons(self) -> list[Polygon]:
        return [self.outer] + self.obstacles

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return self.outer.bounds

    # -- distance queries ----------------------------------------------------

    def distance_to_obstacle(self, q, i: int) -> tuple[float, np.ndarray]:
        """Minimum distance from q to the boundary of C_i, with the closest point."""
        d, cp = self.polygon(i).closest_points(q)
        return float(d[0]), cp[0]

    def distance_gradient(self, q, i: int) -> np.ndarray:
        """Unit vector from the closest point of C_i toward q."""
        d, cp = self.distance_to_obstacle(q, i)
        if d <= DEGENERATE_TOL:
            raise DegeneratePoint(f"point {q} lies on the boundary of obstacle {i}")
        return (np.asarray(q, dtype=float) - cp) / d

    def distance_table(self, q) -> np.ndarray:
        """Distances from each query point to every obstacle: (N, M+1)."""
        pts = _as_points(q)
        return np.stack([p.distances(pts) for p in self.all_polygons()], axis=1)

    def two_nearest_obstacles(self, q) -> tuple[tuple[int, float], tuple[int, float]]:
        """The two smallest obstacle distances, ties broken by lower index."""
        if not self.contains(q):
            raise OutsideFreeSpace(f"point {q} is not in the free space")
        d = self.distance_table(q)[0]
        i = int(np.flatnonzero(d <= d.min() + TIE_TOL)[0])
        rest = d.copy()
        rest[i] = np.inf
        j = int(np.flatnonzero(rest <= rest.min() + TIE_TOL)[0])
        return (i, float(d[i])), (j, float(d[j]))

    # -- membership ----------------------------------------------------------

    def contains_points(self, q) -> np.ndarray:
        pts = _as_points(q)
        inside = self.outer.contains_points(pts)
        for obs in self.obstacles:
            inside &= ~obs.contains_points(pts)
        return inside

    def contains(self, q) -> bool:
        return bool(self.contains_points(q)[0])

    # -- ray casting ----------------------------------------------------------

    def ray_cast(self, origin, direction, min_t: float = 1e-12) -> float:
        """Distance along the ray to the first boundary hit (outer or hole).

        The world is bounded, so a hit always exists for interior origins.
        """
        t = self.ray_cast_segments(origin, direction, self._all_segments(), min_t)
        if not np.isfinite(t):
            raise OutsideFreeSpace(f"ray from {origin} never hits a boundary")
        return float(t)

    def _all_segments(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.concatenate([p._a for p in self.all_polygons()], axis=0)
        b = np.concatenate([p._b for p in self.all_polygons()], axis=0)
        return a, b

    @staticmethod
    def ray_cast_segments(origin, direction, segments, min_t: float = 1e-12) -> float:
        """Smallest ray parameter t > min_t hitting any of the given segments."""
        o = np.asarray(origin, dtype=float)
        u = np.asarray(direction, dtype=float)
        a, b = segments
        ab = b - a
        # Solve o + t u = a + s ab for each segment.
        denom = u[0] * ab[:, 1] - u[1] * ab[:, 0]
        ao = a - o
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (ao[:, 0] * ab[:, 1] - ao[:, 1] * ab[:, 0]) / denom
            s = (ao[:, 0] * u[1] - ao[:, 1] * u[0]) / denom
        valid = (np.abs(denom) > 1e-15) & (t > min_t) & (s >= -1e-12) & (s <= 1.0 + 1e-12)
        if not np.any(valid):
            return np.inf
        return float(np.min(t[valid]))


class DensityField:
    """Non-negative importance weight over the region.

    Kinds:
      uniform           -- constant value
      quadratic-radial  -- scale * ((x - cx)^2 + (y - cy)^2)
      gaussian-mixture  -- sum_k w_k * exp(-|q - c_k|^2 / (2 sigma_k^2))
    """

    KINDS = ("uniform", "quadratic-radial", "gaussian-mixture")

    def __init__(self, kind: str, **params):
        if kind not in self.KINDS:
            raise ValueError(f"unknown density kind {kind!r}")
        self.kind = kind
        if kind == "uniform":
            self.value = float(params.get("value", 1.0))
            if self.value < 0:
                raise ValueError("uniform density must be non-negative")
        elif kind == "quadratic-radial":
            self.center = np.asarray(params["center"], dtype=float)
            self.scale = float(params["scale"])
            if self.scale < 0:
                raise ValueError("quadratic-radial scale must be non-negative")
        else:
            self.weights = np.asarray(params["weights"], dtype=float)
            self.centers = np.asarray(params["centers"], dtype=float)
            self.sigmas = np.asarray(params["sigmas"], dtype=float)
            if np.any(self.weights < 0) or np.any(self.sigmas <= 0):
                raise ValueError("gaussian-mixture needs non-negative weights and positive sigmas")
            if not (len(self.weights) == len(self.centers) == len(self.sigmas)):
                raise ValueError("gaussian-mixture parameter lengths differ")

    def upper_bound(self, bounds) -> float:
        """A bound on the density over the given bounding box (exact per kind)."""
        x0, y0, x1, y1 = bounds
        if self.kind == "uniform":
            return self.value
        if self.kind == "quadratic-radial":
            corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
            return float(np.max(self(corners)))
        return float(np.sum(self.weights))

    def __call__(self, q) -> np.ndarray:
        """Evaluate the density; supports (..., 2) arrays of points."""
        pts = np.asarray(q, dtype=float)
        scalar = pts.ndim == 1
        if scalar:
            pts = pts[None, :]
        flat = pts.reshape(-1, 2)
        if self.kind == "uniform":
            out = np.full(len(flat), self.value)
        elif self.kind == "quadratic-radial":
            d2 = np.sum((flat - self.center) ** 2, axis=1)
            out = self.scale * d2
        else:
            out = np.zeros(len(flat))
            for w, c, s in zip(self.weights, self.centers, self.sigmas):
                d2 = np.sum((flat - c) ** 2, axis=1)
                out += w * np.exp(-d2 / (2.0 * s * s))
        out = out.reshape(pts.shape[:-1])
        return float(out[0]) if scalar else out


def paper_density() -> DensityField:
    """The quadratic density used by the reference 372x247 scenario."""
    return DensityField("quadratic-radial", center=(186.0, 86.0), scale=1e-8)
