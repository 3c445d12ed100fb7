"""Generalized Voronoi graph extraction and tube-coordinate machinery.

The extraction pipeline samples nearest-obstacle labels on a regular grid,
root-finds equidistance points on label-change grid edges, links them into
polylines, refines junction nodes, and resamples each polyline into an
arc-length parametrized edge carrying Frenet frames, curvature and lateral
clearances.  Every cell of the decomposition is the tube around one edge.

Frame convention: normal = R @ tangent with R = [[0, 1], [-1, 0]] (the
right-hand normal), and curvature is signed so that the area element of the
tube map q(s, r) = gamma(s) + r v(s) is (1 - r kappa(s)) ds dr.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize

from .errors import (
    DisconnectedFreeSpace,
    FoldedTube,
    NonpositiveMass,
    OutOfRange,
    OutsideTube,
    ResolutionTooCoarse,
)
from .geometry import DensityField, World

log = logging.getLogger(__name__)

FOLD_EPS = 1e-6          # minimum admissible Jacobian value
PROJECTION_TOL = 1e-6    # lateral slack before OutsideTube fires
ROTATION = np.array([[0.0, 1.0], [-1.0, 0.0]])

trapz = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class GvgNode:
    id: int
    position: np.ndarray
    radius: float
    defining_obstacles: tuple[int, ...]
    closest_points: dict[int, np.ndarray]
    incident_edges: list[int] = field(default_factory=list)


class EdgeSample:
    """Read-only view of one sample of a GvgEdge."""

    __slots__ = ("s", "position", "tangent", "normal", "curvature",
                 "clearance", "eps_plus", "eps_minus")

    def __init__(self, edge: "GvgEdge", k: int):
        self.s = float(edge.s[k])
        self.position = edge.positions[k]
        self.tangent = edge.tangents[k]
        self.normal = edge.normals[k]
        self.curvature = float(edge.curvatures[k])
        self.clearance = float(edge.clearances[k])
        self.eps_plus = float(edge.eps_plus[k])
        self.eps_minus = float(edge.eps_minus[k])


class GvgEdge:
    """One GVG edge: an arc-length sampled equidistance curve with its tube."""

    def __init__(self, id, obstacle_pair, positions, tangents, normals,
                 curvatures, clearances, eps_plus, eps_minus,
                 endpoint_nodes=(None, None), closed=False):
        self.id = int(id)
        self.obstacle_pair = (int(obstacle_pair[0]), int(obstacle_pair[1]))
        self.positions = np.asarray(positions, dtype=float)
        self.tangents = np.asarray(tangents, dtype=float)
        self.normals = np.asarray(normals, dtype=float)
        self.curvatures = np.asarray(curvatures, dtype=float)
        self.clearances = np.asarray(clearances, dtype=float)
        self.eps_plus = np.asarray(eps_plus, dtype=float)
        self.eps_minus = np.asarray(eps_minus, dtype=float)
        self.endpoint_nodes = tuple(endpoint_nodes)
        self.closed = bool(closed)
        chords = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(chords)])
        self.length = float(self.s[-1])
        if len(self.positions) < 2:
            raise ValueError("edge needs at least two samples")
        if np.any(chords <= 0):
            raise ValueError("edge samples must be strictly advancing")

    @property
    def n_samples(self) -> int:
        return len(self.s)

    def sample(self, k: int) -> EdgeSample:
        return EdgeSample(self, k)

    @property
    def samples(self) -> list[EdgeSample]:
        return [EdgeSample(self, k) for k in range(self.n_samples)]

    # -- interpolation over arc length ----------------------------------------

    def _interp_vec(self, s, arr, normalize=False):
        s = np.asarray(s, dtype=float)
        out = np.stack([np.interp(s, self.s, arr[:, 0]),
                        np.interp(s, self.s, arr[:, 1])], axis=-1)
        if normalize:
            out = out / np.linalg.norm(out, axis=-1, keepdims=True)
        return out

    def point_at(self, s) -> np.ndarray:
        return self._interp_vec(s, self.positions)

    def tangent_at(self, s) -> np.ndarray:
        return self._interp_vec(s, self.tangents, normalize=True)

    def normal_at(self, s) -> np.ndarray:
        # rotation commutes with the lerp, so this stays R @ tangent_at(s)
        return self._interp_vec(s, self.normals, normalize=True)

    def curvature_at(self, s):
        return np.interp(s, self.s, self.curvatures)

    def eps_at(self, s) -> tuple[np.ndarray, np.ndarray]:
        return (np.interp(s, self.s, self.eps_plus),
                np.interp(s, self.s, self.eps_minus))

    def clearance_at(self, s):
        return np.interp(s, self.s, self.clearances)

    def r_bounds_at(self, s) -> tuple[np.ndarray, np.ndarray]:
        """Lateral integration range [lo, hi] at s, clipped to keep J > 0."""
        ep, em = self.eps_at(s)
        kap = self.curvature_at(s)
        lo, hi = -np.asarray(em, dtype=float), np.asarray(ep, dtype=float)
        lo, hi = np.atleast_1d(lo), np.atleast_1d(hi)
        kap = np.atleast_1d(kap)
        pos = kap > 1e-12
        neg = kap < -1e-12
        clipped_hi = np.minimum(hi[pos], (1.0 - FOLD_EPS) / kap[pos])
        clipped_lo = np.maximum(lo[neg], (1.0 - FOLD_EPS) / kap[neg])
        if np.any(clipped_hi < hi[pos]) or np.any(clipped_lo > lo[neg]):
            log.warning("edge %d: tube folds, lateral range clipped to keep the "
                        "Jacobian positive", self.id)
        hi[pos] = clipped_hi
        lo[neg] = clipped_lo
        return lo, hi


@dataclass
class GvgCell:
    id: int
    edge: int
    mass: float | None = None
    neighbor_cells: set[int] = field(default_factory=set)


@dataclass
class GvgGraph:
    nodes: list[GvgNode]
    edges: list[GvgEdge]
    cells: list[GvgCell]
    grid_resolution: float
    total_mass: float | None = None

    @property
    def n_cells(self) -> int:
        return len(self.cells)


# -- tube coordinate operations ------------------------------------------------


def frenet_point(edge: GvgEdge, s: float, r: float) -> np.ndarray:
    """Map tube coordinates (s, r) to the plane: gamma(s) + r v(s)."""
    if not (-1e-9 <= s <= edge.length + 1e-9):
        raise OutOfRange(f"s={s} outside [0, {edge.length}]")
    s = min(max(s, 0.0), edge.length)
    ep, em = edge.eps_at(s)
    if not (-float(em) - 1e-9 <= r <= float(ep) + 1e-9):
        raise OutOfRange(f"r={r} outside [-{float(em)}, {float(ep)}] at s={s}")
    return edge.point_at(s) + r * edge.normal_at(s)


def jacobian(edge: GvgEdge, s: float, r: float) -> float:
    """Area element 1 - r*kappa(s) of the tube map at (s, r)."""
    if not (-1e-9 <= s <= edge.length + 1e-9):
        raise OutOfRange(f"s={s} outside [0, {edge.length}]")
    value = 1.0 - r * float(edge.curvature_at(s))
    if value <= FOLD_EPS:
        raise FoldedTube(f"tube folds at s={s}, r={r}: J={value}")
    return value


def project_points(edge: GvgEdge, points, strict: bool = True,
                   tol: float = PROJECTION_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Project planar points onto the edge: arc parameters s and offsets r.

    Nearest-sample search, parabolic refinement, then a fixed-point polish of
    the orthogonality condition (q - gamma(s)) . tau(s) = 0 on the linearly
    interpolated curve.  With strict=True an offset beyond the local clearance
    (plus tol) raises OutsideTube.
    """
    q = np.atleast_2d(np.asarray(points, dtype=float))
    P = edge.positions
    n = len(P)
    # nearest sample, chunked to bound memory
    best_k = np.empty(len(q), dtype=int)
    for lo in range(0, len(q), 2048):
        hi = min(lo + 2048, len(q))
        d2 = np.sum((q[lo:hi, None, :] - P[None, :, :]) ** 2, axis=2)
        best_k[lo:hi] = np.argmin(d2, axis=1)

    # candidate segments flanking the best sample (wrapping for closed loops)
    def seg_candidates(k):
        cands = []
        if k > 0:
            cands.append(k - 1)
        elif edge.closed:
            cands.append(n - 2)
        if k < n - 1:
            cands.append(k)
        elif edge.closed:
            cands.append(0)
        return cands

    s_out = np.empty(len(q))
    for m, (qm, k) in enumerate(zip(q, best_k)):
        best = (np.inf, float(edge.s[k]))
        for seg in seg_candidates(int(k)):
            a, b = P[seg], P[seg + 1]
            ab = b - a
            L2 = float(ab @ ab)
            t = float(np.clip((qm - a) @ ab / L2, 0.0, 1.0))
            p = a + t * ab
            d2 = float((qm - p) @ (qm - p))
            if d2 < best[0]:
                best = (d2, float(edge.s[seg] + t * np.sqrt(L2)))
        s_out[m] = best[1]

    # Newton polish of the orthogonality condition h(s) = (q - gamma(s)).tau(s)
    # with a numerically measured slope (the interpolated frame can rotate much
    # faster than the smoothed curvature suggests near bisector kinks)
    def _ortho(sv):
        gam = edge.point_at(sv)
        tau = edge.tangent_at(sv)
        return np.einsum("ij,ij->i", q - gam, tau)

    delta = 1e-7 * max(edge.length, 1.0)
    for _ in range(12):
        h = _ortho(s_out)
        if np.max(np.abs(h)) < 1e-12:
            break
        slope = (_ortho(np.minimum(s_out + delta, edge.length)) - h) / delta
        slope = np.where(np.abs(slope) < 0.05, np.copysign(0.05, slope), slope)
        s_out = np.clip(s_out - h / slope, 0.0, edge.length)
    gam = edge.point_at(s_out)
    nor = edge.normal_at(s_out)
    r_out = np.einsum("ij,ij->i", q - gam, nor)

    if strict:
        ep, em = edge.eps_at(s_out)
        beyond = np.maximum(r_out - ep, -em - r_out)
        if np.any(beyond > tol):
            worst = int(np.argmax(beyond))
            raise OutsideTube(
                f"point {q[worst]} lies {beyond[worst]:.3g} beyond the tube "
                f"of edge {edge.id}")
    return s_out, r_out


def project_to_edge(q, edge: GvgEdge, strict: bool = True) -> tuple[float, float]:
    s, r = project_points(edge, q, strict=strict)
    return float(s[0]), float(r[0])


# -- tube quadrature -------------------------------------------------------------


def tube_quadrature_nodes(edge: GvgEdge, s_nodes: np.ndarray, n_r: int):
    """Quadrature lattice over the tube above the given arc parameters.

    Returns (points (n_s, n_r, 2), r (n_s, n_r), jac (n_s, n_r)) with the
    lateral range clipped so the Jacobian stays positive.
    """
    s_nodes = np.asarray(s_nodes, dtype=float)
    lo, hi = edge.r_bounds_at(s_nodes)
    unit = np.linspace(0.0, 1.0, n_r)
    r = lo[:, None] + (hi - lo)[:, None] * unit[None, :]
    gam = edge.point_at(s_nodes)
    nor = edge.normal_at(s_nodes)
    kap = np.atleast_1d(edge.curvature_at(s_nodes))
    pts = gam[:, None, :] + r[:, :, None] * nor[:, None, :]
    jac = 1.0 - r * kap[:, None]
    return pts, r, jac


def cell_mass(edge: GvgEdge, field: DensityField, n_r: int = 33,
              s_nodes: np.ndarray | None = None) -> float:
    """Density integral over the edge's tube via composite trapezoid rule."""
    s_nodes = edge.s if s_nodes is None else np.asarray(s_nodes, dtype=float)
    pts, r, jac = tube_quadrature_nodes(edge, s_nodes, n_r)
    integrand = field(pts) * jac
    cross = trapz(integrand, x=r, axis=1)
    return float(trapz(cross, x=s_nodes))


def build_cells(graph: GvgGraph, world: World, field: DensityField,
                quad_points: int = 33) -> GvgGraph:
    """Fill cell masses by tube quadrature and the shared-node adjacency."""
    for cell in graph.cells:
        edge = graph.edges[cell.edge]
        mass = cell_mass(edge, field, n_r=quad_points)
        if mass <= 0.0:
            raise NonpositiveMass(f"cell {cell.id} has mass {mass}")
        cell.mass = mass
    for node in graph.nodes:
        for a in node.incident_edges:
            for b in node.incident_edges:
                if a != b:
                    graph.cells[a].neighbor_cells.add(b)
                    graph.cells[b].neighbor_cells.add(a)
    graph.total_mass = float(sum(c.mass for c in graph.cells))
    return graph


# -- extraction pipeline ----------------------------------------------------------


def extract_gvg(world: World, grid_resolution: float) -> GvgGraph:
    """Extract the GVG of a polygonal world on a grid of the given resolution."""
    if grid_resolution <= 0:
        raise ValueError("grid_resolution must be positive")
    ext = _Extractor(world, grid_resolution)
    return ext.run()


class _Extractor:
    def __init__(self, world: World, res: float):
        self.world = world
        self.res = res

    def run(self) -> GvgGraph:
        self._sample_labels()
        self._find_crossings()
        self._classify_cells()
        self._refine_nodes()
        self._link()
        chains = self._trace()
        edges, nodes = self._build_edges(chains)
        _cap_eps_across_edges(edges, self.res / 2.0)
        cells = [GvgCell(id=e.id, edge=e.id) for e in edges]
        graph = GvgGraph(nodes=nodes, edges=edges, cells=cells,
                         grid_resolution=self.res)
        self._check_resolution(graph)
        return graph

    # stage 1: nearest-obstacle labels on the grid ------------------------------

    def _sample_labels(self):
        x0, y0, x1, y1 = self.world.bounds
        res = self.res
        nx = int(np.ceil((x1 - x0) / res)) + 1
        ny = int(np.ceil((y1 - y0) / res)) + 1
        self.xs = x0 + np.arange(nx) * res
        self.ys = y0 + np.arange(ny) * res
        XX, YY = np.meshgrid(self.xs, self.ys, indexing="ij")
        pts = np.stack([XX.ravel(), YY.ravel()], axis=1)
        inside = self.world.contains_points(pts)
        labels = np.full(len(pts), -1, dtype=int)
        if np.any(inside):
            table = self.world.distance_table(pts[inside])
            lab = np.argmin(table, axis=1)
            lab[table.min(axis=1) < 1e-9] = -1  # free space is open
            labels[inside] = lab
        self.labels = labels.reshape(nx, ny)
        self.nx, self.ny = nx, ny
        self._check_connectivity()

    def _check_connectivity(self):
        free = self.labels >= 0
        structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
        comp, n_comp = ndimage.label(free, structure=structure)
        if n_comp <= 1:
            return
        sizes = ndimage.sum_labels(free, comp, index=np.arange(1, n_comp + 1))
        main = int(np.argmax(sizes)) + 1
        for c in range(1, n_comp + 1):
            if c == main:
                continue
            if sizes[c - 1] >= 4:
                raise DisconnectedFreeSpace(
                    "free space splits into multiple grid components")
            self.labels[comp == c] = -1  # boundary sliver, drop

    # stage 2: equidistance points on label-change grid edges -------------------

    def _find_crossings(self):
        lab = self.labels
        marked = []  # (key, point_a, point_b, label_a, label_b)
        ha = (lab[:-1, :] >= 0) & (lab[1:, :] >= 0) & (lab[:-1, :] != lab[1:, :])
        for i, j in zip(*np.nonzero(ha)):
            marked.append((("h", int(i), int(j)),
                           (self.xs[i], self.ys[j]), (self.xs[i + 1], self.ys[j]),
                           int(lab[i, j]), int(lab[i + 1, j])))
        va = (lab[:, :-1] >= 0) & (lab[:, 1:] >= 0) & (lab[:, :-1] != lab[:, 1:])
        for i, j in zip(*np.nonzero(va)):
            marked.append((("v", int(i), int(j)),
                           (self.xs[i], self.ys[j]), (self.xs[i], self.ys[j + 1]),
                           int(lab[i, j]), int(lab[i, j + 1])))

        self.cross_points = np.zeros((len(marked), 2))
        self.cross_pairs = [None] * len(marked)
        self.by_key = {}
        groups: dict[tuple[int, int], list[int]] = {}
        lo_pts, hi_pts = [], []
        for idx, (key, pa, pb, la, lb) in enumerate(marked):
            a, b = (la, lb) if la < lb else (lb, la)
            # orient so that g = d_a - d_b is <= 0 at lo and >= 0 at hi
            lo, hi = (pa, pb) if la == a else (pb, pa)
            lo_pts.append(lo)
            hi_pts.append(hi)
            self.cross_pairs[idx] = (a, b)
            self.by_key[key] = idx
            groups.setdefault((a, b), []).append(idx)

        for (a, b), idxs in groups.items():
            lo = np.array([lo_pts[i] for i in idxs], dtype=float)
            hi = np.array([hi_pts[i] for i in idxs], dtype=float)
            pa = self.world.polygon(a)
            pb = self.world.polygon(b)
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                g = pa.distances(mid) - pb.distances(mid)
                take_lo = g <= 0
                lo[take_lo] = mid[take_lo]
                hi[~take_lo] = mid[~take_lo]
                if np.max(np.linalg.norm(hi - lo, axis=1)) < 1e-7:
                    break
            self.cross_points[idxs] = 0.5 * (lo + hi)

    # stage 3: cell classification and node clustering ---------------------------

    def _cell_edges(self, i, j):
        return (("h", i, j), ("v", i + 1, j), ("h", i, j + 1), ("v", i, j))

    def _classify_cells(self):
        lab = self.labels
        self.node_cells = []
        self.plain_cells = []
        for i in range(self.nx - 1):
            for j in range(self.ny - 1):
                keys = self._cell_edges(i, j)
                xing = [self.by_key[k] for k in keys if k in self.by_key]
                if not xing:
                    continue
                corners = [lab[i, j], lab[i + 1, j], lab[i + 1, j + 1], lab[i, j + 1]]
                distinct = {c for c in corners if c >= 0}
                if len(distinct) >= 3:
                    self.node_cells.append((i, j, xing))
                else:
                    self.plain_cells.append((i, j, keys, xing))
        # cluster node cells over 8-neighborhoods
        cell_ids = {(i, j): k for k, (i, j, _) in enumerate(self.node_cells)}
        self.cluster_of = {}
        cluster = 0
        for start in sorted(cell_ids):
            if start in self.cluster_of:
                continue
            stack = [start]
            self.cluster_of[start] = cluster
            while stack:
                ci, cj = stack.pop()
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        nb = (ci + di, cj + dj)
                        if nb in cell_ids and nb not in self.cluster_of:
                            self.cluster_of[nb] = cluster
                            stack.append(nb)
            cluster += 1
        self.n_clusters = cluster

    def _refine_nodes(self):
        members: dict[int, list[tuple[int, int, list[int]]]] = {}
        for (i, j, xing) in self.node_cells:
            members.setdefault(self.cluster_of[(i, j)], []).append((i, j, xing))
        self.cluster_pos = {}
        self.cluster_defining = {}
        for cid in range(self.n_clusters):
            cells = members[cid]
            centers = np.array([[self.xs[i] + self.res / 2, self.ys[j] + self.res / 2]
                                for i, j, _ in cells])
            defining = set()
            for _, _, xing in cells:
                for x in xing:
                    defining.update(self.cross_pairs[x])
            defining = tuple(sorted(defining))
            x0 = centers.mean(axis=0)
            polys = [self.world.polygon(k) for k in defining]

            def spread(p):
                d = np.array([poly.distances(p[None, :])[0] for poly in polys])
                return float(np.max(np.abs(d - d.mean())))

            res = optimize.minimize(spread, x0, method="Nelder-Mead",
                                    options={"xatol": 1e-10, "fatol": 1e-12,
                                             "maxiter": 600})
            pos = res.x
            if spread(pos) > 10 * self.res:
                log.warning("node cluster %d refined poorly (spread %.3g)",
                            cid, spread(pos))
            self.cluster_pos[cid] = pos
            self.cluster_defining[cid] = defining

    # stage 4: linking crossings into chains --------------------------------------

    def _link(self):
        self.links: dict[int, list[tuple]] = {i: [] for i in range(len(self.cross_points))}
        for (i, j, keys, xing) in self.plain_cells:
            by_pair: dict[tuple[int, int], list[int]] = {}
            for x in xing:
                by_pair.setdefault(self.cross_pairs[x], []).append(x)
            for pair, xs in by_pair.items():
                if len(xs) == 2:
                    self._add_link(xs[0], ("x", xs[1]))
                    self._add_link(xs[1], ("x", xs[0]))
                elif len(xs) == 4:
                    # saddle cell: resolve with the label at the cell center
                    center = np.array([self.xs[i] + self.res / 2,
                                       self.ys[j] + self.res / 2])
                    table = self.world.distance_table(center)[0]
                    center_label = int(np.argmin(table))
                    bottom, right, top, left = (self.by_key.get(k) for k in keys)
                    if center_label == self.labels[i, j]:
                        pairs = [(bottom, right), (top, left)]
                    else:
                        pairs = [(bottom, left), (right, top)]
                    for a, b in pairs:
                        if a is not None and b is not None:
                            self._add_link(a, ("x", b))
                            self._add_link(b, ("x", a))
                # odd counts leave open chain ends near boundary pinches
        for (i, j, xing) in self.node_cells:
            cid = self.cluster_of[(i, j)]
            for x in xing:
                self._add_link(x, ("node", cid))

    def _add_link(self, x: int, entry: tuple):
        if len(self.links[x]) >= 2:
            return  # over-linked crossing; keep the first two (grid noise)
        self.links[x].append(entry)

    # stage 5: tracing polylines ----------------------------------------------------

    def _trace(self):
        visited = set()
        chains = []  # (pair, [crossing ids], start_cluster, end_cluster, closed)

        def walk(first, prev_entry):
            seq = []
            cur = first
            while True:
                seq.append(cur)
                visited.add(cur)
                nxt = None
                for e in self.links[cur]:
                    if e != prev_entry:
                        nxt = e
                        break
                if nxt is None:
                    return seq, None, False
                if nxt[0] == "node":
                    return seq, nxt[1], False
                if nxt[1] in visited:
                    return seq, None, nxt[1] == seq[0] and len(seq) > 2
                prev_entry = ("x", cur)
                cur = nxt[1]

        # chains emanating from node clusters
        node_starts = sorted(
            (cid, x) for x, entries in self.links.items()
            for kind, cid in entries if kind == "node")
        for cid, x in node_starts:
            if x in visited:
                continue
            if self.links[x].count(("node", cid)) == 2:
                visited.add(x)  # fully interior to one cluster
                continue
            seq, end, _ = walk(x, ("node", cid))
            chains.append((self.cross_pairs[x], seq, cid, end, False))
        # open chains (dead ends)
        for x in range(len(self.cross_points)):
            if x in visited or len(self.links[x]) != 1:
                continue
            seq, end, _ = walk(x, None)
            chains.append((self.cross_pairs[x], seq, None, end, False))
        # remaining closed loops
        for x in range(len(self.cross_points)):
            if x in visited or not self.links[x]:
                continue
            seq, _, closed = walk(x, self.links[x][1] if len(self.links[x]) > 1 else None)
            if len(seq) >= 3:
                chains.append((self.cross_pairs[x], seq, None, None, True))
        return chains

    # stage 6: resampling, frames, clearances ----------------------------------------

    def _build_edges(self, chains):
        nodes = [GvgNode(id=cid, position=np.asarray(self.cluster_pos[cid]),
                         radius=0.0, defining_obstacles=self.cluster_defining[cid],
                         closest_points={})
                 for cid in range(self.n_clusters)]
        for node in nodes:
            table = self.world.distance_table(node.position)[0]
            node.radius = float(np.min(table))
            for k in node.defining_obstacles:
                node.closest_points[k] = self.world.distance_to_obstacle(
                    node.position, k)[1]

        edges = []
        for pair, seq, start_c, end_c, closed in chains:
            pts = [self.cross_points[x] for x in seq]
            if start_c is not None:
                pts.insert(0, self.cluster_pos[start_c])
            if end_c is not None:
                pts.append(self.cluster_pos[end_c])
            if closed:
                pts.append(pts[0])
            raw = np.asarray(pts, dtype=float)
            if len(raw) < 2:
                continue
            resampled = self._resample(raw, closed)
            projected = self._project_bisector(resampled, pair, closed,
                                               pin_first=start_c is not None,
                                               pin_last=end_c is not None)
            projected = self._prune_reversals(projected, closed)
            if len(projected) < (4 if closed else 2):
                continue
            eid = len(edges)
            edge = self._finalize_edge(eid, pair, projected, closed,
                                       (start_c, end_c), nodes)
            edges.append(edge)
        for edge in edges:
            for nid in edge.endpoint_nodes:
                if nid is not None and edge.id not in nodes[nid].incident_edges:
                    nodes[nid].incident_edges.append(edge.id)
        return edges, nodes

    def _resample(self, raw: np.ndarray, closed: bool) -> np.ndarray:
        chords = np.linalg.norm(np.diff(raw, axis=0), axis=1)
        keep = np.concatenate([[True], chords > 1e-12])
        raw = raw[keep]
        if len(raw) < 2:
            return raw
        chords = np.linalg.norm(np.diff(raw, axis=0), axis=1)
        t = np.concatenate([[0.0], np.cumsum(chords)])
        total = t[-1]
        spacing = self.res / 2.0
        n = max(int(np.ceil(total / spacing)) + 1, 5 if closed else 2)
        ts = np.linspace(0.0, total, n)
        return np.stack([np.interp(ts, t, raw[:, 0]),
                         np.interp(ts, t, raw[:, 1])], axis=1)

    @staticmethod
    def _prune_reversals(pts: np.ndarray, closed: bool) -> np.ndarray:
        """Drop interior points where the polyline doubles back on itself.

        Crossing chains can jitter inside node clusters; a reversal produces
        nonsense tangents and a self-overlapping tube.
        """
        changed = True
        while changed and len(pts) > (4 if closed else 2):
            fwd = np.diff(pts, axis=0)
            dots = np.einsum("ij,ij->i", fwd[:-1], fwd[1:])
            bad = np.flatnonzero(dots < 0.0) + 1
            if len(bad) == 0:
                changed = False
            else:
                keep = np.ones(len(pts), dtype=bool)
                keep[bad[::2]] = False  # remove alternate offenders, then rescan
                keep[0] = keep[-1] = True
                pts = pts[keep]
        return pts

    def _project_bisector(self, pts: np.ndarray, pair, closed: bool,
                          pin_first: bool, pin_last: bool) -> np.ndarray:
        """Newton-project samples onto the exact d_a = d_b bisector."""
        pa = self.world.polygon(pair[0])
        pb = self.world.polygon(pair[1])
        out = pts.copy()
        move = np.ones(len(out), dtype=bool)
        if pin_first and not closed:
            move[0] = False
        if pin_last and not closed:
            move[-1] = False
        if closed:
            move[-1] = False  # keep the wrap duplicate in lockstep with out[0]
        for _ in range(12):
            da, ca = pa.closest_points(out[move])
            db, cb = pb.closest_points(out[move])
            g = da - db
            if np.max(np.abs(g)) < 1e-10:
                break
            grad = (out[move] - ca) / da[:, None] - (out[move] - cb) / db[:, None]
            norm2 = np.einsum("ij,ij->i", grad, grad)
            norm2 = np.maximum(norm2, 1e-12)
            out[move] -= (g / norm2)[:, None] * grad
        if closed:
            out[-1] = out[0]
        return out

    def _finalize_edge(self, eid, pair, pts, closed, end_clusters, nodes):
        n = len(pts)
        tangents = np.zeros_like(pts)
        if closed:
            tangents[0] = tangents[-1] = pts[1] - pts[-2]
            tangents[1:-1] = pts[2:] - pts[:-2]
        else:
            tangents[0] = pts[1] - pts[0]
            tangents[-1] = pts[-1] - pts[-2]
            if n > 2:
                tangents[1:-1] = pts[2:] - pts[:-2]
        tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
        normals = tangents @ ROTATION.T

        curout = _three_point_curvature(pts, closed)
        curout = _moving_average(curout, 5, closed)

        clear = self.world.polygon(pair[0]).distances(pts)

        seg_a, seg_b = self.world._all_segments()
        trunc = []
        for cid in end_clusters:
            if cid is None:
                continue
            node_pos = self.cluster_pos[cid]
            for k in pair:
                cp = self.world.distance_to_obstacle(node_pos, k)[1]
                trunc.append((node_pos, cp))
        if trunc:
            ta = np.array([t[0] for t in trunc])
            tb = np.array([t[1] for t in trunc])
            seg_a = np.concatenate([seg_a, ta], axis=0)
            seg_b = np.concatenate([seg_b, tb], axis=0)
        eps_p = _batch_raycast(pts, normals, seg_a, seg_b)
        eps_m = _batch_raycast(pts, -normals, seg_a, seg_b)
        # the cell pinches shut at its nodes: rays cast from exactly the node
        # position slide past the truncation segments that emanate from it, so
        # cap the terminal samples by extrapolating the interior profile
        if len(pts) >= 3:
            if end_clusters[0] is not None:
                for eps in (eps_p, eps_m):
                    eps[0] = min(eps[0], max(2.0 * eps[1] - eps[2], 1e-6))
            if end_clusters[1] is not None:
                for eps in (eps_p, eps_m):
                    eps[-1] = min(eps[-1], max(2.0 * eps[-2] - eps[-3], 1e-6))
        s_local = np.concatenate(
            [[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        spacing = self.res / 2.0
        eps_p = _cap_eps_at_ridge(pts, s_local, normals, eps_p, +1.0, closed, spacing)
        eps_m = _cap_eps_at_ridge(pts, s_local, normals, eps_m, -1.0, closed, spacing)
        # the tube chart stops being invertible at the fold radius
        folds = curout > 1e-12
        eps_p[folds] = np.minimum(eps_p[folds], (1.0 - FOLD_EPS) / curout[folds])
        folds = curout < -1e-12
        eps_m[folds] = np.minimum(eps_m[folds], (1.0 - FOLD_EPS) / -curout[folds])

        end_nodes = tuple(end_clusters)
        return GvgEdge(eid, pair, pts, tangents, normals, curout, clear,
                       eps_p, eps_m, endpoint_nodes=end_nodes, closed=closed)

    def _check_resolution(self, graph: GvgGraph):
        clearances = [e.clearances.min() for e in graph.edges if e.n_samples]
        if clearances and min(clearances) < 1.5 * self.res:
            raise ResolutionTooCoarse(
                f"narrowest corridor half-width {min(clearances):.3g} < 1.5 x "
                f"grid resolution {self.res}; use a finer grid")


def _three_point_curvature(pts: np.ndarray, closed: bool) -> np.ndarray:
    """Signed curvature from circumscribed circles; positive when the center
    of curvature lies on the +normal side (so the area element is 1 - r k)."""
    n = len(pts)
    kap = np.zeros(n)
    if closed:
        prev = np.roll(pts[:-1], 1, axis=0)
        cur = pts[:-1]
        nxt = np.roll(pts[:-1], -1, axis=0)
        kap[:-1] = _circum_curvature(prev, cur, nxt)
        kap[-1] = kap[0]
    elif n >= 3:
        kap[1:-1] = _circum_curvature(pts[:-2], pts[1:-1], pts[2:])
        kap[0] = kap[1]
        kap[-1] = kap[-2]
    return kap


def _circum_curvature(a, b, c):
    u = b - a
    w = c - b
    cross = u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0]
    lu = np.linalg.norm(u, axis=1)
    lw = np.linalg.norm(w, axis=1)
    lv = np.linalg.norm(c - a, axis=1)
    denom = np.maximum(lu * lw * lv, 1e-300)
    # sign flipped: +normal is the clockwise rotation of the tangent
    return -2.0 * cross / denom


def _moving_average(arr: np.ndarray, window: int, closed: bool) -> np.ndarray:
    if len(arr) < 3:
        return arr
    kernel = np.ones(window) / window
    if closed:
        core = arr[:-1]
        padded = np.concatenate([core[-(window // 2):], core, core[:window // 2]])
        sm = np.convolve(padded, kernel, mode="valid")
        return np.concatenate([sm, sm[:1]])
    padded = np.concatenate([np.repeat(arr[0], window // 2), arr,
                             np.repeat(arr[-1], window // 2)])
    return np.convolve(padded, kernel, mode="valid")


def _cap_eps_at_ridge(pts, s, normals, eps, side, closed, spacing) -> np.ndarray:
    """Shrink lateral clearances so the tube never crosses its own medial ridge.

    A ray-cast clearance can overshoot past corner fans where points stop being
    closest to their own sample (they would project elsewhere on the edge,
    breaking the tube partition).  Bisect, per sample, the largest offset whose
    endpoint is still at least as close to its own sample as to any sample more
    than a few spacings away along the edge.
    """
    n = len(pts)
    if n < 8:
        return eps
    ds = np.abs(s[:, None] - s[None, :])
    if closed:
        ds = np.minimum(ds, s[-1] - ds)
    distant = ds > 3.0 * spacing
    if not distant.any():
        return eps

    def valid(r):
        p = pts + side * r[:, None] * normals
        d = np.sqrt(np.sum((p[:, None, :] - pts[None, :, :]) ** 2, axis=2))
        d[~distant] = np.inf
        return d.min(axis=1) >= r - 1e-9

    need = ~valid(eps)
    if not need.any():
        return eps
    out = eps.copy()
    lo = np.zeros(int(need.sum()))
    hi = eps[need].copy()
    sub_pts, sub_nor = pts[need], normals[need]
    sub_distant = distant[need]
    for _ in range(16):
        mid = 0.5 * (lo + hi)
        p = sub_pts + side * mid[:, None] * sub_nor
        d = np.sqrt(np.sum((p[:, None, :] - pts[None, :, :]) ** 2, axis=2))
        d[~sub_distant] = np.inf
        ok = d.min(axis=1) >= mid - 1e-9
        lo[ok] = mid[ok]
        hi[~ok] = mid[~ok]
    out[need] = np.maximum(lo, 1e-6)
    return out


def _cap_eps_across_edges(edges: list[GvgEdge], spacing: float) -> None:
    """Truncate every tube where its points stop being closest to its own edge.

    The cells tile the free space as the regions nearest to each edge; node
    lateral segments only approximate that boundary and fail when node
    circles overlap, so bisect the largest admissible offset against the
    sample cloud of all other edges.  Rebuilds each edge's clearance arrays
    in place.
    """
    if len(edges) < 2:
        return
    from scipy.spatial import cKDTree

    clouds = [e.positions for e in edges]
    for e in edges:
        others = np.concatenate([clouds[o.id] for o in edges if o.id != e.id])
        tree = cKDTree(others)
        for side, eps in ((+1.0, e.eps_plus), (-1.0, e.eps_minus)):
            p_full = e.positions + side * eps[:, None] * e.normals
            ok = tree.query(p_full)[0] >= eps - 1e-9
            need = ~ok
            if not need.any():
                continue
            lo = np.zeros(int(need.sum()))
            hi = eps[need].copy()
            base = e.positions[need]
            nor = e.normals[need]
            for _ in range(18):
                mid = 0.5 * (lo + hi)
                p = base + side * mid[:, None] * nor
                good = tree.query(p)[0] >= mid - 1e-9
                lo[good] = mid[good]
                hi[~good] = mid[~good]
            eps[need] = np.maximum(lo, 1e-6)


def _batch_raycast(origins, dirs, seg_a, seg_b, min_t: float = 1e-9) -> np.ndarray:
    ab = seg_b - seg_a
    denom = dirs[:, 0, None] * ab[None, :, 1] - dirs[:, 1, None] * ab[None, :, 0]
    ao = seg_a[None, :, :] - origins[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ao[:, :, 0] * ab[None, :, 1] - ao[:, :, 1] * ab[None, :, 0]) / denom
        u = (ao[:, :, 0] * dirs[:, 1, None] - ao[:, :, 1] * dirs[:, 0, None]) / denom
    valid = (np.abs(denom) > 1e-15) & (t > min_t) & (u >= -1e-12) & (u <= 1 + 1e-12)
    t = np.where(valid, t, np.inf)
    return t.min(axis=1)


# -- serialization ------------------------------------------------------------------


def graph_to_dict(graph: GvgGraph) -> dict:
    return {
        "grid_resolution": graph.grid_resolution,
        "total_mass": graph.total_mass,
        "nodes": [
            {
                "id": n.id,
                "position": n.position.tolist(),
                "radius": n.radius,
                "obstacles": list(n.defining_obstacles),
                "closest_points": {str(k): v.tolist() for k, v in n.closest_points.items()},
                "incident_edges": list(n.incident_edges),
            }
            for n in graph.nodes
        ],
        "edges": [
            {
                "id": e.id,
                "obstacle_pair": list(e.obstacle_pair),
                "closed": e.closed,
                "endpoint_nodes": [x if x is not None else None for x in e.endpoint_nodes],
                "length": e.length,
                "samples": {
                    "s": e.s.tolist(),
                    "position": e.positions.tolist(),
                    "tangent": e.tangents.tolist(),
                    "normal": e.normals.tolist(),
                    "curvature": e.curvatures.tolist(),
                    "clearance": e.clearances.tolist(),
                    "eps_plus": e.eps_plus.tolist(),
                    "eps_minus": e.eps_minus.tolist(),
                },
            }
            for e in graph.edges
        ],
        "cells": [
            {"id": c.id, "edge": c.edge, "mass": c.mass,
             "neighbors": sorted(c.neighbor_cells)}
            for c in graph.cells
        ],
    }


def graph_from_dict(data: dict) -> GvgGraph:
    nodes = [
        GvgNode(
            id=n["id"], position=np.asarray(n["position"]), radius=n["radius"],
            defining_obstacles=tuple(n["obstacles"]),
            closest_points={int(k): np.asarray(v) for k, v in n["closest_points"].items()},
            incident_edges=list(n["incident_edges"]),
        )
        for n in data["nodes"]
    ]
    edges = []
    for e in data["edges"]:
        s = e["samples"]
        edges.append(GvgEdge(
            e["id"], tuple(e["obstacle_pair"]), s["position"], s["tangent"],
            s["normal"], s["curvature"], s["clearance"], s["eps_plus"],
            s["eps_minus"],
            endpoint_nodes=tuple(x if x is not None else None
                                 for x in e["endpoint_nodes"]),
            closed=e["closed"]))
    cells = [GvgCell(id=c["id"], edge=c["edge"], mass=c["mass"],
                     neighbor_cells=set(c["neighbors"]))
             for c in data["cells"]]
    return GvgGraph(nodes=nodes, edges=edges, cells=cells,
                    grid_resolution=data["grid_resolution"],
                    total_mass=data.get("total_mass"))


def dump_graph(graph: GvgGraph, path) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_dict(graph), fh)


def load_graph(path) -> GvgGraph:
    with open(path) as fh:
        return graph_from_dict(json.load(fh))
