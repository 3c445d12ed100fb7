"""Per-cell coverage control along a GVG edge.

Each robot owns the stretch of tube between the arc-length midpoints to its
neighbors.  The control input is the exact (fixed-partition) negative cost
gradient: a tangential pull toward the density centroid along the edge and a
normal pull toward the cross-tube centroid.  All integrals share one
composite-trapezoid lattice per sub-region so the controller matches finite
differences of the cost to quadrature precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import EmptyCell
from .gvg import GvgEdge, project_to_edge, trapz, tube_quadrature_nodes


@dataclass
class RobotState:
    id: int
    cell_id: int
    position: np.ndarray
    s: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)


@dataclass
class CellPartition:
    """Robots ordered by arc parameter and the sub-region boundaries."""
    order: list[int]            # indices into the robot list passed in
    boundaries: np.ndarray      # length K+1, increasing, 0 .. L

    def subregion(self, rank: int) -> tuple[float, float]:
        return float(self.boundaries[rank]), float(self.boundaries[rank + 1])


@dataclass
class Quadrature:
    n_s: int = 64
    n_r: int = 16

    def __post_init__(self):
        if self.n_s < 4 or self.n_r < 4:
            raise ValueError("need at least 4 quadrature nodes per direction")

    def refined(self, factor: int = 2) -> "Quadrature":
        return Quadrature(self.n_s * factor, self.n_r * factor)


def order_and_boundaries(robots: list[RobotState], edge: GvgEdge) -> CellPartition:
    """Sort robots by arc parameter; boundaries at midpoints between neighbors."""
    if not robots:
        raise EmptyCell("a partition needs at least one robot")
    order = sorted(range(len(robots)), key=lambda i: (robots[i].s, robots[i].id))
    s_sorted = [robots[i].s for i in order]
    bounds = np.empty(len(robots) + 1)
    bounds[0] = 0.0
    bounds[-1] = edge.length
    for j in range(len(robots) - 1):
        bounds[j + 1] = 0.5 * (s_sorted[j] + s_sorted[j + 1])
    return CellPartition(order=order, boundaries=bounds)


def _lattice(edge: GvgEdge, b0: float, b1: float, density, quad: Quadrature):
    """Shared quadrature lattice over one sub-region of the tube."""
    s_nodes = np.linspace(b0, b1, quad.n_s)
    pts, r, jac = tube_quadrature_nodes(edge, s_nodes, quad.n_r)
    phi = np.asarray(density(pts), dtype=float)
    return s_nodes, pts, r, jac, phi


class _CellLattice:
    """Quadrature lattices of every sub-region of a cell, built in one pass.

    Arrays are shaped (K, n_s, n_r, ...) so the per-step cost and controls for
    all robots in a cell share a handful of vectorized interpolations.
    """

    def __init__(self, edge: GvgEdge, boundaries: np.ndarray, density,
                 quad: Quadrature):
        b0 = boundaries[:-1]
        b1 = boundaries[1:]
        u = np.linspace(0.0, 1.0, quad.n_s)
        self.s = b0[:, None] + (b1 - b0)[:, None] * u[None, :]   # (K, n_s)
        flat = self.s.ravel()
        pts, r, jac = tube_quadrature_nodes(edge, flat, quad.n_r)
        k = len(b0)
        self.gamma = edge.point_at(flat).reshape(k, quad.n_s, 2)
        self.normal = edge.normal_at(flat).reshape(k, quad.n_s, 2)
        self.pts = pts.reshape(k, quad.n_s, quad.n_r, 2)
        self.r = r.reshape(k, quad.n_s, quad.n_r)
        self.jac = jac.reshape(k, quad.n_s, quad.n_r)
        self.phi = np.asarray(density(self.pts), dtype=float)
        self.phi_jac = self.phi * self.jac
        # projected density and its first r-moment per s node
        self.phi_hat = trapz(self.phi_jac, x=self.r, axis=2)     # (K, n_s)
        self.r_moment = trapz(self.r * self.phi_jac, x=self.r, axis=2)


def projected_density(edge: GvgEdge, density, s, n_r: int = 16):
    """Density projected across the tube: integral of phi * (1 - r kappa) in r."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    pts, r, jac = tube_quadrature_nodes(edge, s_arr, n_r)
    phi = np.asarray(density(pts), dtype=float)
    out = trapz(phi * jac, x=r, axis=1)
    return float(out[0]) if np.isscalar(s) or np.asarray(s).ndim == 0 else out


def cell_cost(robots: list[RobotState], edge: GvgEdge, density,
              quad: Quadrature = Quadrature(),
              partition: CellPartition | None = None) -> float:
    """Coverage cost of one cell: sum over robots of the squared-distance
    integral against the density over their own tube sub-region."""
    if partition is None:
        partition = order_and_boundaries(robots, edge)
    total = 0.0
    for rank, idx in enumerate(partition.order):
        b0, b1 = partition.subregion(rank)
        if b1 <= b0:
            continue
        s_nodes, pts, r, jac, phi = _lattice(edge, b0, b1, density, quad)
        d2 = np.sum((pts - robots[idx].position) ** 2, axis=2)
        cross = trapz(d2 * phi * jac, x=r, axis=1)
        total += float(trapz(cross, x=s_nodes))
    return total


def cost_decomposition(robots: list[RobotState], edge: GvgEdge, density,
                       quad: Quadrature = Quadrature(),
                       partition: CellPartition | None = None) -> tuple[float, float]:
    """Split the cell cost into its along-edge and cross-tube parts.

    The tangential part measures distances from the robot's projection point
    to the edge against the projected density; the normal part is the
    remainder, computed by its own integral on the same lattice so the two
    sum to cell_cost to roundoff.
    """
    if partition is None:
        partition = order_and_boundaries(robots, edge)
    h_tan = 0.0
    h_norm = 0.0
    for rank, idx in enumerate(partition.order):
        b0, b1 = partition.subregion(rank)
        if b1 <= b0:
            continue
        rob = robots[idx]
        s_nodes, pts, r, jac, phi = _lattice(edge, b0, b1, density, quad)
        gam = edge.point_at(s_nodes)
        proj = edge.point_at(rob.s)
        d2_tan = np.sum((gam - proj) ** 2, axis=1)
        phi_hat = trapz(phi * jac, x=r, axis=1)
        h_tan += float(trapz(d2_tan * phi_hat, x=s_nodes))
        d2_full = np.sum((pts - rob.position) ** 2, axis=2)
        diff = d2_full - d2_tan[:, None]
        h_norm += float(trapz(trapz(diff * phi * jac, x=r, axis=1), x=s_nodes))
    return h_tan, h_norm


def control_input(robot: RobotState, partition: CellPartition, rank: int,
                  robots: list[RobotState], edge: GvgEdge, density,
                  k_g: float, quad: Quadrature = Quadrature()) -> np.ndarray:
    """Gradient-descent control for one robot over its sub-region.

    Implements the two-term controller (tangential pull toward the projected
    centroid, normal pull toward the cross-tube centroid), scaled so the
    output equals -k_g times the exact cost gradient at fixed partition.
    """
    b0, b1 = partition.subregion(rank)
    if b1 <= b0:
        return np.zeros(2)
    s_nodes, pts, r, jac, phi = _lattice(edge, b0, b1, density, quad)
    gam = edge.point_at(s_nodes)
    proj = edge.point_at(robot.s)
    nor_j = edge.normal_at(robot.s)
    phi_hat = trapz(phi * jac, x=r, axis=1)                         # (n_s,)
    term1 = trapz((proj - gam) * phi_hat[:, None], x=s_nodes, axis=0)
    r_moment = trapz(r * phi * jac, x=r, axis=1)                    # (n_s,)
    nor = edge.normal_at(s_nodes)
    mass = trapz(phi_hat, x=s_nodes)
    term2 = (trapz(nor * r_moment[:, None], x=s_nodes, axis=0)
             - robot.delta * nor_j * mass)
    # d/dp of the squared distance carries a factor 2
    return -2.0 * k_g * (term1 - term2)


def subregion_centroids(edge: GvgEdge, b0: float, b1: float, density,
                        quad: Quadrature = Quadrature()
                        ) -> tuple[float, np.ndarray, float, float]:
    """Mass and centroids of one tube sub-region.

    Returns (m_tan, p_tan, p_norm, s_star): the density mass, the centroid of
    the projected density along the edge, the cross-tube centroid offset at
    the arc parameter s_star of that centroid.
    """
    s_nodes, pts, r, jac, phi = _lattice(edge, b0, b1, density, quad)
    gam = edge.point_at(s_nodes)
    phi_hat = trapz(phi * jac, x=r, axis=1)
    m_tan = float(trapz(phi_hat, x=s_nodes))
    if m_tan <= 1e-300:
        mid = 0.5 * (b0 + b1)
        return 0.0, edge.point_at(mid), 0.0, mid
    p_tan = trapz(gam * phi_hat[:, None], x=s_nodes, axis=0) / m_tan
    s_star, _ = project_to_edge(p_tan, edge, strict=False)
    pts_c, r_c, jac_c = _cross_section(edge, s_star, quad.n_r)
    phi_c = np.asarray(density(pts_c), dtype=float)
    m_cross = float(trapz(phi_c * jac_c, x=r_c))
    p_norm = 0.0 if m_cross <= 1e-300 else \
        float(trapz(r_c * phi_c * jac_c, x=r_c)) / m_cross
    return m_tan, p_tan, p_norm, float(s_star)


def centroid_control(robot: RobotState, partition: CellPartition, rank: int,
                     robots: list[RobotState], edge: GvgEdge, density,
                     k_g: float, quad: Quadrature = Quadrature()) -> np.ndarray:
    """Centroid form of the controller.

    Tangential term: sub-region mass times the offset from the projected
    density centroid.  Normal term: the same mass times the offset from the
    cross-tube centroid evaluated at the centroid's arc parameter.  Matches
    control_input once the tangential offset has converged; returns zero (hold
    position) when the sub-region carries no density.
    """
    b0, b1 = partition.subregion(rank)
    if b1 <= b0:
        return np.zeros(2)
    m_tan, p_tan, p_norm, _ = subregion_centroids(edge, b0, b1, density, quad)
    if m_tan <= 0.0:
        return np.zeros(2)
    proj = edge.point_at(robot.s)
    nor_j = edge.normal_at(robot.s)
    return -2.0 * k_g * (m_tan * (proj - p_tan)
                         + m_tan * (robot.delta - p_norm) * nor_j)


def _cross_section(edge: GvgEdge, s: float, n_r: int):
    s_arr = np.array([s])
    pts, r, jac = tube_quadrature_nodes(edge, s_arr, n_r)
    return pts[0], r[0], jac[0]


def cell_controls(robots: list[RobotState], edge: GvgEdge, density, k_g: float,
                  quad: Quadrature = Quadrature()) -> list[np.ndarray]:
    """Control inputs for every robot of a cell from one position snapshot."""
    controls, _ = cell_controls_and_cost(robots, edge, density, k_g, quad)
    return controls


def cell_controls_and_cost(robots: list[RobotState], edge: GvgEdge, density,
                           k_g: float, quad: Quadrature = Quadrature()
                           ) -> tuple[list[np.ndarray], float]:
    """Controls for every robot plus the cell cost from one lattice pass."""
    partition = order_and_boundaries(robots, edge)
    lat = _CellLattice(edge, partition.boundaries, density, quad)
    idxs = partition.order
    s_j = np.array([robots[i].s for i in idxs])
    delta_j = np.array([robots[i].delta for i in idxs])
    pos_j = np.array([robots[i].position for i in idxs])
    proj_j = edge.point_at(s_j)
    nor_j = edge.normal_at(s_j)

    term1 = trapz((proj_j[:, None, :] - lat.gamma) * lat.phi_hat[:, :, None],
                  x=lat.s[:, :, None], axis=1)
    mass = trapz(lat.phi_hat, x=lat.s, axis=1)
    term2 = (trapz(lat.normal * lat.r_moment[:, :, None],
                   x=lat.s[:, :, None], axis=1)
             - delta_j[:, None] * nor_j * mass[:, None])
    u = -2.0 * k_g * (term1 - term2)

    d2 = np.sum((lat.pts - pos_j[:, None, None, :]) ** 2, axis=3)
    cross = trapz(d2 * lat.phi_jac, x=lat.r, axis=2)
    cost = float(np.sum(trapz(cross, x=lat.s, axis=1)))

    degenerate = partition.boundaries[1:] <= partition.boundaries[:-1]
    controls: list[np.ndarray] = [np.zeros(2)] * len(robots)
    for rank, idx in enumerate(idxs):
        controls[idx] = np.zeros(2) if degenerate[rank] else u[rank]
    return controls, cost


def total_cost(graph, robots: list[RobotState], density,
               quad: Quadrature = Quadrature(),
               report_scale: float = 1e-3) -> float:
    """Scaled coverage cost summed over all cells."""
    total = 0.0
    for cell in graph.cells:
        members = [r for r in robots if r.cell_id == cell.id]
        if not members:
            continue
        _, cost = cell_controls_and_cost(members, graph.edges[cell.edge],
                                         density, 0.0, quad)
        total += cost
    return report_scale * total
