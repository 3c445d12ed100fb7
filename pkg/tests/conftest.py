"""Shared fixtures and synthetic-edge builders for the test suite."""

import json
from pathlib import Path

import numpy as np
import pytest

from gvgcover.geometry import World, paper_density
from gvgcover.gvg import GvgEdge, build_cells, extract_gvg

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def straight_edge(start, end, eps_plus=1.0, eps_minus=1.0, n=41) -> GvgEdge:
    """Synthetic straight edge with constant clearances; exact frames."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    t = np.linspace(0.0, 1.0, n)
    pts = start + t[:, None] * (end - start)
    tau = (end - start) / np.linalg.norm(end - start)
    tangents = np.tile(tau, (n, 1))
    normals = np.tile([tau[1], -tau[0]], (n, 1))
    zeros = np.zeros(n)
    ep = np.full(n, float(eps_plus))
    em = np.full(n, float(eps_minus))
    clear = np.maximum(ep, em)
    return GvgEdge(0, (0, 1), pts, tangents, normals, zeros, clear, ep, em)


def arc_edge(center, radius, ang0, ang1, eps_plus=0.5, eps_minus=0.5, n=801) -> GvgEdge:
    """Synthetic circular-arc edge with exact tangent, normal and curvature.

    Counterclockwise sweep (ang1 > ang0) gives an outward normal and
    curvature -1/radius; clockwise gives an inward normal and +1/radius.
    """
    center = np.asarray(center, dtype=float)
    th = np.linspace(ang0, ang1, n)
    pts = center + radius * np.stack([np.cos(th), np.sin(th)], axis=1)
    direction = 1.0 if ang1 > ang0 else -1.0
    tangents = direction * np.stack([-np.sin(th), np.cos(th)], axis=1)
    normals = np.stack([tangents[:, 1], -tangents[:, 0]], axis=1)
    kap = np.full(n, -direction / radius)
    ep = np.full(n, float(eps_plus))
    em = np.full(n, float(eps_minus))
    clear = np.maximum(ep, em)
    return GvgEdge(0, (0, 1), pts, tangents, normals, kap, clear, ep, em)


def wavy_edge(rng, length=16.0, n=400) -> GvgEdge:
    """Random smooth corridor: a rotated sine ribbon with safe clearances."""
    amp = rng.uniform(0.4, 1.8)
    freq = rng.uniform(0.15, 0.5)
    phase = rng.uniform(0, 2 * np.pi)
    t = np.linspace(0.0, length, n)
    base = np.stack([t, amp * np.sin(freq * t + phase)], axis=1)
    ang = rng.uniform(0, 2 * np.pi)
    rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    pts = base @ rot.T + rng.uniform(-5, 5, 2)
    tangents = np.zeros_like(pts)
    tangents[0] = pts[1] - pts[0]
    tangents[-1] = pts[-1] - pts[-2]
    tangents[1:-1] = pts[2:] - pts[:-2]
    tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
    normals = np.stack([tangents[:, 1], -tangents[:, 0]], axis=1)
    u = pts[1:-1] - pts[:-2]
    w = pts[2:] - pts[1:-1]
    cross = u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0]
    denom = (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1)
             * np.linalg.norm(pts[2:] - pts[:-2], axis=1))
    kap = np.zeros(n)
    kap[1:-1] = -2.0 * cross / np.maximum(denom, 1e-300)
    kap[0], kap[-1] = kap[1], kap[-2]
    kmax = max(float(np.abs(kap).max()), 1e-9)
    cap = 0.7 / kmax
    ep = np.full(n, min(float(rng.uniform(0.4, 1.2)), cap))
    em = np.full(n, min(float(rng.uniform(0.4, 1.2)), cap))
    clear = np.maximum(ep, em)
    return GvgEdge(0, (0, 1), pts, tangents, normals, kap, clear, ep, em)


@pytest.fixture(scope="session")
def loop_world():
    """Rectangle with one centered square obstacle: the GVG is a closed loop."""
    return World.from_vertex_lists(
        [(0, 0), (20, 0), (20, 14), (0, 14)],
        [[(8, 5), (12, 5), (12, 9), (8, 9)]],
    )


@pytest.fixture(scope="session")
def twin_world():
    """Two small squares in a large box: one bisector edge plus two loops."""
    return World.from_vertex_lists(
        [(0, 0), (20, 0), (20, 20), (0, 20)],
        [
            [(7.5, 9.5), (8.5, 9.5), (8.5, 10.5), (7.5, 10.5)],
            [(11.5, 9.5), (12.5, 9.5), (12.5, 10.5), (11.5, 10.5)],
        ],
    )


@pytest.fixture(scope="session")
def paper_world():
    spec = json.loads((SCENARIO_DIR / "paper.json").read_text())
    return World.from_vertex_lists(spec["world"]["outer"],
                                   spec["world"]["obstacles"])


@pytest.fixture(scope="session")
def paper_graph(paper_world):
    graph = extract_gvg(paper_world, 1.0)
    return build_cells(graph, paper_world, paper_density(), quad_points=33)


@pytest.fixture(scope="session")
def paper_cells(paper_graph):
    """Masses and adjacency of the nine-cell reference scenario."""
    masses = [c.mass for c in paper_graph.cells]
    adjacency = [sorted(c.neighbor_cells) for c in paper_graph.cells]
    return masses, adjacency
