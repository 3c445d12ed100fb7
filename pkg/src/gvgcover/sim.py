"""Full pipeline orchestration: placement, load balancing, coverage descent.

The run is a pure function of the scenario configuration: every random draw
comes from streams derived from the scenario seed, message rounds are
barrier-synchronized, and the coverage phase applies Jacobi-style control
steps computed from position snapshots.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np

from .balance import (
    BalanceConfig,
    BalanceTrace,
    CellLoadState,
    ideal_loads,
    make_states,
    run_balance,
)
from .coverage import (
    Quadrature,
    RobotState,
    cell_controls,
    cell_controls_and_cost,
    total_cost,
)
from .errors import InfeasibleK
from .geometry import DensityField, World
from .gvg import GvgGraph, build_cells, extract_gvg, frenet_point, project_points

log = logging.getLogger(__name__)

DELTA_MARGIN = 1e-3


@dataclass
class ScenarioConfig:
    outer: list
    obstacles: list
    density_kind: str
    density_params: dict
    robot_count: int
    seed: int = 0
    grid_resolution: float = 1.0
    t1: int = 200
    t2: int = 280
    dt: float = 0.05
    steps: int = 2000
    k_g: float = 0.1
    n_s: int = 64
    n_r: int = 16
    report_scale: float = 1e-3
    guard_min_robots: bool = True

    def __post_init__(self):
        if self.robot_count < 1 or self.steps < 0 or self.dt <= 0:
            raise ValueError("robot_count, steps and dt must be positive")

    def make_world(self) -> World:
        return World.from_vertex_lists(self.outer, self.obstacles)

    def make_field(self) -> DensityField:
        return DensityField(self.density_kind, **self.density_params)

    def quadrature(self) -> Quadrature:
        return Quadrature(self.n_s, self.n_r)


@dataclass
class StepRecord:
    step: int
    time: float
    phase: str               # "balanced" | "coverage"
    cost_scaled: float
    positions: np.ndarray    # (K, 2)
    cells: np.ndarray        # (K,) int
    s: np.ndarray            # (K,)
    delta: np.ndarray        # (K,)
    counts: np.ndarray       # per-cell robot counts


@dataclass
class SimTrace:
    records: list[StepRecord] = dc_field(default_factory=list)
    final_stationarity: float | None = None

    def costs(self) -> np.ndarray:
        return np.array([r.cost_scaled for r in self.records])


@dataclass
class SimState:
    config: ScenarioConfig
    world: World
    field: DensityField
    graph: GvgGraph
    robots: list[RobotState]
    cell_states: list[CellLoadState]
    adjacency: list[list[int]]
    balance_trace: BalanceTrace | None = None

    def counts(self) -> np.ndarray:
        out = np.zeros(len(self.graph.cells), dtype=int)
        for r in self.robots:
            out[r.cell_id] += 1
        return out


def sample_free_positions(world: World, field: DensityField, n: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Density-weighted rejection sampling of positions over the free space.

    Initial robot placement follows the importance density so initial cell
    loads start near-proportional to cell masses, which is what makes the
    averaged ideal counts consistent with the robot total (the reference
    values sum to the robot count almost exactly).
    """
    x0, y0, x1, y1 = world.bounds
    bound = max(field.upper_bound(world.bounds), 1e-300)
    out: list = []
    while len(out) < n:
        cand = rng.uniform([x0, y0], [x1, y1], size=(max(4 * n, 64), 2))
        cand = cand[world.contains_points(cand)]
        if len(cand) == 0:
            continue
        accept = rng.uniform(0.0, bound, len(cand)) < field(cand)
        out.extend(cand[accept].tolist())
    return np.asarray(out[:n])


def assign_to_cell(graph: GvgGraph, q) -> tuple[int, float, float]:
    """Cell whose tube best contains the point: smallest overshoot beyond the
    lateral clearance, then smallest distance to the edge curve."""
    q_arr = np.asarray(q, dtype=float).reshape(2)
    best = None
    for edge in graph.edges:
        s, r = project_points(edge, q, strict=False)
        s, r = float(s[0]), float(r[0])
        ep, em = edge.eps_at(s)
        beyond = max(0.0, r - float(ep), -float(em) - r)
        d_curve = float(np.linalg.norm(q_arr - edge.point_at(s)))
        key = (beyond, d_curve)
        if best is None or key < best[0]:
            best = (key, edge.id, s, r)
    _, cell, s, r = best
    return cell, s, r


def _snap_into_tube(graph: GvgGraph, robot: RobotState) -> None:
    """Clamp the offset into the tube and keep position = frenet(s, delta).

    Reconstructing unconditionally also handles points that projected past an
    edge endpoint, where the raw position can sit far beyond the tube even
    though the offset looks admissible.  The margin is relative (15% of the
    local clearance, at least 1e-3): where the clearance is capped at the
    fold radius the tube chart collapses at the wall, and a robot parked
    there would lose all tangential mobility.
    """
    edge = graph.edges[robot.cell_id]
    ep, em = edge.eps_at(robot.s)
    lo = -float(em) + max(DELTA_MARGIN, 0.15 * float(em))
    hi = float(ep) - max(DELTA_MARGIN, 0.15 * float(ep))
    if lo > hi:
        lo = hi = 0.5 * (lo + hi)
    robot.delta = min(max(robot.delta, lo), hi)
    robot.position = frenet_point(edge, robot.s, robot.delta)


def initialize(cfg: ScenarioConfig) -> SimState:
    """Build the world and graph, place robots, and assign them to cells."""
    world = cfg.make_world()
    field = cfg.make_field()
    graph = extract_gvg(world, cfg.grid_resolution)
    build_cells(graph, world, field, quad_points=33)
    n_cells = len(graph.cells)
    if cfg.robot_count < n_cells:
        raise InfeasibleK(
            f"{cfg.robot_count} robots cannot staff {n_cells} cells")
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 3)))
    positions = sample_free_positions(world, field, cfg.robot_count, rng)
    robots = []
    for i, pos in enumerate(positions):
        cell, s, r = assign_to_cell(graph, pos)
        robot = RobotState(id=i, cell_id=cell, position=pos, s=s, delta=r)
        _snap_into_tube(graph, robot)
        robots.append(robot)
    _repair_min_one(graph, robots)
    counts = np.zeros(n_cells, dtype=int)
    for r in robots:
        counts[r.cell_id] += 1
    masses = [c.mass for c in graph.cells]
    cell_states = make_states(counts, masses)
    adjacency = [sorted(c.neighbor_cells) for c in graph.cells]
    return SimState(config=cfg, world=world, field=field, graph=graph,
                    robots=robots, cell_states=cell_states,
                    adjacency=adjacency)


def _repair_min_one(graph: GvgGraph, robots: list[RobotState]) -> None:
    """Move surplus robots into empty cells until every cell holds one."""
    n_cells = len(graph.cells)
    while True:
        counts = np.zeros(n_cells, dtype=int)
        for r in robots:
            counts[r.cell_id] += 1
        empty = [c for c in range(n_cells) if counts[c] == 0]
        if not empty:
            return
        target = empty[0]
        edge = graph.edges[target]
        best = None
        for robot in robots:
            if counts[robot.cell_id] < 2:
                continue
            s, _ = project_points(edge, robot.position, strict=False)
            d = float(np.linalg.norm(robot.position - edge.point_at(float(s[0]))))
            key = (d, robot.id)
            if best is None or key < best[0]:
                best = (key, robot)
        _, robot = best
        log.info("initialization repair: robot %d moved to empty cell %d",
                 robot.id, target)
        _reassign(graph, robot, target)


def _reassign(graph: GvgGraph, robot: RobotState, cell: int) -> None:
    """Instantaneous relocation onto the nearest point of the receiving tube."""
    edge = graph.edges[cell]
    s, r = project_points(edge, robot.position, strict=False)
    robot.cell_id = cell
    robot.s = float(s[0])
    robot.delta = float(r[0])
    _snap_into_tube(graph, robot)


def run_load_balancing(state: SimState) -> BalanceTrace:
    """Both balancing phases; each accepted transfer moves a physical robot."""
    cfg = state.config
    bcfg = BalanceConfig(t1=cfg.t1, t2=cfg.t2, seed=cfg.seed,
                         guard_min_robots=cfg.guard_min_robots)
    trace = BalanceTrace()
    ideal_loads(state.cell_states, state.adjacency, bcfg, trace)

    def on_transfer(sender: int, receiver: int) -> None:
        node = _shared_node(state.graph, sender, receiver)
        members = [r for r in state.robots if r.cell_id == sender]
        anchor = node.position if node is not None else \
            state.graph.edges[receiver].positions[0]
        best = min(members,
                   key=lambda r: (float(np.linalg.norm(r.position - anchor)),
                                  r.id))
        _reassign(state.graph, best, receiver)

    run_balance(state.cell_states, state.adjacency, bcfg, trace,
                on_transfer=on_transfer)
    got = state.counts()
    want = np.array([s.K for s in state.cell_states])
    if not np.array_equal(got, want):
        raise AssertionError(f"physical counts {got} diverged from protocol {want}")
    state.balance_trace = trace
    return trace


def _shared_node(graph: GvgGraph, cell_a: int, cell_b: int):
    ea = graph.edges[cell_a]
    eb = graph.edges[cell_b]
    shared = [n for n in ea.endpoint_nodes
              if n is not None and n in eb.endpoint_nodes]
    if not shared:
        return None
    return graph.nodes[min(shared)]


def _controls_and_cost(state: SimState) -> tuple[list[tuple], float, float]:
    """Controls for all robots plus the scaled cost, from one snapshot pass."""
    cfg = state.config
    quad = cfg.quadrature()
    updates: list[tuple] = []
    cost = 0.0
    max_norm = 0.0
    for cell in state.graph.cells:
        members = [r for r in state.robots if r.cell_id == cell.id]
        if not members:
            continue
        edge = state.graph.edges[cell.edge]
        controls, cell_h = cell_controls_and_cost(members, edge, state.field,
                                                  cfg.k_g, quad)
        cost += cell_h
        for robot, u in zip(members, controls):
            max_norm = max(max_norm, float(np.linalg.norm(u)))
            updates.append((robot, u, edge))
    return updates, cfg.report_scale * cost, max_norm


def _apply_controls(state: SimState, updates, dt: float) -> None:
    """Simultaneous Euler step, re-projection, and tube clamping."""
    by_edge: dict[int, list[tuple]] = {}
    for robot, u, edge in updates:
        by_edge.setdefault(edge.id, []).append((robot, u, edge))
    for group in by_edge.values():
        edge = group[0][2]
        new_pos = np.array([r.position + dt * u for r, u, _ in group])
        s, r = project_points(edge, new_pos, strict=False)
        for (robot, _, _), pos, si, ri in zip(group, new_pos, s, r):
            robot.position = pos
            robot.s = float(si)
            robot.delta = float(ri)
            _snap_into_tube(state.graph, robot)


def step_coverage(state: SimState, dt: float | None = None) -> float:
    """One Jacobi control step for every robot; returns max control norm."""
    dt = state.config.dt if dt is None else dt
    updates, _, max_norm = _controls_and_cost(state)
    _apply_controls(state, updates, dt)
    return max_norm


def max_control_norm(state: SimState) -> float:
    cfg = state.config
    quad = cfg.quadrature()
    worst = 0.0
    for cell in state.graph.cells:
        members = [r for r in state.robots if r.cell_id == cell.id]
        if not members:
            continue
        edge = state.graph.edges[cell.edge]
        for u in cell_controls(members, edge, state.field, cfg.k_g, quad):
            worst = max(worst, float(np.linalg.norm(u)))
    return worst


def _record(state: SimState, trace: SimTrace, step: int, time: float,
            phase: str, cost: float | None = None) -> None:
    if cost is None:
        cost = total_cost(state.graph, state.robots, state.field,
                          state.config.quadrature(),
                          report_scale=state.config.report_scale)
    robots = state.robots
    trace.records.append(StepRecord(
        step=step, time=time, phase=phase, cost_scaled=cost,
        positions=np.array([r.position for r in robots]),
        cells=np.array([r.cell_id for r in robots], dtype=int),
        s=np.array([r.s for r in robots]),
        delta=np.array([r.delta for r in robots]),
        counts=state.counts()))


def run(cfg: ScenarioConfig) -> tuple[SimState, SimTrace]:
    """initialize -> load balancing -> coverage descent, with full tracing.

    Controls for the next step and the cost of the current positions come
    from one quadrature pass per step.
    """
    state = initialize(cfg)
    run_load_balancing(state)
    trace = SimTrace()
    updates, cost, max_norm = _controls_and_cost(state)
    _record(state, trace, step=0, time=0.0, phase="balanced", cost=cost)
    for k in range(1, cfg.steps + 1):
        _apply_controls(state, updates, cfg.dt)
        updates, cost, max_norm = _controls_and_cost(state)
        _record(state, trace, step=k, time=k * cfg.dt, phase="coverage",
                cost=cost)
    trace.final_stationarity = max_norm
    return state, trace
