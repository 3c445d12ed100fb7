"""Distributed two-phase load balancing of robot counts across cells.

Phase one equalizes the per-cell load x = K/e (robots per unit mass) by
pairwise averaging with the lowest-loaded neighbor.  Phase two moves single
robots between neighbors through synchronous offer/accept/pass rounds until
every integer deviation c_i = K_i - floor(K_i*) sits at the floor or ceiling
of the mean deviation.  Both phases are simulated deterministically: each
cell draws tie-breaks from its own seeded stream, and message delivery is
barrier-synchronized between phases.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DisconnectedGraph, Eq3Violated

log = logging.getLogger(__name__)


@dataclass
class CellLoadState:
    cell_id: int
    K: int                      # integer robot count, >= 1 with the guard on
    e: float                    # cell mass
    x: float = 0.0              # load K/e; fractional during averaging
    K_star: float | None = None
    c: int | None = None        # deviation K - floor(K_star)

    def __post_init__(self):
        if self.e <= 0:
            raise ValueError(f"cell {self.cell_id} has non-positive mass {self.e}")
        if self.x == 0.0:
            self.x = self.K / self.e


@dataclass(frozen=True)
class RoundMessage:
    kind: str                   # "offer" | "accept" | "transfer"
    sender: int
    receiver: int
    value: int | None = None    # c of the sender, for offers


@dataclass
class BalanceConfig:
    t1: int = 200               # averaging rounds
    t2: int = 280               # final round index of the integer phase
    seed: int = 0
    guard_min_robots: bool = True

    def __post_init__(self):
        if not (self.t2 > self.t1 >= 1):
            raise ValueError("need t2 > t1 >= 1")


@dataclass
class RoundRecord:
    round: int
    phase: str                  # "averaging" | "integer"
    x: list[float]
    K: list[int]
    c: list[int] | None
    messages: list[RoundMessage] = field(default_factory=list)


@dataclass
class BalanceTrace:
    records: list[RoundRecord] = field(default_factory=list)


def make_states(counts, masses) -> list[CellLoadState]:
    return [CellLoadState(cell_id=i, K=int(k), e=float(e))
            for i, (k, e) in enumerate(zip(counts, masses))]


def _normalize_adjacency(adjacency, n) -> list[tuple[int, ...]]:
    adj = [tuple(sorted(set(adjacency[i]) - {i})) for i in range(n)]
    return adj


def _check_connected(adj) -> None:
    n = len(adj)
    if n <= 1:
        return
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    if len(seen) != n:
        raise DisconnectedGraph(f"only {len(seen)} of {n} cells reachable")


def cell_rngs(seed: int, n: int, stream: int) -> list[np.random.Generator]:
    """One independent generator per cell, derived from the scenario seed."""
    return [np.random.default_rng(np.random.SeedSequence((seed, stream, i)))
            for i in range(n)]


def _pick(candidates: list[int], rng: np.random.Generator) -> int:
    if len(candidates) == 1:
        return candidates[0]
    return candidates[int(rng.integers(len(candidates)))]


# -- phase one: continuous weighted averaging -------------------------------------


def averaging_round(x: np.ndarray, adj, rngs) -> np.ndarray:
    """One synchronous round of pairwise load averaging.

    Every cell proposes to its strictly lowest-loaded neighbor; each cell
    accepts at most one proposer per round so the paired update conserves
    the load sum exactly.  The acceptor picks uniformly among its proposers
    from its own stream: a fixed priority order can starve a high-id cell
    behind lower ids forever and stall convergence.
    """
    proposals: dict[int, int] = {}
    for i in range(len(x)):
        if not adj[i]:
            continue
        xmin = min(x[j] for j in adj[i])
        if xmin < x[i]:
            cands = [j for j in adj[i] if x[j] == xmin]
            proposals[i] = _pick(cands, rngs[i])
    by_target: dict[int, list[int]] = {}
    for i in sorted(proposals):
        by_target.setdefault(proposals[i], []).append(i)
    delta = np.zeros_like(x)
    for j in sorted(by_target):
        i = _pick(by_target[j], rngs[j])
        dx = (x[i] - x[j]) / 2.0
        delta[i] -= dx
        delta[j] += dx
    return x + delta


def ideal_loads(states: list[CellLoadState], adjacency, cfg: BalanceConfig,
                trace: BalanceTrace | None = None) -> list[CellLoadState]:
    """Run t1 averaging rounds and freeze K_i* = e_i * x_i(t1)."""
    n = len(states)
    adj = _normalize_adjacency(adjacency, n)
    _check_connected(adj)
    rngs = cell_rngs(cfg.seed, n, stream=1)
    x = np.array([s.K / s.e for s in states], dtype=float)
    for s, xi in zip(states, x):
        s.x = float(xi)
    for t in range(cfg.t1):
        x = averaging_round(x, adj, rngs)
        if trace is not None:
            trace.records.append(RoundRecord(
                round=t + 1, phase="averaging", x=[float(v) for v in x],
                K=[s.K for s in states], c=None))
    for s, xi in zip(states, x):
        s.x = float(xi)
        s.K_star = float(s.e * xi)
        s.c = s.K - math.floor(s.K_star)
    return states


# -- phase two: integer offer/accept/pass ------------------------------------------


def balance_round(states: list[CellLoadState], adj, rngs,
                  guard_min_robots: bool = True) -> list[RoundMessage]:
    """One synchronous offer/accept/pass round; mutates c and K in place."""
    c = [s.c for s in states]
    messages: list[RoundMessage] = []
    offers_to: dict[int, list[int]] = {}
    for i in range(len(states)):
        if not adj[i]:
            continue
        cmin = min(c[j] for j in adj[i])
        if cmin < c[i]:
            cands = [j for j in adj[i] if c[j] == cmin]
            j_o = _pick(cands, rngs[i])
            messages.append(RoundMessage("offer", i, j_o, value=c[i]))
            offers_to.setdefault(j_o, []).append(i)
    accepted: list[tuple[int, int]] = []   # (sender, acceptor)
    for j in sorted(offers_to):
        senders = offers_to[j]
        cmax = max(c[i] for i in senders)
        cands = [i for i in senders if c[i] == cmax]
        j_a = _pick(cands, rngs[j])
        messages.append(RoundMessage("accept", j, j_a))
        accepted.append((j_a, j))
    for sender, acceptor in sorted(accepted):
        if guard_min_robots and states[sender].K <= 1:
            log.info("transfer %d -> %d skipped: sender would drop below one "
                     "robot", sender, acceptor)
            continue
        states[sender].c -= 1
        states[sender].K -= 1
        states[acceptor].c += 1
        states[acceptor].K += 1
        messages.append(RoundMessage("transfer", sender, acceptor, value=1))
    return messages


def run_balance(states: list[CellLoadState], adjacency, cfg: BalanceConfig,
                trace: BalanceTrace | None = None,
                on_transfer=None) -> list[CellLoadState]:
    """Rounds t1..t2-1 of the integer phase; K ends at floor(K*) + c(t2)."""
    n = len(states)
    adj = _normalize_adjacency(adjacency, n)
    _check_connected(adj)
    if any(s.K_star is None or s.c is None for s in states):
        raise ValueError("run ideal_loads first: K_star and c must be set")
    rngs = cell_rngs(cfg.seed, n, stream=2)
    for t in range(cfg.t1, cfg.t2):
        messages = balance_round(states, adj, rngs,
                                 guard_min_robots=cfg.guard_min_robots)
        if on_transfer is not None:
            for m in messages:
                if m.kind == "transfer":
                    on_transfer(m.sender, m.receiver)
        if trace is not None:
            trace.records.append(RoundRecord(
                round=t + 1, phase="integer",
                x=[s.K / s.e for s in states],
                K=[s.K for s in states], c=[s.c for s in states],
                messages=messages))
    for s in states:
        assert s.K == math.floor(s.K_star) + s.c
    return states


# -- checkers ------------------------------------------------------------------------


def deviation_vector(K, K_star) -> tuple[list[int], Fraction]:
    """Integer deviations c_i = K_i - floor(K_i*) and their exact mean."""
    c = [int(k) - math.floor(ks) for k, ks in zip(K, K_star)]
    c_bar = Fraction(sum(c), len(c))
    if not (0 <= c_bar < 1):
        log.warning("mean deviation %s outside [0, 1): robot total and ideal "
                    "loads are inconsistent", c_bar)
    return c, c_bar


def check_eq3(c) -> tuple[bool, int, int]:
    """Floor/ceiling balance check on a deviation vector, in exact arithmetic.

    Returns (ok, alpha, beta): the counts of cells at floor(c_bar) and at
    ceil(c_bar).  ok requires every cell at one of the two values and the
    counts to reproduce the total deviation.
    """
    c = [int(v) for v in c]
    n = len(c)
    total = sum(c)
    fl = total // n
    beta_expected = total - n * fl
    if beta_expected == 0:
        alpha = sum(1 for v in c if v == fl)
        return alpha == n, alpha, 0
    alpha = sum(1 for v in c if v == fl)
    beta = sum(1 for v in c if v == fl + 1)
    ok = (alpha + beta == n) and (beta == beta_expected)
    return ok, alpha, beta


def ideal_configuration(K_star, total_robots: int) -> list[int]:
    """Deviation vector of the ideal configuration.

    Cells sorted by ascending fractional part of K*: the first alpha get
    floor(c_bar), the rest get the ceiling.  Ties break by cell index.
    """
    n = len(K_star)
    floors = [math.floor(ks) for ks in K_star]
    total_c = int(total_robots) - sum(floors)
    fl = total_c // n
    beta = total_c - n * fl
    order = sorted(range(n), key=lambda i: (K_star[i] - floors[i], i))
    c = [fl] * n
    for i in order[n - beta:]:
        c[i] = fl + 1
    return c


def balance_objective(K, K_star) -> float:
    """Load-balancing function: total absolute deviation from the ideals."""
    return float(sum(abs(float(k) - float(ks)) for k, ks in zip(K, K_star)))


def verify_theorem2(K, K_star) -> tuple[bool, float, float, float, float]:
    """Bound check S_p <= S_f < S_p + S2 for a terminal configuration.

    S1 is the sum of fractional parts of K*, S2 = min(|E| - S1, S1), S_p the
    objective of the ideal configuration with the same robot total, S_f the
    objective of the given one.  Raises Eq3Violated when the configuration
    is not terminal (the bound is only claimed for those).
    """
    c, _ = deviation_vector(K, K_star)
    ok3, _, _ = check_eq3(c)
    if not ok3:
        raise Eq3Violated("configuration does not satisfy the floor/ceil "
                          "balance condition")
    n = len(K_star)
    fracs = [ks - math.floor(ks) for ks in K_star]
    s1 = float(sum(fracs))
    s2 = min(n - s1, s1)
    total = int(sum(K))
    c_ideal = ideal_configuration(K_star, total)
    k_ideal = [math.floor(ks) + ci for ks, ci in zip(K_star, c_ideal)]
    s_p = balance_objective(k_ideal, K_star)
    s_f = balance_objective(K, K_star)
    ok = (s_p <= s_f + 1e-12) and (s_f < s_p + s2)
    return ok, s_p, s_f, s1, s2
