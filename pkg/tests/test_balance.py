import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from gvgcover.balance import (
    BalanceConfig,
    BalanceTrace,
    averaging_round,
    balance_objective,
    balance_round,
    cell_rngs,
    check_eq3,
    deviation_vector,
    ideal_configuration,
    ideal_loads,
    make_states,
    run_balance,
    verify_theorem2,
)
from gvgcover.errors import DisconnectedGraph, Eq3Violated

PAPER_K_STAR = [2.33, 3.39, 1.20, 1.12, 1.41, 1.57, 0.50, 4.77, 3.70]
PAPER_K = [3, 3, 1, 1, 1, 2, 1, 5, 3]


def apportion(total, masses):
    """Largest-remainder apportionment of robots to cells, each at least one."""
    masses = np.asarray(masses, dtype=float)
    quota = total * masses / masses.sum()
    counts = np.floor(quota).astype(int)
    order = np.argsort(-(quota - counts))
    for i in order[: total - counts.sum()]:
        counts[i] += 1
    while (counts == 0).any():
        counts[np.argmax(counts)] -= 1
        counts[np.argmin(counts)] += 1
    return counts.tolist()


def random_connected_graph(rng, n):
    """Random tree plus a few chords; adjacency as list of neighbor lists."""
    adj = [set() for _ in range(n)]
    for v in range(1, n):
        u = int(rng.integers(v))
        adj[u].add(v)
        adj[v].add(u)
    for _ in range(int(rng.integers(0, n))):
        u, v = rng.integers(n, size=2)
        if u != v:
            adj[u].add(int(v))
            adj[int(v)].add(int(u))
    return [sorted(s) for s in adj]


# -- Algorithm 1: weighted load averaging --------------------------------------------

class TestIdealLoads:
    def test_two_equal_cells(self):
        states = make_states([4, 2], [1.0, 1.0])
        ideal_loads(states, [[1], [0]], BalanceConfig(t1=50, t2=51))
        assert [s.x for s in states] == pytest.approx([3.0, 3.0])
        assert [s.K_star for s in states] == pytest.approx([3.0, 3.0])

    def test_two_weighted_cells(self):
        # x = (3, 1.5) averages to 2.25; K* = e * x need not sum to K
        states = make_states([3, 3], [1.0, 2.0])
        ideal_loads(states, [[1], [0]], BalanceConfig(t1=200, t2=201))
        assert [s.K_star for s in states] == pytest.approx([2.25, 4.5])
        assert sum(s.K_star for s in states) == pytest.approx(6.75)

    def test_sum_conserved_and_spread_shrinks(self):
        rng = np.random.default_rng(5)
        for trial in range(10):
            n = int(rng.integers(3, 13))
            adj = random_connected_graph(rng, n)
            x = rng.uniform(0.1, 10.0, n)
            rngs = cell_rngs(int(rng.integers(1 << 31)), n, stream=1)
            total = x.sum()
            spread = x.max() - x.min()
            for _ in range(400):
                x = averaging_round(x, [tuple(a) for a in adj], rngs)
                assert abs(x.sum() - total) < 1e-12
                new_spread = x.max() - x.min()
                assert new_spread <= spread + 1e-12
                spread = new_spread
            assert spread < 1e-6

    def test_disconnected_graph_raises(self):
        states = make_states([1, 1, 1], [1.0, 1.0, 1.0])
        with pytest.raises(DisconnectedGraph):
            ideal_loads(states, [[1], [0], []], BalanceConfig(t1=5, t2=6))

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(11)
        adj = random_connected_graph(rng, 8)
        counts = [int(v) for v in rng.integers(1, 9, 8)]
        masses = rng.uniform(0.5, 5.0, 8)
        runs = []
        for _ in range(2):
            states = make_states(counts, masses)
            ideal_loads(states, adj, BalanceConfig(t1=120, t2=121, seed=7))
            runs.append([s.K_star for s in states])
        assert runs[0] == runs[1]


# -- Algorithm 2: offer/accept/pass ---------------------------------------------------

def states_with_c(K, K_star, masses=None):
    masses = masses or [1.0] * len(K)
    states = make_states(K, masses)
    for s, ks in zip(states, K_star):
        s.K_star = float(ks)
        s.c = s.K - math.floor(ks)
    return states


class TestBalanceRound:
    def test_two_cells_one_transfer(self):
        states = states_with_c([3, 3], [2.25, 4.5])
        assert [s.c for s in states] == [1, -1]
        rngs = cell_rngs(0, 2, stream=2)
        msgs = balance_round(states, [(1,), (0,)], rngs)
        assert [s.c for s in states] == [0, 0]
        kinds = [m.kind for m in msgs]
        assert kinds == ["offer", "accept", "transfer"]

    def test_equal_c_is_fixed_point(self):
        states = states_with_c([2, 2, 2], [1.5, 1.5, 1.5])
        rngs = cell_rngs(3, 3, stream=2)
        msgs = balance_round(states, [(1,), (0, 2), (1,)], rngs)
        assert msgs == []
        assert [s.c for s in states] == [1, 1, 1]

    def test_ring_reaches_envelope(self):
        ring = [(1, 3), (0, 2), (1, 3), (0, 2)]
        for seed in range(20):
            states = states_with_c([3, 1, 1, 1], [1.5, 1.5, 1.5, 1.5])
            assert [s.c for s in states] == [2, 0, 0, 0]
            rngs = cell_rngs(seed, 4, stream=2)
            for _ in range(10):
                balance_round(states, ring, rngs)
                if all(s.c in (0, 1) for s in states):
                    break
            assert all(s.c in (0, 1) for s in states)
            assert sum(s.c for s in states) == 2

    def test_sum_conserved_without_guard(self):
        rng = np.random.default_rng(23)
        for seed in range(20):
            n = int(rng.integers(2, 9))
            adj = [tuple(a) for a in random_connected_graph(rng, n)]
            K = [int(v) for v in rng.integers(0, 7, n)]
            ks = rng.uniform(0, 5, n)
            states = states_with_c(K, ks)
            total_k = sum(s.K for s in states)
            total_c = sum(s.c for s in states)
            rngs = cell_rngs(seed, n, stream=2)
            for _ in range(30):
                balance_round(states, adj, rngs, guard_min_robots=False)
            assert sum(s.K for s in states) == total_k
            assert sum(s.c for s in states) == total_c

    def test_guard_keeps_counts_positive(self):
        rng = np.random.default_rng(29)
        for seed in range(10):
            n = 6
            adj = [tuple(a) for a in random_connected_graph(rng, n)]
            K = [int(v) for v in rng.integers(1, 5, n)]
            ks = rng.uniform(0, 5, n)
            states = states_with_c(K, ks)
            rngs = cell_rngs(seed, n, stream=2)
            for _ in range(50):
                balance_round(states, adj, rngs, guard_min_robots=True)
                assert all(s.K >= 1 for s in states)


class TestRunBalance:
    def test_final_counts_definition(self):
        states = make_states([3, 3], [1.0, 2.0])
        cfg = BalanceConfig(t1=100, t2=140, seed=4)
        ideal_loads(states, [[1], [0]], cfg)
        trace = BalanceTrace()
        run_balance(states, [[1], [0]], cfg, trace=trace)
        for s in states:
            assert s.K == math.floor(s.K_star) + s.c
        assert [s.K for s in states] == [2, 4]
        assert len(trace.records) == 40

    def test_single_cell_unchanged(self):
        states = make_states([5], [2.0])
        cfg = BalanceConfig(t1=10, t2=20)
        ideal_loads(states, [[]], cfg)
        run_balance(states, [[]], cfg)
        assert states[0].K == 5

    def test_transfer_callback_matches_counts(self):
        rng = np.random.default_rng(37)
        adj = [tuple(a) for a in random_connected_graph(rng, 7)]
        states = make_states([int(v) for v in rng.integers(1, 7, 7)],
                             rng.uniform(0.4, 4.0, 7))
        before = [s.K for s in states]
        cfg = BalanceConfig(t1=150, t2=230, seed=1)
        ideal_loads(states, adj, cfg)
        moves = []
        run_balance(states, adj, cfg, on_transfer=lambda a, b: moves.append((a, b)))
        counts = list(before)
        for a, b in moves:
            counts[a] -= 1
            counts[b] += 1
        assert counts == [s.K for s in states]


# -- checkers -----------------------------------------------------------------------

class TestCheckers:
    def test_paper_deviation_vector(self):
        c, c_bar = deviation_vector(PAPER_K, PAPER_K_STAR)
        assert c == [1, 0, 0, 0, 0, 1, 1, 1, 0]
        assert c_bar == Fraction(4, 9)

    def test_paper_eq3(self):
        c, _ = deviation_vector(PAPER_K, PAPER_K_STAR)
        ok, alpha, beta = check_eq3(c)
        assert ok and (alpha, beta) == (5, 4)

    def test_zero_vector_eq3(self):
        ok, alpha, beta = check_eq3([0, 0, 0])
        assert ok and (alpha, beta) == (3, 0)

    def test_eq3_violation(self):
        ok, _, _ = check_eq3([2, 0, 0])
        assert not ok

    def test_paper_ideal_configuration(self):
        # fractional parts sorted: cells 4,3,1,2,5 take the floor
        c = ideal_configuration(PAPER_K_STAR, 20)
        assert c == [0, 0, 0, 0, 0, 1, 1, 1, 1]

    def test_ideal_ties_break_by_index(self):
        c = ideal_configuration([1.5, 1.5, 1.5, 1.5], 7)
        assert c == [0, 1, 1, 1]

    def test_paper_objectives(self):
        s_f = balance_objective(PAPER_K, PAPER_K_STAR)
        assert s_f == pytest.approx(3.65, abs=0.01)
        c_ideal = ideal_configuration(PAPER_K_STAR, 20)
        k_ideal = [math.floor(ks) + ci for ks, ci in zip(PAPER_K_STAR, c_ideal)]
        assert balance_objective(k_ideal, PAPER_K_STAR) == pytest.approx(2.91, abs=0.01)

    def test_zero_objective_at_exact_match(self):
        assert balance_objective([2, 3], [2.0, 3.0]) == 0.0

    def test_paper_theorem2(self):
        ok, s_p, s_f, s1, s2 = verify_theorem2(PAPER_K, PAPER_K_STAR)
        assert ok
        assert s1 == pytest.approx(3.99, abs=0.01)
        assert s2 == pytest.approx(3.99, abs=0.01)
        assert s_p == pytest.approx(2.91, abs=0.01)
        assert s_f == pytest.approx(3.65, abs=0.01)
        assert s_p <= s_f < s_p + s2

    def test_theorem2_requires_terminal_configuration(self):
        with pytest.raises(Eq3Violated):
            verify_theorem2([4, 1, 1], [2.5, 2.5, 1.0])

    def test_ideal_equals_final_lower_bound(self):
        k_star = [1.3, 2.7, 0.4]
        c_ideal = ideal_configuration(k_star, 5)
        k_ideal = [math.floor(ks) + ci for ks, ci in zip(k_star, c_ideal)]
        ok, s_p, s_f, _, s2 = verify_theorem2(k_ideal, k_star)
        assert ok and s_f == s_p and s2 > 0

    def test_ideal_minimizes_over_enumeration(self):
        # brute force over every floor/ceil assignment with the same total
        rng = np.random.default_rng(101)
        for _ in range(40):
            n = int(rng.integers(2, 7))
            k_star = rng.uniform(0.0, 4.0, n)
            floors = [math.floor(v) for v in k_star]
            beta = int(rng.integers(0, n))
            total = sum(floors) + beta
            c_ideal = ideal_configuration(k_star, total)
            s_ideal = balance_objective(
                [f + c for f, c in zip(floors, c_ideal)], k_star)
            best = min(
                balance_objective(
                    [f + (1 if i in ones else 0) for i, f in enumerate(floors)],
                    k_star)
                for ones in itertools.combinations(range(n), beta))
            assert s_ideal == pytest.approx(best, abs=1e-12)


# -- paper-scale scenario -------------------------------------------------------------

class TestPaperScaleBalance:
    def test_consensus_spread_on_nine_cells(self, paper_cells):
        masses, adjacency = paper_cells
        rng = np.random.default_rng(2)
        counts = rng.multinomial(20 - 9, np.ones(9) / 9) + 1
        x = np.array([k / e for k, e in zip(counts, masses)])
        rngs = cell_rngs(0, 9, stream=1)
        adj = [tuple(a) for a in adjacency]
        for t in range(10_000):
            x = averaging_round(x, adj, rngs)
            if x.max() - x.min() < 1e-6:
                break
        assert x.max() - x.min() < 1e-6

    def test_envelope_reached(self, paper_cells):
        # fixed instance (counts apportioned to masses), randomized protocol:
        # the probabilistic termination claim is over the algorithm's own draws
        masses, adjacency = paper_cells
        counts = apportion(20, masses)
        reached = 0
        for seed in range(30):
            states = make_states(counts, masses)
            cfg = BalanceConfig(t1=200, t2=700, seed=seed)
            ideal_loads(states, adjacency, cfg)
            rngs = cell_rngs(seed, 9, stream=2)
            adj = [tuple(sorted(a)) for a in adjacency]
            total = sum(s.c for s in states)
            fl = total // 9
            for t in range(500):
                if all(s.c in (fl, fl + 1) for s in states):
                    break
                balance_round(states, adj, rngs)
            if all(s.c in (fl, fl + 1) for s in states):
                reached += 1
            assert sum(s.K for s in states) == 20
        assert reached >= 29
