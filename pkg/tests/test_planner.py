from itertools import permutations

import numpy as np
import pytest

from rliac.mapping import DOWN, LEFT, NavGraph, RIGHT, UP
from rliac.planner import (DisconnectedGraph, IsolatedRegion, QTable, SimParams, next_action, random_action,
                           schmidhuber_step, shortest_distances, tour_cost, train_q, uniform_tour, value_iteration)

from oracles import greedy, random_grid_graph, value_iteration_oracle


def line(n, spacing=1.0):
    nodes = {k: (k * spacing, 0.0) for k in range(n)}
    edges = {}
    for k in range(n - 1):
        edges.setdefault(k, {})[RIGHT] = (k + 1, spacing)
        edges.setdefault(k + 1, {})[LEFT] = (k, spacing)
    return NavGraph(nodes, edges)


def test_zero_rewards_zero_q(rng):
    q = train_q(line(2), {0: 0.0, 1: 0.0}, 0, SimParams(episodes=50), rng)
    assert all(v == 0.0 for v in q.values.values())
    assert q.values


def test_self_loop_fixed_point(rng):
    g = NavGraph({0: (0.0, 0.0)}, {0: {UP: (0, 1.0)}})
    q = train_q(g, {0: 0.3}, 0, SimParams(episodes=1000, epsilon=0.0), rng)
    assert q.get(0, UP) == pytest.approx(3.0, rel=1e-6)


def test_value_iteration_matches_dictionary_oracle(rng):
    for _ in range(5):
        g = random_grid_graph(rng, 8)
        rewards = {k: float(rng.random()) for k in g.nodes}
        for arrival in (False, True):
            vi = value_iteration(g, rewards, 0.9, arrival)
            ref = value_iteration_oracle(g, rewards, 0.9, arrival)
            assert set(vi) == set(ref)
            assert all(vi[k] == pytest.approx(ref[k], abs=1e-9) for k in ref)


def test_trained_policy_matches_value_iteration(rng):
    # six nodes, static rewards; the simulated episodes keep their default exploration
    g = random_grid_graph(np.random.default_rng(6), 6, keep=1.0)
    rewards = {k: float(v) for k, v in zip(sorted(g.nodes), np.random.default_rng(7).random(6))}
    q = train_q(g, rewards, 0, SimParams(episodes=10_000), rng)
    want = greedy(value_iteration(g, rewards, 0.9), g)
    got = {s: q.greedy(s) for s in want}
    assert got == want


def test_greedy_argmax_and_ties():
    g = NavGraph({0: (0, 0), 1: (0, 1), 2: (-1, 0)}, {0: {UP: (1, 1.0), LEFT: (2, 1.0)}})
    q = QTable(g)
    assert q.greedy(0) == UP
    q.values[(0, UP)], q.values[(0, LEFT)] = 0.3, 0.9
    assert next_action(q, 0, np.random.default_rng(0), random_rate=0.0) == LEFT


def test_random_rate_frequency():
    nodes = {0: (0, 0), 1: (0, 1), 2: (0, -1), 3: (-1, 0), 4: (1, 0)}
    g = NavGraph(nodes, {0: {UP: (1, 1.0), DOWN: (2, 1.0), LEFT: (3, 1.0), RIGHT: (4, 1.0)}})
    q = QTable(g)
    q.values[(0, RIGHT)] = 1.0
    r = np.random.default_rng(11)
    picks = np.array([next_action(q, 0, r, 0.1) for _ in range(10_000)])
    # 0.9 + 0.1 / 4; three binomial standard deviations is about 0.008
    assert abs((picks == RIGHT).mean() - 0.925) < 0.01


def test_random_action_frequencies():
    nodes = {0: (0, 0), 1: (0, 1), 2: (0, -1), 3: (-1, 0), 4: (1, 0)}
    g = NavGraph(nodes, {0: {UP: (1, 1.0), DOWN: (2, 1.0), LEFT: (3, 1.0), RIGHT: (4, 1.0)}})
    r = np.random.default_rng(12)
    picks = np.bincount([random_action(g, 0, r) for _ in range(10_000)], minlength=4) / 10_000
    assert np.all(np.abs(picks - 0.25) < 0.02)
    one = NavGraph({0: (0, 0), 1: (1, 0)}, {0: {RIGHT: (1, 1.0)}})
    assert random_action(one, 0, r) == RIGHT
    with pytest.raises(IsolatedRegion):
        random_action(one, 1, r)


def test_schmidhuber_first_step():
    g = line(3)
    q = QTable(g)
    q.values[(1, RIGHT)] = 0.0
    r = np.random.default_rng(13)
    picks = [schmidhuber_step(q, g, {}, 1, r) for _ in range(4000)]
    # half random over {Left, Right}, half the Up-Down-Left-Right tie-break (Left here)
    assert abs(np.mean(np.array(picks) == LEFT) - 0.75) < 0.03


def test_schmidhuber_rewarded_arrival():
    g = line(2)
    q = QTable(g)
    schmidhuber_step(q, g, {0: 0.0, 1: 0.8}, 1, np.random.default_rng(0), previous=(0, RIGHT),
                     reward_on_arrival=True)
    assert q.get(0, RIGHT) > 0


def test_schmidhuber_replay_oracle():
    g = line(2)
    rewards = {0: 0.2, 1: 0.7}
    q = QTable(g)
    ref = {(0, RIGHT): 0.0, (1, LEFT): 0.0}
    r = np.random.default_rng(14)
    state, prev = 0, None
    for _ in range(300):
        act = schmidhuber_step(q, g, rewards, state, r, prev)
        if prev is not None:
            s, a = prev
            nxt_best = max(ref[k] for k in ref if k[0] == state)
            ref[prev] = rewards[s] + 0.9 * nxt_best
        prev = (state, act)
        state = g.neighbour(state, act)[0]
        assert q.values == pytest.approx(ref, abs=1e-12)


def test_trivial_tours():
    g = NavGraph({0: (0.0, 0.0)})
    assert uniform_tour(g) == [0]
    ids, dist = shortest_distances(g)
    assert tour_cost([0], dist) == 0.0


def brute_tour(dist):
    n = len(dist)
    return min(tour_cost([0, *p], dist) for p in permutations(range(1, n)))


def test_line_tour_is_there_and_back():
    g = line(4)
    _, dist = shortest_distances(g)
    tour = uniform_tour(g)
    assert sorted(tour) == [0, 1, 2, 3]
    assert tour_cost(tour, dist) == pytest.approx(6.0)
    assert brute_tour(dist) == pytest.approx(6.0)


def test_two_opt_near_optimal():
    r = np.random.default_rng(15)
    for _ in range(5):
        g = random_grid_graph(r, 8)
        ids, dist = shortest_distances(g)
        tour = uniform_tour(g)
        assert sorted(tour) == ids
        assert tour_cost([ids.index(t) for t in tour], dist) <= 1.3 * brute_tour(dist) + 1e-9


def test_disconnected_tour():
    g = NavGraph({0: (0, 0), 1: (1, 0), 2: (9, 9)}, {0: {RIGHT: (1, 1.0)}, 1: {LEFT: (0, 1.0)}})
    with pytest.raises(DisconnectedGraph):
        uniform_tour(g)
    assert sorted(uniform_tour(g, within=1)) == [0, 1]


def test_q_sync_and_csv(tmp_path):
    g = line(3)
    q = QTable(g)
    q.values[(0, RIGHT)] = 0.5
    q.sync(NavGraph(dict(g.nodes), {0: {RIGHT: (1, 1.0)}, 1: {LEFT: (0, 1.0)}}))
    assert q.values == {(0, RIGHT): 0.5, (1, LEFT): 0.0}
    q.write_csv(tmp_path / "q.csv")
    assert (tmp_path / "q.csv").read_text().splitlines() == ["region,action,value", "0,Right,0.5", "1,Left,0"]


def test_sim_params_validation():
    with pytest.raises(ValueError):
        SimParams(epsilon=1.5)
    with pytest.raises(ValueError):
        SimParams(episodes=0)
    assert SimParams(budget=5.0).resolve_budget(line(2)) == 5.0
    assert SimParams().resolve_budget(line(2, spacing=2.0)) == 80.0
