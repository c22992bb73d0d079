"""Q-learning over the navigation graph, plus the baseline exploration strategies."""

import csv
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .mapping import ACTIONS


class IsolatedRegion(LookupError):
    pass


class DisconnectedGraph(ValueError):
    pass


@dataclass
class SimParams:
    episodes: int = 1000
    budget: float | str = "auto"   # metres per episode, or "auto"
    epsilon: float = 0.1
    random_rate: float = 0.1
    gamma: float = 0.9
    reward_on_arrival: bool = False
    budget_edges: float = 40.0     # "auto" budget in mean edge weights
    budget_max: float = 1000.0

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be positive")
        for name in ("epsilon", "random_rate", "gamma"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def resolve_budget(self, graph) -> float:
        if self.budget != "auto":
            b = float(self.budget)
            if b <= 0:
                raise ValueError("budget must be positive")
            return b
        w = [wt for slots in graph.edges.values() for _, wt in slots.values()]
        if not w:
            return self.budget_max
        return min(self.budget_max, self.budget_edges * float(np.mean(w)))


class QTable:
    """Q(s, a) for the (region, action) pairs of a graph; absent entries read as 0."""

    def __init__(self, graph=None, gamma: float = 0.9):
        self.gamma = gamma
        self.values: dict = {}
        self._actions: dict = {}
        if graph is not None:
            self.sync(graph)

    def sync(self, graph):
        """Follow a changed graph: keep surviving entries, add new ones at 0, drop the rest."""
        self._actions = {rid: graph.actions(rid) for rid in graph.nodes}
        self.values = {(s, a): self.values.get((s, a), 0.0) for s, acts in self._actions.items() for a in acts}

    def actions(self, rid):
        if rid not in self._actions:
            raise IsolatedRegion(rid)
        return self._actions[rid]

    def get(self, rid, action):
        return self.values.get((rid, action), 0.0)

    def max(self, rid):
        acts = self._actions.get(rid, [])
        return max((self.values[(rid, a)] for a in acts), default=0.0)

    def greedy(self, rid):
        acts = self.actions(rid)
        if not acts:
            raise IsolatedRegion(rid)
        vals = [self.values[(rid, a)] for a in acts]
        return acts[int(np.argmax(vals))]  # first maximum in action order

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["region", "action", "value"])
            for (rid, a), v in sorted(self.values.items()):
                wr.writerow([rid, ACTIONS[a], f"{v:.6g}"])


def graph_arrays(graph):
    ids = sorted(graph.nodes)
    index = {rid: i for i, rid in enumerate(ids)}
    nbr = np.full((len(ids), 4), -1, np.int64)
    wt = np.zeros((len(ids), 4))
    for rid, slots in graph.edges.items():
        for a, (b, w) in slots.items():
            nbr[index[rid], a] = index[b]
            wt[index[rid], a] = w
    return ids, index, nbr, wt


@njit(cache=True)
def _train(nbr, wt, reward, start, episodes, budget, eps, gamma, on_arrival, seed):
    np.random.seed(seed)
    n = nbr.shape[0]
    q = np.zeros((n, 4))
    avail = np.empty(4, np.int64)
    for _ in range(episodes):
        s = start
        dist = 0.0
        while dist <= budget:
            k = 0
            for a in range(4):
                if nbr[s, a] >= 0:
                    avail[k] = a
                    k += 1
            if k == 0:
                break
            if eps > 0.0 and np.random.random() < eps:
                a = avail[np.random.randint(k)]
            else:
                a = avail[0]
                for j in range(1, k):
                    if q[s, avail[j]] > q[s, a]:
                        a = avail[j]
            s2 = nbr[s, a]
            best = 0.0
            first = True
            for b in range(4):
                if nbr[s2, b] >= 0 and (first or q[s2, b] > best):
                    best = q[s2, b]
                    first = False
            r = reward[s2] if on_arrival else reward[s]
            q[s, a] = r + gamma * best
            dist += wt[s, a]
            s = s2
    return q


def train_q(graph, rewards: dict, start, p: SimParams, rng) -> QTable:
    """Batch of simulated episodes on a frozen graph and reward map."""
    table = QTable(graph, p.gamma)
    if start not in graph.nodes:
        raise KeyError(f"unknown start region {start}")
    if not graph.actions(start):
        return table
    ids, index, nbr, wt = graph_arrays(graph)
    reward = np.array([float(rewards.get(r, 0.0)) for r in ids])
    seed = int(rng.integers(0, 2**31 - 1))
    q = _train(nbr, wt, reward, index[start], int(p.episodes), p.resolve_budget(graph), float(p.epsilon),
               float(p.gamma), bool(p.reward_on_arrival), seed)
    for (rid, a) in table.values:
        table.values[(rid, a)] = float(q[index[rid], a])
    return table


def value_iteration(graph, rewards: dict, gamma: float = 0.9, reward_on_arrival: bool = False, tol: float = 1e-12):
    """Exact fixed point of the same update on the deterministic graph MDP; returns {(rid, a): Q}."""
    ids, index, nbr, _ = graph_arrays(graph)
    reward = np.array([float(rewards.get(r, 0.0)) for r in ids])
    has = nbr >= 0
    q = np.zeros(nbr.shape)
    for _ in range(100_000):
        v = np.where(has, q, -np.inf).max(axis=1)
        v[~has.any(axis=1)] = 0.0
        tgt = np.where(has, nbr, 0)
        r = reward[tgt] if reward_on_arrival else np.repeat(reward[:, None], 4, axis=1)
        new = np.where(has, r + gamma * v[tgt], 0.0)
        if np.abs(new - q).max() < tol:
            q = new
            break
        q = new
    return {(rid, a): float(q[index[rid], a]) for rid in ids for a in range(4) if has[index[rid], a]}


def _available(graph_or_q, rid):
    acts = graph_or_q.actions(rid)
    if not acts:
        raise IsolatedRegion(rid)
    return acts


def next_action(q: QTable, current, rng, random_rate: float = 0.1) -> int:
    acts = _available(q, current)
    if rng.random() < random_rate:
        return acts[int(rng.integers(len(acts)))]
    return q.greedy(current)


def random_action(graph, current, rng) -> int:
    acts = _available(graph, current)
    return acts[int(rng.integers(len(acts)))]


def schmidhuber_step(q: QTable, graph, rewards: dict, current, rng, previous=None,
                     epsilon: float = 0.5, reward_on_arrival: bool = False) -> int:
    """One update for the transition ``previous`` = (region, action) that led to ``current``, then act."""
    if previous is not None:
        s, a = previous
        if (s, a) in q.values:
            r = rewards.get(current if reward_on_arrival else s, 0.0)
            q.values[(s, a)] = r + q.gamma * q.max(current)
    return next_action(q, current, rng, epsilon)


def shortest_distances(graph):
    ids = sorted(graph.nodes)
    index = {rid: i for i, rid in enumerate(ids)}
    rows, cols, w = [], [], []
    for (a, b), wt in graph.undirected().items():
        rows.append(index[a])
        cols.append(index[b])
        w.append(wt)
    m = csr_matrix((w, (rows, cols)), shape=(len(ids), len(ids)))
    return ids, shortest_path(m, directed=False)


def tour_cost(order, dist) -> float:
    if len(order) < 2:
        return 0.0
    return float(sum(dist[order[i], order[(i + 1) % len(order)]] for i in range(len(order))))


def _two_opt(order, dist):
    n = len(order)
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            for j in range(i + 2, n if i > 0 else n - 1):
                a, b = order[i], order[i + 1]
                c, d = order[j], order[(j + 1) % n]
                if dist[a, c] + dist[b, d] < dist[a, b] + dist[c, d] - 1e-12:
                    order[i + 1:j + 1] = order[i + 1:j + 1][::-1]
                    improved = True
    return order


def uniform_tour(graph, within=None) -> list:
    """Closed covering tour over all regions: nearest neighbour then 2-opt on path distances.

    With ``within`` the tour covers only the connected component holding that
    region (and starts there); otherwise a disconnected graph is an error.
    """
    ids, dist = shortest_distances(graph)
    if not ids:
        return []
    start = 0
    if within is not None:
        start = ids.index(within)
        keep = np.flatnonzero(np.isfinite(dist[start]))
        ids = [ids[k] for k in keep]
        dist = dist[np.ix_(keep, keep)]
        start = ids.index(within)
    if np.isinf(dist).any():
        raise DisconnectedGraph("navigation graph is not connected")
    order = [start]
    left = set(range(len(ids))) - {start}
    while left:
        last = order[-1]
        nxt = min(left, key=lambda k: (dist[last, k], k))
        order.append(nxt)
        left.remove(nxt)
    order = _two_opt(order, dist)
    return [ids[k] for k in order]


def write_tour(path, tour):
    with open(path, "w") as fh:
        fh.write("region\n")
        for rid in tour:
            fh.write(f"{rid}\n")
