"""Capacity-constrained matching as a transportation problem.

Maximize sum_i scores[i, pi(i)] subject to at most c_t refugees per location.
The constraint matrix is totally unimodular, so min-cost flow returns an
integral optimum.  Refugees are added one at a time and each is routed to the
sink along a shortest augmenting path (Dijkstra on reduced costs, run over
location nodes only), which keeps the partial flow optimal throughout.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from numba import njit


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AssignmentInstance:
    scores: np.ndarray
    capacities: np.ndarray

    def __post_init__(self):
        scores = np.array(self.scores, dtype=float)
        caps = np.array(self.capacities)
        if scores.ndim != 2:
            raise ValueError("scores must be an N x L matrix")
        if caps.shape != (scores.shape[1],):
            raise ValueError("need one capacity per location")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        if np.any(caps < 0) or np.any(caps != np.round(caps)):
            raise ValueError("capacities must be nonnegative integers")
        caps = caps.astype(np.int64)
        if caps.sum() < scores.shape[0]:
            raise InfeasibleError(f"total capacity {caps.sum()} < {scores.shape[0]} refugees")
        scores.setflags(write=False)
        caps.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "capacities", caps)

    @property
    def n_refugees(self) -> int:
        return self.scores.shape[0]

    @property
    def n_locations(self) -> int:
        return self.scores.shape[1]

    def to_csv(self, path=None) -> str:
        """Score rows followed by one ``capacities`` line."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in self.scores:
            w.writerow([repr(float(v)) for v in row])
        w.writerow(["capacities"] + [int(c) for c in self.capacities])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "AssignmentInstance":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[-1][0] != "capacities":
            raise ValueError("instance file must end with a capacities line")
        caps = [int(c) for c in rows[-1][1:]]
        scores = np.array([[float(v) for v in r] for r in rows[:-1]]).reshape(-1, len(caps))
        return cls(scores, np.array(caps))


@dataclass(frozen=True, eq=False)
class Matching:
    assignment: np.ndarray

    def __post_init__(self):
        a = np.array(self.assignment, dtype=np.int64)
        if a.ndim != 1:
            raise ValueError("assignment must be a vector")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    def __len__(self) -> int:
        return self.assignment.shape[0]

    def loads(self, n_locations: int) -> np.ndarray:
        return np.bincount(self.assignment, minlength=n_locations)

    def is_feasible(self, capacities) -> bool:
        caps = np.asarray(capacities)
        a = self.assignment
        if np.any((a < 0) | (a >= caps.shape[0])):
            return False
        return bool(np.all(self.loads(caps.shape[0]) <= caps))

    def objective(self, scores: np.ndarray) -> float:
        return float(np.sum(scores[np.arange(len(self)), self.assignment]))


@dataclass(frozen=True)
class Duals:
    """Node potentials of the final flow: refugees, locations, then the sink."""
    refugee: np.ndarray
    location: np.ndarray
    sink: float


@njit(cache=True, nogil=True)
def _members(assign, L):
    """Refugees grouped by location: (start offsets, flat index list)."""
    n = assign.shape[0]
    counts = np.zeros(L + 1, np.int64)
    for i in range(n):
        if assign[i] >= 0:
            counts[assign[i] + 1] += 1
    for t in range(L):
        counts[t + 1] += counts[t]
    flat = np.empty(counts[L], np.int64)
    fill = counts[:L].copy()
    for i in range(n):
        t = assign[i]
        if t >= 0:
            flat[fill[t]] = i
            fill[t] += 1
    return counts, flat


@njit(cache=True, nogil=True)
def _ssp(cost, caps):
    """Successive shortest paths; returns (assignment, location potentials, sink potential)."""
    N, L = cost.shape
    assign = np.full(N, -1, np.int64)
    load = np.zeros(L, np.int64)
    pot = np.zeros(L)
    pot_sink = 0.0
    dist = np.empty(L)
    done = np.empty(L, np.bool_)
    pred_loc = np.empty(L, np.int64)
    pred_ref = np.empty(L, np.int64)
    inf = np.inf
    for r in range(N):
        pot_r = -inf
        for t in range(L):
            pot_r = max(pot_r, pot[t] - cost[r, t])
        for t in range(L):
            dist[t] = cost[r, t] + pot_r - pot[t]
            done[t] = False
            pred_loc[t] = -1
            pred_ref[t] = r
        starts, flat = _members(assign, L)
        dist_sink = inf
        end = -1
        while True:
            u = -1
            best = inf
            for t in range(L):
                if not done[t] and dist[t] < best:
                    best = dist[t]
                    u = t
            if u < 0 or best >= dist_sink:
                break
            done[u] = True
            if load[u] < caps[u]:
                d = best + pot[u] - pot_sink
                if d < dist_sink:
                    dist_sink = d
                    end = u
            for k in range(starts[u], starts[u + 1]):
                j = flat[k]
                base = best - cost[j, u] + pot[u]
                for v in range(L):
                    if done[v]:
                        continue
                    d = base + cost[j, v] - pot[v]
                    if d < dist[v]:
                        dist[v] = d
                        pred_loc[v] = u
                        pred_ref[v] = j
        # augment along the path ending at `end`
        load[end] += 1
        v = end
        while pred_loc[v] >= 0:
            assign[pred_ref[v]] = v
            v = pred_loc[v]
        assign[r] = v
        for t in range(L):
            pot[t] += min(dist[t], dist_sink)
        pot_sink += dist_sink
    return assign, pot, pot_sink


@njit(cache=True, nogil=True)
def _find_cycle(cost, caps, assign, load, pot, pot_sink, i, start, goal, tol, fixed_upto):
    """BFS over tight residual arcs from location `start` to `goal`.

    Nodes 0..L-1 are locations, L is the sink.  Returns predecessor arrays
    (node, refugee) or an empty array when `goal` is unreachable.
    """
    N, L = cost.shape
    starts, flat = _members(assign, L)
    prev = np.full(L + 1, -2, np.int64)
    via = np.full(L + 1, -1, np.int64)
    prev[start] = -1
    queue = np.empty(L + 1, np.int64)
    head = 0
    tail = 0
    queue[tail] = start
    tail += 1
    while head < tail:
        u = queue[head]
        head += 1
        if u == goal:
            return prev, via
        if u == L:
            for v in range(L):
                if prev[v] == -2 and load[v] > 0 and abs(pot_sink - pot[v]) <= tol:
                    prev[v] = L
                    queue[tail] = v
                    tail += 1
            continue
        if prev[L] == -2 and load[u] < caps[u] and abs(pot[u] - pot_sink) <= tol:
            prev[L] = u
            queue[tail] = L
            tail += 1
        for k in range(starts[u], starts[u + 1]):
            j = flat[k]
            if j <= fixed_upto or j == i:
                continue
            base = pot[u] - cost[j, u]
            for v in range(L):
                if prev[v] == -2 and abs(cost[j, v] - pot[v] + base) <= tol:
                    prev[v] = u
                    via[v] = j
                    queue[tail] = v
                    tail += 1
    return np.empty(0, np.int64), np.empty(0, np.int64)


@njit(cache=True, nogil=True)
def _lexicographic(cost, caps, assign, pot, pot_sink, tol):
    """Smallest assignment vector among optima, fixing refugees in index order."""
    N, L = cost.shape
    load = np.zeros(L, np.int64)
    for i in range(N):
        load[assign[i]] += 1
    for i in range(N):
        a = assign[i]
        base = pot[a] - cost[i, a]
        for t in range(a):
            if abs(pot[t] - cost[i, t] - base) > tol:
                continue
            prev, via = _find_cycle(cost, caps, assign, load, pot, pot_sink, i, t, a, tol, i - 1)
            if prev.shape[0] == 0:
                continue
            # apply the refugee moves on the cycle; sink detours only shift loads
            v = a
            while v != t:
                u = prev[v]
                if u != L and v != L:
                    assign[via[v]] = v
                v = u
            assign[i] = t
            load[:] = 0
            for k in range(N):
                load[assign[k]] += 1
            break
    return assign


def _prepare(instance: AssignmentInstance):
    s = instance.scores
    cost = np.ascontiguousarray(s.max() - s) if s.size else np.zeros_like(s)
    return cost, np.ascontiguousarray(instance.capacities)


def solve_with_duals(instance: AssignmentInstance, lexicographic: bool = True):
    """Optimal matching, its objective and the certifying potentials."""
    N, L = instance.scores.shape
    if N == 0:
        return Matching(np.zeros(0, np.int64)), 0.0, Duals(np.zeros(0), np.zeros(L), 0.0)
    cost, caps = _prepare(instance)
    assign, pot, pot_sink = _ssp(cost, caps)
    if lexicographic:
        tol = 1e-9 * max(1.0, float(np.abs(instance.scores).max()))
        assign = _lexicographic(cost, caps, assign, pot, pot_sink, tol)
    matching = Matching(assign)
    pot_ref = pot[assign] - cost[np.arange(N), assign]
    return matching, matching.objective(instance.scores), Duals(pot_ref, pot, float(pot_sink))


def solve(instance: AssignmentInstance) -> tuple[Matching, float]:
    """Exact maximizer of total score under capacities; lexicographic tie-break."""
    matching, obj, _ = solve_with_duals(instance)
    return matching, obj


def min_reduced_cost(instance: AssignmentInstance, matching: Matching, duals: Duals) -> float:
    """Smallest reduced cost over residual arcs; nonnegative certifies optimality."""
    cost, caps = _prepare(instance)
    N, L = cost.shape
    a = matching.assignment
    red = cost + duals.refugee[:, None] - duals.location[None, :]
    forward = np.ones_like(red, dtype=bool)
    forward[np.arange(N), a] = False
    vals = [red[forward]]
    vals.append(-red[np.arange(N), a])  # backward location -> refugee arcs
    load = matching.loads(L)
    vals.append((duals.location - duals.sink)[load < caps])
    vals.append((duals.sink - duals.location)[load > 0])
    flat = np.concatenate([np.ravel(v) for v in vals])
    return float(flat.min()) if flat.size else 0.0


def capacities_from_observed(locations, n_locations: int) -> np.ndarray:
    """c_t = number of test records logged at t."""
    return np.bincount(np.asarray(locations, dtype=np.int64), minlength=n_locations)
