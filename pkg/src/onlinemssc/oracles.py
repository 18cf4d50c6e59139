"""Exact offline optima by dynamic programming, plus the online list baselines MAE and MTF."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .core import (
    Instance,
    InvalidRequest,
    Partitioning,
    Permutation,
    Request,
    access_cost_mssc,
    kendall_tau,
    kendall_tau_naive,
)
from .ec import ec_access_cost, ec_opt_movement_cost
from .reduction import canonic_partitioning

DEFAULT_MSSC_MAX_STATES = 5040
DEFAULT_EC_MAX_STATES = 5000
DEFAULT_STATIC_MAX_N = 7



class CapacityError(RuntimeError):
    """The exact solver refuses an instance whose state space exceeds its limit."""


@dataclass
class OptTrace:
    states: list  # Permutation or Partitioning, index 0 is the initial state
    per_step_costs: list[tuple[int, int]]
    total: int
    solver: str = "dp-exact"
    state_space: int = 0

    def to_dict(self) -> dict:
        return {
            "solver": self.solver,
            "state_space": self.state_space,
            "total": self.total,
            "per_step": [list(c) for c in self.per_step_costs],
            "states": [
                list(s.order) if isinstance(s, Permutation) else list(s.chunk) for s in self.states
            ],
        }


class _PermSpace:
    """All permutations of ``range(n)`` in lexicographic order of their list orders."""

    def __init__(self, n: int):
        self.n = n
        self.orders = np.array(list(itertools.permutations(range(n))), dtype=np.int64).reshape(-1, n)
        N = len(self.orders)
        self.positions = np.empty_like(self.orders)
        rows = np.arange(N)[:, None]
        self.positions[rows, self.orders] = np.arange(1, n + 1)
        masks = np.zeros(N, dtype=np.int64)
        for bit, (x, y) in enumerate(itertools.combinations(range(n), 2)):
            masks |= (self.positions[:, x] < self.positions[:, y]).astype(np.int64) << bit
        self.masks = masks
        # code of a permutation -> row index
        weights = n ** np.arange(n - 1, -1, -1, dtype=np.int64)
        self._weights = weights
        codes = self.orders @ weights
        self._index = {int(c): i for i, c in enumerate(codes)}
        self.neighbors = []
        for k in range(n - 1):
            swapped = self.orders.copy()
            swapped[:, [k, k + 1]] = swapped[:, [k + 1, k]]
            self.neighbors.append(np.array([self._index[int(c)] for c in swapped @ weights]))

    def __len__(self) -> int:
        return len(self.orders)

    def index(self, p: Permutation) -> int:
        return self._index[int(np.array(p.order) @ self._weights)]

    def perm(self, i: int) -> Permutation:
        return Permutation(tuple(int(v) for v in self.orders[i]))

    def access(self, R: Request) -> np.ndarray:
        return self.positions[:, list(R)].min(axis=1)

    def kt_row(self, i: int) -> np.ndarray:
        return np.bitwise_count(self.masks ^ self.masks[i]).astype(np.int64)

    def distance_transform(self, h: np.ndarray) -> np.ndarray:
        """``out[i] = min_j kt(i, j) + h[j]`` via relaxation over adjacent transpositions."""
        f = h.copy()
        while True:
            g = f
            for nb in self.neighbors:
                g = np.minimum(g, f[nb] + 1)
            if np.array_equal(g, f):
                return f
            f = g


@lru_cache(maxsize=8)
def _perm_space(n: int) -> _PermSpace:
    return _PermSpace(n)


def opt_mssc_dynamic(instance: Instance, max_states: int = DEFAULT_MSSC_MAX_STATES) -> OptTrace:
    """Exact dynamic list optimum.

    Cost-to-go tables are computed backwards; the trace is then rebuilt forwards,
    always taking the lexicographically smallest optimal next list.
    """
    n = instance.n
    if math.factorial(n) > max_states:
        raise CapacityError(f"{n}! = {math.factorial(n)} permutations exceed the limit {max_states}")
    space = _perm_space(n)
    m = instance.m
    acc = [space.access(R) for R in instance.requests]
    h = [None] * (m + 1)
    h[m] = np.zeros(len(space), dtype=np.int64)
    for t in range(m, 0, -1):
        h[t - 1] = acc[t - 1] + space.distance_transform(h[t])
    cur = space.index(instance.initial)
    states = [instance.initial]
    per_step = []
    for t in range(1, m + 1):
        a = int(acc[t - 1][cur])
        row = space.kt_row(cur)
        nxt = int(np.argmin(row + h[t]))
        per_step.append((a, int(row[nxt])))
        states.append(space.perm(nxt))
        cur = nxt
    total = int(h[0][space.index(instance.initial)])
    if sum(a + b for a, b in per_step) != total:
        raise AssertionError("reconstructed trace does not match DP value")
    return OptTrace(states, per_step, total, "dp-exact", len(space))


def count_valid_partitionings(n: int) -> int:
    w = n.bit_length()
    count, left = 1, n
    for i in range(w):
        count *= math.comb(left, 1 << i)
        left -= 1 << i
    return count


def valid_partitionings(n: int) -> list[tuple[int, ...]]:
    """All valid chunk assignments of ``range(n)`` in lexicographic order."""
    w = n.bit_length()
    out = []

    def rec(i: int, free: tuple[int, ...], chunk: list[int]):
        if i == w:
            out.append(tuple(chunk))
            return
        for chosen in itertools.combinations(free, 1 << i):
            for x in chosen:
                chunk[x] = i
            rest = tuple(x for x in free if x not in chosen)
            rec(i + 1, rest, chunk)

    rec(0, tuple(range(n)), [0] * n)
    out.sort()
    return out


@lru_cache(maxsize=4)
def _ec_space(n: int):
    chunks = np.array(valid_partitionings(n), dtype=np.int64)
    sizes = 1 << chunks
    moved = chunks[:, None, :] != chunks[None, :, :]
    move = np.where(moved, np.maximum(sizes[:, None, :], sizes[None, :, :]), 0).sum(axis=2)
    index = {tuple(int(v) for v in row): i for i, row in enumerate(chunks)}
    return chunks, sizes, move, index


def opt_ec_dynamic(instance: Instance, max_states: int = DEFAULT_EC_MAX_STATES) -> OptTrace:
    """Exact EC optimum starting from the canonic partitioning of the initial list."""
    n = instance.n
    N = count_valid_partitionings(n)
    if N > max_states:
        raise CapacityError(f"{N} valid partitionings exceed the limit {max_states}")
    chunks, sizes, move, index = _ec_space(n)
    p0 = canonic_partitioning(instance.initial)
    m = instance.m
    acc = [sizes[:, list(R)].min(axis=1) for R in instance.requests]
    h = [None] * (m + 1)
    h[m] = np.zeros(N, dtype=np.int64)
    for t in range(m, 0, -1):
        h[t - 1] = acc[t - 1] + (move + h[t][None, :]).min(axis=1)
    cur = index[p0.chunk]
    states = [p0]
    per_step = []
    for t in range(1, m + 1):
        a = int(acc[t - 1][cur])
        nxt = int(np.argmin(move[cur] + h[t]))
        per_step.append((a, int(move[cur, nxt])))
        states.append(Partitioning(tuple(int(v) for v in chunks[nxt])))
        cur = nxt
    total = int(h[0][index[p0.chunk]])
    if sum(a + b for a, b in per_step) != total:
        raise AssertionError("reconstructed trace does not match DP value")
    return OptTrace(states, per_step, total, "dp-exact", N)


@dataclass(frozen=True)
class StaticOpt:
    permutation: Permutation
    total: int
    exact: bool
    solver: str


def _static_cost(p: Permutation, requests: Sequence[Request]) -> int:
    return sum(access_cost_mssc(p, R) for R in requests)


def opt_mssc_static(
    instance: Instance, exhaustive_max_n: int = DEFAULT_STATIC_MAX_N, allow_heuristic: bool = True
) -> StaticOpt:
    """Best single list; exhaustive up to ``exhaustive_max_n`` elements, greedy beyond."""
    n = instance.n
    if n <= exhaustive_max_n:
        space = _perm_space(n)
        costs = np.zeros(len(space), dtype=np.int64)
        for R in instance.requests:
            costs += space.access(R)
        best = int(np.argmin(costs))
        return StaticOpt(space.perm(best), int(costs[best]), True, "exhaustive")
    if not allow_heuristic:
        raise CapacityError(f"n = {n} exceeds the exhaustive static limit {exhaustive_max_n}")
    p = greedy_static_order(instance)
    return StaticOpt(p, _static_cost(p, instance.requests), False, "greedy-heuristic")


def greedy_static_order(instance: Instance) -> Permutation:
    """Classic greedy: repeatedly place the element hitting the most uncovered requests."""
    uncovered = [set(R) for R in instance.requests]
    placed: list[int] = []
    left = set(range(instance.n_raw))
    while left and uncovered:
        hits = {x: 0 for x in left}
        for R in uncovered:
            for x in R:
                if x in hits:
                    hits[x] += 1
        x = min(left, key=lambda e: (-hits[e], instance.initial.position[e]))
        if hits[x] == 0:
            break
        placed.append(x)
        left.discard(x)
        uncovered = [R for R in uncovered if x not in R]
    placed += sorted(left, key=lambda e: instance.initial.position[e])
    return Permutation(tuple(placed) + tuple(range(instance.n_raw, instance.n)))


def brute_force_mssc_dynamic(instance: Instance) -> int:
    """Minimum over every sequence of lists, evaluated with the O(n^2) pair count."""
    perms = [Permutation(o) for o in itertools.permutations(range(instance.n))]
    best = None
    for seq in itertools.product(perms, repeat=instance.m):
        prev, cost = instance.initial, 0
        for R, nxt in zip(instance.requests, seq):
            cost += access_cost_mssc(prev, R) + kendall_tau_naive(prev, nxt)
            prev = nxt
        if best is None or cost < best:
            best = cost
    return 0 if best is None else best


def brute_force_ec_dynamic(instance: Instance) -> int:
    parts = [Partitioning(c) for c in valid_partitionings(instance.n)]
    p0 = canonic_partitioning(instance.initial)
    best = None
    for seq in itertools.product(parts, repeat=instance.m):
        prev, cost = p0, 0
        for R, nxt in zip(instance.requests, seq):
            cost += ec_access_cost(prev, R) + ec_opt_movement_cost(prev, nxt)
            prev = nxt
        if best is None or cost < best:
            best = cost
    return 0 if best is None else best


def mae_step(pi: Permutation, R: Request) -> tuple[Permutation, int, int]:
    """Move-All-Equally: every requested element advances ``d - 1`` positions.

    Members are taken out and re-inserted front-most first at their targets
    ``max(1, p - (d - 1))``; the other elements keep their relative order.
    """
    members = sorted(R, key=lambda x: pi.position[x])
    if not members:
        raise InvalidRequest("request set is empty")
    d = pi.position[members[0]]
    member_set = set(members)
    rest = [x for x in pi.order if x not in member_set]
    for x in members:
        target = max(1, pi.position[x] - (d - 1))
        rest.insert(target - 1, x)
    new = Permutation(tuple(rest))
    return new, d, kendall_tau(pi, new)


def mtf_step(pi: Permutation, R: Request) -> tuple[Permutation, int, int]:
    """Move the front-most requested element to the front."""
    if not R:
        raise InvalidRequest("request set is empty")
    x = min(R, key=lambda e: pi.position[e])
    p = pi.position[x]
    order = (x,) + tuple(e for e in pi.order if e != x)
    return Permutation(order), p, p - 1


ListStep = Callable[[Permutation, Request], tuple[Permutation, int, int]]


@dataclass
class ListRun:
    per_step: list[tuple[int, int]] = field(default_factory=list)
    states: list[Permutation] = field(default_factory=list)

    @property
    def total_access(self) -> int:
        return sum(a for a, _ in self.per_step)

    @property
    def total_reorder(self) -> int:
        return sum(b for _, b in self.per_step)

    @property
    def total(self) -> int:
        return self.total_access + self.total_reorder


def run_list_algorithm(step: ListStep, instance: Instance) -> ListRun:
    pi = instance.initial
    run = ListRun(states=[pi])
    for R in instance.requests:
        pi, a, b = step(pi, R)
        run.per_step.append((a, b))
        run.states.append(pi)
    return run
