"""Turning an Exponential Caching algorithm into a list (MSSC) algorithm.

The list is kept in sync with the EC partitioning through the canonic
partitioning: position ``k`` belongs to chunk ``floor(log2 k)``.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from .core import (
    IncompatibleUniverse,
    Instance,
    InvalidPartitioning,
    InvariantViolation,
    Partitioning,
    Permutation,
    access_cost_mssc,
    kendall_tau,
    swap_cost,
)
from .ec import EcAlgorithm, ec_access_cost, ec_opt_movement_cost

Move = tuple[int, int, int]  # (element, from_chunk, to_chunk)


class DesyncError(RuntimeError):
    """The list no longer induces the partitioning the EC algorithm believes in."""


def canonic_partitioning(p: Permutation) -> Partitioning:
    n = p.n
    if (n + 1) & n:
        raise InvalidPartitioning(f"universe size {n} is not of the form 2^w - 1")
    return Partitioning(tuple(pos.bit_length() - 1 for pos in p.position))


def decompose_moves(before: Partitioning, after: Partitioning) -> list[list[Move]]:
    """Split the chunk changes into edge-disjoint closed walks over chunks.

    Each returned cycle is ``[(x_0, i_0, i_1), (x_1, i_1, i_2), ..., (x_{k-1}, i_{k-1}, i_0)]``.
    """
    if before.n != after.n:
        raise IncompatibleUniverse(f"partitionings over {before.n} and {after.n} elements")
    out_edges: dict[int, list[Move]] = defaultdict(list)
    remaining = 0
    for x, (a, b) in enumerate(zip(before.chunk, after.chunk)):
        if a != b:
            out_edges[a].append((x, a, b))
            remaining += 1
    # consume edges in ascending element id
    for edges in out_edges.values():
        edges.reverse()
    cycles = []
    while remaining:
        start_edge = min(
            (edges[-1] for edges in out_edges.values() if edges), key=lambda e: e[0]
        )
        start = start_edge[1]
        cycle = []
        v = start
        while True:
            edges = out_edges[v]
            if not edges:
                raise InvariantViolation("chunk move graph is not balanced")
            e = edges.pop()
            remaining -= 1
            cycle.append(e)
            v = e[2]
            if v == start:
                break
        if len(cycle) < 2:
            raise InvariantViolation("cycle of length 1 in chunk move graph")
        cycles.append(cycle)
    return cycles


def mimic_step(
    pi_prev: Permutation, p_prev: Partitioning, p_next: Partitioning
) -> tuple[Permutation, int, list[tuple[int, int]]]:
    """Reorder ``pi_prev`` so that it induces ``p_next``, swapping along each cycle."""
    if canonic_partitioning(pi_prev) != p_prev:
        raise DesyncError("canonic partitioning of the list differs from p_prev")
    order = list(pi_prev.order)
    script: list[tuple[int, int]] = []
    cost = 0
    for cycle in decompose_moves(p_prev, p_next):
        v = [pi_prev.position[x] for x, _, _ in cycle]
        for j in range(len(v) - 1, 0, -1):
            a, b = v[j], v[j - 1]
            order[a - 1], order[b - 1] = order[b - 1], order[a - 1]
            script.append((a, b))
            cost += swap_cost(a, b)
    pi_next = Permutation(tuple(order))
    if canonic_partitioning(pi_next) != p_next:
        raise InvariantViolation("mimicked list does not induce p_next")
    return pi_next, cost, script


@dataclass(frozen=True)
class WrappedStep:
    step: int
    mssc_access: int
    mssc_reorder: int
    kendall_tau: int
    script_len: int
    ec_access: int
    ec_movement: int  # net cost of p_{t-1} -> p_t
    ec_charged: int  # what the EC algorithm itself paid (>= net cost)
    perm_digest: str

    @property
    def mssc_cost(self) -> int:
        return self.mssc_access + self.mssc_reorder

    @property
    def ec_cost(self) -> int:
        return self.ec_access + self.ec_movement

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "mssc_access": self.mssc_access,
            "mssc_reorder": self.mssc_reorder,
            "kendall_tau": self.kendall_tau,
            "script_len": self.script_len,
            "ec_access": self.ec_access,
            "ec_movement": self.ec_movement,
            "ec_charged": self.ec_charged,
            "perm_digest": self.perm_digest,
        }


@dataclass
class WrappedRun:
    steps: list[WrappedStep] = field(default_factory=list)
    ec_traces: list = field(default_factory=list)
    permutations: list[Permutation] = field(default_factory=list)

    @property
    def total_access(self) -> int:
        return sum(s.mssc_access for s in self.steps)

    @property
    def total_reorder(self) -> int:
        return sum(s.mssc_reorder for s in self.steps)

    @property
    def total(self) -> int:
        return self.total_access + self.total_reorder

    @property
    def ec_total(self) -> int:
        return sum(s.ec_cost for s in self.steps)


def wrap_ec_algorithm(alg: EcAlgorithm, instance: Instance, keep_permutations: bool = False) -> WrappedRun:
    """Run ``alg`` on the EC image of ``instance`` and mirror it on the list.

    Every step checks list/partitioning synchronisation and that the list
    step costs at most four times the EC step.
    """
    pi = instance.initial
    p = canonic_partitioning(pi)
    alg.reset(p)
    run = WrappedRun()
    if keep_permutations:
        run.permutations.append(pi)
    for t, R in enumerate(instance.requests, start=1):
        access = access_cost_mssc(pi, R)
        ec_access = ec_access_cost(p, R)
        if not access < 2 * ec_access:
            raise InvariantViolation(f"step {t}: list access {access} >= 2 * {ec_access}")
        resp = alg.serve(R)
        if resp.access != ec_access:
            raise InvariantViolation(f"step {t}: EC algorithm reported access {resp.access} != {ec_access}")
        p_next = resp.partitioning
        ec_move = ec_opt_movement_cost(p, p_next)
        if resp.movement < ec_move:
            raise InvariantViolation(f"step {t}: EC algorithm under-reported movement")
        pi_next, reorder, script = mimic_step(pi, p, p_next)
        kt = kendall_tau(pi, pi_next)
        if kt > reorder:
            raise InvariantViolation(f"step {t}: Kendall tau {kt} exceeds script cost {reorder}")
        if access + reorder > 4 * (ec_access + ec_move):
            raise InvariantViolation(
                f"step {t}: list cost {access + reorder} > 4 * EC cost {ec_access + ec_move}"
            )
        run.steps.append(
            WrappedStep(t, access, reorder, kt, len(script), ec_access, ec_move,
                        resp.access + resp.movement, pi_next.digest())
        )
        if resp.trace is not None:
            run.ec_traces.append(resp.trace)
        if keep_permutations:
            run.permutations.append(pi_next)
        pi, p = pi_next, p_next
    return run
