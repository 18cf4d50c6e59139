"""Exponential Caching engine: cost semantics, FETCH and the lazy LMA algorithm."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

from .core import (
    IncompatibleUniverse,
    InvalidRequest,
    InvariantViolation,
    Partitioning,
    Request,
    digest64,
    make_request,
)

RNG_NAME = "python-mt19937-randbelow/v1"


def derive_seed(master_seed: int, *path: object) -> int:
    """64-bit seed for an independent stream identified by ``path``."""
    key = ":".join([str(int(master_seed))] + [str(p) for p in path]).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big")


def make_rng(seed: int) -> random.Random:
    return random.Random(seed & 0xFFFFFFFFFFFFFFFF)


def chunk_size(p: Partitioning, x: int) -> int:
    return 1 << p.chunk[x]


def ec_access_cost(p: Partitioning, R: Iterable[int]) -> int:
    sizes = [1 << p.chunk[x] for x in R]
    if not sizes:
        raise InvalidRequest("request set is empty")
    return min(sizes)


def ec_opt_movement_cost(before: Partitioning, after: Partitioning) -> int:
    if before.n != after.n:
        raise IncompatibleUniverse(f"partitionings over {before.n} and {after.n} elements")
    return sum(
        1 << max(a, b) for a, b in zip(before.chunk, after.chunk) if a != b
    )


@dataclass(frozen=True)
class FetchRecord:
    z: int
    level: int
    budget_before: int
    moved: tuple[tuple[int, int, int], ...]  # (element, from_chunk, to_chunk)
    cost: int

    def to_dict(self) -> dict:
        return {
            "z": self.z,
            "level": self.level,
            "budget_before": self.budget_before,
            "moved": [[e, a, b, 1 << max(a, b)] for e, a, b in self.moved],
            "cost": self.cost,
        }

    @classmethod
    def from_dict(cls, d: dict) -> FetchRecord:
        return cls(
            d["z"], d["level"], d["budget_before"],
            tuple((e, a, b) for e, a, b, *_ in d["moved"]), d["cost"],
        )


@dataclass(frozen=True)
class EcCostBreakdown:
    access: int
    movement: int
    fetch_count: int

    @property
    def total(self) -> int:
        return self.access + self.movement


@dataclass(frozen=True)
class StepTrace:
    step: int
    request: Request
    x: int
    access: int
    fetches: tuple[FetchRecord, ...]  # fetches[0] is fetch(x)
    increments: tuple[tuple[int, int], ...]
    movement: int
    budgets_digest: str
    partition_digest: str

    @property
    def loop_fetches(self) -> tuple[FetchRecord, ...]:
        return self.fetches[1:]

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "request": list(self.request),
            "x": self.x,
            "access": self.access,
            "fetches": [f.to_dict() for f in self.fetches],
            "increments": [list(t) for t in self.increments],
            "movement": self.movement,
            "budgets_digest": self.budgets_digest,
            "partition_digest": self.partition_digest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> StepTrace:
        return cls(
            d["step"], tuple(d["request"]), d["x"], d["access"],
            tuple(FetchRecord.from_dict(f) for f in d["fetches"]),
            tuple((y, v) for y, v in d["increments"]),
            d["movement"], d["budgets_digest"], d["partition_digest"],
        )


@dataclass
class EcState:
    chunk: list[int]
    budget: list[int]
    rng: random.Random
    step_index: int = 0

    @classmethod
    def initial(cls, p: Partitioning, seed: int) -> EcState:
        return cls(list(p.chunk), [0] * p.n, make_rng(seed))

    @property
    def partitioning(self) -> Partitioning:
        return Partitioning(tuple(self.chunk))

    def copy(self) -> EcState:
        rng = random.Random()
        rng.setstate(self.rng.getstate())
        return EcState(list(self.chunk), list(self.budget), rng, self.step_index)

    def controlled(self) -> set[int]:
        return {z for z, (b, c) in enumerate(zip(self.budget, self.chunk)) if b <= 1 << c}


def _fetch(state: EcState, z: int) -> FetchRecord:
    chunk = state.chunk
    level = chunk[z]
    b_before = state.budget[z]
    moved: list[tuple[int, int, int]] = []
    cost = 0
    if level > 0:
        members: list[list[int]] = [[] for _ in range(level)]
        for e, c in enumerate(chunk):
            if c < level:
                members[c].append(e)
        # all draws happen before any element moves
        picks = [S[state.rng.randrange(len(S))] for S in members]
        chunk[z] = 0
        moved.append((z, level, 0))
        cost += 1 << level
        for i, a in enumerate(picks):
            chunk[a] = i + 1
            moved.append((a, i, i + 1))
            cost += 1 << (i + 1)
    state.budget[z] = 0
    return FetchRecord(z, level, b_before, tuple(moved), cost)


def fetch(state: EcState, z: int) -> tuple[EcState, int, tuple[tuple[int, int, int], ...]]:
    """Move ``z`` to chunk 0, pushing one random element of every lower chunk up by one."""
    new = state.copy()
    rec = _fetch(new, z)
    return new, rec.cost, rec.moved


def _serve(state: EcState, R: Request) -> tuple[EcCostBreakdown, StepTrace]:
    chunk, budget = state.chunk, state.budget
    x = min(R, key=lambda e: (chunk[e], e))
    level_x = chunk[x]
    access = 1 << level_x
    fetches = [_fetch(state, x)]
    inc = 1 << level_x  # request-time chunk of x, not the post-fetch one
    increments = []
    for y in R:
        if y != x:
            budget[y] += inc
            increments.append((y, inc))
    while True:
        pending = [z for z in range(len(chunk)) if budget[z] >= 1 << chunk[z]]
        if not pending:
            break
        z = min(pending, key=lambda e: (chunk[e], e))
        fetches.append(_fetch(state, z))
        if len(fetches) > len(R):
            raise InvariantViolation("LMA while loop exceeded |R| - 1 fetches")
    movement = sum(f.cost for f in fetches)
    state.step_index += 1
    trace = StepTrace(
        step=state.step_index,
        request=R,
        x=x,
        access=access,
        fetches=tuple(fetches),
        increments=tuple(increments),
        movement=movement,
        budgets_digest=digest64(budget),
        partition_digest=digest64(chunk),
    )
    return EcCostBreakdown(access, movement, len(fetches)), trace


def lma_step(state: EcState, R: Iterable[int]) -> tuple[EcState, EcCostBreakdown, StepTrace]:
    """One step of Lazy-Move-All-To-Front. The input state is left untouched."""
    R = make_request(R, len(state.chunk))
    new = state.copy()
    cost, trace = _serve(new, R)
    return new, cost, trace


@dataclass(frozen=True)
class EcResponse:
    partitioning: Partitioning
    access: int
    movement: int
    trace: StepTrace | None = None


class EcAlgorithm(Protocol):
    name: str

    def reset(self, p0: Partitioning) -> None: ...

    def serve(self, R: Request) -> EcResponse: ...


class Lma:
    """LMA as a stateful online EC algorithm (in-place stepping)."""

    name = "lma"

    def __init__(self, seed: int):
        self.seed = seed
        self.state: EcState | None = None

    def reset(self, p0: Partitioning) -> None:
        self.state = EcState.initial(p0, self.seed)

    def serve(self, R: Request) -> EcResponse:
        cost, trace = _serve(self.state, make_request(R, len(self.state.chunk)))
        return EcResponse(self.state.partitioning, cost.access, cost.movement, trace)


class StaticEc:
    """Never moves anything."""

    name = "static-ec"

    def reset(self, p0: Partitioning) -> None:
        self.p = p0

    def serve(self, R: Request) -> EcResponse:
        return EcResponse(self.p, ec_access_cost(self.p, R), 0)


class ScheduledEc:
    """Replays a precomputed partitioning sequence ``p_1..p_m`` (offline solutions)."""

    name = "scheduled-ec"

    def __init__(self, schedule: Sequence[Partitioning]):
        self.schedule = list(schedule)

    def reset(self, p0: Partitioning) -> None:
        self.p = p0
        self.t = 0

    def serve(self, R: Request) -> EcResponse:
        access = ec_access_cost(self.p, R)
        nxt = self.schedule[self.t]
        self.t += 1
        movement = ec_opt_movement_cost(self.p, nxt)
        self.p = nxt
        return EcResponse(nxt, access, movement)


def run_lma(p0: Partitioning, requests: Iterable[Request], seed: int) -> list[StepTrace]:
    state = EcState.initial(p0, seed)
    return [_serve(state, make_request(R, p0.n))[1] for R in requests]


class LmaReplay:
    """Re-executes a stored LMA trace, checking engine invariants as it goes.

    Random draws are taken from the trace, so no RNG is needed.  Subclasses
    hook into ``on_step_start``, ``on_before_fetch``, ``on_after_increments``
    and ``on_step_end`` to audit intermediate states.
    """

    def __init__(self, p0: Partitioning):
        self.chunk = list(p0.chunk)
        self.budget = [0] * p0.n
        self.w = p0.w

    def _check_budgets(self, factor: int, where: str) -> None:
        for z, (b, c) in enumerate(zip(self.budget, self.chunk)):
            if b > factor << c:
                raise InvariantViolation(f"{where}: b({z})={b} > {factor}*2^{c}")

    def _check_valid(self) -> None:
        counts = [0] * self.w
        for c in self.chunk:
            counts[c] += 1
        if any(cnt != 1 << i for i, cnt in enumerate(counts)):
            raise InvariantViolation(f"invalid partitioning {self.chunk}")

    def _apply_fetch(self, f: FetchRecord) -> None:
        chunk = self.chunk
        z = f.z
        if chunk[z] != f.level or self.budget[z] != f.budget_before:
            raise InvariantViolation(f"fetch({z}) record does not match replayed state")
        controlled_before = {e for e in range(len(chunk)) if self.budget[e] <= 1 << chunk[e]}
        if f.level == 0:
            if f.moved:
                raise InvariantViolation("fetch of a chunk-0 element must not move anything")
        else:
            expected_moves = [(z, f.level, 0)] + [(None, i, i + 1) for i in range(f.level)]
            if len(f.moved) != len(expected_moves) or f.moved[0] != expected_moves[0]:
                raise InvariantViolation(f"malformed fetch({z}) moves {f.moved}")
            for (e, a, b), (_, ea, eb) in zip(f.moved[1:], expected_moves[1:]):
                if (a, b) != (ea, eb) or chunk[e] != a or e == z:
                    raise InvariantViolation(f"fetch({z}) moved {e} {a}->{b} illegally")
            for e, a, b in f.moved:
                chunk[e] = b
        cost = sum(1 << max(a, b) for _, a, b in f.moved)
        if cost != f.cost:
            raise InvariantViolation(f"fetch({z}) cost {f.cost} != {cost}")
        if f.level > 0 and not cost < 3 << f.level:
            raise InvariantViolation(f"fetch({z}) cost {cost} >= 3*2^{f.level}")
        self.budget[z] = 0
        controlled_after = {e for e in range(len(chunk)) if self.budget[e] <= 1 << chunk[e]}
        if not controlled_before <= controlled_after or z not in controlled_after:
            raise InvariantViolation(f"fetch({z}) made a controlled budget uncontrolled")
        self._check_valid()

    def step(self, t: StepTrace) -> None:
        chunk, budget = self.chunk, self.budget
        R = t.request
        self.on_step_start(t)
        x = min(R, key=lambda e: (chunk[e], e))
        if t.x != x or t.access != 1 << chunk[x]:
            raise InvariantViolation(f"step {t.step}: x/access mismatch")
        if not t.fetches or t.fetches[0].z != x:
            raise InvariantViolation(f"step {t.step}: first fetch must be fetch(x)")
        inc = 1 << chunk[x]
        self.on_before_fetch(t, t.fetches[0], loop=False)
        self._apply_fetch(t.fetches[0])
        expected_inc = tuple((y, inc) for y in R if y != x)
        if t.increments != expected_inc:
            raise InvariantViolation(f"step {t.step}: budget increments {t.increments} != {expected_inc}")
        for y, v in t.increments:
            budget[y] += v
        self._check_budgets(2, f"step {t.step} mid-step")
        self.on_after_increments(t)
        for f in t.loop_fetches:
            pending = [z for z in range(len(chunk)) if budget[z] >= 1 << chunk[z]]
            if not pending or f.z != min(pending, key=lambda e: (chunk[e], e)):
                raise InvariantViolation(f"step {t.step}: unexpected loop fetch({f.z})")
            self._check_budgets(2, f"step {t.step} mid-step")
            self.on_before_fetch(t, f, loop=True)
            self._apply_fetch(f)
        if len(t.loop_fetches) > len(R) - 1:
            raise InvariantViolation(f"step {t.step}: {len(t.loop_fetches)} loop fetches > |R| - 1")
        if any(budget[z] >= 1 << chunk[z] for z in range(len(chunk))):
            raise InvariantViolation(f"step {t.step}: while loop ended with an uncontrolled budget")
        self._check_budgets(1, f"step {t.step} end")
        if t.movement != sum(f.cost for f in t.fetches):
            raise InvariantViolation(f"step {t.step}: movement total mismatch")
        if digest64(chunk) != t.partition_digest or digest64(budget) != t.budgets_digest:
            raise InvariantViolation(f"step {t.step}: digest mismatch")
        self.on_step_end(t)

    def run(self, traces: Iterable[StepTrace]) -> None:
        for t in traces:
            self.step(t)

    # hooks
    def on_step_start(self, t: StepTrace) -> None:
        pass

    def on_before_fetch(self, t: StepTrace, f: FetchRecord, loop: bool) -> None:
        pass

    def on_after_increments(self, t: StepTrace) -> None:
        pass

    def on_step_end(self, t: StepTrace) -> None:
        pass


def replay_lma(p0: Partitioning, traces: Iterable[StepTrace]) -> None:
    """Raise :class:`InvariantViolation` if ``traces`` is not a legal LMA run from ``p0``."""
    LmaReplay(p0).run(traces)
