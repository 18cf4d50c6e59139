"""Domain types and cost primitives shared by every other module.

Element ids are 0-based integers; list positions are 1-based so that the
access cost of an element is simply its position.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class IncompatibleUniverse(ValueError):
    """Two objects that must share a universe do not."""


class InvalidRequest(ValueError):
    pass


class InvalidPartitioning(ValueError):
    pass


class InvariantViolation(AssertionError):
    """A runtime check of a proven property failed."""


Request = tuple[int, ...]


def digest64(values: Iterable[int]) -> str:
    """Stable 64-bit hex digest of an integer sequence."""
    data = ",".join(str(int(v)) for v in values).encode()
    return hashlib.blake2b(data, digest_size=8).hexdigest()


@dataclass(frozen=True)
class Permutation:
    """A list ordering. ``order[k]`` is the element at position ``k + 1``."""

    order: tuple[int, ...]
    position: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        order = tuple(int(x) for x in self.order)
        n = len(order)
        pos = [0] * n
        for k, x in enumerate(order):
            if not 0 <= x < n or pos[x]:
                raise ValueError(f"not a permutation of range({n}): {order}")
            pos[x] = k + 1
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "position", tuple(pos))

    @classmethod
    def identity(cls, n: int) -> Permutation:
        return cls(tuple(range(n)))

    @classmethod
    def from_positions(cls, positions: Sequence[int]) -> Permutation:
        order = [0] * len(positions)
        for x, p in enumerate(positions):
            order[p - 1] = x
        return cls(tuple(order))

    @property
    def n(self) -> int:
        return len(self.order)

    def at(self, position: int) -> int:
        return self.order[position - 1]

    def digest(self) -> str:
        return digest64(self.order)


@dataclass(frozen=True)
class Partitioning:
    """Assignment of every element to a chunk; chunk ``i`` holds exactly ``2**i`` elements."""

    chunk: tuple[int, ...]
    w: int = field(init=False, compare=False)

    def __post_init__(self):
        chunk = tuple(int(c) for c in self.chunk)
        n = len(chunk)
        w = (n + 1).bit_length() - 1
        if n < 1 or (1 << w) - 1 != n:
            raise InvalidPartitioning(f"universe size {n} is not of the form 2^w - 1")
        counts = [0] * w
        for c in chunk:
            if not 0 <= c < w:
                raise InvalidPartitioning(f"chunk index {c} outside [0, {w})")
            counts[c] += 1
        for i, cnt in enumerate(counts):
            if cnt != 1 << i:
                raise InvalidPartitioning(f"chunk {i} has {cnt} elements, expected {1 << i}")
        object.__setattr__(self, "chunk", chunk)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return len(self.chunk)

    def size(self, x: int) -> int:
        return 1 << self.chunk[x]

    def members(self, i: int) -> list[int]:
        return [x for x, c in enumerate(self.chunk) if c == i]

    def digest(self) -> str:
        return digest64(self.chunk)


def make_request(members: Iterable[int], n: int | None = None) -> Request:
    """Validate and normalise a request set into a sorted tuple."""
    items = [int(x) for x in members]
    if not items:
        raise InvalidRequest("request set is empty")
    if len(set(items)) != len(items):
        raise InvalidRequest(f"request set has duplicates: {items}")
    if n is not None and any(not 0 <= x < n for x in items):
        raise InvalidRequest(f"request {items} references elements outside range({n})")
    return tuple(sorted(items))


def padded_size(raw_n: int) -> int:
    """Smallest ``2**w - 1`` that is at least ``raw_n``."""
    if raw_n < 1:
        raise ValueError("raw_n must be >= 1")
    return (1 << raw_n.bit_length()) - 1


def pad_universe(raw_n: int, raw_permutation: Permutation) -> tuple[int, Permutation]:
    """Append dummy elements ``raw_n..n-1`` behind the real ones."""
    if raw_permutation.n != raw_n:
        raise IncompatibleUniverse(f"permutation over {raw_permutation.n} elements, raw_n={raw_n}")
    n = padded_size(raw_n)
    return n, Permutation(raw_permutation.order + tuple(range(raw_n, n)))


@dataclass(frozen=True)
class Instance:
    n_raw: int
    initial: Permutation
    requests: tuple[Request, ...]

    def __post_init__(self):
        n = self.initial.n
        if n != padded_size(self.n_raw):
            raise ValueError(f"instance universe {n} is not the padding of n_raw={self.n_raw}")
        if any(self.initial.position[x] <= self.n_raw for x in range(self.n_raw, n)):
            raise ValueError("dummy elements must occupy the tail of the initial list")
        reqs = tuple(make_request(R, self.n_raw) for R in self.requests)
        object.__setattr__(self, "requests", reqs)

    @classmethod
    def from_raw(cls, n_raw: int, initial_order: Sequence[int], requests: Iterable[Iterable[int]]) -> Instance:
        _, padded = pad_universe(n_raw, Permutation(tuple(initial_order)))
        return cls(n_raw, padded, tuple(make_request(R, n_raw) for R in requests))

    @property
    def n(self) -> int:
        return self.initial.n

    @property
    def w(self) -> int:
        return self.n.bit_length()

    @property
    def m(self) -> int:
        return len(self.requests)

    @property
    def r(self) -> int:
        return max((len(R) for R in self.requests), default=0)

    def to_dict(self) -> dict:
        return {
            "n_raw": self.n_raw,
            "initial_order": list(self.initial.order[: self.n_raw]),
            "requests": [list(R) for R in self.requests],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> Instance:
        return cls.from_raw(int(d["n_raw"]), d["initial_order"], d["requests"])

    @classmethod
    def from_json(cls, text: str) -> Instance:
        return cls.from_dict(json.loads(text))


@dataclass
class CostLedger:
    access: int = 0
    reorder: int = 0
    per_step: list[tuple[int, int]] = field(default_factory=list)

    def add(self, access: int, reorder: int) -> None:
        if access < 0 or reorder < 0:
            raise ValueError("costs are nonnegative")
        self.access += access
        self.reorder += reorder
        self.per_step.append((access, reorder))

    @property
    def total(self) -> int:
        return self.access + self.reorder


def _check_same_universe(p1: Permutation, p2: Permutation) -> None:
    if p1.n != p2.n:
        raise IncompatibleUniverse(f"permutations over {p1.n} and {p2.n} elements")


def _count_inversions(seq: list[int]) -> int:
    # bottom-up merge sort
    n = len(seq)
    src, dst = list(seq), [0] * n
    inv = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid, hi = min(lo + width, n), min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if src[i] <= src[j]:
                    dst[k] = src[i]
                    i += 1
                else:
                    dst[k] = src[j]
                    inv += mid - i
                    j += 1
                k += 1
            dst[k:hi] = src[i:mid] + src[j:hi]
        src, dst = dst, src
        width *= 2
    return inv


def kendall_tau(p1: Permutation, p2: Permutation) -> int:
    """Number of element pairs ordered differently by ``p1`` and ``p2`` (O(n log n))."""
    _check_same_universe(p1, p2)
    return _count_inversions([p2.position[x] for x in p1.order])


def kendall_tau_naive(p1: Permutation, p2: Permutation) -> int:
    """O(n^2) pair count; the reference for :func:`kendall_tau`."""
    _check_same_universe(p1, p2)
    n = p1.n
    a, b = p1.position, p2.position
    count = 0
    for x in range(n):
        for y in range(x + 1, n):
            if (a[x] < a[y]) != (b[x] < b[y]):
                count += 1
    return count


def swap_cost(a: int, b: int) -> int:
    """Adjacent transpositions needed to exchange the elements at positions a and b."""
    if a == b:
        raise ValueError("degenerate swap: a == b")
    return 2 * abs(b - a) - 1


def apply_swap(p: Permutation, a: int, b: int) -> Permutation:
    n = p.n
    if not (1 <= a <= n and 1 <= b <= n):
        raise IndexError(f"swap positions ({a}, {b}) outside [1, {n}]")
    if a == b:
        raise ValueError("degenerate swap: a == b")
    order = list(p.order)
    order[a - 1], order[b - 1] = order[b - 1], order[a - 1]
    return Permutation(tuple(order))


def access_cost_mssc(p: Permutation, R: Iterable[int]) -> int:
    positions = [p.position[x] for x in R]
    if not positions:
        raise InvalidRequest("request set is empty")
    return min(positions)
