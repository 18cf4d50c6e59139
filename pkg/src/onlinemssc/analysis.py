"""Executable amortized analysis of LMA.

The potential of an element compares its chunk under LMA with its chunk under
an offline comparison solution.  Audits replay stored LMA traces step by
step against an offline EC trace and check every inequality of the
potential argument, exactly where the quantity is deterministic or has a
closed-form expectation, and statistically across seeds otherwise.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .core import Instance, InvariantViolation, Partitioning, Permutation, Request, access_cost_mssc
from .ec import (
    FetchRecord,
    LmaReplay,
    StepTrace,
    ec_access_cost,
    ec_opt_movement_cost,
)
from .oracles import OptTrace, mtf_step
from .reduction import canonic_partitioning


class AuditError(ValueError):
    """Audit inputs are inconsistent with each other or violate a precondition."""


@dataclass(frozen=True)
class PotentialParams:
    alpha: int
    beta: int
    gamma: int
    kappa: int
    r: int

    def __post_init__(self):
        a, b, g, k, r = self.alpha, self.beta, self.gamma, self.kappa, self.r
        if r < 1:
            raise ValueError("r must be >= 1")
        if not (a >= 7 and g >= a * (r - 2) + 8 and b >= a * (r - 1) + 2 * g + 8 and (1 << k) >= b):
            raise ValueError(f"parameters {self} violate the required relations")

    @property
    def serve_constant(self) -> int:
        """Per-step bound factor for the part where LMA moves."""
        return (self.alpha * (self.r - 1) + 8) << self.kappa

    @property
    def offline_move_constant(self) -> int:
        """Per-step bound factor for the part where the offline solution moves."""
        return (2 * self.alpha + 2 * self.gamma + self.beta) << self.kappa

    @property
    def competitive_constant(self) -> int:
        return max(self.serve_constant, self.offline_move_constant)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "kappa": self.kappa, "r": self.r}


def make_params(r: int) -> PotentialParams:
    if r < 1:
        raise ValueError("r must be >= 1")
    beta = 21 * r - 11
    kappa = (beta - 1).bit_length()  # ceil(log2 beta)
    return PotentialParams(alpha=7, beta=beta, gamma=7 * r - 6, kappa=kappa, r=r)


def _chunks(p) -> Sequence[int]:
    return p.chunk if isinstance(p, Partitioning) else p


def phi_value(pz: int, pstar_z: int, bz: int, params: PotentialParams) -> int:
    if bz < 0 or bz > 2 << pz:
        raise AuditError(f"budget {bz} outside [0, 2*2^{pz}]")
    if pz <= pstar_z + params.kappa:
        return params.alpha * bz
    return params.beta * (1 << pz) - params.gamma * bz


def potential(z: int, p, p_star, b: Sequence[int], params: PotentialParams) -> int:
    return phi_value(_chunks(p)[z], _chunks(p_star)[z], b[z], params)


def total_potential(p, p_star, b: Sequence[int], params: PotentialParams) -> int:
    pc, ps = _chunks(p), _chunks(p_star)
    return sum(phi_value(pc[z], ps[z], b[z], params) for z in range(len(pc)))


@dataclass(frozen=True)
class PushExpectation:
    i: int
    exact: Fraction
    bound: int
    low_fraction: Fraction  # share of the chunk whose offline chunk is <= i - kappa
    low_fraction_bound: Fraction
    sample_mean: Fraction | None = None

    @property
    def holds(self) -> bool:
        return self.exact <= self.bound and self.low_fraction < self.low_fraction_bound


def push_expectation(i: int, p, p_star, b: Sequence[int], params: PotentialParams,
                 num_samples: int = 0, rng: random.Random | None = None) -> PushExpectation:
    """Expected potential change of a uniformly random element of chunk ``i`` pushed to ``i + 1``."""
    pc, ps = _chunks(p), _chunks(p_star)
    members = [z for z, c in enumerate(pc) if c == i]
    if not members:
        raise AuditError(f"chunk {i} is empty")
    deltas = [phi_value(i + 1, ps[a], b[a], params) - phi_value(i, ps[a], b[a], params) for a in members]
    exact = Fraction(sum(deltas), len(members))
    low = Fraction(sum(1 for a in members if ps[a] <= i - params.kappa), len(members))
    sample = None
    if num_samples:
        rng = rng or random.Random(0)
        sample = Fraction(sum(rng.choice(deltas) for _ in range(num_samples)), num_samples)
    return PushExpectation(i, exact, 1 << (i + 2), low, Fraction(2, 1 << params.kappa), sample)


@dataclass
class Check:
    """Running pass/fail tally; a margin >= 0 means the inequality held."""

    name: str
    checked: int = 0
    violations: int = 0
    worst_margin: Fraction | float | None = None
    note: str = ""

    def record(self, margin, ok: bool | None = None) -> bool:
        """``ok`` overrides the sign test when the decision was made exactly elsewhere."""
        if ok is None:
            ok = margin >= 0
        self.checked += 1
        if self.worst_margin is None or margin < self.worst_margin:
            self.worst_margin = margin
        if not ok:
            self.violations += 1
        return ok

    def merge(self, other: Check) -> None:
        self.checked += other.checked
        self.violations += other.violations
        if other.worst_margin is not None and (
            self.worst_margin is None or other.worst_margin < self.worst_margin
        ):
            self.worst_margin = other.worst_margin

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        wm = self.worst_margin
        return {
            "checked": self.checked,
            "violations": self.violations,
            "pass": self.ok,
            "worst_margin": _fmt_margin(wm),
            **({"note": self.note} if self.note else {}),
        }


def _fmt_margin(wm):
    if wm is None:
        return None
    if isinstance(wm, float):
        return round(wm, 6)
    wm = Fraction(wm)
    return int(wm) if wm.denominator == 1 else str(wm)


DETERMINISTIC_CHECKS = ("potential_nonnegative", "push_bound", "fetch_amortized", "loop_fetch_potential", "offline_move_element", "offline_move_step", "telescoping")


@dataclass(frozen=True)
class StepAudit:
    step: int
    delta_lma: int
    delta_phi_alg: int  # LMA serves the request, offline solution only pays access
    opt_access: int
    delta_phi_opt: int  # offline solution moves, LMA idle
    opt_move: int
    phi_end: int


@dataclass
class PotentialAudit:
    per_step: list[StepAudit]
    phi_initial: int
    phi_final: int
    checks: dict[str, Check]

    @property
    def lma_total(self) -> int:
        return sum(s.delta_lma for s in self.per_step)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks.values())


class _PotentialReplay(LmaReplay):
    def __init__(self, p0: Partitioning, params: PotentialParams, push_checks: bool):
        super().__init__(p0)
        self.params = params
        self.push_checks = push_checks
        self.p_star: list[int] = list(p0.chunk)
        self.checks = {name: Check(name) for name in DETERMINISTIC_CHECKS}

    def phi(self, z: int) -> int:
        return phi_value(self.chunk[z], self.p_star[z], self.budget[z], self.params)

    def phi_total(self) -> int:
        values = [self.phi(z) for z in range(len(self.chunk))]
        self.checks["potential_nonnegative"].record(min(values))
        return sum(values)

    def on_before_fetch(self, t: StepTrace, f: FetchRecord, loop: bool) -> None:
        z, level = f.z, f.level
        g = self.phi(z)
        expected_push = Fraction(0)
        for i in range(level):
            res = push_expectation(i, self.chunk, self.p_star, self.budget, self.params)
            if self.push_checks:
                self.checks["push_bound"].record(min(res.bound - res.exact,
                                                      res.low_fraction_bound - res.low_fraction))
            expected_push += res.exact
        # exact conditional expectation of the amortized fetch cost
        cost = sum(1 << max(a, b) for _, a, b in f.moved)
        self.checks["fetch_amortized"].record((7 << level) - g - (cost - g + expected_push))
        if loop:
            self.checks["loop_fetch_potential"].record(g - (7 << level))

    def on_after_increments(self, t: StepTrace) -> None:
        self.phi_total()


def _check_opt_consistency(lma_trace: Sequence[StepTrace], opt_trace: OptTrace) -> None:
    if len(opt_trace.states) != len(lma_trace) + 1:
        raise AuditError(f"offline trace has {len(opt_trace.states) - 1} steps, LMA trace {len(lma_trace)}")
    for t, (step, (acc, move)) in enumerate(zip(lma_trace, opt_trace.per_step_costs)):
        before, after = opt_trace.states[t], opt_trace.states[t + 1]
        if not isinstance(before, Partitioning):
            raise AuditError("offline trace must be an EC trace (partitionings)")
        if acc != ec_access_cost(before, step.request) or move != ec_opt_movement_cost(before, after):
            raise AuditError(f"offline trace costs at step {t + 1} do not match its states and request")


def audit_trace(lma_trace: Sequence[StepTrace], opt_trace: OptTrace, params: PotentialParams,
                push_checks: bool = True) -> PotentialAudit:
    """Replay one LMA run against an offline EC trace and audit the potential argument."""
    _check_opt_consistency(lma_trace, opt_trace)
    p0 = opt_trace.states[0]
    rp = _PotentialReplay(p0, params, push_checks)
    move_c = params.offline_move_constant
    phi = rp.phi_total()
    if phi != 0:
        raise AuditError("initial potential must be zero")
    phi_initial = phi
    per_step = []
    for t, step in enumerate(lma_trace, start=1):
        rp.step(step)
        phi_mid = rp.phi_total()
        delta_lma = step.access + step.movement
        opt_access, opt_move = opt_trace.per_step_costs[t - 1]
        # second part: offline solution moves
        new_star = opt_trace.states[t].chunk
        delta_opt_phi = 0
        for z, (a, b) in enumerate(zip(rp.p_star, new_star)):
            if a == b:
                continue
            before = rp.phi(z)
            after = phi_value(rp.chunk[z], b, rp.budget[z], params)
            rp.checks["offline_move_element"].record(move_c * (1 << max(a, b)) - abs(after - before))
            delta_opt_phi += after - before
        rp.p_star = list(new_star)
        phi_end = rp.phi_total()
        if phi_end - phi_mid != delta_opt_phi:
            raise AssertionError("potential bookkeeping mismatch")
        rp.checks["offline_move_step"].record(move_c * opt_move - delta_opt_phi)
        per_step.append(StepAudit(t, delta_lma, phi_mid - phi, opt_access, delta_opt_phi, opt_move, phi_end))
        phi = phi_end
    lma_total = sum(s.delta_lma for s in per_step)
    amortized = sum(s.delta_lma + s.delta_phi_alg + s.delta_phi_opt for s in per_step)
    rp.checks["telescoping"].record(0 if amortized == lma_total + phi - phi_initial else -1)
    return PotentialAudit(per_step, phi_initial, phi, rp.checks)


def hoeffding_margin(mean: Fraction, bound: Fraction, value_range: int, n: int, sigmas: int = 3) -> tuple[bool, float]:
    """Is ``mean <= bound + sigmas * (range / 2) / sqrt(n)``?  Decided exactly; margin is informational."""
    diff = mean - bound
    slack = sigmas * value_range / 2 / n ** 0.5
    ok = diff <= 0 or diff * diff * 4 * n <= sigmas * sigmas * value_range * value_range
    return ok, slack - float(diff)


def _step_range(n: int, w: int, q: int, params: PotentialParams) -> int:
    top = 1 << (w - 1)
    lma_max = top + q * 3 * top
    phi_max = n * max(2 * params.alpha, params.beta) * top
    return (lma_max - 1) + 2 * phi_max


@dataclass
class AuditReport:
    params: PotentialParams
    audits: list[PotentialAudit]
    checks: dict[str, Check]
    opt_total: int
    seeds: list[int] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    lma_mean: Fraction = Fraction(0)

    @property
    def ok(self) -> bool:
        return not self.errors and all(c.ok for c in self.checks.values())

    def to_dict(self) -> dict:
        return {
            "pass": self.ok,
            "constants": {
                **self.params.to_dict(),
                "serve": self.params.serve_constant,
                "offline_move": self.params.offline_move_constant,
                "competitive": self.params.competitive_constant,
            },
            "trials": len(self.audits),
            "seeds": self.seeds,
            "opt_total": self.opt_total,
            "lma_mean": str(self.lma_mean),
            "checks": {k: v.to_dict() for k, v in self.checks.items()},
            "errors": self.errors,
        }


def audit_run(lma_traces: Sequence[Sequence[StepTrace]], opt_trace: OptTrace, params: PotentialParams,
              seeds: Sequence[int] = (), push_checks: bool = True, sigmas: int = 3) -> AuditReport:
    """Audit many seeded LMA runs of the same instance against one offline EC trace.

    Deterministic inequalities are checked on every run; expectation-level
    per-step bounds are checked on the sample mean over runs with a Hoeffding
    slack of ``sigmas`` standard deviations derived from a priori cost ranges.
    """
    checks = {name: Check(name) for name in DETERMINISTIC_CHECKS}
    audits: list[PotentialAudit] = []
    errors: list[str] = []
    for k, trace in enumerate(lma_traces):
        try:
            a = audit_trace(trace, opt_trace, params, push_checks=push_checks)
        except InvariantViolation as exc:
            errors.append(f"run {k}: {exc}")
            continue
        audits.append(a)
        for name, c in a.checks.items():
            checks[name].merge(c)
    report = AuditReport(params, audits, checks, opt_trace.total, list(seeds), errors)
    if not audits:
        return report
    N = len(audits)
    n = opt_trace.states[0].n
    w = opt_trace.states[0].w
    requests = [s.request for s in lma_traces[0]]
    serve_c, move_c, C = params.serve_constant, params.offline_move_constant, params.competitive_constant
    serve_check = Check("serve_step_mean", note=f"{sigmas}-sigma Hoeffding slack over {N} runs")
    ranges = []
    for t, R in enumerate(requests):
        rng_t = _step_range(n, w, len(R), params)
        ranges.append(rng_t)
        mean = Fraction(sum(a.per_step[t].delta_lma + a.per_step[t].delta_phi_alg for a in audits), N)
        bound = serve_c * opt_trace.per_step_costs[t][0]
        ok, margin = hoeffding_margin(mean, Fraction(bound), rng_t, N, sigmas)
        serve_check.record(margin, ok)
    checks["serve_step_mean"] = serve_check

    total_range = sum(ranges)
    amortized_mean = Fraction(sum(a.lma_total + a.phi_final - a.phi_initial for a in audits), N)
    amortized_bound = sum(serve_c * acc + move_c * mv for acc, mv in opt_trace.per_step_costs)
    tele = Check("amortized_total_mean", note="E[LMA + final potential] vs summed per-step bounds")
    ok, margin = hoeffding_margin(amortized_mean, Fraction(amortized_bound), total_range, N, sigmas)
    tele.record(margin, ok)
    checks["amortized_total_mean"] = tele

    lma_mean = Fraction(sum(a.lma_total for a in audits), N)
    comp = Check("competitive_mean", note=f"E[LMA] <= {C} * offline total")
    ok, margin = hoeffding_margin(lma_mean, Fraction(C * opt_trace.total), total_range, N, sigmas)
    comp.record(margin, ok)
    checks["competitive_mean"] = comp
    report.lma_mean = lma_mean
    return report


# --- offline constructions relating the list optimum to the EC optimum ---


@dataclass
class MtfConstruction:
    singleton_requests: list[Request]
    states: list[Permutation]
    per_step_I: list[tuple[int, int]]  # replayed on the original sets
    per_step_J: list[tuple[int, int]]  # on the singleton instance
    opt_total: int

    @property
    def total_I(self) -> int:
        return sum(a + b for a, b in self.per_step_I)

    @property
    def total_J(self) -> int:
        return sum(a + b for a, b in self.per_step_J)

    @property
    def replay_holds(self) -> bool:
        return self.total_I <= self.total_J

    @property
    def factor2_holds(self) -> bool:
        return self.total_I <= 2 * self.opt_total

    @property
    def factor4_holds(self) -> bool:
        return self.total_I <= 4 * self.opt_total


def build_mtf_from_opt(opt_trace: OptTrace, instance: Instance) -> MtfConstruction:
    """Move-to-front on the singletons an optimal list solution actually serves.

    At each step the singleton is the requested element closest to the front of
    the optimal list; MTF runs on those singletons and its reordering is then
    replayed against the original request sets.
    """
    if len(opt_trace.states) != instance.m + 1 or opt_trace.states[0] != instance.initial:
        raise AuditError("optimal list trace does not belong to this instance")
    singles = []
    for t, R in enumerate(instance.requests):
        pos = opt_trace.states[t].position
        singles.append((min(R, key=lambda x: pos[x]),))
    pi = instance.initial
    states = [pi]
    per_I, per_J = [], []
    for R, S in zip(instance.requests, singles):
        nxt, access_J, reorder = mtf_step(pi, S)
        per_J.append((access_J, reorder))
        per_I.append((access_cost_mssc(pi, R), reorder))
        pi = nxt
        states.append(pi)
    return MtfConstruction(singles, states, per_I, per_J, opt_trace.total)


@dataclass
class OffEConstruction:
    partitions: list[Partitioning]
    per_step: list[tuple[int, int]]  # (access, movement)
    mtf_per_step: list[int]
    margins: list[int]  # 6 * MTF step cost - OFF step cost

    @property
    def total(self) -> int:
        return sum(a + b for a, b in self.per_step)

    @property
    def per_step_holds(self) -> bool:
        return all(m >= 0 for m in self.margins)


def build_off_e_from_mtf(mtf: MtfConstruction, instance: Instance) -> OffEConstruction:
    """EC solution that follows the canonic partitioning of the MTF lists."""
    parts = [canonic_partitioning(p) for p in mtf.states]
    per_step, mtf_costs, margins = [], [], []
    for t, R in enumerate(instance.requests):
        access = ec_access_cost(parts[t], R)
        movement = ec_opt_movement_cost(parts[t], parts[t + 1])
        mtf_cost = sum(mtf.per_step_I[t])
        if access > mtf.per_step_I[t][0]:
            raise InvariantViolation(f"step {t + 1}: EC access exceeds list access")
        per_step.append((access, movement))
        mtf_costs.append(mtf_cost)
        margins.append(6 * mtf_cost - (access + movement))
    return OffEConstruction(parts, per_step, mtf_costs, margins)
