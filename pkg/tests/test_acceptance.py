"""Acceptance criteria, one test each, evaluated at their stated tolerances."""

import itertools
import json
import random
import time
from fractions import Fraction

import pytest

from onlinemssc.analysis import audit_run, build_mtf_from_opt, build_off_e_from_mtf, push_expectation, make_params
from onlinemssc.cli import main as cli_main
from onlinemssc.core import Instance, Partitioning, Permutation
from onlinemssc.ec import LmaReplay, Lma, ScheduledEc, derive_seed, ec_access_cost, ec_opt_movement_cost, lma_step, \
    EcState, replay_lma, run_lma
from onlinemssc.harness import ExperimentConfig, run_experiment, small_corpus
from onlinemssc.oracles import OptTrace, brute_force_ec_dynamic, mtf_step, opt_ec_dynamic, opt_mssc_dynamic, \
    run_list_algorithm
from onlinemssc.reduction import canonic_partitioning, wrap_ec_algorithm

import reference

P2 = make_params(2)


@pytest.fixture(scope="module")
def corpus():
    return small_corpus(seed=0, count=200, r=2)


@pytest.fixture(scope="module")
def corpus_opt(corpus):
    return [opt_mssc_dynamic(inst) for inst in corpus]


def random_partitioning(rng, w):
    labels = [i for i in range(w) for _ in range(1 << i)]
    rng.shuffle(labels)
    return Partitioning(tuple(labels))


def test_criterion_1_reduction_soundness(verdict):
    start = time.perf_counter()
    rng = random.Random(2024)
    steps = bad_cost = bad_sync = 0
    for n in (3, 7, 15):
        w = n.bit_length()
        for k in range(75):
            m = 50 if k < 50 else 40
            reqs = [rng.sample(range(n), rng.randint(1, min(3, n))) for _ in range(m)]
            inst = Instance.from_raw(n, rng.sample(range(n), n), reqs)
            if k < 50:
                alg = Lma(derive_seed(1, n, k))
            else:
                alg = ScheduledEc([random_partitioning(rng, w) for _ in range(m)])
            run = wrap_ec_algorithm(alg, inst, keep_permutations=True)
            p = canonic_partitioning(inst.initial)
            for t, s in enumerate(run.steps):
                steps += 1
                bad_cost += s.mssc_cost > 4 * s.ec_cost or s.mssc_cost > 4 * s.ec_charged
                if run.ec_traces:
                    expected = run.ec_traces[t].partition_digest
                    bad_sync += canonic_partitioning(run.permutations[t + 1]).digest() != expected
                else:
                    bad_sync += canonic_partitioning(run.permutations[t + 1]) != alg.schedule[t]
            bad_sync += canonic_partitioning(run.permutations[0]) != p
    elapsed = time.perf_counter() - start
    ok = steps >= 10_000 and bad_cost == 0 and bad_sync == 0 and elapsed < 60
    verdict(1, "reduction soundness", ok,
            f"{steps} steps, cost violations {bad_cost}, desyncs {bad_sync}, {elapsed:.1f}s")


def test_criterion_2_position_window(verdict):
    rng = random.Random(17)
    sizes = [1, 3, 7, 15, 31, 63, 127]
    checked = violations = 0
    for k in range(1000):
        n = sizes[k % len(sizes)]
        pi = Permutation(tuple(rng.sample(range(n), n)))
        cp = canonic_partitioning(pi)
        for x in range(n):
            checked += 1
            violations += not (cp.size(x) <= pi.position[x] <= 2 * cp.size(x) - 1)
    verdict(2, "canonic partitioning position window", violations == 0,
            f"1000 permutations (n up to 127), {checked} elements, {violations} violations")


def test_criterion_3_lma_invariants(verdict):
    rng = random.Random(33)
    n = 7
    runs = steps = problems = 0
    for k in range(1000):
        r = 1 + k % 3
        reqs = [tuple(sorted(rng.sample(range(n), rng.randint(1, r)))) for _ in range(50)]
        p0 = random_partitioning(rng, 3)
        seed = derive_seed(3, k)
        traces = run_lma(p0, reqs, seed)
        replay_lma(p0, traces)  # validity, budget bounds mid-step and at step end, loop order, fetch cost
        state = EcState.initial(p0, seed)
        for R, tr in zip(reqs, traces):
            state, _, again = lma_step(state, R)
            steps += 1
            problems += again != tr
            problems += len(tr.loop_fetches) > len(R) - 1
            problems += any(f.cost >= 3 << f.level for f in tr.fetches if f.level)
            problems += any(b > 1 << c for b, c in zip(state.budget, state.chunk))
            try:
                state.partitioning
            except ValueError:
                problems += 1
        runs += 1
    verdict(3, "LMA invariants", problems == 0, f"{runs} runs, {steps} steps, {problems} violations")


def test_criterion_4_oracles_vs_brute_force(verdict):
    start = time.perf_counter()
    subsets = [tuple(c) for k in (1, 2, 3) for c in itertools.combinations(range(3), k)]
    instances = mismatches = 0
    for order in itertools.permutations(range(3)):
        for m in range(4):
            for reqs in itertools.product(subsets, repeat=m):
                inst = Instance.from_raw(3, order, reqs)
                instances += 1
                mismatches += opt_mssc_dynamic(inst).total != reference.brute_mssc(list(order), list(reqs))
                mismatches += opt_ec_dynamic(inst).total != brute_force_ec_dynamic(inst)
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 10
    verdict(4, "DP optima equal brute force (n=3, m<=3)", ok,
            f"{instances} instances, {mismatches} mismatches, {elapsed:.1f}s")


def _audit_instances(corpus):
    return [inst for inst in corpus if inst.n == 7][:20]


def test_criterion_5_analysis_bounds(corpus, verdict):
    start = time.perf_counter()
    assert (P2.alpha, P2.beta, P2.gamma, P2.kappa) == (7, 31, 8, 5)
    assert (P2.serve_constant, P2.offline_move_constant) == (480, 1952)
    seeds = 1000
    totals = {"offline_move_step": [0, 0], "offline_move_element": [0, 0], "serve_step_mean": [0, 0], "potential_nonnegative": [0, 0]}
    errors = 0
    insts = _audit_instances(corpus)
    for k, inst in enumerate(insts):
        opt = opt_ec_dynamic(inst)
        runs = [run_lma(opt.states[0], inst.requests, derive_seed(5, k, s)) for s in range(seeds)]
        rep = audit_run(runs, opt, P2, push_checks=False)
        errors += len(rep.errors)
        for name in totals:
            totals[name][0] += rep.checks[name].checked
            totals[name][1] += rep.checks[name].violations
    elapsed = time.perf_counter() - start
    ok = errors == 0 and all(v == 0 for _, v in totals.values()) and elapsed < 300
    detail = ", ".join(f"{k} {c} checks/{v} violations" for k, (c, v) in totals.items())
    verdict(5, "potential analysis with explicit constants", ok,
            f"{len(insts)} instances x {seeds} seeds; {detail}; {elapsed:.0f}s")


def test_criterion_6_competitiveness(corpus, corpus_opt, verdict):
    bound = 48 * P2.offline_move_constant
    seeds = 200
    ratios = []
    for k, (inst, opt) in enumerate(zip(corpus, corpus_opt)):
        total = 0
        for s in range(seeds):
            total += wrap_ec_algorithm(Lma(derive_seed(6, k, s)), inst).total
        ratios.append(Fraction(total, seeds) / opt.total)
    worst = max(ratios)
    mean = sum(ratios) / len(ratios)
    ok = len(ratios) >= 200 and worst <= bound
    verdict(6, "end-to-end competitiveness", ok,
            f"{len(ratios)} instances x {seeds} seeds; E[LMA]/OPT mean {float(mean):.3f}, "
            f"max {float(worst):.3f} (bound {bound})")


def test_criterion_7_offline_constructions(corpus, corpus_opt, verdict):
    factor2_fail = per_step_fail = 0
    worst = Fraction(0)
    for inst, opt in zip(corpus, corpus_opt):
        mtf = build_mtf_from_opt(opt, inst)
        off = build_off_e_from_mtf(mtf, inst)
        factor2_fail += not mtf.factor2_holds
        per_step_fail += not off.per_step_holds
        worst = max(worst, Fraction(mtf.total_I, opt.total))
    ok = factor2_fail == 0 and per_step_fail == 0
    verdict(7, "MTF <= 2 OPT and OFF^E <= 6 MTF per step", ok,
            f"{len(corpus)} instances; MTF > 2*OPT on {factor2_fail}, OFF^E per-step failures {per_step_fail}, "
            f"worst MTF/OPT {float(worst):.3f}")


class _PushExpectationSweep(LmaReplay):
    """Evaluates the closed-form expectation for every chunk at every state the replay passes through."""

    def __init__(self, offline: OptTrace):
        super().__init__(offline.states[0])
        self.offline = offline
        self.t = 0
        self.checked = self.violations = self.nonzero = 0

    def sweep(self):
        star = self.offline.states[self.t].chunk
        for i in range(self.w - 1):
            res = push_expectation(i, self.chunk, star, self.budget, P2)
            self.checked += 1
            self.violations += not res.holds
            self.nonzero += res.exact != 0

    def on_before_fetch(self, t, f, loop):
        self.sweep()

    def on_after_increments(self, t):
        self.sweep()

    def on_step_end(self, t):
        self.t += 1
        self.sweep()


def _mtf_offline(inst):
    parts = [canonic_partitioning(p) for p in run_list_algorithm(mtf_step, inst).states]
    costs = [(ec_access_cost(parts[t], R), ec_opt_movement_cost(parts[t], parts[t + 1]))
             for t, R in enumerate(inst.requests)]
    return OptTrace(parts, costs, sum(a + b for a, b in costs), solver="mtf-canonic")


def test_criterion_8_push_expectation(corpus, verdict):
    checked = violations = nonzero = runs = 0
    # 100 runs audited against the EC optimum at n = 7
    for k, inst in enumerate(_audit_instances(corpus)[:10]):
        opt = opt_ec_dynamic(inst)
        for s in range(10):
            sweep = _PushExpectationSweep(opt)
            sweep.run(run_lma(opt.states[0], inst.requests, derive_seed(8, k, s)))
            checked, violations, nonzero = checked + sweep.checked, violations + sweep.violations, \
                nonzero + sweep.nonzero
            runs += 1
    # plus runs at n = 127, where chunks deep enough for the low-offline case exist
    rng = random.Random(8)
    for k in range(4):
        hot = rng.sample(range(127), 6)
        reqs = [rng.sample(hot if t % 3 else range(127), 2) for t in range(300)]
        inst = Instance.from_raw(127, rng.sample(range(127), 127), reqs)
        off = _mtf_offline(inst)
        for s in range(5):
            sweep = _PushExpectationSweep(off)
            sweep.run(run_lma(off.states[0], inst.requests, derive_seed(8, "large", k, s)))
            checked, violations, nonzero = checked + sweep.checked, violations + sweep.violations, \
                nonzero + sweep.nonzero
            runs += 1
    verdict(8, "exact push expectation", violations == 0 and runs >= 100,
            f"{runs} runs, {checked} chunk states, {nonzero} with nonzero expectation, {violations} violations")


def test_criterion_9_determinism(tmp_path, verdict):
    cfg = {"generator": "adversarial-hot-swap", "n_raw": 6, "m": 8, "r": 2, "seed": 12345, "trials": 4,
           "seeds_per_instance": 10}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    for d in ("a", "b"):
        assert cli_main(["run", "--config", str(path), "--out", str(tmp_path / d)]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    differ = []
    for rel in files:
        x, y = (tmp_path / "a" / rel).read_bytes(), (tmp_path / "b" / rel).read_bytes()
        if rel.name == "summary.json":
            x, y = (json.loads(v) for v in (x, y))
            x.pop("generated_at")
            y.pop("generated_at")
        if x != y:
            differ.append(str(rel))
    r1 = run_experiment(ExperimentConfig.from_dict(cfg))
    r2 = run_experiment(ExperimentConfig.from_dict({**cfg, "workers": 2}))
    same_mem = r1.jsonl_text("traces") == r2.jsonl_text("traces") and r1.summary() == r2.summary()
    ok = not differ and same_mem and len(files) >= 5
    verdict(9, "byte-identical reruns", ok, f"{len(files)} files compared, differing: {differ or 'none'}")
