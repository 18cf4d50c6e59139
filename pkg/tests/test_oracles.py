import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from onlinemssc.core import Instance, Permutation, access_cost_mssc, kendall_tau
from onlinemssc.ec import ec_access_cost, ec_opt_movement_cost
from onlinemssc.oracles import (
    CapacityError,
    brute_force_ec_dynamic,
    brute_force_mssc_dynamic,
    count_valid_partitionings,
    greedy_static_order,
    mae_step,
    mtf_step,
    opt_ec_dynamic,
    opt_mssc_dynamic,
    opt_mssc_static,
    run_list_algorithm,
    valid_partitionings,
)

import reference

a, b, c, d = range(4)


def instances(max_n_raw=3, max_m=3, max_r=3):
    @st.composite
    def build(draw):
        n_raw = draw(st.integers(1, max_n_raw))
        order = draw(st.permutations(range(n_raw)))
        r = min(max_r, n_raw)
        reqs = draw(st.lists(st.sets(st.integers(0, n_raw - 1), min_size=1, max_size=r), max_size=max_m))
        return Instance.from_raw(n_raw, order, [sorted(R) for R in reqs])

    return build()


def check_trace(inst, trace, access, move):
    assert trace.states[0] in (inst.initial,) or trace.states[0].n == inst.n
    total = 0
    for t, R in enumerate(inst.requests):
        acc, mv = trace.per_step_costs[t]
        assert acc == access(trace.states[t], R)
        assert mv == move(trace.states[t], trace.states[t + 1])
        total += acc + mv
    assert total == trace.total


class TestMsscDynamic:
    def test_examples(self, frozen):
        abc = [a, b, c]
        assert opt_mssc_dynamic(Instance.from_raw(3, abc, [[c]])).total == frozen["opt_c"] == 3
        assert opt_mssc_dynamic(Instance.from_raw(3, abc, [[c], [c]])).total == frozen["opt_cc"] == 6
        assert opt_mssc_dynamic(Instance.from_raw(3, abc, [[a]] * 5)).total == 5
        assert opt_mssc_dynamic(Instance.from_raw(3, abc, [])).total == 0

    @given(instances())
    def test_matches_brute_force(self, inst):
        trace = opt_mssc_dynamic(inst)
        assert trace.total == brute_force_mssc_dynamic(inst)
        check_trace(inst, trace, access_cost_mssc, kendall_tau)

    def test_matches_reference_on_longer_sequences(self):
        rng = random.Random(4)
        for _ in range(5):
            reqs = [rng.sample(range(3), rng.randint(1, 2)) for _ in range(5)]
            inst = Instance.from_raw(3, [2, 0, 1], reqs)
            assert opt_mssc_dynamic(inst).total == reference.brute_mssc([2, 0, 1], reqs)

    def test_capacity_refusal(self):
        inst = Instance.from_raw(8, range(8), [[0]])
        with pytest.raises(CapacityError):
            opt_mssc_dynamic(inst)

    @given(instances(max_n_raw=5, max_m=5))
    def test_dynamic_dominates_static(self, inst):
        # the static list is chosen freely; a dynamic solution serves R_1 from pi_0,
        # then moves to the static list and stays there
        st_opt = opt_mssc_static(inst)
        dyn = opt_mssc_dynamic(inst).total
        if not inst.requests:
            assert dyn == st_opt.total == 0
            return
        follow = (access_cost_mssc(inst.initial, inst.requests[0]) + kendall_tau(inst.initial, st_opt.permutation)
                  + sum(access_cost_mssc(st_opt.permutation, R) for R in inst.requests[1:]))
        assert dyn <= follow
        if st_opt.permutation == inst.initial:
            assert dyn <= st_opt.total

    def test_static_may_beat_dynamic_by_initial_reordering(self):
        inst = Instance.from_raw(3, [a, b, c], [[b]])
        assert opt_mssc_static(inst).total == 1
        assert opt_mssc_dynamic(inst).total == 2

    def test_deterministic_reconstruction(self):
        inst = Instance.from_raw(5, [4, 2, 0, 1, 3], [[3], [1, 4], [2], [3, 0]])
        assert opt_mssc_dynamic(inst).to_dict() == opt_mssc_dynamic(inst).to_dict()


class TestEcDynamic:
    def test_counts(self):
        assert count_valid_partitionings(1) == 1
        assert count_valid_partitionings(3) == 3
        assert count_valid_partitionings(7) == 105
        assert len(valid_partitionings(7)) == 105
        assert valid_partitionings(7) == sorted(valid_partitionings(7))

    def test_examples(self, frozen):
        inst = Instance.from_raw(3, [a, b, c], [[b]] * 3)
        assert opt_ec_dynamic(inst).total == frozen["opt_ec_bbb"] == 6
        inst = Instance.from_raw(3, [a, b, c], [[b, c]])
        assert opt_ec_dynamic(inst).total == 2
        inst = Instance.from_raw(3, [a, b, c], [[a]] * 4)
        assert opt_ec_dynamic(inst).total == 4

    @given(instances())
    def test_matches_brute_force(self, inst):
        trace = opt_ec_dynamic(inst)
        assert trace.total == brute_force_ec_dynamic(inst)
        check_trace(inst, trace, ec_access_cost, ec_opt_movement_cost)

    def test_matches_reference_on_n7(self):
        rng = random.Random(8)
        for _ in range(3):
            reqs = [tuple(rng.sample(range(5), 2)) for _ in range(2)]
            inst = Instance.from_raw(5, rng.sample(range(5), 5), reqs)
            p0 = [pos.bit_length() - 1 for pos in inst.initial.position]
            assert opt_ec_dynamic(inst).total == reference.brute_ec(p0, reqs)

    def test_capacity_refusal(self):
        with pytest.raises(CapacityError):
            opt_ec_dynamic(Instance.from_raw(7, range(7), [[0]]), max_states=100)


class TestStatic:
    def test_examples(self, frozen):
        inst = Instance.from_raw(3, [a, b, c], [[a], [b], [a]])
        st_opt = opt_mssc_static(inst)
        assert st_opt.total == frozen["static_aba"] == 4 and st_opt.exact
        assert st_opt.permutation.order[:2] == (a, b)
        inst = Instance.from_raw(3, [a, b, c], [[c]] * 4)
        assert opt_mssc_static(inst).total == 4 and opt_mssc_static(inst).permutation.at(1) == c
        assert opt_mssc_static(Instance.from_raw(3, [a, b, c], [])).total == 0

    def test_greedy_labelled_beyond_limit(self):
        inst = Instance.from_raw(9, range(9), [[8], [7, 8], [1]])
        res = opt_mssc_static(inst)
        assert not res.exact and res.solver == "greedy-heuristic"
        assert res.total == sum(access_cost_mssc(res.permutation, R) for R in inst.requests)
        with pytest.raises(CapacityError):
            opt_mssc_static(inst, allow_heuristic=False)

    def test_greedy_is_a_valid_order(self):
        inst = Instance.from_raw(5, range(5), [[4], [4, 3], [2]])
        p = greedy_static_order(inst)
        assert p.at(1) == 4 and sorted(p.order) == list(range(7))


class TestBaselines:
    def test_mae_examples(self, frozen):
        pi = Permutation((a, b, c, d))
        new, access, reorder = mae_step(pi, (c, d))
        ref = frozen["mae_cd"]
        assert list(new.order) == ref["order"] == [c, d, a, b]
        assert (access, reorder) == (ref["access"], ref["reorder"]) == (3, 4)
        assert mae_step(pi, (a, c)) == (Permutation((a, b, c, d)), 1, 0)

    def test_mtf_examples(self, frozen):
        new, access, reorder = mtf_step(Permutation((a, b, c)), (c,))
        assert [list(new.order), access, reorder] == [frozen["mtf_c"][k] for k in ("order", "access", "reorder")]
        new, access, reorder = mtf_step(Permutation((a, b, c, d)), (b, d))
        assert list(new.order) == frozen["mtf_bd"]["order"] == [b, a, c, d]
        assert (access, reorder) == (2, 1)
        assert mtf_step(Permutation((a, b, c)), (a,))[1:] == (1, 0)

    @given(st.integers(1, 20).flatmap(lambda n: st.tuples(st.permutations(range(n)), st.integers(0, n - 1))))
    def test_mae_equals_mtf_on_singletons(self, t):
        order, x = t
        pi = Permutation(tuple(order))
        assert mae_step(pi, (x,)) == mtf_step(pi, (x,))

    @given(st.integers(1, 12).flatmap(
        lambda n: st.tuples(st.permutations(range(n)), st.sets(st.integers(0, n - 1), min_size=1))))
    def test_mae_moves_members_by_d_minus_1(self, t):
        order, R = t
        pi = Permutation(tuple(order))
        new, access, reorder = mae_step(pi, tuple(R))
        d = access_cost_mssc(pi, R)
        assert access == d and new.position[min(R, key=lambda x: pi.position[x])] == 1
        for x in R:
            assert new.position[x] == pi.position[x] - (d - 1)
        assert reorder == kendall_tau(pi, new)
        assert reference.mae_by_hand(list(order), R)[0] == list(new.order)

    def test_run_list_algorithm(self):
        inst = Instance.from_raw(3, [a, b, c], [[c], [b], [a]])
        run = run_list_algorithm(mtf_step, inst)
        assert run.per_step == [(3, 2), (3, 2), (3, 2)]
        assert run.total == 15 and len(run.states) == 4
