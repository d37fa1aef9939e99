from math import comb

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import prefixes, shuffle_product, shuffles
from strategies import deterministic_terms, small_terms, terms
from swarmcsp.csp import (
    SKIP,
    STOP,
    TAU,
    ChannelOp,
    EventLabel,
    ExplorationBudgetExceeded,
    ExtChoice,
    IntChoice,
    Interleave,
    NamedRef,
    Prefix,
    SemanticState,
    Seq,
    SyncParallel,
    UnguardedRecursion,
    UnresolvedReference,
    alphabet,
    find_locks,
    replay,
    show,
    step,
    trace_names,
    traces,
)

a, b, c = EventLabel("a"), EventLabel("b"), EventLabel("c")


def chain(*names, end=SKIP):
    t = end
    for n in reversed(names):
        t = Prefix(EventLabel(n), t)
    return t


def names(term, n, env=None):
    return trace_names(traces(term, env or {}, n))


class TestStep:
    def test_stop_has_no_moves(self):
        assert step(STOP, {}) == []

    def test_external_choice_offers_both(self):
        moves = step(ExtChoice(Prefix(a, SKIP), Prefix(b, SKIP)), {})
        assert moves == [(a, SKIP), (b, SKIP)]

    def test_internal_choice_is_two_taus(self):
        moves = step(IntChoice(Prefix(a, SKIP), Prefix(b, STOP)), {})
        assert [lab for lab, _ in moves] == [TAU, TAU]
        assert {t for _, t in moves} == {Prefix(a, SKIP), Prefix(b, STOP)}

    def test_idle_robot_offers_locate_and_path_read(self, faulty):
        labels = {lab.name for lab, _ in step(NamedRef("R"), faulty.robot_env())}
        assert labels == {"l", "c?p"}

    def test_semantic_state_accepts_wrapper(self, faulty):
        env = faulty.robot_env()
        s = SemanticState(NamedRef("R"))
        assert step(s, env) == step(NamedRef("R"), env)
        assert SemanticState(NamedRef("R")) == s
        assert s.pending_rendezvous(env) == {("c", "read", "p")}

    def test_unresolved_reference(self):
        with pytest.raises(UnresolvedReference):
            step(NamedRef("Nowhere"), {})

    def test_unguarded_recursion(self):
        with pytest.raises(UnguardedRecursion):
            step(NamedRef("X"), {"X": ExtChoice(NamedRef("X"), Prefix(a, SKIP))})

    def test_rendezvous_pairs_write_with_read(self):
        w = Prefix(ChannelOp("c", "write", "p"), SKIP)
        r = Prefix(ChannelOp("c", "read", "p"), SKIP)
        labels = [str(lab) for lab, _ in step(Interleave(w, r), {})]
        assert "c.p" in labels

    def test_sync_set_forces_joint_move(self):
        t = SyncParallel(Prefix(a, Prefix(b, SKIP)), Prefix(a, SKIP), frozenset({"a"}))
        assert names(t, 3) == {(), ("a",), ("a", "b")}

    def test_seq_passes_control_on_termination(self):
        assert names(Seq(chain("a"), chain("b")), 3) == {(), ("a",), ("a", "b")}

    @settings(max_examples=100, deadline=None)
    @given(terms())
    def test_step_is_deterministic(self, t):
        assert step(t, {}) == step(t, {})


class TestTraces:
    def test_stop(self):
        assert traces(STOP, {}, 5) == {()}

    def test_negative_length_rejected(self):
        with pytest.raises(ValueError):
            traces(STOP, {}, -1)

    def test_small_interleaving(self):
        t = Interleave(chain("a"), chain("b"))
        assert names(t, 2) == {(), ("a",), ("b",), ("a", "b"), ("b", "a")}

    @pytest.mark.parametrize("m,n", [(2, 2), (3, 2), (3, 3)])
    def test_maximal_interleavings_are_binomial(self, m, n):
        left = chain(*[f"a{i}" for i in range(m)])
        right = chain(*[f"b{i}" for i in range(n)])
        full = {tr for tr in names(Interleave(left, right), m + n) if len(tr) == m + n}
        assert len(full) == comb(m + n, m)
        assert full == shuffles(tuple(f"a{i}" for i in range(m)), tuple(f"b{i}" for i in range(n)))

    def test_budget_reports_partial(self):
        wide = Interleave(Interleave(chain("a", "b", "c"), chain("d", "e")), chain("f", "g"))
        with pytest.raises(ExplorationBudgetExceeded) as err:
            traces(wide, {}, 7, budget=10)
        assert () in err.value.partial

    def test_recursive_process(self):
        env = {"P": Prefix(a, Prefix(b, NamedRef("P")))}
        assert names(NamedRef("P"), 3, env) == {(), ("a",), ("a", "b"), ("a", "b", "a")}


class TestLaws:
    @settings(max_examples=100, deadline=None)
    @given(terms())
    def test_prefix_closed(self, t):
        trs = traces(t, {}, 4)
        assert prefixes(trs) == trs

    @settings(max_examples=100, deadline=None)
    @given(terms(), terms())
    def test_choices_are_union(self, p, q):
        union = traces(p, {}, 4) | traces(q, {}, 4)
        assert traces(ExtChoice(p, q), {}, 4) == union
        assert traces(IntChoice(p, q), {}, 4) == union

    @settings(max_examples=100, deadline=None)
    @given(terms(), terms())
    def test_choices_commute_and_are_idempotent(self, p, q):
        for op in (ExtChoice, IntChoice):
            assert traces(op(p, q), {}, 4) == traces(op(q, p), {}, 4)
            assert traces(op(p, p), {}, 4) == traces(p, {}, 4)

    @settings(max_examples=100, deadline=None)
    @given(terms())
    def test_skip_is_left_unit(self, p):
        assert traces(Seq(SKIP, p), {}, 4) == traces(p, {}, 4)

    @settings(max_examples=100, deadline=None)
    @given(terms(), st.sampled_from("abce"))
    def test_stop_blocks_continuation(self, p, e):
        assert traces(Seq(Prefix(EventLabel(e), STOP), p), {}, 4) == {(), (EventLabel(e),)}

    @settings(max_examples=100, deadline=None)
    @given(small_terms(), small_terms())
    def test_interleave_is_shuffle_product(self, p, q):
        tp, tq = traces(p, {}, 4), traces(q, {}, 4)
        assert traces(Interleave(p, q), {}, 8) == shuffle_product(tp, tq)

    @settings(max_examples=100, deadline=None)
    @given(deterministic_terms())
    def test_self_sync_on_full_alphabet(self, p):
        sync = frozenset(alphabet(p))
        assert traces(SyncParallel(p, p, sync), {}, 4) == traces(p, {}, 4)


class TestLocks:
    def test_prefix_then_stop_deadlocks(self):
        rep = find_locks(Prefix(a, STOP), {}, 3)
        assert [(l.kind, l.trace) for l in rep.locks] == [("deadlock", (a,))]

    def test_skip_is_not_a_lock(self):
        assert find_locks(SKIP, {}, 3).locks == []

    def test_tau_cycle_is_livelock(self):
        env = {"L": IntChoice(NamedRef("L"), NamedRef("L")), "P": Prefix(a, NamedRef("L"))}
        rep = find_locks(NamedRef("P"), env, 3)
        assert [l.kind for l in rep.livelocks] == ["livelock"]
        assert rep.livelocks[0].trace == (a,)

    def test_depth_must_be_positive(self):
        with pytest.raises(ValueError):
            find_locks(SKIP, {}, 0)

    def test_faulty_pair_deadlocks_after_double_detection(self, faulty):
        from swarmcsp.analysis import compose_swarm, with_k

        sw = compose_swarm(with_k(faulty, 2))
        rep = find_locks(sw.term, sw.sem, 12)
        assert rep.deadlocks
        shortest = rep.deadlocks[0].trace
        assert {"d.0", "d.1"} <= {str(x) for x in shortest}
        assert replay(sw.term, sw.sem, shortest)


class TestPrinting:
    def test_prefix_inside_choice_is_parenthesised(self, faulty):
        assert show(faulty.processes["R"]) == \
            "(l -> ((d -> P) |~| (~d -> R))) [] (c?p -> F)"

    def test_plain_chain(self):
        assert show(chain("a", "b")) == "a -> b -> SKIP"
