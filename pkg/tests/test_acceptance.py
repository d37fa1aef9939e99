"""Acceptance criteria, one test per criterion.

Each test records a single pass/fail line, shown in the terminal summary and
printed to stdout as it runs.
"""

import random
import statistics
import time
from contextlib import contextmanager
from math import comb

from hypothesis import given, settings

from conftest import ACCEPTANCE
from oracles import ProductMachine, fsm_paths, prefixes, shuffle_product, shuffles
from strategies import deterministic_terms, fsms, small_terms, swarm_specs, terms
from swarmcsp.analysis import locked, meta_state_count, with_k, witness_replays
from swarmcsp.convert import csp_to_fsm, fsm_to_csp
from swarmcsp.csp import (
    SKIP,
    EventLabel,
    ExtChoice,
    IntChoice,
    Interleave,
    NamedRef,
    Prefix,
    SyncParallel,
    alphabet,
    step,
    trace_names,
    traces,
)
from swarmcsp.lang import parse, print_spec
from swarmcsp.model import Timing
from swarmcsp.refactor import refactor_design
from swarmcsp.sim import SubstrateProfile, run_campaign, sample_duration

HORIZON = 60000.0
CASES = settings(max_examples=100, deadline=None)


@contextmanager
def criterion(n, text):
    start = time.perf_counter()
    line = f"criterion {n}: FAIL {text}"
    try:
        yield
        line = f"criterion {n}: PASS {text} ({time.perf_counter() - start:.1f} s)"
    finally:
        ACCEPTANCE[n] = line
        print(line)


def witness_keys(report):
    return {(w.classification, w.final_meta): len(w.trace) for w in report.witnesses}


def test_criterion_1_faulty_design_is_caught(faulty):
    with criterion(1, "faulty design yields a replayable illegal-state witness, k=2 and k=3"):
        start = time.perf_counter()
        for k in (2, 3):
            spec = with_k(faulty, k)
            rep = locked(spec, 12)
            illegal = [w for w in rep.witnesses
                       if w.classification == "illegal_meta" and w.final_meta.count("P") >= 2]
            assert illegal, f"no witness for k={k}"
            assert all(witness_replays(spec, w) for w in illegal)
            if k == 2:
                oracle = ProductMachine(spec.robot_fsm(), k, spec.channels, spec.queue)
                assert witness_keys(rep) == oracle.witnesses(12, spec.illegal)
        assert time.perf_counter() - start < 10


def test_criterion_2_refactor_removes_the_fault(faulty, corrected):
    with criterion(2, "refactored design is clean at depth 20 and matches the shipped one"):
        start = time.perf_counter()
        for k in (2, 3):
            spec = with_k(faulty, k)
            out, queue = refactor_design(spec, locked(spec, 12))
            assert len(queue.order) == k
            assert locked(out, 20).clean
            if k == 3:
                assert out.design_key() == corrected.design_key()
        assert time.perf_counter() - start < 60


def test_criterion_3_campaigns(faulty, corrected):
    with criterion(3, "1000-seed campaigns: faulty collides, physical >= simulation, corrected never"):
        start = time.perf_counter()
        seeds = range(1000)
        rates = {}
        for name in ("simulation", "physical"):
            rep = run_campaign(faulty, SubstrateProfile.from_spec(faulty, name), seeds, HORIZON)
            rates[name] = rep.incident_rate
            fixed = run_campaign(corrected, SubstrateProfile.from_spec(corrected, name),
                                 seeds, HORIZON)
            assert fixed.incident_runs == 0, name
        print(f"  incident rates: {rates}")
        assert rates["physical"] > 0
        assert rates["physical"] >= rates["simulation"]
        assert time.perf_counter() - start < 300


def test_criterion_4_sampling(faulty, corrected):
    with criterion(4, "durations stay in their envelope; 10^4-sample mean within 0.15 ms"):
        for spec in (faulty, corrected):
            for name in ("simulation", "physical"):
                rep = run_campaign(spec, SubstrateProfile.from_spec(spec, name),
                                   range(200), HORIZON)
                assert rep.envelope_violations == 0
        # the ack-collection to path-finding row of the simulation profile
        tm = corrected.profiles["simulation"]
        assert tm.get("A.1", "P") == Timing(160.19, 4.5)
        rng = random.Random(2024)
        xs = [sample_duration(tm, "A.1", "P", rng) for _ in range(10_000)]
        assert 155.69 <= min(xs) and max(xs) <= 164.69
        assert abs(statistics.fmean(xs) - 160.19) <= 0.15


def test_criterion_5_kernel_laws():
    @CASES
    @given(terms())
    def prefix_closed(t):
        trs = traces(t, {}, 4)
        assert prefixes(trs) == trs

    @CASES
    @given(terms(), terms())
    def choice_is_union(p, q):
        union = traces(p, {}, 4) | traces(q, {}, 4)
        assert traces(ExtChoice(p, q), {}, 4) == union
        assert traces(IntChoice(p, q), {}, 4) == union

    @CASES
    @given(small_terms(), small_terms())
    def interleave_is_shuffle(p, q):
        assert traces(Interleave(p, q), {}, 8) == shuffle_product(traces(p, {}, 4),
                                                                 traces(q, {}, 4))

    @CASES
    @given(deterministic_terms())
    def self_sync(p):
        assert traces(SyncParallel(p, p, frozenset(alphabet(p))), {}, 4) == traces(p, {}, 4)

    @CASES
    @given(terms())
    def step_deterministic(t):
        assert step(t, {}) == step(t, {})

    def chain(names):
        t = SKIP
        for n in reversed(names):
            t = Prefix(EventLabel(n), t)
        return t

    with criterion(5, "kernel laws over 100 generated cases each, interleaving counts 6/10/20"):
        for law in (prefix_closed, choice_is_union, interleave_is_shuffle, self_sync,
                    step_deterministic):
            law()
        for m, n, want in ((2, 2, 6), (3, 2, 10), (3, 3, 20)):
            left = [f"a{i}" for i in range(m)]
            right = [f"b{i}" for i in range(n)]
            full = {t for t in trace_names(traces(Interleave(chain(left), chain(right)), {}, m + n))
                    if len(t) == m + n}
            assert len(full) == want == comb(m + n, m)
            assert full == shuffles(tuple(left), tuple(right))


def test_criterion_6_round_trips():
    @CASES
    @given(swarm_specs())
    def spec_round_trip(spec):
        assert parse(print_spec(spec)) == spec

    @CASES
    @given(fsms())
    def fsm_round_trip(fsm):
        assert csp_to_fsm(fsm_to_csp(fsm)) == fsm

    @CASES
    @given(fsms(max_states=5))
    def path_language(fsm):
        env = fsm_to_csp(fsm)
        got = trace_names(traces(NamedRef(fsm.initial), env.definitions, 8))
        assert got == fsm_paths(fsm.transitions, fsm.initial, 8)

    with criterion(6, "print/parse and machine/process round-trips, path language to length 8"):
        spec_round_trip()
        fsm_round_trip()
        path_language()


def test_criterion_7_meta_state_counts(faulty, corrected):
    with criterion(7, "meta-state counts 27 and 125"):
        assert int(meta_state_count(faulty)) == 27
        assert int(meta_state_count(corrected, view="classes")) == 125
