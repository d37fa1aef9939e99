"""Swarm composition and bounded detection of illegal meta-states and locks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .csp import (
    TAU,
    EventLabel,
    ExplorationBudgetExceeded,
    ExtChoice,
    IntChoice,
    Interleave,
    NamedRef,
    Prefix,
    Semantics,
    SyncParallel,
    Tagged,
    Term,
    DEFAULT_BUDGET,
    expand_broadcasts,
    explore,
    is_terminated,
    replay,
    subterms,
    tau_livelocks,
    visible_successors,
)
from .model import SwarmSpec, violated

SCHEMA_VERSION = "swarmcsp.analysis/1"
QUEUE_FREE = "QUEUE__free"
QUEUE_HELD = "QUEUE__held"
SATURATION = 2**63 - 1

NOTES = (
    "broadcast writes c!!m are modelled as k-1 pairwise rendezvous writes",
    "the priority queue is modelled as an arbiter process that grants mastership "
    "to one requester per round; any robot may be granted, covering every queue rotation",
    "timing corners of the substrate matrix are subsumed by exhaustive interleaving",
)


@dataclass
class ComposedSwarm:
    spec: SwarmSpec
    k: int
    term: Term
    sem: Semantics
    owners: list  # per robot: term -> view state name

    def robot_terms(self, term: Term) -> list[Term]:
        found: dict[int, Term] = {}
        stack = [term]
        while stack:
            t = stack.pop()
            if isinstance(t, Tagged):
                found[t.index] = t.body
            elif isinstance(t, (Interleave, SyncParallel)):
                stack.extend((t.left, t.right))
        return [found[i] for i in range(self.k)]

    def meta_state(self, term: Term) -> tuple:
        return tuple(self.owners[i].get(t, "?") for i, t in enumerate(self.robot_terms(term)))


def _robot_owners(sem: Semantics, initial: str) -> dict:
    start = NamedRef(initial)
    owners = {start: initial}
    work = [start]
    while work:
        t = work.pop(0)
        for _, t2 in sem.successors(t):
            if t2 not in owners:
                owners[t2] = t2.name if isinstance(t2, NamedRef) else owners[t]
                work.append(t2)
    return owners


def compose_swarm(spec: SwarmSpec, k: int | None = None) -> ComposedSwarm:
    """``R_0 ||| R_1 ||| ... ||| R_{k-1}``, left-associated, each robot tagged.

    When the design declares a priority queue, the interleaving is further
    synchronised with an arbiter on the queue's guard and release events.
    """
    k = spec.k if k is None else k
    env = {name: expand_broadcasts(body, k) for name, body in spec.robot_env().items()}
    init = spec.robot_initial()
    term: Term = Tagged(0, NamedRef(init))
    for i in range(1, k):
        term = Interleave(term, Tagged(i, NamedRef(init)))
    q = spec.queue
    if q is not None:
        held = ExtChoice(Prefix(EventLabel(q.defer), NamedRef(QUEUE_HELD)),
                         _choice([Prefix(EventLabel(e), NamedRef(QUEUE_FREE)) for e in q.release]))
        env[QUEUE_FREE] = Prefix(EventLabel(q.master), NamedRef(QUEUE_HELD))
        env[QUEUE_HELD] = held
        term = SyncParallel(term, NamedRef(QUEUE_FREE),
                            frozenset({q.master, q.defer, *q.release}))
    sem = Semantics(env)
    robot_sem = Semantics({n: b for n, b in env.items() if not n.startswith("QUEUE__")})
    owners = _robot_owners(robot_sem, init)
    return ComposedSwarm(spec, k, term, sem, [owners] * k)


def _choice(branches: list[Term]) -> Term:
    out = branches[0]
    for b in branches[1:]:
        out = ExtChoice(out, b)
    return out


@dataclass
class Witness:
    classification: str  # "illegal_meta" | "deadlock" | "livelock"
    trace: tuple
    final_meta: tuple
    violated: list = field(default_factory=list)
    trigger: EventLabel | None = None

    def to_dict(self) -> dict:
        return {
            "classification": self.classification,
            "trace": [str(l) for l in self.trace],
            "final_meta": list(self.final_meta),
            "violated": [str(p) for p in self.violated],
            "trigger": None if self.trigger is None else self.trigger.name,
        }


@dataclass
class AnalysisReport:
    k: int
    explored_states: int
    depth: int
    witnesses: list
    budget_hit: bool = False
    triggering_events: frozenset = frozenset()
    notes: tuple = NOTES

    @property
    def clean(self) -> bool:
        return not self.witnesses

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "k": self.k,
            "depth": self.depth,
            "explored_states": self.explored_states,
            "budget_hit": self.budget_hit,
            "triggering_events": sorted(self.triggering_events),
            "witnesses": [w.to_dict() for w in self.witnesses],
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        lines = [f"k={self.k} depth={self.depth} explored={self.explored_states}"
                 + (" (budget hit, partial)" if self.budget_hit else "")]
        if not self.witnesses:
            lines.append("no illegal meta-states, deadlocks or livelocks found")
        for w in self.witnesses:
            why = f" [{', '.join(map(str, w.violated))}]" if w.violated else ""
            lines.append(f"{w.classification}{why} at ({', '.join(w.final_meta)}) "
                         f"after <{', '.join(map(str, w.trace))}>"
                         + (f" trigger={w.trigger.name}" if w.trigger else ""))
        return "\n".join(lines) + "\n"


def choice_guards(env: dict) -> frozenset:
    """Event names that open a branch of an internal choice."""
    names = set()
    for body in env.values():
        for sub in subterms(body):
            if isinstance(sub, IntChoice):
                for side in (sub.left, sub.right):
                    if isinstance(side, Prefix):
                        names.add(side.action.name)
    return frozenset(names)


def _reaches(swarm: ComposedSwarm, trace, classification: str, spec: SwarmSpec) -> bool:
    for t in replay(swarm.term, swarm.sem, trace):
        if classification == "illegal_meta" and violated(spec.illegal, swarm.meta_state(t)):
            return True
        if classification == "deadlock" and not visible_successors(swarm.sem, t, True) \
                and not is_terminated(t):
            return True
        if classification == "livelock":
            return True
    return False


def get_event(swarm: ComposedSwarm, witness: Witness) -> EventLabel | None:
    """First choice-guard event whose removal stops the witness from replaying."""
    trace = witness.trace
    if not trace:
        return None
    guards = choice_guards(swarm.spec.robot_env())
    essential = []
    for i, lab in enumerate(trace):
        if not _reaches(swarm, trace[:i] + trace[i + 1:], witness.classification, swarm.spec):
            essential.append(lab)
    for candidates in (essential, trace):
        for lab in candidates:
            if lab.name in guards:
                return lab
    first = essential[0] if essential else trace[0]
    return first if isinstance(first, EventLabel) else EventLabel(first.name, None)


def locked(spec: SwarmSpec, max_depth: int, k: int | None = None,
           budget: int = DEFAULT_BUDGET) -> AnalysisReport:
    """Breadth-first search for illegal meta-states, deadlocks and livelocks.

    One witness is kept per (classification, meta-state), carrying the
    shortest trace that reaches it.  Exploration continues past witnesses.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    swarm = compose_swarm(spec, k)
    exp, edges = explore(swarm.term, swarm.sem, max_depth, closed=True, budget=budget)
    seen: dict = {}
    for t in exp.order:
        if t not in edges:
            continue
        meta = swarm.meta_state(t)
        bad = violated(spec.illegal, meta)
        if bad and ("illegal_meta", meta) not in seen:
            seen[("illegal_meta", meta)] = Witness("illegal_meta", exp.trace(t), meta, bad)
        if not edges[t] and not is_terminated(t) and ("deadlock", meta) not in seen:
            seen[("deadlock", meta)] = Witness("deadlock", exp.trace(t), meta)
    for comp in tau_livelocks(edges):
        best = min(comp, key=lambda t: (exp.dist[t], exp.order.index(t)))
        meta = swarm.meta_state(best)
        seen.setdefault(("livelock", meta), Witness("livelock", exp.trace(best), meta))
    witnesses = sorted(seen.values(), key=lambda w: (len(w.trace), w.classification,
                                                     tuple(map(str, w.trace))))
    for w in witnesses:
        w.trigger = get_event(swarm, w)
    triggers = frozenset(w.trigger.name for w in witnesses if w.trigger is not None)
    report = AnalysisReport(swarm.k, len(exp.order), max_depth, witnesses,
                            exp.budget_hit, triggers)
    if exp.budget_hit:
        raise ExplorationBudgetExceeded(budget, report)
    return report


def witness_replays(spec: SwarmSpec, witness: Witness, k: int | None = None) -> bool:
    swarm = compose_swarm(spec, k)
    for t in replay(swarm.term, swarm.sem, witness.trace):
        if swarm.meta_state(t) != witness.final_meta:
            continue
        if witness.classification == "illegal_meta" and violated(spec.illegal, witness.final_meta):
            return True
        if witness.classification == "deadlock" and not visible_successors(swarm.sem, t, True) \
                and not is_terminated(t):
            return True
        if witness.classification == "livelock":
            return True
    return False


@dataclass(frozen=True)
class MetaStateCount:
    value: int
    saturated: bool = False

    def __int__(self) -> int:
        return self.value


def meta_state_count(spec: SwarmSpec, k: int | None = None,
                     view: str | None = None) -> MetaStateCount:
    """|S|^k over the robot's view states, or over the classes of a named view."""
    k = spec.k if k is None else k
    if view is not None:
        n = len(spec.views[view])
    else:
        n = len(spec.robot_fsm().view_states)
    value = n**k
    if value > SATURATION:
        return MetaStateCount(SATURATION, True)
    return MetaStateCount(value)


def with_k(spec: SwarmSpec, k: int) -> SwarmSpec:
    return replace(spec, k=k)
