"""Structural conversion between robot FSMs and CSP definition environments."""

from __future__ import annotations

from dataclasses import dataclass, field

from .csp import (
    TAU,
    ExtChoice,
    IntChoice,
    Interleave,
    NamedRef,
    Prefix,
    STOP,
    Semantics,
    Seq,
    Skip,
    SyncParallel,
    Tagged,
    Term,
    show,
    subterms,
)
from .model import FsmSpec, parse_action

MAX_SUBSTATES = 256


class NotFsmConvertible(Exception):
    def __init__(self, definition: str, reason: str):
        super().__init__(f"definition {definition!r} has no FSM counterpart: {reason}")
        self.definition = definition
        self.reason = reason


@dataclass
class ProcessEnv:
    definitions: dict
    initial: str
    alphabet: frozenset = field(default_factory=frozenset)


def fsm_to_csp(fsm: FsmSpec, channels: dict | None = None) -> ProcessEnv:
    """One named process per state; each δ(s, e) = s' becomes a branch ``e -> s'``."""
    defs = {}
    for state in fsm.states:
        body: Term | None = None
        for event, target in fsm.edges_from(state):
            branch = Prefix(parse_action(event, channels), NamedRef(target))
            body = branch if body is None else ExtChoice(body, branch)
        defs[state] = STOP if body is None else body
    return ProcessEnv(defs, fsm.initial, frozenset(fsm.alphabet))


def normalize(term: Term) -> Term:
    """Canonical form up to interleaving commutativity and SKIP units."""
    if isinstance(term, Interleave):
        l, r = normalize(term.left), normalize(term.right)
        if isinstance(l, Skip):
            return r
        if isinstance(r, Skip):
            return l
        if show(l) > show(r):
            l, r = r, l
        return Interleave(l, r)
    if isinstance(term, Seq):
        return Seq(normalize(term.left), term.right)
    return term


def _nontail_ref(term: Term) -> bool:
    if isinstance(term, (Interleave, SyncParallel)):
        return any(isinstance(t, NamedRef) for t in subterms(term))
    if isinstance(term, Seq):
        return any(isinstance(t, NamedRef) for t in subterms(term.left)) or _nontail_ref(term.right)
    if isinstance(term, Tagged):
        return True
    return False


def csp_to_fsm(env: ProcessEnv) -> FsmSpec:
    """Recover a deterministic FSM from a definition environment.

    Every named definition is a state.  Positions inside a body that are not
    themselves a named reference become sub-states ``Name.1``, ``Name.2``...
    Internal choice is dissolved: its τ moves are followed and the branch
    events become ordinary transitions of the enclosing state.
    """
    sem = Semantics(env.definitions)
    names: dict[Term, str] = {NamedRef(n): n for n in env.definitions}
    states: list[str] = list(env.definitions)
    transitions: dict[tuple[str, str], str] = {}
    events: set[str] = set()

    def settle(term: Term, ctx: str) -> Term:
        # follow forced τ moves (Seq termination) so A.1 -c?ack-> (SKIP;P) lands on P
        seen = set()
        while not isinstance(term, NamedRef) and term not in seen:
            seen.add(term)
            succ = sem.successors(term)
            if len(succ) == 1 and succ[0][0] is TAU and not isinstance(term, IntChoice):
                term = succ[0][1]
            else:
                break
        if _nontail_ref(term):
            raise NotFsmConvertible(ctx, f"reference inside {show(term)!r}")
        return term if isinstance(term, NamedRef) else normalize(term)

    for name in env.definitions:
        counter = 0
        work = [NamedRef(name)]
        while work:
            term = work.pop(0)
            src = names[term]
            closure = _closure(sem, term, name)
            for t in closure:
                for lab, t2 in sem.successors(t):
                    if lab is TAU:
                        continue
                    tgt_term = settle(t2, name)
                    if tgt_term not in names:
                        counter += 1
                        if counter > MAX_SUBSTATES:
                            raise NotFsmConvertible(name, "unbounded sub-state expansion")
                        names[tgt_term] = f"{name}.{counter}"
                        states.append(names[tgt_term])
                        work.append(tgt_term)
                    tgt = names[tgt_term]
                    key = (src, lab.name)
                    if transitions.get(key, tgt) != tgt:
                        raise NotFsmConvertible(name, f"nondeterministic on {lab.name!r}")
                    transitions[key] = tgt
                    events.add(lab.name)
    return FsmSpec(frozenset(env.alphabet) | frozenset(events), tuple(states),
                   env.initial, transitions)


def _closure(sem: Semantics, term: Term, ctx: str) -> list[Term]:
    out = [term]
    seen = {term}
    i = 0
    while i < len(out):
        for lab, t2 in sem.successors(out[i]):
            if lab is TAU and t2 not in seen:
                if isinstance(t2, NamedRef) and t2 != term:
                    raise NotFsmConvertible(ctx, f"unguarded internal choice into {t2.name}")
                seen.add(t2)
                out.append(t2)
        i += 1
    return out
