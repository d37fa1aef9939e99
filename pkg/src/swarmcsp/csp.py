"""CSP process terms and their labelled-transition semantics.

Terms are immutable and structurally comparable, so they double as the
states of the transition system.  Named references are unfolded lazily at
step time, which keeps mutually recursive definitions finite.

Channel operations behave as *open offers* when nothing pairs with them:
``c!p -> SKIP`` on its own can perform ``c!p``.  Inside an interleaving or
parallel composition a write offer on one side and a matching read offer on
the other additionally synchronise into a single :class:`Comm` transition.
A closed system (the whole swarm) discards unmatched offers, which is how a
write with no reader becomes a deadlock.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

UNFOLD_BOUND = 64
DEFAULT_BUDGET = 200_000


class CspError(Exception):
    pass


class UnresolvedReference(CspError):
    def __init__(self, name: str):
        super().__init__(f"unresolved process reference {name!r}")
        self.name = name


class UnguardedRecursion(CspError):
    def __init__(self, name: str):
        super().__init__(f"unguarded recursion through {name!r}")
        self.name = name


class ExplorationBudgetExceeded(CspError):
    """Raised when exploration visits more states than the configured cap.

    ``partial`` carries whatever result had been accumulated so far.
    """

    def __init__(self, budget: int, partial=None):
        super().__init__(f"exploration budget of {budget} states exceeded")
        self.budget = budget
        self.partial = partial


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EventLabel:
    name: str
    robot_index: int | None = None
    payload: str | None = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("event name must be non-empty")

    def tagged(self, index: int) -> EventLabel:
        return EventLabel(self.name, index, self.payload)

    def __str__(self) -> str:
        s = self.name if self.payload is None else f"{self.name}({self.payload})"
        return s if self.robot_index is None else f"{s}.{self.robot_index}"


@dataclass(frozen=True)
class ChannelOp:
    """``c!m`` / ``c?m`` / ``c?x`` (binder) / ``c!!m`` (broadcast write)."""

    channel: str
    direction: str  # "write" | "read"
    message: str
    binder: bool = False
    broadcast: bool = False
    robot_index: int | None = None

    def __post_init__(self):
        if self.direction not in ("write", "read"):
            raise ValueError(f"bad channel direction {self.direction!r}")
        if self.direction == "write" and self.binder:
            raise ValueError("a write must carry a concrete message")
        if self.broadcast and self.direction != "write":
            raise ValueError("only writes can broadcast")

    @property
    def name(self) -> str:
        op = "!!" if self.broadcast else ("!" if self.direction == "write" else "?")
        return f"{self.channel}{op}{self.message}"

    def tagged(self, index: int) -> ChannelOp:
        return ChannelOp(self.channel, self.direction, self.message,
                         self.binder, self.broadcast, index)

    def untagged(self) -> ChannelOp:
        return ChannelOp(self.channel, self.direction, self.message,
                         self.binder, self.broadcast)

    def accepts(self, write: ChannelOp) -> bool:
        return (self.direction == "read" and write.direction == "write"
                and not write.broadcast and self.channel == write.channel
                and (self.binder or self.message == write.message))

    def __str__(self) -> str:
        return self.name if self.robot_index is None else f"{self.name}.{self.robot_index}"


@dataclass(frozen=True)
class Comm:
    """A completed rendezvous between a writer and a reader."""

    channel: str
    message: str
    writer: int | None = None
    reader: int | None = None

    @property
    def name(self) -> str:
        return f"{self.channel}.{self.message}"

    def tagged(self, index: int) -> Comm:
        return Comm(self.channel, self.message,
                    index if self.writer is None else self.writer,
                    index if self.reader is None else self.reader)

    def __str__(self) -> str:
        if self.writer is None and self.reader is None:
            return self.name
        return f"{self.name}[{self.writer}>{self.reader}]"


class _Tau:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    name = "τ"

    def tagged(self, index: int) -> _Tau:
        return self

    def __str__(self) -> str:
        return "τ"

    def __repr__(self) -> str:
        return "TAU"

    def __reduce__(self):
        return (_Tau, ())


TAU = _Tau()

Label = Union[EventLabel, ChannelOp, Comm, _Tau]
Trace = tuple  # tuple[Label, ...]


def label_key(label: Label) -> str:
    return str(label)


def is_observable(label: Label) -> bool:
    return label is not TAU


def is_open_offer(label: Label) -> bool:
    return isinstance(label, ChannelOp)


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------


class Term:
    __slots__ = ()

    def __str__(self) -> str:
        return show(self)


@dataclass(frozen=True)
class Skip(Term):
    pass


@dataclass(frozen=True)
class Stop(Term):
    pass


SKIP = Skip()
STOP = Stop()


@dataclass(frozen=True)
class NamedRef(Term):
    name: str


@dataclass(frozen=True)
class Prefix(Term):
    action: Union[EventLabel, ChannelOp]
    body: Term


@dataclass(frozen=True)
class Seq(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class ExtChoice(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class IntChoice(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Interleave(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class SyncParallel(Term):
    left: Term
    right: Term
    sync_set: frozenset = field(default_factory=frozenset)


@dataclass(frozen=True)
class Tagged(Term):
    """Robot instance ``index`` running ``body``; tags every label it emits."""

    index: int
    body: Term


ProcessTerm = Term

_BINARY = {Seq: ";", ExtChoice: "[]", IntChoice: "|~|", Interleave: "|||"}
# larger binds tighter
_PREC = {Seq: 3, ExtChoice: 2, IntChoice: 2, Interleave: 1, SyncParallel: 1}


def action_text(action) -> str:
    return action.name


def show(term: Term, min_prec: int = 0) -> str:
    """Render a term in the design language's concrete syntax."""
    if isinstance(term, Skip):
        return "SKIP"
    if isinstance(term, Stop):
        return "STOP"
    if isinstance(term, NamedRef):
        return term.name
    if isinstance(term, Prefix):
        s = f"{action_text(term.action)} -> {show(term.body, 4)}"
        return f"({s})" if 0 < min_prec < 4 else s
    if isinstance(term, Tagged):
        return f"{{{show(term.body)}}}@{term.index}"
    prec = _PREC[type(term)]
    if isinstance(term, SyncParallel):
        op = "[| " + ", ".join(sorted(term.sync_set)) + " |]"
    else:
        op = _BINARY[type(term)]
    s = f"{show(term.left, prec)} {op} {show(term.right, prec + 1)}"
    return f"({s})" if prec < min_prec else s


def subterms(term: Term) -> Iterable[Term]:
    yield term
    if isinstance(term, Prefix):
        yield from subterms(term.body)
    elif isinstance(term, Tagged):
        yield from subterms(term.body)
    elif hasattr(term, "left"):
        yield from subterms(term.left)
        yield from subterms(term.right)


def alphabet(term: Term, env: Mapping[str, Term] | None = None) -> frozenset:
    """Names of every event and channel action syntactically reachable."""
    seen: set[str] = set()
    names: set[str] = set()
    stack = [term]
    while stack:
        t = stack.pop()
        for sub in subterms(t):
            if isinstance(sub, Prefix):
                names.add(sub.action.name)
            elif isinstance(sub, NamedRef) and env is not None and sub.name not in seen:
                seen.add(sub.name)
                if sub.name in env:
                    stack.append(env[sub.name])
    return frozenset(names)


def map_actions(term: Term, fn) -> Term:
    """Rebuild ``term`` with ``fn`` applied to every Prefix (may expand it)."""
    if isinstance(term, Prefix):
        return fn(term.action, map_actions(term.body, fn))
    if isinstance(term, Tagged):
        return Tagged(term.index, map_actions(term.body, fn))
    if isinstance(term, SyncParallel):
        return SyncParallel(map_actions(term.left, fn), map_actions(term.right, fn), term.sync_set)
    if hasattr(term, "left"):
        return type(term)(map_actions(term.left, fn), map_actions(term.right, fn))
    return term


def expand_broadcasts(term: Term, k: int) -> Term:
    """Replace ``c!!m -> P`` with ``k-1`` pairwise writes ``c!m -> ... -> P``."""

    def fn(action, body):
        if isinstance(action, ChannelOp) and action.broadcast:
            single = ChannelOp(action.channel, "write", action.message)
            for _ in range(k - 1):
                body = Prefix(single, body)
            return body
        return Prefix(action, body)

    return map_actions(term, fn)


def is_terminated(term: Term) -> bool:
    if isinstance(term, Skip):
        return True
    if isinstance(term, Tagged):
        return is_terminated(term.body)
    if isinstance(term, (Interleave, SyncParallel)):
        return is_terminated(term.left) and is_terminated(term.right)
    if isinstance(term, ExtChoice):
        return is_terminated(term.left) or is_terminated(term.right)
    return False


# ---------------------------------------------------------------------------
# Semantics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SemanticState:
    term: Term

    def pending_rendezvous(self, env) -> frozenset:
        """Channel offers currently waiting for a partner."""
        return frozenset(
            (lab.channel, lab.direction, lab.message)
            for lab, _ in _sems(env).successors(self.term)
            if isinstance(lab, ChannelOp)
        )


class Semantics:
    """One-step successor relation over terms, memoised per environment."""

    def __init__(self, env: Mapping[str, Term], unfold_bound: int = UNFOLD_BOUND):
        self.env = dict(env)
        self.unfold_bound = unfold_bound
        self._memo: dict[Term, tuple] = {}

    def successors(self, term: Term) -> tuple:
        """Complete, deterministically ordered list of (label, term) pairs."""
        got = self._memo.get(term)
        if got is None:
            raw = self._succ(term, 0)
            got = tuple(sorted(set(raw), key=lambda lt: (label_key(lt[0]), show(lt[1]))))
            self._memo[term] = got
        return got

    def _child(self, term: Term, depth: int) -> tuple:
        got = self._memo.get(term)
        if got is not None:
            return got
        if depth == 0:
            return self.successors(term)
        return tuple(self._succ(term, depth))

    def _resolve(self, name: str) -> Term:
        try:
            return self.env[name]
        except KeyError:
            raise UnresolvedReference(name) from None

    def _succ(self, term: Term, depth: int) -> list:
        if isinstance(term, (Skip, Stop)):
            return []
        if isinstance(term, NamedRef):
            if depth >= self.unfold_bound:
                raise UnguardedRecursion(term.name)
            return list(self._child(self._resolve(term.name), depth + 1))
        if isinstance(term, Prefix):
            return [(term.action, term.body)]
        if isinstance(term, IntChoice):
            return [(TAU, term.left), (TAU, term.right)]
        if isinstance(term, ExtChoice):
            out = []
            for lab, t in self._child(term.left, depth):
                out.append((lab, ExtChoice(t, term.right) if lab is TAU else t))
            for lab, t in self._child(term.right, depth):
                out.append((lab, ExtChoice(term.left, t) if lab is TAU else t))
            return out
        if isinstance(term, Seq):
            if is_terminated(term.left):
                return [(TAU, term.right)]
            return [(lab, Seq(t, term.right)) for lab, t in self._child(term.left, depth)]
        if isinstance(term, Tagged):
            return [(lab.tagged(term.index), Tagged(term.index, t))
                    for lab, t in self._child(term.body, depth)]
        if isinstance(term, (Interleave, SyncParallel)):
            return self._parallel(term, depth)
        raise TypeError(f"not a process term: {term!r}")

    def _parallel(self, term, depth: int) -> list:
        sync = term.sync_set if isinstance(term, SyncParallel) else frozenset()

        def rebuild(l, r):
            if isinstance(term, SyncParallel):
                return SyncParallel(l, r, sync)
            return Interleave(l, r)

        left = self._child(term.left, depth)
        right = self._child(term.right, depth)
        out = []
        for lab, t in left:
            if lab.name not in sync:
                out.append((lab, rebuild(t, term.right)))
        for lab, t in right:
            if lab.name not in sync:
                out.append((lab, rebuild(term.left, t)))
        if sync:
            for llab, lt in left:
                if llab is TAU or llab.name not in sync:
                    continue
                for rlab, rt in right:
                    if rlab is not TAU and rlab.name == llab.name:
                        # the robot-side label wins so witnesses name the robot
                        lab = llab if getattr(llab, "robot_index", None) is not None else rlab
                        out.append((lab, rebuild(lt, rt)))
        for (w, wt, r, rt, flip) in _rendezvous(left, right):
            out.append((Comm(w.channel, w.message, w.robot_index, r.robot_index),
                        rebuild(rt, wt) if flip else rebuild(wt, rt)))
        return out


def _rendezvous(left, right):
    for llab, lt in left:
        if not isinstance(llab, ChannelOp):
            continue
        for rlab, rt in right:
            if not isinstance(rlab, ChannelOp):
                continue
            if rlab.accepts(llab):
                yield llab, lt, rlab, rt, False
            elif llab.accepts(rlab):
                yield rlab, rt, llab, lt, True


def _sems(env) -> Semantics:
    return env if isinstance(env, Semantics) else Semantics(env or {})


def step(state, env) -> list:
    """Successors of ``state`` (a term or :class:`SemanticState`)."""
    term = state.term if isinstance(state, SemanticState) else state
    return list(_sems(env).successors(term))


def visible_successors(sem: Semantics, term: Term, closed: bool) -> tuple:
    succ = sem.successors(term)
    if closed:
        return tuple(lt for lt in succ if not is_open_offer(lt[0]))
    return succ


# ---------------------------------------------------------------------------
# Traces and exploration
# ---------------------------------------------------------------------------


def tau_closure(sem: Semantics, terms: Iterable[Term]) -> frozenset:
    seen = set(terms)
    stack = list(seen)
    while stack:
        t = stack.pop()
        for lab, t2 in sem.successors(t):
            if lab is TAU and t2 not in seen:
                seen.add(t2)
                stack.append(t2)
    return frozenset(seen)


def traces(term: Term, env, max_len: int, closed: bool = False,
           budget: int = DEFAULT_BUDGET) -> set:
    """All observable traces of length <= ``max_len`` (τ erased)."""
    if max_len < 0:
        raise ValueError("max_len must be >= 0")
    sem = _sems(env)
    layer = {(): tau_closure(sem, [term])}
    result = {()}
    visited = len(layer[()])
    for _ in range(max_len):
        nxt: dict[tuple, set] = {}
        for tr, terms in layer.items():
            for t in terms:
                for lab, t2 in visible_successors(sem, t, closed):
                    if lab is not TAU:
                        nxt.setdefault(tr + (lab,), set()).add(t2)
        layer = {tr: tau_closure(sem, ts) for tr, ts in nxt.items()}
        result.update(layer)
        visited += sum(len(v) for v in layer.values())
        if visited > budget:
            raise ExplorationBudgetExceeded(budget, result)
        if not layer:
            break
    return result


def trace_names(trs: Iterable[tuple]) -> set:
    return {tuple(str(lab) for lab in tr) for tr in trs}


@dataclass
class Exploration:
    """Result of a depth-bounded 0-1 BFS over the reachable state graph.

    ``depth`` counts observable transitions only; τ moves are free, so the
    parent chain of every state spells a shortest observable trace.
    """

    root: Term
    dist: dict
    parent: dict  # term -> (prev term, label) or None
    order: list
    budget_hit: bool = False

    def path(self, term: Term) -> list:
        steps = []
        while self.parent[term] is not None:
            prev, lab = self.parent[term]
            steps.append(lab)
            term = prev
        steps.reverse()
        return steps

    def trace(self, term: Term) -> tuple:
        return tuple(lab for lab in self.path(term) if lab is not TAU)


def explore(term: Term, env, max_depth: int, closed: bool = True,
            budget: int = DEFAULT_BUDGET) -> tuple[Exploration, dict]:
    """Explore up to ``max_depth`` observable steps; also return the edge map."""
    sem = _sems(env)
    dist = {term: 0}
    parent = {term: None}
    edges: dict = {}
    dq = deque([term])
    done: set = set()
    order: list = []
    budget_hit = False
    while dq:
        t = dq.popleft()
        if t in done:
            continue
        done.add(t)
        order.append(t)
        if len(done) > budget:
            budget_hit = True
            break
        succ = visible_successors(sem, t, closed)
        edges[t] = succ
        d = dist[t]
        for lab, t2 in succ:
            nd = d + (0 if lab is TAU else 1)
            if nd > max_depth:
                continue
            if t2 not in dist or nd < dist[t2]:
                dist[t2] = nd
                parent[t2] = (t, lab)
                if lab is TAU:
                    dq.appendleft(t2)
                else:
                    dq.append(t2)
    exp = Exploration(term, dist, parent, order, budget_hit)
    return exp, edges


def tau_livelocks(edges: Mapping) -> list[frozenset]:
    """τ-only strongly connected components with no observable way out."""
    import networkx as nx

    g = nx.DiGraph()
    for t, succ in edges.items():
        for lab, t2 in succ:
            if lab is TAU and t2 in edges:
                g.add_edge(t, t2)
    found = []
    for comp in nx.strongly_connected_components(g):
        if len(comp) == 1:
            (only,) = comp
            if not g.has_edge(only, only):
                continue
        if any(lab is not TAU for t in comp for lab, _ in edges[t]):
            continue
        found.append(frozenset(comp))
    return found


@dataclass
class Lock:
    kind: str  # "deadlock" | "livelock"
    trace: tuple
    term: Term


@dataclass
class LockReport:
    locks: list
    explored_states: int
    depth: int
    budget_hit: bool = False

    @property
    def deadlocks(self) -> list:
        return [l for l in self.locks if l.kind == "deadlock"]

    @property
    def livelocks(self) -> list:
        return [l for l in self.locks if l.kind == "livelock"]


def find_locks(term: Term, env, max_depth: int, closed: bool = True,
               budget: int = DEFAULT_BUDGET) -> LockReport:
    """Deadlocks and τ-livelocks reachable within ``max_depth`` events.

    The term is treated as a closed system by default: an unmatched channel
    offer cannot fire on its own.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    sem = _sems(env)
    exp, edges = explore(term, sem, max_depth, closed, budget)
    locks = []
    for t in exp.order:
        if t in edges and not edges[t] and not is_terminated(t):
            locks.append(Lock("deadlock", exp.trace(t), t))
    for comp in tau_livelocks(edges):
        best = min(comp, key=lambda t: (exp.dist[t], exp.order.index(t)))
        locks.append(Lock("livelock", exp.trace(best), best))
    locks.sort(key=lambda l: (len(l.trace), l.kind, tuple(map(str, l.trace))))
    report = LockReport(locks, len(exp.order), max_depth, exp.budget_hit)
    if exp.budget_hit:
        raise ExplorationBudgetExceeded(budget, report)
    return report


def replay(term: Term, env, trace: Iterable[Label], closed: bool = True) -> frozenset:
    """Terms reachable by performing ``trace`` with free τ moves in between."""
    sem = _sems(env)
    current = tau_closure(sem, [term])
    for lab in trace:
        nxt = set()
        for t in current:
            for l2, t2 in visible_successors(sem, t, closed):
                if l2 == lab:
                    nxt.add(t2)
        current = tau_closure(sem, nxt)
        if not current:
            break
    return current
