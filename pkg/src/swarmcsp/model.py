"""Swarm design data model: robot FSM, timing, predicates, scenario."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping

from .csp import ChannelOp, EventLabel, Term

_ACTION_RE = re.compile(r"^([A-Za-z_]\w*)(!!|!|\?)([A-Za-z_]\w*)$")


def owner(state: str) -> str:
    """The view-level state a (possibly nested) sub-state belongs to.

    ``R.1`` is a sub-state of ``R``: the robot is still *in* ``R`` as far as
    the swarm meta-state is concerned.
    """
    return state.split(".", 1)[0]


def parse_action(text: str, channels: Mapping[str, tuple] | None = None):
    """Turn an event token (``l``, ``~d``, ``c!p``, ``c?x``, ``c!!s``) into an action."""
    m = _ACTION_RE.match(text)
    if not m:
        return EventLabel(text)
    chan, op, msg = m.groups()
    if op == "?":
        msgs = (channels or {}).get(chan)
        binder = msgs is not None and len(msgs) > 0 and msg not in msgs
        return ChannelOp(chan, "read", msg, binder=binder)
    return ChannelOp(chan, "write", msg, broadcast=(op == "!!"))


@dataclass(frozen=True)
class FsmSpec:
    alphabet: frozenset
    states: tuple  # declaration order
    initial: str
    transitions: Mapping  # (state, event) -> state

    def __eq__(self, other):
        if not isinstance(other, FsmSpec):
            return NotImplemented
        return (self.alphabet == other.alphabet and set(self.states) == set(other.states)
                and self.initial == other.initial
                and dict(self.transitions) == dict(other.transitions))

    def __hash__(self):
        return hash((self.alphabet, frozenset(self.states), self.initial,
                     frozenset(self.transitions.items())))

    @property
    def view_states(self) -> frozenset:
        return frozenset(owner(s) for s in self.states)

    def delta(self, state: str, event: str) -> str | None:
        return self.transitions.get((state, event))

    def edges_from(self, state: str) -> list[tuple[str, str]]:
        return sorted((e, t) for (s, e), t in self.transitions.items() if s == state)

    def admits(self, src: str, dst: str) -> bool:
        return any(s == src and t == dst for (s, _), t in self.transitions.items())

    def paths(self, n: int) -> set:
        """Every event sequence of length <= n the machine can perform."""
        out = {()}
        layer = {((), self.initial)}
        for _ in range(n):
            nxt = set()
            for tr, s in layer:
                for e, t in self.edges_from(s):
                    nxt.add((tr + (e,), t))
            out.update(tr for tr, _ in nxt)
            layer = nxt
        return out


@dataclass(frozen=True)
class Timing:
    mean: float
    dev: float


@dataclass
class TimingMatrix:
    """Transition durations in milliseconds; a missing entry means infinite."""

    entries: dict = field(default_factory=dict)  # (from, to) -> Timing
    comm_latency: Timing = Timing(0.0, 0.0)

    def get(self, src: str, dst: str) -> Timing | None:
        return self.entries.get((src, dst))


@dataclass(frozen=True)
class AtMost:
    n: int
    state: str

    def holds(self, meta: tuple) -> bool:
        """True when the meta-state is *legal* under this predicate."""
        return sum(1 for s in meta if _matches(self.state, s)) <= self.n

    def __str__(self) -> str:
        return f"atmost {self.n} in {self.state}"


@dataclass(frozen=True)
class Pattern:
    pattern: tuple

    def holds(self, meta: tuple) -> bool:
        if len(meta) != len(self.pattern):
            return True
        return not all(p == "*" or _matches(p, s) for p, s in zip(self.pattern, meta))

    def __str__(self) -> str:
        return "pattern (" + ", ".join(self.pattern) + ")"


MetaStatePredicate = AtMost | Pattern


def _matches(wanted: str, state: str) -> bool:
    return wanted == state or wanted == owner(state)


def violated(predicates, meta: tuple) -> list:
    return [p for p in predicates if not p.holds(meta)]


@dataclass(frozen=True)
class QueueDecl:
    """Globally synchronised circular priority queue used by consensus blocks."""

    policy: str = "rotate"  # "rotate" | "static"
    release: tuple = ()
    master: str = "m"
    defer: str = "~q"


@dataclass
class Scenario:
    """Scripted environment: when objects appear and how robots perceive them."""

    name: str
    objects: list = field(default_factory=list)  # appearance times, ms
    locate: str = "l"
    window: tuple = (0.0, 0.0)
    detect: str = "d"
    miss: str = "~d"
    p_detect: float = 1.0
    env: dict = field(default_factory=dict)  # (from, to) -> Timing


@dataclass
class SwarmSpec:
    k: int
    channels: dict = field(default_factory=dict)  # name -> tuple of message sorts
    processes: dict = field(default_factory=dict)  # name -> Term, declaration order
    fsm: FsmSpec | None = None
    profiles: dict = field(default_factory=dict)  # name -> TimingMatrix
    illegal: list = field(default_factory=list)
    queue: QueueDecl | None = None
    scenarios: dict = field(default_factory=dict)
    views: dict = field(default_factory=dict)  # name -> {class label: tuple of states}
    initial: str | None = None

    def robot_env(self) -> dict[str, Term]:
        if self.processes:
            return dict(self.processes)
        from .convert import fsm_to_csp

        return fsm_to_csp(self.fsm, self.channels).definitions

    def robot_initial(self) -> str:
        if self.fsm is not None:
            return self.fsm.initial
        if self.initial is not None:
            return self.initial
        return next(iter(self.processes))

    def robot_fsm(self) -> FsmSpec:
        if self.fsm is not None:
            return self.fsm
        from .convert import ProcessEnv, csp_to_fsm

        return csp_to_fsm(ProcessEnv(dict(self.processes), self.robot_initial()))

    def classifier(self, view: str) -> dict:
        """Map each robot state to its class label under a named view."""
        return {s: label for label, states in self.views[view].items() for s in states}

    def design_key(self) -> tuple:
        """Everything but timing and scenario data, for structural comparison."""
        return (self.k, self.channels, self.robot_env(), self.robot_fsm(),
                list(self.illegal), self.queue)
