"""Consensus insertion: rewrite a faulty design so triggering events go through
a priority-queue negotiation before entering the contested state."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .analysis import AnalysisReport
from .convert import ProcessEnv, csp_to_fsm
from .csp import (
    SKIP,
    ChannelOp,
    EventLabel,
    ExtChoice,
    Interleave,
    NamedRef,
    Prefix,
    Seq,
    SyncParallel,
    Term,
    subterms,
)
from .model import QueueDecl, SwarmSpec, Timing, TimingMatrix, owner


class NothingToRefactor(Exception):
    pass


@dataclass(frozen=True)
class PriorityQueue:
    order: tuple
    rotation_policy: str = "rotate_after_round"  # or "static"

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ValueError(f"queue order {self.order} is not a permutation")

    @property
    def head(self) -> int:
        return self.order[0]

    def rank(self, robot: int) -> int:
        return self.order.index(robot)

    def rotate(self) -> PriorityQueue:
        if self.rotation_policy == "static":
            return self
        return PriorityQueue(self.order[1:] + self.order[:1], self.rotation_policy)


def create_queue(k: int, policy: str = "rotate_after_round") -> PriorityQueue:
    if k < 1:
        raise ValueError("k must be >= 1")
    return PriorityQueue(tuple(range(k)), policy)


@dataclass(frozen=True)
class ConsensusBlock:
    trigger: EventLabel
    target: str
    master_state: str
    master: Term
    ack_wait_state: str
    ack_wait: Term
    slave_state: str
    slave: Term
    sync_channel: str

    def definitions(self) -> dict:
        return {self.master_state: self.master, self.ack_wait_state: self.ack_wait,
                self.slave_state: self.slave}


def obtain_consensus(state: str, event, k: int, channel: str = "c",
                     slave_continuation: Term | None = None,
                     names: tuple = ("C_m", "A", "C_s"),
                     queue: QueueDecl = QueueDecl()) -> ConsensusBlock:
    """Synthesise the master / ack-wait / slave definitions guarding ``state``.

    The master broadcasts a sync request, collects ``k-1`` acknowledgements in
    any order and then continues as ``state``.  A robot that loses the queue
    arbitration reads the request, acknowledges it and runs
    ``slave_continuation`` (by default it simply terminates).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    trigger = event if isinstance(event, EventLabel) else EventLabel(str(event))
    cm, a, cs = names
    sync_w = ChannelOp(channel, "write", "s", broadcast=True)
    sync_r = ChannelOp(channel, "read", "s")
    master = ExtChoice(
        Prefix(EventLabel(queue.master), Prefix(sync_w, NamedRef(a))),
        Prefix(EventLabel(queue.defer), Prefix(sync_r, NamedRef(cs))),
    )
    acks: Term = SKIP
    for i in range(k - 1):
        one = Prefix(ChannelOp(channel, "read", "ack"), SKIP)
        acks = one if i == 0 else Interleave(acks, one)
    ack_wait = Seq(acks, NamedRef(state))
    slave = Prefix(ChannelOp(channel, "write", "ack"),
                   SKIP if slave_continuation is None else slave_continuation)
    return ConsensusBlock(trigger, state, cm, master, a, ack_wait, cs, slave, channel)


def _rewrite(term: Term, fn) -> Term:
    """Bottom-up rebuild; ``fn`` may replace any node."""
    if isinstance(term, Prefix):
        term = Prefix(term.action, _rewrite(term.body, fn))
    elif isinstance(term, SyncParallel):
        term = SyncParallel(_rewrite(term.left, fn), _rewrite(term.right, fn), term.sync_set)
    elif hasattr(term, "left"):
        term = type(term)(_rewrite(term.left, fn), _rewrite(term.right, fn))
    return fn(term)


def _written(term: Term) -> set[tuple[str, str]]:
    return {(s.action.channel, s.action.message) for s in subterms(term)
            if isinstance(s, Prefix) and isinstance(s.action, ChannelOp)
            and s.action.direction == "write"}


def _find_reader(env: dict, writes: set) -> tuple[str, Term] | None:
    """First ``c?x -> Next`` branch that consumes what the guarded state sends."""
    for name, body in env.items():
        for sub in subterms(body):
            if (isinstance(sub, Prefix) and isinstance(sub.action, ChannelOp)
                    and sub.action.direction == "read"
                    and (sub.action.channel, sub.action.message) in writes
                    and isinstance(sub.body, NamedRef)):
                return name, sub
    return None


def _fresh(base: str, taken: set) -> str:
    if base not in taken:
        return base
    i = 2
    while f"{base}{i}" in taken:
        i += 1
    return f"{base}{i}"


def _is_master(body: Term, queue: QueueDecl | None) -> bool:
    master = queue.master if queue is not None else "m"
    return (isinstance(body, ExtChoice) and isinstance(body.left, Prefix)
            and body.left.action == EventLabel(master))


def refactor_design(spec: SwarmSpec, report: AnalysisReport,
                    policy: str = "rotate") -> tuple[SwarmSpec, PriorityQueue]:
    """Route every triggering event of ``report`` through a consensus block.

    Transitions that already lead into a consensus master are left alone, so
    applying the rewrite twice gives the same design as applying it once.
    """
    if not report.witnesses:
        raise NothingToRefactor("analysis found no witnesses")
    queue_decl = spec.queue or QueueDecl(policy)
    env = dict(spec.robot_env())
    channels = {c: tuple(m) for c, m in spec.channels.items()}
    release = set(queue_decl.release)
    retargeted: dict[tuple[str, str], str] = {}

    for event in sorted(report.triggering_events):
        sites = []
        for name, body in env.items():
            for sub in subterms(body):
                if (isinstance(sub, Prefix) and sub.action.name == event
                        and isinstance(sub.body, NamedRef)
                        and not _is_master(env.get(sub.body.name), spec.queue)):
                    sites.append((name, sub.body.name))
        for target in dict.fromkeys(t for _, t in sites):
            owner_def = next(n for n, t in sites if t == target)
            taken = set(env)
            names = tuple(_fresh(b, taken) for b in ("C_m", "A", "C_s"))
            reader = _find_reader(env, _written(env[target]))
            channel = reader[1].action.channel if reader else next(iter(channels), "c")
            block = obtain_consensus(target, event, spec.k, channel,
                                     reader[1] if reader else None, names, queue_decl)

            def fix(t: Term, target=target, block=block, reader=reader) -> Term:
                if isinstance(t, Prefix) and t.action.name == event and t.body == NamedRef(target):
                    return Prefix(t.action, NamedRef(block.master_state))
                if reader is not None and t == reader[1]:
                    return Prefix(ChannelOp(block.sync_channel, "read", "s"),
                                  NamedRef(block.slave_state))
                return t

            rebuilt = {}
            for name, body in env.items():
                rebuilt[name] = _rewrite(body, fix)
                if name == owner_def:
                    rebuilt.update(block.definitions())
            env = rebuilt
            msgs = list(channels.get(channel, ()))
            for m in ("s", "ack"):
                if m not in msgs:
                    msgs.append(m)
            channels[channel] = tuple(msgs)
            release |= {s.action.name for s in _initial_prefixes(env[target])}
            for src, tgt in sites:
                if tgt == target:
                    retargeted[(src, target)] = block.master_state

    if spec.queue is not None and env == spec.robot_env():
        return spec, create_queue(spec.k, _queue_policy(spec.queue.policy))
    new_queue = QueueDecl(queue_decl.policy, tuple(sorted(release)),
                          queue_decl.master, queue_decl.defer)
    fsm = csp_to_fsm(ProcessEnv(env, spec.robot_initial()))
    profiles = {name: _remap(tm, fsm, retargeted) for name, tm in spec.profiles.items()}
    scenarios = {}
    for name, sc in spec.scenarios.items():
        scenarios[name] = replace(sc, env={k: v for k, v in sc.env.items() if fsm.admits(*k)})
    corrected = replace(spec, channels=channels, processes=env,
                        fsm=fsm if spec.fsm is not None else None, profiles=profiles,
                        queue=new_queue, scenarios=scenarios, views={})
    return corrected, create_queue(spec.k, _queue_policy(new_queue.policy))


def _queue_policy(policy: str) -> str:
    return "static" if policy == "static" else "rotate_after_round"


def _initial_prefixes(term: Term) -> list[Prefix]:
    if isinstance(term, Prefix):
        return [term]
    if isinstance(term, (ExtChoice,)):
        return _initial_prefixes(term.left) + _initial_prefixes(term.right)
    return []


def _remap(tm: TimingMatrix, fsm, retargeted: dict) -> TimingMatrix:
    """Carry timing over; entries into a guarded state now lead into its master.

    Entries for transitions the rewritten machine no longer has are dropped.
    """
    entries: dict[tuple[str, str], Timing] = {}
    for (src, dst), t in tm.entries.items():
        key = (src, dst)
        if (owner(src), dst) in retargeted and not fsm.admits(src, dst):
            key = (src, retargeted[(owner(src), dst)])
        if fsm.admits(*key):
            entries[key] = t
    return TimingMatrix(entries, tm.comm_latency)
