"""Discrete-event simulation of a swarm under sampled transition times.

Each robot runs the fine-grained robot FSM.  Channel writes are asynchronous
sends into per-robot mailboxes and reads block until a matching message is
there, which is how the physical substrate behaves; the analyser instead uses
rendezvous.  Mastership for consensus blocks is granted by one globally
synchronised queue, checked atomically when a robot asks for it.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
import random
import statistics
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .csp import ChannelOp
from .model import Scenario, SwarmSpec, Timing, TimingMatrix, owner, parse_action, violated
from .refactor import PriorityQueue, create_queue

EPSILON = 0.001  # ms
SIMLOG_SCHEMA = "swarmcsp.simlog/1"
CAMPAIGN_SCHEMA = "swarmcsp.campaign/1"
DISTRIBUTION = "uniform"
SYNC, ACK = "s", "ack"  # message sorts of synthesised consensus blocks


class ProfileIncomplete(Exception):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__("no timing for " + ", ".join(f"{a} -> {b}" for a, b in self.missing))


class ScenarioMissing(Exception):
    pass


class InfiniteTransition(Exception):
    def __init__(self, src, dst):
        self.src, self.dst = src, dst
        super().__init__(f"transition {src} -> {dst} has no timing entry")


@dataclass(frozen=True)
class SubstrateProfile:
    name: str
    timing: TimingMatrix
    distribution: str = DISTRIBUTION

    @property
    def comm_latency(self) -> Timing:
        return self.timing.comm_latency

    @classmethod
    def from_spec(cls, spec: SwarmSpec, name: str) -> SubstrateProfile:
        if name not in spec.profiles:
            raise KeyError(f"unknown profile {name!r}; have {sorted(spec.profiles)}")
        return cls(name, spec.profiles[name])

    def fingerprint(self) -> list:
        rows = [[a, b, t.mean, t.dev] for (a, b), t in sorted(self.timing.entries.items())]
        lat = self.comm_latency
        return [self.name, self.distribution, rows, [lat.mean, lat.dev]]


def bounds(t: Timing) -> tuple[float, float]:
    return max(EPSILON, t.mean - t.dev), t.mean + t.dev


def draw(t: Timing, rng: random.Random) -> float:
    lo, hi = bounds(t)
    if t.dev == 0:
        return max(EPSILON, t.mean)
    return rng.uniform(lo, hi)


def sample_duration(timing: TimingMatrix, src: str, dst: str, rng: random.Random) -> float:
    """Uniform sample on ``[max(eps, mean-dev), mean+dev]`` in milliseconds."""
    t = timing.get(src, dst)
    if t is None:
        raise InfiniteTransition(src, dst)
    return draw(t, rng)


@dataclass(frozen=True)
class SimEvent:
    time: float
    robot: int
    kind: str  # "transition" | "send" | "recv"
    src: str
    dst: str
    label: str
    duration: float | None = None
    peer: int | None = None


@dataclass(frozen=True)
class Incident:
    time: float
    meta: tuple
    violated: tuple


@dataclass
class SimLog:
    seed: int
    profile: str
    horizon: float
    events: list = field(default_factory=list)
    incidents: list = field(default_factory=list)
    terminated: str = "horizon_reached"  # | "completed" | "deadlocked"
    queue_rounds: int = 0
    queue_disagreements: int = 0

    def to_dict(self) -> dict:
        return {
            "schema": SIMLOG_SCHEMA,
            "seed": self.seed,
            "profile": self.profile,
            "distribution": DISTRIBUTION,
            "horizon_ms": self.horizon,
            "terminated": self.terminated,
            "queue_rounds": self.queue_rounds,
            "queue_disagreements": self.queue_disagreements,
            "events": [asdict(e) for e in self.events],
            "incidents": [{"time": i.time, "meta": list(i.meta), "violated": list(i.violated)}
                          for i in self.incidents],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    def robot_path(self, robot: int) -> list[SimEvent]:
        return [e for e in self.events if e.robot == robot and e.kind != "send"]


@dataclass(frozen=True)
class _Edge:
    event: str
    dst: str
    action: object


class _Robot:
    def __init__(self, index: int, state: str, queue: PriorityQueue):
        self.index = index
        self.state = state
        self.version = 0  # bumps on every state change; stale calendar entries are skipped
        self.busy = False
        self.mailbox: list[tuple[str, str, int]] = []  # (channel, message, sender)
        self.last_sender: dict[str, int] = {}
        self.queue = queue
        self.rounds = 0
        self.round_master: int | None = None


class _Sim:
    # calendar kinds, in tie-break order
    DELIVER, ENV, FIRE, QUEUE = range(4)

    def __init__(self, spec: SwarmSpec, profile: SubstrateProfile, scenario: Scenario,
                 seed: int, horizon: float):
        self.spec = spec
        self.fsm = spec.robot_fsm()
        self.profile = profile
        self.scenario = scenario
        self.rng = random.Random(seed)
        self.horizon = horizon
        self.k = spec.k
        self.log = SimLog(seed, profile.name, horizon)
        self.calendar: list = []
        self.seq = 0
        self.now = 0.0
        qd = spec.queue
        self.queue_master = qd.master if qd else None
        self.queue_defer = qd.defer if qd else None
        self.release = set(qd.release) if qd else set()
        policy = "static" if qd and qd.policy == "static" else "rotate_after_round"
        self.global_queue = create_queue(self.k, policy)
        self.round_holder: int | None = None
        self.rounds = 0
        self.edges = {s: [_Edge(e, t, parse_action(e, spec.channels))
                          for e, t in self.fsm.edges_from(s)] for s in self.fsm.states}
        self.robots = [_Robot(i, self.fsm.initial, self.global_queue) for i in range(self.k)]
        self._check_profile()
        self.active_violations: tuple = ()

    # profile coverage ---------------------------------------------------
    def _timing(self, src: str, dst: str) -> Timing | None:
        t = self.profile.timing.get(src, dst)
        if t is None:
            t = self.scenario.env.get((src, dst))
        return t

    def _needs_timing(self, edge: _Edge) -> bool:
        if isinstance(edge.action, ChannelOp):
            return False
        return edge.event not in (self.scenario.locate, self.queue_master, self.queue_defer)

    def _check_profile(self):
        missing = {(s, e.dst) for s, es in self.edges.items() for e in es
                   if self._needs_timing(e) and self._timing(s, e.dst) is None}
        if missing:
            raise ProfileIncomplete(missing)

    # calendar -----------------------------------------------------------
    def push(self, time: float, robot: int, kind: int, payload):
        self.seq += 1
        heapq.heappush(self.calendar, (time, robot, kind, self.seq, payload))

    def duration(self, src: str, dst: str) -> float:
        t = self._timing(src, dst)
        return 0.0 if t is None else draw(t, self.rng)

    def latency(self) -> float:
        lat = self.profile.comm_latency
        if lat.mean == 0 and lat.dev == 0:
            return 0.0
        return draw(lat, self.rng)

    # robot behaviour ----------------------------------------------------
    def enter(self, r: _Robot, src: str | None, edge: _Edge | None, dur: float | None):
        if edge is not None:
            self.log.events.append(SimEvent(self.now, r.index, "transition", src, edge.dst,
                                            edge.event, dur))
            r.state = edge.dst
        r.version += 1
        r.busy = False
        self._check_predicates()
        self.plan(r)

    def plan(self, r: _Robot):
        """Commit the robot to its next move, or leave it waiting."""
        if r.busy:
            return
        edges = self.edges.get(r.state, [])
        reads = [e for e in edges if isinstance(e.action, ChannelOp) and e.action.direction == "read"]
        for e in reads:
            msg = self._match(r, e.action)
            if msg is not None:
                r.mailbox.remove(msg)
                self._commit(r, e, self.duration(r.state, e.dst), msg)
                return
        queue_edges = [e for e in edges if e.event in (self.queue_master, self.queue_defer)]
        if queue_edges:
            r.busy = True
            self.push(self.now, r.index, self.QUEUE, (r.version, tuple(queue_edges)))
            return
        writes = [e for e in edges if isinstance(e.action, ChannelOp) and e.action.direction == "write"]
        if writes:
            self._commit(r, writes[0], self.duration(r.state, writes[0].dst))
            return
        sc = self.scenario
        names = {e.event: e for e in edges}
        if sc.detect in names and sc.miss in names:
            e = names[sc.detect] if self.rng.random() < sc.p_detect else names[sc.miss]
            self._commit(r, e, self.duration(r.state, e.dst))
            return
        timed = [e for e in edges if self._needs_timing(e)]
        if timed:
            e = timed[0] if len(timed) == 1 else self.rng.choice(timed)
            self._commit(r, e, self.duration(r.state, e.dst))
        # otherwise: waiting for a message or for the environment

    def _match(self, r: _Robot, op: ChannelOp):
        for msg in r.mailbox:
            if msg[0] == op.channel and (op.binder or msg[1] == op.message):
                return msg
        return None

    def _commit(self, r: _Robot, edge: _Edge, dur: float, msg=None):
        r.busy = True
        self.push(self.now + dur, r.index, self.FIRE, (r.version, edge, dur, msg))

    def fire(self, r: _Robot, edge: _Edge, dur: float, msg):
        src = r.state
        op = edge.action
        if isinstance(op, ChannelOp) and op.direction == "write":
            if op.broadcast:
                targets = [j for j in range(self.k) if j != r.index]
            elif op.channel in r.last_sender:
                targets = [r.last_sender[op.channel]]
            else:
                targets = [j for j in range(self.k) if j != r.index]
            for j in targets:
                self.log.events.append(SimEvent(self.now, r.index, "send", src, edge.dst,
                                                f"{op.channel}.{op.message}", None, j))
                self.push(self.now + self.latency(), j, self.DELIVER,
                          (op.channel, op.message, r.index))
        elif isinstance(op, ChannelOp):
            r.last_sender[op.channel] = msg[2]
            self.log.events.append(SimEvent(self.now, r.index, "recv", src, edge.dst,
                                            f"{msg[0]}.{msg[1]}", None, msg[2]))
            self._follow_round(r, msg)
        if edge.event in self.release and self.round_holder == r.index:
            self.round_holder = None
            self.global_queue = self.global_queue.rotate()
            self.rounds += 1
            r.queue = r.queue.rotate()
            r.rounds += 1
            self._check_agreement()
        self.enter(r, src, edge, dur)

    def queue_decision(self, r: _Robot, edges: tuple):
        """Atomic test-and-set on the shared queue: mastership or deferral."""
        by_name = {e.event: e for e in edges}
        if self.round_holder is None and self.queue_master in by_name:
            self.round_holder = r.index
            edge = by_name[self.queue_master]
        elif self.queue_defer in by_name:
            edge = by_name[self.queue_defer]
        else:
            r.busy = False
            return  # mastership unavailable and no way to defer: wait
        self.fire(r, edge, 0.0, None)

    def _follow_round(self, r: _Robot, msg):
        """Slaves join a round on the sync request and leave it, rotating
        their queue view, on the master's next message."""
        _, text, sender = msg
        if text == SYNC:
            r.round_master = sender
        elif r.round_master == sender and text != ACK:
            r.round_master = None
            r.queue = r.queue.rotate()
            r.rounds += 1
            self._check_agreement()

    def _check_agreement(self):
        if all(x.rounds == self.rounds for x in self.robots):
            self.log.queue_rounds = self.rounds
            if len({x.queue for x in self.robots}) != 1:
                self.log.queue_disagreements += 1

    def _check_predicates(self):
        meta = tuple(owner(x.state) for x in self.robots)
        bad = tuple(str(p) for p in violated(self.spec.illegal, meta))
        if bad and bad != self.active_violations:
            self.log.incidents.append(Incident(self.now, meta, bad))
        self.active_violations = bad

    # main loop ----------------------------------------------------------
    def run(self) -> SimLog:
        sc = self.scenario
        lo, hi = sc.window
        for t_obj in sc.objects:
            for r in self.robots:
                self.push(t_obj + self.rng.uniform(lo, hi), r.index, self.ENV, sc.locate)
        for r in self.robots:
            self.plan(r)
        while self.calendar:
            time, idx, kind, _, payload = heapq.heappop(self.calendar)
            if time > self.horizon:
                self.log.terminated = "horizon_reached"
                return self.log
            self.now = time
            r = self.robots[idx]
            if kind == self.DELIVER:
                r.mailbox.append(payload)
                self.plan(r)
            elif kind == self.ENV:
                edge = next((e for e in self.edges.get(r.state, []) if e.event == payload), None)
                if edge is not None and not r.busy:
                    self._commit(r, edge, self.duration(r.state, edge.dst))
            elif kind == self.FIRE:
                version, edge, dur, msg = payload
                if version == r.version:
                    self.fire(r, edge, dur, msg)
            elif kind == self.QUEUE:
                version, edges = payload
                if version == r.version:
                    self.queue_decision(r, edges)
        self.log.terminated = self._final_status()
        return self.log

    def _final_status(self) -> str:
        if all(not self.edges.get(r.state) for r in self.robots):
            return "completed"
        for r in self.robots:
            es = self.edges.get(r.state, [])
            if es and all(e.event != self.scenario.locate for e in es):
                return "deadlocked"
        return "horizon_reached"


def _scenario(spec: SwarmSpec, name: str | None) -> Scenario:
    if name is None:
        if not spec.scenarios:
            raise ScenarioMissing("the design declares no scenario")
        return next(iter(spec.scenarios.values()))
    if name not in spec.scenarios:
        raise ScenarioMissing(f"unknown scenario {name!r}")
    return spec.scenarios[name]


def simulate(spec: SwarmSpec, profile: SubstrateProfile, seed: int, horizon: float,
             scenario: str | None = None) -> SimLog:
    """One seeded run.  Deterministic in (spec, profile, seed, horizon, scenario)."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    return _Sim(spec, profile, _scenario(spec, scenario), seed, horizon).run()


@dataclass(frozen=True)
class TransitionStats:
    n: int
    mean: float
    dev: float
    lo: float
    hi: float

    @classmethod
    def of(cls, xs: list) -> TransitionStats:
        return cls(len(xs), statistics.fmean(xs), statistics.pstdev(xs) if len(xs) > 1 else 0.0,
                   min(xs), max(xs))


@dataclass
class CampaignReport:
    profile: str
    seeds: list
    horizon: float
    incident_run_seeds: list
    per_transition: dict  # (from, to) -> TransitionStats over sampled durations
    class_timing: dict  # (class, class) -> TransitionStats, empty without a view
    terminated: dict  # status -> count
    envelope_violations: int = 0
    queue_disagreements: int = 0
    view: str | None = None

    @property
    def n_runs(self) -> int:
        return len(self.seeds)

    @property
    def incident_runs(self) -> int:
        return len(self.incident_run_seeds)

    @property
    def incident_rate(self) -> float:
        return self.incident_runs / self.n_runs

    def to_dict(self) -> dict:
        def rows(d):
            return [{"from": a, "to": b, **asdict(s)} for (a, b), s in sorted(d.items())]

        return {
            "schema": CAMPAIGN_SCHEMA,
            "profile": self.profile,
            "distribution": DISTRIBUTION,
            "horizon_ms": self.horizon,
            "n_runs": self.n_runs,
            "incident_runs": self.incident_runs,
            "incident_rate": self.incident_rate,
            "incident_run_seeds": self.incident_run_seeds,
            "terminated": dict(sorted(self.terminated.items())),
            "envelope_violations": self.envelope_violations,
            "queue_disagreements": self.queue_disagreements,
            "seeds": self.seeds,
            "per_transition": rows(self.per_transition),
            "view": self.view,
            "class_timing": rows(self.class_timing),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        """Per-transition timing in the mean +/- dev shape of a profiling table."""
        data = self.class_timing or self.per_transition
        lines = [f"profile {self.profile}: {self.incident_runs}/{self.n_runs} runs with incidents",
                 f"{'from':>8} {'to':>8} {'n':>7} {'mean ms':>10} {'dev ms':>9}"]
        for (a, b), s in sorted(data.items()):
            lines.append(f"{a:>8} {b:>8} {s.n:>7} {s.mean:>10.2f} {s.dev:>9.2f}")
        return "\n".join(lines) + "\n"


def _class_times(log: SimLog, classes: dict, k: int, initial: str) -> dict:
    out = defaultdict(list)
    entered = {i: (classes.get(initial), 0.0) for i in range(k)}
    for e in log.events:
        if e.kind == "send":
            continue
        cur, since = entered[e.robot]
        new = classes.get(e.dst)
        if new != cur:
            out[(cur, new)].append(e.time - since)
            entered[e.robot] = (new, e.time)
    return out


def run_directory(out: Path, spec_text: str, profile: SubstrateProfile, seed: int,
                  horizon: float) -> Path:
    key = json.dumps([spec_text, profile.fingerprint(), seed, horizon], sort_keys=True)
    return Path(out) / hashlib.sha256(key.encode()).hexdigest()[:16]


def run_campaign(spec: SwarmSpec, profile: SubstrateProfile, seeds: list, horizon: float,
                 scenario: str | None = None, view: str | None = None,
                 out: Path | None = None, spec_text: str | None = None) -> CampaignReport:
    """Aggregate ``simulate`` over ``seeds``; logs go under ``out`` when given."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("campaign needs at least one seed")
    if view is None and "classes" in spec.views:
        view = "classes"
    classes = spec.classifier(view) if view else {}
    samples = defaultdict(list)
    class_samples = defaultdict(list)
    incident_seeds, status = [], defaultdict(int)
    envelope = disagreements = 0
    initial = spec.robot_initial()
    for seed in seeds:
        log = simulate(spec, profile, seed, horizon, scenario)
        if log.incidents:
            incident_seeds.append(seed)
        status[log.terminated] += 1
        disagreements += log.queue_disagreements
        sc = _scenario(spec, scenario)
        for e in log.events:
            if e.kind != "transition" or e.duration is None:
                continue
            t = profile.timing.get(e.src, e.dst) or sc.env.get((e.src, e.dst))
            if t is None:
                continue
            lo, hi = bounds(t)
            if not lo <= e.duration <= hi:
                envelope += 1
            samples[(e.src, e.dst)].append(e.duration)
        if classes:
            for key, xs in _class_times(log, classes, spec.k, initial).items():
                class_samples[key].extend(xs)
        if out is not None:
            d = run_directory(out, spec_text or "", profile, seed, horizon)
            d.mkdir(parents=True, exist_ok=True)
            (d / "simlog.json").write_text(log.to_json(), encoding="utf-8")
    return CampaignReport(
        profile.name, seeds, horizon, incident_seeds,
        {k: TransitionStats.of(v) for k, v in samples.items()},
        {k: TransitionStats.of(v) for k, v in class_samples.items()},
        dict(status), envelope, disagreements, view)


def standard_error_bound(t: Timing, n: int, z: float = 3.0) -> float:
    """z standard errors of the mean of n uniform draws on ``[mean-dev, mean+dev]``."""
    return z * (t.dev / math.sqrt(3)) / math.sqrt(n)
