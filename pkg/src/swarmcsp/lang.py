"""Parser and printer for the ``.swarm`` design language.

A file is a sequence of newline-separated statements::

    swarm k=3
    channel c msgs: p, s, ack
    queue rotate release f
    fsm robot { states: R, R.1, P ; initial: R ; on l R -> R.1 ; ... }
    process R = (l -> (d -> P |~| ~d -> R)) [] (c?p -> F)
    profile physical { R.1 -> P : mean=1588.6 dev=1390.8 ; latency : mean=0 dev=0 }
    scenario collision { object at=1000 ; locate l window=0..5000 ;
                         detect d else ~d p=0.9 ; env F -> R : mean=3000 dev=500 }
    illegal atmost 1 in P
    illegal pattern (P, P, *)

Operator precedence, tightest first: ``->``, ``;``, ``[]``/``|~|``,
``|||``/``[| .. |]``.  Binary operators associate to the left.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .convert import NotFsmConvertible, ProcessEnv, csp_to_fsm, fsm_to_csp
from .csp import (
    STOP,
    SKIP,
    ChannelOp,
    EventLabel,
    ExtChoice,
    IntChoice,
    Interleave,
    NamedRef,
    Prefix,
    Seq,
    SyncParallel,
    Term,
    alphabet,
    show,
    subterms,
)
from .model import (
    AtMost,
    FsmSpec,
    Pattern,
    QueueDecl,
    Scenario,
    SwarmSpec,
    Timing,
    TimingMatrix,
    owner,
    parse_action,
)


class SpecSyntaxError(Exception):
    def __init__(self, line: int, col: int, expected: list[str], got: str = ""):
        exp = ", ".join(expected)
        super().__init__(f"{line}:{col}: expected {exp}" + (f", got {got!r}" if got else ""))
        self.line = line
        self.col = col
        self.expected = expected


class ValidationError(Exception):
    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<action>[A-Za-z_]\w*(?:!!|!|\?)[A-Za-z_]\w*)
  | (?P<ident>~?[A-Za-z_]\w*(?:\.\d+)*)
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
  | (?P<op>\[\||\|\]|\|\|\||\|~\||\[\]|->|\.\.|[;,(){}=:*])
    """,
    re.VERBOSE,
)

_CONTINUES = {"->", "[]", "|~|", "|||", ";", "[|", ",", "="}


@dataclass
class Tok:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Tok]:
    toks: list[Tok] = []
    line, col, pos = 1, 1, 0
    parens = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise SpecSyntaxError(line, col, ["token"], text[pos])
        kind, val = m.lastgroup, m.group()
        if kind == "nl":
            last = toks[-1] if toks else None
            if parens == 0 and last is not None and last.kind != "nl" and last.text not in _CONTINUES:
                toks.append(Tok("nl", "\n", line, col))
            line, col = line + 1, 1
        elif kind not in ("ws", "comment"):
            if val == "(":
                parens += 1
            elif val == ")":
                parens -= 1
            toks.append(Tok(kind, val, line, col))
            col += len(val)
        else:
            col += len(val)
        pos = m.end()
    toks.append(Tok("eof", "", line, col))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    @property
    def cur(self) -> Tok:
        return self.toks[self.i]

    def fail(self, *expected: str):
        t = self.cur
        raise SpecSyntaxError(t.line, t.col, list(expected), t.text)

    def at(self, *texts: str) -> bool:
        return self.cur.text in texts and self.cur.kind in ("op", "ident")

    def take(self, text: str) -> Tok:
        if self.cur.text != text:
            self.fail(repr(text))
        t = self.cur
        self.i += 1
        return t

    def ident(self) -> str:
        if self.cur.kind != "ident":
            self.fail("identifier")
        t = self.cur
        self.i += 1
        return t.text

    def number(self) -> float:
        if self.cur.kind != "number":
            self.fail("number")
        t = self.cur
        self.i += 1
        return float(t.text)

    def skip_nl(self):
        while self.cur.kind == "nl":
            self.i += 1

    def end_stmt(self):
        if self.cur.kind == "eof":
            return
        if self.cur.kind != "nl":
            self.fail("end of line")
        self.skip_nl()

    # -- statements -------------------------------------------------------

    def spec(self) -> dict:
        out = {"k": None, "channels": {}, "processes": {}, "fsm": None, "profiles": {},
               "illegal": [], "queue": None, "scenarios": {}, "views": {}, "lines": {}}
        self.skip_nl()
        if self.cur.kind == "eof":
            self.fail("statement")
        while self.cur.kind != "eof":
            kw = self.cur.text
            line = self.cur.line
            if kw == "swarm":
                self.i += 1
                self.take("k")
                self.take("=")
                out["k"] = int(self.number())
            elif kw == "channel":
                self.i += 1
                name = self.ident()
                msgs: tuple = ()
                if self.at("msgs"):
                    self.i += 1
                    self.take(":")
                    msgs = tuple(self.ident_list())
                out["channels"][name] = msgs
            elif kw == "queue":
                self.i += 1
                policy = self.ident()
                release: tuple = ()
                if self.at("release"):
                    self.i += 1
                    release = tuple(self.ident_list())
                out["queue"] = QueueDecl(policy, release)
            elif kw == "fsm":
                self.i += 1
                self.ident()
                out["fsm"] = self.fsm_block()
            elif kw == "process":
                self.i += 1
                name = self.ident()
                self.take("=")
                out["processes"][name] = self.expr()
                out["lines"][name] = line
            elif kw == "profile":
                self.i += 1
                name = self.ident()
                out["profiles"][name] = self.profile_block()
            elif kw == "scenario":
                self.i += 1
                name = self.ident()
                out["scenarios"][name] = self.scenario_block(name)
            elif kw == "illegal":
                self.i += 1
                out["illegal"].append(self.predicate())
            elif kw == "view":
                self.i += 1
                name = self.ident()
                out["views"][name] = self.view_block()
            else:
                self.fail("swarm", "channel", "queue", "fsm", "process", "profile",
                          "scenario", "view", "illegal")
            self.end_stmt()
        return out

    def ident_list(self) -> list[str]:
        items = [self.ident()]
        while self.at(","):
            self.i += 1
            items.append(self.ident())
        return items

    def block_items(self, item):
        self.take("{")
        self.skip_nl()
        while not self.at("}"):
            item()
            if self.at(";"):
                self.i += 1
            self.skip_nl()
        self.take("}")

    def fsm_block(self) -> dict:
        fsm = {"states": [], "initial": None, "on": [], "alphabet": None}

        def item():
            if self.at("states"):
                self.i += 1
                self.take(":")
                fsm["states"] = self.ident_list()
            elif self.at("initial"):
                self.i += 1
                self.take(":")
                fsm["initial"] = self.ident()
            elif self.at("alphabet"):
                self.i += 1
                self.take(":")
                fsm["alphabet"] = [self.event_token()]
                while self.at(","):
                    self.i += 1
                    fsm["alphabet"].append(self.event_token())
            elif self.at("on"):
                t = self.cur
                self.i += 1
                ev = self.event_token()
                src = self.ident()
                self.take("->")
                fsm["on"].append((src, ev, self.ident(), t.line))
            else:
                self.fail("states", "initial", "alphabet", "on")

        self.block_items(item)
        return fsm

    def event_token(self) -> str:
        if self.cur.kind not in ("ident", "action"):
            self.fail("event")
        t = self.cur
        self.i += 1
        return t.text

    def timing(self) -> Timing:
        self.take("mean")
        self.take("=")
        mean = self.number()
        self.take("dev")
        self.take("=")
        return Timing(mean, self.number())

    def profile_block(self) -> TimingMatrix:
        tm = TimingMatrix()

        def item():
            if self.at("latency"):
                self.i += 1
                self.take(":")
                tm.comm_latency = self.timing()
                return
            src = self.ident()
            self.take("->")
            dst = self.ident()
            self.take(":")
            tm.entries[(src, dst)] = self.timing()

        self.block_items(item)
        return tm

    def scenario_block(self, name: str) -> Scenario:
        sc = Scenario(name)

        def item():
            if self.at("object"):
                self.i += 1
                self.take("at")
                self.take("=")
                sc.objects.append(self.number())
            elif self.at("locate"):
                self.i += 1
                sc.locate = self.event_token()
                self.take("window")
                self.take("=")
                lo = self.number()
                self.take("..")
                sc.window = (lo, self.number())
            elif self.at("detect"):
                self.i += 1
                sc.detect = self.event_token()
                self.take("else")
                sc.miss = self.event_token()
                self.take("p")
                self.take("=")
                sc.p_detect = self.number()
            elif self.at("env"):
                self.i += 1
                src = self.ident()
                self.take("->")
                dst = self.ident()
                self.take(":")
                sc.env[(src, dst)] = self.timing()
            else:
                self.fail("object", "locate", "detect", "env")

        self.block_items(item)
        return sc

    def view_block(self) -> dict:
        view: dict = {}

        def item():
            label = self.ident()
            self.take(":")
            view[label] = tuple(self.ident_list())

        self.block_items(item)
        return view

    def predicate(self):
        if self.at("atmost"):
            self.i += 1
            n = int(self.number())
            self.take("in")
            return AtMost(n, self.ident())
        if self.at("pattern"):
            self.i += 1
            self.take("(")
            items = []
            while True:
                if self.at("*"):
                    self.i += 1
                    items.append("*")
                else:
                    items.append(self.ident())
                if not self.at(","):
                    break
                self.i += 1
            self.take(")")
            return Pattern(tuple(items))
        self.fail("atmost", "pattern")

    # -- process expressions ---------------------------------------------

    def expr(self) -> Term:
        left = self.choice()
        while True:
            if self.at("|||"):
                self.i += 1
                left = Interleave(left, self.choice())
            elif self.at("[|"):
                self.i += 1
                names = [] if self.at("|]") else [self.event_token()]
                while self.at(","):
                    self.i += 1
                    names.append(self.event_token())
                self.take("|]")
                left = SyncParallel(left, self.choice(), frozenset(names))
            else:
                return left

    def choice(self) -> Term:
        left = self.seq()
        while self.at("[]", "|~|"):
            op = self.cur.text
            self.i += 1
            right = self.seq()
            left = ExtChoice(left, right) if op == "[]" else IntChoice(left, right)
        return left

    def seq(self) -> Term:
        left = self.prefix()
        while self.at(";"):
            self.i += 1
            left = Seq(left, self.prefix())
        return left

    def prefix(self) -> Term:
        t = self.cur
        if t.kind == "action" or (t.kind == "ident" and self.toks[self.i + 1].text == "->"):
            self.i += 1
            self.take("->")
            return Prefix(_raw_action(t.text), self.prefix())
        if t.text == "(":
            self.i += 1
            e = self.expr()
            self.take(")")
            return e
        if t.kind == "ident":
            self.i += 1
            if t.text == "SKIP":
                return SKIP
            if t.text == "STOP":
                return STOP
            return NamedRef(t.text)
        self.fail("event", "process name", "SKIP", "STOP", "'('")


def _raw_action(text: str):
    # binder-vs-value is decided once channels are known (see _bind_reads)
    return parse_action(text, None)


def _bind_reads(term: Term, channels: dict) -> Term:
    from .csp import map_actions

    def fn(action, body):
        if isinstance(action, ChannelOp) and action.direction == "read":
            action = parse_action(action.name, channels)
        return Prefix(action, body)

    return map_actions(term, fn)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _guard_cycles(defs: dict) -> list[str]:
    """Names reachable from themselves without passing through a Prefix."""

    def unguarded(term: Term) -> set[str]:
        if isinstance(term, NamedRef):
            return {term.name}
        if isinstance(term, Prefix):
            return set()
        if isinstance(term, Seq):
            return unguarded(term.left)
        if hasattr(term, "left"):
            return unguarded(term.left) | unguarded(term.right)
        return set()

    graph = {n: unguarded(b) for n, b in defs.items()}
    bad = []
    for start in defs:
        stack, seen = list(graph[start]), set()
        while stack:
            n = stack.pop()
            if n == start:
                bad.append(start)
                break
            if n in seen or n not in graph:
                continue
            seen.add(n)
            stack.extend(graph[n])
    return bad


def validate(spec: SwarmSpec) -> None:
    diags: list[str] = []
    if spec.k < 1:
        diags.append(f"swarm size k={spec.k} must be >= 1")
    defs = spec.processes
    for name, body in defs.items():
        for sub in subterms(body):
            if isinstance(sub, NamedRef) and sub.name not in defs:
                diags.append(f"process {name}: undeclared process {sub.name}")
            if isinstance(sub, Prefix) and isinstance(sub.action, ChannelOp):
                op = sub.action
                if op.channel not in spec.channels:
                    diags.append(f"process {name}: undeclared channel {op.channel}")
                elif (op.direction == "write" and spec.channels[op.channel]
                      and op.message not in spec.channels[op.channel]):
                    diags.append(f"process {name}: undeclared message {op.message} on {op.channel}")
            if isinstance(sub, SyncParallel):
                alpha = alphabet(sub.left, defs) | alphabet(sub.right, defs)
                for e in sorted(sub.sync_set - alpha):
                    diags.append(f"process {name}: sync event {e} not in operand alphabets")
    for name in _guard_cycles(defs):
        diags.append(f"process {name}: unguarded recursion")

    fsm = spec.fsm
    if fsm is not None:
        states = set(fsm.states)
        if fsm.initial not in states:
            diags.append(f"fsm: initial state {fsm.initial} is not declared")
        for (src, ev), dst in fsm.transitions.items():
            for s in (src, dst):
                if s not in states:
                    diags.append(f"fsm: transition on {ev} uses undeclared state {s}")
            if ev not in fsm.alphabet:
                diags.append(f"fsm: event {ev} is not in the alphabet")
            act = parse_action(ev, spec.channels)
            if isinstance(act, ChannelOp) and act.channel not in spec.channels:
                diags.append(f"fsm: undeclared channel {act.channel}")
    if not diags and fsm is not None and defs:
        try:
            derived = csp_to_fsm(ProcessEnv(dict(defs), fsm.initial, fsm.alphabet))
        except NotFsmConvertible as exc:
            diags.append(f"process {exc.definition}: {exc.reason}")
        else:
            if derived != fsm:
                diags.append("fsm block disagrees with the process definitions")
    if fsm is None and not defs:
        diags.append("no robot definition (fsm or process blocks)")

    robot_states: set[str] = set()
    if not diags:
        try:
            rf = spec.robot_fsm()
            robot_states = set(rf.states) | set(rf.view_states)
        except NotFsmConvertible:
            robot_states = set(defs)
    else:
        robot_states = set(fsm.states) if fsm is not None else set(defs)
        robot_states |= {owner(s) for s in robot_states}

    for pred in spec.illegal:
        if isinstance(pred, AtMost):
            if pred.state not in robot_states:
                diags.append(f"illegal: undeclared state {pred.state}")
            if not 0 <= pred.n < spec.k:
                diags.append(f"illegal: atmost {pred.n} is vacuous for k={spec.k}")
        else:
            if len(pred.pattern) != spec.k:
                diags.append(f"illegal: pattern arity {len(pred.pattern)} != k={spec.k}")
            for s in pred.pattern:
                if s != "*" and s not in robot_states:
                    diags.append(f"illegal: undeclared state {s}")

    if not diags and (spec.profiles or spec.scenarios):
        try:
            rf = spec.robot_fsm()
        except NotFsmConvertible as exc:
            diags.append(f"profiles need an FSM view: {exc}")
            rf = None
        if rf is not None:
            for pname, tm in spec.profiles.items():
                for (src, dst), t in tm.entries.items():
                    if not rf.admits(src, dst):
                        diags.append(f"profile {pname}: no transition {src} -> {dst}")
                    if t.mean <= 0 or t.dev < 0:
                        diags.append(f"profile {pname}: bad timing for {src} -> {dst}")
            for sc in spec.scenarios.values():
                for (src, dst), t in sc.env.items():
                    if not rf.admits(src, dst):
                        diags.append(f"scenario {sc.name}: no transition {src} -> {dst}")
                if not 0.0 <= sc.p_detect <= 1.0:
                    diags.append(f"scenario {sc.name}: p must lie in [0, 1]")
    if not diags:
        for vname, view in spec.views.items():
            listed = [s for states in view.values() for s in states]
            fine = set(spec.robot_fsm().states)
            if len(listed) != len(set(listed)) or set(listed) != fine:
                diags.append(f"view {vname}: classes must partition the robot states")
    if spec.queue is not None:
        if spec.queue.policy not in ("rotate", "static"):
            diags.append(f"queue: unknown policy {spec.queue.policy}")
        if not diags:
            alpha = spec.robot_fsm().alphabet
            for e in spec.queue.release:
                if e not in alpha:
                    diags.append(f"queue: release event {e} not in the alphabet")
    if diags:
        raise ValidationError(diags)


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def parse(text: str) -> SwarmSpec:
    raw = _Parser(text).spec()
    if raw["k"] is None:
        raise ValidationError(["missing 'swarm k=<int>' statement"])
    channels = raw["channels"]
    processes = {n: _bind_reads(t, channels) for n, t in raw["processes"].items()}
    fsm = None
    if raw["fsm"] is not None:
        f = raw["fsm"]
        trans: dict = {}
        diags = []
        for src, ev, dst, line in f["on"]:
            if (src, ev) in trans and trans[(src, ev)] != dst:
                diags.append(f"line {line}: non-deterministic transition on {ev} from {src}")
            trans[(src, ev)] = dst
        if f["initial"] is None:
            diags.append("fsm: initial state missing")
        if diags:
            raise ValidationError(diags)
        used = {ev for (_, ev) in trans}
        alpha = frozenset(f["alphabet"]) if f["alphabet"] is not None else frozenset(used)
        fsm = FsmSpec(alpha, tuple(f["states"]), f["initial"], trans)
    spec = SwarmSpec(k=raw["k"], channels=channels, processes=processes, fsm=fsm,
                     profiles=raw["profiles"], illegal=raw["illegal"], queue=raw["queue"],
                     scenarios=raw["scenarios"], views=raw["views"])
    validate(spec)
    return spec


def _num(x: float) -> str:
    return repr(float(x)).removesuffix(".0") if float(x).is_integer() else repr(float(x))


def _timing(t: Timing) -> str:
    return f"mean={_num(t.mean)} dev={_num(t.dev)}"


def print_spec(spec: SwarmSpec) -> str:
    """Canonical source text; ``parse(print_spec(s)) == s``."""
    out = [f"swarm k={spec.k}"]
    for name in sorted(spec.channels):
        msgs = spec.channels[name]
        out.append(f"channel {name}" + (f" msgs: {', '.join(msgs)}" if msgs else ""))
    if spec.queue is not None:
        q = spec.queue
        out.append(f"queue {q.policy}" + (f" release {', '.join(q.release)}" if q.release else ""))
    if spec.fsm is not None:
        f = spec.fsm
        used = {ev for (_, ev) in f.transitions}
        lines = [f"  states: {', '.join(f.states)}", f"  initial: {f.initial}"]
        if set(f.alphabet) != used:
            lines.append(f"  alphabet: {', '.join(sorted(f.alphabet))}")
        order = {s: i for i, s in enumerate(f.states)}
        for (src, ev), dst in sorted(f.transitions.items(),
                                     key=lambda kv: (order.get(kv[0][0], 0), kv[0][1])):
            lines.append(f"  on {ev} {src} -> {dst}")
        out.append("fsm robot {\n" + "\n".join(lines) + "\n}")
    for name, body in spec.processes.items():
        out.append(f"process {name} = {show(body)}")
    for name in sorted(spec.profiles):
        tm = spec.profiles[name]
        lines = [f"  {s} -> {d} : {_timing(t)}" for (s, d), t in sorted(tm.entries.items())]
        if tm.comm_latency != Timing(0.0, 0.0):
            lines.append(f"  latency : {_timing(tm.comm_latency)}")
        out.append(f"profile {name} {{\n" + "\n".join(lines) + "\n}")
    for name in sorted(spec.scenarios):
        sc = spec.scenarios[name]
        lines = [f"  object at={_num(t)}" for t in sc.objects]
        lines.append(f"  locate {sc.locate} window={_num(sc.window[0])}..{_num(sc.window[1])}")
        lines.append(f"  detect {sc.detect} else {sc.miss} p={_num(sc.p_detect)}")
        lines += [f"  env {s} -> {d} : {_timing(t)}" for (s, d), t in sorted(sc.env.items())]
        out.append(f"scenario {name} {{\n" + "\n".join(lines) + "\n}")
    for name in sorted(spec.views):
        lines = [f"  {label}: {', '.join(states)}" for label, states in spec.views[name].items()]
        out.append(f"view {name} {{\n" + "\n".join(lines) + "\n}")
    for pred in spec.illegal:
        out.append(f"illegal {pred}")
    return "\n".join(out) + "\n"
