"""Brute-force reference implementations, written without the library's
operational semantics, used to cross-check it."""

from __future__ import annotations

import re
from collections import deque
from itertools import combinations

_OP = re.compile(r"^(\w+)(!!|!|\?)(\w+)$")


def shuffles(u: tuple, v: tuple) -> set:
    """Every interleaving of two sequences, by choosing positions for ``u``."""
    n = len(u) + len(v)
    out = set()
    for pos in combinations(range(n), len(u)):
        it_u, it_v, seq = iter(u), iter(v), []
        chosen = set(pos)
        for i in range(n):
            seq.append(next(it_u) if i in chosen else next(it_v))
        out.add(tuple(seq))
    return out


def prefixes(trs) -> set:
    return {tr[:i] for tr in trs for i in range(len(tr) + 1)}


def shuffle_product(ts: set, us: set) -> set:
    out = set()
    for t in ts:
        for u in us:
            out |= shuffles(t, u)
    return out


def fsm_paths(transitions: dict, initial: str, n: int) -> set:
    """Event sequences of length <= n, by direct enumeration of δ."""
    out = {()}
    frontier = [((), initial)]
    for _ in range(n):
        nxt = []
        for tr, s in frontier:
            for (src, ev), dst in transitions.items():
                if src == s:
                    nxt.append((tr + (ev,), dst))
        out.update(tr for tr, _ in nxt)
        frontier = nxt
    return out


class ProductMachine:
    """Swarm of k copies of a robot FSM, composed by hand.

    Robot-local state is ``(fsm state, writes already done by a broadcast)``.
    A broadcast ``c!!m`` is k-1 writes, each of which pairs with any other
    robot currently able to read ``c?m``.  Plain events fire independently.
    An optional arbiter serialises the queue guard events: the master event
    needs a free queue, the defer event a held one, release events free it.
    Labels are strings in the library's printed form (``d.0``, ``c.p[0>1]``).
    """

    def __init__(self, fsm, k: int, channels: dict, queue=None):
        self.k = k
        self.initial = fsm.initial
        self.out: dict[str, list] = {}
        for (src, ev), dst in fsm.transitions.items():
            self.out.setdefault(src, []).append((ev, dst))
        self.channels = channels
        self.queue = queue

    def _read_ok(self, ev: str, chan: str, msg: str) -> bool:
        m = _OP.match(ev)
        if not m or m.group(2) != "?" or m.group(1) != chan:
            return False
        declared = self.channels.get(chan) or ()
        binder = declared and m.group(3) not in declared
        return binder or m.group(3) == msg

    def start(self):
        return (tuple((self.initial, 0) for _ in range(self.k)), False)

    def moves(self, g):
        robots, held = g
        out = []
        for i, (s, sent) in enumerate(robots):
            for ev, dst in sorted(self.out.get(s, [])):
                m = _OP.match(ev)
                if m and m.group(2) == "?":
                    continue  # reads only happen paired with a writer
                if m:
                    chan, msg = m.group(1), m.group(3)
                    need = self.k - 1 if m.group(2) == "!!" else 1
                    if need == 0:
                        out.append((None, self._set(g, i, (dst, 0))))
                        continue
                    mine = (dst, 0) if sent + 1 == need else (s, sent + 1)
                    for j, (sj, sent_j) in enumerate(robots):
                        if j == i or sent_j:
                            continue
                        for evj, dstj in self.out.get(sj, []):
                            if self._read_ok(evj, chan, msg):
                                g2 = self._set(self._set(g, i, mine), j, (dstj, 0))
                                out.append((f"{chan}.{msg}[{i}>{j}]", g2))
                    continue
                if sent:
                    continue
                label = f"{ev}.{i}"
                q = self.queue
                if q is not None:
                    if ev == q.master:
                        if held:
                            continue
                        out.append((label, (self._set(g, i, (dst, 0))[0], True)))
                        continue
                    if ev == q.defer and not held:
                        continue
                    if ev in q.release:
                        if not held:
                            continue
                        out.append((label, (self._set(g, i, (dst, 0))[0], False)))
                        continue
                out.append((label, self._set(g, i, (dst, 0))))
        return out

    @staticmethod
    def _set(g, i, local):
        robots, held = g
        return (robots[:i] + (local,) + robots[i + 1:], held)

    def explore(self, depth: int):
        """BFS; returns {global state: shortest trace} within ``depth`` events."""
        start = self.start()
        best = {start: ()}
        dq = deque([start])
        while dq:
            g = dq.popleft()
            tr = best[g]
            for lab, g2 in self.moves(g):
                tr2 = tr if lab is None else tr + (lab,)
                if len(tr2) > depth:
                    continue
                if g2 not in best or len(tr2) < len(best[g2]):
                    best[g2] = tr2
                    if lab is None:
                        dq.appendleft(g2)
                    else:
                        dq.append(g2)
        return best

    @staticmethod
    def meta(g) -> tuple:
        return tuple(s.split(".", 1)[0] for s, _ in g[0])

    def witnesses(self, depth: int, illegal) -> dict:
        """{(classification, meta-state): shortest trace length}."""
        found: dict = {}
        for g, tr in self.explore(depth).items():
            meta = self.meta(g)
            if any(not p.holds(meta) for p in illegal):
                key = ("illegal_meta", meta)
                found[key] = min(found.get(key, len(tr)), len(tr))
            if not self.moves(g):
                key = ("deadlock", meta)
                found[key] = min(found.get(key, len(tr)), len(tr))
        return found
