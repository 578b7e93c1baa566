"""Discrete-event execution of an APN for one replication.

Semantics in brief:

* every (token, transition) pair that is enabled gets its own pending firing
  (infinite-server race); a pair that becomes disabled is preempted and a
  fresh delay is drawn if it is enabled again later;
* a token ages at rate 1 while it has at least one pending firing; the
  accrued age is committed on preemption of its last pending firing and on
  firing, where the transition's age action is applied;
* simultaneous firings are ordered by (higher priority, older token, lower
  color, lower token id, lower transition id), transition ids compared as
  strings;
* newly enabled pairs draw their delays in (token id, transition id) order,
  so the run is a pure function of (net, seed, horizon).
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass
from typing import NamedTuple

from . import model
from .model import Net
from .stats import FiringCounter, PlaceSampler

LIVELOCK_LIMIT = 1_000_000

_IMMEDIATE, _FIXED, _EXPONENTIAL, _WEIBULL, _UNIFORM = range(5)

# pending-entry layout; the first seven fields are the ordering key
_TIME, _NEGPRIO, _NEGAGE, _COLOR, _TOKEN, _TRANS, _SEQ, _TOK, _ALIVE = range(9)


class LivelockError(RuntimeError):
    def __init__(self, time: float, transitions: list[str]):
        self.time = time
        self.transitions = sorted(transitions)
        super().__init__(f"more than {LIVELOCK_LIMIT} firings at time {time} "
                         f"without the clock advancing; repeating: {', '.join(self.transitions)}")


class InternalError(RuntimeError):
    """Engine bookkeeping went wrong (stale pending entry, broken invariant)."""


class ColorClosureError(RuntimeError):
    pass


class TraceRecord(NamedTuple):
    time: float
    event: str
    transition: str
    token: int
    color_before: int
    color_after: int
    from_place: str | None
    to_place: str | None
    age_before: float
    age_after: float


class Token:
    __slots__ = ("id", "place", "color", "age0", "since", "pend")

    def __init__(self, id: int, place: int, color: int, age: float):
        self.id = id
        self.place = place
        self.color = color
        self.age0 = age
        self.since = None
        self.pend = {}

    def age_at(self, t: float) -> float:
        if self.since is None:
            return self.age0
        return self.age0 + (t - self.since)


def _compile_policy(p):
    if isinstance(p, model.Immediate):
        return (_IMMEDIATE, 0.0, 0.0, -p.priority)
    if isinstance(p, model.Fixed):
        return (_FIXED, float(p.delay), 0.0, 0)
    if isinstance(p, model.Exponential):
        return (_EXPONENTIAL, float(p.mean), 0.0, 0)
    if isinstance(p, model.Weibull):
        return (_WEIBULL, float(p.scale), 1.0 / p.shape, 0)
    if isinstance(p, model.Uniform):
        return (_UNIFORM, float(p.a), float(p.b) - float(p.a), 0)
    raise TypeError(p)


class CompiledNet:
    """Index-based view of a validated :class:`Net`, shareable between runs."""

    def __init__(self, net: Net):
        model.check(net)
        self.net = net
        self.places = list(net.places)
        self.pid = {p: i for i, p in enumerate(self.places)}
        self.tnames = [t.id for t in net.transitions]
        self.tidx = {t: i for i, t in enumerate(self.tnames)}
        nt = len(self.tnames)
        self.tin = [-1] * nt
        self.tout = [-1] * nt
        self.tpol = [None] * nt
        self.twild = [None] * nt
        self.tcmap = [None] * nt
        self.tage = [None] * nt
        self.temit = [0] * nt
        self.ttrig = [[] for _ in range(nt)]
        self.pout = [[] for _ in self.places]
        self.pwatch = [[] for _ in self.places]
        self.sources = []
        for i, t in enumerate(net.transitions):
            self.tin[i] = self.pid[t.input] if t.input is not None else -1
            self.tout[i] = self.pid[t.output] if t.output is not None else -1
            self.tpol[i] = {c: _compile_policy(p) for c, p in t.policies.items()
                            if c != model.WILDCARD}
            wild = t.policies.get(model.WILDCARD)
            self.twild[i] = _compile_policy(wild) if wild is not None else None
            self.tcmap[i] = dict(t.color_map)
            self.tage[i] = (t.age_action.kind, t.age_action.alpha)
            self.temit[i] = t.emit_color
            if self.tin[i] >= 0:
                self.pout[self.tin[i]].append(i)
            else:
                self.sources.append(i)
        for g in net.triggers:
            i = self.tidx[g.target]
            p = self.pid[g.place]
            self.ttrig[i].append((g.kind == "inhibitor", p, g.multiplicity, g.colors))
            if i not in self.pwatch[p]:
                self.pwatch[p].append(i)
        self.ttrig = [tuple(x) for x in self.ttrig]

    def policy(self, t: int, color: int):
        pol = self.tpol[t].get(color)
        return pol if pol is not None else self.twild[t]


class Simulator:
    """State of one replication: clock, tokens, pending firings and RNG stream.

    ``check`` recomputes the pending set from scratch after every firing and
    raises :class:`InternalError` when it disagrees with the incremental one.
    ``allowed_colors`` maps place ids to the colors they may hold.
    ``shuffle`` permutes internal iteration orders (for invariance tests).
    """

    def __init__(self, net, seed: int, horizon: float, *, window=None, trace: bool = False,
                 check: bool = False, allowed_colors=None, shuffle: random.Random | None = None,
                 livelock_limit: int = LIVELOCK_LIMIT):
        if not horizon > 0:
            raise ValueError("horizon must be > 0")
        cn = net if isinstance(net, CompiledNet) else CompiledNet(net)
        self.cn = cn
        self.horizon = float(horizon)
        self.rng = random.Random(seed)
        self.clock = 0.0
        self.trace: list[TraceRecord] | None = [] if trace else None
        self.check = check
        self.livelock_limit = livelock_limit
        self.shuffle = shuffle
        self.allowed = None
        if allowed_colors is not None:
            self.allowed = {cn.pid[p]: frozenset(c) for p, c in allowed_colors.items()}
        self._pout = [list(x) for x in cn.pout]
        self._pwatch = [list(x) for x in cn.pwatch]
        self._sources = list(cn.sources)
        if shuffle is not None:
            for lst in self._pout + self._pwatch + [self._sources]:
                shuffle.shuffle(lst)

        n = len(cn.places)
        self.tokens = [dict() for _ in range(n)]
        self.cnt = [0] * n
        self.ccnt = [dict() for _ in range(n)]
        self.heap = []
        self.src_pend = {}
        self._seq = 0
        self.next_id = 1
        self.fired = 0
        self._same_instant = 0
        self._recent = None

        default_window = window
        if default_window is None and cn.net.simulation is not None:
            default_window = cn.net.simulation.window
        self.psens = [[] for _ in range(n)]
        self.fsens = [[] for _ in cn.tnames]
        self.samplers = []
        for spec in cn.net.sensors:
            t1, t2 = spec.resolve_window(self.horizon, default_window)
            if spec.kind == "firing_count":
                s = FiringCounter(spec, t1, t2)
                self.fsens[cn.tidx[spec.transition]].append(s)
            else:
                s = PlaceSampler(spec, t1, t2, 0)
                self.psens[cn.pid[spec.place]].append(s)
            self.samplers.append(s)

        for spec in cn.net.tokens:
            for _ in range(spec.count):
                tok = Token(self.next_id, cn.pid[spec.place], spec.color, float(spec.age))
                self.next_id += 1
                self._deposit(tok)
        pairs = []
        for p in range(n):
            for tok in self._iter_tokens(p):
                for t in self._pout[p]:
                    pairs.append((tok, t))
        self._update(pairs, self._sources)
        self._verify()

    # -- marking bookkeeping ---------------------------------------------------

    def _iter_tokens(self, p):
        toks = self.tokens[p].values()
        if self.shuffle is not None:
            toks = list(toks)
            self.shuffle.shuffle(toks)
        return toks

    def _count(self, p, colors):
        if colors is None:
            return self.cnt[p]
        cc = self.ccnt[p]
        return sum(cc.get(c, 0) for c in colors)

    def _sense(self, p):
        for s in self.psens[p]:
            s.change(self.clock, self._count(p, s.colors))

    def _deposit(self, tok):
        p = tok.place
        if self.allowed is not None and p in self.allowed and tok.color not in self.allowed[p]:
            raise ColorClosureError(f"token {tok.id} of color {tok.color} entered "
                                    f"{self.cn.places[p]} at time {self.clock}")
        self.tokens[p][tok.id] = tok
        self.cnt[p] += 1
        cc = self.ccnt[p]
        cc[tok.color] = cc.get(tok.color, 0) + 1
        if self.psens[p]:
            self._sense(p)

    def _withdraw(self, tok):
        p = tok.place
        del self.tokens[p][tok.id]
        self.cnt[p] -= 1
        cc = self.ccnt[p]
        cc[tok.color] -= 1
        if self.psens[p]:
            self._sense(p)

    # -- enabling --------------------------------------------------------------

    def _triggers_ok(self, t) -> bool:
        for inhibitor, p, k, colors in self.cn.ttrig[t]:
            n = self.cnt[p] if colors is None else self._count(p, colors)
            if inhibitor:
                if n >= k:
                    return False
            elif n < k:
                return False
        return True

    def _enabled(self, tok, t) -> bool:
        if tok.place != self.cn.tin[t]:
            return False
        if self.cn.policy(t, tok.color) is None:
            return False
        return self._triggers_ok(t)

    def is_enabled(self, token_id: int, transition_id: str) -> bool:
        """True iff the token sits in the input place, the transition has a
        policy for its color and all triggers of the transition are satisfied."""
        return self._enabled(self.token(token_id), self.cn.tidx[transition_id])

    def token(self, token_id: int) -> Token:
        for place in self.tokens:
            if token_id in place:
                return place[token_id]
        raise KeyError(token_id)

    # -- scheduling --------------------------------------------------------------

    def _delay(self, pol) -> float:
        code = pol[0]
        if code == _IMMEDIATE:
            return 0.0
        if code == _FIXED:
            return pol[1]
        u = self.rng.random()
        if code == _EXPONENTIAL:
            return -pol[1] * math.log(1.0 - u)
        if code == _WEIBULL:
            return pol[1] * (-math.log(1.0 - u)) ** pol[2]
        return pol[1] + pol[2] * u

    def _schedule(self, tok, t):
        cn = self.cn
        pol = cn.policy(t, tok.color)
        fire = self.clock + self._delay(pol)
        if tok.since is None:
            tok.since = self.clock
        self._seq += 1
        entry = [fire, pol[3], -(tok.age0 + (fire - tok.since)), tok.color, tok.id, t,
                 self._seq, tok, True]
        heapq.heappush(self.heap, entry)
        tok.pend[t] = entry
        if self.trace is not None:
            age = tok.age_at(self.clock)
            self.trace.append(TraceRecord(self.clock, "enable", cn.tnames[t], tok.id, tok.color,
                                          tok.color, cn.places[tok.place], None, age, age))
        return entry

    def _schedule_source(self, t):
        cn = self.cn
        color = cn.temit[t]
        pol = cn.policy(t, color)
        fire = self.clock + self._delay(pol)
        self._seq += 1
        entry = [fire, pol[3], -0.0, color, -1, t, self._seq, None, True]
        heapq.heappush(self.heap, entry)
        self.src_pend[t] = entry
        return entry

    def _preempt(self, tok, t):
        entry = tok.pend.pop(t)
        entry[_ALIVE] = False
        age = tok.age_at(self.clock)
        if not tok.pend:
            tok.age0 = age
            tok.since = None
        if self.trace is not None:
            cn = self.cn
            self.trace.append(TraceRecord(self.clock, "preempt", cn.tnames[t], tok.id, tok.color,
                                          tok.color, cn.places[tok.place], None, age, age))

    def _update(self, pairs, sources=()):
        """Bring the pending set in line with the marking for the given candidates."""
        start, stop, seen = [], [], set()
        for tok, t in pairs:
            key = (tok.id, t)
            if key in seen:
                continue
            seen.add(key)
            enabled = self._enabled(tok, t)
            if enabled:
                if t not in tok.pend:
                    start.append(key + (tok,))
            elif t in tok.pend:
                stop.append(key + (tok,))
        src_start, src_stop = [], []
        for t in dict.fromkeys(sources):
            ok = self._triggers_ok(t)
            if ok and t not in self.src_pend:
                src_start.append(t)
            elif not ok and t in self.src_pend:
                src_stop.append(t)
        # sources carry token id -1 so they draw first
        for t in sorted(src_start):
            self._schedule_source(t)
        start.sort(key=lambda x: (x[0], self.cn.tnames[x[1]]))
        for _, t, tok in start:
            self._schedule(tok, t)
        for t in sorted(src_stop):
            self.src_pend.pop(t)[_ALIVE] = False
        stop.sort(key=lambda x: (x[0], self.cn.tnames[x[1]]))
        for _, t, tok in stop:
            self._preempt(tok, t)

    def _affected(self, places):
        pairs, sources = [], []
        tin = self.cn.tin
        for p in places:
            for t in self._pwatch[p]:
                q = tin[t]
                if q < 0:
                    sources.append(t)
                else:
                    for tok in self._iter_tokens(q):
                        pairs.append((tok, t))
        return pairs, sources

    # -- firing ------------------------------------------------------------------

    def fire(self, entry) -> None:
        """Fire a pending entry whose time equals the clock."""
        if not entry[_ALIVE] or entry[_TIME] != self.clock:
            raise InternalError(f"stale pending entry {entry[:_TOK]}")
        cn = self.cn
        t = entry[_TRANS]
        entry[_ALIVE] = False
        self.fired += 1
        for s in self.fsens[t]:
            s.hit(self.clock)
        q = cn.tout[t]
        changed = []
        if entry[_TOK] is None:
            del self.src_pend[t]
            tok = Token(self.next_id, q, cn.temit[t], 0.0)
            self.next_id += 1
            self._deposit(tok)
            changed.append(q)
            if self.trace is not None:
                self.trace.append(TraceRecord(self.clock, "emit", cn.tnames[t], tok.id, tok.color,
                                              tok.color, None, cn.places[q], 0.0, 0.0))
            pairs, sources = self._affected(changed)
            pairs.extend((tok, u) for u in self._pout[q])
            sources.append(t)
            self._update(pairs, sources)
            return

        tok = entry[_TOK]
        if tok.pend.get(t) is not entry:
            raise InternalError(f"pending entry of token {tok.id} is not registered")
        del tok.pend[t]
        p = tok.place
        age_before = tok.age0 + (self.clock - tok.since)
        for u in sorted(tok.pend, key=lambda u: cn.tnames[u]):
            tok.pend[u][_ALIVE] = False
            if self.trace is not None:
                self.trace.append(TraceRecord(self.clock, "preempt", cn.tnames[u], tok.id,
                                              tok.color, tok.color, cn.places[p], None,
                                              age_before, age_before))
        tok.pend = {}
        kind, alpha = cn.tage[t]
        age_after = 0.0 if kind == "reset" else (age_before if kind == "keep" else alpha * age_before)
        tok.age0 = age_after
        tok.since = None
        color_before = tok.color
        self._withdraw(tok)
        changed.append(p)
        tok.color = cn.tcmap[t].get(color_before, color_before)
        if q >= 0:
            tok.place = q
            self._deposit(tok)
            if q != p:
                changed.append(q)
        if self.trace is not None:
            self.trace.append(TraceRecord(
                self.clock, "fire" if q >= 0 else "absorb", cn.tnames[t], tok.id, color_before,
                tok.color, cn.places[p], cn.places[q] if q >= 0 else None, age_before, age_after))
        pairs, sources = self._affected(changed)
        if q >= 0:
            pairs.extend((tok, u) for u in self._pout[q])
        self._update(pairs, sources)

    def _next_entry(self):
        heap = self.heap
        while heap and not heap[0][_ALIVE]:
            heapq.heappop(heap)
        return heap[0] if heap else None

    def _advance_one(self) -> bool:
        entry = self._next_entry()
        if entry is None or entry[_TIME] >= self.horizon:
            return False
        heapq.heappop(self.heap)
        if entry[_TIME] != self.clock:
            self.clock = entry[_TIME]
            self._same_instant = 0
            self._recent = None
        self._same_instant += 1
        if self._same_instant > self.livelock_limit - 1000:
            if self._recent is None:
                self._recent = set()
            self._recent.add(self.cn.tnames[entry[_TRANS]])
            if self._same_instant > self.livelock_limit:
                raise LivelockError(self.clock, sorted(self._recent))
        self.fire(entry)
        if self.check:
            self._verify()
        return True

    def step(self) -> float | None:
        """Resolve every firing at the next event time; returns the new clock,
        or None once the horizon is reached or nothing is pending."""
        entry = self._next_entry()
        if entry is None or entry[_TIME] >= self.horizon:
            return None
        when = entry[_TIME]
        while True:
            entry = self._next_entry()
            if entry is None or entry[_TIME] != when:
                break
            self._advance_one()
        return self.clock

    def run(self) -> "Replication":
        while self._advance_one():
            pass
        values = {s.spec.name: s.result(self.horizon) for s in self.samplers}
        return Replication(self.trace, values, self.fired)

    # -- introspection -------------------------------------------------------------

    def marking(self) -> dict[str, list[tuple[int, int, float]]]:
        """Place id -> sorted (token id, color, age now) triples."""
        out = {}
        for p, toks in enumerate(self.tokens):
            out[self.cn.places[p]] = sorted((k.id, k.color, k.age_at(self.clock))
                                            for k in toks.values())
        return out

    def pending(self) -> set[tuple[int, str]]:
        """Currently scheduled (token id, transition id) pairs; sources use id -1."""
        out = {(-1, self.cn.tnames[t]) for t in self.src_pend}
        for toks in self.tokens:
            for tok in toks.values():
                out.update((tok.id, self.cn.tnames[t]) for t in tok.pend)
        return out

    def scheduled(self, token_id: int, transition_id: str) -> float | None:
        """Fire time of the pending (token, transition) pair, or None."""
        entry = self.token(token_id).pend.get(self.cn.tidx[transition_id])
        return entry[_TIME] if entry is not None else None

    def draw(self, policy) -> float:
        """One delay sampled from ``policy`` with this replication's stream."""
        return self._delay(_compile_policy(policy))

    def enabled_pairs(self) -> set[tuple[int, str]]:
        """The pending set recomputed from scratch."""
        cn = self.cn
        out = {(-1, cn.tnames[t]) for t in cn.sources if self._triggers_ok(t)}
        for p, toks in enumerate(self.tokens):
            for tok in toks.values():
                out.update((tok.id, cn.tnames[t]) for t in cn.pout[p] if self._enabled(tok, t))
        return out

    def _verify(self):
        if not self.check:
            return
        have, want = self.pending(), self.enabled_pairs()
        if have != want:
            raise InternalError(f"pending set out of sync at t={self.clock}: "
                                f"missing {sorted(want - have)}, stale {sorted(have - want)}")
        want_src = {t for t in self.cn.sources if self._triggers_ok(t)}
        live_src = [e[_TRANS] for e in self.heap if e[_ALIVE] and e[_TOK] is None]
        if set(self.src_pend) != want_src or sorted(live_src) != sorted(want_src):
            raise InternalError(f"source clocks out of sync at t={self.clock}")
        for toks in self.tokens:
            for tok in toks.values():
                if tok.age_at(self.clock) < 0:
                    raise InternalError(f"token {tok.id} has negative age")
                if bool(tok.pend) != (tok.since is not None):
                    raise InternalError(f"token {tok.id} aging flag out of sync")


@dataclass
class Replication:
    trace: list[TraceRecord] | None
    values: dict[str, float]
    firings: int


def run_replication(net, seed: int, horizon: float, **options) -> Replication:
    """Run one replication; identical arguments give bit-identical results."""
    return Simulator(net, seed, horizon, **options).run()
