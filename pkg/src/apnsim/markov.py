"""Markov-chain oracle for small nets with exponential and immediate transitions.

Independent of the simulation engine: markings are multisets of
(place, color) counts, the generator is built by breadth-first exploration,
and transient probabilities come from uniformization.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass
from math import comb
from typing import Sequence, TextIO

import numpy as np
from scipy import sparse
from scipy.integrate import trapezoid

from . import model
from .model import Net

Marking = tuple  # sorted tuple of ((place, color), count)


class UnsupportedModel(ValueError):
    """The net cannot be turned into a CTMC."""


class VanishingCycle(UnsupportedModel):
    """Immediate transitions lead back to a marking already being resolved."""


# -- state counting -------------------------------------------------------------------

def count_states(n_customers: int, k_cars: int) -> int:
    """Number of system states for n customers sharing k breakable cars.

    m customers need a car, l cars work. With m <= l every needing customer
    drives; with m > l, l of the m drive and the rest wait. Cars are told
    apart (which ones are broken), drivers are not matched to cars.
    """
    n, k = n_customers, k_cars
    if n < 0 or k < 0:
        raise ValueError("counts must be non-negative")
    total = 0
    for m in range(n + 1):
        inner = sum(comb(m, l) * comb(k, l) for l in range(0, min(m, k + 1)))
        inner += sum(comb(k, l) for l in range(m, k + 1))
        total += comb(n, m) * inner
    return total


def enumerate_states(n_customers: int, k_cars: int) -> list[tuple[str, tuple[bool, ...]]]:
    """Brute-force list of feasible (customer states, car up flags).

    Each customer is N (not needing), D (driving) or W (waiting); a state is
    feasible when drivers do not outnumber working cars and nobody waits
    while a working car is free.
    """
    out = []
    for people in itertools.product("NDW", repeat=n_customers):
        drivers = people.count("D")
        waiting = people.count("W")
        for cars in itertools.product((True, False), repeat=k_cars):
            up = sum(cars)
            if drivers <= up and (waiting == 0 or drivers == up):
                out.append(("".join(people), cars))
    return out


# -- exploration --------------------------------------------------------------------------

@dataclass
class Ctmc:
    """Tangible markings, generator (CSR, rows sum to zero) and initial state."""

    states: list[Marking]
    generator: sparse.csr_matrix
    initial: int
    net: Net

    @property
    def size(self) -> int:
        return len(self.states)

    def edges(self) -> list[tuple[int, int, float]]:
        coo = self.generator.tocoo()
        return sorted((int(i), int(j), float(v)) for i, j, v in zip(coo.row, coo.col, coo.data)
                      if i != j)

    def count(self, state: int, place: str, colors=None) -> int:
        return sum(n for (p, c), n in self.states[state]
                   if p == place and (colors is None or c in colors))

    def sensor_values(self, spec) -> np.ndarray:
        """Per-state value of a place sensor (count or 0/1 indicator)."""
        if spec.kind not in ("time_average", "threshold"):
            raise UnsupportedModel(f"sensor {spec.name}: {spec.kind} has no per-state value")
        counts = np.array([self.count(i, spec.place, spec.colors) for i in range(self.size)],
                          dtype=float)
        if spec.kind == "time_average":
            return counts
        if spec.relation == ">=":
            return (counts >= spec.k).astype(float)
        return (counts <= spec.k).astype(float)


def _marking(counts: dict) -> Marking:
    return tuple(sorted((key, n) for key, n in counts.items() if n))


def _count(counts: dict, place: str, colors) -> int:
    return sum(n for (p, c), n in counts.items() if p == place and (colors is None or c in colors))


def _check_supported(net: Net) -> None:
    for t in net.transitions:
        for key, pol in t.policies.items():
            if not isinstance(pol, (model.Exponential, model.Immediate)):
                raise UnsupportedModel(f"transition {t.id} color {key}: {pol.kind} policy "
                                       "is not exponential or immediate")
        if t.age_action.kind != "reset":
            raise UnsupportedModel(f"transition {t.id}: age action {t.age_action.kind}")
        if t.is_source and isinstance(t.policy_for(t.emit_color), model.Immediate):
            raise UnsupportedModel(f"transition {t.id}: immediate source")


class _Explorer:
    def __init__(self, net: Net, max_states: int):
        self.net = net
        self.max_states = max_states
        self.triggers = {t.id: net.triggers_of(t.id) for t in net.transitions}
        self.resolved: dict[Marking, Marking] = {}

    def _open(self, counts, t) -> bool:
        for g in self.triggers[t.id]:
            n = _count(counts, g.place, g.colors)
            if g.kind == "inhibitor" and n >= g.multiplicity:
                return False
            if g.kind == "enabler" and n < g.multiplicity:
                return False
        return True

    def enabled(self, counts):
        """(transition, color, multiplicity, policy) for every enabled class."""
        out = []
        for t in self.net.transitions:
            if not self._open(counts, t):
                continue
            if t.is_source:
                out.append((t, None, 1, t.policy_for(t.emit_color)))
                continue
            for (p, c), n in sorted(counts.items()):
                if p == t.input and n:
                    pol = t.policy_for(c)
                    if pol is not None:
                        out.append((t, c, n, pol))
        return out

    @staticmethod
    def fire(counts, t, color) -> dict:
        new = dict(counts)
        if t.is_source:
            color = t.emit_color
        else:
            new[(t.input, color)] -= 1
            color = t.map_color(color)
        if not t.is_sink:
            key = (t.output, color)
            new[key] = new.get(key, 0) + 1
        return {k: v for k, v in new.items() if v}

    def resolve(self, counts, stack=()) -> Marking:
        """Follow immediate firings from a marking to the tangible one it ends in."""
        key = _marking(counts)
        if key in self.resolved:
            return self.resolved[key]
        if key in stack:
            raise VanishingCycle(f"immediate transitions loop through marking {key}")
        imm = [(t, c, pol) for t, c, _, pol in self.enabled(counts)
               if isinstance(pol, model.Immediate)]
        if not imm:
            self.resolved[key] = key
            return key
        top = max(pol.priority for _, _, pol in imm)
        choices = [(t, c) for t, c, pol in imm if pol.priority == top]
        outcomes = {self.resolve(self.fire(counts, t, c), stack + (key,)) for t, c in choices}
        if len(outcomes) > 1:
            names = ", ".join(f"{t.id}[{c}]" for t, c in choices)
            raise UnsupportedModel(f"immediate conflict between {names} at equal priority "
                                   "has several outcomes; give them distinct priorities")
        result = outcomes.pop()
        self.resolved[key] = result
        return result

    def run(self) -> tuple[list[Marking], dict[tuple[int, int], float], int]:
        init = {}
        for tok in self.net.tokens:
            key = (tok.place, tok.color)
            init[key] = init.get(key, 0) + tok.count
        start = self.resolve(init)
        index = {start: 0}
        states = [start]
        rates: dict[tuple[int, int], float] = {}
        queue = deque([start])
        while queue:
            m = queue.popleft()
            i = index[m]
            counts = dict(m)
            for t, c, n, pol in self.enabled(counts):
                if isinstance(pol, model.Immediate):
                    raise UnsupportedModel(f"marking {m} is not tangible")
                target = self.resolve(self.fire(counts, t, c))
                if target == m:
                    continue
                j = index.get(target)
                if j is None:
                    if len(states) >= self.max_states:
                        raise UnsupportedModel(f"more than {self.max_states} tangible states")
                    j = index[target] = len(states)
                    states.append(target)
                    queue.append(target)
                rates[(i, j)] = rates.get((i, j), 0.0) + n / pol.mean
        return states, rates, 0


def explore(net: Net, max_states: int = 200_000) -> Ctmc:
    """Reachability graph of the tangible markings as a CTMC.

    Exponential transitions fire at rate count/mean per enabled (place, color)
    class. Vanishing markings are resolved by repeatedly firing the
    highest-priority immediate transition; equal-priority candidates are
    accepted only when every choice ends in the same tangible marking.
    """
    model.check(net)
    _check_supported(net)
    states, rates, initial = _Explorer(net, max_states).run()
    n = len(states)
    rows = [i for i, _ in rates] + list(range(n))
    cols = [j for _, j in rates] + list(range(n))
    out = np.zeros(n)
    for (i, _), r in rates.items():
        out[i] += r
    data = list(rates.values()) + list(-out)
    q = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    return Ctmc(states, q, initial, net)


# -- transient solution --------------------------------------------------------------------

MAX_STEP_RATE = 50.0


def _uniformized_step(p0: np.ndarray, pt: sparse.csr_matrix, lam: float, h: float,
                      tol: float) -> np.ndarray:
    """exp(Q h)^T p0 by uniformization; ``pt`` is (I + Q/lam)^T."""
    mu = lam * h
    weight = math.exp(-mu)
    v = p0.copy()
    acc = weight * v
    total = weight
    k = 0
    while 1.0 - total > tol:
        k += 1
        v = pt @ v
        weight *= mu / k
        acc += weight * v
        total += weight
        if k > 10_000:
            break
    return acc


def transient(ctmc: Ctmc, times: Sequence[float], tol: float = 1e-10) -> np.ndarray:
    """State probabilities at each time (rows follow ``times``)."""
    times = [float(t) for t in times]
    if any(t < 0 for t in times):
        raise ValueError("times must be >= 0")
    order = sorted(range(len(times)), key=times.__getitem__)
    n = ctmc.size
    q = ctmc.generator
    lam = float(np.max(-q.diagonal())) if n else 0.0
    p = np.zeros(n)
    p[ctmc.initial] = 1.0
    out = np.zeros((len(times), n))
    if lam == 0.0:
        out[:] = p
        return out
    pt = (sparse.identity(n, format="csr") + q / lam).T.tocsr()
    clock = 0.0
    for idx in order:
        dt = times[idx] - clock
        if dt > 0:
            steps = max(1, math.ceil(lam * dt / MAX_STEP_RATE))
            h = dt / steps
            for _ in range(steps):
                p = _uniformized_step(p, pt, lam, h, tol / steps)
            clock = times[idx]
        out[idx] = p
    return out


def window_average(ctmc: Ctmc, t1: float, t2: float, points: int = 401) -> np.ndarray:
    """Time-averaged state probabilities over [t1, t2] (trapezoid rule)."""
    if not 0 <= t1 < t2:
        raise ValueError("window must satisfy 0 <= t1 < t2")
    grid = np.linspace(t1, t2, points)
    probs = transient(ctmc, grid)
    return trapezoid(probs, grid, axis=0) / (t2 - t1)


def expected_sensors(ctmc: Ctmc, t1: float, t2: float, points: int = 401) -> dict[str, float]:
    """Window averages of every place sensor of the net."""
    avg = window_average(ctmc, t1, t2, points)
    return {s.name: float(avg @ ctmc.sensor_values(s)) for s in ctmc.net.sensors
            if s.kind in ("time_average", "threshold")}


def describe_state(state: Marking) -> str:
    return " ".join(f"{p}[{c}]x{n}" if n > 1 else f"{p}[{c}]" for (p, c), n in state) or "-"


def write_generator(ctmc: Ctmc, sink: TextIO) -> None:
    """Sparse listing of Q, one ``row col rate`` line per nonzero entry."""
    coo = ctmc.generator.tocoo()
    for i, j, v in sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())):
        sink.write(f"{i} {j} {v!r}\n")
