"""Sensors: what gets measured during a replication and how replications combine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

PLACE_KINDS = ("time_average", "threshold", "upcrossings")
SENSOR_KINDS = PLACE_KINDS + ("firing_count",)
RELATIONS = (">=", "<=")


@dataclass(frozen=True)
class SensorSpec:
    """A place or transition listener.

    ``window`` of None means the default measurement window, the second half
    of the horizon. ``colors`` restricts which tokens are counted at the place.
    """

    name: str
    kind: str
    place: str | None = None
    transition: str | None = None
    colors: frozenset[int] | None = None
    k: int = 1
    relation: str = ">="
    window: tuple[float, float] | None = None

    def __post_init__(self):
        if self.colors is not None:
            object.__setattr__(self, "colors", frozenset(self.colors))
        if self.window is not None:
            object.__setattr__(self, "window", tuple(self.window))

    def problems(self, places, transitions) -> list[str]:
        out = []
        if self.kind not in SENSOR_KINDS:
            return [f"unknown sensor kind {self.kind!r}"]
        if self.kind == "firing_count":
            if self.transition not in transitions:
                out.append(f"undeclared transition {self.transition}")
        elif self.place not in places:
            out.append(f"undeclared place {self.place}")
        if self.kind in ("threshold", "upcrossings"):
            if not isinstance(self.k, int) or self.k < 0:
                out.append("threshold k must be a non-negative integer")
        if self.relation not in RELATIONS:
            out.append(f"relation must be one of {RELATIONS}")
        if self.window is not None:
            t1, t2 = self.window
            if not 0 <= t1 < t2:
                out.append("window must satisfy 0 <= t1 < t2")
        return out

    def resolve_window(self, horizon: float, default=None) -> tuple[float, float]:
        window = self.window or default or (horizon / 2.0, horizon)
        t1, t2 = window
        if not 0 <= t1 < t2 <= horizon:
            raise ValueError(f"sensor {self.name}: window {window} not inside [0, {horizon}]")
        return (float(t1), float(t2))


# -- per-replication samplers ---------------------------------------------------
# The engine feeds these online: piecewise-constant integration between events.

class PlaceSampler:
    __slots__ = ("spec", "t1", "t2", "colors", "mode", "k", "ge",
                 "last_t", "value", "acc", "ups")

    def __init__(self, spec: SensorSpec, t1: float, t2: float, value: int):
        self.spec = spec
        self.t1, self.t2 = t1, t2
        self.colors = spec.colors
        self.mode = PLACE_KINDS.index(spec.kind)
        self.k = spec.k
        self.ge = spec.relation == ">="
        self.last_t = 0.0
        self.value = value
        self.acc = 0.0
        self.ups = 0

    def _level(self) -> float:
        if self.mode == 0:
            return self.value
        if self.ge:
            return 1.0 if self.value >= self.k else 0.0
        return 1.0 if self.value <= self.k else 0.0

    def advance(self, t: float) -> None:
        lo = self.last_t if self.last_t > self.t1 else self.t1
        hi = t if t < self.t2 else self.t2
        if hi > lo:
            self.acc += self._level() * (hi - lo)
        self.last_t = t

    def change(self, t: float, value: int) -> None:
        self.advance(t)
        if self.mode == 2 and self.value < self.k <= value and self.t1 <= t < self.t2:
            self.ups += 1
        self.value = value

    def result(self, horizon: float) -> float:
        self.advance(horizon)
        if self.mode == 2:
            return float(self.ups)
        return self.acc / (self.t2 - self.t1)


class FiringCounter:
    __slots__ = ("spec", "t1", "t2", "n")

    def __init__(self, spec: SensorSpec, t1: float, t2: float):
        self.spec = spec
        self.t1, self.t2 = t1, t2
        self.n = 0

    def hit(self, t: float) -> None:
        if self.t1 <= t < self.t2:
            self.n += 1

    def result(self, horizon: float) -> float:
        return float(self.n)


# -- aggregation ------------------------------------------------------------------

@dataclass
class SensorSummary:
    name: str
    mean: float
    std_dev: float
    std_error: float
    replications: int
    degenerate: bool = False


@dataclass
class SensorReport:
    """Cross-replication statistics.

    ``correlation[i][j]`` is the Pearson correlation of sensor i and j over
    replications. Variance flags: ``undefined_variance`` when fewer than two
    replications exist; a summary's ``degenerate`` when the sensor never
    varied (its off-diagonal correlations are then 0).
    """

    sensors: list[SensorSummary]
    correlation: list[list[float]]
    replications: int
    undefined_variance: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.sensors]

    def __getitem__(self, name: str) -> SensorSummary:
        for s in self.sensors:
            if s.name == name:
                return s
        raise KeyError(name)

    def combination(self, weights: dict[str, float]) -> tuple[float, float]:
        """Mean and variance of a weighted sum of per-replication sensor values.

        variance = sum_ij w_i w_j s_i s_j r_ij, with s the sample standard
        deviations and r the correlation matrix.
        """
        idx = {s.name: i for i, s in enumerate(self.sensors)}
        mean = math.fsum(w * self.sensors[idx[n]].mean for n, w in weights.items())
        terms = []
        for a, wa in weights.items():
            for b, wb in weights.items():
                i, j = idx[a], idx[b]
                terms.append(wa * wb * self.sensors[i].std_dev * self.sensors[j].std_dev
                             * self.correlation[i][j])
        return mean, math.fsum(terms)


def aggregate(names: Sequence[str], samples: Sequence[Sequence[float]]) -> SensorReport:
    """Fold per-replication sensor values (rows = replications) into a report.

    Sums are exactly rounded (``math.fsum``) so the result does not depend on
    replication order.
    """
    n = len(samples)
    m = len(names)
    cols = [[float(row[i]) for row in samples] for i in range(m)]
    means = [math.fsum(c) / n if n else math.nan for c in cols]
    if n < 2:
        summaries = [SensorSummary(nm, mu, math.nan, math.nan, n) for nm, mu in zip(names, means)]
        corr = [[1.0 if i == j else 0.0 for j in range(m)] for i in range(m)]
        return SensorReport(summaries, corr, n, undefined_variance=True)

    dev = [[x - mu for x in c] for c, mu in zip(cols, means)]
    var = [math.fsum(d * d for d in dv) / (n - 1) for dv in dev]
    std = [math.sqrt(v) for v in var]
    degenerate = [s == 0.0 for s in std]
    summaries = [SensorSummary(nm, mu, sd, sd / math.sqrt(n), n, dg)
                 for nm, mu, sd, dg in zip(names, means, std, degenerate)]
    corr = [[0.0] * m for _ in range(m)]
    for i in range(m):
        corr[i][i] = 1.0
        for j in range(i + 1, m):
            if degenerate[i] or degenerate[j]:
                r = 0.0
            else:
                cov = math.fsum(a * b for a, b in zip(dev[i], dev[j])) / (n - 1)
                r = max(-1.0, min(1.0, cov / (std[i] * std[j])))
            corr[i][j] = corr[j][i] = r
    return SensorReport(summaries, corr, n)
