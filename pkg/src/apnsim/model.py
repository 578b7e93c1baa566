"""APN model structure: places, transitions, triggers, tokens and layers.

Everything here is an immutable description of a net. Running it is the
job of :mod:`apnsim.engine`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Union

from .stats import SensorSpec

WILDCARD = "*"

PolicyKey = Union[int, str]


# -- delay policies ---------------------------------------------------------

@dataclass(frozen=True)
class Immediate:
    """Zero delay; among simultaneous firings the higher priority goes first."""

    priority: int = 0
    kind = "immediate"


@dataclass(frozen=True)
class Fixed:
    delay: float
    kind = "fixed"


@dataclass(frozen=True)
class Exponential:
    mean: float
    kind = "exponential"


@dataclass(frozen=True)
class Weibull:
    scale: float
    shape: float
    kind = "weibull"


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float
    kind = "uniform"


DelayPolicy = Union[Immediate, Fixed, Exponential, Weibull, Uniform]

POLICY_TYPES = {cls.kind: cls for cls in (Immediate, Fixed, Exponential, Weibull, Uniform)}


def policy_problems(policy: DelayPolicy) -> list[str]:
    """Parameter range problems of a single policy (empty when fine)."""
    if isinstance(policy, Immediate):
        return [] if isinstance(policy.priority, int) else ["priority must be an integer"]
    if isinstance(policy, Fixed):
        return [] if _finite(policy.delay) and policy.delay >= 0 else ["fixed delay must be >= 0"]
    if isinstance(policy, Exponential):
        return [] if _finite(policy.mean) and policy.mean > 0 else ["exponential mean must be > 0"]
    if isinstance(policy, Weibull):
        out = []
        if not (_finite(policy.scale) and policy.scale > 0):
            out.append("weibull scale must be > 0")
        if not (_finite(policy.shape) and policy.shape > 0):
            out.append("weibull shape must be > 0")
        return out
    if isinstance(policy, Uniform):
        if _finite(policy.a) and _finite(policy.b) and 0 <= policy.a <= policy.b:
            return []
        return ["uniform bounds must satisfy 0 <= a <= b"]
    return [f"unknown policy {policy!r}"]


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


# -- age actions --------------------------------------------------------------

@dataclass(frozen=True)
class AgeAction:
    """What happens to a token's age when it fires: reset, keep or scale by alpha."""

    kind: str = "reset"
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind == "reset":
            object.__setattr__(self, "alpha", 0.0)
        elif self.kind == "keep":
            object.__setattr__(self, "alpha", 1.0)

    @classmethod
    def scale(cls, alpha: float) -> "AgeAction":
        return cls("scale", float(alpha))

    def apply(self, age: float) -> float:
        if self.kind == "reset":
            return 0.0
        if self.kind == "keep":
            return age
        return self.alpha * age


RESET = AgeAction("reset")
KEEP = AgeAction("keep")


# -- structural elements ------------------------------------------------------

def _as_tuple(value) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        return (value,)
    return tuple(value)


@dataclass(frozen=True)
class Transition:
    """A directed arc between (at most) one input place and one output place.

    ``inputs``/``outputs`` are tuples so that malformed files with several
    endpoints can still be represented and reported by :func:`validate`.
    Use the ``input``/``output`` properties on valid nets.
    """

    id: str
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    policies: Mapping[PolicyKey, DelayPolicy] = field(default_factory=dict)
    color_map: Mapping[int, int] = field(default_factory=dict)
    age_action: AgeAction = RESET
    emit_color: int = 0

    def __post_init__(self):
        object.__setattr__(self, "inputs", _as_tuple(self.inputs))
        object.__setattr__(self, "outputs", _as_tuple(self.outputs))
        object.__setattr__(self, "policies", dict(self.policies))
        object.__setattr__(self, "color_map", dict(self.color_map))

    @property
    def input(self) -> str | None:
        return self.inputs[0] if self.inputs else None

    @property
    def output(self) -> str | None:
        return self.outputs[0] if self.outputs else None

    @property
    def is_source(self) -> bool:
        return not self.inputs

    @property
    def is_sink(self) -> bool:
        return not self.outputs

    def policy_for(self, color: int) -> DelayPolicy | None:
        """Policy applied to a token of ``color``; None means the transition is blind to it."""
        policy = self.policies.get(color)
        if policy is None:
            policy = self.policies.get(WILDCARD)
        return policy

    def map_color(self, color: int) -> int:
        return self.color_map.get(color, color)


def transition(id: str, input: str | None = None, output: str | None = None,
               policies=None, **kw) -> Transition:
    """Convenience constructor with single-place endpoints."""
    return Transition(id, _as_tuple(input), _as_tuple(output), policies or {}, **kw)


@dataclass(frozen=True)
class Trigger:
    """Inhibitor or enabler arc from ``place`` to transition ``target``.

    ``colors`` restricts which tokens in ``place`` are counted; None counts all.
    """

    kind: str
    place: str
    target: str
    multiplicity: int = 1
    colors: frozenset[int] | None = None

    def __post_init__(self):
        if self.colors is not None:
            object.__setattr__(self, "colors", frozenset(self.colors))

    def sort_key(self):
        colors = tuple(sorted(self.colors)) if self.colors is not None else None
        return (self.target, self.kind, self.place, self.multiplicity,
                colors is not None, colors or ())


@dataclass(frozen=True)
class TokenSpec:
    place: str
    color: int = 0
    age: float = 0.0
    count: int = 1


@dataclass(frozen=True)
class SimulationSettings:
    horizon: float = 100.0
    replications: int = 1000
    seed: int = 0
    window: tuple[float, float] | None = None

    def resolved_window(self) -> tuple[float, float]:
        if self.window is not None:
            return self.window
        return (self.horizon / 2.0, self.horizon)


@dataclass(frozen=True)
class Net:
    """A complete model.

    Collections are stored in canonical order (sorted by id) so two nets that
    differ only in declaration order compare equal.
    """

    places: tuple[str, ...]
    transitions: tuple[Transition, ...] = ()
    triggers: tuple[Trigger, ...] = ()
    tokens: tuple[TokenSpec, ...] = ()
    sensors: tuple[SensorSpec, ...] = ()
    simulation: SimulationSettings | None = None

    def __post_init__(self):
        object.__setattr__(self, "places", tuple(sorted(self.places)))
        object.__setattr__(self, "transitions", tuple(sorted(self.transitions, key=lambda t: t.id)))
        object.__setattr__(self, "triggers", tuple(sorted(self.triggers, key=Trigger.sort_key)))
        object.__setattr__(self, "tokens", tuple(sorted(
            self.tokens, key=lambda t: (t.place, t.color, t.age, t.count))))
        object.__setattr__(self, "sensors", tuple(sorted(self.sensors, key=lambda s: s.name)))

    def transition(self, tid: str) -> Transition:
        for t in self.transitions:
            if t.id == tid:
                return t
        raise KeyError(tid)

    def triggers_of(self, tid: str) -> list[Trigger]:
        return [g for g in self.triggers if g.target == tid]

    def replace(self, **changes) -> "Net":
        return replace(self, **changes)


# -- validation ---------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    element: str
    rule: str

    def __str__(self):
        return f"{self.element}: {self.rule}"


class ValidationError(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


def _is_color(c) -> bool:
    return isinstance(c, int) and not isinstance(c, bool) and c >= 0


def validate(net: Net) -> list[Violation]:
    """Check every structural rule; returns the violations found (empty if valid)."""
    out: list[Violation] = []
    add = lambda element, rule: out.append(Violation(element, rule))

    places = set()
    for p in net.places:
        if p in places:
            add(f"place {p}", "duplicate id")
        places.add(p)

    tids = set()
    for t in net.transitions:
        where = f"transition {t.id}"
        if t.id in tids:
            add(where, "duplicate id")
        tids.add(t.id)
        if len(t.inputs) > 1:
            add(where, "multiple inputs")
        if len(t.outputs) > 1:
            add(where, "multiple outputs")
        if not t.inputs and not t.outputs:
            add(where, "needs an input or an output place")
        for p in t.inputs + t.outputs:
            if p not in places:
                add(where, f"undeclared place {p}")
        if not t.policies:
            add(where, "no delay policy")
        for key, policy in t.policies.items():
            if key != WILDCARD and not _is_color(key):
                add(where, f"policy key {key!r} is not a color")
            for problem in policy_problems(policy):
                add(where, f"policy {key}: {problem}")
        for src, dst in t.color_map.items():
            if not _is_color(src) or not _is_color(dst):
                add(where, f"color map {src}->{dst} uses a negative or non-integer color")
            elif t.policy_for(src) is None:
                add(where, f"color map key {src} has no applicable policy")
        if t.age_action.kind not in ("reset", "keep", "scale"):
            add(where, f"unknown age action {t.age_action.kind}")
        elif t.age_action.kind == "scale" and not 0.0 <= t.age_action.alpha <= 1.0:
            add(where, "age scale factor must lie in [0, 1]")
        if t.is_source:
            if not _is_color(t.emit_color):
                add(where, "emit color must be a non-negative integer")
            elif t.policy_for(t.emit_color) is None:
                add(where, f"source has no policy for its emit color {t.emit_color}")

    for g in net.triggers:
        where = f"{g.kind} {g.place}->{g.target}"
        if g.kind not in ("inhibitor", "enabler"):
            add(where, "trigger kind must be inhibitor or enabler")
        if not isinstance(g.multiplicity, int) or g.multiplicity < 1:
            add(where, "multiplicity >= 1")
        if g.place not in places:
            add(where, f"undeclared place {g.place}")
        if g.target not in tids:
            add(where, f"undeclared transition {g.target}")
        if g.colors is not None and not all(_is_color(c) for c in g.colors):
            add(where, "color filter contains a negative color")

    for tok in net.tokens:
        where = f"token {tok.place}/{tok.color}"
        if tok.place not in places:
            add(where, f"undeclared place {tok.place}")
        if not _is_color(tok.color):
            add(where, "color must be a non-negative integer")
        if not (_finite(tok.age) and tok.age >= 0):
            add(where, "age must be >= 0")
        if not isinstance(tok.count, int) or tok.count < 1:
            add(where, "count must be >= 1")

    names = set()
    for s in net.sensors:
        where = f"sensor {s.name}"
        if s.name in names:
            add(where, "duplicate id")
        names.add(s.name)
        for problem in s.problems(places, tids):
            add(where, problem)

    sim = net.simulation
    if sim is not None:
        if not (_finite(sim.horizon) and sim.horizon > 0):
            add("simulation", "horizon must be > 0")
        if not isinstance(sim.replications, int) or sim.replications < 1:
            add("simulation", "replications must be >= 1")
        if not isinstance(sim.seed, int) or not 0 <= sim.seed < 2 ** 64:
            add("simulation", "seed must be a 64-bit unsigned integer")
        if sim.window is not None:
            t1, t2 = sim.window
            if not 0 <= t1 < t2 <= sim.horizon:
                add("simulation", "window must satisfy 0 <= t1 < t2 <= horizon")
    return out


def check(net: Net) -> Net:
    """Raise :class:`ValidationError` unless ``net`` is valid; returns it otherwise."""
    violations = validate(net)
    if violations:
        raise ValidationError(violations)
    return net


def net_colors(net: Net) -> set[int]:
    """Every color literal appearing in the net."""
    colors = {tok.color for tok in net.tokens}
    for t in net.transitions:
        colors.update(k for k in t.policies if k != WILDCARD)
        colors.update(t.color_map)
        colors.update(t.color_map.values())
        if t.is_source:
            colors.add(t.emit_color)
    for g in net.triggers:
        colors.update(g.colors or ())
    for s in net.sensors:
        colors.update(s.colors or ())
    return colors


# -- color shift and layers ---------------------------------------------------

class ColorLeak(ValueError):
    """A layer template uses a color outside its declared span."""


def _shift_transition(t: Transition, offset: int) -> Transition:
    policies = {(k if k == WILDCARD else k + offset): p for k, p in t.policies.items()}
    cmap = {k + offset: v + offset for k, v in t.color_map.items()}
    emit = t.emit_color + offset if t.is_source else t.emit_color
    return replace(t, policies=policies, color_map=cmap, emit_color=emit)


def _shift_trigger(g: Trigger, offset: int) -> Trigger:
    if g.colors is None:
        return g
    return replace(g, colors=frozenset(c + offset for c in g.colors))


def _shift_sensor(s: SensorSpec, offset: int) -> SensorSpec:
    if s.colors is None:
        return s
    return replace(s, colors=frozenset(c + offset for c in s.colors))


def color_shift(fragment, offset: int):
    """Add ``offset`` to every color literal of a :class:`Net` or :class:`LayerTemplate`.

    Wildcard policies stay wildcards; structure and ids are untouched.
    """
    if offset < 0:
        raise ValueError("color shift offset must be >= 0")
    if offset == 0:
        return fragment
    common = dict(
        transitions=tuple(_shift_transition(t, offset) for t in fragment.transitions),
        triggers=tuple(_shift_trigger(g, offset) for g in fragment.triggers),
        tokens=tuple(replace(k, color=k.color + offset) for k in fragment.tokens),
        sensors=tuple(_shift_sensor(s, offset) for s in fragment.sensors),
    )
    if isinstance(fragment, LayerTemplate):
        common["boundary"] = tuple(_shift_transition(t, offset) for t in fragment.boundary)
    return replace(fragment, **common)


@dataclass(frozen=True)
class LayerTemplate:
    """A subnet stamped out ``copies`` times on top of a base net.

    Template places, transitions and sensors get a ``#k`` suffix in copy k.
    With ``color_span`` j > 0 the template must only use colors 0..j-1 and
    copy k (1..copies) is shifted by j*k. ``boundary`` transitions connect
    shared places with the template; in every copy they only accept that
    copy's colors, so tokens always return to their home subnet. A span of 0
    stamps identical copies that share one color space.
    """

    name: str
    places: tuple[str, ...]
    transitions: tuple[Transition, ...] = ()
    triggers: tuple[Trigger, ...] = ()
    tokens: tuple[TokenSpec, ...] = ()
    sensors: tuple[SensorSpec, ...] = ()
    boundary: tuple[Transition, ...] = ()
    copies: int = 1
    color_span: int = 0

    def __post_init__(self):
        for name in ("places", "transitions", "triggers", "tokens", "sensors", "boundary"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def colors(self) -> set[int]:
        frag = Net(self.places, self.transitions + self.boundary, self.triggers,
                   self.tokens, self.sensors)
        return net_colors(frag)

    def copy_range(self, k: int) -> range:
        j = self.color_span
        return range(j * k, j * (k + 1))


def copy_name(ident: str, k: int) -> str:
    return f"{ident}#{k}"


def _check_span(template: LayerTemplate) -> None:
    j = template.color_span
    if not isinstance(j, int) or j < 0:
        raise ColorLeak(f"layer {template.name}: color span must be a non-negative integer")
    if not isinstance(template.copies, int) or template.copies < 1:
        raise ValueError(f"layer {template.name}: copies must be >= 1")
    if j == 0:
        return
    for t in template.transitions + template.boundary:
        for src, dst in t.color_map.items():
            if not 0 <= dst < j or not 0 <= src < j:
                raise ColorLeak(f"layer {template.name}: transition {t.id} maps color "
                                f"{src}->{dst} outside span 0..{j - 1}")
    outside = sorted(c for c in template.colors() if not 0 <= c < j)
    if outside:
        raise ColorLeak(f"layer {template.name}: colors {outside} outside span 0..{j - 1}")


def _restrict(t: Transition, colors: range) -> Transition:
    """Replace a wildcard policy with explicit entries for ``colors`` only."""
    if WILDCARD not in t.policies:
        return t
    wild = t.policies[WILDCARD]
    policies = {c: t.policies.get(c, wild) for c in colors}
    policies.update({k: v for k, v in t.policies.items() if k != WILDCARD})
    return replace(t, policies=policies)


def expand_layers(base: Net, template: LayerTemplate) -> Net:
    """Flatten ``template.copies`` shifted copies of ``template`` into ``base``."""
    check(base)
    _check_span(template)
    local_places = set(template.places)
    local_trans = {t.id for t in template.transitions} | {t.id for t in template.boundary}
    j = template.color_span

    places = list(base.places)
    transitions = list(base.transitions)
    triggers = list(base.triggers)
    tokens = list(base.tokens)
    sensors = list(base.sensors)

    def rp(p, k):
        return copy_name(p, k) if p in local_places else p

    def rt(t, k):
        return copy_name(t, k) if t in local_trans else t

    for k in range(1, template.copies + 1):
        shifted = color_shift(template, j * k)
        places.extend(copy_name(p, k) for p in template.places)
        for t in shifted.transitions + shifted.boundary:
            t = replace(t, id=copy_name(t.id, k),
                        inputs=tuple(rp(p, k) for p in t.inputs),
                        outputs=tuple(rp(p, k) for p in t.outputs))
            if j:
                t = _restrict(t, template.copy_range(k))
            transitions.append(t)
        for g in shifted.triggers:
            triggers.append(replace(g, place=rp(g.place, k), target=rt(g.target, k)))
        tokens.extend(replace(tok, place=rp(tok.place, k)) for tok in shifted.tokens)
        for s in shifted.sensors:
            sensors.append(replace(
                s, name=copy_name(s.name, k),
                place=rp(s.place, k) if s.place else s.place,
                transition=rt(s.transition, k) if s.transition else s.transition))

    net = Net(tuple(places), tuple(transitions), tuple(triggers), tuple(tokens),
              tuple(sensors), base.simulation)
    return check(net)


def home_colors(base: Net, template: LayerTemplate) -> dict[str, frozenset[int]]:
    """Colors each expanded place may ever hold, for the engine's closure guard.

    Copy places may only hold their copy's range; shared places may hold any
    declared color.
    """
    if template.color_span == 0:
        raise ValueError("closure ranges need a color span > 0")
    return allowed_colors(base, (template,))


def allowed_colors(base: Net, layers) -> dict[str, frozenset[int]]:
    """Closure map for a base net with any number of layers applied in order.

    Places of shifted copies are limited to their copy's range; every other
    place may hold any color the expanded net declares.
    """
    net = base
    for layer in layers:
        net = expand_layers(net, layer)
    everything = set(net_colors(net))
    for layer in layers:
        for k in range(1, layer.copies + 1):
            everything |= set(layer.copy_range(k))
    allowed = {p: frozenset(everything) for p in net.places}
    for layer in layers:
        if layer.color_span:
            for k in range(1, layer.copies + 1):
                for p in layer.places:
                    allowed[copy_name(p, k)] = frozenset(layer.copy_range(k))
    return allowed
