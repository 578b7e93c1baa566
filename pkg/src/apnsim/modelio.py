"""The ``.apn`` model format (TOML), its canonical serializer, and the trace
and results file writers.

A model file looks like::

    places = ["Fail", "Operating"]

    [[transitions]]
    id = "fail"
    input = "Operating"
    output = "Fail"
    policies = { "1" = { kind = "exponential", mean = 100.0 } }

    [[triggers]]
    kind = "inhibitor"
    place = "Fail"
    target = "fail"
    multiplicity = 2

    [[tokens]]
    place = "Operating"
    color = 1

    [[sensors]]
    name = "up"
    kind = "threshold"
    place = "Operating"
    k = 1

    [simulation]
    horizon = 200.0
    replications = 1000
    seed = 1
    window = [100.0, 200.0]

``[[layers]]`` tables describe stacked subnets and are expanded on parsing,
so serialization always produces a flat net.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import model
from .engine import TraceRecord
from .model import (AgeAction, LayerTemplate, Net, SimulationSettings, TokenSpec, Transition,
                    Trigger, WILDCARD)
from .stats import SensorReport, SensorSpec

TRACE_HEADER = ["time", "event", "transition", "token", "color_before", "color_after",
                "from", "to", "age_before", "age_after"]


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.message = message
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


# -- locating keys for error messages ---------------------------------------------

_KEY = re.compile(r'\s*(?:"([^"]*)"|([A-Za-z0-9_*-]+))\s*=')


class _Locator:
    """Maps (table path, key) to a (line, column) in the source text."""

    def __init__(self, text: str):
        self.keys: dict[tuple, dict[str, tuple[int, int]]] = {(): {}}
        self.headers: dict[tuple, tuple[int, int]] = {}
        current: tuple = ()
        counters: dict[tuple, int] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            s = raw.strip()
            col = len(raw) - len(raw.lstrip()) + 1
            if s.startswith("[["):
                parts = s[2:s.find("]]")].strip().split(".")
                parent = current[:2] if len(parts) > 1 else ()
                key = parent + (parts[-1],)
                counters[key] = counters.get(key, -1) + 1
                current = key + (counters[key],)
            elif s.startswith("["):
                current = tuple(s[1:s.find("]")].strip().split("."))
            else:
                m = _KEY.match(raw)
                if m:
                    self.keys.setdefault(current, {})[m.group(1) or m.group(2)] = \
                        (lineno, m.start(1 if m.group(1) is not None else 2) + 1)
                continue
            self.headers[current] = (lineno, col)
            self.keys.setdefault(current, {})

    def at(self, path: tuple, key: str | None = None) -> tuple[int | None, int | None]:
        if key is not None and key in self.keys.get(path, {}):
            return self.keys[path][key]
        if key is not None and path + (key,) in self.headers:
            return self.headers[path + (key,)]
        if path in self.headers:
            return self.headers[path]
        if path and path[:-1] in self.keys and isinstance(path[-1], str):
            return self.keys[path[:-1]].get(path[-1], (None, None))
        return (None, None)


class _Reader:
    def __init__(self, text: str):
        self.loc = _Locator(text)

    def fail(self, path, key, message):
        line, col = self.loc.at(path, key)
        raise ParseError(message, line, col)

    def table(self, value, path, key, allowed, required=()):
        if not isinstance(value, dict):
            self.fail(path, key, f"{key or 'entry'} must be a table")
        for k in value:
            if k not in allowed:
                # inside an inline table, point at the key that owns it
                self.fail(path, key if key is not None else k, f"unknown key {k!r}")
        for k in required:
            if k not in value:
                self.fail(path, None, f"missing required key {k!r}")
        return value

    def string(self, value, path, key):
        if not isinstance(value, str):
            self.fail(path, key, f"{key} must be a string")
        return value

    def integer(self, value, path, key):
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, key, f"{key} must be an integer")
        return value

    def number(self, value, path, key):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, key, f"{key} must be a number")
        return float(value)

    def strings(self, value, path, key):
        if isinstance(value, str):
            return (value,)
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            self.fail(path, key, f"{key} must be a string or a list of strings")
        return tuple(value)

    def colors(self, value, path, key):
        if not isinstance(value, list):
            self.fail(path, key, f"{key} must be a list of colors")
        return frozenset(self.integer(v, path, key) for v in value)

    def window(self, value, path, key):
        if not isinstance(value, list) or len(value) != 2:
            self.fail(path, key, f"{key} must be [t1, t2]")
        return (self.number(value[0], path, key), self.number(value[1], path, key))

    def color_key(self, key, path, where):
        if key == WILDCARD:
            return WILDCARD
        try:
            c = int(key)
        except ValueError:
            self.fail(path, where, f"{key!r} is neither a color nor '*'")
        return c


_POLICY_PARAMS = {"immediate": ("priority",), "fixed": ("delay",), "exponential": ("mean",),
                  "weibull": ("scale", "shape"), "uniform": ("a", "b")}


def _policy(r: _Reader, value, path, where):
    if isinstance(value, dict) and value.get("kind") not in _POLICY_PARAMS:
        r.fail(path, where, f"unknown policy kind {value.get('kind')!r}")
    r.table(value, path, where, ("kind",) + sum(_POLICY_PARAMS.values(), ()), ("kind",))
    kind = value["kind"]
    params = _POLICY_PARAMS[kind]
    for k in value:
        if k != "kind" and k not in params:
            r.fail(path, where, f"policy {kind} does not take {k!r}")
    if kind == "immediate":
        return model.Immediate(r.integer(value.get("priority", 0), path, where))
    for k in params:
        if k not in value:
            r.fail(path, where, f"policy {kind} needs {k!r}")
    args = [r.number(value[k], path, where) for k in params]
    return model.POLICY_TYPES[kind](*args)


def _transition(r: _Reader, d, path) -> Transition:
    r.table(d, path, None, ("id", "input", "output", "policies", "color_map", "age_action",
                            "emit_color"), ("id", "policies"))
    policies_raw = r.table(d["policies"], path, "policies", tuple(d["policies"]) if
                           isinstance(d["policies"], dict) else ())
    policies = {r.color_key(k, path, "policies"): _policy(r, v, path, "policies")
                for k, v in policies_raw.items()}
    cmap = {}
    if "color_map" in d:
        raw = r.table(d["color_map"], path, "color_map", tuple(d["color_map"])
                      if isinstance(d["color_map"], dict) else ())
        for k, v in raw.items():
            src = r.color_key(k, path, "color_map")
            if src == WILDCARD:
                r.fail(path, "color_map", "color_map keys must be colors")
            cmap[src] = r.integer(v, path, "color_map")
    action = model.RESET
    if "age_action" in d:
        a = d["age_action"]
        if a in ("reset", "keep"):
            action = AgeAction(a)
        elif isinstance(a, dict):
            r.table(a, path, "age_action", ("scale",), ("scale",))
            action = AgeAction.scale(r.number(a["scale"], path, "age_action"))
        else:
            r.fail(path, "age_action", "age_action must be 'reset', 'keep' or { scale = alpha }")
    return Transition(
        r.string(d["id"], path, "id"),
        r.strings(d["input"], path, "input") if "input" in d else (),
        r.strings(d["output"], path, "output") if "output" in d else (),
        policies, cmap, action,
        r.integer(d.get("emit_color", 0), path, "emit_color"))


def _trigger(r: _Reader, d, path) -> Trigger:
    r.table(d, path, None, ("kind", "place", "target", "multiplicity", "colors"),
            ("kind", "place", "target"))
    kind = r.string(d["kind"], path, "kind")
    if kind not in ("inhibitor", "enabler"):
        r.fail(path, "kind", "trigger kind must be 'inhibitor' or 'enabler'")
    return Trigger(kind, r.string(d["place"], path, "place"), r.string(d["target"], path, "target"),
                   r.integer(d.get("multiplicity", 1), path, "multiplicity"),
                   r.colors(d["colors"], path, "colors") if "colors" in d else None)


def _token(r: _Reader, d, path) -> TokenSpec:
    r.table(d, path, None, ("place", "color", "age", "count"), ("place",))
    return TokenSpec(r.string(d["place"], path, "place"),
                     r.integer(d.get("color", 0), path, "color"),
                     r.number(d.get("age", 0.0), path, "age"),
                     r.integer(d.get("count", 1), path, "count"))


def _sensor(r: _Reader, d, path) -> SensorSpec:
    r.table(d, path, None, ("name", "kind", "place", "transition", "colors", "k", "relation",
                            "window"), ("name", "kind"))
    return SensorSpec(
        r.string(d["name"], path, "name"), r.string(d["kind"], path, "kind"),
        r.string(d["place"], path, "place") if "place" in d else None,
        r.string(d["transition"], path, "transition") if "transition" in d else None,
        r.colors(d["colors"], path, "colors") if "colors" in d else None,
        r.integer(d.get("k", 1), path, "k"),
        r.string(d.get("relation", ">="), path, "relation"),
        r.window(d["window"], path, "window") if "window" in d else None)


def _simulation(r: _Reader, d) -> SimulationSettings:
    path = ("simulation",)
    r.table(d, path, None, ("horizon", "replications", "seed", "window"))
    defaults = SimulationSettings()
    seed = d.get("seed", defaults.seed)
    if isinstance(seed, str) and seed.isdigit():
        seed = int(seed)
    return SimulationSettings(
        r.number(d.get("horizon", defaults.horizon), path, "horizon"),
        r.integer(d.get("replications", defaults.replications), path, "replications"),
        r.integer(seed, path, "seed"),
        r.window(d["window"], path, "window") if "window" in d else None)


def _array(r: _Reader, d, key, path):
    value = d.get(key, [])
    if not isinstance(value, list):
        r.fail(path, key, f"{key} must be an array of tables")
    return value


def _layer(r: _Reader, d, path) -> LayerTemplate:
    r.table(d, path, None, ("name", "copies", "color_span", "places", "transitions", "boundary",
                            "triggers", "tokens", "sensors"), ("name", "places"))
    sub = lambda key, fn: tuple(fn(r, x, path + (key, i))
                                for i, x in enumerate(_array(r, d, key, path)))
    return LayerTemplate(
        r.string(d["name"], path, "name"), r.strings(d["places"], path, "places"),
        sub("transitions", _transition), sub("triggers", _trigger), sub("tokens", _token),
        sub("sensors", _sensor), sub("boundary", _transition),
        r.integer(d.get("copies", 1), path, "copies"),
        r.integer(d.get("color_span", 0), path, "color_span"))


_AT = re.compile(r"\s*\(at line (\d+), column (\d+)\)\s*$")


def _syntax_error(exc) -> "ParseError":
    line, col = getattr(exc, "lineno", None), getattr(exc, "colno", None)
    msg = getattr(exc, "msg", None) or str(exc)
    m = _AT.search(msg)
    if m:
        msg = msg[:m.start()]
        line, col = line or int(m.group(1)), col or int(m.group(2))
    return ParseError(msg, line, col)


@dataclass(frozen=True)
class Document:
    """A parsed model file: the flat net plus what it was expanded from."""

    net: Net
    base: Net
    layers: tuple[LayerTemplate, ...]

    def allowed_colors(self) -> dict[str, frozenset[int]]:
        return model.allowed_colors(self.base, self.layers)


def parse_document(text: str) -> Document:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise _syntax_error(exc) from None
    r = _Reader(text)
    r.table(doc, (), None, ("places", "transitions", "triggers", "tokens", "layers", "sensors",
                            "simulation"))
    if "places" not in doc:
        raise ParseError("missing places section", 1, 1)
    places = r.strings(doc["places"], (), "places")
    arr = lambda key, fn: tuple(fn(r, x, (key, i)) for i, x in enumerate(_array(r, doc, key, ())))
    base = Net(places, arr("transitions", _transition), arr("triggers", _trigger),
               arr("tokens", _token), arr("sensors", _sensor),
               _simulation(r, doc["simulation"]) if "simulation" in doc else None)
    model.check(base)
    layers = arr("layers", _layer)
    net = base
    for layer in layers:
        net = model.expand_layers(net, layer)
    return Document(net, base, layers)


def parse(text: str) -> Net:
    """Parse and validate a model document.

    Raises :class:`ParseError` (with line/column) for malformed documents and
    :class:`apnsim.model.ValidationError` for structurally invalid nets.
    """
    return parse_document(text).net


def load(path) -> Net:
    return parse(Path(path).read_text(encoding="utf-8"))


def load_document(path) -> Document:
    return parse_document(Path(path).read_text(encoding="utf-8"))


# -- canonical serialization ----------------------------------------------------------

def _num(x) -> str:
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _str(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def _policy_text(p) -> str:
    if isinstance(p, model.Immediate):
        return f'{{ kind = "immediate", priority = {p.priority} }}'
    params = ", ".join(f"{k} = {_num(getattr(p, k))}" for k in _POLICY_PARAMS[p.kind])
    return f'{{ kind = "{p.kind}", {params} }}'


def _endpoint(values) -> str:
    return _str(values[0]) if len(values) == 1 else "[" + ", ".join(map(_str, values)) + "]"


def _colors(cs) -> str:
    return "[" + ", ".join(str(c) for c in sorted(cs)) + "]"


def serialize(net: Net) -> str:
    """Canonical text: fixed section order, elements sorted by id, floats
    written as the shortest string that round-trips."""
    out = ["places = [" + ", ".join(_str(p) for p in net.places) + "]"]
    for t in net.transitions:
        out += ["", "[[transitions]]", f"id = {_str(t.id)}"]
        if t.inputs:
            out.append(f"input = {_endpoint(t.inputs)}")
        if t.outputs:
            out.append(f"output = {_endpoint(t.outputs)}")
        keys = sorted(t.policies, key=lambda k: (k != WILDCARD, k if k != WILDCARD else -1))
        out.append("policies = { " + ", ".join(
            f"{_str(str(k))} = {_policy_text(t.policies[k])}" for k in keys) + " }")
        if t.color_map:
            out.append("color_map = { " + ", ".join(
                f'"{k}" = {v}' for k, v in sorted(t.color_map.items())) + " }")
        if t.age_action.kind == "keep":
            out.append('age_action = "keep"')
        elif t.age_action.kind == "scale":
            out.append(f"age_action = {{ scale = {_num(t.age_action.alpha)} }}")
        if t.is_source:
            out.append(f"emit_color = {t.emit_color}")
    for g in net.triggers:
        out += ["", "[[triggers]]", f"kind = {_str(g.kind)}", f"place = {_str(g.place)}",
                f"target = {_str(g.target)}", f"multiplicity = {g.multiplicity}"]
        if g.colors is not None:
            out.append(f"colors = {_colors(g.colors)}")
    for k in net.tokens:
        out += ["", "[[tokens]]", f"place = {_str(k.place)}", f"color = {k.color}",
                f"age = {_num(k.age)}", f"count = {k.count}"]
    for s in net.sensors:
        out += ["", "[[sensors]]", f"name = {_str(s.name)}", f"kind = {_str(s.kind)}"]
        if s.place is not None:
            out.append(f"place = {_str(s.place)}")
        if s.transition is not None:
            out.append(f"transition = {_str(s.transition)}")
        if s.colors is not None:
            out.append(f"colors = {_colors(s.colors)}")
        if s.k != 1:
            out.append(f"k = {s.k}")
        if s.relation != ">=":
            out.append(f"relation = {_str(s.relation)}")
        if s.window is not None:
            out.append(f"window = [{_num(s.window[0])}, {_num(s.window[1])}]")
    sim = net.simulation
    if sim is not None:
        seed = str(sim.seed) if sim.seed < 2 ** 63 else _str(str(sim.seed))
        out += ["", "[simulation]", f"horizon = {_num(sim.horizon)}",
                f"replications = {sim.replications}", f"seed = {seed}"]
        if sim.window is not None:
            out.append(f"window = [{_num(sim.window[0])}, {_num(sim.window[1])}]")
    return "\n".join(out) + "\n"


# -- traces and results ---------------------------------------------------------------

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def write_trace(records: Iterable[TraceRecord], sink: TextIO) -> None:
    """Comma-separated rows under a fixed header, one record per row."""
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for rec in records:
        w.writerow([_cell(v) for v in rec])


def read_trace(source: TextIO) -> list[TraceRecord]:
    rows = csv.reader(source)
    header = next(rows)
    if header != TRACE_HEADER:
        raise ParseError(f"unexpected trace header {header}")
    opt = lambda s: s or None
    return [TraceRecord(float(r[0]), r[1], r[2], int(r[3]), int(r[4]), int(r[5]), opt(r[6]),
                        opt(r[7]), float(r[8]), float(r[9])) for r in rows]


def _json_num(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x


def results_document(report: SensorReport) -> dict:
    return {
        "replications": report.replications,
        "undefined_variance": report.undefined_variance,
        **{k: v for k, v in report.meta.items()},
        "sensors": [{"name": s.name, "mean": _json_num(s.mean),
                     "std_error": _json_num(s.std_error), "std_dev": _json_num(s.std_dev),
                     "replications": s.replications, "degenerate": s.degenerate}
                    for s in report.sensors],
        "names": report.names,
        "correlation": [[_json_num(x) for x in row] for row in report.correlation],
    }


def write_results(report: SensorReport, sink: TextIO) -> None:
    json.dump(results_document(report), sink, indent=2)
    sink.write("\n")
