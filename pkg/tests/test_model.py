import pytest
from hypothesis import given, settings, strategies as st

from apnsim import gallery, model
from apnsim.model import (AgeAction, ColorLeak, Exponential, Fixed, Immediate, LayerTemplate,
                          Net, TokenSpec, Transition, Trigger, Weibull, color_shift,
                          expand_layers, transition, validate)
from apnsim.stats import SensorSpec


def rules(net):
    return [v.rule for v in validate(net)]


def small_net(**kw):
    base = dict(
        places=("A", "B"),
        transitions=(transition("go", "A", "B", {"*": Exponential(1.0)}),),
        tokens=(TokenSpec("A", 0),),
    )
    base.update(kw)
    return Net(**base)


def test_valid_net_has_no_violations():
    assert validate(small_net()) == []


def test_two_input_places_rejected():
    net = small_net(places=("A", "B", "C"),
                    transitions=(Transition("go", ("A", "C"), ("B",), {"*": Fixed(1.0)}),))
    assert "multiple inputs" in rules(net)


def test_two_output_places_rejected():
    net = small_net(places=("A", "B", "C"),
                    transitions=(Transition("go", ("A",), ("B", "C"), {"*": Fixed(1.0)}),))
    assert "multiple outputs" in rules(net)


def test_zero_multiplicity_rejected():
    net = small_net(triggers=(Trigger("inhibitor", "B", "go", 0),))
    assert "multiplicity >= 1" in rules(net)


def test_shipped_periodic_inspection_is_valid():
    assert validate(gallery.load("periodic_inspection")) == []


def test_all_shipped_models_valid(models):
    for name, net in models.items():
        assert validate(net) == [], name


@pytest.mark.parametrize("net_kw, rule_part", [
    (dict(places=("A", "A", "B")), "duplicate"),
    (dict(transitions=(transition("go", "A", "Z", {"*": Fixed(1.0)}),)), "undeclared place"),
    (dict(transitions=(transition("go", None, None, {"*": Fixed(1.0)}),)), "input or an output"),
    (dict(triggers=(Trigger("enabler", "A", "nope"),)), "undeclared transition"),
    (dict(triggers=(Trigger("enabler", "Q", "go"),)), "undeclared place"),
    (dict(tokens=(TokenSpec("A", -1),)), "color"),
    (dict(transitions=(transition("go", "A", "B", {"*": Exponential(0.0)}),)), "mean"),
    (dict(transitions=(transition("go", "A", "B", {"*": Weibull(1.0, -2.0)}),)), "shape"),
    (dict(transitions=(transition("go", "A", "B", {"*": Fixed(-1.0)}),)), "delay"),
    (dict(transitions=(transition("go", "A", "B", {1: Fixed(1.0)}, color_map={2: 3}),)),
     "color map key"),
    (dict(transitions=(transition("go", "A", "B", {"*": Fixed(1.0)},
                                  age_action=AgeAction("scale", 1.5)),)), "scale factor"),
])
def test_violation_rules(net_kw, rule_part):
    found = rules(small_net(**net_kw))
    assert any(rule_part in r for r in found), found


def test_violation_names_element():
    net = small_net(triggers=(Trigger("inhibitor", "B", "go", 0),))
    (v,) = validate(net)
    assert "go" in v.element and "B" in v.element


def test_validate_idempotent():
    net = small_net(triggers=(Trigger("inhibitor", "B", "go", 0),))
    assert validate(net) == validate(net)


def test_check_raises_with_violations():
    with pytest.raises(model.ValidationError) as info:
        model.check(small_net(triggers=(Trigger("inhibitor", "B", "go", 0),)))
    assert info.value.violations


def test_declaration_order_irrelevant():
    t1 = transition("a", "A", "B", {"*": Fixed(1.0)})
    t2 = transition("b", "B", "A", {"*": Fixed(1.0)})
    assert Net(("A", "B"), (t1, t2)) == Net(("B", "A"), (t2, t1))


# -- color shift ----------------------------------------------------------------------

def fleet_template(**kw):
    args = dict(
        name="fleet", places=("Working",),
        tokens=(TokenSpec("Working", 0), TokenSpec("Working", 1), TokenSpec("Working", 2)),
        boundary=(transition("wear", "Working", "Queue", {0: Exponential(10.0),
                                                          "*": Exponential(20.0)}),
                  transition("back", "Done", "Working", {"*": Immediate(0)})),
        sensors=(SensorSpec("up", "time_average", place="Working", colors={0, 1}),),
        copies=2, color_span=3)
    args.update(kw)
    return LayerTemplate(**args)


def shop():
    return Net(("Done", "InService", "Queue"),
               (transition("start", "Queue", "InService", {"*": Immediate(0)}),
                transition("end", "InService", "Done", {"*": Exponential(2.0)})),
               (Trigger("inhibitor", "InService", "start"),))


def test_shift_zero_is_identity():
    net = gallery.load("cars_customers")
    assert color_shift(net, 0) == net
    t = fleet_template()
    assert color_shift(t, 0) == t


def test_shift_subnet_one_to_subnet_two():
    t1 = fleet_template()
    t2 = color_shift(t1, 3)
    assert sorted(k.color for k in t2.tokens) == [3, 4, 5]
    wear = [t for t in t2.boundary if t.id == "wear"][0]
    assert set(wear.policies) == {3, "*"}
    assert t2.sensors[0].colors == frozenset({3, 4})


def test_shift_changes_every_literal():
    net = Net(("A", "B"),
              (transition("x", "A", "B", {1: Fixed(1.0)}, color_map={1: 2}),
               transition("src", None, "A", {"*": Fixed(1.0)}, emit_color=1)),
              (Trigger("enabler", "B", "x", 1, {2}),),
              (TokenSpec("A", 1, 0.5, 2),),
              (SensorSpec("s", "time_average", place="B", colors={1, 2}),))
    s = color_shift(net, 5)
    x = s.transition("x")
    assert set(x.policies) == {6} and x.color_map == {6: 7}
    assert s.transition("src").emit_color == 6
    assert s.triggers[0].colors == frozenset({7})
    assert s.tokens[0] == TokenSpec("A", 6, 0.5, 2)
    assert s.sensors[0].colors == frozenset({6, 7})


def test_negative_offset_rejected():
    with pytest.raises(ValueError):
        color_shift(fleet_template(), -1)


colors_st = st.integers(min_value=0, max_value=6)


@st.composite
def fragments(draw):
    n = draw(st.integers(1, 4))
    places = tuple(f"P{i}" for i in range(n))
    trans = []
    for i in range(draw(st.integers(0, 4))):
        cs = draw(st.sets(colors_st, min_size=1, max_size=3))
        policies = {c: Fixed(float(draw(st.integers(0, 5)))) for c in cs}
        if draw(st.booleans()):
            policies["*"] = Exponential(1.0)
        cmap = {c: draw(colors_st) for c in cs if draw(st.booleans())}
        trans.append(transition(f"t{i}", draw(st.sampled_from(places)),
                                draw(st.sampled_from(places)), policies, color_map=cmap))
    trigs = tuple(Trigger(draw(st.sampled_from(["inhibitor", "enabler"])),
                          draw(st.sampled_from(places)), t.id, draw(st.integers(1, 3)),
                          draw(st.one_of(st.none(), st.sets(colors_st, min_size=1))))
                  for t in trans if draw(st.booleans()))
    toks = tuple(TokenSpec(draw(st.sampled_from(places)), draw(colors_st))
                 for _ in range(draw(st.integers(0, 4))))
    return Net(places, tuple(trans), trigs, toks)


@given(fragments(), st.integers(0, 50))
@settings(max_examples=60, deadline=None)
def test_shift_round_trip(net, offset):
    """Shifting up and re-deriving the original by subtracting the offset from
    every literal gives the input back."""
    shifted = color_shift(net, offset)
    back_transitions = tuple(
        Transition(t.id, t.inputs, t.outputs,
                   {(k if k == "*" else k - offset): p for k, p in t.policies.items()},
                   {k - offset: v - offset for k, v in t.color_map.items()},
                   t.age_action, t.emit_color)
        for t in shifted.transitions)
    back = Net(shifted.places, back_transitions,
               tuple(Trigger(g.kind, g.place, g.target, g.multiplicity,
                             None if g.colors is None else {c - offset for c in g.colors})
                     for g in shifted.triggers),
               tuple(TokenSpec(k.place, k.color - offset, k.age, k.count)
                     for k in shifted.tokens))
    assert back == net
    assert shifted.places == net.places
    assert [t.id for t in shifted.transitions] == [t.id for t in net.transitions]


# -- layer expansion --------------------------------------------------------------------

def test_single_copy_is_shifted_template():
    base = Net(("Done", "Queue"))
    t = fleet_template(copies=1)
    net = expand_layers(base, t)
    shifted = color_shift(t, 3)
    assert sorted(k.color for k in net.tokens) == [3, 4, 5]
    assert {p for p in net.places} == {"Done", "Queue", "Working#1"}
    assert {t.id for t in net.transitions} == {"wear#1", "back#1"}
    wear = net.transition("wear#1")
    assert wear.inputs == ("Working#1",) and wear.outputs == ("Queue",)
    assert wear.policies[3] == shifted.boundary[0].policies[3] == Exponential(10.0)


def test_service_model_copy_ranges():
    doc = gallery.document("color_shift_service")
    net = doc.net
    tokens = {(k.place, k.color) for k in net.tokens}
    assert tokens == {("Working#1", c) for c in (3, 4, 5)} | {("Working#2", c) for c in (6, 7, 8)}
    assert set(net.transition("back#1").policies) == {3, 4, 5}
    assert set(net.transition("back#2").policies) == {6, 7, 8}
    assert set(net.transition("wear#2").policies) == {6, 7, 8}
    assert net.transition("wear#2").policies[6] == Exponential(10.0)
    assert net.transition("wear#2").policies[7] == Exponential(20.0)
    assert {s.name for s in net.sensors} == {"shop_busy", "working#1", "working#2"}


def test_expansion_is_isomorphic_per_copy():
    base, t = shop(), fleet_template(copies=3)
    net = expand_layers(base, t)
    for k in (1, 2, 3):
        off = 3 * k
        for orig in t.boundary:
            got = net.transition(f"{orig.id}#{k}")
            rename = lambda p: f"{p}#{k}" if p in t.places else p
            assert got.inputs == tuple(map(rename, orig.inputs))
            assert got.outputs == tuple(map(rename, orig.outputs))
            explicit = {c + off for c in orig.policies if c != "*"}
            assert explicit <= set(got.policies)
            assert set(got.policies) <= set(range(off, off + 3))


def test_template_color_map_outside_span_leaks():
    t = fleet_template(transitions=(transition("mutate", "Working", "Working", {1: Fixed(1.0)},
                                               color_map={1: 3 + 2}),))
    with pytest.raises(ColorLeak):
        expand_layers(shop(), t)


@given(st.integers(1, 5), st.integers(-3, 12), st.integers(0, 12))
@settings(max_examples=80, deadline=None)
def test_color_leak_matches_scan(j, src, dst):
    """ColorLeak is raised exactly when some color_map entry leaves 0..j-1."""
    if src < 0:
        src = 0
    t = LayerTemplate("L", ("X",), (transition("m", "X", "X", {src: Fixed(1.0)},
                                               color_map={src: dst}),),
                      tokens=(TokenSpec("X", 0),), copies=2, color_span=j)
    leaks = not (0 <= src < j and 0 <= dst < j)
    if leaks:
        with pytest.raises(ColorLeak):
            expand_layers(Net(("Y",)), t)
    else:
        expand_layers(Net(("Y",)), t)


def test_span_zero_copies_share_colors():
    net = gallery.load("layered_pairing")
    assert {"CarUsed#1", "CarUsed#2"} <= set(net.places)
    assert len(net.triggers) == 12
    assert net.transition("board#1").policies == net.transition("board#2").policies


def test_expand_rejects_invalid_base():
    bad = Net(("A",), triggers=(Trigger("inhibitor", "A", "missing"),))
    with pytest.raises(model.ValidationError):
        expand_layers(bad, fleet_template())


def test_shared_triggers_not_duplicated():
    net = expand_layers(shop(), fleet_template())
    assert [g for g in net.triggers if g.target == "start"] == list(shop().triggers)


def test_home_colors():
    allowed = model.home_colors(shop(), fleet_template())
    assert allowed["Working#1"] == frozenset({3, 4, 5})
    assert allowed["Working#2"] == frozenset({6, 7, 8})
    assert allowed["Queue"] >= frozenset(range(3, 9))
