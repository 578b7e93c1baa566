import itertools
import math

import numpy as np
import pytest
from scipy.linalg import expm

from apnsim import gallery
from apnsim.engine import Simulator
from apnsim.markov import (UnsupportedModel, VanishingCycle, count_states, enumerate_states,
                           expected_sensors, explore, transient, window_average, write_generator)
from apnsim.model import Exponential, Immediate, Net, TokenSpec, transition
from apnsim.runner import stream_seed


@pytest.mark.parametrize("n, k, expected", [(1, 1, 4), (2, 1, 9), (4, 2, 111), (5, 3, 589),
                                             (20, 10, 451417560951)])
def test_state_counts(n, k, expected):
    assert count_states(n, k) == expected


@pytest.mark.parametrize("k", range(6))
def test_no_customers(k):
    assert count_states(0, k) == 2 ** k


@pytest.mark.parametrize("n, k", list(itertools.product(range(6), range(4))))
def test_count_matches_enumeration(n, k):
    assert count_states(n, k) == len(enumerate_states(n, k))


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        count_states(-1, 2)


def test_gallery_chain_sizes():
    assert explore(gallery.load("cars_customers_nobreak")).size == 5
    assert explore(gallery.load("cars_customers")).size == 9


def test_generator_rows_sum_to_zero():
    q = explore(gallery.load("cars_customers")).generator.toarray()
    assert np.allclose(q.sum(axis=1), 0.0, atol=1e-12)
    assert (q - np.diag(np.diag(q)) >= 0).all()


def test_non_exponential_rejected():
    with pytest.raises(UnsupportedModel, match="weibull"):
        explore(gallery.load("periodic_inspection"))


def test_vanishing_cycle():
    net = Net(("A", "B"), (transition("ab", "A", "B", {"*": Immediate(0)}),
                           transition("ba", "B", "A", {"*": Immediate(0)})),
              tokens=(TokenSpec("A", 0),))
    with pytest.raises(VanishingCycle):
        explore(net)


def test_ambiguous_immediate_conflict():
    net = Net(("A", "B", "C"), (transition("b", "A", "B", {"*": Immediate(1)}),
                                transition("c", "A", "C", {"*": Immediate(1)})),
              tokens=(TokenSpec("A", 0),))
    with pytest.raises(UnsupportedModel, match="equal priority"):
        explore(net)


def two_state():
    return Net(("A", "B"), (transition("ab", "A", "B", {"*": Exponential(1 / 3)}),
                            transition("ba", "B", "A", {"*": Exponential(1 / 2)})),
               tokens=(TokenSpec("A", 0),))


def test_two_state_closed_form():
    ctmc = explore(two_state())
    a, b = 3.0, 2.0
    t = 10.0
    p = transient(ctmc, [0.0, t])
    ia = ctmc.states.index(((("A", 0), 1),))
    assert p[0, ia] == 1.0
    exact = b / (a + b) + a / (a + b) * math.exp(-(a + b) * t)
    assert p[1, ia] == pytest.approx(exact, abs=1e-6)


def test_frozen_chain_constant():
    net = Net(("A",), tokens=(TokenSpec("A", 0),))
    p = transient(explore(net), [0.0, 5.0, 50.0])
    assert (p == 1.0).all()


def test_transient_matches_expm():
    ctmc = explore(gallery.load("cars_customers"))
    q = ctmc.generator.toarray()
    p0 = np.zeros(ctmc.size)
    p0[ctmc.initial] = 1.0
    times = [17.0, 0.0, 3.5, 40.0]
    got = transient(ctmc, times)
    for t, row in zip(times, got):
        assert row == pytest.approx(p0 @ expm(q * t), abs=1e-9)
        assert row.sum() == pytest.approx(1.0, abs=1e-9)


def test_window_average_flat_chain():
    net = Net(("A",), tokens=(TokenSpec("A", 0),))
    assert window_average(explore(net), 1.0, 2.0) == pytest.approx([1.0])
    with pytest.raises(ValueError):
        window_average(explore(net), 2.0, 2.0)


def test_edge_rates_match_simulated_frequencies():
    # rate i->j == (jumps i->j) / (time spent in i), estimated from long traces
    net = gallery.load("cars_customers").replace(sensors=())
    ctmc = explore(net)
    index = {s: i for i, s in enumerate(ctmc.states)}
    jumps = {}
    sojourn = np.zeros(ctmc.size)
    for r in range(20):
        sim = Simulator(net, stream_seed(99, r), 2000.0)
        state = index[_tangible(sim)]
        last = 0.0
        while True:
            t = sim.step()
            if t is None:
                break
            new = _tangible_or_none(sim, index)
            if new is None or new == state:
                continue
            sojourn[state] += t - last
            jumps[(state, new)] = jumps.get((state, new), 0) + 1
            state, last = new, t
    for i, j, rate in ctmc.edges():
        n = jumps.get((i, j), 0)
        est = n / sojourn[i]
        assert abs(est - rate) < 4 * rate / math.sqrt(max(n, 1)) + 1e-9, (i, j)


def _tangible(sim):
    counts = {}
    for place, toks in sim.marking().items():
        for _, c, _ in toks:
            counts[(place, c)] = counts.get((place, c), 0) + 1
    return tuple(sorted(counts.items()))


def _tangible_or_none(sim, index):
    nxt = sim._next_entry()
    if nxt is not None and nxt[0] == sim.clock:
        return None  # vanishing: immediates still pending at this instant
    return index.get(_tangible(sim))


def test_sensor_expectations_and_export(tmp_path):
    import io
    ctmc = explore(gallery.load("cars_customers_nobreak"))
    vals = expected_sensors(ctmc, 20.0, 40.0)
    assert 0.0 <= vals["car_in_use"] <= 1.0
    buf = io.StringIO()
    write_generator(ctmc, buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == ctmc.generator.nnz
    i, j, v = lines[0].split()
    assert ctmc.generator[int(i), int(j)] == float(v)
