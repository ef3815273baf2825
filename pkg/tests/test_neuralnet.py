import math
import random

import pytest
from hypothesis import given, strategies as st

from fxevo.neuralnet import (ACTIVATIONS, Genotype, GenotypeError, InLink, NeuronGene,
                             SensorGene, apply_af, internals_sensor, seed_genotype,
                             signal_from_output, sliding_window_sensor, to_phenotype,
                             trade_actuator, validate)


def test_af_examples():
    assert apply_af("tanh", 0) == 0
    assert apply_af("gaussian", 0) == 1
    assert apply_af("sgn", -2.5) == -1
    assert apply_af("sgn", 0) == 0
    assert apply_af("log", -(math.e - 1)) == pytest.approx(-1)
    assert apply_af("sqrt", -4) == -2
    assert apply_af("absolute", -3) == 3
    assert apply_af("linear", 0.7) == 0.7


@pytest.mark.parametrize("af", ACTIVATIONS)
def test_af_total(af):
    for x in (-1e300, -5.0, -1e-12, 0.0, 1e-12, 3.0, 1e300):
        assert math.isfinite(apply_af(af, x))


ODD = ("sgn", "linear", "log", "sqrt", "sin", "tanh")
EVEN = ("gaussian", "absolute")


@given(st.floats(-1e6, 1e6))
def test_af_symmetry(x):
    for af in ODD:
        assert apply_af(af, -x) == pytest.approx(-apply_af(af, x), abs=1e-12)
    for af in EVEN:
        assert apply_af(af, -x) == pytest.approx(apply_af(af, x), abs=1e-12)


def test_unknown_af():
    with pytest.raises(ValueError):
        apply_af("relu", 1.0)


@pytest.mark.parametrize("y, expected", [(0.0, 0), (-0.5, 0), (0.5, 0), (0.51, 1), (-0.51, -1)])
def test_signal_thresholds(y, expected):
    assert signal_from_output(y) == expected


def test_seed_pli():
    g = seed_genotype([sliding_window_sensor(5), internals_sensor()], [trade_actuator()],
                      random.Random(0))
    assert g.size == 1
    n = g.neurons[0]
    assert sum(len(l.weights) for l in n.in_links) == 8
    assert all(-0.5 <= w <= 0.5 for l in n.in_links for w in l.weights)
    assert -0.5 <= n.bias <= 0.5
    assert g.actuators[0].fanin == [n.id]
    assert g.last_mutated_ids == {n.id}


def test_seed_internals_only():
    g = seed_genotype([internals_sensor()], [trade_actuator()], random.Random(0))
    assert g.size == 1 and g.neurons[0].weight_count() == 4


def test_seed_deterministic():
    mk = lambda: seed_genotype([sliding_window_sensor(5), internals_sensor()], [trade_actuator()],
                               random.Random(42))
    assert mk().to_dict() == mk().to_dict()


def test_seed_needs_inputs():
    with pytest.raises(ValueError):
        seed_genotype([], [trade_actuator()], random.Random(0))
    with pytest.raises(ValueError):
        seed_genotype([internals_sensor()], [], random.Random(0))


def _single(af="linear", weight=1.0, bias=0.0, vl=1, self_weight=None):
    g = seed_genotype([SensorGene("", "sliding_window", vl, {"n": vl})], [trade_actuator()],
                      random.Random(0), af=af)
    n = g.neurons[0]
    n.in_links[0].weights = [weight] * vl
    n.bias = bias
    if self_weight is not None:
        n.in_links.append(InLink(n.id, [self_weight], recurrent=True))
    validate(g)
    return g


def test_evaluate_zero_weights():
    net = to_phenotype(_single("tanh", weight=0.0, vl=3))
    for x in ([1, 2, 3], [-5, 0, 9]):
        assert net.step(x) == [0.0]


def test_evaluate_linear():
    g = _single("linear", 1.0)
    net = to_phenotype(g)
    assert net.evaluate({g.sensors[0].id: [0.7]}) == [0.7]


def test_evaluate_length_mismatch():
    g = _single()
    net = to_phenotype(g)
    with pytest.raises(ValueError):
        net.evaluate({g.sensors[0].id: [0.7, 0.1]})


def test_self_recurrence_unrolls():
    net = to_phenotype(_single("linear", 1.0, self_weight=1.0))
    assert [net.step([1.0])[0] for _ in range(3)] == [1.0, 2.0, 3.0]
    net.reset()
    assert net.step([1.0]) == [1.0]


def _chain():
    """sensor -> n1 -> n2 -> actuator, both linear, weights 2 and 3."""
    g = _single("linear", 2.0)
    first = g.neurons[0]
    second = NeuronGene(g.new_id("n"), "linear", [InLink(first.id, [3.0])], 0.0)
    g.neurons.append(second)
    g.actuators[0].fanin = [second.id]
    validate(g)
    return g


def test_two_neuron_chain_order():
    g = _chain()
    net = to_phenotype(g)
    assert net.order == [g.neurons[0].id, g.neurons[1].id]
    assert net.step([1.0]) == [6.0]


def test_chain_order_independent_of_gene_order():
    g = _chain()
    g.neurons.reverse()
    net = to_phenotype(g)
    assert net.order[0] == g.neurons[1].id
    assert net.step([1.0]) == [6.0]


def test_feedforward_state_free():
    net = to_phenotype(_chain())
    inputs = [[0.3], [-1.2], [4.0]]
    fresh = []
    for x in inputs:
        net.reset()
        fresh.append(net.step(x))
    for x, y in zip(reversed(inputs), reversed(fresh)):
        net.reset()
        assert net.step(x) == y


def test_batch_matches_step():
    g = seed_genotype([sliding_window_sensor(4)], [trade_actuator()], random.Random(3), af="sin")
    net = to_phenotype(g)
    import numpy as np
    X = np.random.default_rng(0).normal(size=(6, 4))
    b = net.batch(X)
    for row, out in zip(X, b):
        net.reset()
        assert net.step(list(row))[0] == pytest.approx(out[0], abs=1e-12)


def test_deterministic_sequences():
    g = _single("tanh", 0.8, self_weight=0.5)
    seq = [[0.1], [0.9], [-0.4], [0.2]]
    a, b = to_phenotype(g), to_phenotype(g)
    assert [a.step(x) for x in seq] == [b.step(x) for x in seq]


@pytest.mark.parametrize("breaker, message", [
    (lambda g: g.neurons[0].in_links.clear(), "no input links"),
    (lambda g: g.neurons[0].in_links.append(InLink("ghost", [1.0])), "unknown link source"),
    (lambda g: g.neurons.append(NeuronGene(g.neurons[0].id, "tanh", [InLink(g.sensors[0].id, [1.0])])), "duplicate"),
    (lambda g: setattr(g.actuators[0], "fanin", []), "fanin"),
    (lambda g: g.neurons[0].in_links[0].weights.append(1.0), "weights"),
    (lambda g: g.neurons.append(NeuronGene("dangling", "tanh", [InLink(g.sensors[0].id, [1.0])])), "does not reach"),
    (lambda g: setattr(g, "substrate_spec", object()), "substrate spec"),
])
def test_invariant_violations(breaker, message):
    g = _single()
    breaker(g)
    with pytest.raises(GenotypeError, match=message):
        validate(g)


def test_feedforward_cycle_rejected():
    g = _chain()
    a, b = g.neurons
    a.in_links.append(InLink(b.id, [1.0], recurrent=False))
    with pytest.raises(GenotypeError, match="cycle"):
        validate(g)
    a.in_links[-1].recurrent = True
    validate(g)


def test_unreachable_neuron_rejected():
    g = _chain()
    # n3 only listens to itself: it reaches the actuator through n2 but no sensor reaches it
    n3 = NeuronGene(g.new_id("n"), "tanh", [], 0.0)
    n3.in_links.append(InLink(n3.id, [1.0], recurrent=True))
    g.neurons.append(n3)
    g.neurons[1].in_links.append(InLink(n3.id, [1.0]))
    with pytest.raises(GenotypeError, match="not reachable"):
        validate(g)


def test_serialization_round_trip():
    g = _chain()
    text = g.to_json()
    back = Genotype.from_json(text)
    assert back.to_dict() == g.to_dict()
    assert to_phenotype(back).step([1.0]) == [6.0]


def test_serialization_rejects_foreign_documents():
    with pytest.raises(GenotypeError):
        Genotype.from_json('{"format": "something-else"}')
