import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_mlp, tiny_dataset
from fairlens.causality import (
    AieRecord,
    ace,
    analyze_all,
    causality_attribute,
    causality_neuron,
    coefficient_of_variation,
    generate_vals,
    records_table,
    responsibility_stats,
)
from fairlens.dataset import Encoder
from fairlens.metrics import FairnessMetric, spd
from fairlens.model import MLP, NeuronTarget, init_mlp

SPD = FairnessMetric("spd", ("g",))


@pytest.mark.parametrize("lo,hi,n,expected", [
    (0, 1, 5, [0, 0.25, 0.5, 0.75, 1.0]),
    (3, 3, 4, [3, 3, 3, 3]),
    (-2, 2, 3, [-2, 0, 2]),
])
def test_generate_vals(lo, hi, n, expected):
    assert generate_vals(lo, hi, n) == pytest.approx(expected, abs=1e-15)


def test_generate_vals_rejects_bad_input():
    with pytest.raises(ValueError):
        generate_vals(2, 1, 3)
    with pytest.raises(ValueError):
        generate_vals(0, 1, 0)


def _fixture(seed, n=10, hidden=(4, 3), two=False):
    rng = np.random.default_rng(seed)
    data = tiny_dataset(rng, n, two_protected=two)
    return data, random_mlp(rng, 4, hidden, Encoder.from_schema(data.schema))


def test_zero_outgoing_weights_give_baseline():
    data, model = _fixture(1)
    model.weights[1][2, :] = 0.0
    rec = causality_neuron(model, data, NeuronTarget(0, 2), SPD, 5)
    assert rec.aie == rec.baseline == spd(model, data, "g")


def test_zero_first_layer_weights_give_baseline():
    data, model = _fixture(2)
    model.weights[0][1, :] = 0.0
    rec = causality_attribute(model, data, "c", SPD, 5)
    assert rec.aie == rec.baseline


def test_degenerate_range_single_value():
    data, model = _fixture(3)
    # a neuron that is dead on every row has range (0, 0)
    model.weights[0][:, 0] = -1.0
    model.biases[0][0] = -1.0
    rec = causality_neuron(model, data, NeuronTarget(0, 0), SPD, 1)
    assert rec.values_used == [0.0]
    assert rec.aie == rec.expectations[0]


def test_binary_categorical_attribute_uses_two_values():
    data, model = _fixture(4)
    rec = causality_attribute(model, data, "g", SPD, 7)
    assert rec.values_used == ["a", "b"] and len(rec.expectations) == 2


def test_neuron_oracle_222_network_six_rows():
    rng = np.random.default_rng(8)
    data = tiny_dataset(rng, 6)
    model = MLP([rng.normal(size=(4, 2)), rng.normal(size=(2, 2))], [rng.normal(size=2), rng.normal(size=2)],
                Encoder.from_schema(data.schema))
    rows = oracles.rows_of(data)
    for j in range(2):
        rec = causality_neuron(model, data, NeuronTarget(0, j), SPD, 4)
        base, aie = oracles.aie_neuron(model, data.schema, rows, 0, j, ("g",), "spd", 4)
        assert rec.baseline == pytest.approx(base, abs=1e-9)
        assert rec.aie == pytest.approx(aie, abs=1e-9)


def test_attribute_oracle_three_value_categorical():
    data, model = _fixture(9, n=6)
    rec = causality_attribute(model, data, "k", SPD, 4)
    base, aie = oracles.aie_attribute(model, data.schema, oracles.rows_of(data), "k", ("g",), "spd", 4)
    assert rec.aie == pytest.approx(aie, abs=1e-9) and rec.baseline == pytest.approx(base, abs=1e-9)


def test_ace_arithmetic():
    metric = SPD
    rec = AieRecord(NeuronTarget(0, 0), metric, 0.249, [0.0], [0.3], 0.3)
    assert ace(rec) == pytest.approx(0.051, abs=1e-12)
    assert ace(AieRecord(NeuronTarget(0, 0), metric, 0.2, [0.0], [0.2], 0.2)) == 0.0


def test_ace_sign_agrees_with_responsibility():
    for seed in range(5):
        data, model = _fixture(20 + seed, n=10)
        records, _ = analyze_all(model, data, SPD, 4)
        for r in records:
            assert (r.ace > 0) == r.responsible


def test_aie_is_mean_of_expectations():
    data, model = _fixture(5, two=True)
    records, _ = analyze_all(model, data, FairnessMetric("gds", ("g", "h")), 5)
    for r in records:
        assert abs(r.aie - np.mean(r.expectations)) < 1e-12
        assert 0.0 <= r.aie <= 1.0
        expected = len(data.schema.attribute(r.target.name).domain) if r.kind == "attribute" and \
            data.schema.attribute(r.target.name).kind == "categorical" else 5
        assert len(r.values_used) == len(r.expectations) == expected


def test_default_architecture_yields_124_neuron_records(rng):
    data = tiny_dataset(rng, 20)
    model = init_mlp(4, seed=1, encoder=Encoder.from_schema(data.schema))
    records, _ = analyze_all(model, data, SPD, 3)
    assert sum(r.kind == "neuron" for r in records) == 124
    assert len(records_table(records)) == 4 + 124


def test_all_zero_model_has_no_responsible_variables(rng):
    data = tiny_dataset(rng, 20)
    model = MLP([np.zeros((4, 3)), np.zeros((3, 2))], [np.zeros(3), np.zeros(2)], Encoder.from_schema(data.schema))
    records, stats = analyze_all(model, data, SPD, 5)
    assert all(r.aie == r.baseline for r in records)
    assert (stats.p_f, stats.p_n, stats.cv_f, stats.cv_n) == (0.0, 0.0, None, None)


def test_cv_uses_population_std():
    assert coefficient_of_variation([1.0, 3.0]) == pytest.approx(0.5)
    assert coefficient_of_variation([]) is None


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=30), st.floats(0.1, 100.0))
def test_cv_scale_invariance(values, c):
    assert coefficient_of_variation([c * v for v in values]) == pytest.approx(
        coefficient_of_variation(values), abs=1e-12)


def test_raising_baseline_shrinks_responsible_sets():
    data, model = _fixture(6, n=10)
    records, stats = analyze_all(model, data, SPD, 5)
    for eps in (1e-6, 0.05, 0.2):
        raised = responsibility_stats(records, stats.baseline + eps)
        assert set(raised.responsible_attributes) <= set(stats.responsible_attributes)
        assert set(raised.responsible_neurons) <= set(stats.responsible_neurons)


def test_stats_proportions_and_cv_definedness():
    for seed in range(5):
        data, model = _fixture(40 + seed, n=10)
        _, stats = analyze_all(model, data, SPD, 4)
        assert 0.0 <= stats.p_f <= 1.0 and 0.0 <= stats.p_n <= 1.0
        assert (stats.cv_f is None) == (not stats.responsible_attributes)
        assert (stats.cv_n is None) == (not stats.responsible_neurons)
        assert stats.cv_f is None or stats.cv_f >= 0


def test_analysis_is_deterministic_and_thread_independent():
    data, model = _fixture(7, n=10, two=True)
    metric = FairnessMetric("cds", ("g", "h"))
    a, sa = analyze_all(model, data, metric, 4, threads=1)
    b, sb = analyze_all(model, data, metric, 4, threads=4)
    assert [r.aie for r in a] == [r.aie for r in b]
    assert sa == sb


def test_records_table_columns():
    data, model = _fixture(8, n=10, hidden=(3,))
    records, _ = analyze_all(model, data, SPD, 3)
    table = records_table(records)
    assert list(table.columns) == ["kind", "layer", "index", "name", "baseline", "aie", "ace", "responsible"]
    assert table["name"].tolist() == ["g", "c", "k", "h", "L0N0", "L0N1", "L0N2"]
