import numpy as np
import pandas as pd
import pytest

from conftest import random_mlp, tiny_dataset, tiny_schema
from fairlens.dataset import Encoder, encode, make_dataset, split, synth_generate
from fairlens.metrics import FairnessMetric
from fairlens.model import MLP, TrainConfig, forward, predict
from fairlens.repair import (
    CriticalRegion,
    RepairError,
    RepairOutcome,
    apply_overlay,
    disparate_impact_remove,
    privileged_all,
    reject_option_predictor,
    repair_post,
    repair_pre,
    reweigh,
)

SPD = FairnessMetric("spd", ("g",))


def _weighted_rate(labels, weights, mask, fav=1):
    return np.sum(weights[mask] * (labels[mask] == fav)) / np.sum(weights[mask])


def test_worked_cell_weight():
    # 10 rows, 5 privileged, 4 favorable, 3 privileged and favorable
    g = ["a"] * 5 + ["b"] * 5
    y = [1, 1, 1, 0, 0, 1, 0, 0, 0, 0]
    rows = pd.DataFrame({"g": g, "c": 1.0, "k": "u", "h": 1.0})
    data = make_dataset(tiny_schema(), rows, y)
    w = reweigh(data, "g")
    assert w[0] == 2 / 3
    assert w[3] == (5 * 6) / (10 * 2)


def test_independent_data_gets_unit_weights():
    rows = pd.DataFrame({"g": ["a", "a", "b", "b"], "c": 1.0, "k": "u", "h": 1.0})
    data = make_dataset(tiny_schema(), rows, [1, 0, 1, 0])
    np.testing.assert_allclose(reweigh(data, "g"), 1.0, atol=1e-15)


def test_reweighing_balances_rates_on_random_fixtures():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        data = tiny_dataset(rng, int(rng.integers(12, 80)))
        try:
            w = reweigh(data, "g")
        except RepairError:
            continue
        priv = data.privileged_mask("g")
        overall = _weighted_rate(data.labels, w, np.ones(len(data), dtype=bool))
        assert abs(_weighted_rate(data.labels, w, priv) - _weighted_rate(data.labels, w, ~priv)) <= 1e-9
        assert abs(_weighted_rate(data.labels, w, priv) - overall) <= 1e-9


def test_reweighing_empty_cell_is_error():
    rows = pd.DataFrame({"g": ["a", "a", "b", "b"], "c": 1.0, "k": "u", "h": 1.0})
    with pytest.raises(RepairError):
        reweigh(make_dataset(tiny_schema(), rows, [1, 1, 1, 0]), "g")


def test_dir_level_zero_is_identity(rng):
    data = tiny_dataset(rng, 30)
    assert disparate_impact_remove(data, ("g",), 0.0) is data


def _ks(a, b):
    grid = np.union1d(a, b)
    fa = np.searchsorted(np.sort(a), grid, side="right") / len(a)
    fb = np.searchsorted(np.sort(b), grid, side="right") / len(b)
    return np.max(np.abs(fa - fb))


def test_dir_full_repair_aligns_group_quantiles():
    rng = np.random.default_rng(0)
    n = 200
    g = rng.choice(["a", "b"], n)
    c = np.where(g == "a", rng.uniform(5, 10, n), rng.uniform(0, 6, n))
    rows = pd.DataFrame({"g": g, "c": c, "k": rng.choice(["u", "v"], n), "h": rng.uniform(0, 10, n)})
    data = make_dataset(tiny_schema(), rows, rng.integers(0, 2, n))
    out = disparate_impact_remove(data, ("g",), 1.0)
    priv = data.privileged_mask("g")
    col = out.rows["c"].to_numpy()
    assert _ks(col[priv], col[~priv]) <= 1 / min(priv.sum(), (~priv).sum())
    assert _ks(c[priv], c[~priv]) > 0.5


@pytest.mark.parametrize("level", [0.0, 0.3, 1.0])
def test_dir_preserves_ranks_and_protected_columns(level):
    rng = np.random.default_rng(4)
    data = tiny_dataset(rng, 60)
    out = disparate_impact_remove(data, ("g",), level)
    pd.testing.assert_series_equal(out.rows["g"], data.rows["g"])
    for mask in (data.privileged_mask("g"), ~data.privileged_mask("g")):
        for name in ("c", "h"):
            before = data.rows[name].to_numpy()[mask]
            after = out.rows[name].to_numpy()[mask]
            assert (np.argsort(before, kind="stable") == np.argsort(after, kind="stable")).all()


def test_dir_needs_continuous_attribute():
    with pytest.raises(RepairError):
        disparate_impact_remove(tiny_dataset(np.random.default_rng(1), 10), ("g", "c", "h"))


def test_critical_region_bounds():
    with pytest.raises(ValueError):
        CriticalRegion(0.5)
    with pytest.raises(ValueError):
        CriticalRegion(1.2)


def _fixed_prob_model(logit_gap_by_c):
    """One-input-relevant model whose favorable logit minus unfavorable logit is linear in c."""
    a, b = logit_gap_by_c
    w1 = np.zeros((4, 1))
    w1[1, 0] = 1.0
    w2 = np.array([[0.0, a]])
    return MLP([w1, w2], [np.zeros(1), np.array([0.0, b])], Encoder.from_schema(tiny_schema()))


def test_unprivileged_row_in_band_flips_to_favorable():
    # c encodes to 0.5, favorable probability = sigmoid(-0.2007) ~ 0.45
    model = _fixed_prob_model((0.0, np.log(0.45 / 0.55)))
    rows = pd.DataFrame({"g": ["b", "a"], "c": [5.0, 5.0], "k": "u", "h": 1.0})
    test = make_dataset(tiny_schema(), rows, [0, 0])
    probs = forward(model, encode(test).features)
    np.testing.assert_allclose(probs[:, 1], 0.45)
    overlay, _ = repair_post(model, test, CriticalRegion(0.6), "g")
    # the unprivileged row gains the favorable label, the privileged one keeps the unfavorable
    assert overlay == {0: 1, 1: 0}


def test_minimal_band_changes_nothing(rng):
    data = tiny_dataset(rng, 40)
    model = random_mlp(rng, 4, (4,), Encoder.from_schema(data.schema))
    # scale the output layer so every prediction is far from the boundary
    model.weights[-1] *= 1e6
    model.biases[-1] = np.array([0.0, 1e-3])
    overlay, outcome = repair_post(model, data, CriticalRegion(0.5 + 1e-12), "g")
    assert overlay == {}
    assert outcome.improvement == 0.0


def test_post_processing_only_touches_band(rng):
    data = tiny_dataset(rng, 60)
    model = random_mlp(rng, 4, (4,), Encoder.from_schema(data.schema))
    x = encode(data).features
    probs = forward(model, x)
    region = CriticalRegion(0.8)
    overlay, _ = repair_post(model, data, region, "g")
    base = predict(model, x)
    relabelled = apply_overlay(base, overlay)
    outside = probs.max(axis=1) > region.theta_band
    np.testing.assert_array_equal(relabelled[outside], base[outside])
    predictor = reject_option_predictor(model, data, ("g",), region)
    np.testing.assert_array_equal(predictor(x), relabelled)


def test_outcome_deltas_are_consistent():
    o = RepairOutcome("reweighing", SPD, 0.4, 0.1, 0.8, 0.75)
    d = o.to_dict()
    assert d["improvement"] == d["fairness_before"] - d["fairness_after"]
    assert d["accuracy_delta"] == d["accuracy_after"] - d["accuracy_before"]


def test_privileged_all_intersects(rng):
    data = tiny_dataset(rng, 40, two_protected=True)
    expected = (data.rows["g"] == "a").to_numpy() & (data.rows["h"] > 5).to_numpy()
    np.testing.assert_array_equal(privileged_all(data, ("g", "h")), expected)


# end-to-end repairs on the shared synthetic run

def test_reweighing_reduces_spd(synth_run):
    _, outcome = repair_pre(synth_run["config"], synth_run["train"], synth_run["test"], "reweighing",
                            synth_run["metric"], synth_run["baseline"])
    assert outcome.fairness_after <= 0.7 * outcome.fairness_before
    assert outcome.accuracy_delta >= -0.05


def test_reweighing_on_unbiased_data_changes_little():
    data = synth_generate(4000, 0.0, seed=0)
    train_data, test = split(data, 0.7, seed=0)
    _, outcome = repair_pre(TrainConfig(seed=0), train_data, test, "reweighing", FairnessMetric("spd", ("group",)))
    assert abs(outcome.improvement) <= 0.03


def test_dir_level_zero_matches_baseline(synth_run):
    model, outcome = repair_pre(synth_run["config"], synth_run["train"], synth_run["test"],
                                "disparate_impact_remover", synth_run["metric"], synth_run["baseline"], 0.0)
    for a, b in zip(model.weights, synth_run["baseline"].weights):
        np.testing.assert_array_equal(a, b)
    assert outcome.improvement == 0.0


def test_in_processing_strictly_below_unpenalized(synth_run):
    assert synth_run["outcomes"][5.0].fairness_after < synth_run["outcomes"][0.0].fairness_after


def test_reject_option_does_not_raise_spd(synth_run):
    _, outcome = repair_post(synth_run["baseline"], synth_run["test"], CriticalRegion(0.7), "group")
    assert outcome.fairness_after <= outcome.fairness_before


def test_unknown_pre_method(synth_run):
    with pytest.raises(RepairError):
        repair_pre(synth_run["config"], synth_run["train"], synth_run["test"], "magic", synth_run["metric"],
                   synth_run["baseline"])
