"""One fairness-improving method per category: reweighing / disparate impact
removal (pre), a group-gap regularizer (in) and reject-option relabelling (post)."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .dataset import CONTINUOUS, Dataset, Encoder, encode, group_mask, valuations
from .metrics import FairnessEvaluator, FairnessMetric
from .model import MLP, TrainConfig, forward, predict_from_probs, train


class RepairError(ValueError):
    pass


@dataclass
class RepairOutcome:
    method: str
    metric: FairnessMetric
    fairness_before: float
    fairness_after: float
    accuracy_before: float
    accuracy_after: float

    @property
    def improvement(self) -> float:
        return self.fairness_before - self.fairness_after

    @property
    def accuracy_delta(self) -> float:
        return self.accuracy_after - self.accuracy_before

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "metric": self.metric.kind.value,
            "protected": list(self.metric.protected),
            "fairness_before": self.fairness_before,
            "fairness_after": self.fairness_after,
            "accuracy_before": self.accuracy_before,
            "accuracy_after": self.accuracy_after,
            "improvement": self.improvement,
            "accuracy_delta": self.accuracy_delta,
        }


@dataclass(frozen=True)
class CriticalRegion:
    """Rows whose top class probability is at most ``theta_band`` are relabelled."""

    theta_band: float = 0.7

    def __post_init__(self):
        if not 0.5 < self.theta_band <= 1.0:
            raise ValueError("theta_band must lie in (0.5, 1]")

    def describe(self) -> str:
        return f"0.5 < max class probability <= {self.theta_band}"


def _as_tuple(protected) -> tuple[str, ...]:
    return (protected,) if isinstance(protected, str) else tuple(protected)


def _cells(data: Dataset, protected: Sequence[str]) -> list[np.ndarray]:
    schema = replace(data.schema, protected=tuple(protected))
    return [group_mask(data, theta) for theta in valuations(schema)]


def privileged_all(data: Dataset, protected: Sequence[str]) -> np.ndarray:
    """Rows privileged on every attribute in ``protected``."""
    mask = np.ones(len(data), dtype=bool)
    for name in protected:
        mask &= data.privileged_mask(name)
    return mask


def reweigh(data: Dataset, f, favorable: int | None = None) -> np.ndarray:
    """Weights making group membership and label independent.

    A row in group g with label c gets count(g) * count(c) / (|D| * count(g, c)).
    ``f`` may be one attribute or several (groups are then the joint cells).
    """
    favorable = data.schema.favorable_label if favorable is None else favorable
    n = len(data)
    labels = data.labels
    weights = np.empty(n)
    cells = [m for m in _cells(data, _as_tuple(f)) if m.any()]
    if len(cells) < 2:
        raise RepairError("reweighing needs at least two non-empty groups")
    for c in (favorable, 1 - favorable):
        if not (labels == c).any():
            raise RepairError(f"no rows with label {c}")
    for g in cells:
        for c in (favorable, 1 - favorable):
            cell = g & (labels == c)
            if not cell.any():
                raise RepairError(f"empty (group, label={c}) cell")
            weights[cell] = g.sum() * (labels == c).sum() / (n * cell.sum())
    return weights


def disparate_impact_remove(data: Dataset, protected, repair_level: float = 1.0) -> Dataset:
    """Pull each continuous non-protected attribute toward the median-of-groups quantile curve.

    Within a group, a value at quantile q moves a fraction ``repair_level``
    of the way to the median over groups of their q-quantiles. Within-group
    order is preserved and protected columns are untouched.
    """
    if not 0.0 <= repair_level <= 1.0:
        raise ValueError("repair_level must lie in [0, 1]")
    protected = _as_tuple(protected)
    targets = [a.name for a in data.schema.attributes if a.kind == CONTINUOUS and a.name not in protected]
    if not targets:
        raise RepairError("no continuous non-protected attributes to repair")
    if repair_level == 0.0:
        return data
    cells = [m for m in _cells(data, protected) if m.any()]
    rows = data.rows.copy()
    for name in targets:
        col = rows[name].to_numpy(dtype=float)
        groups = [np.sort(col[m]) for m in cells]
        out = col.copy()
        for m in cells:
            vals = col[m]
            k = len(vals)
            q = (rankdata(vals, method="average") - 1) / (k - 1) if k > 1 else np.full(k, 0.5)
            curve = np.median([np.quantile(g, q) for g in groups], axis=0)
            out[m] = (1 - repair_level) * vals + repair_level * curve
        rows[name] = out
    return data.with_rows(rows)


def _measure(model: MLP, test: Dataset, metric: FairnessMetric) -> tuple[float, float]:
    report = FairnessEvaluator(test, metric).report(model)
    return report.value, report.accuracy


def _fit(train_data: Dataset, config: TrainConfig, groups=None) -> MLP:
    return train(encode(train_data), config, groups, train_data.schema.favorable_label,
                 train_data.schema.fingerprint())


def train_baseline(train_data: Dataset, config: TrainConfig) -> MLP:
    return _fit(train_data, replace(config, fairness_penalty=0.0, use_sample_weights=False))


def repair_pre(config: TrainConfig, train_data: Dataset, test: Dataset, method: str,
               metric: FairnessMetric, baseline: MLP | None = None,
               repair_level: float = 1.0) -> tuple[MLP, RepairOutcome]:
    """Retrain on reweighed or disparate-impact-repaired training data."""
    baseline = baseline or train_baseline(train_data, config)
    base_cfg = replace(config, fairness_penalty=0.0)
    if method == "reweighing":
        weights = reweigh(train_data, metric.protected)
        model = _fit(train_data.with_weights(weights), replace(base_cfg, use_sample_weights=True))
    elif method == "disparate_impact_remover":
        repaired = disparate_impact_remove(train_data, metric.protected, repair_level)
        model = _fit(repaired, replace(base_cfg, use_sample_weights=False))
    else:
        raise RepairError(f"unknown pre-processing method {method!r}")
    f0, a0 = _measure(baseline, test, metric)
    f1, a1 = _measure(model, test, metric)
    return model, RepairOutcome(method, metric, f0, f1, a0, a1)


def repair_in(config: TrainConfig, train_data: Dataset, test: Dataset, lam: float,
              metric: FairnessMetric, baseline: MLP | None = None) -> tuple[MLP, RepairOutcome]:
    """Retrain with the group-gap penalty between all-privileged rows and the rest."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    baseline = baseline or train_baseline(train_data, config)
    cfg = replace(config, fairness_penalty=lam, use_sample_weights=False,
                  penalty_attribute=config.penalty_attribute or metric.protected[0])
    model = _fit(train_data, cfg, privileged_all(train_data, metric.protected) if lam > 0 else None)
    f0, a0 = _measure(baseline, test, metric)
    f1, a1 = _measure(model, test, metric)
    return model, RepairOutcome("fairness_regularizer", metric, f0, f1, a0, a1)


def reject_option_predictor(model: MLP, test: Dataset, protected: Sequence[str], region: CriticalRegion):
    """Labeller applying the reject-option rule to any encoded batch.

    Group membership is read back from the batch's own protected columns so
    the rule also applies to protected-attribute variants.
    """
    schema = test.schema
    enc = Encoder.from_schema(schema)
    fav = schema.favorable_label

    def predictor(x: np.ndarray) -> np.ndarray:
        probs = forward(model, x)
        labels = predict_from_probs(probs)
        in_band = probs.max(axis=1) <= region.theta_band
        priv = np.ones(len(x), dtype=bool)
        for name in protected:
            j = schema.index(name)
            priv &= schema.privileged_mask(name, enc.decode_column(j, x[:, j]))
        labels = labels.copy()
        labels[in_band & ~priv] = fav
        labels[in_band & priv] = 1 - fav
        return labels

    return predictor


def repair_post(model: MLP, test: Dataset, region: CriticalRegion, protected,
                metric: FairnessMetric | None = None) -> tuple[dict[int, int], RepairOutcome]:
    """Reject-option relabelling; returns the row -> label overlay for rows inside the band."""
    protected = _as_tuple(protected)
    metric = metric or FairnessMetric("spd" if len(protected) == 1 else "gds", protected)
    x = encode(test).features
    probs = forward(model, x)
    in_band = probs.max(axis=1) <= region.theta_band
    priv = privileged_all(test, protected)
    fav = test.schema.favorable_label
    overlay = {int(i): (1 - fav if priv[i] else fav) for i in np.flatnonzero(in_band)}

    ev = FairnessEvaluator(test, metric)
    before = ev.report(model)
    after = ev.report(model, reject_option_predictor(model, test, protected, region))
    return overlay, RepairOutcome("reject_option", metric, before.value, after.value,
                                  before.accuracy, after.accuracy)


def apply_overlay(predictions: np.ndarray, overlay: dict[int, int]) -> np.ndarray:
    out = np.array(predictions, copy=True)
    for i, label in overlay.items():
        out[int(i)] = label
    return out
