"""Group (SPD, GDS) and individual (CDS) fairness scores, plus accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .dataset import Dataset, ProtectedValuation, Schema, encode, group_mask, valuations
from .model import MLP, Intervention, predict

Predictor = Callable[[np.ndarray], np.ndarray]


class MetricKind(str, Enum):
    SPD = "spd"
    GDS = "gds"
    CDS = "cds"


class EmptyGroupError(ValueError):
    pass


@dataclass(frozen=True)
class FairnessMetric:
    kind: MetricKind
    protected: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", MetricKind(self.kind))
        object.__setattr__(self, "protected", tuple(self.protected))
        if not self.protected:
            raise ValueError("a fairness metric needs at least one protected attribute")
        if self.kind is MetricKind.SPD and len(self.protected) != 1:
            raise ValueError("SPD is defined for exactly one protected attribute")

    def label(self) -> str:
        return f"{self.kind.value}({'+'.join(self.protected)})"


@dataclass
class ScoreReport:
    metric: FairnessMetric
    value: float
    rates: dict[str, float] = field(default_factory=dict)
    accuracy: float | None = None

    def to_dict(self) -> dict:
        return {
            "metric": self.metric.kind.value,
            "protected": list(self.metric.protected),
            "value": self.value,
            "rates": dict(self.rates),
            "accuracy": self.accuracy,
        }


def _restrict(schema: Schema, protected: Sequence[str]) -> Schema:
    return replace(schema, protected=tuple(protected))


def gds_from_rates(rates) -> float:
    """Largest pairwise gap between favorable rates."""
    values = list(rates.values()) if isinstance(rates, Mapping) else list(rates)
    if not values:
        raise ValueError("no rates given")
    return float(max(values) - min(values))


class FairnessEvaluator:
    """Precomputed encoding, group masks and protected variants for one (data, metric) pair.

    ``views`` are the feature matrices a predictor has to label: the data
    itself for group metrics; the data followed by one copy per protected
    valuation (protected columns swapped for group representatives) for CDS.
    """

    def __init__(self, data: Dataset, metric: FairnessMetric):
        if len(data) == 0:
            raise ValueError("empty data")
        self.data = data
        self.metric = metric
        self.favorable = data.schema.favorable_label
        enc = encode(data)
        self.encoder = enc.encoder
        self.features = enc.features
        self.valuations = valuations(_restrict(data.schema, metric.protected))
        if metric.kind is MetricKind.CDS:
            self.masks = []
            self.views = [self.features] + [self._variant(theta) for theta in self.valuations]
        else:
            self.masks = [group_mask(data, theta) for theta in self.valuations]
            for theta, mask in zip(self.valuations, self.masks):
                if not mask.any():
                    raise EmptyGroupError(f"no rows in group {theta.label()}")
            self.views = [self.features]

    def _variant(self, theta: ProtectedValuation) -> np.ndarray:
        x = self.features.copy()
        schema = self.data.schema
        for name, privileged in theta.assignments.items():
            priv_rep, unpriv_rep = schema.representatives(name)
            x[:, schema.index(name)] = self.encoder.encode_value(name, priv_rep if privileged else unpriv_rep)
        return x

    def rates(self, predictions: np.ndarray) -> dict[str, float]:
        fav = predictions == self.favorable
        return {theta.label(): float(fav[mask].mean()) for theta, mask in zip(self.valuations, self.masks)}

    def score_predictions(self, predictions: Sequence[np.ndarray]) -> float:
        """Score from one prediction vector per view."""
        if self.metric.kind is MetricKind.CDS:
            base = predictions[0]
            flipped = np.zeros(len(base), dtype=bool)
            for variant in predictions[1:]:
                flipped |= variant != base
            return float(flipped.mean())
        fav = predictions[0] == self.favorable
        if self.metric.kind is MetricKind.SPD:
            priv, unpriv = self.masks
            return float(abs(fav[unpriv].mean() - fav[priv].mean()))
        return gds_from_rates([fav[m].mean() for m in self.masks])

    def score_with(self, predictor: Predictor) -> float:
        return self.score_predictions([predictor(v) for v in self.views])

    def __call__(self, model: MLP, intervention: Intervention | None = None) -> float:
        return self.score_predictions([predict(model, v, intervention) for v in self.views])

    def report(self, model: MLP, predictor: Predictor | None = None) -> ScoreReport:
        predictor = predictor or (lambda x: predict(model, x))
        preds = [predictor(v) for v in self.views]
        value = self.score_predictions(preds)
        rates = self.rates(preds[0]) if self.masks else {}
        acc = float((preds[0] == self.data.labels).mean())
        return ScoreReport(self.metric, value, rates, acc)


def spd(model: MLP, data: Dataset, f: str, intervention: Intervention | None = None) -> float:
    return FairnessEvaluator(data, FairnessMetric(MetricKind.SPD, (f,)))(model, intervention)


def gds(model: MLP, data: Dataset, protected: Sequence[str],
        intervention: Intervention | None = None) -> ScoreReport:
    ev = FairnessEvaluator(data, FairnessMetric(MetricKind.GDS, tuple(protected)))
    preds = predict(model, ev.features, intervention)
    rates = ev.rates(preds)
    return ScoreReport(ev.metric, gds_from_rates(rates), rates, float((preds == data.labels).mean()))


def is_discriminatory(model: MLP, row: Mapping, schema: Schema, protected: Sequence[str] | None = None) -> bool:
    """True iff swapping protected attributes between group representatives flips the prediction."""
    protected = tuple(protected or schema.protected)
    single = Dataset(schema, pd.DataFrame([{n: row[n] for n in schema.names}]), np.zeros(1, dtype=np.int64), np.ones(1))
    ev = FairnessEvaluator(single, FairnessMetric(MetricKind.CDS, protected))
    return ev(model) > 0


def cds(model: MLP, data: Dataset, protected: Sequence[str]) -> float:
    return FairnessEvaluator(data, FairnessMetric(MetricKind.CDS, tuple(protected)))(model)


def accuracy(model: MLP, data: Dataset) -> float:
    if len(data) == 0:
        raise ValueError("empty data")
    return float((predict(model, encode(data).features) == data.labels).mean())


def fairness_score(model: MLP, data: Dataset, metric: FairnessMetric) -> float:
    return FairnessEvaluator(data, metric)(model)
