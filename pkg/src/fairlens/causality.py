"""Interventional fairness analysis over input attributes and hidden neurons.

Every attribute and hidden neuron is clamped to a grid of values; the
fairness score under each clamp is averaged into the variable's AIE. A
variable whose AIE exceeds the un-intervened score is *responsible*, and
the share and spread of responsible variables summarise where the
unfairness of the model lives.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
import pandas as pd

from .dataset import CATEGORICAL, Dataset
from .metrics import FairnessEvaluator, FairnessMetric
from .model import (
    MLP,
    ActivationCache,
    AttributeTarget,
    Intervention,
    NeuronTarget,
    predict_from_probs,
)

logger = logging.getLogger(__name__)

DEFAULT_NUM_INTERVAL = 20
THREADS_ENV = "FAIRLENS_THREADS"

Target = Union[AttributeTarget, NeuronTarget]


@dataclass
class AieRecord:
    target: Target
    metric: FairnessMetric
    baseline: float
    values_used: list
    expectations: list[float]
    aie: float

    @property
    def kind(self) -> str:
        return "attribute" if isinstance(self.target, AttributeTarget) else "neuron"

    @property
    def responsible(self) -> bool:
        return self.aie > self.baseline

    @property
    def ace(self) -> float:
        return ace(self)


@dataclass
class ResponsibilityStats:
    p_f: float
    p_n: float
    cv_f: float | None
    cv_n: float | None
    responsible_attributes: list[str] = field(default_factory=list)
    responsible_neurons: list[tuple[int, int]] = field(default_factory=list)
    baseline: float = 0.0

    def to_dict(self) -> dict:
        return {
            "p_f": self.p_f,
            "p_n": self.p_n,
            "cv_f": self.cv_f,
            "cv_n": self.cv_n,
            "responsible_attributes": list(self.responsible_attributes),
            "responsible_neurons": [list(n) for n in self.responsible_neurons],
            "baseline": self.baseline,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResponsibilityStats":
        return cls(
            p_f=float(d["p_f"]),
            p_n=float(d["p_n"]),
            cv_f=None if d.get("cv_f") is None else float(d["cv_f"]),
            cv_n=None if d.get("cv_n") is None else float(d["cv_n"]),
            responsible_attributes=list(d.get("responsible_attributes", [])),
            responsible_neurons=[tuple(n) for n in d.get("responsible_neurons", [])],
            baseline=float(d.get("baseline", 0.0)),
        )


def generate_vals(lo: float, hi: float, num_interval: int) -> list[float]:
    """``num_interval`` evenly spaced values from ``lo`` to ``hi`` inclusive."""
    if lo > hi:
        raise ValueError("min must not exceed max")
    if num_interval < 1:
        raise ValueError("num_interval must be at least 1")
    return [float(v) for v in np.linspace(lo, hi, num_interval)]


def _record(target, metric, baseline, values, expectations) -> AieRecord:
    return AieRecord(target, metric, baseline, list(values), list(expectations), float(np.mean(expectations)))


def _neuron_record(evaluator: FairnessEvaluator, caches: list[ActivationCache], target: NeuronTarget,
                   num_interval: int, baseline: float) -> AieRecord:
    lo, hi = caches[0].neuron_range(target)
    vals = generate_vals(lo, hi, num_interval)
    expectations = [
        evaluator.score_predictions([predict_from_probs(c.probs_with(target, a)) for c in caches])
        for a in vals
    ]
    return _record(target, evaluator.metric, baseline, vals, expectations)


def attribute_values(data: Dataset, name: str, num_interval: int) -> list:
    attr = data.schema.attribute(name)
    col = data.rows[name]
    if attr.kind == CATEGORICAL:
        seen = set(col.astype(str))
        return [v for v in attr.domain if v in seen]
    return generate_vals(float(col.min()), float(col.max()), num_interval)


def _attribute_record(model: MLP, evaluator: FairnessEvaluator, name: str, num_interval: int,
                      baseline: float) -> AieRecord:
    target = AttributeTarget(name)
    vals = attribute_values(evaluator.data, name, num_interval)
    expectations = [evaluator(model, Intervention(target, a)) for a in vals]
    return _record(target, evaluator.metric, baseline, vals, expectations)


def causality_neuron(model: MLP, data: Dataset, neuron: NeuronTarget, metric: FairnessMetric,
                     num_interval: int = DEFAULT_NUM_INTERVAL) -> AieRecord:
    ev = FairnessEvaluator(data, metric)
    caches = [ActivationCache(model, v) for v in ev.views]
    return _neuron_record(ev, caches, neuron, num_interval, ev(model))


def causality_attribute(model: MLP, data: Dataset, name: str, metric: FairnessMetric,
                        num_interval: int = DEFAULT_NUM_INTERVAL) -> AieRecord:
    ev = FairnessEvaluator(data, metric)
    return _attribute_record(model, ev, name, num_interval, ev(model))


def ace(record: AieRecord) -> float:
    """Causal effect relative to the un-intervened fairness score."""
    return record.aie - record.baseline


def coefficient_of_variation(values: Sequence[float]) -> float | None:
    """Population std / mean; None for an empty sample."""
    if len(values) == 0:
        return None
    arr = np.asarray(values, dtype=float)
    return float(arr.std() / arr.mean())


def responsibility_stats(records: Sequence[AieRecord], baseline: float) -> ResponsibilityStats:
    attrs = [r for r in records if r.kind == "attribute"]
    neurons = [r for r in records if r.kind == "neuron"]
    hot_a = [r for r in attrs if r.aie > baseline]
    hot_n = [r for r in neurons if r.aie > baseline]
    return ResponsibilityStats(
        p_f=len(hot_a) / len(attrs) if attrs else 0.0,
        p_n=len(hot_n) / len(neurons) if neurons else 0.0,
        cv_f=coefficient_of_variation([r.aie for r in hot_a]),
        cv_n=coefficient_of_variation([r.aie for r in hot_n]),
        responsible_attributes=[r.target.name for r in hot_a],
        responsible_neurons=[(r.target.layer, r.target.index) for r in hot_n],
        baseline=baseline,
    )


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def analyze_all(model: MLP, data: Dataset, metric: FairnessMetric,
                num_interval: int = DEFAULT_NUM_INTERVAL,
                threads: int | None = None) -> tuple[list[AieRecord], ResponsibilityStats]:
    """AIE for every input attribute and hidden neuron, plus the aggregate statistics."""
    ev = FairnessEvaluator(data, metric)
    baseline = ev(model)
    caches = [ActivationCache(model, v) for v in ev.views]

    jobs = [lambda name=name: _attribute_record(model, ev, name, num_interval, baseline)
            for name in data.schema.names]
    jobs += [lambda n=n: _neuron_record(ev, caches, n, num_interval, baseline) for n in model.neurons()]

    threads = threads or thread_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda job: job(), jobs))
    else:
        records = [job() for job in jobs]
    stats = responsibility_stats(records, baseline)
    logger.info("baseline %.4f: P_f=%.3f P_n=%.3f", baseline, stats.p_f, stats.p_n)
    return records, stats


TABLE_COLUMNS = ["kind", "layer", "index", "name", "baseline", "aie", "ace", "responsible"]


def records_table(records: Sequence[AieRecord]) -> pd.DataFrame:
    rows = []
    for r in records:
        if r.kind == "attribute":
            layer, index, name = -1, -1, r.target.name
        else:
            layer, index, name = r.target.layer, r.target.index, f"L{r.target.layer}N{r.target.index}"
        rows.append([r.kind, layer, index, name, r.baseline, r.aie, r.ace, r.responsible])
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)
