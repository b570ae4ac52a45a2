"""Choose a repair category from responsibility statistics, then a method within it."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Sequence

from .causality import DEFAULT_NUM_INTERVAL, ResponsibilityStats, analyze_all
from .dataset import Dataset
from .metrics import FairnessMetric, MetricKind
from .model import MLP

DEFAULT_P_THRES = 0.10


class Category(str, Enum):
    PRE = "pre"
    IN = "in"
    POST = "post"


# method identifiers, grouped by category; the first entry is the default
METHODS: dict[Category, tuple[str, ...]] = {
    Category.PRE: ("reweighing", "disparate_impact_remover"),
    Category.IN: ("fairness_regularizer",),
    Category.POST: ("reject_option",),
}


class SelectionError(ValueError):
    pass


@dataclass
class Recommendation:
    category: Category
    method: str
    stats: ResponsibilityStats
    p_thres: float
    rationale: str
    metric: FairnessMetric | None = None

    def to_dict(self) -> dict:
        return {
            "category": self.category.value,
            "method": self.method,
            "stats": self.stats.to_dict(),
            "p_thres": self.p_thres,
            "rationale": self.rationale,
            "metric": None if self.metric is None else {
                "kind": self.metric.kind.value, "protected": list(self.metric.protected)},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Recommendation":
        metric = d.get("metric")
        return cls(
            category=Category(d["category"]),
            method=d["method"],
            stats=ResponsibilityStats.from_dict(d["stats"]),
            p_thres=float(d["p_thres"]),
            rationale=d.get("rationale", ""),
            metric=None if metric is None else FairnessMetric(metric["kind"], tuple(metric["protected"])),
        )


def _explain(stats: ResponsibilityStats, p_thres: float) -> tuple[Category, str]:
    if stats.p_f <= p_thres and stats.p_n <= p_thres:
        return Category.POST, (
            f"P_f={stats.p_f:.3f} and P_n={stats.p_n:.3f} are both <= {p_thres}: "
            "few variables carry the unfairness, repair the outputs"
        )
    if stats.cv_f is None and stats.cv_n is None:
        raise SelectionError("a responsibility share exceeds the threshold but both CVs are undefined")
    if stats.cv_f is not None and (stats.cv_n is None or stats.cv_f > stats.cv_n):
        return Category.PRE, (
            f"CV_f={stats.cv_f:.4g} > CV_n={_fmt(stats.cv_n)}: responsibility is concentrated "
            "in a few input attributes, repair the training data"
        )
    if stats.cv_f is None:
        return Category.IN, (
            f"no attribute is responsible (CV_f undefined) while CV_n={stats.cv_n:.4g}: "
            "responsibility sits among hidden neurons, repair the model"
        )
    return Category.IN, (
        f"CV_f={stats.cv_f:.4g} <= CV_n={stats.cv_n:.4g}: responsibility is concentrated "
        "among hidden neurons, repair the model"
    )


def _fmt(v: float | None) -> str:
    return "undefined" if v is None else f"{v:.4g}"


def select_category(stats: ResponsibilityStats, p_thres: float = DEFAULT_P_THRES) -> Category:
    """Post if few variables are responsible, else pre vs in by which side is more uneven.

    An undefined CV_f never wins the comparison; an undefined CV_n loses to
    any defined CV_f.
    """
    return _explain(stats, p_thres)[0]


Evaluator = Callable[[str], tuple[float, float]]


def select_method(category: Category, metric: FairnessMetric | None = None,
                  enabled: Sequence[str] | None = None, evaluate: Evaluator | None = None,
                  fairness_weight: float = 1.0, accuracy_weight: float = 1.0) -> str:
    """Pick a method of ``category``.

    ``enabled`` defaults to the category's default method only. With more
    than one candidate, ``evaluate(method)`` must return (fairness
    improvement, accuracy loss) on a validation split; the highest
    weighted difference wins, ties going to the earlier candidate.
    """
    category = Category(category)
    known = METHODS[category]
    candidates = [m for m in (enabled if enabled is not None else known[:1]) if m in known]
    if not candidates:
        raise SelectionError(f"no method enabled for {category.value}-processing")
    if len(candidates) == 1:
        return candidates[0]
    if evaluate is None:
        raise SelectionError("several candidates enabled but no validation evaluator given")
    best, best_score = None, None
    for method in candidates:
        improvement, loss = evaluate(method)
        score = fairness_weight * improvement - accuracy_weight * loss
        if best_score is None or score > best_score:
            best, best_score = method, score
    return best


def recommend_from_stats(stats: ResponsibilityStats, p_thres: float = DEFAULT_P_THRES,
                         metric: FairnessMetric | None = None, **method_kwargs) -> Recommendation:
    category, rationale = _explain(stats, p_thres)
    method = select_method(category, metric, **method_kwargs)
    return Recommendation(category, method, stats, p_thres, rationale, metric)


def recommend(model: MLP, data: Dataset, metric: FairnessMetric, p_thres: float = DEFAULT_P_THRES,
              num_interval: int = DEFAULT_NUM_INTERVAL, **method_kwargs) -> Recommendation:
    _, stats = analyze_all(model, data, metric, num_interval)
    return recommend_from_stats(stats, p_thres, metric, **method_kwargs)


def default_metric_kind(protected: Sequence[str], individual: bool = False) -> MetricKind:
    if individual:
        return MetricKind.CDS
    return MetricKind.SPD if len(protected) == 1 else MetricKind.GDS
