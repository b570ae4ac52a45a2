"""Tabular datasets, schemas, protected groups and ordinal encoding."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd
import yaml

logger = logging.getLogger(__name__)

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"
MISSING_TOKENS = ("?", "", "NA", "nan")

_OPS = {
    "==": lambda v, t: v == t,
    "!=": lambda v, t: v != t,
    ">": lambda v, t: v > t,
    ">=": lambda v, t: v >= t,
    "<": lambda v, t: v < t,
    "<=": lambda v, t: v <= t,
}


class SchemaError(ValueError):
    """Schema is malformed or does not match the data it describes."""


class ValidationError(ValueError):
    """One or more rows hold values outside their declared domain."""

    def __init__(self, message: str, rows: Sequence[int] = ()):
        super().__init__(message)
        self.rows = list(rows)


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str
    # categories for categorical attributes, (low, high) for continuous ones;
    # None means "infer from data at load time"
    domain: tuple | None = None

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, CONTINUOUS):
            raise SchemaError(f"attribute {self.name!r}: unknown kind {self.kind!r}")
        if self.domain is None:
            return
        if self.kind == CATEGORICAL:
            object.__setattr__(self, "domain", tuple(str(v) for v in self.domain))
            if not self.domain:
                raise SchemaError(f"attribute {self.name!r}: empty categorical domain")
            if len(set(self.domain)) != len(self.domain):
                raise SchemaError(f"attribute {self.name!r}: duplicate categories")
        else:
            if len(self.domain) != 2:
                raise SchemaError(f"attribute {self.name!r}: continuous domain needs (low, high)")
            lo, hi = float(self.domain[0]), float(self.domain[1])
            if lo > hi:
                raise SchemaError(f"attribute {self.name!r}: low > high")
            object.__setattr__(self, "domain", (lo, hi))


@dataclass(frozen=True)
class Predicate:
    """Binarizing membership test for the privileged group of one attribute.

    ``op`` is a comparison operator or ``"in"`` (value is then a list).
    ``representatives`` optionally pins the (privileged, unprivileged) raw
    values used when protected attributes are swapped for individual
    discrimination checks.
    """

    attribute: str
    op: str
    value: Any
    representatives: tuple | None = None

    def __post_init__(self):
        if self.op != "in" and self.op not in _OPS:
            raise SchemaError(f"predicate on {self.attribute!r}: unknown operator {self.op!r}")

    def apply(self, values, kind: str) -> np.ndarray:
        values = np.asarray(values)
        if kind == CATEGORICAL:
            values = values.astype(str)
            if self.op == "in":
                return np.isin(values, [str(v) for v in self.value])
            return np.asarray(_OPS[self.op](values, str(self.value)), dtype=bool)
        values = values.astype(float)
        if self.op == "in":
            return np.isin(values, [float(v) for v in self.value])
        return np.asarray(_OPS[self.op](values, float(self.value)), dtype=bool)

    def describe(self) -> str:
        return f"{self.attribute} {self.op} {self.value}"

    def to_dict(self) -> dict:
        out = {"op": self.op, "value": list(self.value) if self.op == "in" else self.value}
        if self.representatives is not None:
            out["representatives"] = list(self.representatives)
        return out


@dataclass(frozen=True)
class Schema:
    attributes: tuple[Attribute, ...]
    protected: tuple[str, ...]
    privileged: Mapping[str, Predicate]
    favorable_label: int
    label_name: str
    # raw label values indexed by class; None means labels are already 0/1
    label_values: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "protected", tuple(self.protected))
        names = self.names
        if len(set(names)) != len(names):
            raise SchemaError("duplicate attribute names")
        if self.label_name in names:
            raise SchemaError(f"label {self.label_name!r} collides with an attribute name")
        missing = [p for p in self.protected if p not in names]
        if missing:
            raise SchemaError(f"protected attributes not in schema: {missing}")
        for p in self.protected:
            if p not in self.privileged:
                raise SchemaError(f"protected attribute {p!r} has no privileged predicate")
        for name, pred in self.privileged.items():
            if name not in names:
                raise SchemaError(f"privileged predicate for unknown attribute {name!r}")
            if pred.attribute != name:
                raise SchemaError(f"predicate keyed {name!r} targets {pred.attribute!r}")
        if self.favorable_label not in (0, 1):
            raise SchemaError("favorable_label must be 0 or 1")
        if self.label_values is not None:
            object.__setattr__(self, "label_values", tuple(str(v) for v in self.label_values))
            if len(self.label_values) != 2:
                raise SchemaError("label_values must list exactly two classes")
        for name in self.protected:
            if self.attribute(name).domain is not None:
                self.representatives(name)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def attribute(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise SchemaError(f"unknown attribute {name!r}")

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def is_complete(self) -> bool:
        return all(a.domain is not None for a in self.attributes)

    def privileged_mask(self, name: str, values) -> np.ndarray:
        return self.privileged[name].apply(values, self.attribute(name).kind)

    def representatives(self, name: str) -> tuple:
        """Raw (privileged, unprivileged) stand-in values for a protected attribute."""
        pred = self.privileged[name]
        attr = self.attribute(name)
        if attr.domain is None:
            raise SchemaError(f"attribute {name!r} has no domain yet")
        if pred.representatives is not None:
            reps = tuple(pred.representatives)
            if attr.kind == CATEGORICAL:
                reps = tuple(str(r) for r in reps)
            flags = pred.apply(np.array(reps), attr.kind)
            if not (flags[0] and not flags[1]):
                raise SchemaError(f"representatives for {name!r} do not straddle the predicate")
            return reps
        if attr.kind == CATEGORICAL:
            flags = pred.apply(np.array(attr.domain), attr.kind)
            if flags.all() or not flags.any():
                raise SchemaError(f"predicate {pred.describe()!r} does not split the domain of {name!r}")
            priv = attr.domain[int(np.argmax(flags))]
            unpriv = attr.domain[int(np.argmin(flags))]
            return priv, unpriv
        lo, hi = attr.domain
        if pred.op not in (">", ">=", "<", "<="):
            raise SchemaError(f"continuous attribute {name!r} needs explicit representatives")
        t = float(pred.value)
        if not lo < t < hi:
            raise SchemaError(f"threshold {t} does not split the domain of {name!r}")
        above, below = (t + hi) / 2.0, (lo + t) / 2.0
        return (above, below) if pred.op in (">", ">=") else (below, above)

    def fingerprint(self) -> str:
        blob = json.dumps(schema_to_dict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def completed(self, rows: pd.DataFrame) -> "Schema":
        """Fill in any missing domains from observed data."""
        attrs = []
        for a in self.attributes:
            if a.domain is None:
                col = rows[a.name]
                if a.kind == CATEGORICAL:
                    dom = tuple(sorted(col.astype(str).unique()))
                else:
                    dom = (float(col.min()), float(col.max()))
                a = replace(a, domain=dom)
            attrs.append(a)
        return replace(self, attributes=tuple(attrs))


def schema_to_dict(schema: Schema) -> dict:
    return {
        "attributes": [
            {"name": a.name, "kind": a.kind, **({"domain": list(a.domain)} if a.domain is not None else {})}
            for a in schema.attributes
        ],
        "protected": list(schema.protected),
        "privileged": {k: v.to_dict() for k, v in schema.privileged.items()},
        "favorable_label": schema.favorable_label,
        "label": {
            "name": schema.label_name,
            **({"values": list(schema.label_values)} if schema.label_values else {}),
        },
    }


def schema_from_dict(cfg: Mapping) -> Schema:
    try:
        attrs = []
        for entry in cfg["attributes"]:
            dom = entry.get("domain")
            attrs.append(Attribute(entry["name"], entry["kind"], tuple(dom) if dom is not None else None))
        privileged = {}
        for name, p in cfg["privileged"].items():
            reps = p.get("representatives")
            value = tuple(p["value"]) if p["op"] == "in" else p["value"]
            privileged[name] = Predicate(name, p["op"], value, tuple(reps) if reps is not None else None)
        label = cfg["label"]
        if isinstance(label, str):
            label = {"name": label}
        values = label.get("values")
        return Schema(
            attributes=tuple(attrs),
            protected=tuple(cfg["protected"]),
            privileged=privileged,
            favorable_label=int(cfg["favorable_label"]),
            label_name=label["name"],
            label_values=tuple(values) if values is not None else None,
        )
    except KeyError as exc:
        raise SchemaError(f"schema config missing field {exc}") from None


def load_schema(path) -> Schema:
    """Read a YAML (or JSON) schema config."""
    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, Mapping):
        raise SchemaError(f"{path}: schema config must be a mapping")
    return schema_from_dict(cfg)


def save_schema(schema: Schema, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(schema_to_dict(schema), fh, sort_keys=False)


def preset_path(name: str) -> Path:
    path = Path(__file__).parent / "presets" / f"{name}.yaml"
    if not path.exists():
        raise SchemaError(f"no preset named {name!r}")
    return path


def load_preset(name: str) -> Schema:
    """Schema preset for one of the bundled benchmarks: adult, german, bank, compas."""
    return load_schema(preset_path(name))


@dataclass(frozen=True)
class ProtectedValuation:
    """One protected-group cell: attribute -> True (privileged) / False."""

    assignments: Mapping[str, bool]

    def label(self) -> str:
        return ",".join(f"{k}={'priv' if v else 'unpriv'}" for k, v in self.assignments.items())


@dataclass(frozen=True, eq=False)
class Dataset:
    schema: Schema
    rows: pd.DataFrame
    labels: np.ndarray
    weights: np.ndarray
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.schema,
            self.rows.iloc[index].reset_index(drop=True),
            self.labels[index],
            self.weights[index],
        )

    def with_weights(self, weights) -> "Dataset":
        return make_dataset(self.schema, self.rows, self.labels, weights)

    def with_rows(self, rows: pd.DataFrame) -> "Dataset":
        return make_dataset(self.schema, rows, self.labels, self.weights)

    def privileged_mask(self, name: str) -> np.ndarray:
        return self.schema.privileged_mask(name, self.rows[name].to_numpy())


def _validate(schema: Schema, rows: pd.DataFrame) -> None:
    bad = np.zeros(len(rows), dtype=bool)
    reasons = []
    for a in schema.attributes:
        col = rows[a.name]
        if a.kind == CATEGORICAL:
            off = ~col.astype(str).isin(a.domain).to_numpy()
        else:
            vals = pd.to_numeric(col, errors="coerce").to_numpy(dtype=float)
            lo, hi = a.domain
            off = ~((vals >= lo) & (vals <= hi))
        if off.any():
            reasons.append(f"{a.name}: {int(off.sum())} value(s)")
            bad |= off
    if bad.any():
        idx = np.flatnonzero(bad).tolist()
        shown = idx[:10]
        raise ValidationError(
            f"out-of-domain values in rows {shown}{'...' if len(idx) > 10 else ''} ({'; '.join(reasons)})",
            idx,
        )


def make_dataset(schema: Schema, rows: pd.DataFrame, labels, weights=None) -> Dataset:
    """Validate and freeze a dataset; fills missing schema domains from ``rows``."""
    missing = [n for n in schema.names if n not in rows.columns]
    if missing:
        raise SchemaError(f"rows missing attribute columns {missing}")
    rows = rows[schema.names].reset_index(drop=True).copy()
    if not schema.is_complete:
        schema = schema.completed(rows)
    for a in schema.attributes:
        if a.kind == CATEGORICAL:
            rows[a.name] = rows[a.name].astype(str)
        else:
            rows[a.name] = pd.to_numeric(rows[a.name], errors="coerce").astype(float)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != len(rows):
        raise ValidationError(f"{len(rows)} rows but {len(labels)} labels")
    if len(labels) and not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be class indices 0/1")
    if weights is None:
        weights = np.ones(len(rows))
    weights = np.asarray(weights, dtype=float)
    if weights.shape != labels.shape:
        raise ValidationError(f"{len(labels)} labels but {len(weights)} weights")
    if len(weights) and not (np.all(np.isfinite(weights)) and np.all(weights > 0)):
        raise ValidationError("weights must be positive and finite")
    _validate(schema, rows)
    return Dataset(schema, rows, labels, weights)


def load_csv(path, schema: Schema) -> Dataset:
    """Load a headered CSV; rows with missing values are dropped and counted."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    cat_cols = {a.name: str for a in schema.attributes if a.kind == CATEGORICAL}
    cat_cols[schema.label_name] = str
    frame = pd.read_csv(path, sep=None, engine="python", dtype=cat_cols, skipinitialspace=True,
                        keep_default_na=False)
    frame.columns = [c.strip().strip('"') for c in frame.columns]
    needed = schema.names + [schema.label_name]
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path.name}: missing columns {missing}")
    frame = frame[needed]
    for col in frame.columns:
        if frame[col].dtype == object:
            frame[col] = frame[col].str.strip()
    is_missing = frame.isin(MISSING_TOKENS).any(axis=1).to_numpy()
    dropped = int(is_missing.sum())
    if dropped:
        logger.info("%s: dropped %d row(s) with missing values", path.name, dropped)
        frame = frame[~is_missing].reset_index(drop=True)

    raw_labels = frame[schema.label_name].str.rstrip(".")
    if schema.label_values is not None:
        lookup = {v: i for i, v in enumerate(schema.label_values)}
        unknown = ~raw_labels.isin(list(lookup))
        if unknown.any():
            bad = np.flatnonzero(unknown.to_numpy()).tolist()
            raise ValidationError(f"unknown label values in rows {bad[:10]}", bad)
        labels = raw_labels.map(lookup).to_numpy()
    else:
        numeric = pd.to_numeric(raw_labels, errors="coerce")
        if numeric.isna().any() or not numeric.isin([0, 1]).all():
            bad = np.flatnonzero((numeric.isna() | ~numeric.isin([0, 1])).to_numpy()).tolist()
            raise ValidationError(f"labels must be 0/1 (rows {bad[:10]})", bad)
        labels = numeric.to_numpy()

    rows = frame[schema.names].copy()
    for a in schema.attributes:
        if a.kind == CONTINUOUS:
            vals = pd.to_numeric(rows[a.name], errors="coerce")
            if vals.isna().any():
                bad = np.flatnonzero(vals.isna().to_numpy()).tolist()
                raise ValidationError(f"non-numeric values for {a.name!r} in rows {bad[:10]}", bad)
            rows[a.name] = vals.astype(float)
    data = make_dataset(schema, rows, labels)
    return replace(data, dropped=dropped)


def save_csv(data: Dataset, path) -> None:
    frame = data.rows.copy()
    if data.schema.label_values is not None:
        frame[data.schema.label_name] = [data.schema.label_values[i] for i in data.labels]
    else:
        frame[data.schema.label_name] = data.labels
    frame.to_csv(path, index=False)


def split(data: Dataset, train_fraction: float = 0.7, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Shuffle and cut into (train, test)."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(data)
    n_train = int(math.floor(n * train_fraction + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    return data.subset(np.sort(perm[:n_train])), data.subset(np.sort(perm[n_train:]))


@dataclass(frozen=True)
class Encoder:
    """Ordinal + min-max encoding, one column per attribute, derived from a schema."""

    names: tuple[str, ...]
    kinds: tuple[str, ...]
    categories: Mapping[str, tuple]
    norm_params: tuple[tuple[float, float], ...]

    @classmethod
    def from_schema(cls, schema: Schema) -> "Encoder":
        if not schema.is_complete:
            raise SchemaError("cannot encode with incomplete attribute domains")
        params, cats = [], {}
        for a in schema.attributes:
            if a.kind == CATEGORICAL:
                cats[a.name] = a.domain
                params.append((0.0, float(len(a.domain) - 1)))
            else:
                params.append(a.domain)
        return cls(tuple(schema.names), tuple(a.kind for a in schema.attributes), cats, tuple(params))

    @property
    def width(self) -> int:
        return len(self.names)

    @property
    def constant(self) -> tuple[bool, ...]:
        return tuple(lo == hi for lo, hi in self.norm_params)

    def _scale(self, j: int, raw: np.ndarray) -> np.ndarray:
        lo, hi = self.norm_params[j]
        if hi == lo:
            return np.zeros_like(raw, dtype=float)
        return (raw - lo) / (hi - lo)

    def _codes(self, j: int, values) -> np.ndarray:
        cats = self.categories[self.names[j]]
        lookup = {c: i for i, c in enumerate(cats)}
        try:
            return np.array([lookup[str(v)] for v in values], dtype=float)
        except KeyError as exc:
            raise ValidationError(f"{self.names[j]}: value {exc} outside domain") from None

    def transform(self, rows: pd.DataFrame) -> np.ndarray:
        out = np.empty((len(rows), self.width))
        for j, name in enumerate(self.names):
            col = rows[name].to_numpy()
            raw = self._codes(j, col) if self.kinds[j] == CATEGORICAL else col.astype(float)
            out[:, j] = self._scale(j, raw)
        return out

    def encode_value(self, name: str, raw) -> float:
        j = self.names.index(name)
        x = self._codes(j, [raw]) if self.kinds[j] == CATEGORICAL else np.array([float(raw)])
        return float(self._scale(j, x)[0])

    def decode_column(self, j: int, encoded) -> np.ndarray:
        lo, hi = self.norm_params[j]
        raw = np.asarray(encoded, dtype=float) * (hi - lo) + lo
        if self.kinds[j] == CATEGORICAL:
            cats = self.categories[self.names[j]]
            return np.array([cats[int(round(v))] for v in raw], dtype=object)
        return raw

    def inverse_transform(self, features: np.ndarray) -> pd.DataFrame:
        return pd.DataFrame({n: self.decode_column(j, features[:, j]) for j, n in enumerate(self.names)})

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "kinds": list(self.kinds),
            "categories": {k: list(v) for k, v in self.categories.items()},
            "norm_params": [list(p) for p in self.norm_params],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Encoder":
        return cls(
            tuple(d["names"]),
            tuple(d["kinds"]),
            {k: tuple(v) for k, v in d["categories"].items()},
            tuple((float(lo), float(hi)) for lo, hi in d["norm_params"]),
        )


@dataclass(frozen=True, eq=False)
class EncodedMatrix:
    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    encoder: Encoder = field(repr=False)

    @property
    def column_map(self) -> dict[int, str]:
        return dict(enumerate(self.encoder.names))

    @property
    def norm_params(self) -> tuple[tuple[float, float], ...]:
        return self.encoder.norm_params

    @property
    def constant_columns(self) -> tuple[bool, ...]:
        return self.encoder.constant


def encode(data: Dataset) -> EncodedMatrix:
    encoder = Encoder.from_schema(data.schema)
    features = encoder.transform(data.rows)
    features.setflags(write=False)
    return EncodedMatrix(features, data.labels, data.weights, encoder)


def valuations(schema: Schema) -> list[ProtectedValuation]:
    """All privileged/unprivileged combinations over the protected attributes."""
    if not schema.protected:
        raise SchemaError("no protected attributes declared")
    combos = itertools.product((True, False), repeat=len(schema.protected))
    return [ProtectedValuation(dict(zip(schema.protected, c))) for c in combos]


def group_mask(data: Dataset, theta: ProtectedValuation) -> np.ndarray:
    mask = np.ones(len(data), dtype=bool)
    for name, privileged in theta.assignments.items():
        mask &= data.privileged_mask(name) == privileged
    return mask


def synth_schema() -> Schema:
    attrs = (
        Attribute("group", CATEGORICAL, ("A", "B")),
        Attribute("x1", CONTINUOUS, (0.0, 1.0)),
        Attribute("x2", CONTINUOUS, (0.0, 1.0)),
        Attribute("x3", CONTINUOUS, (0.0, 1.0)),
        Attribute("x4", CONTINUOUS, (0.0, 1.0)),
        Attribute("segment", CATEGORICAL, ("s0", "s1", "s2")),
    )
    return Schema(
        attributes=attrs,
        protected=("group",),
        privileged={"group": Predicate("group", "==", "A")},
        favorable_label=1,
        label_name="label",
    )


def synth_generate(n: int, bias: float, seed: int = 0) -> Dataset:
    """Synthetic tabular data with a planted favorable-rate gap of ``bias``.

    Each label is drawn from the group indicator with probability ``bias``
    and from a logistic model of the non-protected features otherwise, so
    P(y=1 | privileged) - P(y=1 | unprivileged) = bias in expectation.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0.0 <= bias <= 1.0:
        raise ValueError("bias must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    privileged = rng.random(n) < 0.5
    x = rng.random((n, 4))
    segment = rng.integers(0, 3, n)
    score = 3.0 * (x[:, 0] - 0.5) + 2.0 * (x[:, 1] - 0.5) - 1.5 * (x[:, 2] - 0.5) + 0.5 * (segment - 1)
    base = 1.0 / (1.0 + np.exp(-score))
    p = (1.0 - bias) * base + bias * privileged
    labels = (rng.random(n) < p).astype(np.int64)
    rows = pd.DataFrame(
        {
            "group": np.where(privileged, "A", "B"),
            "x1": x[:, 0],
            "x2": x[:, 1],
            "x3": x[:, 2],
            "x4": x[:, 3],
            "segment": np.array(["s0", "s1", "s2"])[segment],
        }
    )
    return make_dataset(synth_schema(), rows, labels)
