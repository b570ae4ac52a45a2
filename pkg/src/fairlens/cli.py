"""fairlens command line: train, analyze, recommend, repair, evaluate, report.

Every command reads and writes plain files under ``--out`` so the phases can
run as separate processes::

    fairlens synth --n 10000 --bias 0.3 --out run/
    fairlens train --dataset run/data.csv --schema run/schema.yaml --protected group --out run/
    fairlens analyze   ... --out run/
    fairlens recommend ... --out run/
    fairlens repair    ... --out run/
    fairlens report --out run/

Exit codes: 0 success, 1 validation error, 2 pipeline error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd

from . import model as mlp
from .causality import DEFAULT_NUM_INTERVAL, ResponsibilityStats, analyze_all, records_table
from .dataset import Dataset, SchemaError, ValidationError, load_csv, load_preset, load_schema, save_csv, save_schema, split, synth_generate
from .metrics import FairnessEvaluator, FairnessMetric
from .repair import CriticalRegion, repair_in, repair_post, repair_pre, train_baseline
from .selector import DEFAULT_P_THRES, METHODS, Category, Recommendation, SelectionError, recommend_from_stats

logger = logging.getLogger("fairlens")

FORMAT_VERSION = 1
MODEL_FILE = "model.json"
TRAIN_FILE = "train.json"
EVALUATE_FILE = "evaluate.json"
TABLE_FILE = "aie_table.csv"
ANALYSIS_FILE = "analysis.json"
RECOMMEND_FILE = "recommendation.json"
OUTCOME_FILE = "outcome.json"
REPAIRED_MODEL_FILE = "repaired_model.json"
OVERLAY_FILE = "overlay.json"
REPORT_FILE = "audit_report.json"
ERROR_FILE = "error.json"

_NUM = {"type": "number"}
_OPT_NUM = {"type": ["number", "null"]}
_SCORES = {
    "type": "object",
    "required": ["metric", "protected", "value", "accuracy"],
    "properties": {"value": {"type": "number", "minimum": 0, "maximum": 1},
                   "accuracy": {"type": "number", "minimum": 0, "maximum": 1}},
}
REPORT_SCHEMA = {
    "type": "object",
    "required": ["format_version", "config", "baseline", "aie_table", "stats", "recommendation",
                 "outcomes", "timings"],
    "properties": {
        "format_version": {"const": FORMAT_VERSION},
        "config": {"type": "object"},
        "baseline": _SCORES,
        "aie_table": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "layer", "index", "name", "baseline", "aie", "ace", "responsible"],
                "properties": {"kind": {"enum": ["attribute", "neuron"]}, "aie": _NUM, "ace": _NUM,
                               "responsible": {"type": "boolean"}},
            },
        },
        "stats": {
            "type": "object",
            "required": ["p_f", "p_n", "cv_f", "cv_n", "baseline"],
            "properties": {"p_f": {"type": "number", "minimum": 0, "maximum": 1},
                           "p_n": {"type": "number", "minimum": 0, "maximum": 1},
                           "cv_f": _OPT_NUM, "cv_n": _OPT_NUM},
        },
        "recommendation": {
            "type": "object",
            "required": ["category", "method", "p_thres", "rationale"],
            "properties": {"category": {"enum": ["pre", "in", "post"]}},
        },
        "outcomes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["method", "fairness_before", "fairness_after", "accuracy_before",
                             "accuracy_after", "improvement", "accuracy_delta"],
            },
        },
        "timings": {
            "type": "object",
            "additionalProperties": {"type": "number", "exclusiveMinimum": 0},
        },
    },
}


class PipelineError(RuntimeError):
    pass


@dataclass
class RunConfig:
    dataset: str | None = None
    schema: str | None = None
    protected: list[str] = field(default_factory=list)
    metric: str | None = None
    p_thres: float = DEFAULT_P_THRES
    num_interval: int = DEFAULT_NUM_INTERVAL
    seed: int = 0
    train_fraction: float = 0.7
    epochs: int = 50
    learning_rate: float = 0.001
    batch_size: int = 32
    lam: float = 1.0
    theta_band: float = 0.7
    methods: list[str] = field(default_factory=list)
    out: str = "fairlens-out"

    def validate(self) -> None:
        for label, path in (("dataset", self.dataset), ("schema", self.schema)):
            if path is None:
                raise ValidationError(f"--{label} is required")
        if not Path(self.dataset).exists():
            raise ValidationError(f"dataset {self.dataset} does not exist")
        if not Path(self.schema).exists() and not _is_preset(self.schema):
            raise ValidationError(f"schema {self.schema} does not exist")

    def train_config(self) -> mlp.TrainConfig:
        return mlp.TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                               batch_size=self.batch_size, seed=self.seed)


def _is_preset(name: str) -> bool:
    try:
        load_preset(name)
        return True
    except SchemaError:
        return False


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise PipelineError(f"missing artifact {path}")
    return json.loads(path.read_text())


class Workspace:
    """Loaded dataset, schema, split and metric for one config."""

    def __init__(self, config: RunConfig):
        config.validate()
        schema = load_schema(config.schema) if Path(config.schema).exists() else load_preset(config.schema)
        self.data: Dataset = load_csv(config.dataset, schema)
        self.schema = self.data.schema
        protected = tuple(config.protected) or self.schema.protected
        unknown = [p for p in protected if p not in self.schema.protected]
        if unknown:
            raise ValidationError(f"{unknown} are not protected attributes of the schema")
        kind = config.metric or ("spd" if len(protected) == 1 else "gds")
        try:
            self.metric = FairnessMetric(kind, protected)
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        self.train, self.test = split(self.data, config.train_fraction, config.seed)
        self.config = config
        self.out = Path(config.out)
        self.out.mkdir(parents=True, exist_ok=True)

    def load_model(self, name: str = MODEL_FILE) -> mlp.MLP:
        path = self.out / name
        if not path.exists():
            raise PipelineError(f"missing artifact {path}; run `fairlens train` first")
        model = mlp.load(path)
        if model.schema_fingerprint != self.schema.fingerprint():
            raise PipelineError(f"{path} was trained on a different schema (fingerprint mismatch)")
        return model


def _config_echo(config: RunConfig) -> dict:
    return asdict(config)


def cmd_synth(n: int, bias: float, seed: int, out) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    data = synth_generate(n, bias, seed)
    save_csv(data, out / "data.csv")
    save_schema(data.schema, out / "schema.yaml")
    return {"dataset": str(out / "data.csv"), "schema": str(out / "schema.yaml"), "rows": n}


def cmd_train(config: RunConfig) -> dict:
    ws = Workspace(config)
    start = time.perf_counter()
    model = train_baseline(ws.train, config.train_config())
    elapsed = time.perf_counter() - start
    mlp.save(model, ws.out / MODEL_FILE)
    scores = FairnessEvaluator(ws.test, ws.metric).report(model)
    payload = {
        "format_version": FORMAT_VERSION,
        "config": _config_echo(config),
        "rows": {"train": len(ws.train), "test": len(ws.test), "dropped": ws.data.dropped},
        "scores": scores.to_dict(),
        "timing_s": elapsed,
    }
    _write_json(ws.out / TRAIN_FILE, payload)
    return payload


def cmd_evaluate(config: RunConfig, model_file: str = MODEL_FILE) -> dict:
    ws = Workspace(config)
    model = ws.load_model(model_file)
    start = time.perf_counter()
    scores = {}
    for kind in ("spd", "gds", "cds"):
        if kind == "spd" and len(ws.metric.protected) != 1:
            continue
        scores[kind] = FairnessEvaluator(ws.test, FairnessMetric(kind, ws.metric.protected)).report(model).to_dict()
    payload = {"format_version": FORMAT_VERSION, "model": model_file, "scores": scores,
               "timing_s": time.perf_counter() - start}
    _write_json(ws.out / EVALUATE_FILE, payload)
    return payload


def cmd_analyze(config: RunConfig) -> dict:
    ws = Workspace(config)
    model = ws.load_model()
    start = time.perf_counter()
    records, stats = analyze_all(model, ws.train, ws.metric, config.num_interval)
    elapsed = time.perf_counter() - start
    table = records_table(records)
    table.to_csv(ws.out / TABLE_FILE, index=False)
    payload = {
        "format_version": FORMAT_VERSION,
        "metric": {"kind": ws.metric.kind.value, "protected": list(ws.metric.protected)},
        "num_interval": config.num_interval,
        "records": len(records),
        "stats": stats.to_dict(),
        "timing_s": elapsed,
    }
    _write_json(ws.out / ANALYSIS_FILE, payload)
    return payload


def _candidate_evaluator(ws: Workspace):
    """Scores pre-processing candidates on a validation split carved from training data."""
    fit, val = split(ws.train, 0.8, ws.config.seed + 1)
    cfg = ws.config.train_config()
    baseline = train_baseline(fit, cfg)

    def evaluate(method: str) -> tuple[float, float]:
        if method in METHODS[Category.PRE]:
            _, outcome = repair_pre(cfg, fit, val, method, ws.metric, baseline)
        elif method in METHODS[Category.IN]:
            _, outcome = repair_in(cfg, fit, val, ws.config.lam, ws.metric, baseline)
        else:
            _, outcome = repair_post(baseline, val, CriticalRegion(ws.config.theta_band), ws.metric.protected,
                                     ws.metric)
        return outcome.improvement, -outcome.accuracy_delta

    return evaluate


def cmd_recommend(config: RunConfig, overrides: dict | None = None) -> dict:
    """Recommendation from the analysis artifact, or from raw P_f/P_n/CV values."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    metric = None
    if overrides:
        missing = [k for k in ("p_f", "p_n") if overrides.get(k) is None]
        if missing:
            raise ValidationError(f"replay mode needs {missing}")
        stats = ResponsibilityStats(overrides["p_f"], overrides["p_n"], overrides.get("cv_f"), overrides.get("cv_n"))
    else:
        analysis = _read_json(out / ANALYSIS_FILE)
        if "stats" not in analysis:
            raise PipelineError(f"{out / ANALYSIS_FILE} holds no responsibility stats")
        stats = ResponsibilityStats.from_dict(analysis["stats"])
        metric = FairnessMetric(analysis["metric"]["kind"], tuple(analysis["metric"]["protected"]))

    kwargs = {}
    if config.methods:
        kwargs["enabled"] = config.methods
        if metric is not None:
            kwargs["evaluate"] = _LazyEvaluator(config)
    rec = recommend_from_stats(stats, config.p_thres, metric, **kwargs)
    payload = {"format_version": FORMAT_VERSION, **rec.to_dict(),
               "replay": bool(overrides), "timing_s": time.perf_counter() - start}
    _write_json(out / RECOMMEND_FILE, payload)
    return payload


class _LazyEvaluator:
    # only loads data and trains when select_method actually compares candidates
    def __init__(self, config: RunConfig):
        self.config = config
        self._fn = None

    def __call__(self, method: str):
        if self._fn is None:
            self._fn = _candidate_evaluator(Workspace(self.config))
        return self._fn(method)


def cmd_repair(config: RunConfig) -> dict:
    ws = Workspace(config)
    rec = Recommendation.from_dict(_read_json(ws.out / RECOMMEND_FILE))
    metric = rec.metric or ws.metric
    cfg = config.train_config()
    start = time.perf_counter()
    baseline = ws.load_model()
    artifact = {}
    if rec.category is Category.PRE:
        model, outcome = repair_pre(cfg, ws.train, ws.test, rec.method, metric, baseline)
        mlp.save(model, ws.out / REPAIRED_MODEL_FILE)
        artifact["model"] = REPAIRED_MODEL_FILE
    elif rec.category is Category.IN:
        model, outcome = repair_in(cfg, ws.train, ws.test, config.lam, metric, baseline)
        mlp.save(model, ws.out / REPAIRED_MODEL_FILE)
        artifact["model"] = REPAIRED_MODEL_FILE
    else:
        overlay, outcome = repair_post(baseline, ws.test, CriticalRegion(config.theta_band), metric.protected, metric)
        _write_json(ws.out / OVERLAY_FILE, {
            "format_version": FORMAT_VERSION,
            "split": "test",
            "theta_band": config.theta_band,
            "labels": {str(k): v for k, v in sorted(overlay.items())},
        })
        artifact["overlay"] = OVERLAY_FILE
    payload = {"format_version": FORMAT_VERSION, "category": rec.category.value, **outcome.to_dict(),
               "artifacts": artifact, "timing_s": time.perf_counter() - start}
    _write_json(ws.out / OUTCOME_FILE, payload)
    return payload


def cmd_report(out) -> dict:
    out = Path(out)
    needed = [TRAIN_FILE, ANALYSIS_FILE, TABLE_FILE, RECOMMEND_FILE, OUTCOME_FILE]
    absent = [n for n in needed if not (out / n).exists()]
    if absent:
        raise PipelineError(f"cannot build report, missing artifacts: {', '.join(absent)}")
    trained = _read_json(out / TRAIN_FILE)
    analysis = _read_json(out / ANALYSIS_FILE)
    rec = _read_json(out / RECOMMEND_FILE)
    outcome = _read_json(out / OUTCOME_FILE)
    table = pd.read_csv(out / TABLE_FILE).to_dict(orient="records")
    for row in table:
        row["responsible"] = bool(row["responsible"])
    timings = {
        "train": trained["timing_s"],
        "analyze": analysis["timing_s"],
        "recommend": rec["timing_s"],
        "repair": outcome["timing_s"],
    }
    outcomes = [{k: v for k, v in outcome.items() if k not in ("timing_s", "format_version")}]
    for o in outcomes:
        if not np.isclose(o["improvement"], o["fairness_before"] - o["fairness_after"], atol=1e-12) or \
                not np.isclose(o["accuracy_delta"], o["accuracy_after"] - o["accuracy_before"], atol=1e-12):
            raise PipelineError("outcome deltas do not match the recorded scores")
    report = {
        "format_version": FORMAT_VERSION,
        "config": trained["config"],
        "baseline": trained["scores"],
        "aie_table": table,
        "stats": analysis["stats"],
        "recommendation": {k: v for k, v in rec.items() if k not in ("timing_s", "format_version", "stats")},
        "outcomes": outcomes,
        "timings": timings,
    }
    jsonschema.validate(report, REPORT_SCHEMA)
    _write_json(out / REPORT_FILE, report)
    return report


def cmd_pipeline(config: RunConfig) -> dict:
    cmd_train(config)
    cmd_analyze(config)
    cmd_recommend(config)
    cmd_repair(config)
    return cmd_report(config.out)


def _parse_cv(text: str) -> float | None:
    return None if text.strip().lower() in ("-", "none", "nan", "") else float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairlens", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dataset", help="CSV with header row")
    common.add_argument("--schema", help="schema YAML, or a preset name (adult, german, bank, compas)")
    common.add_argument("--protected", default="", help="comma-separated protected attributes (default: all)")
    common.add_argument("--metric", choices=["spd", "gds", "cds"])
    common.add_argument("--p-thres", type=float, default=DEFAULT_P_THRES)
    common.add_argument("--num-interval", type=int, default=DEFAULT_NUM_INTERVAL)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--train-fraction", type=float, default=0.7)
    common.add_argument("--epochs", type=int, default=50)
    common.add_argument("--lr", type=float, default=0.001)
    common.add_argument("--batch-size", type=int, default=32)
    common.add_argument("--lambda", dest="lam", type=float, default=1.0, help="fairness penalty weight")
    common.add_argument("--theta-band", type=float, default=0.7, help="reject-option band upper bound")
    common.add_argument("--methods", default="", help="comma-separated candidate methods to compare")
    common.add_argument("--out", default="fairlens-out")

    p = sub.add_parser("synth", help="write a synthetic biased dataset and its schema")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--bias", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="fairlens-out")

    sub.add_parser("train", parents=[common], help="train the baseline model")
    p = sub.add_parser("evaluate", parents=[common], help="score a model on the test split")
    p.add_argument("--model-file", default=MODEL_FILE)
    sub.add_parser("analyze", parents=[common], help="interventional analysis of attributes and neurons")
    p = sub.add_parser("recommend", parents=[common], help="choose the repair category")
    p.add_argument("--p-f", type=float)
    p.add_argument("--p-n", type=float)
    p.add_argument("--cv-f", type=_parse_cv)
    p.add_argument("--cv-n", type=_parse_cv)
    sub.add_parser("repair", parents=[common], help="run the recommended repair")
    p = sub.add_parser("report", help="merge phase artifacts into one audit report")
    p.add_argument("--out", default="fairlens-out")
    sub.add_parser("pipeline", parents=[common], help="train, analyze, recommend, repair and report")
    return parser


def _run_config(args) -> RunConfig:
    split_list = lambda s: [x.strip() for x in s.split(",") if x.strip()]
    return RunConfig(
        dataset=args.dataset, schema=args.schema, protected=split_list(args.protected), metric=args.metric,
        p_thres=args.p_thres, num_interval=args.num_interval, seed=args.seed,
        train_fraction=args.train_fraction, epochs=args.epochs, learning_rate=args.lr,
        batch_size=args.batch_size, lam=args.lam, theta_band=args.theta_band,
        methods=split_list(args.methods), out=args.out,
    )


def _dispatch(args) -> dict:
    if args.command == "synth":
        return cmd_synth(args.n, args.bias, args.seed, args.out)
    if args.command == "report":
        return cmd_report(args.out)
    config = _run_config(args)
    if args.command == "train":
        return cmd_train(config)
    if args.command == "evaluate":
        return cmd_evaluate(config, args.model_file)
    if args.command == "analyze":
        return cmd_analyze(config)
    if args.command == "recommend":
        raw = {"p_f": args.p_f, "p_n": args.p_n, "cv_f": args.cv_f, "cv_n": args.cv_n}
        replay = any(v is not None for v in raw.values())
        return cmd_recommend(config, raw if replay else None)
    if args.command == "repair":
        return cmd_repair(config)
    return cmd_pipeline(config)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        result = _dispatch(args)
    except (ValidationError, SchemaError, SelectionError, ValueError) as exc:
        return _fail(args, exc, 1)
    except (PipelineError, mlp.TrainingError, FileNotFoundError, RuntimeError) as exc:
        return _fail(args, exc, 2)
    summary = {k: v for k, v in result.items() if k in ("category", "method", "rationale", "scores", "stats",
                                                         "improvement", "accuracy_delta", "dataset", "schema")}
    if isinstance(summary.get("stats"), dict):
        summary["stats"] = {k: v for k, v in summary["stats"].items() if not k.startswith("responsible_")}
    print(json.dumps(summary or {"status": "ok"}, indent=2, default=str))
    return 0


def _fail(args, exc: Exception, code: int) -> int:
    print(f"error: {exc}", file=sys.stderr)
    out = Path(getattr(args, "out", None) or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / ERROR_FILE, {"format_version": FORMAT_VERSION, "command": args.command,
                                       "exit_code": code, "error": type(exc).__name__, "message": str(exc)})
    except OSError:
        pass
    return code


if __name__ == "__main__":
    sys.exit(main())
