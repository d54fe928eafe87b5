"""Run staged fairness pipelines and collect per-stage reports.

Per model kind the run is: base model, then the optional pre-, in- and
post-processing stages in that order, each consuming the previous stage's
output. Every stage reports test metrics and explanations for a fixed set of
test instances.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import STAGE_CLASSES, PipelineConfig
from .data import PROTECTED, TabularDataset, load_csv, split, standardize, synth_biased
from .errors import ConfigError, FairComposeError
from .explain import (
    TrainStats,
    faithfulness,
    instance_seed,
    lime_explain,
    pick_explanation_instances,
)
from .metrics import MetricBundle, metric_bundle
from .mitigation.inproc import FairnessConstraint, expgrad_fit, gridsearch_fit
from .mitigation.post import (
    ceodds_apply,
    ceodds_fit,
    roc_apply,
    roc_fit,
    threshopt_apply,
    threshopt_fit,
)
from .mitigation.pre import lfr_apply, lfr_fit, reweigh
from .models import ModelFactory
from .thresholding import apply_threshold, tune_threshold

STAGE_INTERNAL = "stage-internal"
log = logging.getLogger("faircompose")

SCALAR_METRICS = ("accuracy", "balanced_accuracy", "roc_auc", "spd", "di", "eod", "aod")


@dataclass
class Prepared:
    train: TabularDataset
    valid: TabularDataset
    test: TabularDataset
    stats: TrainStats
    instance_ids: list
    protected_column: int | None


@dataclass
class ExplanationRecord:
    instance: int
    features: list  # [(name, weight)]
    intercept: float
    r2: float
    faithfulness: float | None

    def to_dict(self) -> dict:
        return {
            "instance": self.instance,
            "features": [{"name": n, "weight": w} for n, w in self.features],
            "intercept": self.intercept,
            "r2": self.r2,
            "faithfulness": self.faithfulness,
        }

    @classmethod
    def from_dict(cls, d) -> "ExplanationRecord":
        return cls(
            instance=d["instance"], features=[(f["name"], f["weight"]) for f in d["features"]],
            intercept=d["intercept"], r2=d["r2"], faithfulness=d["faithfulness"],
        )


@dataclass
class StageReport:
    model: str
    stage: str  # base | pre | pre+in | ...
    interventions: list  # e.g. ["Rew", "GridSearch"]
    metrics: MetricBundle
    threshold: float | str
    params: dict
    explanations: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    # in-memory traces for checks; never serialized
    trace: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def faithfulness_values(self) -> list:
        return [e.faithfulness for e in self.explanations]

    @property
    def faithfulness_mean(self) -> float | None:
        values = [v for v in self.faithfulness_values if v is not None]
        return float(np.mean(values)) if values else None

    def to_dict(self) -> dict:
        metrics = {k: _json_number(v) for k, v in self.metrics.scalars().items()}
        metrics["di_infinite"] = self.metrics.di_infinite
        return {
            "model": self.model,
            "stage": self.stage,
            "interventions": list(self.interventions),
            "metrics": metrics,
            "group_rates": self.metrics.group_rates,
            "threshold": self.threshold,
            "params": self.params,
            "flags": list(self.flags),
            "explanations": [e.to_dict() for e in self.explanations],
            "faithfulness_mean": self.faithfulness_mean,
        }

    @classmethod
    def from_dict(cls, d) -> "StageReport":
        m = d["metrics"]
        bundle = MetricBundle(
            **{k: _from_json_number(m[k]) for k in SCALAR_METRICS},
            di_infinite=m["di_infinite"], group_rates=d["group_rates"],
        )
        return cls(
            model=d["model"], stage=d["stage"], interventions=list(d["interventions"]),
            metrics=bundle, threshold=d["threshold"], params=d["params"],
            explanations=[ExplanationRecord.from_dict(e) for e in d["explanations"]],
            flags=list(d["flags"]),
        )


@dataclass
class RunResult:
    run_id: str
    config_echo: dict
    reports: list
    errors: list = field(default_factory=list)  # [{model, stage, message}]
    instance_ids: list = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return bool(self.errors)

    def for_model(self, kind) -> list:
        return [r for r in self.reports if r.model == kind]

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "config_echo": self.config_echo,
            "defaults": declared_defaults(self.config_echo),
            "instance_ids": list(self.instance_ids),
            "reports": [r.to_dict() for r in self.reports],
            "errors": list(self.errors),
        }


def _json_number(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def _from_json_number(v):
    return float(v) if isinstance(v, str) else v


def declared_defaults(echo: dict) -> dict:
    """Choices the method description leaves open, stated in every report header."""
    stages = echo.get("pipeline", {})
    post = stages.get("post", {})
    out = {
        "post_fit_split": "valid",
        "split_fractions": "default 0.6/0.2/0.2" if echo["splits"]["defaulted"] else "configured",
        "threshold_objective": "balanced_accuracy on validation",
        "lime": {
            "samples": echo["explain"]["samples"],
            "kernel_width": echo["explain"]["kernel_width"] or "0.75*sqrt(d)",
            "top_k": echo["explain"]["top_k"],
            "ridge": echo["explain"]["ridge"],
            "distance": "standardized euclidean",
        },
        "faithfulness": "pearson(weight, score drop when feature set to training mean)",
    }
    if "in" in stages:
        out["in_constraint"] = stages["in"]["constraint"]
    if post.get("name") == "ROC":
        out["roc_metric"] = post["params"]["metric"]
        out["roc_bounds"] = post["params"]["bounds"]
    if post.get("name") == "CEOdds":
        out["ceodds_cost_mode"] = post["params"]["cost_mode"]
    return out


# -- preparation ------------------------------------------------------------------


def load_dataset(cfg: PipelineConfig) -> TabularDataset:
    spec = cfg.dataset
    if "synth" in spec:
        s = spec["synth"]
        ds = synth_biased(int(s["n"]), int(s["d"]), float(s["gap"]), float(s["noise"]), int(s["seed"]))
        if not spec["include_protected"]:
            keep = [i for i, k in enumerate(ds.feature_kinds) if k != PROTECTED]
            ds = ds.replace(
                features=ds.features[:, keep],
                feature_names=tuple(ds.feature_names[i] for i in keep),
                feature_kinds=tuple(ds.feature_kinds[i] for i in keep),
            )
        return ds
    path = cfg.dataset_path()
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}")
    return load_csv(path, cfg.schema(), name=spec.get("builtin"))


def prepare(cfg: PipelineConfig) -> Prepared:
    ds = load_dataset(cfg)
    train, valid, test = split(ds, cfg.splits)
    (train, valid, test), _ = standardize(train, [valid, test])
    ids = pick_explanation_instances(len(test), int(cfg.explain["count"]), seed=cfg.seed)
    kinds = train.feature_kinds
    protected_column = kinds.index(PROTECTED) if PROTECTED in kinds else None
    return Prepared(
        train=train, valid=valid, test=test, stats=TrainStats.from_dataset(train),
        instance_ids=ids, protected_column=protected_column,
    )


# -- stage execution --------------------------------------------------------------


class _Stage:
    """Current model state: a score function over the standardized feature space."""

    def __init__(self, train, score_fn, threshold, decide=None, relaxed=None):
        self.train = train
        self.score_fn = score_fn
        self.threshold = threshold
        self.decide = decide  # (features, groups) -> hard predictions, post stages only
        self.relaxed = relaxed  # (features, groups) -> explained scores, post stages only


def _group_fn(prep: Prepared):
    col = prep.protected_column

    def groups_of(x, fallback):
        if col is None:
            return np.full(len(x), fallback, dtype=np.int64)
        return (np.asarray(x)[:, col] >= 0.5).astype(np.int64)

    return groups_of


def _explain(cfg, prep, explain_fn, threshold):
    records = []
    ex = cfg.explain
    for i in prep.instance_ids:
        x = prep.test.features[i]
        seed = instance_seed(cfg.seed, i)
        e = lime_explain(
            lambda s: explain_fn(s, int(prep.test.protected[i])), x, prep.stats,
            num_samples=int(ex["samples"]), kernel_width=ex["kernel_width"], top_k=int(ex["top_k"]),
            seed=seed, instance_id=i, ridge=float(ex["ridge"]),
        )
        f = faithfulness(
            lambda s: explain_fn(s, int(prep.test.protected[i])), x, e, prep.stats.mean, threshold
        )
        records.append(ExplanationRecord(i, e.features, e.intercept, e.r2, f.value))
    return records


def _report(cfg, prep, model_kind, label, names, state: _Stage, params, flags):
    test = prep.test
    valid = prep.valid
    groups_of = _group_fn(prep)
    if state.decide is None:
        scores = state.score_fn(test.features)
        preds = apply_threshold(scores, state.threshold)
        threshold = state.threshold
        explain_fn = lambda x, g: state.score_fn(x)  # noqa: E731
        faith_threshold = state.threshold
        valid_scores = state.score_fn(valid.features)
    else:
        preds = state.decide(test.features, test.protected)
        scores = state.relaxed(test.features, test.protected)
        threshold = STAGE_INTERNAL
        explain_fn = lambda x, g: state.relaxed(x, groups_of(x, g))  # noqa: E731
        faith_threshold = state.threshold
        valid_scores = state.relaxed(valid.features, valid.protected)
    bundle = metric_bundle(preds, test.labels, test.protected, scores)
    explanations = _explain(cfg, prep, explain_fn, faith_threshold)
    return StageReport(
        model=model_kind, stage=label, interventions=list(names), metrics=bundle,
        threshold=threshold, params=params, explanations=explanations, flags=list(flags),
        trace={"test_scores": scores, "test_preds": preds, "valid_scores": valid_scores},
    )


def _tuned(train, score_fn, valid):
    rule = tune_threshold(score_fn(valid.features), valid.labels)
    return _Stage(train, score_fn, rule.threshold)


def _run_pre(spec, cfg, factory, state: _Stage, valid):
    p = spec.params
    if spec.name == "Rew":
        train = reweigh(state.train).dataset
        model = factory().fit(train.features, train.labels, train.weights)
        return _tuned(train, model.score, valid), [], None
    lfr = lfr_fit(
        state.train, k=int(p["k"]), a_x=float(p["a_x"]), a_y=float(p["a_y"]), a_z=float(p["a_z"]),
        max_iters=int(p["max_iters"]), seed=cfg.seed, temperature=float(p["temperature"]),
        relabel=bool(p["relabel"]), step_size=float(p["step_size"]),
    )
    train = lfr_apply(lfr, state.train)
    model = factory().fit(train.features, train.labels, train.weights)
    score = lambda x: model.score(lfr.transform(x))  # noqa: E731
    return _tuned(train, score, valid), [], lfr.transform


def _run_in(spec, factory, state: _Stage, valid, transform):
    p = spec.params
    constraint = FairnessConstraint(spec.constraint, eps=float(p["eps"]))
    if spec.name == "GridSearch":
        red = gridsearch_fit(factory, state.train, constraint, grid=p["grid"])
    else:
        red = expgrad_fit(
            factory, state.train, constraint, max_rounds=int(p["max_rounds"]),
            step_size=float(p["step_size"]), bound=float(p["bound"]),
        )
    if transform is None:
        score = red.score
    else:
        score = lambda x: red.score(transform(x))  # noqa: E731
    return _tuned(state.train, score, valid), list(red.flags)


def _run_post(spec, state: _Stage, valid):
    p = spec.params
    score_fn = state.score_fn
    s_valid = score_fn(valid.features)
    if spec.name == "ROC":
        band = roc_fit(s_valid, valid.labels, valid.protected, metric=p["metric"], bounds=p["bounds"],
                       margins=[m for m in _margins(p["max_margin"])])
        decide = lambda x, g: roc_apply(score_fn(x), g, band)  # noqa: E731
        relaxed = lambda x, g: band.relaxed_scores(score_fn(x), g)  # noqa: E731
        return _Stage(state.train, score_fn, band.threshold, decide, relaxed), band.flags
    if spec.name == "CEOdds":
        mix = ceodds_fit(
            s_valid, valid.labels, valid.protected, cost_mode=p["cost_mode"], threshold=state.threshold,
            tol=float(p["tol"]), fnr_weight=float(p["fnr_weight"]), calibration_tol=float(p["calibration_tol"]),
        )
        decide = lambda x, g: ceodds_apply(score_fn(x), g, mix)  # noqa: E731
        relaxed = lambda x, g: mix.relaxed_scores(score_fn(x), g)  # noqa: E731
        return _Stage(state.train, score_fn, state.threshold, decide, relaxed), list(mix.flags)
    rule = threshopt_fit(
        s_valid, valid.labels, valid.protected, constraint=p["constraint"], tol=float(p["tol"]),
        reference_threshold=state.threshold,
    )
    decide = lambda x, g: threshopt_apply(score_fn(x), g, rule)  # noqa: E731
    relaxed = lambda x, g: rule.relaxed_scores(score_fn(x), g)  # noqa: E731
    return _Stage(state.train, score_fn, state.threshold, decide, relaxed), rule.flags


def _margins(max_margin):
    top = int(round(float(max_margin) * 100))
    return [round(i / 100, 2) for i in range(1, max(top, 1) + 1)]


def run_model(cfg: PipelineConfig, prep: Prepared, kind: str, params: dict):
    """All stage reports for one model kind, plus the error that stopped it (if any)."""
    factory = ModelFactory(kind, params)
    reports = []
    label_parts, names = [], []
    try:
        base = factory().fit(prep.train.features, prep.train.labels, prep.train.weights)
        state = _tuned(prep.train, base.score, prep.valid)
        reports.append(_report(cfg, prep, kind, "base", [], state, params, []))
    except FairComposeError as exc:
        return reports, {"model": kind, "stage": "base", "message": str(exc)}

    transform = None
    for cls in STAGE_CLASSES:
        spec = cfg.stage(cls)
        if spec is None:
            continue
        label_parts.append(cls)
        names.append(spec.name)
        label = "+".join(label_parts)
        try:
            if cls == "pre":
                state, flags, transform = _run_pre(spec, cfg, factory, state, prep.valid)
            elif cls == "in":
                state, flags = _run_in(spec, factory, state, prep.valid, transform)
            else:
                state, flags = _run_post(spec, state, prep.valid)
            reports.append(_report(cfg, prep, kind, label, names, state, spec.params, flags))
            log.info("%s: finished %s (%s)", kind, label, "+".join(names))
        except (FairComposeError, FloatingPointError, np.linalg.LinAlgError) as exc:
            reports[-1].flags.append(f"aborted_at_{label}: {type(exc).__name__}: {exc}")
            return reports, {"model": kind, "stage": label, "message": f"{type(exc).__name__}: {exc}"}
    return reports, None


def _run_model_job(args):
    cfg, prep, kind, params = args
    reports, error = run_model(cfg, prep, kind, params)
    for r in reports:
        r.trace = {}  # closures and arrays stay in the worker
    return reports, error


def run_id_of(echo: dict) -> str:
    canonical = json.dumps(echo, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def run_pipeline(cfg: PipelineConfig, jobs: int = 1) -> RunResult:
    """Execute every configured model through the staged pipeline.

    ``jobs > 1`` runs model kinds in separate processes; results are merged
    in config order, so the report is identical to a sequential run. Traces
    (test scores, predictions) are only kept in sequential runs.
    """
    prep = prepare(cfg)
    jobs = max(1, min(int(jobs), len(cfg.models)))
    tasks = [(cfg, prep, kind, params) for kind, params in cfg.models]
    if jobs == 1:
        results = [run_model(cfg, prep, kind, params) for kind, params in cfg.models]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_model_job, tasks))
    reports, errors = [], []
    for model_reports, error in results:
        reports.extend(model_reports)
        if error is not None:
            errors.append(error)
    echo = cfg.echo()
    return RunResult(
        run_id=run_id_of(echo), config_echo=echo, reports=reports, errors=errors,
        instance_ids=list(prep.instance_ids),
    )


def default_jobs() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


# -- report files -----------------------------------------------------------------

CSV_COLUMNS = (
    "model", "stage", "interventions", "threshold", *SCALAR_METRICS, "di_infinite",
    "faithfulness_mean", "flags",
)


def report_json(result: RunResult) -> str:
    return json.dumps(result.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else _json_number(v)
    return str(v)


def report_csv(result: RunResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in result.reports:
        scalars = r.metrics.scalars()
        writer.writerow([
            r.model, r.stage, "+".join(r.interventions) or "none", _csv_value(r.threshold),
            *(_csv_value(scalars[m]) for m in SCALAR_METRICS), str(r.metrics.di_infinite).lower(),
            _csv_value(r.faithfulness_mean), ";".join(r.flags),
        ])
    return buf.getvalue()


def emit_report(result: RunResult, out_dir, fmt: str = "both") -> list:
    """Write report.json and/or report.csv into ``out_dir``; returns the written paths."""
    if not result.reports:
        raise FairComposeError("no stage reports to emit")
    if fmt not in ("json", "csv", "both"):
        raise ConfigError(f"unknown report format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("json", "both"):
        path = out / "report.json"
        path.write_text(report_json(result), encoding="utf-8")
        written.append(path)
    if fmt in ("csv", "both"):
        path = out / "report.csv"
        path.write_text(report_csv(result), encoding="utf-8")
        written.append(path)
    return written


def load_report(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from None


def result_from_dict(d: dict) -> RunResult:
    return RunResult(
        run_id=d["run_id"], config_echo=d["config_echo"],
        reports=[StageReport.from_dict(r) for r in d["reports"]],
        errors=list(d.get("errors", [])), instance_ids=list(d.get("instance_ids", [])),
    )


# -- comparison -------------------------------------------------------------------

COMPARE_METRICS = (*SCALAR_METRICS, "faithfulness_mean")


def _metric_of(report: dict, name):
    if name == "faithfulness_mean":
        return report["faithfulness_mean"]
    return _from_json_number(report["metrics"][name])


def _delta(a, b):
    if a is None or b is None:
        return None
    if not (math.isfinite(a) and math.isfinite(b)):
        return None if a != b else 0.0
    return b - a


def compare_runs(a: dict, b: dict) -> list:
    """Per (model, stage, metric) rows with ``delta = B - A``; unmatched stages are marked missing."""
    if a["config_echo"]["dataset"] != b["config_echo"]["dataset"]:
        raise ConfigError("runs use different datasets and cannot be compared")
    kinds_a = sorted({r["model"] for r in a["reports"]})
    kinds_b = sorted({r["model"] for r in b["reports"]})
    if kinds_a != kinds_b:
        raise ConfigError(f"runs use different model kinds: {kinds_a} vs {kinds_b}")
    index_a = {(r["model"], r["stage"]): r for r in a["reports"]}
    index_b = {(r["model"], r["stage"]): r for r in b["reports"]}
    keys = list(index_a)
    keys += [k for k in index_b if k not in index_a]
    rows = []
    for key in keys:
        ra, rb = index_a.get(key), index_b.get(key)
        status = "ok" if ra and rb else ("missing-in-B" if ra else "missing-in-A")
        for m in COMPARE_METRICS:
            va = _metric_of(ra, m) if ra else None
            vb = _metric_of(rb, m) if rb else None
            rows.append({
                "model": key[0], "stage": key[1], "metric": m, "a": va, "b": vb,
                "delta": _delta(va, vb) if status == "ok" else None, "status": status,
            })
    return rows


def compare_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ("model", "stage", "metric", "a", "b", "delta", "status")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([_csv_value(row[c]) if c in ("a", "b", "delta") else row[c] for c in cols])
    return buf.getvalue()
