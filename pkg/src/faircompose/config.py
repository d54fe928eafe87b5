"""Run configuration: YAML parsing, defaults and composition checks."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import Schema, SplitSpec
from .errors import CompatibilityError, CompositionError, ConfigError, FairComposeError
from .mitigation.inproc import ConstraintKind, default_grid
from .models import MODEL_KINDS, canonical_kind

DATASET_DIR = Path(__file__).parent / "datasets"

BUILTIN_DATASETS = {
    "german_credit": {
        "file": "german_credit.csv",
        "label": "credit_risk",
        "favorable": 1,
        "protected": {"sex": "male", "age_group": "25+"},
        "categorical": [
            "checking_status", "credit_history", "purpose", "savings",
            "employment", "housing", "job", "sex", "age_group",
        ],
    },
    "compas": {
        "file": "compas.csv",
        "label": "two_year_recid",
        "favorable": 0,
        "protected": {"race": "Caucasian", "sex": "Female"},
        "categorical": ["sex", "race", "c_charge_degree"],
    },
}

STAGE_CLASSES = ("pre", "in", "post")

# stage name -> (stage class, default params)
STAGES = {
    "Rew": ("pre", {}),
    "LFR": ("pre", {
        "k": 10, "a_x": 0.01, "a_y": 1.0, "a_z": 50.0, "max_iters": 500,
        "temperature": 1.0, "relabel": False, "step_size": 1.0,
    }),
    "GridSearch": ("in", {"eps": 0.01, "grid": None}),
    "ExpGrad": ("in", {"eps": 0.01, "max_rounds": 50, "step_size": 2.0, "bound": 100.0}),
    "ROC": ("post", {"metric": "DI", "bounds": None, "max_margin": 0.25}),
    "CEOdds": ("post", {"cost_mode": "weighted", "tol": 0.01, "fnr_weight": 0.5, "calibration_tol": 0.1}),
    "ThreshOptim": ("post", {"constraint": "DemographicParity", "tol": 0.02}),
}
ROC_DEFAULT_BOUNDS = {"DI": [0.8, 1.25], "SPD": [-0.05, 0.05], "AOD": [-0.05, 0.05]}
# which reduction constraint each ROC scoring metric agrees with
ROC_METRIC_FAMILY = {
    "DI": ConstraintKind.DEMOGRAPHIC_PARITY,
    "SPD": ConstraintKind.DEMOGRAPHIC_PARITY,
    "AOD": ConstraintKind.EQUALIZED_ODDS,
}

EXPLAIN_DEFAULTS = {"count": 10, "samples": 5000, "kernel_width": None, "top_k": 10, "ridge": 1.0}
TOP_KEYS = {"dataset", "splits", "models", "pipeline", "explain", "seed", "name"}


class _DuplicateKey(yaml.YAMLError):
    def __init__(self, key, path):
        super().__init__(f"duplicate key {key!r}")
        self.key = key
        self.path = path


class _StrictLoader(yaml.SafeLoader):
    """SafeLoader that refuses duplicate mapping keys instead of keeping the last one."""


def _construct_mapping(loader, node, deep=False):
    seen = set()
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            raise _DuplicateKey(key, key_node.start_mark)
        seen.add(key)
    return yaml.SafeLoader.construct_mapping(loader, node, deep=deep)


_StrictLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


@dataclass
class StageSpec:
    stage_class: str
    name: str
    params: dict = field(default_factory=dict)
    constraint: str | None = None


@dataclass
class PipelineConfig:
    dataset: dict
    splits: SplitSpec
    models: list  # [(kind, params)]
    stages: dict  # stage class -> StageSpec
    explain: dict
    seed: int = 0
    name: str = "run"
    base_dir: Path = field(default_factory=Path.cwd)
    seed_source: str = "config"
    split_defaulted: bool = False

    def stage(self, stage_class: str) -> StageSpec | None:
        return self.stages.get(stage_class)

    @property
    def stage_sequence(self) -> list:
        return [self.stages[c] for c in STAGE_CLASSES if c in self.stages]

    def schema(self) -> Schema | None:
        if "synth" in self.dataset:
            return None
        s = self.dataset["schema"]
        return Schema(
            label=s["label"], favorable=s["favorable"], protected=s["protected"],
            privileged=s["privileged"], categorical=tuple(s.get("categorical", ())),
            drop=tuple(s.get("drop", ())), include_protected=self.dataset["include_protected"],
        )

    def dataset_path(self) -> Path:
        ds = self.dataset
        if "builtin" in ds:
            return DATASET_DIR / BUILTIN_DATASETS[ds["builtin"]]["file"]
        path = Path(ds["path"])
        return path if path.is_absolute() else self.base_dir / path

    def echo(self) -> dict:
        """Normalized config with every default filled in; stable across runs."""
        stages = {}
        for cls in STAGE_CLASSES:
            spec = self.stages.get(cls)
            if spec is None:
                continue
            entry = {"name": spec.name}
            if spec.constraint is not None:
                entry["constraint"] = spec.constraint
            entry["params"] = spec.params
            stages[cls] = entry
        return {
            "name": self.name,
            "dataset": self.dataset,
            "splits": {
                "train": self.splits.train, "valid": self.splits.valid,
                "test": self.splits.test, "seed": self.splits.seed,
                "defaulted": self.split_defaulted,
            },
            "models": [{"kind": k, "params": p} for k, p in self.models],
            "pipeline": stages,
            "explain": self.explain,
            "seed": self.seed,
            "seed_source": self.seed_source,
            "post_fit_split": "valid",
        }


def _require_mapping(value, where):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(mapping, allowed, where):
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}; allowed: {sorted(allowed)}")


def _parse_dataset(raw) -> dict:
    raw = _require_mapping(raw, "dataset")
    _reject_unknown(raw, {"path", "builtin", "synth", "schema", "protected", "include_protected"}, "dataset")
    sources = [k for k in ("path", "builtin", "synth") if k in raw]
    if len(sources) != 1:
        raise ConfigError("dataset needs exactly one of 'path', 'builtin' or 'synth'")
    include = raw.get("include_protected", True)
    if not isinstance(include, bool):
        raise ConfigError("dataset.include_protected must be true or false")
    out = {"include_protected": include}
    if "synth" in raw:
        synth = _require_mapping(raw["synth"], "dataset.synth")
        allowed = {"n": 5000, "d": 5, "gap": -0.3, "noise": 0.5, "seed": 0}
        _reject_unknown(synth, allowed, "dataset.synth")
        if "schema" in raw or "protected" in raw:
            raise ConfigError("dataset.synth does not take a schema or protected attribute")
        out["synth"] = {**allowed, **synth}
        return out
    if "builtin" in raw:
        name = raw["builtin"]
        if name not in BUILTIN_DATASETS:
            raise ConfigError(f"unknown builtin dataset {name!r}; choose from {sorted(BUILTIN_DATASETS)}")
        info = BUILTIN_DATASETS[name]
        protected = raw.get("protected", next(iter(info["protected"])))
        if protected not in info["protected"]:
            raise ConfigError(
                f"builtin {name} supports protected attributes {sorted(info['protected'])}, got {protected!r}"
            )
        if "schema" in raw:
            raise ConfigError("builtin datasets carry their own schema; use 'path' for a custom one")
        out["builtin"] = name
        out["schema"] = {
            "label": info["label"], "favorable": info["favorable"], "protected": protected,
            "privileged": info["protected"][protected], "categorical": list(info["categorical"]),
            "drop": [],
        }
        return out
    if "protected" in raw:
        raise ConfigError("set the protected attribute inside dataset.schema")
    schema = _require_mapping(raw.get("schema"), "dataset.schema")
    _reject_unknown(schema, {"label", "favorable", "protected", "privileged", "categorical", "drop"}, "dataset.schema")
    missing = [k for k in ("label", "favorable", "protected", "privileged") if k not in schema]
    if missing:
        raise ConfigError(f"dataset.schema is missing {missing}")
    out["path"] = str(raw["path"])
    out["schema"] = {
        "label": schema["label"], "favorable": schema["favorable"],
        "protected": schema["protected"], "privileged": schema["privileged"],
        "categorical": list(schema.get("categorical") or []), "drop": list(schema.get("drop") or []),
    }
    return out


def _parse_models(raw, seed) -> list:
    if raw is None:
        raw = [{"kind": "logistic"}]
    if not isinstance(raw, list) or not raw:
        raise ConfigError("models must be a nonempty list")
    if len(raw) > 5:
        raise ConfigError("at most five models per run")
    out = []
    for i, entry in enumerate(raw):
        if isinstance(entry, str):
            entry = {"kind": entry}
        entry = _require_mapping(entry, f"models[{i}]")
        _reject_unknown(entry, {"kind", "params"}, f"models[{i}]")
        if "kind" not in entry:
            raise ConfigError(f"models[{i}] needs a 'kind'")
        kind = canonical_kind(entry["kind"])
        params = dict(_require_mapping(entry.get("params"), f"models[{i}].params"))
        defaults = MODEL_KINDS[kind].defaults
        _reject_unknown(params, defaults, f"models[{i}].params ({kind})")
        merged = {**defaults, **params}
        if "seed" not in params:
            merged["seed"] = seed
        if any(k == kind for k, _ in out):
            raise ConfigError(f"model kind {kind!r} listed twice")
        out.append((kind, merged))
    return out


def _stage_name(name) -> str:
    for known in STAGES:
        if str(name).lower() == known.lower():
            return known
    raise ConfigError(f"unknown intervention {name!r}; choose from {sorted(STAGES)}")


def _parse_stage(cls, raw) -> StageSpec:
    if isinstance(raw, list):
        if len(raw) != 1:
            raise CompositionError(f"at most one {cls}-processing intervention is allowed, got {len(raw)}")
        raw = raw[0]
    if isinstance(raw, str):
        raw = {"name": raw}
    raw = _require_mapping(raw, f"pipeline.{cls}")
    allowed = {"name", "params"} | ({"constraint"} if cls == "in" else set())
    _reject_unknown(raw, allowed, f"pipeline.{cls}")
    if "name" not in raw:
        raise ConfigError(f"pipeline.{cls} needs a 'name'")
    name = _stage_name(raw["name"])
    stage_class, defaults = STAGES[name]
    if stage_class != cls:
        raise CompositionError(f"{name} is a {stage_class}-processing intervention, listed under pipeline.{cls}")
    params = dict(_require_mapping(raw.get("params"), f"pipeline.{cls}.params"))
    _reject_unknown(params, defaults, f"pipeline.{cls}.params ({name})")
    merged = copy.deepcopy(defaults)
    merged.update(params)
    constraint = None
    if cls == "in":
        constraint = ConstraintKind.parse(raw.get("constraint", "DemographicParity")).value
    if name == "ROC":
        merged["metric"] = str(merged["metric"]).upper()
        if merged["metric"] not in ROC_DEFAULT_BOUNDS:
            raise ConfigError(f"unknown ROC metric {merged['metric']!r}; choose from {sorted(ROC_DEFAULT_BOUNDS)}")
        if merged["bounds"] is None:
            merged["bounds"] = list(ROC_DEFAULT_BOUNDS[merged["metric"]])
        bounds = merged["bounds"]
        if not (isinstance(bounds, list) and len(bounds) == 2 and bounds[0] <= bounds[1]):
            raise ConfigError("ROC bounds must be a [low, high] pair")
    if name == "GridSearch":
        if merged["grid"] is None:
            merged["grid"] = list(default_grid(constraint))
        if not isinstance(merged["grid"], list) or not merged["grid"]:
            raise ConfigError("GridSearch grid must be a nonempty list of multipliers")
    if name == "ThreshOptim":
        merged["constraint"] = ConstraintKind.parse(merged["constraint"]).value
    if name == "CEOdds" and merged["cost_mode"] not in ("fpr", "fnr", "weighted"):
        raise ConfigError(f"unknown CEOdds cost_mode {merged['cost_mode']!r}")
    return StageSpec(stage_class=cls, name=name, params=merged, constraint=constraint)


def check_compatibility(stages: dict) -> None:
    """Reject stage combinations that optimize for conflicting fairness notions."""
    inner = stages.get("in")
    post = stages.get("post")
    if inner is None or post is None:
        return
    constraint = ConstraintKind.parse(inner.constraint)
    if post.name == "ROC":
        family = ROC_METRIC_FAMILY[post.params["metric"]]
        if family is not constraint:
            raise CompatibilityError(
                f"{inner.name} with constraint {constraint.value} is incompatible with ROC scored on "
                f"{post.params['metric']}; use {family.value} for the in-processing constraint"
            )
    if post.name == "ThreshOptim":
        post_constraint = ConstraintKind.parse(post.params["constraint"])
        if post_constraint is not constraint:
            raise CompatibilityError(
                f"{inner.name} uses {constraint.value} but ThreshOptim uses {post_constraint.value}"
            )


def _parse_pipeline(raw) -> dict:
    raw = _require_mapping(raw, "pipeline")
    _reject_unknown(raw, STAGE_CLASSES, "pipeline")
    stages = {}
    for cls in STAGE_CLASSES:
        if raw.get(cls) is not None:
            stages[cls] = _parse_stage(cls, raw[cls])
    check_compatibility(stages)
    return stages


def _parse_splits(raw, seed):
    if raw is None:
        return SplitSpec(seed=seed), True
    raw = _require_mapping(raw, "splits")
    _reject_unknown(raw, {"train", "valid", "test", "seed"}, "splits")
    try:
        spec = SplitSpec(
            train=float(raw.get("train", 0.6)), valid=float(raw.get("valid", 0.2)),
            test=float(raw.get("test", 0.2)), seed=int(raw.get("seed", seed)),
        )
    except (FairComposeError, TypeError, ValueError) as exc:
        raise ConfigError(f"splits: {exc}") from exc
    defaulted = not any(k in raw for k in ("train", "valid", "test"))
    return spec, defaulted


def _parse_explain(raw) -> dict:
    raw = _require_mapping(raw, "explain")
    _reject_unknown(raw, EXPLAIN_DEFAULTS, "explain")
    out = {**EXPLAIN_DEFAULTS, **raw}
    if int(out["count"]) < 0 or int(out["samples"]) < 2 or int(out["top_k"]) < 1:
        raise ConfigError("explain: count >= 0, samples >= 2 and top_k >= 1 are required")
    return out


def parse_config(text: str, base_dir=None, seed_override: int | None = None) -> PipelineConfig:
    """Parse and validate a YAML run config.

    ``seed_override`` replaces the config's run seed before any derived seed
    (split seed, model seeds) is filled in; the echo records the source.
    """
    try:
        raw = yaml.load(text, Loader=_StrictLoader)
    except _DuplicateKey as exc:
        if exc.key in STAGE_CLASSES:
            raise CompositionError(
                f"pipeline lists {exc.key!r} twice; at most one {exc.key}-processing intervention is allowed"
            ) from None
        raise ConfigError(f"duplicate key {exc.key!r} at {exc.path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    raw = _require_mapping(raw, "config")
    _reject_unknown(raw, TOP_KEYS, "config")
    if "dataset" not in raw:
        raise ConfigError("config needs a 'dataset' section")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    seed_source = "config" if "seed" in raw else "default"
    if seed_override is not None:
        seed, seed_source = int(seed_override), "env:FAIRCOMPOSE_SEED"
    splits, defaulted = _parse_splits(raw.get("splits"), seed)
    return PipelineConfig(
        dataset=_parse_dataset(raw["dataset"]),
        splits=splits,
        models=_parse_models(raw.get("models"), seed),
        stages=_parse_pipeline(raw.get("pipeline")),
        explain=_parse_explain(raw.get("explain")),
        seed=seed,
        name=str(raw.get("name", "run")),
        base_dir=Path(base_dir) if base_dir is not None else Path.cwd(),
        split_defaulted=defaulted,
        seed_source=seed_source,
    )


def load_config(path, seed_override: int | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent, seed_override=seed_override)
