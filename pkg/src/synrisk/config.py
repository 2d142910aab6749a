"""Run configuration: parsing, defaulting, exhaustive validation and hashing.

A run configuration is a JSON document. Relative paths are resolved against
the directory holding the document. Unknown keys are violations, so typos
surface instead of being silently ignored.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .data import SchemaError, load_schema

PIPELINES = ("synthesize", "attribute-risk", "identification-risk", "full")
PATH_KEYS = ("data", "schema", "targets", "release_manifest")
# inputs each pipeline cannot run without
REQUIRED_PATHS = {
    "synthesize": ("data", "schema"),
    "attribute-risk": ("release_manifest", "data"),
    "identification-risk": ("release_manifest", "targets"),
    "full": ("data", "schema", "targets"),
}
# keys that change where or how fast a run happens but not what it computes
HASH_EXCLUDED = ("out_dir", "jobs")

SYNTH_DEFAULTS = {
    "mixture": {"kind": "mixture", "m": 5, "n_components": 20, "burn_in": 500, "thin": 5,
                "n_draws": 100, "alpha": 1.0},
    "cart": {"kind": "cart", "m": 5, "order": None, "min_leaf": 5, "max_depth": None},
}
ATTRIBUTE_DEFAULTS = {"knowledge": "worst-case", "known": [], "prior": "uniform",
                      "guess_mode": "neighborhood", "max_guesses": 1_000_000,
                      "coordinates": None, "grid": None, "bandwidth": None, "records": "all"}
IDENTIFICATION_DEFAULTS = {"in_sample": True, "population_size": None,
                           "population_table": None, "radius": {}, "h": 100,
                           "s_known": False}
TOP_DEFAULTS = {"pipeline": None, "seed": None, "data": None, "schema": None, "targets": None,
                "release_manifest": None, "out_dir": None, "jobs": 1, "summary_only": False,
                "synthesizer": None, "attribute": None, "identification": None}


class ConfigError(ValueError):
    """Configuration violations, collected rather than fail-fast."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ConfigParseError(ValueError):
    """The configuration document is not valid JSON."""

    def __init__(self, path, line, column, msg):
        self.path, self.line, self.column = str(path), line, column
        super().__init__(f"{path}: line {line} column {column}: {msg}")


@dataclass(frozen=True)
class RunConfig:
    pipeline: str
    seed: int
    data: str | None = None
    schema: str | None = None
    targets: str | None = None
    release_manifest: str | None = None
    out_dir: str | None = None
    jobs: int = 1
    summary_only: bool = False
    synthesizer: dict = field(default_factory=lambda: copy.deepcopy(SYNTH_DEFAULTS["mixture"]))
    attribute: dict = field(default_factory=lambda: copy.deepcopy(ATTRIBUTE_DEFAULTS))
    identification: dict = field(default_factory=lambda: copy.deepcopy(IDENTIFICATION_DEFAULTS))

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in TOP_DEFAULTS}

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form, ignoring output location and
        parallelism. Key order in the source document does not matter."""
        doc = {k: v for k, v in self.to_dict().items() if k not in HASH_EXCLUDED}
        canon = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
        return hashlib.sha256(canon.encode()).hexdigest()


def read_document(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(path, e.lineno, e.colno, e.msg) from None
    if not isinstance(doc, dict):
        raise ConfigParseError(path, 1, 1, "top level must be a JSON object")
    return doc


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _merge_section(name, given, defaults, errors):
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        errors.append(f"{name} must be an object")
        return copy.deepcopy(defaults)
    for k in given:
        if k not in defaults:
            errors.append(f"unknown key {name}.{k}")
    out = copy.deepcopy(defaults)
    out.update({k: v for k, v in given.items() if k in defaults})
    return out


def _check_synth(s, errors):
    if not _is_int(s["m"]) or s["m"] < 1:
        errors.append("synthesizer.m must be an integer >= 1")
    if s["kind"] == "mixture":
        for k in ("n_components", "n_draws", "thin"):
            if not _is_int(s[k]) or s[k] < 1:
                errors.append(f"synthesizer.{k} must be an integer >= 1")
        if not _is_int(s["burn_in"]) or s["burn_in"] < 0:
            errors.append("synthesizer.burn_in must be an integer >= 0")
        if not isinstance(s["alpha"], (int, float)) or isinstance(s["alpha"], bool) or s["alpha"] <= 0:
            errors.append("synthesizer.alpha must be > 0")
    else:
        if not _is_int(s["min_leaf"]) or s["min_leaf"] < 1:
            errors.append("synthesizer.min_leaf must be an integer >= 1")
        if s["max_depth"] is not None and (not _is_int(s["max_depth"]) or s["max_depth"] < 0):
            errors.append("synthesizer.max_depth must be null or an integer >= 0")
        if s["order"] is not None and not (isinstance(s["order"], list)
                                           and all(isinstance(x, str) for x in s["order"])):
            errors.append("synthesizer.order must be null or a list of variable names")


def _check_attribute(a, errors):
    if a["knowledge"] not in ("worst-case", "known-subset"):
        errors.append(f"attribute.knowledge must be worst-case or known-subset, got {a['knowledge']!r}")
    if not isinstance(a["known"], list) or not all(isinstance(x, str) for x in a["known"]):
        errors.append("attribute.known must be a list of variable names")
    if a["knowledge"] == "worst-case" and a["known"]:
        errors.append("attribute.known must be empty for worst-case knowledge")
    if a["guess_mode"] not in ("neighborhood", "full-enumeration"):
        errors.append(f"attribute.guess_mode must be neighborhood or full-enumeration, "
                      f"got {a['guess_mode']!r}")
    if not (a["prior"] == "uniform" or isinstance(a["prior"], list)):
        errors.append("attribute.prior must be \"uniform\" or a list of probabilities")
    if not _is_int(a["max_guesses"]) or a["max_guesses"] < 1:
        errors.append("attribute.max_guesses must be an integer >= 1")
    if a["coordinates"] is not None and not (isinstance(a["coordinates"], list)
                                             and len(a["coordinates"]) == 2):
        errors.append("attribute.coordinates must be null or two variable names")
    r = a["records"]
    if not (r == "all" or (isinstance(r, list) and all(_is_int(x) and x >= 1 for x in r))):
        errors.append("attribute.records must be \"all\" or a list of row ids")


def _check_identification(d, errors):
    if not isinstance(d["in_sample"], bool):
        errors.append("identification.in_sample must be true or false")
    if not isinstance(d["s_known"], bool):
        errors.append("identification.s_known must be true or false")
    if not _is_int(d["h"]) or d["h"] < 1:
        errors.append("identification.h must be an integer >= 1")
    ps, pt = d["population_size"], d["population_table"]
    if ps is not None and (not _is_int(ps) or ps < 1):
        errors.append("identification.population_size must be a positive integer")
    if ps is not None and pt is not None:
        errors.append("identification: give population_size or population_table, not both")
    if d["in_sample"] is False and ps is None and pt is None:
        errors.append("identification: in_sample = false requires population_size or "
                      "population_table")
    if not isinstance(d["radius"], dict):
        errors.append("identification.radius must be an object")
        return
    for name, entry in d["radius"].items():
        if isinstance(entry, (int, float)) and not isinstance(entry, bool):
            entry = {"radius": entry}
            d["radius"][name] = entry
        if not isinstance(entry, dict) or "radius" not in entry:
            errors.append(f"identification.radius.{name} must be a number or "
                          f"{{\"radius\": r, \"metric\": ...}}")
            continue
        entry.setdefault("metric", "absolute")
        r = entry["radius"]
        if not isinstance(r, (int, float)) or isinstance(r, bool) or not r > 0:
            errors.append(f"identification.radius.{name} must be > 0")
        if entry["metric"] not in ("absolute", "relative"):
            errors.append(f"identification.radius.{name}.metric must be absolute or relative")


def normalize(doc: dict, base_dir=".", overrides: dict | None = None):
    """Fill defaults and validate. Returns (RunConfig or None, violations)."""
    errors: list[str] = []
    doc = dict(doc)
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v
    for k in doc:
        if k not in TOP_DEFAULTS:
            errors.append(f"unknown key {k}")
    top = {**TOP_DEFAULTS, **{k: v for k, v in doc.items() if k in TOP_DEFAULTS}}

    if top["pipeline"] not in PIPELINES:
        errors.append(f"pipeline must be one of {', '.join(PIPELINES)}"
                      + ("" if top["pipeline"] is None else f", got {top['pipeline']!r}"))
    if top["seed"] is None:
        errors.append("seed required")
    elif not _is_int(top["seed"]) or top["seed"] < 0:
        errors.append("seed must be a non-negative integer")
    if not _is_int(top["jobs"]) or top["jobs"] == 0 or top["jobs"] < -1:
        errors.append("jobs must be a positive integer or -1")
    if not isinstance(top["summary_only"], bool):
        errors.append("summary_only must be true or false")

    base = Path(base_dir)
    for k in PATH_KEYS:
        if top[k] is not None:
            if not isinstance(top[k], str):
                errors.append(f"{k} must be a path string")
                top[k] = None
            else:
                top[k] = str((base / top[k]).resolve()) if not os.path.isabs(top[k]) else top[k]
    if top["out_dir"] is not None:
        top["out_dir"] = str((base / str(top["out_dir"])).resolve())

    synth = top["synthesizer"] or {}
    kind = synth.get("kind", "mixture") if isinstance(synth, dict) else "mixture"
    if kind not in SYNTH_DEFAULTS:
        errors.append(f"synthesizer.kind must be mixture or cart, got {kind!r}")
        kind = "mixture"
    top["synthesizer"] = _merge_section("synthesizer", top["synthesizer"], SYNTH_DEFAULTS[kind],
                                        errors)
    top["synthesizer"]["kind"] = kind
    _check_synth(top["synthesizer"], errors)
    top["attribute"] = _merge_section("attribute", top["attribute"], ATTRIBUTE_DEFAULTS, errors)
    _check_attribute(top["attribute"], errors)
    top["identification"] = _merge_section("identification", top["identification"],
                                           IDENTIFICATION_DEFAULTS, errors)
    _check_identification(top["identification"], errors)
    pt = top["identification"]["population_table"]
    if isinstance(pt, str) and not os.path.isabs(pt):
        top["identification"]["population_table"] = str((base / pt).resolve())

    pipeline = top["pipeline"]
    if pipeline in PIPELINES:
        for k in REQUIRED_PATHS[pipeline]:
            if top[k] is None:
                errors.append(f"{k} path required for the {pipeline} pipeline")
        for k in PATH_KEYS:
            if top[k] is not None and not Path(top[k]).is_file():
                errors.append(f"{k} file not found: {top[k]}")
        if pipeline in ("identification-risk", "full") and pt and not Path(pt).is_file():
            errors.append(f"population_table file not found: {pt}")
        errors.extend(_schema_checks(top, pipeline))

    if errors:
        return None, errors
    return RunConfig(**top), []


def _schema_checks(top, pipeline):
    """Checks that need the schema: radius coverage and variable names."""
    path = top["schema"]
    if path is None and top["release_manifest"] and Path(top["release_manifest"]).is_file():
        try:
            with open(top["release_manifest"], encoding="utf-8") as fh:
                path = str(Path(top["release_manifest"]).parent / json.load(fh)["schema"])
        except (OSError, ValueError, KeyError):
            return []
    if path is None or not Path(path).is_file():
        return []
    try:
        schema = load_schema(path)
    except (SchemaError, ValueError, KeyError) as e:
        return [f"schema {path}: {e}"]
    errors = []
    names = set(schema.names)
    if pipeline in ("identification-risk", "full"):
        radius = top["identification"]["radius"]
        if isinstance(radius, dict):
            for v in schema:
                if v.synthesized and v.intruder_known and not v.is_categorical \
                        and v.name not in radius:
                    errors.append(f"identification.radius missing for continuous synthesized "
                                  f"variable {v.name!r}")
            for name in radius:
                if name not in names:
                    errors.append(f"identification.radius names unknown variable {name!r}")
    if pipeline in ("attribute-risk", "full"):
        a = top["attribute"]
        for name in list(a["known"] or []) + list(a["coordinates"] or []):
            if isinstance(name, str) and name not in names:
                errors.append(f"attribute names unknown variable {name!r}")
    if pipeline in ("synthesize", "full") and top["synthesizer"]["kind"] == "mixture":
        for v in schema:
            if v.synthesized and not v.is_categorical:
                errors.append(f"mixture synthesizer cannot synthesize continuous variable "
                              f"{v.name!r}; use kind \"cart\"")
    return errors


def validate_config(path, overrides: dict | None = None):
    """Normalized RunConfig, or raise ConfigError listing every violation."""
    doc = read_document(path)
    cfg, errors = normalize(doc, Path(path).resolve().parent, overrides)
    if errors:
        raise ConfigError(errors)
    return cfg
