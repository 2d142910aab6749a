"""Command-line entry point: synthesize, assess and report.

Exit status is 0 on success, 2 for configuration and input errors (bad or
missing files, schema violations) and 1 for any other failure. Failures print
a one-line JSON error record to stderr.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import traceback
from importlib import resources
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import __version__
from .attribute import AttributeRiskEstimator
from .config import ConfigError, ConfigParseError, normalize, read_document, validate_config
from .data import DataParseError, SchemaError, load_dataset, load_schema, load_targets
from .identification import IdentificationRiskEstimator
from .report import attribute_section, build_report, identification_section, write_report
from .synthesis import (CartSynthesizer, MixtureSynthesizer, SyntheticRelease, read_release,
                        write_release)

logger = logging.getLogger("synrisk")

OUT_DIR_ENV = "SYNRISK_OUT_DIR"
DEFAULT_OUT_DIR = "synrisk-out"
INPUT_ERRORS = (ConfigError, ConfigParseError, FileNotFoundError, SchemaError, DataParseError)


class _WarningLog(logging.Handler):
    """Collects warnings logged by the library so every report warning has a
    matching log event."""

    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages = []

    def emit(self, record):
        self.messages.append(record.getMessage())


def _sub_seeds(seed):
    # independent streams for synthesis and identification Monte Carlo
    a, b = np.random.SeedSequence(seed).generate_state(2)
    return int(a), int(b)


def load_population_table(path) -> dict:
    df = pd.read_csv(path, dtype={"target_id": str})
    missing = {"target_id", "N_t"} - set(df.columns)
    if missing:
        raise DataParseError(f"{path}: population table needs columns target_id,N_t")
    return dict(zip(df["target_id"], df["N_t"].astype(int)))


def _release_info(release: SyntheticRelease, manifest=None):
    info = {"synthesizer": release.synthesizer, "m": release.m, "n_records": release.n,
            "n_draws": release.H}
    if manifest is not None:
        info["manifest"] = os.path.basename(manifest)
    return info


def _synthesize(cfg, data, seed):
    s = dict(cfg.synthesizer)
    kind, m = s.pop("kind"), s.pop("m")
    if kind == "mixture":
        est = MixtureSynthesizer(random_state=seed, **s)
    else:
        est = CartSynthesizer(random_state=seed, **s)
    return est.fit(data).sample(data, m=m)


def _attribute(cfg, release, data, summary_only):
    a = cfg.attribute
    est = AttributeRiskEstimator(
        knowledge=a["knowledge"], known=tuple(a["known"]), prior=a["prior"],
        guess_mode=a["guess_mode"], max_guesses=a["max_guesses"],
        coordinates=None if a["coordinates"] is None else tuple(a["coordinates"]),
        grid=a["grid"], bandwidth=a["bandwidth"], n_jobs=cfg.jobs)
    result = est.fit(release, data).assess(None if a["records"] == "all" else a["records"])
    return attribute_section(result, release.schema, summary_only)


def _identification(cfg, release, seed, summary_only):
    d = cfg.identification
    targets = load_targets(cfg.targets, release.schema)
    population = d["population_size"]
    if d["population_table"]:
        population = load_population_table(d["population_table"])
    radius = {k: (v["radius"], v["metric"]) for k, v in d["radius"].items()}
    est = IdentificationRiskEstimator(in_sample=d["in_sample"], population_size=population,
                                      radius=radius, h=d["h"], s_known=d["s_known"],
                                      n_jobs=cfg.jobs, random_state=seed)
    return identification_section(est.fit(release).assess(targets), summary_only)


def run(cfg, out_dir=None, created=None):
    """Execute the configured pipeline and write the report.

    Returns (report dict, written paths).
    """
    out_dir = Path(out_dir or cfg.out_dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)
    out_dir.mkdir(parents=True, exist_ok=True)
    synth_seed, ident_seed = _sub_seeds(cfg.seed)
    handler = _WarningLog()
    root = logging.getLogger("synrisk")
    root.addHandler(handler)
    try:
        release = manifest = data = None
        attribute = identification = None
        if cfg.pipeline in ("synthesize", "full", "attribute-risk"):
            schema = load_schema(cfg.schema) if cfg.schema else None
            if cfg.pipeline == "attribute-risk":
                release = read_release(cfg.release_manifest, schema)
                schema = release.schema
            data = load_dataset(cfg.data, schema)
        if cfg.pipeline in ("synthesize", "full"):
            release = _synthesize(cfg, data, synth_seed)
            manifest = write_release(release, out_dir / "release")
        if cfg.pipeline == "identification-risk":
            schema = load_schema(cfg.schema) if cfg.schema else None
            release = read_release(cfg.release_manifest, schema)
            manifest = cfg.release_manifest
            if cfg.data:
                release.check_unsynthesized(load_dataset(cfg.data, release.schema))
        if cfg.pipeline == "attribute-risk":
            manifest = cfg.release_manifest
        if cfg.pipeline in ("attribute-risk", "full"):
            attribute = _attribute(cfg, release, data, cfg.summary_only)
        if cfg.pipeline in ("identification-risk", "full"):
            identification = _identification(cfg, release, ident_seed, cfg.summary_only)
    finally:
        root.removeHandler(handler)
    report = build_report(cfg, __version__, attribute, identification,
                          _release_info(release, manifest), handler.messages, created)
    return report, write_report(report, out_dir)


def error_record(exc) -> dict:
    """Machine-readable description of a failure: module, operation, message."""
    frames = [f for f in traceback.extract_tb(exc.__traceback__) if "synrisk" in f.filename]
    frame = frames[-1] if frames else None
    module = Path(frame.filename).stem if frame else "cli"
    rec = {"error": type(exc).__name__, "module": module,
           "operation": frame.name if frame else None, "message": str(exc)}
    for attr in ("violations", "path", "line", "column", "filename"):
        val = getattr(exc, attr, None)
        if val is not None:
            rec[attr] = val
    return rec


def _fail(exc):
    click.echo(json.dumps(error_record(exc), sort_keys=True), err=True)
    sys.exit(2 if isinstance(exc, INPUT_ERRORS) else 1)


def toy_dir() -> Path:
    return Path(str(resources.files("synrisk") / "toy"))


def _resolve(ctx, pipeline, flags):
    """Config from --config (if any) with command-line flags layered on top."""
    g = ctx.obj
    overrides = {"pipeline": pipeline, "seed": g["seed"], "jobs": g["jobs"],
                 "out_dir": g["out_dir"], "summary_only": g["summary_only"] or None}
    overrides.update({k: (str(Path(v).resolve()) if isinstance(v, str) else v)
                      for k, v in flags.items() if v is not None})
    if g["config"]:
        return validate_config(g["config"], overrides)
    cfg, errors = normalize({}, Path.cwd(), overrides)
    if errors:
        raise ConfigError(errors)
    return cfg


def _execute(ctx, pipeline, **flags):
    try:
        cfg = _resolve(ctx, pipeline, flags)
        _, paths = run(cfg)
    except Exception as exc:  # every failure becomes an error record
        _fail(exc)
    click.echo(paths["json"])


_path = click.Path(dir_okay=False)


@click.group()
@click.option("--config", "config", type=_path, help="Run configuration (JSON).")
@click.option("--seed", type=int, help="Random seed (required here or in the config).")
@click.option("--jobs", type=int, help="Parallel workers (-1 for all cores).")
@click.option("--out-dir", type=click.Path(file_okay=False),
              help=f"Output directory (default ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR}).")
@click.option("--summary-only", is_flag=True, help="Omit per-record and per-target detail.")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.version_option(__version__, prog_name="synrisk")
@click.pass_context
def main(ctx, config, seed, jobs, out_dir, summary_only, verbose):
    """Disclosure risk assessment for synthetic microdata."""
    logging.basicConfig(level=logging.INFO if verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {"config": config, "seed": seed, "jobs": jobs, "out_dir": out_dir,
               "summary_only": summary_only}


@main.command()
@click.option("--data", type=_path, help="Confidential data CSV.")
@click.option("--schema", type=_path, help="Schema JSON.")
@click.pass_context
def synthesize(ctx, data, schema):
    """Fit the configured synthesizer and write a release."""
    _execute(ctx, "synthesize", data=data, schema=schema)


@main.command("attribute-risk")
@click.option("--release-manifest", type=_path)
@click.option("--schema", type=_path)
@click.option("--data", type=_path, help="Confidential data CSV.")
@click.option("--scenario", type=_path, help="Scenario JSON (attribute section keys).")
@click.option("--records", help='"all" or comma-separated row ids.')
@click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
@click.pass_context
def attribute_risk(ctx, release_manifest, schema, data, scenario, records, out):
    """Attribute disclosure risk for a release."""
    attribute = None
    try:
        if scenario or records:
            attribute = read_document(scenario) if scenario else {}
            if records:
                attribute["records"] = ("all" if records == "all" else
                                        [int(x) for x in records.split(",")])
            if ctx.obj["config"]:
                base = read_document(ctx.obj["config"]).get("attribute") or {}
                attribute = {**base, **attribute}
    except (ValueError, FileNotFoundError) as exc:
        _fail(exc)
    if out:
        ctx.obj["out_dir"] = out
    _execute(ctx, "attribute-risk", release_manifest=release_manifest, schema=schema,
             data=data, attribute=attribute)


@main.command("identification-risk")
@click.option("--release-manifest", type=_path)
@click.option("--schema", type=_path)
@click.option("--data", type=_path, help="Confidential data CSV (consistency check only).")
@click.option("--targets", type=_path, help="Targets CSV.")
@click.option("--config", "match_config", type=_path, help="Matching configuration JSON.")
@click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
@click.pass_context
def identification_risk(ctx, release_manifest, schema, data, targets, match_config, out):
    """Identification disclosure risk for a set of targets."""
    ident = None
    try:
        if match_config:
            ident = read_document(match_config)
            table = ident.get("population_table")
            if isinstance(table, str) and not os.path.isabs(table):
                ident["population_table"] = str(Path(match_config).resolve().parent / table)
    except (ValueError, FileNotFoundError) as exc:
        _fail(exc)
    if out:
        ctx.obj["out_dir"] = out
    _execute(ctx, "identification-risk", release_manifest=release_manifest, schema=schema,
             data=data, targets=targets, identification=ident)


@main.command()
@click.option("--data", type=_path)
@click.option("--schema", type=_path)
@click.option("--targets", type=_path)
@click.option("--toy", is_flag=True, help="Run on the bundled 50-record example.")
@click.pass_context
def full(ctx, data, schema, targets, toy):
    """Synthesize, then assess attribute and identification risk."""
    if toy and not ctx.obj["config"]:
        ctx.obj["config"] = str(toy_dir() / "config.json")
    _execute(ctx, "full", data=data, schema=schema, targets=targets)


@main.command()
@click.argument("path", type=_path)
@click.pass_context
def validate(ctx, path):
    """Check a run configuration and print it with every default filled in."""
    try:
        cfg = validate_config(path)
    except Exception as exc:
        _fail(exc)
    doc = cfg.to_dict()
    doc["config_hash"] = cfg.config_hash()
    click.echo(json.dumps(doc, sort_keys=True, indent=1))


if __name__ == "__main__":
    main()
