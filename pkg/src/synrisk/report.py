"""Risk reports: versioned JSON, a fixed-width text digest and CSV tables.

The report body is a pure function of inputs, configuration and seed; the
header carries the run timestamp and is the only part that varies between
identical runs.
"""

from __future__ import annotations

import csv
import json
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

REPORT_VERSION = 1
DIGEST_MAX_ROWS = 10_000


def _clean(x):
    """Plain-JSON form: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def attribute_section(result, schema, summary_only=False) -> dict:
    ranks = result.ranks
    total = sum(ranks.rank_counts.values())
    table = [{"rank": int(k), "count": int(v), "fraction": v / total}
             for k, v in sorted(ranks.rank_counts.items())]
    sec = {
        "n_records": len(result.records),
        "rank_distribution": table,
        "mean_true_probability": ranks.mean_probability,
        "median_true_probability": ranks.median_probability,
    }
    if result.geo is not None:
        sec["geo"] = result.geo
    if result.map_match is not None:
        mm = result.map_match
        sec["map_match"] = {"pct_map_true": mm.pct_map_true,
                            "pct_map_true_unique": mm.pct_map_true_unique,
                            "mean_mode_distance": mm.mean_mode_distance}
    if not summary_only:
        recs = []
        for r in result.records:
            gs = r.guess_set
            row = {"row_id": r.row_id, "rank": r.rank, "true_probability": r.true_probability,
                   "max_probability": float(np.max(r.posterior)), "n_guesses": len(gs),
                   "dropped_draws": r.dropped_draws,
                   "variables": [schema[j].name for j in gs.variables],
                   "true_position": gs.true_position,
                   "posterior": r.posterior}
            if r.geo is not None:
                row.update(r1=r.geo.r1, r2=r.geo.r2, mode_tie=r.geo.tie)
            if gs.mode != "explicit":
                row["guesses"] = gs.guesses.astype(np.int64)
            recs.append(row)
        sec["records"] = recs
    return sec


def identification_section(result, summary_only=False) -> dict:
    s = result.summary
    sec = {
        "n_targets": len(result.matches),
        "n_evaluated": s.n_targets,
        "excluded_targets": s.excluded,
        "expected_match_risk": s.expected_match_risk,
        "true_match_rate": s.true_match_rate,
        "false_match_rate": s.false_match_rate,
        "unique_matches": s.n_unique,
        "no_unique_matches": s.no_unique_matches,
    }
    if not summary_only:
        tg = []
        for m in result.matches:
            nz = m.probabilities > 0
            tg.append({"target_id": m.target_id, "true_row_id": m.true_row_id, "c": m.c,
                       "T": m.T, "K": m.K, "F": m.F,
                       "p_not_in_release": m.p_not_in_release,
                       "match_probabilities": {str(int(r) + 1): float(p) for r, p in
                                               zip(m.rows[nz], m.probabilities[nz])}})
        sec["targets"] = tg
    return sec


def build_report(config, tool_version, attribute=None, identification=None, release=None,
                 warnings=(), created=None) -> dict:
    body = {"pipeline": config.pipeline, "seed": config.seed}
    if release is not None:
        body["release"] = release
    if attribute is not None:
        body["attribute"] = attribute
    if identification is not None:
        body["identification"] = identification
    body["warnings"] = list(warnings)
    created = created or datetime.now(timezone.utc).replace(microsecond=0).isoformat()
    header = {"tool_version": tool_version, "config_hash": config.config_hash(),
              "created": created}
    return {"report_version": REPORT_VERSION, "header": header, "body": _clean(body)}


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def body_bytes(report) -> bytes:
    return dumps(report["body"]).encode()


def text_digest(report) -> str:
    h, b = report["header"], report["body"]
    out = [f"synrisk report v{report['report_version']}  tool {h['tool_version']}",
           f"config {h['config_hash'][:16]}  created {h['created']}",
           f"pipeline {b['pipeline']}  seed {b['seed']}", ""]
    if "release" in b:
        r = b["release"]
        out.append(f"release: {r.get('synthesizer')}  m={r.get('m')}  n={r.get('n_records')}"
                   f"  draws={r.get('n_draws')}")
        out.append("")
    a = b.get("attribute")
    if a is not None:
        out.append("ATTRIBUTE DISCLOSURE")
        out.append(f"  records assessed        {a['n_records']:>10d}")
        out.append(f"  mean Pr(true guess)     {a['mean_true_probability']:>10.4f}")
        out.append(f"  median Pr(true guess)   {a['median_true_probability']:>10.4f}")
        out.append("  rank   count   fraction")
        for row in a["rank_distribution"]:
            out.append(f"  {row['rank']:>4d} {row['count']:>7d} {row['fraction']:>10.4f}")
        if "geo" in a:
            g = a["geo"]
            out.append(f"  R1 mean/median          {g['mean_r1']:>10.4f} {g['median_r1']:>10.4f}")
            out.append(f"  R2 mean/median          {g['mean_r2']:>10.4f} {g['median_r2']:>10.4f}")
        if "map_match" in a:
            mm = a["map_match"]
            out.append(f"  % MAP = truth           {mm['pct_map_true']:>10.2f}")
            out.append(f"  % MAP = truth, unique   {mm['pct_map_true_unique']:>10.2f}")
            out.append(f"  mean mode distance      {mm['mean_mode_distance']:>10.4f}")
        recs = a.get("records")
        if recs:
            out.append("  row_id   rank    Pr(true)     Pr(max)  guesses")
            for r in recs[:DIGEST_MAX_ROWS]:
                out.append(f"  {r['row_id']:>6d} {r['rank']:>6d} {r['true_probability']:>11.6f}"
                           f" {r['max_probability']:>11.6f} {r['n_guesses']:>8d}")
            if len(recs) > DIGEST_MAX_ROWS:
                out.append(f"  ... {len(recs) - DIGEST_MAX_ROWS} more rows in report.json")
        out.append("")
    d = b.get("identification")
    if d is not None:
        out.append("IDENTIFICATION DISCLOSURE")
        out.append(f"  targets                 {d['n_targets']:>10d}")
        out.append(f"  excluded (no true row)  {d['excluded_targets']:>10d}")
        out.append(f"  expected match risk     {d['expected_match_risk']:>10.4f}")
        out.append(f"  true match rate         {d['true_match_rate']:>10.4f}")
        out.append(f"  false match rate        {d['false_match_rate']:>10.4f}"
                   + ("  (no unique matches)" if d["no_unique_matches"] else ""))
        tg = d.get("targets")
        if tg:
            out.append("  target_id            true_row      c  T  K  F  Pr(not in release)")
            for t in tg[:DIGEST_MAX_ROWS]:
                def bit(x):
                    return "-" if x is None else str(x)
                tr = "-" if t["true_row_id"] is None else str(t["true_row_id"])
                out.append(f"  {str(t['target_id'])[:20]:<20} {tr:>8} {t['c']:>6d}"
                           f"  {bit(t['T'])}  {bit(t['K'])}  {bit(t['F'])}"
                           f"  {t['p_not_in_release']:>10.6f}")
            if len(tg) > DIGEST_MAX_ROWS:
                out.append(f"  ... {len(tg) - DIGEST_MAX_ROWS} more rows in report.json")
        out.append("")
    if b["warnings"]:
        out.append("WARNINGS")
        out.extend(f"  - {w}" for w in b["warnings"])
    return "\n".join(out).rstrip() + "\n"


def write_tables(report, out_dir) -> list[str]:
    """Plot-ready CSV tables next to the report."""
    out_dir = Path(out_dir)
    written = []
    b = report["body"]
    a = b.get("attribute")
    if a is not None:
        p = out_dir / "rank_distribution.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "count", "fraction"])
            for row in a["rank_distribution"]:
                w.writerow([row["rank"], row["count"], repr(row["fraction"])])
        written.append(str(p))
        if a.get("records"):
            p = out_dir / "attribute_records.csv"
            geo = "r1" in a["records"][0]
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["row_id", "rank", "true_probability", "max_probability", "n_guesses"]
                           + (["r1", "r2"] if geo else []))
                for r in a["records"]:
                    w.writerow([r["row_id"], r["rank"], repr(r["true_probability"]),
                                repr(r["max_probability"]), r["n_guesses"]]
                               + ([repr(r["r1"]), r["r2"]] if geo else []))
            written.append(str(p))
    d = b.get("identification")
    if d is not None and d.get("targets"):
        p = out_dir / "identification_targets.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["target_id", "true_row_id", "c", "T", "K", "F", "p_not_in_release"])
            for t in d["targets"]:
                w.writerow([t["target_id"], "" if t["true_row_id"] is None else t["true_row_id"],
                            t["c"], "" if t["T"] is None else t["T"],
                            "" if t["K"] is None else t["K"], "" if t["F"] is None else t["F"],
                            repr(t["p_not_in_release"])])
        written.append(str(p))
    return written


def write_report(report, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"json": str(out_dir / "report.json"), "text": str(out_dir / "report.txt")}
    Path(paths["json"]).write_text(dumps(report), encoding="utf-8")
    Path(paths["text"]).write_text(text_digest(report), encoding="utf-8")
    paths["tables"] = write_tables(report, out_dir)
    return paths
