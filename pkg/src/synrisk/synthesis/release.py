"""SyntheticRelease container and its on-disk layout.

A release directory holds::

    manifest.json     format/version tag, provenance, file references
    schema.json       the schema the release conforms to
    release_01.csv .. one CSV per synthetic dataset
    draws.json        retained parameter draws (layout in README)
"""

from __future__ import annotations

import json
import os

import numpy as np

from ..data import Dataset, Schema, SchemaError, load_dataset, load_schema, write_dataset, \
    write_schema

MANIFEST_FORMAT = "synrisk-release"
MANIFEST_VERSION = 1


class SyntheticRelease:
    """m synthetic datasets plus the synthesizer's retained draws."""

    def __init__(self, datasets, draws, provenance=None):
        datasets = list(datasets)
        if not datasets:
            raise ValueError("a release needs at least one dataset")
        if draws is None or len(draws) < 1:
            raise ValueError("a release needs at least one retained draw")
        first = datasets[0]
        for d in datasets[1:]:
            if d.schema != first.schema or d.n != first.n:
                raise SchemaError("release datasets differ in schema or size")
        self.datasets = datasets
        self.draws = draws
        self.provenance = dict(provenance or {})

    @property
    def m(self) -> int:
        return len(self.datasets)

    @property
    def H(self) -> int:
        return len(self.draws)

    @property
    def schema(self) -> Schema:
        return self.datasets[0].schema

    @property
    def n(self) -> int:
        return self.datasets[0].n

    @property
    def synthesizer(self) -> str:
        return self.draws.kind

    def synthesized_columns(self, l, variables=None) -> np.ndarray:
        """Synthesized columns of release ``l`` (schema order)."""
        idx = self.schema.synthesized if variables is None else list(variables)
        return self.datasets[l].values[:, idx]

    def check_unsynthesized(self, confidential: Dataset) -> None:
        """Raise unless every un-synthesized cell equals the confidential one."""
        us = self.schema.unsynthesized
        for l, d in enumerate(self.datasets):
            if d.n != confidential.n:
                raise SchemaError(f"release {l + 1}: {d.n} rows, confidential has {confidential.n}")
            if us and not np.array_equal(d.values[:, us], confidential.values[:, us]):
                raise SchemaError(f"release {l + 1}: un-synthesized columns were altered")


def _draws_to_json(draws, schema: Schema) -> dict:
    names = schema.names
    if draws.kind == "mixture":
        return {
            "format": "synrisk-mixture-draws",
            "version": 1,
            "variables": [names[j] for j in draws.variables],
            "synthesized": [names[j] for j in draws.synthesized],
            "cardinalities": list(draws.cardinalities),
            "weights": draws.weights.tolist(),
            "multinomials": [
                [draws.phi[h, :, j, :k].tolist() for j, k in enumerate(draws.cardinalities)]
                for h in range(len(draws))
            ],
        }
    return draws.to_json(schema)


def _draws_from_json(doc: dict, schema: Schema):
    fmt = doc.get("format")
    if fmt == "synrisk-mixture-draws":
        if doc.get("version") != 1:
            raise ValueError(f"unsupported mixture draws version {doc.get('version')!r}")
        from .mixture import MixtureDraws
        variables = [schema.index(v) for v in doc["variables"]]
        synthesized = [schema.index(v) for v in doc["synthesized"]]
        cards = doc["cardinalities"]
        w = np.asarray(doc["weights"], dtype=np.float64)
        H, C = w.shape
        phi = np.zeros((H, C, len(cards), max(cards)))
        for h, mats in enumerate(doc["multinomials"]):
            for j, mat in enumerate(mats):
                phi[h, :, j, : cards[j]] = mat
        return MixtureDraws(variables, synthesized, cards, w, phi)
    if fmt == "synrisk-cart-model":
        from .cart import CartDraws
        return CartDraws.from_json(doc, schema)
    raise ValueError(f"unknown draws format {fmt!r}")


def write_release(release: SyntheticRelease, out_dir) -> str:
    """Write the release directory; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    schema = release.schema
    write_schema(schema, os.path.join(out_dir, "schema.json"))
    files = []
    for l, d in enumerate(release.datasets):
        fname = f"release_{l + 1:02d}.csv"
        write_dataset(d, os.path.join(out_dir, fname))
        files.append(fname)
    with open(os.path.join(out_dir, "draws.json"), "w", encoding="utf-8") as fh:
        json.dump(_draws_to_json(release.draws, schema), fh)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "synthesizer": release.synthesizer,
        "provenance": release.provenance,
        "n_records": release.n,
        "m": release.m,
        "n_draws": release.H,
        "schema": "schema.json",
        "datasets": files,
        "draws": "draws.json",
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, (tuple, set)):
        return list(o)
    return str(o)


def read_release(manifest_path, schema: Schema | None = None) -> SyntheticRelease:
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{manifest_path}: not a release manifest")
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{manifest_path}: unsupported manifest version {manifest.get('version')!r}")
    base = os.path.dirname(os.path.abspath(manifest_path))
    stored = load_schema(os.path.join(base, manifest["schema"]))
    if schema is not None and schema != stored:
        raise SchemaError(f"{manifest_path}: release schema differs from the supplied schema")
    schema = stored
    datasets = [load_dataset(os.path.join(base, f), schema) for f in manifest["datasets"]]
    with open(os.path.join(base, manifest["draws"]), encoding="utf-8") as fh:
        draws = _draws_from_json(json.load(fh), schema)
    return SyntheticRelease(datasets, draws, manifest.get("provenance", {}))
