"""Schemas, datasets and target files.

Categorical cells are stored as integer level codes inside a float64 matrix
(codes are exact in float64); continuous cells are stored as-is.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"


class SchemaError(ValueError):
    """Schema definition or data/schema conformance problem."""


class DataRangeError(SchemaError):
    """A continuous value outside its declared bounds."""


class DataParseError(ValueError):
    """Malformed input file (ragged rows, bad numbers, missing columns)."""


@dataclass(frozen=True)
class VariableDef:
    name: str
    kind: str
    levels: tuple[str, ...] = ()
    lower: float | None = None
    upper: float | None = None
    synthesized: bool = False
    intruder_known: bool = False

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise SchemaError(f"invalid variable name {self.name!r}")
        if self.kind == CATEGORICAL:
            object.__setattr__(self, "levels", tuple(str(lv) for lv in self.levels))
            if len(self.levels) < 2:
                raise SchemaError(f"variable {self.name!r}: categorical needs >= 2 levels")
            if len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"variable {self.name!r}: duplicate level labels")
        elif self.kind == CONTINUOUS:
            if self.lower is None or self.upper is None:
                raise SchemaError(f"variable {self.name!r}: continuous needs lower and upper")
            if not float(self.lower) < float(self.upper):
                raise SchemaError(f"variable {self.name!r}: lower must be < upper")
            object.__setattr__(self, "lower", float(self.lower))
            object.__setattr__(self, "upper", float(self.upper))
        else:
            raise SchemaError(f"variable {self.name!r}: unknown kind {self.kind!r}")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    @property
    def cardinality(self) -> int:
        if not self.is_categorical:
            raise SchemaError(f"variable {self.name!r} is continuous")
        return len(self.levels)

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.is_categorical:
            d["levels"] = list(self.levels)
        else:
            d["lower"] = self.lower
            d["upper"] = self.upper
        d["synthesized"] = self.synthesized
        d["intruder_known"] = self.intruder_known
        return d


def categorical(name, levels, synthesized=False, intruder_known=False) -> VariableDef:
    if isinstance(levels, int):
        levels = [str(k) for k in range(levels)]
    return VariableDef(name, CATEGORICAL, tuple(levels), synthesized=synthesized,
                       intruder_known=intruder_known)


def continuous(name, lower, upper, synthesized=False, intruder_known=False) -> VariableDef:
    return VariableDef(name, CONTINUOUS, lower=lower, upper=upper, synthesized=synthesized,
                       intruder_known=intruder_known)


@dataclass(frozen=True)
class Schema:
    variables: tuple[VariableDef, ...]

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise SchemaError("variable names must be unique")
        if not any(v.synthesized for v in self.variables):
            raise SchemaError("at least one variable must be synthesized")

    def __len__(self):
        return len(self.variables)

    def __iter__(self):
        return iter(self.variables)

    def __getitem__(self, key) -> VariableDef:
        if isinstance(key, str):
            return self.variables[self.index(key)]
        return self.variables[key]

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def index(self, name: str) -> int:
        for j, v in enumerate(self.variables):
            if v.name == name:
                return j
        raise SchemaError(f"unknown variable {name!r}")

    @property
    def synthesized(self) -> list[int]:
        return [j for j, v in enumerate(self.variables) if v.synthesized]

    @property
    def unsynthesized(self) -> list[int]:
        return [j for j, v in enumerate(self.variables) if not v.synthesized]

    @property
    def categorical(self) -> list[int]:
        return [j for j, v in enumerate(self.variables) if v.is_categorical]

    @property
    def fully_synthetic(self) -> bool:
        return all(v.synthesized for v in self.variables)

    def cardinalities(self, indices: Sequence[int] | None = None) -> list[int]:
        idx = range(len(self)) if indices is None else indices
        return [self.variables[j].cardinality for j in idx]

    def to_dict(self) -> dict:
        return {"variables": [v.to_dict() for v in self.variables]}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Schema":
        try:
            entries = doc["variables"]
        except (KeyError, TypeError):
            raise SchemaError("schema document needs a 'variables' list") from None
        out = []
        for e in entries:
            out.append(VariableDef(
                name=e.get("name"),
                kind=e.get("kind"),
                levels=tuple(e.get("levels", ())),
                lower=e.get("lower"),
                upper=e.get("upper"),
                synthesized=bool(e.get("synthesized", False)),
                intruder_known=bool(e.get("intruder_known", False)),
            ))
        return cls(tuple(out))


def load_schema(path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return Schema.from_dict(json.load(fh))


def write_schema(schema: Schema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class Partition:
    synthesized: tuple[int, ...]
    unsynthesized: tuple[int, ...]
    known_synthesized: tuple[int, ...]
    known_unsynthesized: tuple[int, ...]
    fully_synthetic: bool


def partition(schema: Schema) -> Partition:
    """Split variable indices into synthesized/un-synthesized and their
    intruder-known subsets."""
    s = tuple(schema.synthesized)
    us = tuple(schema.unsynthesized)
    return Partition(
        synthesized=s,
        unsynthesized=us,
        known_synthesized=tuple(j for j in s if schema[j].intruder_known),
        known_unsynthesized=tuple(j for j in us if schema[j].intruder_known),
        fully_synthetic=not us,
    )


def enumerate_cells(schema_or_cards) -> int:
    """Number of cells in the full contingency table.

    Accepts a Schema (every variable must be categorical) or a sequence of
    cardinalities. Python ints are unbounded; the result is additionally
    checked against int64 so it stays usable as an array size.
    """
    if isinstance(schema_or_cards, Schema):
        for v in schema_or_cards:
            if not v.is_categorical:
                raise SchemaError(f"cannot enumerate cells: {v.name!r} is continuous")
        cards = schema_or_cards.cardinalities()
    else:
        cards = [int(k) for k in schema_or_cards]
    total = math.prod(cards)
    if total > np.iinfo(np.int64).max:
        raise OverflowError(f"contingency table has {total} cells, exceeds int64")
    return total


class Dataset:
    """Validated rectangular microdata.

    ``values`` is an (n, p) float64 matrix; categorical columns hold level
    codes. ``row_ids`` are 1..n and stand in for the never-released identifier.
    """

    def __init__(self, schema: Schema, values, row_ids=None, validate=True):
        values = np.array(values, dtype=np.float64, copy=True)
        if values.ndim == 1 and values.size == 0:
            values = values.reshape(0, len(schema))
        if values.ndim != 2 or values.shape[1] != len(schema):
            raise SchemaError(
                f"values must have shape (n, {len(schema)}), got {values.shape}")
        n = values.shape[0]
        if row_ids is None:
            row_ids = np.arange(1, n + 1, dtype=np.int64)
        else:
            row_ids = np.asarray(row_ids, dtype=np.int64).copy()
            if sorted(row_ids.tolist()) != list(range(1, n + 1)):
                raise SchemaError("row_ids must be unique and dense in [1, n]")
        if validate:
            _check_values(schema, values)
        values.setflags(write=False)
        row_ids.setflags(write=False)
        self.schema = schema
        self.values = values
        self.row_ids = row_ids

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __len__(self):
        return self.n

    def codes(self, indices) -> np.ndarray:
        """Integer level codes for the given (categorical) columns."""
        return self.values[:, list(indices)].astype(np.int64)

    def column(self, name_or_index) -> np.ndarray:
        j = self.schema.index(name_or_index) if isinstance(name_or_index, str) else name_or_index
        return self.values[:, j]

    def with_values(self, values, validate=True) -> "Dataset":
        return Dataset(self.schema, values, self.row_ids, validate=validate)

    def to_frame(self) -> pd.DataFrame:
        cols = {}
        for j, v in enumerate(self.schema):
            col = self.values[:, j]
            if v.is_categorical:
                cols[v.name] = np.asarray(v.levels, dtype=object)[col.astype(np.int64)]
            else:
                cols[v.name] = col
        return pd.DataFrame(cols, columns=self.schema.names)

    def __repr__(self):
        return f"Dataset(n={self.n}, p={len(self.schema)})"


def _check_values(schema: Schema, values: np.ndarray) -> None:
    if np.isnan(values).any():
        i, j = np.argwhere(np.isnan(values))[0]
        raise SchemaError(f"missing value at row {i + 1}, column {schema[j].name!r}")
    for j, v in enumerate(schema):
        col = values[:, j]
        if v.is_categorical:
            bad = (col < 0) | (col >= v.cardinality) | (col != np.floor(col))
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise SchemaError(
                    f"row {i + 1}, column {v.name!r}: code {col[i]!r} is not a declared level")
        else:
            bad = (col < v.lower) | (col > v.upper)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise DataRangeError(
                    f"row {i + 1}, column {v.name!r}: {col[i]!r} outside "
                    f"[{v.lower}, {v.upper}]")


def _read_csv_strings(path, required: Sequence[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False,
                            encoding="utf-8", engine="c")
    except pd.errors.ParserError as exc:
        raise DataParseError(f"{path}: {exc}") from None
    except pd.errors.EmptyDataError:
        raise DataParseError(f"{path}: file is empty (header row required)") from None
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataParseError(f"{path}: missing columns {missing}")
    return frame


def _check_ragged(path) -> None:
    # pandas silently pads short rows; a plain csv pass catches them
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if row and len(row) != width:
                raise DataParseError(
                    f"{path}: line {lineno} has {len(row)} fields, expected {width}")


def _parse_column(var: VariableDef, raw: np.ndarray, what: str) -> np.ndarray:
    if var.is_categorical:
        cat = pd.Categorical(raw, categories=list(var.levels))
        codes = np.asarray(cat.codes, dtype=np.float64)
        if (codes < 0).any():
            i = int(np.flatnonzero(codes < 0)[0])
            raise SchemaError(
                f"{what}: row {i + 1}, column {var.name!r}: level {raw[i]!r} not in schema")
        return codes
    try:
        # Python's float() is correctly rounded; pandas' fast parser is not
        vals = np.array([float(s) for s in raw], dtype=np.float64)
    except (ValueError, TypeError):
        bad = next(i for i, s in enumerate(raw) if not _is_float(s))
        raise DataParseError(
            f"{what}: row {bad + 1}, column {var.name!r}: {raw[bad]!r} is not a number") from None
    return vals


def _is_float(s) -> bool:
    try:
        float(s)
    except (TypeError, ValueError):
        return False
    return True


def load_dataset(path, schema: Schema, check_ragged=True) -> Dataset:
    """Read a UTF-8 CSV whose header names the schema variables."""
    if check_ragged:
        _check_ragged(path)
    frame = _read_csv_strings(path, schema.names)
    values = np.empty((len(frame), len(schema)), dtype=np.float64)
    for j, v in enumerate(schema):
        raw = frame[v.name].to_numpy(dtype=object)
        if len(raw) and (raw == "").any():
            i = int(np.flatnonzero(raw == "")[0])
            raise SchemaError(f"{path}: missing value at row {i + 1}, column {v.name!r}")
        values[:, j] = _parse_column(v, raw, str(path))
    return Dataset(schema, values)


def write_dataset(dataset: Dataset, path) -> None:
    # float repr round-trips exactly; read back with load_dataset
    frame = dataset.to_frame()
    for j, v in enumerate(dataset.schema):
        if not v.is_categorical:
            frame[v.name] = [repr(float(x)) for x in dataset.values[:, j]]
    frame.to_csv(path, index=False, lineterminator="\n")


@dataclass(frozen=True)
class Target:
    target_id: str
    known: Mapping[int, float]  # variable index -> code/value
    true_row_id: int | None = None


@dataclass(frozen=True)
class TargetFile:
    schema: Schema
    targets: tuple[Target, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        ids = [t.target_id for t in self.targets]
        if len(set(ids)) != len(ids):
            raise SchemaError("target ids must be unique")
        for t in self.targets:
            for j in t.known:
                if not self.schema[j].intruder_known:
                    raise SchemaError(
                        f"target {t.target_id!r}: {self.schema[j].name!r} is not intruder-known")

    def __len__(self):
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)


def load_targets(path, schema: Schema) -> TargetFile:
    """Read targets: ``target_id``, any intruder-known columns, optional
    ``true_row_id``. Blank cells mean the intruder lacks that value."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    _check_ragged(path)
    frame = _read_csv_strings(path, ["target_id"])
    known_cols = []
    for c in frame.columns:
        if c in ("target_id", "true_row_id"):
            continue
        var = schema[c]
        if not var.intruder_known:
            raise SchemaError(f"{path}: column {c!r} is not an intruder-known variable")
        known_cols.append(c)
    parsed = {}
    for c in known_cols:
        var = schema[c]
        raw = frame[c].to_numpy(dtype=object)
        present = raw != ""
        col = np.full(len(raw), np.nan)
        if present.any():
            col[present] = _parse_column(var, raw[present], str(path))
        parsed[schema.index(c)] = col
    has_true = "true_row_id" in frame.columns
    targets = []
    for r in range(len(frame)):
        known = {j: float(col[r]) for j, col in parsed.items() if not np.isnan(col[r])}
        true_id = None
        if has_true and frame["true_row_id"].iat[r] != "":
            true_id = int(frame["true_row_id"].iat[r])
        targets.append(Target(str(frame["target_id"].iat[r]), known, true_id))
    return TargetFile(schema, tuple(targets))


def write_targets(targets: TargetFile, path) -> None:
    schema = targets.schema
    cols = [j for j, v in enumerate(schema) if v.intruder_known]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target_id"] + [schema[j].name for j in cols] + ["true_row_id"])
        for t in targets:
            row = [t.target_id]
            for j in cols:
                if j not in t.known:
                    row.append("")
                elif schema[j].is_categorical:
                    row.append(schema[j].levels[int(t.known[j])])
                else:
                    row.append(repr(float(t.known[j])))
            row.append("" if t.true_row_id is None else str(t.true_row_id))
            w.writerow(row)
