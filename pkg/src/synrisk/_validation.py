"""Small input-checking helpers shared by the estimators."""

import numpy as np

from .data import Dataset, SchemaError


def check_rng(seed):
    """Turn None / int / sequence / Generator into a numpy Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_dataset(dataset, name="dataset"):
    if not isinstance(dataset, Dataset):
        raise TypeError(f"{name} must be a Dataset, got {type(dataset).__name__}")
    return dataset


def check_compatible(a: Dataset, b: Dataset):
    if a.schema != b.schema:
        raise SchemaError("datasets do not share a schema")
    if a.n != b.n:
        raise SchemaError(f"row count mismatch: {a.n} vs {b.n}")


def check_probability_vector(p, name="probability vector", atol=1e-9):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d array")
    if (p < 0).any() or not np.isfinite(p).all():
        raise ValueError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"{name} sums to {p.sum()!r}, not 1")
    return p


def check_positive_int(x, name, minimum=1):
    if isinstance(x, bool) or int(x) != x or x < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {x!r}")
    return int(x)
