"""Identification disclosure risk by Bayesian probabilistic matching.

For a target t (the intruder's values of some intruder-known variables),
Pr(I = i | t, Z, S) is estimated by averaging, over h plausible draws of the
confidential synthesized values, the exact-matching probabilities that treat
the draw as if it were the collected data. Index n+1 stands for "the target
is not in the release".
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive_int, check_rng
from .data import Dataset, SchemaError, Target, TargetFile, partition
from .synthesis.release import SyntheticRelease

logger = logging.getLogger(__name__)

ABSOLUTE = "absolute"
RELATIVE = "relative"
# probabilities this close to the maximum count as tied
TIE_ATOL = 1e-12


class InconsistentPopulationError(ValueError):
    """A population count N_t smaller than the in-release match count n_t."""


@dataclass(frozen=True)
class MatchConfig:
    """Intruder matching assumptions.

    in_sample : every target is assumed to be in the release.
    population_size : when not in-sample, either an int (same N_t for every
        target) or a mapping target_id -> N_t.
    radius : variable index -> (radius, "absolute" | "relative") for
        continuous synthesized variables.
    h : Monte Carlo iterations.
    s_known : draw plausible originals from the synthesizer's posterior
        predictive (True) or treat the released values as the draws (False).
    selection_reason : carried for completeness; always empty and unused.
    """

    in_sample: bool = True
    population_size: object = None
    radius: Mapping = field(default_factory=dict)
    h: int = 100
    s_known: bool = False
    selection_reason: tuple = ()

    def __post_init__(self):
        check_positive_int(self.h, "h")
        rad = {}
        for j, entry in dict(self.radius).items():
            r, metric = (entry, ABSOLUTE) if np.isscalar(entry) else tuple(entry)
            if not float(r) > 0:
                raise ValueError(f"radius for variable {j} must be > 0")
            if metric not in (ABSOLUTE, RELATIVE):
                raise ValueError(f"unknown radius metric {metric!r}")
            rad[int(j)] = (float(r), metric)
        object.__setattr__(self, "radius", rad)
        if not self.in_sample and self.population_size is None:
            raise ValueError("population mode needs population_size")

    def population_for(self, target_id) -> int:
        ps = self.population_size
        if isinstance(ps, Mapping):
            try:
                return int(ps[target_id])
            except KeyError:
                raise ValueError(f"no population count for target {target_id!r}") from None
        return int(ps)


def _match_probabilities(mask, in_sample, N_t):
    """Per-iteration probabilities from a (h, R) match mask.

    Returns (probs (h, R), p_out (h,)).
    """
    n_t = mask.sum(axis=1)
    if in_sample:
        with np.errstate(invalid="ignore", divide="ignore"):
            probs = np.where(n_t[:, None] > 0, mask / np.maximum(n_t, 1)[:, None], 0.0)
        p_out = (n_t == 0).astype(np.float64)
        return probs, p_out
    if N_t < 1 or (n_t > N_t).any():
        raise InconsistentPopulationError(
            f"population count N_t={N_t} is smaller than the {int(n_t.max())} matching records")
    return mask / float(N_t), (N_t - n_t) / float(N_t)


def _synth_match(values, target_vals, kinds):
    """Match mask for synthesized known variables.

    values : (..., S) candidate values; target_vals : (S,);
    kinds : list of (categorical, radius, metric).
    """
    ok = np.ones(values.shape[:-1], dtype=bool)
    for s, (is_cat, r, metric) in enumerate(kinds):
        z = values[..., s]
        t = target_vals[s]
        if is_cat:
            ok &= z == t
        elif metric == ABSOLUTE:
            ok &= np.abs(z - t) <= r
        else:
            ok &= np.abs(z - t) <= r * abs(t)
    return ok


def _synth_kinds(schema, variables, config: MatchConfig):
    kinds = []
    for j in variables:
        v = schema[j]
        if v.is_categorical:
            kinds.append((True, 0.0, ABSOLUTE))
        else:
            if j not in config.radius:
                raise SchemaError(f"no matching radius for continuous synthesized variable {v.name!r}")
            kinds.append((False,) + config.radius[j])
    return kinds


def match_given_originals(target: Target, released: Dataset, originals, config: MatchConfig):
    """Pr(I = i | t, Z^{A_us}, Y^{A_s}) for i = 1..n+1.

    ``originals`` holds one candidate value vector per record for the
    synthesized variables (schema order). Records disagreeing with t on any
    un-synthesized known variable get probability zero.
    """
    schema = released.schema
    part = partition(schema)
    originals = np.asarray(originals, dtype=np.float64)
    if originals.shape != (released.n, len(part.synthesized)):
        raise ValueError(f"originals must be ({released.n}, {len(part.synthesized)})")
    us = [j for j in part.known_unsynthesized if j in target.known]
    s = [j for j in part.known_synthesized if j in target.known]
    mask = np.ones(released.n, dtype=bool)
    for j in us:
        mask &= released.values[:, j] == target.known[j]
    cols = [part.synthesized.index(j) for j in s]
    kinds = _synth_kinds(schema, s, config)
    mask &= _synth_match(originals[:, cols], np.array([target.known[j] for j in s]), kinds)
    N_t = None if config.in_sample else config.population_for(target.target_id)
    probs, p_out = _match_probabilities(mask[None, :], config.in_sample, N_t)
    return np.concatenate([probs[0], p_out])


def draw_plausible_originals(release: SyntheticRelease, s_known: bool, seed=None, rows=None,
                             size=None):
    """Plausible confidential synthesized values for ``rows`` (default all).

    s_known=False picks one release uniformly and returns its synthesized
    columns; s_known=True picks one retained draw uniformly and samples from
    the synthesizer's posterior predictive given the un-synthesized values.
    With ``size`` given, returns ``size`` independent draws stacked on a
    leading axis.
    """
    rng = check_rng(seed)
    rows = np.arange(release.n) if rows is None else np.asarray(rows, dtype=np.int64)
    h = 1 if size is None else int(size)
    s_vars = release.schema.synthesized
    if s_known:
        idx = rng.integers(release.H, size=h)
        out = release.draws.sample_synthesized(release.datasets[0], rows, idx, rng)
    else:
        idx = rng.integers(release.m, size=h)
        stacked = np.stack([d.values[np.ix_(rows, s_vars)] for d in release.datasets])
        out = stacked[idx]
    return out[0] if size is None else out


@dataclass
class TargetMatch:
    """Match outcome for one target; probabilities stored sparsely."""

    target_id: str
    rows: np.ndarray          # 0-based record indices with possibly non-zero probability
    probabilities: np.ndarray
    p_not_in_release: float
    n_records: int
    c: int
    true_row_id: int | None
    T: int | None
    K: int | None
    F: int | None

    def dense(self) -> np.ndarray:
        out = np.zeros(self.n_records + 1)
        out[self.rows] = self.probabilities
        out[-1] = self.p_not_in_release
        return out


def _tie_stats(rows, probs, n, true_row_id):
    top = probs.max() if probs.size else 0.0
    if top <= TIE_ATOL:
        # every record ties at zero probability
        c = n
        maximisers = None
    else:
        sel = probs >= top - TIE_ATOL
        c = int(sel.sum())
        maximisers = rows[sel]
    if true_row_id is None:
        return c, None, None, None
    if maximisers is None:
        T = 1 if 1 <= true_row_id <= n else 0
    else:
        T = int((maximisers == true_row_id - 1).any())
    K = int(c * T == 1)
    F = int(c * (1 - T) == 1)
    return c, T, K, F


@dataclass
class RiskSummary:
    expected_match_risk: float
    true_match_rate: float
    false_match_rate: float
    n_targets: int
    n_unique: int
    no_unique_matches: bool
    excluded: int

    def to_dict(self):
        return dict(self.__dict__)


def summarize_risks(matches, N=None) -> RiskSummary:
    """Expected match risk sum(T/c), true match rate sum(K)/N and false match
    rate sum(F)/s with s the number of targets with c = 1.

    Targets without a known true record are excluded; N defaults to the
    number of evaluable targets.
    """
    usable = [m for m in matches if m.T is not None]
    excluded = len(matches) - len(usable)
    if excluded:
        logger.warning("%d targets lack a true_row_id and are excluded from T/K/F", excluded)
    N = len(usable) if N is None else int(N)
    exp_risk = float(sum(m.T / m.c for m in usable))
    tmr = float(sum(m.K for m in usable) / N) if N else 0.0
    s = sum(1 for m in usable if m.c == 1)
    fmr = float(sum(m.F for m in usable) / s) if s else 0.0
    return RiskSummary(exp_risk, tmr, fmr, N, s, s == 0, excluded)


@dataclass
class MatchResult:
    matches: list
    summary: RiskSummary
    warnings: list = field(default_factory=list)


class _CandidateIndex:
    """Rows grouped by their values on a set of un-synthesized variables."""

    def __init__(self, values: np.ndarray, variables):
        self.variables = tuple(variables)
        if not self.variables:
            self.lookup = None
            self.n = values.shape[0]
            return
        keys, inv = np.unique(values[:, list(self.variables)], axis=0, return_inverse=True)
        inv = inv.ravel()
        order = np.argsort(inv, kind="stable")
        bounds = np.searchsorted(inv[order], np.arange(keys.shape[0] + 1))
        self.lookup = {tuple(k): order[bounds[g]:bounds[g + 1]] for g, k in enumerate(keys.tolist())}
        self.n = values.shape[0]

    def rows(self, target_values):
        if self.lookup is None:
            return np.arange(self.n)
        return self.lookup.get(tuple(float(v) for v in target_values), np.empty(0, dtype=np.int64))


class IdentificationRiskEstimator(BaseEstimator):
    """Monte Carlo identification probabilities for a set of targets.

    Parameters
    ----------
    in_sample : bool, default=True
    population_size : int or mapping target_id -> int, optional
    radius : mapping variable name -> radius or (radius, metric)
    h : int, default=100
    s_known : bool, default=False
    n_jobs : int, default=1
    random_state : int or None
    """

    def __init__(self, in_sample=True, population_size=None, radius=None, h=100,
                 s_known=False, n_jobs=1, random_state=None):
        self.in_sample = in_sample
        self.population_size = population_size
        self.radius = radius
        self.h = h
        self.s_known = s_known
        self.n_jobs = n_jobs
        self.random_state = random_state

    def fit(self, release: SyntheticRelease, y=None):
        schema = release.schema
        radius = {schema.index(k) if isinstance(k, str) else int(k): v
                  for k, v in (self.radius or {}).items()}
        self.config_ = MatchConfig(self.in_sample, self.population_size, radius, self.h,
                                   self.s_known)
        self.release_ = release
        self.partition_ = partition(schema)
        self.indexes_ = {}
        self._syn_stack = None
        return self

    def _index(self, variables):
        if variables not in self.indexes_:
            self.indexes_[variables] = _CandidateIndex(self.release_.datasets[0].values, variables)
        return self.indexes_[variables]

    def _stack(self):
        if self._syn_stack is None:
            s = self.release_.schema.synthesized
            self._syn_stack = [d.values[:, s] for d in self.release_.datasets]
        return self._syn_stack

    def _one(self, k, target: Target):
        cfg = self.config_
        part = self.partition_
        release = self.release_
        schema = release.schema
        us = tuple(j for j in part.known_unsynthesized if j in target.known)
        s = [j for j in part.known_synthesized if j in target.known]
        rows = self._index(us).rows([target.known[j] for j in us])
        n = release.n
        N_t = None if cfg.in_sample else cfg.population_for(target.target_id)
        rng = np.random.default_rng(None if self.random_state is None
                                    else [int(self.random_state), k])
        if rows.size and s:
            cols = [part.synthesized.index(j) for j in s]
            if cfg.s_known:
                idx = rng.integers(release.H, size=cfg.h)
                vals = release.draws.sample_synthesized(release.datasets[0], rows, idx, rng)
                vals = vals[:, :, cols]
            else:
                idx = rng.integers(release.m, size=cfg.h)
                stack = self._stack()
                per_release = np.stack([z[np.ix_(rows, cols)] for z in stack])
                vals = per_release[idx]
            kinds = _synth_kinds(schema, s, cfg)
            mask = _synth_match(vals, np.array([target.known[j] for j in s]), kinds)
        else:
            mask = np.ones((1, rows.size), dtype=bool)
        probs, p_out = _match_probabilities(mask, cfg.in_sample, N_t)
        probs = probs.mean(axis=0)
        p_out = float(p_out.mean())
        c, T, K, F = _tie_stats(rows, probs, n, target.true_row_id)
        return TargetMatch(target.target_id, rows, probs, p_out, n, c, target.true_row_id, T, K, F)

    def assess(self, targets: TargetFile) -> MatchResult:
        check_is_fitted(self, "config_")
        if targets.schema != self.release_.schema:
            raise SchemaError("targets use a different schema from the release")
        for j in self.partition_.known_synthesized:
            if not self.release_.schema[j].is_categorical:
                _synth_kinds(self.release_.schema, [j], self.config_)
        tlist = list(targets)
        if self.n_jobs == 1:
            matches = [self._one(k, t) for k, t in enumerate(tlist)]
        else:
            matches = Parallel(n_jobs=self.n_jobs, prefer="threads")(
                delayed(self._one)(k, t) for k, t in enumerate(tlist))
        summary = summarize_risks(matches)
        warnings = []
        if summary.excluded:
            warnings.append(f"{summary.excluded} targets without true_row_id excluded from T/K/F")
        if summary.no_unique_matches:
            warnings.append("no target had a unique match (s = 0); false match rate reported as 0")
        return MatchResult(matches, summary, warnings)


def monte_carlo_identification(targets: TargetFile, release: SyntheticRelease,
                               config: MatchConfig, seed=None, n_jobs=1) -> MatchResult:
    """Functional form of :class:`IdentificationRiskEstimator`."""
    est = IdentificationRiskEstimator(config.in_sample, config.population_size,
                                      dict(config.radius), config.h, config.s_known,
                                      n_jobs=n_jobs, random_state=seed)
    return est.fit(release).assess(targets)
