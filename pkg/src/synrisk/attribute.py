"""Attribute disclosure risk.

For a target record i the intruder's posterior over candidate values y* of
its synthesized attributes is

    p(y* | Z, y_us, A, S)  proportional to  prior(y*) * prod_l p(Z_l | y*, A, S)

Under the worst-case knowledge assumption (every other record's synthesized
values known) each factor p(Z_l | y*) is the synthesizer's posterior
predictive probability of Z_l after swapping record i's values for y*. The
retained parameter draws (from p(theta | y)) serve as importance-sampling
proposals for p(theta | y with record i set to y*), with weights
f(y* | theta) / f(y_i | theta); the estimate per release is self-normalised.
Everything is accumulated in log space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_dataset, check_probability_vector
from .data import Dataset, Schema, SchemaError, enumerate_cells, partition
from .synthesis.cart import CartDraws
from .synthesis.mixture import MixtureDraw, MixtureDraws
from .synthesis.release import SyntheticRelease

logger = logging.getLogger(__name__)

NEIGHBORHOOD = "neighborhood"
EXPLICIT = "explicit"
FULL = "full-enumeration"
WORST_CASE = "worst-case"
KNOWN_SUBSET = "known-subset"

# f(y_i | theta) below this drops the draw
DENSITY_FLOOR = 1e-300
# more than this fraction of dropped draws is an error
MAX_DROP_FRACTION = 0.5
# relative tolerance used for posterior ties
TIE_RTOL = 1e-12


class DegenerateWeightsError(RuntimeError):
    """Importance weights unusable (true record has ~zero density)."""


class GuessSetTooLarge(ValueError):
    def __init__(self, size, cap):
        super().__init__(f"full enumeration needs {size} guesses, above the cap of {cap}")
        self.size = size
        self.cap = cap


@dataclass(frozen=True)
class GuessSet:
    """Candidate values for a record's guessed variables.

    ``guesses`` has one row per candidate and one column per entry of
    ``variables`` (schema indices); row ``true_position`` is the truth.
    """

    record_index: int
    variables: tuple
    guesses: np.ndarray
    true_position: int
    mode: str

    def __post_init__(self):
        g = np.asarray(self.guesses, dtype=np.float64)
        if g.ndim != 2 or g.shape[1] != len(self.variables):
            raise ValueError("guesses must be (G, len(variables))")
        object.__setattr__(self, "guesses", g)
        object.__setattr__(self, "variables", tuple(int(v) for v in self.variables))
        if not 0 <= self.true_position < g.shape[0]:
            raise ValueError("true_position out of range")
        if np.unique(g, axis=0).shape[0] != g.shape[0]:
            raise ValueError("guesses must be pairwise distinct")
        if self.mode == NEIGHBORHOOD:
            diff = (g != g[self.true_position]).sum(axis=1)
            diff[self.true_position] = 1
            if (diff != 1).any():
                raise ValueError("neighborhood guesses must differ from the truth in one variable")

    def __len__(self):
        return self.guesses.shape[0]

    @property
    def truth(self):
        return self.guesses[self.true_position]


def neighborhood_size(cardinalities) -> int:
    return 1 + sum(int(k) - 1 for k in cardinalities)


def build_guess_set(dataset: Dataset, row_id: int, mode=NEIGHBORHOOD, explicit_guesses=None,
                    variables=None, max_guesses=10**6) -> GuessSet:
    """Candidate set for record ``row_id`` (1-based).

    neighborhood: the truth plus every vector differing from it in exactly
    one variable (truth first, then variables in order, levels ascending).
    full-enumeration: every cell of the guessed variables' table.
    explicit: ``explicit_guesses`` with the truth appended when absent.
    """
    schema = dataset.schema
    if variables is None:
        variables = schema.synthesized
    variables = [schema.index(v) if isinstance(v, str) else int(v) for v in variables]
    if not 1 <= row_id <= dataset.n:
        raise IndexError(f"row_id {row_id} outside 1..{dataset.n}")
    truth = dataset.values[row_id - 1, variables]
    if mode == EXPLICIT:
        if explicit_guesses is None:
            raise ValueError("explicit mode needs explicit_guesses")
        g = np.atleast_2d(np.asarray(explicit_guesses, dtype=np.float64))
        if g.shape[1] != len(variables):
            raise ValueError(f"explicit guesses need {len(variables)} columns")
        hit = np.flatnonzero((g == truth).all(axis=1))
        if hit.size == 0:
            g = np.vstack([g, truth])
            pos = g.shape[0] - 1
        else:
            pos = int(hit[0])
        return GuessSet(row_id, tuple(variables), g, pos, EXPLICIT)
    for j in variables:
        if not schema[j].is_categorical:
            raise SchemaError(f"{mode} guess sets need categorical variables; "
                              f"{schema[j].name!r} is continuous")
    cards = schema.cardinalities(variables)
    if mode == NEIGHBORHOOD:
        rows = [truth.copy()]
        for col, k in enumerate(cards):
            for level in range(k):
                if level != truth[col]:
                    alt = truth.copy()
                    alt[col] = level
                    rows.append(alt)
        return GuessSet(row_id, tuple(variables), np.array(rows), 0, NEIGHBORHOOD)
    if mode == FULL:
        size = enumerate_cells(cards)
        if size > max_guesses:
            raise GuessSetTooLarge(size, max_guesses)
        g = np.indices(cards).reshape(len(cards), -1).T.astype(np.float64)
        pos = int(np.ravel_multi_index(tuple(truth.astype(np.int64)), cards))
        return GuessSet(row_id, tuple(variables), g, pos, FULL)
    raise ValueError(f"unknown guess-set mode {mode!r}")


@dataclass(frozen=True)
class AttributeScenario:
    """What the intruder knows.

    knowledge : "worst-case" (all other records' synthesized values) or
        "known-subset" (additionally the target's own ``known`` variables).
    prior : "uniform" or an explicit probability vector over the guess set.
    synthesizer_known : whether the synthesis model is public; the
        estimators here always evaluate the released model.
    """

    knowledge: str = WORST_CASE
    known: tuple = ()
    prior: object = "uniform"
    synthesizer_known: bool = True

    def __post_init__(self):
        if self.knowledge not in (WORST_CASE, KNOWN_SUBSET):
            raise ValueError(f"unknown knowledge mode {self.knowledge!r}")
        object.__setattr__(self, "known", tuple(self.known))
        if self.knowledge == WORST_CASE and self.known:
            raise ValueError("worst-case knowledge takes no known subset")
        if not isinstance(self.prior, str):
            object.__setattr__(self, "prior", tuple(check_probability_vector(self.prior, "prior")))
        elif self.prior != "uniform":
            raise ValueError(f"unknown prior {self.prior!r}")

    def known_indices(self, schema: Schema) -> list[int]:
        idx = [schema.index(k) if isinstance(k, str) else int(k) for k in self.known]
        bad = [schema[j].name for j in idx if not schema[j].synthesized]
        if bad:
            raise SchemaError(f"known subset must be synthesized variables: {bad}")
        return idx

    def guessed_variables(self, schema: Schema) -> list[int]:
        known = set(self.known_indices(schema))
        out = [j for j in schema.synthesized if j not in known]
        if not out:
            raise SchemaError("known subset leaves nothing to guess")
        return out

    def log_prior(self, size: int) -> np.ndarray:
        if self.prior == "uniform":
            return np.full(size, -np.log(size))
        p = np.asarray(self.prior)
        if p.size != size:
            raise ValueError(f"prior has {p.size} entries, guess set has {size}")
        with np.errstate(divide="ignore"):
            return np.log(p)


def importance_weight(draw: MixtureDraw, guess, true_record, given_positions=()) -> float:
    """f(y* | theta) / f(y_i | theta) for one draw.

    ``guess`` and ``true_record`` hold one code per modelled variable of the
    draw; densities are over the remaining positions conditional on
    ``given_positions`` (which must agree between the two).
    """
    guess = np.asarray(guess, dtype=np.int64)
    true_record = np.asarray(true_record, dtype=np.int64)
    given = list(given_positions)
    if (guess[given] != true_record[given]).any():
        raise ValueError("guess and truth disagree on a conditioning variable")

    def cond(x):
        w = draw.component_weights.copy()
        joint = w.copy()
        for j, mat in enumerate(draw.per_class_multinomials):
            joint = joint * mat[:, x[j]]
            if j in given:
                w = w * mat[:, x[j]]
        return joint.sum() / w.sum()

    den = cond(true_record)
    if den <= 0:
        raise DegenerateWeightsError("true record has zero density under this draw")
    return float(cond(guess) / den)


class _MixtureEvaluator:
    """log p(Z_l | y*) for mixture releases; caches log p(Z_l | theta_h)."""

    def __init__(self, release: SyntheticRelease):
        self.draws: MixtureDraws = release.draws
        self.loglik = np.stack([self.draws.log_likelihood(d) for d in release.datasets])

    def key(self, dataset, row_id, guess_vars):
        # posterior depends on the record only through its modelled codes
        return tuple(dataset.values[row_id - 1, list(self.draws.variables)].tolist())

    def log_likelihoods(self, dataset: Dataset, gs: GuessSet):
        draws = self.draws
        V = list(gs.variables)
        bad = [j for j in V if j not in draws.synthesized]
        if bad:
            raise SchemaError(f"guessed variables {bad} are not synthesized by the mixture")
        given_vars = [j for j in draws.variables if j not in V]
        truth = dataset.values[gs.record_index - 1]
        G = len(gs)
        given = np.repeat(truth[given_vars][None, :], G, axis=0)
        lf = draws.log_density(gs.guesses, V, given, given_vars)  # (H, G)
        lf_true = lf[:, gs.true_position]
        keep = lf_true >= np.log(DENSITY_FLOOR)
        dropped = int(keep.size - keep.sum())
        if dropped > MAX_DROP_FRACTION * keep.size:
            raise DegenerateWeightsError(
                f"record {gs.record_index}: {dropped} of {keep.size} draws give the true "
                f"record density below {DENSITY_FLOOR}")
        if dropped:
            logger.info("record %d: dropped %d degenerate draws", gs.record_index, dropped)
        logr = lf[keep] - lf_true[keep, None]
        ll = self.loglik[:, keep]
        out = np.zeros(G)
        step = max(1, 4_000_000 // max(1, ll.size))
        with np.errstate(invalid="ignore"):
            for s in range(0, G, step):
                lr = logr[:, s:s + step]
                num = logsumexp(ll[:, :, None] + lr[None, :, :], axis=1)  # (m, g)
                den = logsumexp(lr, axis=0)
                out[s:s + step] = (num - den[None, :]).sum(axis=0)
        zero = ~np.isfinite(out)
        out[zero] = -np.inf
        return out, {"dropped_draws": dropped, "zero_weight_guesses": int(zero.sum())}


def _kernel(z, x, categorical, bandwidth):
    if categorical:
        return (z == x).astype(np.float64)
    return np.exp(-0.5 * ((z - x) / bandwidth) ** 2)


class _CartEvaluator:
    """Approximate log p(Z_l | y*) for CART releases.

    Uses each release's leaf-weight snapshot as its parameter draw. Swapping
    record i's value changes one donor in its (fixed) leaf; the density of a
    synthetic value routed to that leaf is sum_d w_d K(z, donor_d) with an
    indicator kernel for categorical variables and a Gaussian kernel of the
    given bandwidth for continuous ones.
    """

    def __init__(self, release: SyntheticRelease, bandwidth=None):
        draws: CartDraws = release.draws
        self.model = draws.model
        self.snapshots = draws.snapshots
        self.release = release
        schema = release.schema
        self.bandwidth = {}
        for j in self.model.order:
            v = schema[j]
            if v.is_categorical:
                continue
            b = (bandwidth or {}).get(j, (v.upper - v.lower) / 100.0)
            if not b > 0:
                raise ValueError(f"bandwidth for {v.name!r} must be positive")
            self.bandwidth[j] = float(b)
        self.donor_leaf = {j: self.model.trees[j].donor_leaf() for j in self.model.order}
        self.routed = {j: [self.model.route(j, d.values) for d in release.datasets]
                       for j in self.model.order}

    def key(self, dataset, row_id, guess_vars):
        return None

    def log_likelihoods(self, dataset: Dataset, gs: GuessSet):
        schema = dataset.schema
        row = gs.record_index - 1
        out = np.zeros(len(gs))
        for col, var in enumerate(gs.variables):
            if var not in self.model.trees:
                raise SchemaError(f"{schema[var].name!r} is not synthesized by the CART model")
            tree = self.model.trees[var]
            k = self.donor_leaf[var][row]
            donors = tree.leaf_donors[k]
            pos_i = int(np.flatnonzero(tree.leaf_rows[k] == row)[0])
            uniq, inv = np.unique(gs.guesses[:, col], return_inverse=True)
            cat = schema[var].is_categorical
            bw = self.bandwidth.get(var)
            ll = np.zeros(uniq.size)
            for l, d in enumerate(self.release.datasets):
                w = self.snapshots[l][var][k]
                z = d.values[self.routed[var][l] == k, var]
                if z.size == 0:
                    continue
                km = _kernel(z[:, None], donors[None, :], cat, bw)
                km[:, pos_i] = 0.0
                base = km @ w
                add = w[pos_i] * _kernel(z[:, None], uniq[None, :], cat, bw)
                with np.errstate(divide="ignore"):
                    ll += np.log(base[:, None] + add).sum(axis=0)
            out += ll[inv.ravel()]
        return out, {"dropped_draws": 0, "zero_weight_guesses": int((~np.isfinite(out)).sum())}


def _evaluator(release, bandwidth=None):
    if isinstance(release.draws, MixtureDraws):
        return _MixtureEvaluator(release)
    if isinstance(release.draws, CartDraws):
        return _CartEvaluator(release, bandwidth)
    raise TypeError(f"unsupported draws type {type(release.draws).__name__}")


def _normalise(loglik, log_prior, gs):
    lp = loglik + log_prior
    if not np.isfinite(lp).any():
        worst = int(np.argmin(np.nan_to_num(loglik, nan=-np.inf, neginf=-np.inf)))
        raise DegenerateWeightsError(
            f"record {gs.record_index}: no guess has a usable likelihood "
            f"(worst guess {gs.guesses[worst].tolist()})")
    return np.exp(lp - logsumexp(lp))


def posterior_over_guesses(release: SyntheticRelease, dataset: Dataset, guess_set: GuessSet,
                           scenario: AttributeScenario | None = None, bandwidth=None,
                           return_info=False):
    """Normalised posterior over ``guess_set`` for its record.

    ``dataset`` is the confidential data (the intruder's A under worst-case
    knowledge). ``bandwidth`` maps continuous variable indices to kernel
    bandwidths for CART releases.
    """
    scenario = scenario or AttributeScenario()
    ev = _evaluator(release, bandwidth)
    loglik, info = ev.log_likelihoods(dataset, guess_set)
    post = _normalise(loglik, scenario.log_prior(len(guess_set)), guess_set)
    return (post, info) if return_info else post


# -- summaries --------------------------------------------------------------

def rank_of_true(posterior, true_position) -> int:
    """1 + number of guesses with strictly higher posterior; ties share the
    minimal rank."""
    p = np.asarray(posterior)
    pt = p[true_position]
    return int(1 + (p > pt * (1 + TIE_RTOL) + np.finfo(float).tiny).sum())


@dataclass
class RankSummary:
    ranks: np.ndarray
    true_probabilities: np.ndarray
    rank_counts: dict
    mean_probability: float
    median_probability: float


def rank_summary(posteriors: Sequence, true_positions: Sequence[int]) -> RankSummary:
    ranks = np.array([rank_of_true(p, t) for p, t in zip(posteriors, true_positions)],
                     dtype=np.int64)
    probs = np.array([float(np.asarray(p)[t]) for p, t in zip(posteriors, true_positions)])
    values, counts = np.unique(ranks, return_counts=True)
    return RankSummary(
        ranks=ranks,
        true_probabilities=probs,
        rank_counts={int(v): int(c) for v, c in zip(values, counts)},
        mean_probability=float(probs.mean()) if probs.size else float("nan"),
        median_probability=float(np.median(probs)) if probs.size else float("nan"),
    )


@dataclass(frozen=True)
class GeoSummary:
    r1: float
    r2: int
    mode_index: int
    tie: bool


def _mode(posterior):
    p = np.asarray(posterior, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty grid")
    top = p.max()
    at_top = np.flatnonzero(p >= top * (1 - TIE_RTOL))
    return int(at_top[0]), bool(at_top.size > 1)


def geo_risk_summaries(posterior, grid, true_location, locations) -> GeoSummary:
    """R1: distance from the posterior-mode grid point to the truth.
    R2: confidential records inside the closed disc of radius R1 around the
    truth. Larger values mean lower risk."""
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    if grid.shape[0] == 0:
        raise ValueError("empty grid")
    if grid.shape[0] != np.asarray(posterior).size:
        raise ValueError("posterior and grid lengths differ")
    k, tie = _mode(posterior)
    t = np.asarray(true_location, dtype=np.float64)
    r1 = float(np.hypot(*(grid[k] - t)))
    locs = np.atleast_2d(np.asarray(locations, dtype=np.float64))
    d = np.hypot(locs[:, 0] - t[0], locs[:, 1] - t[1])
    # rounding guard on the closed boundary
    r2 = int((d <= r1 * (1 + TIE_RTOL)).sum())
    return GeoSummary(r1, r2, k, tie)


@dataclass(frozen=True)
class MapMatchSummary:
    pct_map_true: float
    pct_map_true_unique: float
    mean_mode_distance: float


def map_match_summaries(posteriors, guess_locations, true_positions, unique_flags) -> MapMatchSummary:
    """(i) % of records whose true location attains the posterior maximum,
    (ii) the same counting only unique-pattern records (as % of all records),
    (iii) mean distance between truth and the posterior-mode guess."""
    n = len(posteriors)
    if n == 0:
        return MapMatchSummary(float("nan"), float("nan"), float("nan"))
    hits = np.zeros(n, dtype=bool)
    dist = np.zeros(n)
    for r, (p, locs, t) in enumerate(zip(posteriors, guess_locations, true_positions)):
        p = np.asarray(p, dtype=np.float64)
        hits[r] = p[t] >= p.max() * (1 - TIE_RTOL)
        k, _ = _mode(p)
        locs = np.atleast_2d(np.asarray(locs, dtype=np.float64))
        dist[r] = float(np.hypot(*(locs[k] - locs[t])))
    unique = np.asarray(unique_flags, dtype=bool)
    return MapMatchSummary(
        pct_map_true=float(100.0 * hits.mean()),
        pct_map_true_unique=float(100.0 * (hits & unique).sum() / n),
        mean_mode_distance=float(dist.mean()),
    )


def unique_pattern_flags(dataset: Dataset) -> np.ndarray:
    """True where no other record shares the un-synthesized value pattern."""
    us = dataset.schema.unsynthesized
    if not us:
        return np.full(dataset.n, dataset.n == 1)
    _, inv, counts = np.unique(dataset.values[:, us], axis=0, return_inverse=True,
                               return_counts=True)
    return counts[inv.ravel()] == 1


def location_grid(true_location, bounds=None, half_width=None, steps=100):
    """Regular grid of candidate locations, x-major.

    ``bounds`` = ((x_lo, x_hi), (y_lo, y_hi)); otherwise a square of
    ``half_width`` around the true location. Returns (grid, steps_xy).
    """
    t = np.asarray(true_location, dtype=np.float64)
    if bounds is None:
        if half_width is None:
            raise ValueError("grid needs bounds or half_width")
        hw = np.broadcast_to(np.asarray(half_width, dtype=np.float64), (2,))
        bounds = ((t[0] - hw[0], t[0] + hw[0]), (t[1] - hw[1], t[1] + hw[1]))
    steps = int(steps)
    if steps < 2:
        raise ValueError("grid needs at least 2 steps per axis")
    xs = np.linspace(bounds[0][0], bounds[0][1], steps)
    ys = np.linspace(bounds[1][0], bounds[1][1], steps)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    return grid, (xs[1] - xs[0], ys[1] - ys[0])


# -- estimator --------------------------------------------------------------

@dataclass
class RecordRisk:
    row_id: int
    guess_set: GuessSet
    posterior: np.ndarray
    rank: int
    true_probability: float
    dropped_draws: int = 0
    geo: GeoSummary | None = None


@dataclass
class AttributeRiskResult:
    records: list
    ranks: RankSummary
    geo: dict | None = None
    map_match: MapMatchSummary | None = None
    warnings: list = field(default_factory=list)

    def summary(self) -> dict:
        out = {
            "n_records": len(self.records),
            "rank_counts": {str(k): v for k, v in sorted(self.ranks.rank_counts.items())},
            "mean_true_probability": self.ranks.mean_probability,
            "median_true_probability": self.ranks.median_probability,
        }
        if self.geo is not None:
            out["geo"] = self.geo
        if self.map_match is not None:
            out["map_match"] = {
                "pct_map_true": self.map_match.pct_map_true,
                "pct_map_true_unique": self.map_match.pct_map_true_unique,
                "mean_mode_distance": self.map_match.mean_mode_distance,
            }
        return out


class AttributeRiskEstimator(BaseEstimator):
    """Record-level attribute disclosure posteriors for a synthetic release.

    Parameters
    ----------
    knowledge : {"worst-case", "known-subset"}
    known : tuple of str
        Target's own synthesized variables known to the intruder
        (known-subset only).
    prior : "uniform" or probability vector over the guess set
    guess_mode : {"neighborhood", "full-enumeration"}
        Ignored when ``coordinates`` is set (grid guesses are used).
    max_guesses : int
        Cap for full enumeration.
    coordinates : pair of str, optional
        Two continuous synthesized variables treated as a location; turns on
        grid guesses and the R1/R2 and MAP summaries.
    grid : dict, optional
        ``{"steps": 100, "bounds": [[..],[..]]}`` or ``{"half_width": w}``.
    bandwidth : dict, optional
        Kernel bandwidth per continuous variable name (CART releases);
        defaults to the grid spacing in location mode.
    n_jobs : int
    """

    def __init__(self, knowledge=WORST_CASE, known=(), prior="uniform",
                 guess_mode=NEIGHBORHOOD, max_guesses=10**6, coordinates=None, grid=None,
                 bandwidth=None, n_jobs=1):
        self.knowledge = knowledge
        self.known = known
        self.prior = prior
        self.guess_mode = guess_mode
        self.max_guesses = max_guesses
        self.coordinates = coordinates
        self.grid = grid
        self.bandwidth = bandwidth
        self.n_jobs = n_jobs

    def fit(self, release: SyntheticRelease, dataset: Dataset):
        check_dataset(dataset)
        if release.schema != dataset.schema:
            raise SchemaError("release and confidential data use different schemas")
        release.check_unsynthesized(dataset)
        self.scenario_ = AttributeScenario(self.knowledge, tuple(self.known), self.prior)
        schema = dataset.schema
        self.guessed_ = self.scenario_.guessed_variables(schema)
        self.partition_ = partition(schema)
        bw = {schema.index(k): float(v) for k, v in (self.bandwidth or {}).items()}
        if self.coordinates is not None:
            self.coord_idx_ = [schema.index(c) for c in self.coordinates]
            if len(self.coord_idx_) != 2:
                raise ValueError("coordinates must name exactly two variables")
            for j in self.coord_idx_:
                v = schema[j]
                if v.is_categorical or not v.synthesized:
                    raise SchemaError(f"coordinate {v.name!r} must be continuous and synthesized")
            grid = dict(self.grid or {})
            grid.setdefault("steps", 100)
            if "bounds" not in grid and "half_width" not in grid:
                grid["bounds"] = [[schema[j].lower, schema[j].upper] for j in self.coord_idx_]
            self.grid_ = grid
            if "bounds" in grid:
                _, spacing = location_grid((0.0, 0.0), grid["bounds"], steps=grid["steps"])
            else:
                _, spacing = location_grid((0.0, 0.0), half_width=grid["half_width"],
                                           steps=grid["steps"])
            for j, s in zip(self.coord_idx_, spacing):
                bw.setdefault(j, float(s))
        else:
            self.coord_idx_ = None
        self.dataset_ = dataset
        self.evaluator_ = _evaluator(release, bw)
        self.cache_ = {}
        return self

    def guess_set(self, row_id: int) -> GuessSet:
        check_is_fitted(self, "evaluator_")
        if self.coord_idx_ is None:
            return build_guess_set(self.dataset_, row_id, self.guess_mode,
                                   variables=self.guessed_, max_guesses=self.max_guesses)
        truth = self.dataset_.values[row_id - 1, self.coord_idx_]
        g = self.grid_
        grid, _ = location_grid(truth, g.get("bounds"), g.get("half_width"), g["steps"])
        return build_guess_set(self.dataset_, row_id, EXPLICIT, grid, variables=self.coord_idx_)

    def posterior(self, row_id: int):
        """(GuessSet, posterior, info) for one record."""
        check_is_fitted(self, "evaluator_")
        key = self.evaluator_.key(self.dataset_, row_id, self.guessed_)
        if key is not None and self.coord_idx_ is None and key in self.cache_:
            gs0, post, info = self.cache_[key]
            gs = GuessSet(row_id, gs0.variables, gs0.guesses, gs0.true_position, gs0.mode)
            return gs, post, info
        gs = self.guess_set(row_id)
        loglik, info = self.evaluator_.log_likelihoods(self.dataset_, gs)
        post = _normalise(loglik, self.scenario_.log_prior(len(gs)), gs)
        if key is not None and self.coord_idx_ is None:
            self.cache_[key] = (gs, post, info)
        return gs, post, info

    def _record(self, row_id):
        gs, post, info = self.posterior(row_id)
        rr = RecordRisk(row_id, gs, post, rank_of_true(post, gs.true_position),
                        float(post[gs.true_position]), info["dropped_draws"])
        if self.coord_idx_ is not None:
            locs = self.dataset_.values[:, self.coord_idx_]
            rr.geo = geo_risk_summaries(post, gs.guesses, gs.truth, locs)
        return rr

    def assess(self, records=None) -> AttributeRiskResult:
        check_is_fitted(self, "evaluator_")
        if records is None or records == "all":
            records = range(1, self.dataset_.n + 1)
        records = [int(r) for r in records]
        if self.n_jobs == 1 or self.coord_idx_ is None:
            # mixture posteriors are cached per pattern; serial keeps the cache hot
            out = [self._record(r) for r in records]
        else:
            out = Parallel(n_jobs=self.n_jobs, prefer="threads")(
                delayed(self._record)(r) for r in records)
        ranks = rank_summary([r.posterior for r in out],
                             [r.guess_set.true_position for r in out])
        warnings = []
        dropped = sum(r.dropped_draws for r in out)
        if dropped:
            warnings.append(f"dropped {dropped} degenerate draws across records")
        geo = mm = None
        if self.coord_idx_ is not None and out:
            r1 = np.array([r.geo.r1 for r in out])
            r2 = np.array([r.geo.r2 for r in out])
            ties = sum(r.geo.tie for r in out)
            geo = {"mean_r1": float(r1.mean()), "median_r1": float(np.median(r1)),
                   "mean_r2": float(r2.mean()), "median_r2": float(np.median(r2)),
                   "mode_ties": int(ties)}
            if ties:
                warnings.append(f"{ties} records had tied posterior modes (lowest index used)")
            flags = unique_pattern_flags(self.dataset_)[[r.row_id - 1 for r in out]]
            mm = map_match_summaries([r.posterior for r in out],
                                     [r.guess_set.guesses for r in out],
                                     [r.guess_set.true_position for r in out], flags)
        for w in warnings:
            logger.warning(w)
        return AttributeRiskResult(out, ranks, geo, mm, warnings)
