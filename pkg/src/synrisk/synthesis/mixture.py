"""Finite mixture of products of multinomials, fit by Gibbs sampling.

A truncated stand-in for the Dirichlet-process latent class synthesizer:
C latent classes with a symmetric Dirichlet prior on the class weights and on
every per-class multinomial. The sampler works on the distinct value
patterns of the data, which is an exact reformulation of the record-level
Gibbs sweep (class counts within a pattern are multinomial given the
parameters) and keeps the per-iteration cost independent of n.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._validation import check_dataset, check_positive_int, check_rng
from ..data import Dataset, SchemaError
from .release import SyntheticRelease

logger = logging.getLogger(__name__)

# keeps (draws x records x classes) temporaries near 32 MB
_CHUNK_ELEMS = 4_000_000


@dataclass(frozen=True)
class MixtureDraw:
    """One parameter draw: class weights and per-class level probabilities.

    ``per_class_multinomials[j]`` is a (C, K_j) array for the j-th modelled
    variable.
    """

    component_weights: np.ndarray
    per_class_multinomials: tuple

    def __post_init__(self):
        w = np.asarray(self.component_weights, dtype=np.float64)
        if w.ndim != 1 or (w < 0).any() or abs(w.sum() - 1) > 1e-9:
            raise ValueError("component_weights must be a probability vector")
        mats = []
        for j, p in enumerate(self.per_class_multinomials):
            p = np.asarray(p, dtype=np.float64)
            if p.shape[0] != w.size:
                raise ValueError(f"variable {j}: expected {w.size} rows")
            if (p < 0).any() or np.abs(p.sum(axis=1) - 1).max() > 1e-9:
                raise ValueError(f"variable {j}: rows must be probability vectors")
            mats.append(p)
        object.__setattr__(self, "component_weights", w)
        object.__setattr__(self, "per_class_multinomials", tuple(mats))

    @property
    def n_components(self):
        return self.component_weights.size


class MixtureDraws:
    """Stack of H retained draws over a fixed list of modelled variables.

    Parameters
    ----------
    variables : sequence of int
        Schema indices of the modelled (categorical) variables.
    synthesized : sequence of int
        Schema indices of the synthesized variables; a subset of ``variables``.
    cardinalities : sequence of int
    weights : array of shape (H, C)
    phi : array of shape (H, C, J, Kmax)
        Level probabilities, zero-padded past each variable's cardinality.
    """

    kind = "mixture"

    def __init__(self, variables, synthesized, cardinalities, weights, phi):
        self.variables = tuple(int(j) for j in variables)
        self.synthesized = tuple(int(j) for j in synthesized)
        self.cardinalities = tuple(int(k) for k in cardinalities)
        if not set(self.synthesized) <= set(self.variables):
            raise ValueError("synthesized variables must be modelled")
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        self.phi = np.ascontiguousarray(phi, dtype=np.float64)
        H, C = self.weights.shape
        if self.phi.shape[:3] != (H, C, len(self.variables)):
            raise ValueError("phi shape does not match weights/variables")
        if H < 1:
            raise ValueError("need at least one draw")
        with np.errstate(divide="ignore"):
            self._log_w = np.log(self.weights)
            self._log_phi = np.log(self.phi)
        self._pos = {j: k for k, j in enumerate(self.variables)}

    @classmethod
    def from_draws(cls, draws, variables, synthesized):
        draws = list(draws)
        cards = [m.shape[1] for m in draws[0].per_class_multinomials]
        H, C, J, K = len(draws), draws[0].n_components, len(cards), max(cards)
        phi = np.zeros((H, C, J, K))
        for h, d in enumerate(draws):
            for j, m in enumerate(d.per_class_multinomials):
                phi[h, :, j, : m.shape[1]] = m
        weights = np.stack([d.component_weights for d in draws])
        return cls(variables, synthesized, cards, weights, phi)

    def __len__(self):
        return self.weights.shape[0]

    def __getitem__(self, h) -> MixtureDraw:
        mats = tuple(self.phi[h, :, j, :k] for j, k in enumerate(self.cardinalities))
        return MixtureDraw(self.weights[h], mats)

    def __iter__(self):
        for h in range(len(self)):
            yield self[h]

    @property
    def n_components(self):
        return self.weights.shape[1]

    def positions(self, variables):
        try:
            return [self._pos[j] for j in variables]
        except KeyError as exc:
            raise SchemaError(f"variable index {exc.args[0]} is not modelled") from None

    @property
    def conditioning(self):
        """Modelled variables that are not synthesized."""
        return tuple(j for j in self.variables if j not in self.synthesized)

    def subset(self, index) -> "MixtureDraws":
        index = np.atleast_1d(index)
        return MixtureDraws(self.variables, self.synthesized, self.cardinalities,
                            self.weights[index], self.phi[index])

    # -- densities -------------------------------------------------------

    def _class_terms(self, draw_index, codes, variables):
        """log w_c + sum_j log phi_cj[code] -> (h, R, C)."""
        lw = self._log_w[draw_index]  # (h, C)
        out = np.broadcast_to(lw[:, None, :], (lw.shape[0], codes.shape[0], lw.shape[1])).copy()
        for col, pos in enumerate(self.positions(variables)):
            lp = self._log_phi[draw_index, :, pos, :]  # (h, C, K)
            out += np.transpose(lp[:, :, codes[:, col]], (0, 2, 1))
        return out

    def log_density(self, codes, variables, given=None, given_variables=(), draw_index=None):
        """log f(codes | given, theta_h) for every draw h and record r.

        Parameters
        ----------
        codes : int array (R, len(variables))
        given : int array (R, len(given_variables)), optional
            Values of conditioning variables; the mixture is renormalised
            over the classes given them.

        Returns
        -------
        array of shape (H, R)
        """
        codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
        variables = list(variables)
        given_variables = list(given_variables)
        if given is None:
            given = np.zeros((codes.shape[0], 0), dtype=np.int64)
        given = np.atleast_2d(np.asarray(given, dtype=np.int64))
        if draw_index is None:
            draw_index = np.arange(len(self))
        draw_index = np.atleast_1d(draw_index)
        R = codes.shape[0]
        step = max(1, _CHUNK_ELEMS // max(1, R * self.n_components))
        out = np.empty((draw_index.size, R))
        for s in range(0, draw_index.size, step):
            idx = draw_index[s:s + step]
            base = self._class_terms(idx, given, given_variables)
            joint = base.copy()
            for col, pos in enumerate(self.positions(variables)):
                lp = self._log_phi[idx, :, pos, :]
                joint += np.transpose(lp[:, :, codes[:, col]], (0, 2, 1))
            with np.errstate(invalid="ignore"):
                num = logsumexp(joint, axis=2)
                den = logsumexp(base, axis=2) if given_variables else 0.0
                out[s:s + step] = num - den
        return out

    def log_likelihood(self, dataset: Dataset, draw_index=None):
        """log p(synthesized columns | un-synthesized columns, theta_h) for every
        draw, summed over records; shape (H,)."""
        s_vars = list(self.synthesized)
        g_vars = list(self.conditioning)
        pat, counts = np.unique(dataset.codes(s_vars + g_vars), axis=0, return_counts=True)
        ld = self.log_density(pat[:, : len(s_vars)], s_vars, pat[:, len(s_vars):], g_vars,
                              draw_index=draw_index)
        with np.errstate(invalid="ignore"):
            return ld @ counts.astype(np.float64)

    # -- sampling --------------------------------------------------------

    def sample_synthesized(self, dataset: Dataset, rows, draw_index, rng):
        """Posterior-predictive values of the synthesized variables.

        For each entry of ``draw_index`` the listed rows get a latent class
        drawn given their un-synthesized values, then one level per
        synthesized variable. Returns codes of shape (h, len(rows), S) as
        float64 in schema order of ``self.synthesized``.
        """
        rng = check_rng(rng)
        rows = np.asarray(rows, dtype=np.int64)
        draw_index = np.atleast_1d(np.asarray(draw_index, dtype=np.int64))
        g_vars = list(self.conditioning)
        given = dataset.values[np.ix_(rows, g_vars)].astype(np.int64) if g_vars else \
            np.zeros((rows.size, 0), dtype=np.int64)
        h, R = draw_index.size, rows.size
        out = np.empty((h, R, len(self.synthesized)))
        if R == 0:
            return out
        if g_vars:
            # distinct conditioning patterns keep large releases cheap
            pat, inv = np.unique(given, axis=0, return_inverse=True)
            inv = inv.ravel()
        step = max(1, _CHUNK_ELEMS // max(1, R * self.n_components))
        for s in range(0, h, step):
            idx = draw_index[s:s + step]
            if g_vars:
                lq = self._class_terms(idx, pat, g_vars)[:, inv, :]
            else:
                lq = np.broadcast_to(self._log_w[idx][:, None, :],
                                     (idx.size, R, self.n_components))
            q = np.exp(lq - lq.max(axis=2, keepdims=True))
            cls = _inverse_cdf(q, rng)  # (hc, R)
            for col, pos in enumerate(self.positions(self.synthesized)):
                k = self.cardinalities[pos]
                probs = self.phi[idx[:, None], cls, pos, :k]  # (hc, R, k)
                out[s:s + step, :, col] = _inverse_cdf(probs, rng)
        return out


def _inverse_cdf(weights, rng):
    """Sample an index along the last axis proportional to ``weights``."""
    cdf = np.cumsum(weights, axis=-1)
    u = rng.random(cdf.shape[:-1]) * cdf[..., -1]
    idx = (cdf <= u[..., None]).sum(axis=-1)
    return np.minimum(idx, weights.shape[-1] - 1)


def predictive_density(draw: MixtureDraw, record) -> float:
    """f(record | theta) = sum_c w_c prod_j P(level_j | c) for one draw.

    ``record`` gives one level code per modelled variable of the draw.
    """
    record = np.asarray(record, dtype=np.int64)
    mats = draw.per_class_multinomials
    if record.size != len(mats):
        raise ValueError(f"record has {record.size} values, draw models {len(mats)}")
    prod = draw.component_weights.copy()
    for j, k in enumerate(record):
        prod = prod * mats[j][:, k]
    return float(prod.sum())


def _dirichlet_rows(rng, alpha):
    """Independent Dirichlet draws along the last axis of ``alpha``."""
    g = rng.standard_gamma(alpha)
    return g / g.sum(axis=-1, keepdims=True)


def fit_mixture(dataset: Dataset, n_components=20, burn_in=500, thin=5, n_draws=100,
                alpha=1.0, seed=None, variables=None) -> MixtureDraws:
    """Gibbs sampler for the finite latent class model.

    Models every categorical variable (or ``variables``); all synthesized
    variables must be categorical. Returns ``n_draws`` draws taken every
    ``thin`` sweeps after ``burn_in`` sweeps.
    """
    check_dataset(dataset)
    schema = dataset.schema
    C = check_positive_int(n_components, "n_components")
    H = check_positive_int(n_draws, "n_draws")
    thin = check_positive_int(thin, "thin")
    burn_in = check_positive_int(burn_in, "burn_in", minimum=0)
    for j in schema.synthesized:
        if not schema[j].is_categorical:
            raise SchemaError(
                f"mixture synthesizer needs categorical synthesized variables; "
                f"{schema[j].name!r} is continuous")
    if dataset.n == 0:
        raise ValueError("cannot fit a mixture to an empty dataset")
    if variables is None:
        variables = schema.categorical
    variables = list(variables)
    missing = set(schema.synthesized) - set(variables)
    if missing:
        raise SchemaError(f"synthesized variables {sorted(missing)} must be modelled")
    cards = schema.cardinalities(variables)
    J, Kmax = len(variables), max(cards)
    rng = check_rng(seed)

    patterns, counts = np.unique(dataset.codes(variables), axis=0, return_counts=True)
    onehots = [np.eye(k)[patterns[:, j]] for j, k in enumerate(cards)]  # (P, K_j)
    pad = np.zeros((J, Kmax), dtype=bool)
    for j, k in enumerate(cards):
        pad[j, k:] = True

    w = _dirichlet_rows(rng, np.full(C, alpha))
    phi = np.zeros((C, J, Kmax))
    for j, k in enumerate(cards):
        phi[:, j, :k] = _dirichlet_rows(rng, np.full((C, k), alpha))

    weights_out = np.empty((H, C))
    phi_out = np.empty((H, C, J, Kmax))
    total = burn_in + thin * H
    kept = 0
    pat_idx = np.arange(J)
    for it in range(1, total + 1):
        with np.errstate(divide="ignore"):
            lq = np.log(w)[None, :] + np.log(phi[:, pat_idx, patterns]).sum(axis=2).T
        q = np.exp(lq - lq.max(axis=1, keepdims=True))
        q /= q.sum(axis=1, keepdims=True)
        alloc = rng.multinomial(counts, q)  # (P, C)
        w = _dirichlet_rows(rng, alpha + alloc.sum(axis=0))
        for j, k in enumerate(cards):
            phi[:, j, :k] = _dirichlet_rows(rng, alpha + alloc.T @ onehots[j])
        if it > burn_in and (it - burn_in) % thin == 0:
            weights_out[kept] = w
            phi_out[kept] = phi
            kept += 1
    logger.debug("mixture Gibbs: %d sweeps, %d draws kept", total, kept)
    return MixtureDraws(variables, schema.synthesized, cards, weights_out, phi_out)


def generate_mixture_release(draws: MixtureDraws, dataset: Dataset, m: int, seed=None,
                             provenance=None) -> SyntheticRelease:
    """m synthetic copies of ``dataset``; release l uses draw l mod H."""
    m = check_positive_int(m, "m")
    if len(draws) < 1:
        raise ValueError("no retained draws")
    s_vars = list(draws.synthesized)
    datasets = []
    for l in range(m):
        rng = check_rng(None if seed is None else [int(seed), l])
        vals = np.array(dataset.values)
        syn = draws.sample_synthesized(dataset, np.arange(dataset.n), [l % len(draws)], rng)
        vals[:, s_vars] = syn[0]
        datasets.append(dataset.with_values(vals, validate=False))
    prov = {"synthesizer": "mixture", "seed": seed}
    prov.update(provenance or {})
    return SyntheticRelease(datasets, draws, prov)


class MixtureSynthesizer(BaseEstimator):
    """Latent class synthesizer for categorical microdata.

    Parameters
    ----------
    n_components : int, default=20
        Number of latent classes C.
    burn_in, thin, n_draws : int
        Gibbs schedule; ``n_draws`` draws are retained.
    alpha : float, default=1.0
        Symmetric Dirichlet concentration for weights and multinomials.
    random_state : int or None
    """

    def __init__(self, n_components=20, burn_in=500, thin=5, n_draws=100, alpha=1.0,
                 random_state=None):
        self.n_components = n_components
        self.burn_in = burn_in
        self.thin = thin
        self.n_draws = n_draws
        self.alpha = alpha
        self.random_state = random_state

    def fit(self, dataset, y=None):
        self.draws_ = fit_mixture(dataset, self.n_components, self.burn_in, self.thin,
                                  self.n_draws, self.alpha, seed=self.random_state)
        self.schema_ = dataset.schema
        return self

    def sample(self, dataset, m=1, random_state=None) -> SyntheticRelease:
        check_is_fitted(self, "draws_")
        if dataset.schema != self.schema_:
            raise SchemaError("dataset schema differs from the fitted schema")
        seed = self.random_state if random_state is None else random_state
        return generate_mixture_release(self.draws_, dataset, m, seed,
                                        provenance={"hyperparameters": self.get_params()})

    def fit_sample(self, dataset, m=1):
        return self.fit(dataset).sample(dataset, m)
