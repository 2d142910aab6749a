"""Sequential CART synthesizer with within-leaf Bayesian bootstrap.

Each synthesized variable gets its own tree, fit on the un-synthesized
variables plus the synthesized variables earlier in the synthesis order.
Synthetic values are drawn from the confidential donors of the leaf a
record lands in, with donor weights drawn from a flat Dirichlet (Rubin's
Bayesian bootstrap). Categorical predictors split on their level codes.
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._validation import check_dataset, check_positive_int, check_rng
from ..data import Dataset, SchemaError
from .release import SyntheticRelease

logger = logging.getLogger(__name__)

_GAIN_TOL = 1e-12


class Tree:
    """Binary tree stored as flat arrays; node 0 is the root.

    ``feature[k] == -1`` marks a leaf; ``leaf_of[k]`` maps nodes to leaf
    numbers. Records with ``x[feature] <= threshold`` go left.
    """

    def __init__(self, feature, threshold, left, right, leaf_donors, leaf_rows):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.leaf_donors = [np.asarray(d, dtype=np.float64) for d in leaf_donors]
        self.leaf_rows = [np.asarray(r, dtype=np.int64) for r in leaf_rows]
        self.leaf_of = np.full(self.feature.size, -1, dtype=np.int64)
        self.leaf_of[self.feature < 0] = np.arange(int((self.feature < 0).sum()))
        if len(self.leaf_donors) != len(self.leaf_rows) or \
                len(self.leaf_donors) != int((self.feature < 0).sum()):
            raise ValueError("leaf bookkeeping inconsistent with node arrays")

    @property
    def n_leaves(self):
        return len(self.leaf_donors)

    @property
    def n_splits(self):
        return int((self.feature >= 0).sum())

    def apply(self, X) -> np.ndarray:
        """Leaf number reached by every row of X (columns = predictor order)."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            a = np.flatnonzero(active)
            f = self.feature[node[a]]
            go_left = X[a, f] <= self.threshold[node[a]]
            node[a] = np.where(go_left, self.left[node[a]], self.right[node[a]])
            active[a] = self.feature[node[a]] >= 0
        leaves = self.leaf_of[node]
        if (leaves < 0).any():
            raise RuntimeError("record routed to no leaf")
        return leaves

    def donor_leaf(self) -> np.ndarray:
        """Leaf number containing each training row."""
        n = sum(r.size for r in self.leaf_rows)
        out = np.empty(n, dtype=np.int64)
        for k, rows in enumerate(self.leaf_rows):
            out[rows] = k
        return out

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf_donors": [d.tolist() for d in self.leaf_donors],
            "leaf_rows": [r.tolist() for r in self.leaf_rows],
        }

    @classmethod
    def from_json(cls, doc):
        return cls(doc["feature"], doc["threshold"], doc["left"], doc["right"],
                   doc["leaf_donors"], doc["leaf_rows"])


def _best_split(X, y, idx, categorical_target, n_classes, min_leaf):
    """(gain, feature, threshold) of the best split of ``idx`` or None."""
    n = idx.size
    yy = y[idx]
    if categorical_target:
        onehot = np.eye(n_classes)[yy.astype(np.int64)]
        tot = onehot.sum(axis=0)
        parent = n - (tot ** 2).sum() / n  # n * gini
    else:
        yc = yy - yy.mean()
        parent = (yc ** 2).sum()
    if parent <= _GAIN_TOL:
        return None
    best = None
    for f in range(X.shape[1]):
        x = X[idx, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        # candidate cut after position i (left = first i+1 rows)
        valid = xs[:-1] < xs[1:]
        sizes = np.arange(1, n)
        valid &= (sizes >= min_leaf) & (n - sizes >= min_leaf)
        if not valid.any():
            continue
        if categorical_target:
            cum = np.cumsum(onehot[order], axis=0)[:-1]
            nl = sizes[:, None]
            left = nl[:, 0] - (cum ** 2).sum(axis=1) / nl[:, 0]
            rc = tot - cum
            nr = n - sizes
            right = nr - (rc ** 2).sum(axis=1) / nr
            child = left + right
        else:
            ys = yc[order]
            cs = np.cumsum(ys)[:-1]
            cs2 = np.cumsum(ys ** 2)[:-1]
            nl = sizes
            nr = n - sizes
            tot_s, tot_s2 = ys.sum(), (ys ** 2).sum()
            child = (cs2 - cs ** 2 / nl) + ((tot_s2 - cs2) - (tot_s - cs) ** 2 / nr)
        gain = np.where(valid, parent - child, -np.inf)
        i = int(np.argmax(gain))  # first max -> lowest threshold
        g = gain[i]
        if g > _GAIN_TOL * max(1.0, parent) and (best is None or g > best[0] + _GAIN_TOL * max(1.0, parent)):
            best = (g, f, 0.5 * (xs[i] + xs[i + 1]))
    return best


def build_tree(X, y, categorical_target, n_classes=0, min_leaf=5, max_depth=None) -> Tree:
    """Greedy CART: Gini for categorical targets, squared error otherwise.

    Ties go to the lowest predictor index, then the lowest threshold.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if min_leaf > n:
        raise ValueError(f"min_leaf={min_leaf} exceeds the {n} available rows")
    feature, threshold, left, right = [], [], [], []
    leaves: dict[int, np.ndarray] = {}
    stack = [(0, np.arange(n), 0)]
    feature.append(-1), threshold.append(0.0), left.append(-1), right.append(-1)
    order_of_leaves = []
    while stack:
        node, idx, depth = stack.pop()
        split = None
        if idx.size >= 2 * min_leaf and (max_depth is None or depth < max_depth):
            split = _best_split(X, y, idx, categorical_target, n_classes, min_leaf)
        if split is None:
            leaves[node] = idx
            continue
        _, f, thr = split
        go_left = X[idx, f] <= thr
        kids = []
        for part in (idx[go_left], idx[~go_left]):
            feature.append(-1), threshold.append(0.0), left.append(-1), right.append(-1)
            kids.append((len(feature) - 1, part))
        feature[node], threshold[node] = f, thr
        left[node], right[node] = kids[0][0], kids[1][0]
        # right pushed first so the left subtree is expanded first
        stack.append((kids[1][0], kids[1][1], depth + 1))
        stack.append((kids[0][0], kids[0][1], depth + 1))
    for k in range(len(feature)):
        if feature[k] < 0:
            order_of_leaves.append(k)
    rows = [leaves[k] for k in order_of_leaves]
    donors = [y[r] for r in rows]
    return Tree(feature, threshold, left, right, donors, rows)


class CartModel:
    """Fitted sequential trees.

    ``predictors[var]`` lists the schema indices feeding the tree for ``var``
    in column order.
    """

    def __init__(self, order, trees, predictors, synthesized):
        self.order = tuple(int(j) for j in order)
        self.trees = {int(k): v for k, v in trees.items()}
        self.predictors = {int(k): tuple(int(j) for j in v) for k, v in predictors.items()}
        self.synthesized = tuple(int(j) for j in synthesized)

    def route(self, var, values) -> np.ndarray:
        return self.trees[var].apply(values[:, list(self.predictors[var])])

    def sample_leaf_weights(self, rng):
        """One Bayesian-bootstrap snapshot: flat-Dirichlet weights per leaf."""
        snap = {}
        for var in self.order:
            snap[var] = [rng.dirichlet(np.ones(d.size)) for d in self.trees[var].leaf_donors]
        return snap

    def synthesize(self, values, rows, weights, rng) -> np.ndarray:
        """Sequentially synthesize ``rows`` of ``values`` (modified in place)."""
        sub = values[rows]
        for var in self.order:
            tree = self.trees[var]
            leaves = tree.apply(sub[:, list(self.predictors[var])])
            out = np.empty(rows.size)
            for k in np.unique(leaves):
                at = np.flatnonzero(leaves == k)
                cdf = np.cumsum(weights[var][k])
                u = rng.random(at.size) * cdf[-1]
                pick = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
                out[at] = tree.leaf_donors[k][pick]
            sub[:, var] = out
        values[rows] = sub
        return values


def fit_cart(dataset: Dataset, order=None, min_leaf=5, max_depth=None) -> CartModel:
    """Fit one tree per synthesized variable in ``order``."""
    check_dataset(dataset)
    schema = dataset.schema
    min_leaf = check_positive_int(min_leaf, "min_leaf")
    order = list(schema.synthesized if order is None else
                 [schema.index(v) if isinstance(v, str) else int(v) for v in order])
    if not order:
        raise ValueError("synthesis order is empty")
    if sorted(order) != sorted(schema.synthesized):
        raise SchemaError("synthesis order must list every synthesized variable once")
    if min_leaf > dataset.n:
        raise ValueError(f"min_leaf={min_leaf} exceeds n={dataset.n}")
    us = schema.unsynthesized
    trees, preds = {}, {}
    for k, var in enumerate(order):
        p = list(us) + order[:k]
        X = dataset.values[:, p] if p else np.zeros((dataset.n, 0))
        v = schema[var]
        trees[var] = build_tree(X, dataset.values[:, var], v.is_categorical,
                                v.cardinality if v.is_categorical else 0, min_leaf, max_depth)
        preds[var] = p
        logger.debug("tree for %s: %d leaves", v.name, trees[var].n_leaves)
    return CartModel(order, trees, preds, schema.synthesized)


class CartDraws:
    """CART model plus one leaf-weight snapshot per release."""

    kind = "cart"

    def __init__(self, model: CartModel, snapshots):
        self.model = model
        self.snapshots = list(snapshots)

    def __len__(self):
        return len(self.snapshots)

    def __getitem__(self, h):
        return self.snapshots[h]

    @property
    def synthesized(self):
        return self.model.synthesized

    def sample_synthesized(self, dataset: Dataset, rows, draw_index, rng):
        """Same contract as ``MixtureDraws.sample_synthesized``."""
        rng = check_rng(rng)
        rows = np.asarray(rows, dtype=np.int64)
        draw_index = np.atleast_1d(draw_index)
        s = list(self.synthesized)
        out = np.empty((draw_index.size, rows.size, len(s)))
        for i, h in enumerate(draw_index):
            vals = np.array(dataset.values[rows])
            self.model.synthesize(vals, np.arange(rows.size), self.snapshots[h], rng)
            out[i] = vals[:, s]
        return out

    def to_json(self, schema) -> dict:
        names = schema.names
        m = self.model
        return {
            "format": "synrisk-cart-model",
            "version": 1,
            "order": [names[j] for j in m.order],
            "synthesized": [names[j] for j in m.synthesized],
            "trees": {names[j]: {"predictors": [names[p] for p in m.predictors[j]],
                                 **m.trees[j].to_json()} for j in m.order},
            "snapshots": [{names[j]: [w.tolist() for w in snap[j]] for j in m.order}
                          for snap in self.snapshots],
        }

    @classmethod
    def from_json(cls, doc, schema):
        if doc.get("version") != 1:
            raise ValueError(f"unsupported CART model version {doc.get('version')!r}")
        order = [schema.index(v) for v in doc["order"]]
        trees, preds = {}, {}
        for name, t in doc["trees"].items():
            j = schema.index(name)
            trees[j] = Tree.from_json(t)
            preds[j] = [schema.index(p) for p in t["predictors"]]
        model = CartModel(order, trees, preds, [schema.index(v) for v in doc["synthesized"]])
        snaps = [{schema.index(k): [np.asarray(w) for w in v] for k, v in s.items()}
                 for s in doc["snapshots"]]
        return cls(model, snaps)


def cart_generate(model: CartModel, dataset: Dataset, m: int, seed=None,
                  provenance=None) -> SyntheticRelease:
    """m releases; each draws a fresh leaf-weight snapshot and keeps it."""
    m = check_positive_int(m, "m")
    datasets, snaps = [], []
    for l in range(m):
        rng = check_rng(None if seed is None else [int(seed), l])
        snap = model.sample_leaf_weights(rng)
        vals = np.array(dataset.values)
        model.synthesize(vals, np.arange(dataset.n), snap, rng)
        datasets.append(dataset.with_values(vals, validate=False))
        snaps.append(snap)
    prov = {"synthesizer": "cart", "seed": seed}
    prov.update(provenance or {})
    return SyntheticRelease(datasets, CartDraws(model, snaps), prov)


class CartSynthesizer(BaseEstimator):
    """Sequential CART synthesizer.

    Parameters
    ----------
    order : list of str or None
        Synthesis order; defaults to schema order of the synthesized variables.
    min_leaf : int, default=5
    max_depth : int or None
    random_state : int or None
    """

    def __init__(self, order=None, min_leaf=5, max_depth=None, random_state=None):
        self.order = order
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.random_state = random_state

    def fit(self, dataset, y=None):
        self.model_ = fit_cart(dataset, self.order, self.min_leaf, self.max_depth)
        self.schema_ = dataset.schema
        return self

    def sample(self, dataset, m=1, random_state=None) -> SyntheticRelease:
        check_is_fitted(self, "model_")
        if dataset.schema != self.schema_:
            raise SchemaError("dataset schema differs from the fitted schema")
        seed = self.random_state if random_state is None else random_state
        return cart_generate(self.model_, dataset, m, seed,
                             provenance={"hyperparameters": self.get_params()})

    def fit_sample(self, dataset, m=1):
        return self.fit(dataset).sample(dataset, m)
