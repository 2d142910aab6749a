import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import reference_match
from synrisk.data import Dataset, Schema, SchemaError, Target, TargetFile, categorical, continuous
from synrisk.identification import (IdentificationRiskEstimator, InconsistentPopulationError,
                                    MatchConfig, TargetMatch, _tie_stats, draw_plausible_originals,
                                    match_given_originals, monte_carlo_identification,
                                    summarize_risks)
from synrisk.synthesis import (CartSynthesizer, MixtureDraw, MixtureDraws, SyntheticRelease,
                               fit_mixture, generate_mixture_release)


def _schema():
    return Schema((
        categorical("sex", 2, intruder_known=True),
        categorical("age", 3, synthesized=True, intruder_known=True),
        continuous("income", 0, 100, synthesized=True, intruder_known=True),
        categorical("other", 2),
    ))


def _released(values):
    return Dataset(_schema(), np.asarray(values, dtype=float))


RELEASED = _released([[0, 1, 50.0, 0], [0, 1, 52.0, 1], [1, 1, 50.0, 0], [0, 2, 50.0, 1],
                      [0, 1, 70.0, 0]])
CFG = MatchConfig(radius={2: (5.0, "absolute")})


def _orig(ds):
    return ds.values[:, ds.schema.synthesized]


def test_unsynthesized_mismatch_gets_zero():
    t = Target("t", {0: 0.0, 1: 1.0, 2: 50.0})
    p = match_given_originals(t, RELEASED, _orig(RELEASED), CFG)
    assert p[2] == 0.0  # differs on sex
    assert p[3] == 0.0  # differs on synthesized age
    assert p[4] == 0.0  # income outside the radius


def test_in_sample_two_matches():
    t = Target("t", {0: 0.0, 1: 1.0, 2: 50.0})
    p = match_given_originals(t, RELEASED, _orig(RELEASED), CFG)
    np.testing.assert_array_equal(p, [0.5, 0.5, 0, 0, 0, 0])


def test_population_mode_remainder_not_in_release():
    ds = _released([[0, 1, 50.0, 0]] * 4 + [[1, 0, 10.0, 0]])
    cfg = MatchConfig(in_sample=False, population_size=10, radius={2: (1.0, "absolute")})
    p = match_given_originals(Target("t", {0: 0.0, 1: 1.0, 2: 50.0}), ds, _orig(ds), cfg)
    np.testing.assert_allclose(p, [0.1, 0.1, 0.1, 0.1, 0.0, 0.6], rtol=0, atol=0)


def test_no_match_in_sample_puts_mass_outside():
    t = Target("t", {0: 1.0, 1: 0.0})
    p = match_given_originals(t, RELEASED, _orig(RELEASED), CFG)
    np.testing.assert_array_equal(p, [0, 0, 0, 0, 0, 1])


def test_population_smaller_than_matches_errors():
    cfg = MatchConfig(in_sample=False, population_size=1, radius={2: (5.0, "absolute")})
    with pytest.raises(InconsistentPopulationError):
        match_given_originals(Target("t", {0: 0.0, 1: 1.0, 2: 50.0}), RELEASED,
                              _orig(RELEASED), cfg)


def test_relative_radius():
    cfg = MatchConfig(radius={2: (0.05, "relative")})
    t = Target("t", {2: 50.0})
    p = match_given_originals(t, RELEASED, _orig(RELEASED), cfg)
    # |52 - 50| = 2 <= 0.05 * 50
    assert p[:5].tolist() == [0.25, 0.25, 0.25, 0.25, 0.0]


def test_config_invariants():
    with pytest.raises(ValueError):
        MatchConfig(radius={2: (0.0, "absolute")})
    with pytest.raises(ValueError):
        MatchConfig(h=0)
    with pytest.raises(ValueError):
        MatchConfig(in_sample=False)
    with pytest.raises(ValueError):
        MatchConfig(radius={2: (1.0, "euclidean")})


def test_missing_radius_names_variable():
    t = Target("t", {2: 50.0})
    with pytest.raises(SchemaError, match="income"):
        match_given_originals(t, RELEASED, _orig(RELEASED), MatchConfig())


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 2), st.floats(0, 100)),
                min_size=1, max_size=12),
       st.tuples(st.integers(0, 1), st.integers(0, 2), st.floats(0, 100)),
       st.floats(0.01, 30), st.floats(0.01, 30), st.booleans(), st.integers(12, 40))
def test_matches_reference_and_properties(rows, tgt, r1, r2, in_sample, N):
    ds = _released([[a, b, c, 0] for a, b, c in rows])
    t = Target("t", {0: float(tgt[0]), 1: float(tgt[1]), 2: tgt[2]})
    lo, hi = sorted((r1, r2))
    probs = []
    for r in (lo, hi):
        cfg = MatchConfig(in_sample=in_sample, population_size=None if in_sample else N,
                          radius={2: (r, "absolute")})
        p = match_given_originals(t, ds, _orig(ds), cfg)
        ref = reference_match([tgt[0]], [tgt[1], tgt[2]], ds.values[:, [0]],
                              _orig(ds), radius={1: (r, "absolute")}, in_sample=in_sample, N=N)
        np.testing.assert_allclose(p, ref, rtol=0, atol=1e-15)
        assert abs(p.sum() - 1.0) < 1e-9
        assert (p[:-1][ds.values[:, 0] != tgt[0]] == 0).all()
        probs.append(p)
    # enlarging the radius never loses a match
    assert ((probs[1][:-1] > 0) >= (probs[0][:-1] > 0)).all()
    if in_sample and (probs[0][:-1] > 0).any():
        assert probs[0][-1] == 0.0


# -- plausible originals ----------------------------------------------------------

def _mixture_release(ds, draws, m=1, seed=0):
    return generate_mixture_release(draws, ds, m, seed=seed)


def test_unknown_synthesizer_single_release_returns_its_columns(small_dataset):
    draws = fit_mixture(small_dataset, 2, burn_in=5, n_draws=3, seed=0)
    rel = _mixture_release(small_dataset, draws)
    y = draw_plausible_originals(rel, s_known=False, seed=1)
    np.testing.assert_array_equal(y, rel.synthesized_columns(0))


def test_known_synthesizer_point_mass():
    schema = Schema((categorical("g", 2), categorical("a", 3, synthesized=True),
                     categorical("b", 2, synthesized=True)))
    ds = Dataset(schema, np.array([[0, 0, 0], [1, 1, 1], [0, 2, 0]]))
    mats = (np.array([[0.5, 0.5]]), np.array([[0.0, 0.0, 1.0]]), np.array([[0.0, 1.0]]))
    draws = MixtureDraws.from_draws([MixtureDraw(np.array([1.0]), mats)], [0, 1, 2], [1, 2])
    rel = _mixture_release(ds, draws)
    for s in range(3):
        np.testing.assert_array_equal(draw_plausible_originals(rel, True, seed=s), [[2, 1]] * 3)


def _two_class_release():
    schema = Schema((categorical("g", 2, intruder_known=True),
                     categorical("y", 2, synthesized=True, intruder_known=True)))
    w = np.array([0.3, 0.7])
    pg = np.array([[0.8, 0.2], [0.1, 0.9]])
    py = np.array([[0.9, 0.1], [0.25, 0.75]])
    draws = MixtureDraws.from_draws([MixtureDraw(w, (pg, py))], [0, 1], [1])
    ds = Dataset(schema, np.array([[0, 0], [1, 1], [0, 1], [1, 0], [0, 0]]))
    predictive = []
    for g in ds.values[:, 0].astype(int):
        post = w * pg[:, g]
        predictive.append((post / post.sum()) @ py[:, 1])
    return _mixture_release(ds, draws), ds, np.array(predictive)


def test_known_synthesizer_predictive_frequencies():
    rel, _, p1 = _two_class_release()
    rng = np.random.default_rng(0)
    draws = np.stack([draw_plausible_originals(rel, True, seed=rng) for _ in range(10_000)])
    np.testing.assert_allclose(draws[:, :, 0].mean(axis=0), p1, atol=0.02)


# -- Monte Carlo ------------------------------------------------------------------

def test_single_iteration_equals_one_evaluation(small_dataset):
    draws = fit_mixture(small_dataset, 2, burn_in=5, n_draws=3, seed=0)
    rel = _mixture_release(small_dataset, draws)
    z = rel.datasets[0]
    targets = TargetFile(small_dataset.schema,
                         [Target(str(i), {0: small_dataset.values[i, 0],
                                          1: small_dataset.values[i, 1]}, i + 1)
                          for i in range(10)])
    res = monte_carlo_identification(targets, rel, MatchConfig(h=1), seed=3)
    for t, mres in zip(targets, res.matches):
        ref = match_given_originals(t, z, rel.synthesized_columns(0), MatchConfig())
        np.testing.assert_array_equal(mres.dense(), ref)


def test_two_outcome_enumeration():
    schema = Schema((categorical("y", 2, synthesized=True, intruder_known=True),))
    ds = Dataset(schema, np.array([[0.0]]))
    draws = MixtureDraws.from_draws([MixtureDraw(np.array([1.0]), (np.full((1, 2), 0.5),))],
                                    [0], [0])
    rel = _mixture_release(ds, draws)
    tf = TargetFile(schema, [Target("t", {0: 1.0}, 1)])
    res = monte_carlo_identification(tf, rel, MatchConfig(h=10_000, s_known=True), seed=1)
    # outcome y=1 (prob 1/2) matches record 1; outcome y=0 leaves the target unmatched
    assert abs(res.matches[0].dense()[0] - 0.5) < 0.02


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000))
def test_monte_carlo_within_three_standard_errors(seed):
    rel, ds, p1 = _two_class_release()
    t = Target("t", {0: 0.0, 1: 1.0}, 3)
    h = 2_000
    res = monte_carlo_identification(TargetFile(ds.schema, [t]), rel,
                                     MatchConfig(h=h, s_known=True), seed=seed)
    # exact expectation by enumerating the candidate records' outcomes (g = 0 rows)
    rows = [0, 2, 4]
    expected = np.zeros(6)
    per_outcome = []
    for ys in itertools.product([0, 1], repeat=3):
        prob = np.prod([p1[r] if y else 1 - p1[r] for r, y in zip(rows, ys)])
        cand = ds.values[:, 1].copy()
        cand[rows] = ys
        v = reference_match([0], [1], ds.values[:, [0]], cand[:, None])
        expected += prob * v
        per_outcome.append((prob, v))
    var = sum(pr * (v - expected) ** 2 for pr, v in per_outcome)
    se = np.sqrt(var / h)
    err = np.abs(res.matches[0].dense() - expected)
    assert (err <= 3 * se + 1e-12).all()


def test_unsynthesized_dominance_under_random_draws(small_dataset):
    draws = fit_mixture(small_dataset, 3, burn_in=5, n_draws=10, seed=0)
    rel = _mixture_release(small_dataset, draws, m=3)
    g = small_dataset.values[:, 0]
    targets = TargetFile(small_dataset.schema,
                         [Target(str(i), {0: g[i], 1: 1.0}, i + 1) for i in range(8)])
    for s_known in (False, True):
        res = monte_carlo_identification(targets, rel, MatchConfig(h=50, s_known=s_known),
                                         seed=2)
        for t, mres in zip(targets, res.matches):
            p = mres.dense()
            assert (p[:-1][g != t.known[0]] == 0).all()
            assert abs(p.sum() - 1) < 1e-9


def test_parallel_equals_serial(small_dataset):
    draws = fit_mixture(small_dataset, 3, burn_in=5, n_draws=10, seed=0)
    rel = _mixture_release(small_dataset, draws, m=3)
    targets = TargetFile(small_dataset.schema,
                         [Target(str(i), {0: small_dataset.values[i, 0],
                                          1: small_dataset.values[i, 1]}, i + 1)
                          for i in range(20)])
    a = IdentificationRiskEstimator(h=30, s_known=True, random_state=4).fit(rel).assess(targets)
    b = IdentificationRiskEstimator(h=30, s_known=True, random_state=4, n_jobs=3) \
        .fit(rel).assess(targets)
    for x, y in zip(a.matches, b.matches):
        np.testing.assert_array_equal(x.dense(), y.dense())
    assert a.summary == b.summary


def test_population_table_and_missing_entry(small_dataset):
    draws = fit_mixture(small_dataset, 2, burn_in=5, n_draws=3, seed=0)
    rel = _mixture_release(small_dataset, draws)
    targets = TargetFile(small_dataset.schema,
                         [Target("a", {0: 0.0}, 1), Target("b", {0: 1.0})])
    n0 = int((small_dataset.values[:, 0] == 0).sum())
    est = IdentificationRiskEstimator(in_sample=False, population_size={"a": 100, "b": 200},
                                      random_state=0)
    res = est.fit(rel).assess(targets)
    assert res.matches[0].p_not_in_release == pytest.approx((100 - n0) / 100)
    assert res.summary.excluded == 1
    est = IdentificationRiskEstimator(in_sample=False, population_size={"a": 100},
                                      random_state=0)
    with pytest.raises(ValueError, match="b"):
        est.fit(rel).assess(targets)


def test_cart_release_with_radius(mixed_dataset):
    rel = CartSynthesizer(random_state=0).fit_sample(mixed_dataset, m=2)
    targets = TargetFile(mixed_dataset.schema,
                         [Target(str(i), {0: mixed_dataset.values[i, 0],
                                          1: mixed_dataset.values[i, 1]}, i + 1)
                          for i in range(10)])
    for s_known in (False, True):
        res = IdentificationRiskEstimator(radius={"income": 2.0}, h=20, s_known=s_known,
                                          random_state=1).fit(rel).assess(targets)
        assert all(abs(m.dense().sum() - 1) < 1e-9 for m in res.matches)
    with pytest.raises(SchemaError, match="income"):
        IdentificationRiskEstimator().fit(rel).assess(targets)


# -- summaries --------------------------------------------------------------------

def _tm(c, T):
    K, F = int(c * T == 1), int(c * (1 - T) == 1)
    return TargetMatch("x", np.zeros(0, dtype=int), np.zeros(0), 0.0, 5, c, 1, T, K, F)


def test_summary_unique_true_match():
    s = summarize_risks([_tm(1, 1)])
    assert (s.expected_match_risk, s.true_match_rate, s.false_match_rate) == (1.0, 1.0, 0.0)


def test_summary_four_way_tie():
    s = summarize_risks([_tm(4, 1)])
    assert s.expected_match_risk == 0.25 and s.true_match_rate == 0.0


def test_summary_three_targets():
    s = summarize_risks([_tm(1, 1), _tm(1, 0), _tm(2, 1)])
    assert (s.expected_match_risk, s.true_match_rate, s.false_match_rate) == (1.5, 1 / 3, 1 / 2)
    assert s.n_unique == 2


def test_summary_without_unique_matches_is_flagged():
    s = summarize_risks([_tm(2, 1), _tm(3, 0)])
    assert s.false_match_rate == 0.0 and s.no_unique_matches


def test_tie_statistics():
    rows = np.array([0, 3, 4])
    probs = np.array([0.25, 0.25 + 1e-14, 0.1])
    assert _tie_stats(rows, probs, 5, 4) == (2, 1, 0, 0)
    assert _tie_stats(rows, probs, 5, 5) == (2, 0, 0, 0)
    assert _tie_stats(rows, np.array([0.5, 0.2, 0.1]), 5, 2) == (1, 0, 0, 1)
    # all records at zero probability tie
    assert _tie_stats(rows[:0], probs[:0], 5, 2) == (5, 1, 0, 0)
    assert _tie_stats(rows, probs, 5, None) == (2, None, None, None)
