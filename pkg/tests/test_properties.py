"""Hypothesis properties for the numeric building blocks."""
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wordimportance.analysis import least_important, length_normalize, pos_distribution
from wordimportance.annotations import POS, Fertility, classify_fertility, fertility_from_alignment
from wordimportance.attribution import ContributionMatrix, ImportanceVector, integrated_gradients, merge_to_words, word_importance
from wordimportance.bleu import BleuStats, corpus_stats
from wordimportance.data import BOS_ID, SentencePair
from wordimportance.estimators import rank_scores
from wordimportance.seqmodel import forward
from wordimportance.tree import RegressionTree

finite = st.floats(-50, 50, allow_nan=False)
fixture_ok = settings(suppress_health_check=[HealthCheck.function_scoped_fixture], deadline=None)


@st.composite
def matrices(draw, max_m=8, max_n=6):
    m = draw(st.integers(1, max_m))
    n = draw(st.integers(1, max_n))
    return draw(arrays(np.float64, (m, n), elements=finite))


@st.composite
def spans_for(draw, m):
    cuts = sorted(draw(st.sets(st.integers(1, m - 1), max_size=m - 1))) if m > 1 else []
    bounds = [0] + cuts + [m]
    return list(zip(bounds[:-1], bounds[1:]))


@given(arrays(np.float64, st.integers(1, 30), elements=st.sampled_from([0.0, 0.1, 0.5, 1.0]) | finite))
def test_ranking_is_sorted_permutation(scores):
    r = rank_scores(scores)
    assert sorted(r) == list(range(len(scores)))
    for a, b in zip(r, r[1:]):
        assert scores[a] > scores[b] or (scores[a] == scores[b] and a < b)


@given(matrices(), finite)
def test_softmax_is_shift_invariant_distribution(values, c):
    iv = word_importance(ContributionMatrix(values, 1)).values
    assert iv.sum() == pytest.approx(1.0) and np.all(iv >= 0)
    # adding c to every entry of one column adds c to every row sum
    shifted = values.copy()
    shifted[:, 0] += c
    assert np.allclose(word_importance(ContributionMatrix(shifted, 1)).values, iv, atol=1e-9)


@given(st.data())
def test_merge_preserves_mass(data):
    values = data.draw(matrices(max_m=10))
    spans = data.draw(spans_for(values.shape[0]))
    iv = word_importance(ContributionMatrix(values, 1))
    merged = merge_to_words(iv, spans).values
    assert len(merged) == len(spans)
    assert merged.sum() == pytest.approx(1.0)
    assert np.allclose(merged, [iv.values[a:b].sum() for a, b in spans])


tokens = st.lists(st.integers(0, 5), max_size=12)


@given(st.lists(st.tuples(tokens, tokens), min_size=1, max_size=6), st.randoms(use_true_random=False))
def test_bleu_accumulation_is_order_free(pairs, rnd):
    stats = [BleuStats.from_sentence(h, r) for h, r in pairs]
    total = sum(stats[1:], stats[0])
    order = list(range(len(stats)))
    rnd.shuffle(order)
    other = sum((stats[i] for i in order[1:]), stats[order[0]])
    assert total == other
    hyps, refs = zip(*pairs)
    assert corpus_stats(hyps, refs) == total
    for smooth in (False, True):
        assert 0.0 <= total.score(smooth) <= 1.0


@given(tokens.filter(len))
def test_bleu_self_match_is_one(h):
    assert BleuStats.from_sentence(h, h).score(smooth=True) == pytest.approx(1.0)


@given(st.integers(1, 7), st.integers(1, 7), st.data())
def test_fertility_conserves_target_credit(M, N, data):
    links = data.draw(st.sets(st.tuples(st.integers(0, M - 1), st.integers(0, N - 1)), max_size=M * N))
    raw, classes = fertility_from_alignment(links, M, N)
    assert sum(raw) == len({t for _, t in links})
    for r, c in zip(raw, classes):
        assert c == classify_fertility(r)
        assert (c is Fertility.ZERO) == (r == 0)
        assert (c is Fertility.ONE) == (r == 1)
        assert (c is Fertility.GE2) == (r > 1)


@given(st.fractions(min_value=0, max_value=5))
def test_fertility_classes_partition(raw):
    assert classify_fertility(Fraction(raw)) in set(Fertility)


@given(arrays(np.float64, st.integers(1, 25), elements=st.floats(0, 1)),
       st.lists(st.sampled_from([5, 10, 15, 30, 50, 100]), min_size=2, max_size=2, unique=True))
def test_undertranslation_predictions_nest(v, ts):
    lo, hi = sorted(ts)
    small, big = least_important(v, lo), least_important(v, hi)
    assert 1 <= len(small) <= len(big) <= len(v)
    assert set(small) <= set(big)
    assert len(least_important(v, 100)) == len(v)


@given(st.lists(st.lists(st.sampled_from(list(POS)), min_size=1, max_size=8), min_size=1, max_size=8), st.data())
def test_distribution_shares_sum_to_one(tags, data):
    imps = []
    for t in tags:
        raw = data.draw(arrays(np.float64, len(t), elements=st.floats(0.01, 1)))
        imps.append(raw / raw.sum())
    rows = pos_distribution(imps, tags)
    present = [r for r in rows if not r.omitted and not r.is_total]
    if all(t is POS.NONE for sent in tags for t in sent):
        assert not present
        return
    assert sum(r.count_share for r in present) == pytest.approx(1.0)
    assert sum(r.attr_share for r in present) == pytest.approx(1.0)
    totals = [r for r in rows if r.is_total and not r.omitted]
    assert sum(r.count_share for r in totals) == pytest.approx(1.0)
    for imp in imps:
        assert length_normalize(imp).mean() == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(40, 120), st.integers(2, 5))
def test_tree_importances_and_column_order(seed, n, d):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 3, size=(n, d)).astype(float)
    y = X[:, 0] * 2 + rng.normal(size=n) * 0.3
    tree = RegressionTree(max_depth=4, min_leaf=5).fit(X, y)
    imp = tree.feature_importances
    assert np.all(imp >= 0)
    assert imp.sum() == pytest.approx(1.0) or imp.sum() == 0.0
    perm = rng.permutation(d)
    imp_p = RegressionTree(max_depth=4, min_leaf=5).fit(X[:, perm], y).feature_importances
    assert np.allclose(imp_p, imp[perm], atol=1e-9)


@fixture_ok
@given(st.lists(st.integers(4, 11), min_size=1, max_size=6), st.lists(st.integers(4, 11), max_size=4))
def test_forward_is_distribution(untrained_model, src, prefix):
    p = forward(untrained_model, untrained_model.embed(src), [BOS_ID] + prefix)
    assert p.shape == (len(untrained_model.vocab),)
    assert np.all(p >= 0) and p.sum() == pytest.approx(1.0)


@fixture_ok
@given(st.lists(st.integers(4, 11), min_size=1, max_size=5), st.lists(st.integers(4, 11), min_size=1, max_size=4),
       st.integers(1, 40))
def test_linear_ig_is_step_invariant(linear_model, src, tgt, steps):
    pair = SentencePair(src, tgt)
    a = integrated_gradients(linear_model, pair, steps).values
    b = integrated_gradients(linear_model, pair, 1).values
    assert np.allclose(a, b, atol=1e-10)
