import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kleincantor.hypgeo import distance
from kleincantor.kleinian import (
    BudgetExceeded,
    GeneratorSpec,
    PingPongError,
    build_schottky,
    conjugation_invariance_check,
    cyclic_subgroup,
    displacements_at,
    enumerate_words,
    estimate_delta,
    load_preset,
    orbit_rows,
    parse_word,
    poincare_truncated,
    preset_names,
    subgroup_filter,
    trivial_table,
    word_string,
)

PERP = [((math.pi, 0.0), 4.0), ((-math.pi / 2, math.pi / 2), 4.0)]


@pytest.fixture(scope="module")
def small_words(group):
    return enumerate_words(group, max_length=4)


# ---------------------------------------------------------------------------
# groups


def test_perpendicular_generators_form_a_schottky_group():
    G = build_schottky(PERP)
    assert G.rank == 2
    # with 0 on the axis of gamma, d(0, gamma 0) is the translation length
    assert G.translation_length == pytest.approx(4.0, rel=1e-12)
    # ping-pong disks: pairwise disjoint by the angular gap between them
    k = 2 * G.rank
    for i in range(k):
        for j in range(i + 1, k):
            gap = abs(math.remainder(G.disk_angle[i] - G.disk_angle[j], 2 * math.pi))
            assert gap > G.disk_half_angle[i] + G.disk_half_angle[j]


def test_short_translations_overlap():
    with pytest.raises(PingPongError) as info:
        build_schottky([((math.pi, 0.0), 0.1), ((-math.pi / 2, math.pi / 2), 0.1)])
    assert info.value.pair is not None


def test_rank_one_is_rejected():
    with pytest.raises(ValueError):
        build_schottky([GeneratorSpec((math.pi, 0.0), 3.0)])


@pytest.mark.parametrize("name", preset_names())
def test_presets_load_with_origin_on_the_axis(name):
    G = load_preset(name)
    assert G.translation_length == pytest.approx(
        distance([0.0, 0.0], G.basepoint(1)), rel=1e-12)


# ---------------------------------------------------------------------------
# words


def test_word_counts(group):
    assert len(enumerate_words(group, max_length=1)) == 4
    assert len(enumerate_words(group, max_length=1, include_identity=True)) == 5
    table = enumerate_words(group, max_length=3)
    lengths = np.array([len(w) for w in table])
    assert np.sum(lengths == 3) == 36
    assert np.sum(lengths == 2) == 12


def test_words_are_unique_and_reduced(small_words):
    seen = {w.letters for w in small_words}
    assert len(seen) == len(small_words)
    assert all(w.letters[i] != w.letters[i + 1] ^ 1 for w in small_words
               for i in range(len(w) - 1))


def test_displacement_enumeration_is_a_superset(group):
    L, t = 6, 7.0
    by_length = enumerate_words(group, max_length=L)
    pruned = {w.letters for w in enumerate_words(group, max_displacement=t)}
    wanted = {w.letters for w in by_length if w.displacement <= t}
    assert wanted <= pruned


def test_certified_length_covers_displacement(group, words):
    t = 10.0
    L = group.certified_length(t)
    lengths = np.array([len(w) for w in words.within(t)])
    assert lengths.max() <= L


def test_budget_error_reports_partial_count(group):
    with pytest.raises(BudgetExceeded) as info:
        enumerate_words(group, max_length=12, budget=1000)
    # nodes created before the level that crossed the budget
    assert 0 < info.value.partial_count <= 1000
    assert "budget" in str(info.value)


def test_freeness_images_distinct(group, small_words):
    a, b = small_words.elements
    img = b / np.conj(a)
    diff = np.abs(img[:, None] - img[None, :])
    np.fill_diagonal(diff, 1.0)
    assert diff.min() > 1e-6


def test_displacement_symmetry(group, small_words):
    for w in small_words:
        assert group.inverse(w).displacement == pytest.approx(w.displacement, rel=1e-12)


def test_orbit_point_image(group):
    w = group.word("abA")
    op = group.orbit_point(w, 2)
    g = group.isometry(w.letters)
    assert distance(op.image, g(group.basepoint(2))) < 1e-9


# ---------------------------------------------------------------------------
# the subgroup H


def test_coset_labels(group):
    assert group.word("abAb").coset_label == 0
    assert group.word("aab").coset_label == 2
    assert word_string(parse_word("abAB")) == "abAB"


def test_subgroup_filter_stream_and_table(group, small_words):
    H = subgroup_filter(small_words, 0)
    assert np.all(H.labels == 0)
    stream = list(subgroup_filter(iter(small_words), 1))
    assert all(w.coset_label == 1 for w in stream)
    assert len(stream) == int(np.sum(small_words.labels == 1))


def test_closure_and_normality(group, small_words):
    rng = np.random.default_rng(3)
    H = list(subgroup_filter(small_words, 0))
    G = list(small_words)
    for _ in range(100):
        h1, h2 = H[rng.integers(len(H))], H[rng.integers(len(H))]
        assert group.multiply(h1, h2).coset_label == 0
        assert group.inverse(h1).coset_label == 0
        g = G[rng.integers(len(G))]
        conj = group.multiply(group.multiply(g, h1), group.inverse(g))
        assert conj.coset_label == 0


# ---------------------------------------------------------------------------
# Poincare series


def test_trivial_group_series_is_one(group):
    for s in (0.0, 0.5, 2.0):
        assert poincare_truncated(trivial_table(group), s, t=10.0).value == 1.0


@pytest.mark.parametrize("s", [0.3, 1.0, 2.5])
def test_cyclic_series_closed_form(group, s):
    lam = group.translation_length
    table = cyclic_subgroup(group, 200.0)
    q = math.exp(-s * lam)
    assert poincare_truncated(table, s).value == pytest.approx(1 + 2 * q / (1 - q), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.0, 1.0), st.floats(2.0, 12.0), st.floats(0.0, 3.0))
def test_series_monotone(words, s, ds, t, dt):
    lo = poincare_truncated(words, s, t=t).value
    assert poincare_truncated(words, s + ds, t=t).value <= lo
    assert poincare_truncated(words, s, t=min(t + dt, 16.0)).value >= lo


def test_series_flags_uncertified_coverage(h_table, group):
    # from z_3 the table would need to reach 16 + 2 * 3 * lambda
    rep = poincare_truncated(h_table, 0.5, group.basepoint(3), t=16.0)
    assert not rep.certified
    assert poincare_truncated(h_table, 0.5, None, t=8.0).certified


@pytest.mark.parametrize("n, t", [(-3, 4.0), (-2, 8.0), (-1, 8.0), (0, 8.0), (1, 8.0),
                                  (2, 8.0), (3, 4.0)])
def test_conjugation_invariance(h_table, n, t):
    # the table reaches 16 = t + 2 |n| lambda only for |n| <= 2 at t = 8
    rep = conjugation_invariance_check(h_table, 0.4, n, t)
    assert rep.certified and rep.passed
    assert rep.max_abs_diff < 1e-9 * t
    # away from the cutoff (elements at exactly t may fall either side) the counts agree
    d0 = np.sort(displacements_at(h_table))
    dn = np.sort(displacements_at(h_table, h_table.group.basepoint(n)))
    cut = t - 1e-6
    np.testing.assert_allclose(d0[d0 <= cut], dn[dn <= cut], rtol=1e-9)


def test_conjugation_needs_certified_table(h_table):
    assert not conjugation_invariance_check(h_table, 0.4, 3, 8.0).passed


def test_conjugation_n0_is_identical(h_table):
    rep = conjugation_invariance_check(h_table, 0.4, 0, 8.0)
    assert rep.max_abs_diff == 0.0


def test_negative_level_matches_inverted_gamma(group, h_table):
    # relabel: gamma^{-1} as the designated generator, same second generator
    inv = build_schottky([((0.0, math.pi), 2.0), ((-math.pi / 2, math.pi / 2), 2.0)],
                         labels=[1, 0])
    H_inv = subgroup_filter(enumerate_words(inv, max_displacement=16.0), 0)
    d_neg = np.sort(displacements_at(h_table, group.basepoint(-2)))
    d_pos = np.sort(displacements_at(H_inv, inv.basepoint(2)))
    d_neg, d_pos = d_neg[d_neg <= 8.0], d_pos[d_pos <= 8.0]
    np.testing.assert_allclose(d_neg, d_pos, rtol=1e-9)


# ---------------------------------------------------------------------------
# exponent of convergence


def test_cyclic_delta_band_contains_zero(group):
    est = estimate_delta(cyclic_subgroup(group, 40.0))
    assert est.lo == 0.0
    assert est.value < 0.1


def test_delta_methods_agree_on_default(words, h_table):
    for table in (words, h_table):
        a = estimate_delta(table, "counting_fit")
        b = estimate_delta(table, "series_bisection")
        assert a.overlaps(b)
        assert 0 < a.value < 1


def test_delta_regression_baseline(words, h_table):
    # frozen from a run of the estimator on the default preset, t = 16
    assert estimate_delta(words).value == pytest.approx(0.7475636592176591, rel=1e-9)
    assert estimate_delta(h_table).value == pytest.approx(0.6880747765575532, rel=1e-9)


def test_smaller_disks_lower_delta():
    values = []
    for length in (2.0, 3.0, 4.0):
        G = build_schottky([((math.pi, 0.0), length), ((-math.pi / 2, math.pi / 2), length)])
        values.append(estimate_delta(enumerate_words(G, max_displacement=16.0)).value)
    assert values[0] > values[1] > values[2]


def test_orbit_rows(group, small_words):
    rows = orbit_rows(subgroup_filter(small_words, 0), 1)
    assert rows and all(r["label"] == 0 for r in rows)
