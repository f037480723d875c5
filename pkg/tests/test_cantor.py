import math

import numpy as np
import pytest

from kleincantor.cantor import (
    Construction,
    ConstructionSchedule,
    InsufficientDepth,
    box_counting_dimension,
    build_generations,
    cantor_sample,
    cantor_sample_from_build,
    choose_schedule,
    coset_distance_bounds,
    crucial_sum_check,
    cut_gain,
    dimension_lower_bound,
    escape_profile,
    generation_disjoint,
    recurrent_control,
    reduction_case_report,
    sample_branches,
    synthetic_cantor_sample,
    transience_check,
    verify_sample,
)
from kleincantor.hypgeo import distances
from kleincantor.kleinian import cyclic_subgroup, estimate_delta


@pytest.fixture(scope="module")
def p1_construction(group, calibrated):
    """Default parameters with a single recurrent step per block (forced)."""
    c = calibrated
    return Construction(group, c["rrp"], c["trp"], c["schedule"].with_p(1))


@pytest.fixture(scope="module")
def p1_build(p1_construction):
    return build_generations(p1_construction, 2)


# ---------------------------------------------------------------------------
# schedule


def test_schedule_worked_example():
    sched = choose_schedule(0.3, 3.0, 1.5, math.exp(-2.0), 2.0)
    assert (sched.q, sched.p) == (6, 30)
    assert sched.minimal
    # direct evaluation of K^p k^q on both sides of the threshold
    assert 1.5 ** 29 * math.exp(-12.0) <= 1.0 < 1.5 ** 30 * math.exp(-12.0)


def test_schedule_q_covers_four_ell():
    for ell, lam in [(6.0, 2.0), (4.5, 2.0), (1.0, 3.0), (5.0, 0.7)]:
        sched = choose_schedule(0.2, ell, 1.2, 0.5, lam)
        assert sched.q * lam >= 4 * ell
        assert (sched.q - 1) * lam < 4 * ell
        assert sched.minimal


def test_schedule_limits():
    assert choose_schedule(0.3, 3.0, 1e9, math.exp(-2.0), 2.0).p == 1
    with pytest.raises(ValueError):
        choose_schedule(0.3, 3.0, 1.0, math.exp(-2.0), 2.0)
    with pytest.raises(ValueError):
        choose_schedule(0.3, 3.0, 0.9, math.exp(-2.0), 2.0)
    with pytest.raises(ValueError):
        ConstructionSchedule(0.3, 29, 6, 1, 1.5, math.exp(-2.0), 2.0, 3.0)


def test_default_schedule_baseline(calibrated):
    sched = calibrated["schedule"]
    # frozen from the default pipeline: ell = 6, lambda = 2, k = e^-2
    assert (sched.q, sched.p) == (12, 216)
    assert sched.minimal
    assert sched.with_p(sched.p - 1).log_product <= 0


# ---------------------------------------------------------------------------
# exact construction on a small forced schedule


def test_full_build_structure(p1_build):
    gens = p1_build.generations
    assert not p1_build.partial
    assert [g.kind for g in gens] == ["T", "R", "T", "R", "T"]
    # prolongation maps R_np bijectively onto T_np
    assert len(gens[1].vertices) == len(gens[2].vertices)
    assert len(gens[3].vertices) == len(gens[4].vertices)
    for g in gens[1:]:
        assert generation_disjoint(g.vertices)
    for t, r in zip(gens[2].vertices, gens[1].vertices):
        assert t.phase == "transient" and t.parent is r


def test_zero_exponent_sums_are_cardinalities(p1_build):
    rep = crucial_sum_check(p1_build, 0.0)
    sizes = [len(g.vertices) for g in p1_build.generations]
    np.testing.assert_allclose(np.exp(rep.log_sums), sizes, rtol=1e-12)
    p = p1_build.schedule.p
    for n in (1, 2):
        assert sizes[2 * n] == sizes[2 * n - 1] >= 2 ** p * sizes[2 * n - 2]


def test_exact_check_rejects_short_schedule(p1_build, calibrated):
    # with p = 1 the recurrent gain cannot offset the prolongation loss
    rep = crucial_sum_check(p1_build, calibrated["s"])
    assert not rep.passed
    assert any("T_vs_Tprev" in f for f in rep.failures)
    assert all(row["T_vs_R"]["ok"] and row["R_vs_Tprev"]["ok"] for row in rep.blocks)


def test_budget_gives_partial_result(construction, calibrated):
    res = build_generations(construction, 3, budget=500)
    assert res.partial
    assert "budget" in res.reason
    rep = crucial_sum_check(res, calibrated["s"])
    assert not rep.passed and "incomplete" in rep.failures[0]


def test_insufficient_depth(construction):
    with pytest.raises(InsufficientDepth, match="insufficient depth"):
        build_generations(construction, 0)
    with pytest.raises(InsufficientDepth):
        sample_branches(construction, 0, 4)


def test_branch_cap_is_reported(group, calibrated):
    c = calibrated
    con = Construction(group, c["rrp"], c["trp"], c["schedule"].with_p(1), branch_cap=2)
    res = build_generations(con, 2)
    assert res.pruned
    assert [len(g.vertices) for g in res.generations] == [1, 2, 2, 4, 4]


# ---------------------------------------------------------------------------
# sampled construction


def test_importance_estimator_matches_exact_sums(p1_construction, p1_build, calibrated):
    s = calibrated["s"]
    exact = np.array(crucial_sum_check(p1_build, s).log_sums)
    sampled = np.array(crucial_sum_check(sample_branches(p1_construction, 2, 2000, seed=1),
                                         s).log_sums)
    # the first recurrent generation is exact for any sample size
    assert sampled[:2] == pytest.approx(exact[:2], abs=1e-12)
    assert np.max(np.abs(sampled - exact)) < 0.05


def test_sampled_check_passes_on_default(branch_sample, calibrated):
    rep = crucial_sum_check(branch_sample, calibrated["s"])
    assert rep.passed, rep.failures
    prem = rep.detail["premises"]
    assert prem["min_vertex_ratio"] >= calibrated["rrp"].K * (1 - 1e-6)
    assert prem["log_K_p_k_q"] > 0


def test_sampled_check_fails_one_step_short(group, calibrated):
    c = calibrated
    sched = c["schedule"]
    con = Construction(group, c["rrp"], c["trp"], sched.with_p(sched.p - 1))
    rep = crucial_sum_check(sample_branches(con, 3, 4, seed=0), c["s"])
    assert not rep.passed
    assert any(f"p = {sched.p - 1}" in f for f in rep.failures)


def test_sample_audit(branch_sample, group, calibrated):
    rep = verify_sample(branch_sample, calibrated["rrp"], group)
    assert rep["passed"], rep
    assert rep["recheck_max_error"] < 1e-9


def test_sampling_independent_of_workers(construction):
    one = sample_branches(construction, 2, 6, seed=5, workers=1)
    many = sample_branches(construction, 2, 6, seed=5, workers=3)
    for a, b in zip(one.branches, many.branches):
        assert [v.word for v in a.nodes] == [v.word for v in b.nodes]
        assert a.log_mass == b.log_mass


# ---------------------------------------------------------------------------
# dimension


def test_middle_thirds_box_count():
    rep = dimension_lower_bound(synthetic_cantor_sample(10), math.log(2) / math.log(3))
    assert rep["box_count"] == pytest.approx(math.log(2) / math.log(3), abs=0.02)
    assert rep["mass_exponent"] == pytest.approx(math.log(2) / math.log(3), rel=1e-9)
    assert rep["passed"]


def test_box_counting_on_a_grid():
    x = np.arange(1000) / 1000.0
    slope, counts = box_counting_dimension(x, [0.1, 0.01, 0.001])
    # boxes are centred on grid points, so both ends of [0, 1) add a box
    assert counts.tolist() == [11, 101, 1000]
    assert slope == pytest.approx(1.0, abs=0.03)


def test_zero_exponent_trivially_passes():
    assert dimension_lower_bound(synthetic_cantor_sample(4, 0.25, 2), 0.0)["passed"]


def test_shallow_sample_is_refused():
    with pytest.raises(InsufficientDepth):
        dimension_lower_bound(synthetic_cantor_sample(2), 0.5)


def test_default_sample_mass_exponent(branch_sample, calibrated):
    s = calibrated["s"]
    rep = dimension_lower_bound(cantor_sample(branch_sample), s)
    assert rep["mass_exponent"] >= s - 0.1
    assert rep["passed"]


def test_build_sample_masses_sum_to_one(p1_build, calibrated):
    cs = cantor_sample_from_build(p1_build, calibrated["s"])
    assert np.exp(np.logaddexp.reduce(cs.log_masses)) == pytest.approx(1.0, rel=1e-12)


# ---------------------------------------------------------------------------
# transience


def test_coset_bounds_against_brute_force(group, h_table):
    levels = range(-4, 5)
    bounds = coset_distance_bounds(group, h_table, levels)
    a, b = h_table.elements
    img = b / np.conj(a)
    pts = np.stack([img.real, img.imag], axis=1)
    lam = group.translation_length
    for n in levels:
        lo, up = bounds[n]
        z = group.basepoint(n).coords
        brute = min(float(distances(pts, z[None, :]).min()), abs(n) * lam)  # identity included
        assert lo <= brute + 1e-9
        assert up == pytest.approx(brute, abs=1e-9)
        assert up <= abs(n) * lam + 1e-12


def test_cut_gain_equals_translation_length(group):
    # for the perpendicular preset the disks of gamma are tight
    assert cut_gain(group, 0) == pytest.approx(group.translation_length, rel=1e-9)


def test_sampled_branches_escape(group, h_table, branch_sample, calibrated):
    ell = calibrated["rrp"].ell
    for br in branch_sample.branches:
        prof = escape_profile(group, h_table, br)
        rep = transience_check(prof, ell)
        assert rep["passed"] and not rep["inconclusive"], rep
        assert rep["trend_increasing"]
        assert min(rep["certified_increments"]) >= 3 * ell - 0.1


def test_recurrent_control_stays_bounded(group, h_table, construction, calibrated):
    nodes = recurrent_control(construction, 60, seed=0)
    prof = escape_profile(group, h_table, nodes)
    assert prof.quotient_distances[:, 1].max() <= calibrated["rrp"].ell + 0.1


def test_branches_are_quasi_geodesic(group, h_table, branch_sample):
    # edges and bend angles stay bounded away from zero along whole branches
    for br in branch_sample.branches:
        prof = escape_profile(group, h_table, br)
        assert prof.edge_lengths.min() >= group.translation_length - 1e-9
        assert prof.angles.min() > 0.1


def test_profile_arc_length_is_increasing(group, h_table, branch_sample):
    prof = escape_profile(group, h_table, branch_sample.branches[0])
    assert np.all(np.diff(prof.quotient_distances[:, 0]) > 0)
    assert prof.path is not None
    assert np.all(prof.quotient_distances[:, 2] <= prof.quotient_distances[:, 1] + 1e-12)


# ---------------------------------------------------------------------------
# reduction report


def test_reduction_report(group, words, delta_h):
    dG = estimate_delta(words)
    assert reduction_case_report(delta_h, delta_h)["overlap"]
    assert reduction_case_report(delta_h, dG)["overlap"]
    cyc = estimate_delta(cyclic_subgroup(group, 40.0))
    rep = reduction_case_report(cyc, dG)
    assert not rep["overlap"] and "mismatch" in rep["note"]
