"""Shared fixtures: the default group, its orbit tables and a calibrated construction."""

import pytest

from kleincantor.cantor import Construction, sample_branches, schedule_for
from kleincantor.kleinian import enumerate_words, estimate_delta, load_preset, subgroup_filter
from kleincantor.renorm import TRPParams, k_gamma_estimate, rrp_calibrate

DEFAULT_PRESET = "rank2-perpendicular"

# one line per acceptance criterion, printed in the terminal summary
CRITERIA: dict = {}


@pytest.fixture
def criterion(request):
    """Record the verdict of an acceptance criterion.

    The test calls ``criterion(number, passed, detail)`` once; tests that
    fail before recording are reported as failed.
    """
    recorded = {}

    def record(number, passed, detail=""):
        recorded["n"] = number
        CRITERIA[number] = (bool(passed), detail)

    yield record
    rep = getattr(request.node, "rep_call", None)
    if "n" in recorded and rep is not None and rep.failed and CRITERIA[recorded["n"]][0]:
        CRITERIA[recorded["n"]] = (False, CRITERIA[recorded["n"]][1] + " (assertion failed)")


@pytest.hookimpl(hookwrapper=True, tryfirst=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def group():
    return load_preset(DEFAULT_PRESET)


@pytest.fixture(scope="session")
def words(group):
    return enumerate_words(group, max_displacement=16.0, budget=2_000_000)


@pytest.fixture(scope="session")
def h_table(words):
    return subgroup_filter(words, 0)


@pytest.fixture(scope="session")
def delta_h(h_table):
    return estimate_delta(h_table, "counting_fit")


@pytest.fixture(scope="session")
def calibrated(group, h_table, delta_h):
    """Parameters of the default pipeline: s = delta_hat(H) / 2."""
    s = 0.5 * delta_h.value
    rrp = rrp_calibrate(h_table.within(11.0), s, delta_hi=delta_h.hi)
    k, info = k_gamma_estimate(group, rrp, 64, seed=0)
    sched = schedule_for(rrp, k, group.translation_length, 3)
    trp = TRPParams.for_group(group, sched.q, k, rrp)
    return {"s": s, "rrp": rrp, "k": k, "k_info": info, "schedule": sched, "trp": trp}


@pytest.fixture(scope="session")
def construction(group, calibrated):
    c = calibrated
    return Construction(group, c["rrp"], c["trp"], c["schedule"])


@pytest.fixture(scope="session")
def branch_sample(construction):
    """Eight root-to-leaf branches of the unpruned depth-3 tree."""
    return sample_branches(construction, 3, 8, seed=0)

