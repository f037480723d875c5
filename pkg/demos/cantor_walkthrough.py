"""Calibrate, schedule and sample the alternating Cantor construction.

The complete tree is far too large (each block multiplies the vertex
count by at least 2^p), so this walkthrough samples root-to-leaf branches
and reports the checks that run on them.

Run with ``python3 demos/cantor_walkthrough.py``.
"""

from kleincantor.cantor import (
    Construction,
    cantor_sample,
    crucial_sum_check,
    dimension_lower_bound,
    escape_profile,
    sample_branches,
    schedule_for,
    transience_check,
)
from kleincantor.kleinian import enumerate_words, estimate_delta, load_preset, subgroup_filter
from kleincantor.renorm import TRPParams, k_gamma_estimate, rrp_calibrate


def main():
    G = load_preset("rank2-perpendicular")
    H = subgroup_filter(enumerate_words(G, max_displacement=16.0), 0)
    dH = estimate_delta(H)
    s = 0.5 * dH.value
    print(f"delta(H) ~ {dH.value:.4f}; building at s = {s:.4f}")

    rrp = rrp_calibrate(H.within(11.0), s, delta_hi=dH.hi)
    k, _ = k_gamma_estimate(G, rrp, 64)
    sched = schedule_for(rrp, k, G.translation_length, 3)
    print(f"recurrent step: ell = {rrp.ell}, K = {rrp.K:.4f}, sigma = {rrp.sigma:.4f}")
    print(f"transient step: k_gamma = {k:.4f}; schedule q = {sched.q}, p = {sched.p}, "
          f"K^p k^q = exp({sched.log_product:.4f})")

    con = Construction(G, rrp, TRPParams.for_group(G, sched.q, k, rrp), sched)
    sample = sample_branches(con, 3, 8, seed=0)
    crucial = crucial_sum_check(sample, s)
    print(f"estimated log sums over T_0, R_p, T_p, ...: "
          f"{', '.join(f'{x:.3f}' for x in crucial.log_sums)}")
    print(f"crucial estimate: {'pass' if crucial.passed else 'fail'}")

    dim = dimension_lower_bound(cantor_sample(sample), s)
    print(f"mass exponent {dim['mass_exponent']:.4f} (needs >= {s - 0.1:.4f})")

    H12 = H.within(12.0)
    for i, br in enumerate(sample.branches[:3]):
        rep = transience_check(escape_profile(G, H12, br), rrp.ell)
        print(f"branch {i}: quotient-distance increments {rep['certified_increments']}")


if __name__ == "__main__":
    main()
