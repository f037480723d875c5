"""Disk geometry: summits, shadows and the triangle defect.

Run with ``python3 demos/geometry_tour.py``.
"""

import math

import numpy as np

from kleincantor.hypgeo import (
    TAU,
    BallPoint,
    BoundaryPoint,
    Geodesic,
    check_pythagoras,
    shadow,
    summit_ray_gap,
)


def main():
    # a geodesic far from 0: its summit sits within TAU of the ray to either end
    print(f"TAU = log(1 + sqrt 2) = {TAU:.7f}")
    for beta in (1.0, 0.1, 1e-3, 1e-6):
        A = Geodesic(BoundaryPoint.from_angle(-beta), BoundaryPoint.from_angle(beta))
        d0 = math.acosh(1.0 / math.sin(A.half_angle))
        print(f"  endpoints +-{beta:<7g} summit at distance {d0:7.3f}, "
              f"gap to the ray {summit_ray_gap(A):.7f}")

    # shadows shrink like 2 sinh(r) e^{-D} as the ball moves out
    print("shadow half-width of B(w, 1) at distance D:")
    for D in (2.0, 4.0, 8.0, 16.0):
        cap = shadow(BallPoint.polar(D, [1.0, 0.0]), 1.0)
        print(f"  D = {D:4.1f}: {cap.half_width:.3e}   2 sinh(1) e^-D = "
              f"{2 * math.sinh(1.0) * math.exp(-D):.3e}")

    # the triangle defect K(alpha0) = -2 log sin(alpha0 / 2)
    rng = np.random.default_rng(0)
    for a0 in (math.pi / 6, math.pi / 2, 2 * math.pi / 3):
        r = check_pythagoras(a0, 1000, rng)
        print(f"alpha0 = {a0:.4f}: K = {r.K:.4f}, violations {r.lower_violations}, "
              f"smallest slack {r.min_lower_slack:.2e}")


if __name__ == "__main__":
    main()
