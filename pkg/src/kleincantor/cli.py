"""Command-line pipelines.

Subcommands
-----------
delta            critical-exponent bands for G and H
construct        calibrate, schedule, build and check the Cantor set
verify-geometry  property suites of the disk geometry
dump-orbit       orbit of the basepoint as CSV

Exit codes: 0 all checks pass, 1 a check failed, 2 usage or configuration
error. Output goes to ``--out``, else ``$KLEINCANTOR_OUT``, else ``./out``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .cantor import (
    Construction,
    ConstructionError,
    InsufficientDepth,
    build_branches,
    build_generations,
    cantor_sample,
    cantor_sample_from_build,
    crucial_sum_check,
    dimension_lower_bound,
    escape_profile,
    recurrent_control,
    reduction_case_report,
    sample_branches,
    schedule_for,
    transience_check,
    verify_sample,
    generation_disjoint,
)
from .export import config_hash, write_csv, write_json, write_jsonl
from .hypgeo import (
    TAU,
    BoundaryPoint,
    Geodesic,
    check_pythagoras,
    distance_to_ray,
    shadow,
    summit_ray_gap,
)
from .kleinian import (
    BudgetExceeded,
    PingPongError,
    enumerate_words,
    estimate_delta,
    group_from_spec,
    load_preset,
    orbit_rows,
    preset_names,
    subgroup_filter,
)
from .renorm import CalibrationError, TRPParams, k_gamma_estimate, rrp_calibrate

OUT_ENV = "KLEINCANTOR_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything that determines a run; hashed into every output header."""

    preset: str = "rank2-perpendicular"
    group: dict | None = None
    s: float | None = None
    s_fraction: float = 0.5
    delta_t: float = 16.0
    delta_method: str = "counting_fit"
    calibration_t: float = 11.0
    proxy_t: float = 12.0
    word_budget: int = 2_000_000
    node_budget: int = 200_000
    depth: int = 3
    branch_cap: int | None = None
    mode: str = "auto"
    branches: int = 16
    p_offset: int = 0
    seed: int = 0
    samples: int = 10_000
    triangle_samples: int = 1_000
    tau_override: float | None = None
    mass_eps: float = 0.1
    transience_slack: float = 0.1
    threads: int | None = None
    out: str | None = None

    def validate(self):
        if self.group is None and self.preset not in preset_names():
            raise ConfigError(f"unknown preset '{self.preset}' (known: {', '.join(preset_names())})")
        for name in ("word_budget", "node_budget", "branches"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.samples <= 0 or self.triangle_samples <= 0:
            raise ConfigError("sample size must be positive")
        if not 0 < self.s_fraction < 1:
            raise ConfigError("s_fraction must lie in (0, 1)")
        if self.s is not None and self.s < 0:
            raise ConfigError("s must be non-negative")
        if self.depth < 1:
            raise ConfigError("insufficient depth: depth must be at least 1")
        if self.mode not in ("auto", "full", "sampled"):
            raise ConfigError("mode must be auto, full or sampled")
        if self.delta_method not in ("counting_fit", "series_bisection"):
            raise ConfigError("unknown delta method")
        if self.branch_cap is not None and self.branch_cap < 2:
            raise ConfigError("branch cap must be at least 2")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be positive")

    def hashed(self) -> dict:
        """Fields that influence results (output location and worker count do not)."""
        d = asdict(self)
        d.pop("out")
        d.pop("threads")
        return d

    @property
    def digest(self) -> str:
        return config_hash(self.hashed())

    def workers(self) -> int:
        return self.threads if self.threads is not None else (os.cpu_count() or 1)

    def out_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUT_ENV) or "out")

    def load_group(self):
        if self.group is not None:
            return group_from_spec(self.group)
        return load_preset(self.preset)


def load_config(path: str | None, overrides: dict) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in fields(RunConfig)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**data)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# pipelines


def _delta_pair(table, budget_note=""):
    return {m: estimate_delta(table, m) for m in ("counting_fit", "series_bisection")}


def cmd_delta(cfg: RunConfig) -> int:
    G = cfg.load_group()
    words = enumerate_words(G, max_displacement=cfg.delta_t, budget=cfg.word_budget)
    H = subgroup_filter(words, 0)
    est_G = _delta_pair(words)
    est_H = _delta_pair(H)
    methods_agree = {
        "G": est_G["counting_fit"].overlaps(est_G["series_bisection"]),
        "H": est_H["counting_fit"].overlaps(est_H["series_bisection"]),
    }
    red = reduction_case_report(est_H[cfg.delta_method], est_G[cfg.delta_method])
    passed = all(methods_agree.values())
    write_json(cfg.out_dir() / "delta.json", {
        "passed": passed,
        "t": cfg.delta_t,
        "words": len(words),
        "G": {m: e.to_dict() for m, e in est_G.items()},
        "H": {m: e.to_dict() for m, e in est_H.items()},
        "methods_agree": methods_agree,
        "reduction": red,
    }, cfg.digest, "delta")
    print(f"delta(G) {est_G['counting_fit'].value:.4f} band "
          f"[{est_G['counting_fit'].lo:.4f}, {est_G['counting_fit'].hi:.4f}]")
    print(f"delta(H) {est_H['counting_fit'].value:.4f} band "
          f"[{est_H['counting_fit'].lo:.4f}, {est_H['counting_fit'].hi:.4f}]")
    print(f"bands overlap: {red['overlap']}; methods agree: {methods_agree}")
    return 0 if passed else 1


def run_construct(cfg: RunConfig) -> dict:
    """The full construction pipeline; returns a summary and writes artifacts."""
    out = cfg.out_dir()
    digest = cfg.digest
    G = cfg.load_group()
    words = enumerate_words(G, max_displacement=cfg.delta_t, budget=cfg.word_budget)
    H = subgroup_filter(words, 0)
    est_H = estimate_delta(H, cfg.delta_method)
    est_G = estimate_delta(words, cfg.delta_method)
    s = cfg.s if cfg.s is not None else cfg.s_fraction * est_H.value
    if s >= est_H.lo:
        raise ConfigError(f"s = {s:.4g} is not below the lower end {est_H.lo:.4g} of the delta(H) band")
    rrp = rrp_calibrate(H.within(cfg.calibration_t), s, budget=cfg.word_budget, delta_hi=est_H.hi)
    k, k_info = k_gamma_estimate(G, rrp, 64, seed=cfg.seed)
    sched = schedule_for(rrp, k, G.translation_length, cfg.depth)
    if cfg.p_offset:
        sched = sched.with_p(sched.p + cfg.p_offset)
    trp = TRPParams.for_group(G, sched.q, k, rrp)
    con = Construction(G, rrp, trp, sched, branch_cap=cfg.branch_cap)

    mode = cfg.mode
    if mode == "auto":
        # every recurrent vertex has at least two successors
        lower = 2.0 ** min(sched.p * cfg.depth, 1000)
        mode = "full" if lower <= cfg.node_budget else "sampled"

    checks = {}
    if mode == "full":
        res = build_generations(con, cfg.depth, budget=cfg.node_budget)
        if res.partial:
            raise BudgetExceeded(res.reason, res.node_count)
        crucial = crucial_sum_check(res, s)
        sample = cantor_sample_from_build(res, s)
        branches = build_branches(res, cfg.branches)
        tree_nodes = res.nodes()
        checks["geometry"] = {"passed": all(generation_disjoint(g.vertices) for g in res.generations)}
    else:
        bs = sample_branches(con, cfg.depth, cfg.branches, seed=cfg.seed, workers=cfg.workers())
        crucial = crucial_sum_check(bs, s)
        sample = cantor_sample(bs)
        branches = [br.nodes for br in bs.branches]
        tree_nodes = bs.unique_nodes()
        checks["geometry"] = verify_sample(bs, rrp, G)
    checks["crucial_sum"] = crucial.to_dict()

    H_proxy = H.within(cfg.proxy_t)
    trans, escape_rows = [], []
    for i, nodes in enumerate(branches):
        prof = escape_profile(G, H_proxy, nodes)
        rep = transience_check(prof, rrp.ell, slack=cfg.transience_slack)
        rep["branch"] = i
        trans.append(rep)
        escape_rows += [{"branch": i, **r} for r in prof.rows()]
    control = escape_profile(G, H_proxy, recurrent_control(con, 3 * max(1, min(sched.p, 20)),
                                                           seed=cfg.seed))
    control_max = float(control.quotient_distances[:, 1].max())
    checks["transience"] = {
        "passed": all(r["passed"] for r in trans),
        "branches": trans,
        "recurrent_control_max_proxy": control_max,
        "recurrent_control_bounded": control_max <= rrp.ell + cfg.transience_slack,
    }
    checks["transience"]["passed"] &= checks["transience"]["recurrent_control_bounded"]
    try:
        dim = dimension_lower_bound(sample, s, eps=cfg.mass_eps)
    except InsufficientDepth as exc:
        dim = {"passed": False, "error": str(exc)}
    checks["dimension"] = dim

    write_jsonl(out / "tree.jsonl", (v.to_record() for v in tree_nodes), digest, "tree")
    write_csv(out / "cantor_sample.csv", sample.rows(), digest, "cantor-sample")
    write_csv(out / "escape_profiles.csv", escape_rows, digest, "escape-profile")
    params = {
        "s": s, "mode": mode, "rrp": rrp.to_dict(), "trp": trp.to_dict(),
        "schedule": sched.to_dict(), "k_gamma_info": k_info,
        "delta_H": est_H.to_dict(), "delta_G": est_G.to_dict(),
        "calibration": rrp.report.get("tried", []),
    }
    write_json(out / "crucial_sum.json", {**checks["crucial_sum"], "parameters": params}, digest,
               "crucial-sum")
    write_json(out / "transience.json", checks["transience"], digest, "transience")
    write_json(out / "dimension.json", dim, digest, "dimension")
    summary = {
        "passed": all(c["passed"] for c in checks.values()),
        "checks": {name: bool(c["passed"]) for name, c in checks.items()},
        "parameters": params,
        "geometry": checks["geometry"],
    }
    write_json(out / "construct.json", summary, digest, "construct")
    return summary


def cmd_construct(cfg: RunConfig) -> int:
    try:
        summary = run_construct(cfg)
    except ConstructionError as exc:
        print(f"check failed: {exc.check}: {exc}", file=sys.stderr)
        return 1
    for name, ok in summary["checks"].items():
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    failed = [n for n, ok in summary["checks"].items() if not ok]
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def geometry_suite(cfg: RunConfig) -> dict:
    """Summit bound, Pythagoras defect and shadow Monte-Carlo checks."""
    rng = np.random.default_rng(cfg.seed)
    tau = TAU if cfg.tau_override is None else cfg.tau_override
    n = cfg.samples
    # random geodesics avoiding the origin
    th = rng.uniform(0, 2 * np.pi, (n, 2))
    gaps, numeric, allowed = np.empty(n), np.empty(n), np.empty(n)
    origin = np.zeros(2)
    worst = None
    for i in range(n):
        a, b = th[i]
        if abs(math.remainder(a - b, 2 * math.pi)) > math.pi - 1e-6:
            b += 1e-3
        A = Geodesic(BoundaryPoint.from_angle(a), BoundaryPoint.from_angle(b))
        gaps[i] = summit_ray_gap(A)
        numeric[i] = distance_to_ray(origin, A.end, A.summit.coords[None, :])[0]
        # ball coordinates of a summit at distance d0 carry errors ~ eps e^{2 d0}
        d0 = math.acosh(1.0 / math.sin(A.half_angle))
        allowed[i] = 1e-9 + 1e-16 * math.exp(2.0 * d0)
        if worst is None or gaps[i] > gaps[worst[0]]:
            worst = (i, float(a), float(b))
    bad = int(np.sum(gaps >= tau))
    route_err = float(np.max(np.abs(gaps - numeric) / allowed))
    # boundary-hugging family: endpoints closing up
    beta = np.geomspace(1e-1, 1e-6, 40)
    hug = np.array([summit_ray_gap(Geodesic(BoundaryPoint.from_angle(-x),
                                            BoundaryPoint.from_angle(x))) for x in beta])
    summit = {
        "passed": bad == 0 and route_err <= 1.0,
        "samples": n, "tau": tau, "violations": bad, "max_gap": float(gaps.max()),
        "projection_error_over_tolerance": route_err, "boundary_family_sup": float(hug.max()),
        "boundary_family_rel_gap": float((TAU - hug.max()) / TAU),
    }
    if bad:
        i = int(np.argmax(gaps))
        summit["counterexample"] = {"start_angle": float(th[i, 0]), "end_angle": float(th[i, 1]),
                                    "gap": float(gaps[i])}
    tri = {}
    for name, a0 in (("pi/6", math.pi / 6), ("pi/2", math.pi / 2), ("2pi/3", 2 * math.pi / 3)):
        r = check_pythagoras(a0, cfg.triangle_samples, rng)
        tri[name] = {"passed": r.passed, "K": r.K, "lower_violations": r.lower_violations,
                     "upper_violations": r.upper_violations, "min_lower_slack": r.min_lower_slack}
        if not r.passed:
            tri[name]["counterexample"] = list(r.worst)
    # shadow Monte Carlo: points of B(w, r) project into the closed-form cap
    w = np.array([math.tanh(2.5), 0.0])
    r = 0.6
    cap = shadow(w, r)
    m = max(cfg.samples, 1000)
    # uniform directions and radii in the hyperbolic ball around w, moved by the translation
    d = r * np.sqrt(rng.uniform(0, 1, m))
    phi = rng.uniform(0, 2 * np.pi, m)
    z = np.tanh(d / 2) * np.exp(1j * phi)
    t = math.tanh(2.5)
    img = (z + t) / (1 + t * z)
    ang = np.abs(np.angle(img))
    inside = bool(np.all(ang <= cap.half_width * (1 + 1e-12)))
    edge = np.exp(1j * np.linspace(0, 2 * np.pi, 20001)) * math.tanh(r / 2)
    extent = float(np.abs(np.angle((edge + t) / (1 + t * edge))).max())
    rel = abs(extent - cap.half_width) / cap.half_width
    shadow_rep = {"passed": inside and rel < 0.01, "half_width": cap.half_width,
                  "empirical_extent": extent, "relative_error": rel, "points": m}
    passed = summit["passed"] and all(v["passed"] for v in tri.values()) and shadow_rep["passed"]
    return {"passed": passed, "summit": summit, "pythagoras": tri, "shadow": shadow_rep}


def cmd_verify_geometry(cfg: RunConfig) -> int:
    rep = geometry_suite(cfg)
    write_json(cfg.out_dir() / "verify_geometry.json", rep, cfg.digest, "verify-geometry")
    print(f"summit bound: {'pass' if rep['summit']['passed'] else 'FAIL'} "
          f"(max gap {rep['summit']['max_gap']:.6f}, tau {rep['summit']['tau']:.6f}, "
          f"violations {rep['summit']['violations']})")
    for name, r in rep["pythagoras"].items():
        print(f"pythagoras {name}: {'pass' if r['passed'] else 'FAIL'} (K = {r['K']:.4f})")
    print(f"shadow Monte Carlo: {'pass' if rep['shadow']['passed'] else 'FAIL'}")
    if not rep["passed"]:
        ce = rep["summit"].get("counterexample")
        if ce:
            print(f"minimal instance: {json.dumps(ce)}", file=sys.stderr)
        return 1
    return 0


def cmd_dump_orbit(cfg: RunConfig, label: int | None, basepoint: int, max_length: int | None) -> int:
    G = cfg.load_group()
    if max_length is not None:
        table = enumerate_words(G, max_length=max_length, budget=cfg.word_budget)
    else:
        table = enumerate_words(G, max_displacement=cfg.delta_t, budget=cfg.word_budget)
    if label is not None:
        table = subgroup_filter(table, label)
    rows = orbit_rows(table, basepoint)
    path = write_csv(cfg.out_dir() / "orbit.csv", rows, cfg.digest, "orbit")
    print(f"{len(rows)} orbit points written to {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--budget", type=int, help="node budget of the construction / word budget")
    common.add_argument("--depth", type=int, help="number of blocks")
    common.add_argument("--prune", type=int, metavar="CAP", help="per-vertex successor cap")
    common.add_argument("--threads", type=int, help="worker count (1 = single-threaded baseline)")
    common.add_argument("--preset")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")

    p = argparse.ArgumentParser(prog="kleincantor", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("delta", parents=[common], help="critical exponent bands for G and H")
    c = sub.add_parser("construct", parents=[common], help="build and check the Cantor set")
    c.add_argument("--mode", choices=["auto", "full", "sampled"])
    c.add_argument("--branches", type=int)
    c.add_argument("--p-minus-one", action="store_true",
                   help="use p - 1 recurrent steps per block (negative control)")
    v = sub.add_parser("verify-geometry", parents=[common], help="geometry property suites")
    v.add_argument("--samples", type=int)
    v.add_argument("--tau", type=float, dest="tau_override", help=argparse.SUPPRESS)
    d = sub.add_parser("dump-orbit", parents=[common], help="write the orbit of 0 as CSV")
    d.add_argument("--label", type=int, help="keep only words with this coset label")
    d.add_argument("--basepoint", type=int, default=0, help="n for z_n = gamma^n(0)")
    d.add_argument("--max-length", type=int)
    d.add_argument("--max-displacement", type=float, dest="delta_t")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    ov = {
        "seed": args.seed, "depth": args.depth, "branch_cap": args.prune, "threads": args.threads,
        "preset": args.preset, "out": args.out,
    }
    if args.budget is not None:
        key = "node_budget" if args.command == "construct" else "word_budget"
        ov[key] = args.budget
    if args.command == "construct":
        ov.update(mode=args.mode, branches=args.branches)
        if args.p_minus_one:
            ov["p_offset"] = -1
    if args.command == "verify-geometry":
        ov.update(samples=args.samples, tau_override=args.tau_override)
        if args.samples is not None and args.samples <= 0:
            print("error: sample size must be positive", file=sys.stderr)
            return 2
    if args.command == "dump-orbit":
        ov["delta_t"] = args.delta_t
    try:
        cfg = load_config(args.config, ov)
        if args.command == "delta":
            return cmd_delta(cfg)
        if args.command == "construct":
            return cmd_construct(cfg)
        if args.command == "verify-geometry":
            return cmd_verify_geometry(cfg)
        return cmd_dump_orbit(cfg, args.label, args.basepoint, args.max_length)
    except (ConfigError, InsufficientDepth, PingPongError, CalibrationError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BudgetExceeded as exc:
        print(f"budget exceeded after {exc.partial_count} items: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
