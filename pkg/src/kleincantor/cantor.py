"""Alternating construction of the Cantor set ``C_s`` and its checks.

A block of the construction applies the recurrent renormalisation ``p``
times to every vertex of the previous transient generation and then
prolongs every leaf ``q`` times along its copy of the axis of ``gamma``.
Blocks are indexed ``n = 1, 2, ...``; generation ``T_0`` is the root.

The number of vertices grows like (branching)^(p * depth), which for
realistic parameters is astronomically large. Two modes are provided:

* :func:`build_generations` materialises every generation and is exact,
  but only feasible for small ``p`` (and raises or truncates at the node
  budget);
* :func:`sample_branches` follows root-to-leaf branches of the same,
  unpruned tree. At every expanded vertex the full successor set is
  computed and verified; one successor is then drawn with probability
  proportional to ``diam^s``, so that the branch is distributed according
  to the mass distribution used by the dimension estimate.
"""

from __future__ import annotations

import heapq
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import mpmath
import numpy as np

from .hypgeo import BoundaryPoint, GeometryError, QuasiGeodesicPath, BallPoint
from .kleinian import (
    BudgetExceeded,
    DeltaEstimate,
    OrbitTable,
    SchottkyGroup,
    su_mul,
)
from .renorm import (
    HTreeNode,
    RRPError,
    RRPParams,
    TRPError,
    TRPParams,
    root_node,
    rrp_successors,
    make_child,
    trp_apply,
)

__all__ = [
    "ConstructionError",
    "InsufficientDepth",
    "ConstructionSchedule",
    "choose_schedule",
    "schedule_for",
    "Construction",
    "GenerationSet",
    "BuildResult",
    "build_generations",
    "Branch",
    "BranchSample",
    "sample_branches",
    "CrucialReport",
    "crucial_sum_check",
    "CantorSample",
    "cantor_sample",
    "synthetic_cantor_sample",
    "box_counting_dimension",
    "dimension_lower_bound",
    "coset_distance_bounds",
    "cut_gain",
    "recurrent_control",
    "EscapeProfile",
    "escape_profile",
    "transience_check",
    "reduction_case_report",
    "branch_angles",
    "generation_disjoint",
    "verify_sample",
    "cantor_sample_from_build",
    "build_branches",
]

SUM_SLACK = 1e-6
TRANSIENCE_SLACK = 0.1


class ConstructionError(RuntimeError):
    """An invariant failed during construction; ``node`` is the offending vertex."""

    def __init__(self, message, node=None, check: str | None = None):
        super().__init__(message)
        self.node = node
        self.check = check


class InsufficientDepth(ValueError):
    pass


# ---------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class ConstructionSchedule:
    """Numbers of recurrent (``p``) and transient (``q``) steps per block."""

    s: float
    p: int
    q: int
    depth: int
    K: float
    k_gamma: float
    lam: float
    ell: float
    forced: bool = False

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise ValueError("p and q must be positive")
        if self.q * self.lam < 4 * self.ell * (1 - 1e-12):
            raise ValueError("q * lambda must be at least 4 ell_s")
        if not self.forced and self.log_product <= 0:
            raise ValueError("K_s^p k_gamma^q must exceed 1")

    @property
    def log_product(self) -> float:
        """``log(K_s^p k_gamma^q)``."""
        return self.p * math.log(self.K) + self.q * math.log(self.k_gamma)

    @property
    def minimal(self) -> bool:
        prev = (self.p - 1) * math.log(self.K) + self.q * math.log(self.k_gamma)
        return self.log_product > 0 and prev <= 0

    def with_p(self, p: int) -> "ConstructionSchedule":
        """Copy with a different ``p``; used for negative controls."""
        return ConstructionSchedule(self.s, p, self.q, self.depth, self.K, self.k_gamma,
                                    self.lam, self.ell, forced=True)

    def to_dict(self) -> dict:
        return {
            "s": self.s, "p": self.p, "q": self.q, "depth": self.depth, "K": self.K,
            "k_gamma": self.k_gamma, "lambda": self.lam, "ell": self.ell,
            "log_product": self.log_product, "forced": self.forced,
        }


def choose_schedule(s: float, ell: float, K: float, k_gamma: float, lam: float,
                    depth: int = 1) -> ConstructionSchedule:
    """``q = ceil(4 ell / lam)`` and the smallest ``p`` with ``K^p k_gamma^q > 1``."""
    if not K > 1:
        raise ValueError("K_s must exceed 1: K^p k^q > 1 has no solution")
    if not 0 < k_gamma < 1:
        raise ValueError("k_gamma must lie in (0, 1)")
    if lam <= 0 or ell <= 0:
        raise ValueError("lambda and ell_s must be positive")
    q = max(1, math.ceil(4 * ell / lam - 1e-12))
    need = q * math.log(1.0 / k_gamma)
    p = int(math.floor(need / math.log(K))) + 1
    # guard against rounding at integer boundaries
    while p > 1 and (p - 1) * math.log(K) > need:
        p -= 1
    while p * math.log(K) <= need:
        p += 1
    return ConstructionSchedule(s, p, q, depth, K, k_gamma, lam, ell)


def schedule_for(rrp: RRPParams, k_gamma: float, lam: float, depth: int) -> ConstructionSchedule:
    return choose_schedule(rrp.s, rrp.ell, rrp.K, k_gamma, lam, depth)


# ---------------------------------------------------------------------------
# construction


class Construction:
    """Expansion rules shared by the exact and the sampled builders.

    ``branch_cap`` keeps only the largest-shadow successors of every
    recurrent vertex; this weakens the sum estimate and is reported.
    """

    def __init__(self, G: SchottkyGroup, rrp: RRPParams, trp: TRPParams,
                 schedule: ConstructionSchedule, branch_cap: int | None = None):
        if branch_cap is not None and branch_cap < 2:
            raise ValueError("branch cap must be at least 2")
        if trp.q != schedule.q:
            raise ValueError("TRP parameters and schedule disagree on q")
        self.G = G
        self.rrp = rrp
        self.trp = trp
        self.schedule = schedule
        self.branch_cap = branch_cap
        self.pruned = False

    def successors(self, u: HTreeNode):
        """Verified successor selection of ``u`` (possibly capped) and its ratio."""
        try:
            sel = rrp_successors(u, self.rrp)
        except RRPError as exc:
            raise ConstructionError(
                f"[RRP] property ({exc.prop}) fails at vertex {u.node_id} "
                f"(level {u.level}, depth {u.depth}): {exc}", u, f"rrp-{exc.prop}") from exc
        idx = sel.index
        if self.branch_cap is not None and idx.size > self.branch_cap:
            idx = idx[: self.branch_cap]  # selection order is by shadow size
            self.pruned = True
        wr = sel.geometry.width_ratio[idx]
        weights = wr ** self.schedule.s
        return sel, idx, weights

    def expand(self, u: HTreeNode, sel, idx) -> list[HTreeNode]:
        words = self.rrp.candidates.words
        return [
            make_child(u, sel.geometry, int(i), words[i], "recurrent", u.level, self.rrp.sigma)
            for i in idx
        ]

    def prolong(self, u: HTreeNode) -> HTreeNode:
        try:
            return trp_apply(u, self.schedule.q, self.trp, check=True)
        except TRPError as exc:
            raise ConstructionError(
                f"[TRP] check fails at vertex {u.node_id} (level {u.level}): {exc}", u, "trp"
            ) from exc


@dataclass(eq=False)
class GenerationSet:
    """One generation ``T_{np}`` (kind ``"T"``) or ``R_{np}`` (kind ``"R"``)."""

    kind: str
    block: int
    vertices: list

    @property
    def caps(self) -> list[tuple]:
        """``(center angle, log half-width)`` for every vertex."""
        return [(v.angle, v.log_half_width) for v in self.vertices]

    def log_sum(self, s: float) -> float:
        """``log sum diam(cap)^s``."""
        ld = np.array([v.log_diameter for v in self.vertices])
        return float(np.logaddexp.reduce(s * ld)) if ld.size else -math.inf


def generation_disjoint(vertices: Sequence[HTreeNode]) -> bool:
    """Exact pairwise disjointness of the caps of ``vertices`` (high precision)."""
    if len(vertices) < 2:
        return True
    D = max(v.distance for v in vertices)
    with mpmath.workdps(int(D / 2.0) + 40):
        two_pi = 2 * mpmath.pi
        items = sorted(
            ((v.angle % two_pi, mpmath.exp(mpmath.mpf(v.log_half_width))) for v in vertices),
            key=lambda x: x[0],
        )
        for (a1, w1), (a2, w2) in zip(items, items[1:]):
            if a2 - a1 < w1 + w2:
                return False
        (a1, w1), (a2, w2) = items[-1], items[0]
        return a2 + two_pi - a1 >= w1 + w2


def _nested(child: HTreeNode, anc: HTreeNode) -> bool:
    if anc.is_root:
        return True
    with mpmath.workdps(int(child.distance / 2.0) + 40):
        gap = abs(child.angle - anc.angle)
        return gap + mpmath.exp(mpmath.mpf(child.log_half_width)) <= mpmath.exp(
            mpmath.mpf(anc.log_half_width)) * (1 + mpmath.mpf(10) ** -12)


def _previous_t(v: HTreeNode) -> HTreeNode:
    """Nearest ancestor of ``v`` in the previous transient generation (or the root)."""
    node = v.parent
    while node is not None and not (node.phase == "transient" or node.is_root):
        node = node.parent
    return node


@dataclass(eq=False)
class BuildResult:
    generations: list
    schedule: ConstructionSchedule
    partial: bool
    node_count: int
    pruned: bool
    reason: str = ""
    vertex_ratios: list = field(default_factory=list)
    trp_reports: list = field(default_factory=list)

    def nodes(self):
        """All vertices (including intermediate recurrent levels) in creation order."""
        return self._all


def build_generations(construction: Construction, depth: int, budget: int = 200_000,
                      check: bool = True) -> BuildResult:
    """Materialise ``T_0, R_p, T_p, R_2p, ...`` up to ``depth`` blocks.

    Every vertex is expanded with its full successor set (or the capped
    set) and every intermediate recurrent level is kept so that nesting
    can be audited. When the node count would exceed ``budget`` the
    construction stops and the result is flagged partial.
    """
    if depth < 1:
        raise InsufficientDepth("insufficient depth: at least one block is required")
    sched = construction.schedule
    root = root_node()
    gens = [GenerationSet("T", 0, [root])]
    all_nodes = [root]
    ratios, trps = [], []
    counter = 1
    partial, reason = False, ""
    for n in range(1, depth + 1):
        frontier = gens[-1].vertices
        for _ in range(sched.p):
            nxt = []
            for u in frontier:
                sel, idx, w = construction.successors(u)
                ratios.append(float(w.sum()))
                if counter + len(nxt) + idx.size > budget:
                    partial = True
                    reason = (f"node budget {budget} exceeded in block {n}: each block multiplies "
                              f"the vertex count by at least 2^p = 2^{sched.p}")
                    break
                kids = construction.expand(u, sel, idx)
                for c in kids:
                    c.node_id = counter
                    counter += 1
                nxt.extend(kids)
            if partial:
                break
            all_nodes.extend(nxt)
            frontier = nxt
        if partial:
            break
        gens.append(GenerationSet("R", n, frontier))
        tgen = []
        for u in frontier:
            t = construction.prolong(u)
            t.node_id = counter
            counter += 1
            trps.append(t.report)
            tgen.append(t)
        all_nodes.extend(tgen)
        gens.append(GenerationSet("T", n, tgen))
        if check:
            for g in gens[-2:]:
                if not generation_disjoint(g.vertices):
                    raise ConstructionError(f"caps of {g.kind}_{n} overlap", None, "disjoint")
            for t in tgen:
                if not _nested(t, _previous_t(t)):
                    raise ConstructionError(
                        f"cap of vertex {t.node_id} leaves its previous T-cap", t, "nesting")
    res = BuildResult(gens, sched, partial, counter, construction.pruned, reason, ratios, trps)
    res._all = all_nodes
    return res


# ---------------------------------------------------------------------------
# branch sampling


@dataclass(eq=False)
class Branch:
    """Vertices of one root-to-leaf branch.

    ``log_mass`` holds ``log mu`` of every vertex (the root has mass 1),
    ``sums`` the successor sums ``sum diam^s`` ratios at recurrent
    vertices, ``block_of`` the block index of every vertex.
    """

    nodes: list = field(repr=False)
    log_mass: list = field(repr=False)
    sums: list = field(repr=False)
    trp_reports: list = field(repr=False)

    @property
    def leaf(self) -> HTreeNode:
        return self.nodes[-1]


@dataclass(eq=False)
class BranchSample:
    branches: list = field(repr=False)
    schedule: ConstructionSchedule
    seed: int
    pruned: bool
    vertex_ratios: list
    min_successors: int

    def unique_nodes(self) -> list[HTreeNode]:
        seen, out = {}, []
        for br in self.branches:
            for v in br.nodes:
                key = (v.word, v.level, v.phase)
                if key not in seen:
                    seen[key] = len(out)
                    out.append(v)
        return out


def _sample_one(construction: Construction, depth: int, rng: np.random.Generator, cache: dict,
                lock: threading.Lock) -> tuple[Branch, int]:
    sched = construction.schedule
    u = root_node()
    nodes, log_mass, sums, trps = [u], [0.0], [], []
    key = ()
    min_succ = 10**9
    for _ in range(depth):
        for _ in range(sched.p):
            with lock:
                if ("R", key) not in cache:
                    sel, idx, w = construction.successors(u)
                    cache["R", key] = (sel, idx, w, [None] * idx.size)
                sel, idx, w, kids = cache["R", key]
            min_succ = min(min_succ, int(idx.size))
            total = float(w.sum())
            j = int(rng.choice(idx.size, p=w / total))
            with lock:
                if kids[j] is None:
                    kids[j] = construction.expand(u, sel, idx[j:j + 1])[0]
            sums.append(total)
            log_mass.append(log_mass[-1] + math.log(w[j] / total))
            u = kids[j]
            key = key + (j,)
            nodes.append(u)
        key = key + ("T",)
        with lock:
            if ("T", key) not in cache:
                cache["T", key] = construction.prolong(u)
        u = cache["T", key]
        nodes.append(u)
        log_mass.append(log_mass[-1])
        trps.append(u.report)
    return Branch(nodes, log_mass, sums, trps), min_succ


def sample_branches(construction: Construction, depth: int, n_branches: int = 16,
                    seed: int = 0, workers: int = 1) -> BranchSample:
    """Draw ``n_branches`` root-to-leaf branches of the depth-``depth`` tree.

    Each branch uses its own random stream spawned from ``seed``; at each
    recurrent vertex the successor is drawn with probability proportional
    to ``diam^s`` among the full (verified) successor set. Vertices shared
    by several branches are computed once. The result does not depend on
    ``workers``.
    """
    if depth < 1:
        raise InsufficientDepth("insufficient depth: at least one block is required")
    if n_branches < 1:
        raise ValueError("at least one branch is required")
    streams = np.random.SeedSequence(seed).spawn(n_branches)
    cache: dict = {}
    lock = threading.Lock()

    def run(ss):
        return _sample_one(construction, depth, np.random.default_rng(ss), cache, lock)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, streams))
    else:
        results = [run(ss) for ss in streams]
    branches = [r[0] for r in results]
    min_succ = min(r[1] for r in results)
    rkeys = sorted((k for k in cache if k[0] == "R"), key=lambda k: (len(k[1]), repr(k[1])))
    ratios = [float(cache[k][2].sum()) for k in rkeys]
    sample = BranchSample(branches, construction.schedule, seed, construction.pruned, ratios,
                          min_succ)
    # deterministic ids in order of first appearance
    for i, v in enumerate(sample.unique_nodes()):
        v.node_id = i
    return sample


# ---------------------------------------------------------------------------
# crucial estimate


@dataclass(frozen=True)
class CrucialReport:
    passed: bool
    mode: str
    blocks: tuple
    log_sums: tuple
    failures: tuple
    pruned: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed, "mode": self.mode, "blocks": list(self.blocks),
            "log_sums": list(self.log_sums), "failures": list(self.failures),
            "pruned": self.pruned, **self.detail,
        }


def _block_check(n, log_T_prev, log_R, log_T, sched, slack):
    """The three chained inequalities of block ``n`` in log form."""
    lk = sched.q * math.log(sched.k_gamma)
    lK = sched.p * math.log(sched.K)
    tol = math.log1p(slack)
    checks = {
        "T_vs_R": (log_T - log_R, lk),
        "R_vs_Tprev": (log_R - log_T_prev, lK),
        "T_vs_Tprev": (log_T - log_T_prev, 0.0),
    }
    row = {"block": n}
    fails = []
    for name, (measured, required) in checks.items():
        strict = name == "T_vs_Tprev"
        ok = measured > required if strict else measured >= required - tol
        row[name] = {"log_measured": measured, "log_required": required, "ok": bool(ok)}
        if not ok:
            fails.append(f"block {n}: {name} ratio exp({measured:.6g}) below exp({required:.6g})")
    return row, fails


def crucial_sum_check(result, s: float, slack: float = SUM_SLACK) -> CrucialReport:
    """Check ``sum_T >= k^q sum_R >= K^p k^q sum_Tprev > sum_Tprev`` per block.

    ``result`` is a :class:`BuildResult` (exact sums) or a
    :class:`BranchSample`. For samples the sums are estimated by the
    unbiased importance estimator ``E_mu[prod of successor sums]`` and the
    report also lists the per-vertex premises checked along the branches.
    """
    if isinstance(result, BuildResult):
        sched = result.schedule
        if result.partial:
            return CrucialReport(False, "exact", (), (), (f"construction incomplete: {result.reason}",),
                                 result.pruned, {"node_count": result.node_count})
        gens = result.generations
        nblocks = (len(gens) - 1) // 2
        if nblocks < 2:
            return CrucialReport(False, "exact", (), (), ("at least two blocks are required",),
                                 result.pruned)
        logs = [g.log_sum(s) for g in gens]
        rows, fails = [], []
        for n in range(1, nblocks + 1):
            row, f = _block_check(n, logs[2 * n - 2], logs[2 * n - 1], logs[2 * n], sched, slack)
            rows.append(row)
            fails += f
        return CrucialReport(not fails, "exact", tuple(rows), tuple(logs), tuple(fails),
                             result.pruned, {"schedule": sched.to_dict()})

    sample: BranchSample = result
    sched = sample.schedule
    p = sched.p
    depth = len(sample.branches[0].trp_reports)
    if depth < 2:
        return CrucialReport(False, "sampled", (), (), ("at least two blocks are required",),
                             sample.pruned)
    # per branch, log of diam^s(leaf)/mu(leaf) at every generation boundary
    est = np.zeros((len(sample.branches), 2 * depth + 1))
    for b, br in enumerate(sample.branches):
        acc = 0.0
        col = 1
        for n in range(depth):
            acc += float(np.sum(np.log(br.sums[n * p:(n + 1) * p])))
            est[b, col] = acc
            acc += s * math.log(br.trp_reports[n]["cumulative"])
            est[b, col + 1] = acc
            col += 2
    m = est.shape[0]
    logs = np.logaddexp.reduce(est, axis=0) - math.log(m)
    logs = logs + s * math.log(2 * math.pi)  # root diameter
    rows, fails = [], []
    for n in range(1, depth + 1):
        row, f = _block_check(n, logs[2 * n - 2], logs[2 * n - 1], logs[2 * n], sched, slack)
        rows.append(row)
        fails += f
    # premises at every sampled vertex
    vr = np.array(sample.vertex_ratios)
    cum = np.array([r["cumulative"] for br in sample.branches for r in br.trp_reports])
    premises = {
        "vertices_checked": int(vr.size),
        "min_vertex_ratio": float(vr.min()),
        "K": sched.K,
        "min_trp_cumulative": float(cum.min()),
        "k_gamma_q": sched.k_gamma ** sched.q,
        "log_K_p_k_q": sched.log_product,
    }
    if vr.min() < sched.K * (1 - slack):
        fails.append(f"vertex ratio {vr.min():.6g} below K_s = {sched.K:.6g}")
    if cum.min() < sched.k_gamma ** sched.q * (1 - slack):
        fails.append("prolongation shrinks below k_gamma^q")
    if sched.log_product <= 0:
        fails.append(f"K_s^p k_gamma^q = exp({sched.log_product:.6g}) <= 1 with p = {sched.p}")
    return CrucialReport(not fails, "sampled", tuple(rows), tuple(float(x) for x in logs),
                         tuple(fails), sample.pruned,
                         {"premises": premises, "branches": m, "schedule": sched.to_dict()})


# ---------------------------------------------------------------------------
# Cantor sample and dimension


@dataclass(frozen=True, eq=False)
class CantorSample:
    """Finite-depth approximation of ``C_s``.

    ``angles`` are the cap centers of the deepest transient generation
    (high precision), ``log_half_widths`` their half-widths. ``caps``
    lists every sampled cap below the root as rows
    ``(generation, log mass, log(diam / diam_root))``. ``generation_stats``
    holds ``(block, mean log diameter, log count)`` per transient generation;
    ``grid_box_count`` marks samples whose centers are precise enough for
    grid box counting.
    """

    depth: int
    angles: tuple
    log_half_widths: np.ndarray
    log_masses: np.ndarray
    caps: np.ndarray
    generation_stats: tuple = ()
    grid_box_count: bool = False

    def __post_init__(self):
        if len(self.angles) == 0:
            raise ValueError("empty Cantor sample")

    @property
    def directions(self) -> list[BoundaryPoint]:
        return [BoundaryPoint.from_angle(float(a)) for a in self.angles]

    @property
    def cap_widths(self) -> np.ndarray:
        return 2.0 * np.exp(self.log_half_widths)

    def rows(self) -> list[dict]:
        out = []
        for a, lw, lm in zip(self.angles, self.log_half_widths, self.log_masses):
            af = float(a)
            out.append({
                "generation": 2 * self.depth,
                "x": math.cos(af), "y": math.sin(af),
                "angle": mpmath.nstr(a, 30) if not isinstance(a, float) else repr(a),
                "log_half_width": float(lw),
                "log_mass": float(lm),
            })
        return out


def cantor_sample(sample: BranchSample) -> CantorSample:
    depth = len(sample.branches[0].trp_reports)
    leaves = {}
    caps = {}
    log_root = math.log(2 * math.pi)
    for br in sample.branches:
        leaves.setdefault(br.leaf.word, (br.leaf, br.log_mass[-1]))
        gen = 0
        for v, lm in zip(br.nodes[1:], br.log_mass[1:]):
            caps[(v.word, v.level, v.phase)] = (v.depth, lm, v.log_diameter - log_root)
    items = sorted(leaves.values(), key=lambda x: x[0].node_id)
    angles = tuple(v.angle for v, _ in items)
    lw = np.array([v.log_half_width for v, _ in items])
    lm = np.array([m for _, m in items])
    cap_arr = np.array(sorted(caps.values()))
    # importance estimate of the number of caps per transient generation
    stats = []
    for n in range(depth):
        t_index = (n + 1) * (sample.schedule.p + 1)
        ld = np.array([br.nodes[t_index].log_diameter for br in sample.branches])
        m = np.array([br.log_mass[t_index] for br in sample.branches])
        log_count = float(np.logaddexp.reduce(-m) - math.log(m.size))
        stats.append((n + 1, float(ld.mean()), log_count))
    return CantorSample(depth, angles, lw, lm, cap_arr, tuple(stats))


def synthetic_cantor_sample(depth: int = 10, ratio: float = 1.0 / 3.0, children: int = 2,
                            span: float = math.pi) -> CantorSample:
    """Self-similar test tree: every cap has ``children`` equally spaced subcaps.

    With ``ratio = 1/3`` and two children this is the middle-thirds set
    placed on an arc of length ``span``; mass is split uniformly.
    """
    if children < 2 or not 0 < ratio * children <= 1:
        raise ValueError("children must fit inside their parent")
    centers = np.array([0.0])
    width = span
    caps = []
    for g in range(1, depth + 1):
        child_w = width * ratio
        offs = (np.arange(children) - (children - 1) / 2.0) * (width - child_w) / (children - 1)
        centers = (centers[:, None] + offs[None, :]).ravel()
        width = child_w
        caps.append((g, -g * math.log(children), g * math.log(ratio)))
    lw = np.full(centers.size, math.log(width / 2.0))
    lm = np.full(centers.size, -depth * math.log(children))
    stats = tuple((g, math.log(span) + g * math.log(ratio), g * math.log(children))
                  for g in range(1, depth + 1))
    return CantorSample(depth, tuple(float(c) for c in centers), lw, lm, np.array(caps), stats,
                        grid_box_count=True)


def box_counting_dimension(angles: Sequence[float], scales: Sequence[float]) -> tuple[float, np.ndarray]:
    """Slope of ``log N(eps)`` against ``log(1/eps)`` for boxes of side ``eps``.

    ``N(eps)`` is the number of grid intervals of length ``eps`` that
    contain a point of ``angles``.
    """
    x = np.asarray([float(a) for a in angles])
    eps = np.asarray(scales, dtype=float)
    counts = np.array([np.unique(np.floor(x / e + 0.5)).size for e in eps])
    A = np.stack([np.log(1.0 / eps), np.ones_like(eps)], axis=1)
    slope = float(np.linalg.lstsq(A, np.log(counts), rcond=None)[0][0])
    return slope, counts


def dimension_lower_bound(sample: CantorSample, s: float, eps: float = 0.1,
                          min_depth: int = 3) -> dict:
    """Box-counting slope and mass-distribution exponent of a Cantor sample.

    The mass exponent is the largest ``alpha`` with
    ``mu(cap) <= (diam(cap) / diam(root))^alpha`` over every recorded cap;
    the check passes when it is at least ``s - eps``.
    """
    if sample.depth < min_depth:
        raise InsufficientDepth(f"insufficient depth: {sample.depth} < {min_depth}")
    caps = sample.caps
    lm, lr = caps[:, 1], caps[:, 2]
    below = lr < 0
    if not np.any(below):
        raise InsufficientDepth("insufficient depth: no cap smaller than the root")
    alpha = float(np.min(lm[below] / lr[below]))
    report = {"s": s, "eps": eps, "depth": sample.depth, "caps": int(caps.shape[0]),
              "mass_exponent": alpha}
    if not sample.grid_box_count:
        # deep caps are far below double precision: regress generation
        # counts (exact or importance-weighted) against cap widths
        st = np.array(sample.generation_stats)
        A = np.stack([-st[:, 1], np.ones(st.shape[0])], axis=1)
        report["box_count"] = float(np.linalg.lstsq(A, st[:, 2], rcond=None)[0][0])
        report["box_count_method"] = "generation counts"
    else:
        widths = np.exp(np.array([g[1] for g in sample.generation_stats]))
        # intermediate generations only: the coarsest see the span edges
        scales = widths[1:-1]
        slope, counts = box_counting_dimension(sample.angles, scales)
        report["box_count"] = slope
        report["box_count_method"] = "grid box counting"
        report["box_counts"] = counts.tolist()
    report["passed"] = bool(s == 0 or alpha >= s - eps)
    return report


# ---------------------------------------------------------------------------
# transience


def _boundary_normal(center_angle: float, half_angle: float) -> np.ndarray:
    """Hyperboloid unit normal of the geodesic bounding a disk, positive inside."""
    c = np.exp(1j * center_angle) / math.cos(half_angle)
    r = math.tan(half_angle)
    return np.array([1.0, c.real, c.imag]) / r


def _image_boundary(G: SchottkyGroup, x: int, letters) -> np.ndarray:
    """Normal of ``u(boundary of D_x)`` for the word ``u = letters``."""
    al, be = G.disk_angle[x], G.disk_half_angle[x]
    e = np.exp(1j * np.array([al - be, al + be]))
    a, b = G.element(letters)
    f = (a * e + b) / (np.conj(b) * e + np.conj(a))
    half = abs(np.angle(f[1] / f[0])) / 2.0
    mid = np.angle(f[0]) + half if np.angle(f[1] / f[0]) > 0 else np.angle(f[0]) - half
    return _boundary_normal(mid, half)


def _geodesic_gap(n1: np.ndarray, n2: np.ndarray) -> float:
    ip = -n1[0] * n2[0] + n1[1:] @ n2[1:]
    return math.acosh(max(1.0, abs(ip)))


def cut_gain(G: SchottkyGroup, c: int) -> float:
    """Smallest distance between consecutive crossings of ``c``-disks.

    Along a reduced word ``... c u c ...`` (``u`` free of ``c``) the two
    ``c``-boundaries are ``d(boundary D_{c^{-1}}, u(boundary D_c))`` apart.
    Words ``u`` are enumerated until the ping-pong bound
    ``(len(u) + 1) * min_gain`` exceeds the best value found.
    """
    ci = c ^ 1
    n0 = _boundary_normal(G.disk_angle[ci], G.disk_half_angle[ci])
    best = _geodesic_gap(n0, _boundary_normal(G.disk_angle[c], G.disk_half_angle[c]))
    allowed = [x for x in range(2 * G.rank) if x != c]
    frontier = [(x,) for x in allowed if x != ci]
    L = 1
    while frontier and (L + 1) * G.min_gain < best:
        nxt = []
        for u in frontier:
            if u[-1] != ci:
                best = min(best, _geodesic_gap(n0, _image_boundary(G, c, u)))
            nxt += [u + (y,) for y in allowed if y != u[-1] ^ 1]
        frontier = nxt
        L += 1
    return best


def _gain_matrix(G: SchottkyGroup) -> np.ndarray:
    n = G.disk_normal
    gram = -np.outer(n[:, 0], n[:, 0]) + n[:, 1:] @ n[:, 1:].T
    return np.arccosh(np.maximum(-gram, 1.0))


def _letter_bound(G: SchottkyGroup, n: int) -> float:
    """Shortest-path bound over letter sequences with label ``-n``."""
    gain = _gain_matrix(G)
    clear = np.arcsinh(np.abs(G.letter_b))  # d(0, disk of letter x)
    lab = G.letter_label
    k = 2 * G.rank
    target, span = -n, abs(n) + 4
    best, heap, lower = set(), [], math.inf
    for x in range(k):
        heapq.heappush(heap, (float(clear[x]), x, int(lab[x])))
    while heap:
        c, x, lv = heapq.heappop(heap)
        if c >= lower:
            break
        if (x, lv) in best:
            continue
        best.add((x, lv))
        if lv == target:
            lower = min(lower, c + float(clear[x ^ 1]))
        for y in range(k):
            ly = lv + int(lab[y])
            if y != x ^ 1 and abs(ly) <= span and (y, ly) not in best:
                heapq.heappush(heap, (c + float(gain[x ^ 1, y]), y, ly))
    return lower


def _cut_bound(G: SchottkyGroup, n: int) -> float:
    """Bound from the crossings of the designated generator's disks.

    Requires the other generators to have label 0; a word of label ``-n``
    then contains at least ``|n| / |label(gamma)|`` letters ``c`` of the
    opposite sign.
    """
    if any(lab != 0 for lab in G.labels[1:]):
        return 0.0
    lab0 = G.labels[0]
    c = 1 if n * lab0 > 0 else 0  # letter whose label has the sign of -n
    m = -(-abs(n) // abs(lab0))
    clear = np.arcsinh(np.abs(G.letter_b))
    gain = _gain_matrix(G)
    start = float(clear.min())
    # after the last crossing the rest of the word avoids c and c^{-1}
    tail = min(float(clear.min()), G.min_gain)
    others = [y for y in range(2 * G.rank) if y not in (c, c ^ 1)]
    end = min([float(clear[c ^ 1])] + [float(gain[c ^ 1, y]) + tail for y in others])
    return start + (m - 1) * cut_gain(G, c) + end


def coset_distance_bounds(G: SchottkyGroup, H: OrbitTable, levels: Sequence[int]) -> dict:
    """Bounds ``(lower, upper)`` on ``d(z_n, H(0))`` for each level ``n``.

    ``upper`` is the minimum of ``d(z_n, h(0))`` over the enumerated
    ``h`` (identity included). ``lower`` holds for all of ``H``: since
    ``d(z_n, h(0)) = d(0, gamma^{-n} h(0))`` it suffices to bound the
    displacement of reduced words of label ``-n``. The geodesic from 0 to
    ``w(0)`` crosses the nested ping-pong disk boundaries of the letters of
    ``w`` in order, so ``d(0, w(0))`` is at least the sum of the distances
    between the crossings. Two such bounds are combined: one summing
    distances between consecutive boundaries along the cheapest letter
    sequence of the right label, and one summing distances between
    consecutive crossings of the designated generator's disks.
    """
    a_h, b_h = H.elements
    lam = G.translation_length
    out = {}
    for n in sorted(set(int(x) for x in levels)):
        ga, gb = G.gamma_power(-n)
        _, bb = su_mul(ga, gb, a_h, b_h)
        upper = min(float(np.min(2.0 * np.arcsinh(np.abs(bb)))), abs(n) * lam)
        lower = 0.0 if n == 0 else max(_letter_bound(G, n), _cut_bound(G, n))
        out[n] = (min(lower, upper), upper)
    return out


@dataclass(frozen=True, eq=False)
class EscapeProfile:
    """Quotient-distance bounds along a tree branch.

    ``path`` is the shallow part of the branch as a
    :class:`QuasiGeodesicPath` (deep vertices are not representable in
    ball coordinates); ``edge_lengths`` and ``angles`` describe the whole
    branch. ``quotient_distances`` holds rows
    ``(arc length, upper bound, lower bound)``.
    """

    levels: tuple
    phases: tuple
    quotient_distances: np.ndarray
    edge_lengths: np.ndarray
    angles: np.ndarray
    path: QuasiGeodesicPath | None = None

    def __post_init__(self):
        arc = self.quotient_distances[:, 0]
        if np.any(np.diff(arc) <= 0):
            raise ValueError("arc lengths must be strictly increasing")

    def rows(self) -> list[dict]:
        return [
            {"arc_length": float(r[0]), "proxy": float(r[1]), "lower_bound": float(r[2]),
             "level": lv, "phase": ph}
            for r, lv, ph in zip(self.quotient_distances, self.levels, self.phases)
        ]


def branch_angles(G: SchottkyGroup, nodes: Sequence[HTreeNode]) -> np.ndarray:
    """Angle at every inner vertex between the edges to its parent and child.

    In the frame of a vertex the parent sits at ``step^{-1}(0)`` and the
    child at ``step'(0)``, both exact group data.
    """
    out = []
    for u, v in zip(nodes[1:-1], nodes[2:]):
        a, b = G.element(u.step)
        back = -b / a
        a2, b2 = G.element(v.step)
        fwd = b2 / np.conj(a2)
        ang = abs(np.angle(fwd / back))
        out.append(float(ang))
    return np.array(out)


def _shallow_path(G: SchottkyGroup, nodes, max_distance: float, min_edge: float, min_angle: float):
    verts = []
    for v in nodes:
        if v.distance > max_distance:
            break
        a, b = G.element(v.word)
        verts.append(BallPoint.from_complex(complex(b / np.conj(a))))
    if len(verts) < 3:
        return None
    return QuasiGeodesicPath(tuple(verts), min_edge, min_angle)


def escape_profile(G: SchottkyGroup, H: OrbitTable, branch: Branch | Sequence[HTreeNode],
                   min_angle: float = 1e-3, shallow_distance: float = 12.0) -> EscapeProfile:
    nodes = branch.nodes if isinstance(branch, Branch) else list(branch)
    edges = np.array([v.step_length for v in nodes[1:]])
    angles = branch_angles(G, nodes)
    arc = np.concatenate([[0.0], np.cumsum(edges)])
    levels = tuple(v.level for v in nodes)
    bounds = coset_distance_bounds(G, H, levels)
    qd = np.array([(a, bounds[lv][1], bounds[lv][0]) for a, lv in zip(arc, levels)])
    min_edge = float(edges.min()) * (1 - 1e-6) if edges.size else 1.0
    path = _shallow_path(G, nodes, shallow_distance, min_edge, min_angle) if len(nodes) > 2 else None
    return EscapeProfile(levels, tuple(v.phase for v in nodes), qd, edges, angles, path)


def transience_check(profile: EscapeProfile, ell: float, blocks: int | None = None,
                     slack: float = TRANSIENCE_SLACK) -> dict:
    """Per-block growth of the quotient-distance proxy along a branch.

    (a) across every transient block the proxy grows by at least
    ``3 ell - slack``; (b) the minimum over the last block exceeds the
    maximum over the first. A pass of (a) that is not also implied by the
    certified lower bound (lower bound at the end minus proxy at the
    start) is reported as inconclusive.
    """
    qd = profile.quotient_distances
    phases = profile.phases
    t_idx = [i for i, ph in enumerate(phases) if ph == "transient"]
    increments, certified = [], []
    for i in t_idx:
        start = i - 1
        increments.append(float(qd[i, 1] - qd[start, 1]))
        certified.append(float(qd[i, 2] - qd[start, 1]))
    need = 3 * ell - slack
    inc_ok = bool(increments) and all(x >= need for x in increments)
    cert_ok = bool(certified) and all(x >= need for x in certified)
    # block membership: a block ends at each transient vertex
    bounds = [0] + [i + 1 for i in t_idx]
    block_vals = [qd[bounds[j]:bounds[j + 1], 1] for j in range(len(bounds) - 1)]
    trend = None
    if len(block_vals) >= 3:
        trend = bool(block_vals[-1].min() > block_vals[0].max())
    inconclusive = inc_ok and not cert_ok
    passed = inc_ok and cert_ok and (trend is None or trend)
    if len(block_vals) >= 3 and trend is None:
        passed = False
    return {
        "passed": bool(passed),
        "inconclusive": bool(inconclusive),
        "required_increment": need,
        "increments": increments,
        "certified_increments": certified,
        "trend_increasing": trend,
        "max_proxy": float(qd[:, 1].max()),
        "min_angle": float(profile.angles.min()) if profile.angles.size else None,
        "min_edge": float(profile.edge_lengths.min()) if profile.edge_lengths.size else None,
    }


def recurrent_control(construction: Construction, steps: int, seed: int = 0) -> list[HTreeNode]:
    """A branch of recurrent expansions only (no prolongation)."""
    rng = np.random.default_rng(seed)
    u = root_node()
    nodes = [u]
    for _ in range(steps):
        sel, idx, w = construction.successors(u)
        j = int(rng.choice(idx.size, p=w / w.sum()))
        u = construction.expand(u, sel, idx[j:j + 1])[0]
        nodes.append(u)
    return nodes


def reduction_case_report(delta_H: DeltaEstimate, delta_G: DeltaEstimate) -> dict:
    """Whether the estimates for ``H`` and ``G`` are compatible.

    The construction only needs ``s < delta(H)``; equality with ``delta(G)``
    is reported, not assumed.
    """
    overlap = delta_H.overlaps(delta_G)
    return {
        "overlap": bool(overlap),
        "delta_H": delta_H.to_dict(),
        "delta_G": delta_G.to_dict(),
        "s_upper": float(delta_H.lo),
        "note": "bands overlap" if overlap else "bands disjoint: delta(H) and delta(G) mismatch",
    }


def verify_sample(sample: BranchSample, rrp: RRPParams, G: SchottkyGroup, recheck: int = 64,
                  tol: float = 1e-9) -> dict:
    """Audit the sampled vertices.

    * every recurrent child lies in its parent's cap and every transient
      vertex in its previous T-cap (absolute, high-precision angles);
    * sampled vertices of the same generation have disjoint caps;
    * for up to ``recheck`` vertices the distance, offset and width ratio
      are recomputed by the independent high-precision route.
    """
    from .renorm import child_geometry_mp

    nodes = sample.unique_nodes()
    nest_fail, errors = [], []
    for v in nodes[1:]:
        anc = v.parent if v.phase == "recurrent" else _previous_t(v)
        if not _nested(v, anc):
            nest_fail.append(v.node_id)
    by_gen: dict = {}
    for v in nodes[1:]:
        by_gen.setdefault(v.depth, []).append(v)
    overlap = [d for d, vs in sorted(by_gen.items()) if not generation_disjoint(vs)]
    step = max(1, len(nodes) // max(recheck, 1))
    worst = 0.0
    for v in nodes[1::step][:recheck]:
        u = v.parent
        if u.is_root:
            continue
        a, b = G.element(v.step)
        dist, off, wr = child_geometry_mp(u.zeta, u.distance, a, b, rrp.sigma)
        err = max(abs(dist - v.distance) / max(1.0, v.distance), abs(off - v.offset),
                  abs(wr - v.width_ratio) / max(wr, 1e-300))
        worst = max(worst, err)
        if err > tol:
            errors.append(v.node_id)
    return {
        "passed": not (nest_fail or overlap or errors),
        "vertices": len(nodes),
        "nesting_failures": nest_fail,
        "overlapping_generations": overlap,
        "recheck_failures": errors,
        "recheck_max_error": worst,
    }


def cantor_sample_from_build(result: BuildResult, s: float) -> CantorSample:
    """Cantor sample of a fully materialised construction.

    Mass is split among the (kept) successors of every recurrent vertex
    proportionally to ``diam^s`` and passed unchanged through
    prolongations.
    """
    if result.partial:
        raise ConstructionError("construction incomplete: " + result.reason, None, "budget")
    nodes = result.nodes()
    children: dict = {}
    for v in nodes[1:]:
        children.setdefault(id(v.parent), []).append(v)
    log_mass = {id(nodes[0]): 0.0}
    log_root = math.log(2 * math.pi)
    caps = []
    for v in nodes[1:]:
        par = v.parent
        if v.phase == "transient":
            lm = log_mass[id(par)]
        else:
            sib = children[id(par)]
            w = np.array([c.width_ratio for c in sib]) ** s
            lm = log_mass[id(par)] + math.log(v.width_ratio ** s / w.sum())
        log_mass[id(v)] = lm
        caps.append((v.depth, lm, v.log_diameter - log_root))
    gens = result.generations
    depth = (len(gens) - 1) // 2
    leaves = gens[-1].vertices
    stats = tuple(
        (n, float(np.mean([v.log_diameter for v in gens[2 * n].vertices])),
         math.log(len(gens[2 * n].vertices)))
        for n in range(1, depth + 1)
    )
    return CantorSample(
        depth,
        tuple(v.angle for v in leaves),
        np.array([v.log_half_width for v in leaves]),
        np.array([log_mass[id(v)] for v in leaves]),
        np.array(sorted(caps)),
        stats,
    )


def build_branches(result: BuildResult, count: int) -> list[list[HTreeNode]]:
    """Root-to-leaf vertex lists for the first ``count`` leaves of a full build."""
    leaves = result.generations[-1].vertices[:count]
    return [list(reversed(list(v.ancestors()))) for v in leaves]
