"""Recurrent and transient renormalisation of geodesic H-trees.

Vertices of the tree are orbit points ``u = g_u(0)`` with ``g_u = h gamma^n``.
Tree vertices quickly sit at hyperbolic distances of several hundred from
the origin, far beyond what ball coordinates in double precision can
represent. Each vertex is therefore stored in its own *frame*: applying
``g_u^{-1}`` moves ``u`` to 0 and the origin to the point
``o' = zeta * tanh(D/2)`` where ``D = d(0, u)``. Everything the
construction needs (distances from the origin, shadow caps of successors
relative to the shadow of ``u``) is a function of ``(zeta, D)`` and the
successor element, and the formulas below stay exact in the limit
``D -> infinity``.

Caps are described relative to their parent: ``offset`` is the angle
between the two cap centers and ``width_ratio`` the ratio of half-widths,
both in units of the parent's half-width. Absolute directions are kept
as high-precision ``mpmath`` numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import mpmath
import numpy as np

from .hypgeo import TAU, BoundaryPoint, GeometryError, SphericalCap, fixed_points
from .kleinian import (
    OrbitTable,
    SchottkyGroup,
    enumerate_words,
    reduce_letters,
    su_displacement,
    su_mul,
    subgroup_filter,
    word_string,
)


class RRPError(RuntimeError):
    """A recurrent expansion violates one of its four properties."""

    def __init__(self, prop: str, message: str):
        super().__init__(f"property ({prop}) failed: {message}")
        self.prop = prop


class TRPError(RuntimeError):
    """A transient prolongation violates its shrinkage or summit bound."""


class CalibrationError(RuntimeError):
    """No admissible edge length was found within the budget."""


# ---------------------------------------------------------------------------
# frame geometry


def _asinc(x):
    """``arcsin(x)/x`` with the removable singularity at 0."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-4
    safe = np.where(small, 0.5, x)
    return np.where(small, 1.0 + x * x / 6.0, np.arcsin(np.minimum(safe, 1.0)) / safe)


def _atanc(z):
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-4
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 - z * z / 3.0, np.arctan(safe) / safe)


def _delta(D):
    """``1 - tanh(D/2)`` computed without cancellation."""
    e = np.exp(-np.asarray(D, dtype=float))
    return 2.0 * e / (1.0 + e)


def half_width(D, r: float):
    """Half-width of the shadow of ``B(u, r)`` for ``d(0, u) = D``."""
    return np.arcsin(np.minimum(1.0, math.sinh(r) / np.sinh(D)))


def log_half_width(D, r: float):
    """``log`` of :func:`half_width`, valid for arbitrarily large ``D``."""
    D = np.asarray(D, dtype=float)
    # sinh D = e^D (1 - e^{-2D}) / 2
    log_x = math.log(math.sinh(r)) + math.log(2.0) - D - np.log1p(-np.exp(-2.0 * D))
    x = np.exp(log_x)
    return log_x + np.log(_asinc(x))


def frame_distance(w, D, log_den=None):
    """``d(y, o')`` for ``w = conj(zeta) * y`` and ``o' = zeta tanh(D/2)``.

    ``log_den`` is ``log(1 - |y|^2)``; pass it when ``y`` is too close to
    the boundary for ``1 - |w|^2`` to be accurate (for ``y = k(0)`` it is
    ``-2 log|a|``).
    """
    w = np.asarray(w, dtype=complex)
    dl = _delta(D)
    num = np.abs(w - 1.0 + dl)
    if log_den is None:
        log_den = np.log(1.0 - np.abs(w) ** 2)
    with np.errstate(divide="ignore"):
        log_x = D - math.log(2.0) + 2.0 * np.log1p(np.exp(-D)) + 2.0 * np.log(num) - log_den
    X = np.exp(np.minimum(log_x, 700.0))
    small = 2.0 * np.arcsinh(np.sqrt(X / 2.0))
    inv = np.exp(-np.maximum(log_x, 0.0))
    large = log_x + np.log(1.0 + inv + np.sqrt(1.0 + 2.0 * inv))
    return np.where(log_x < 600.0, small, large)


def frame_offset(w, D, sigma: float):
    """Angle at the origin between the directions to ``u`` and to ``y``.

    ``y`` is given in the frame of ``u`` through ``w = conj(zeta) * y``.
    The result is in units of the half-width of the shadow of ``B(u, sigma)``.
    Works for boundary points ``|w| = 1`` too.
    """
    w = np.asarray(w, dtype=complex)
    D = float(D)
    dl = float(_delta(D))
    q = (1.0 + w) / (1.0 - w + dl * w)
    den = 1.0 - dl * q.real
    # angle = arg(1 - dl*q); angle/dl computed without dividing by dl
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = np.arctan2(-dl * q.imag, den) / dl if dl > 0 else np.zeros_like(q.real)
    zr = -q.imag / np.where(den > 0, den, 1.0)
    series = zr * _atanc(dl * zr)
    angle_over_dl = np.where(den > 0, series, direct)
    # half-width / dl = sinh(sigma)/(1 - e^{-D}) * asinc(x)
    x = math.sinh(sigma) / math.sinh(D) if D < 700 else 0.0
    hw_over_dl = math.sinh(sigma) / (-math.expm1(-D)) * float(_asinc(x))
    return angle_over_dl / hw_over_dl


def frame_width_ratio(D_child, D_parent, sigma: float, r_child: float | None = None):
    """Ratio of shadow half-widths, child (radius ``r_child``) over parent (radius ``sigma``)."""
    r_child = sigma if r_child is None else r_child
    D_child = np.asarray(D_child, dtype=float)
    return np.exp(log_half_width(D_child, r_child) - log_half_width(D_parent, sigma))


def frame_zeta(zeta: complex, D: float, a, b):
    """Direction of ``k^{-1}(o')`` for the element ``k = (a, b)``."""
    t = 1.0 - float(_delta(D))
    o = zeta * t
    img = (np.conj(a) * o - b) / (-np.conj(b) * o + a)
    return img / np.abs(img)


@dataclass(frozen=True, eq=False)
class ChildGeometry:
    """Geometry of candidate successors of one vertex, relative to its cap."""

    distance: np.ndarray
    offset: np.ndarray
    width_ratio: np.ndarray
    zeta: np.ndarray
    step_length: np.ndarray


def child_geometry(zeta, D: float, a, b, sigma: float) -> ChildGeometry:
    """Successor geometry for the elements ``(a, b)`` applied in the frame of a vertex.

    ``zeta is None`` denotes the root (the vertex is the origin itself);
    then offsets are absolute angles in units of ``pi`` and width ratios
    are relative to the full circle of half-width ``pi``.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    y = b / np.conj(a)
    step = su_displacement(b)
    if zeta is None:
        Dc = step
        off = np.angle(y) / math.pi
        wr = half_width(Dc, sigma) / math.pi
        z = -b / a
        return ChildGeometry(Dc, off, wr, z / np.abs(z), step)
    w = np.conj(zeta) * y
    Dc = frame_distance(w, D, -2.0 * np.log(np.abs(a)))
    off = frame_offset(w, D, sigma)
    with np.errstate(divide="ignore", invalid="ignore"):
        wr = frame_width_ratio(Dc, D, sigma)
        z = frame_zeta(zeta, D, a, b)
    # a candidate at (or within sigma of) the origin has no shadow
    bad = Dc <= sigma
    wr = np.where(bad, np.inf, wr)
    return ChildGeometry(Dc, off, wr, np.where(bad, 1.0, z), step)


def child_geometry_mp(zeta, D: float, a: complex, b: complex, sigma: float, r_child=None):
    """Reference computation of one successor's cap in high precision.

    Places the origin at ``o' = zeta tanh(D/2)`` with enough digits,
    moves it to 0 by a Möbius map and reads off the shadow of the ball
    around the image of ``y`` directly. Used by verification sweeps as an
    independent route to :func:`child_geometry`.
    """
    r_child = sigma if r_child is None else r_child
    dps = int(D / 2.0) + 30
    with mpmath.workdps(dps):
        y = mpmath.mpc(b) / mpmath.conj(mpmath.mpc(a))
        z = mpmath.mpc(zeta)
        z = z / abs(z)
        o = z * mpmath.tanh(mpmath.mpf(D) / 2)
        My = (y - o) / (1 - mpmath.conj(o) * y)
        Mu = -o
        dist = 2 * mpmath.atanh(abs(My))
        ang = mpmath.arg(My / Mu)
        hw_u = mpmath.asin(mpmath.sinh(sigma) / mpmath.sinh(D))
        if dist <= r_child:
            return float(dist), float(ang / hw_u), math.inf
        hw_v = mpmath.asin(mpmath.sinh(r_child) / mpmath.sinh(dist))
        return float(dist), float(ang / hw_u), float(hw_v / hw_u)


# ---------------------------------------------------------------------------
# parameters and nodes


@dataclass(frozen=True, eq=False)
class SuccessorCandidates:
    """Elements ``h'`` of ``H`` with ``0 < d(0, h'(0)) <= ell``."""

    a: np.ndarray
    b: np.ndarray
    words: tuple
    displacement: np.ndarray

    @classmethod
    def from_table(cls, table: OrbitTable, ell: float) -> "SuccessorCandidates":
        sub = table.within(ell)
        a, b = sub.elements
        disp = sub.displacement
        order = np.lexsort((np.arange(disp.size), disp))
        words = sub.letters()
        return cls(a[order], b[order], tuple(words[i] for i in order), disp[order])

    def __len__(self):
        return int(self.a.size)


@dataclass(frozen=True, eq=False)
class RRPParams:
    s: float
    ell: float
    K: float
    sigma: float
    comparability_c: float
    candidates: SuccessorCandidates = field(repr=False)
    report: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.K > 1:
            raise ValueError("K_s must exceed 1")
        if not (0 < self.sigma <= TAU + 1e-15):
            raise ValueError("sigma must lie in (0, log(1+sqrt 2)]")
        if not self.ell > 0:
            raise ValueError("ell_s must be positive")

    def to_dict(self) -> dict:
        return {
            "s": self.s, "ell": self.ell, "K": self.K, "sigma": self.sigma,
            "comparability_c": self.comparability_c, "candidates": len(self.candidates),
        }


@dataclass(frozen=True, eq=False)
class TRPParams:
    q: int
    k_gamma: float
    summit_slack: float
    sigma: float
    lam: float
    gamma_a: complex = field(repr=False, default=1.0)
    gamma_b: complex = field(repr=False, default=0.0)
    eta_plus: complex = field(repr=False, default=1.0)
    comparability_c: float = math.inf

    def __post_init__(self):
        if not (0 < self.k_gamma < 1):
            raise ValueError("k_gamma must lie in (0, 1)")
        if self.q < 0:
            raise ValueError("q must be non-negative")

    @classmethod
    def for_group(cls, G: SchottkyGroup, q: int, k_gamma: float, rrp: RRPParams) -> "TRPParams":
        eta = fixed_points(G.gamma)[1].complex
        return cls(
            q, k_gamma, 2 * rrp.ell + TAU, rrp.sigma, G.translation_length,
            complex(G.letter_a[0]), complex(G.letter_b[0]), eta, rrp.comparability_c,
        )

    def to_dict(self) -> dict:
        return {"q": self.q, "k_gamma": self.k_gamma, "summit_slack": self.summit_slack,
                "comparability_c": self.comparability_c}


@dataclass(eq=False)
class HTreeNode:
    """Vertex ``u = g_u(0)`` of the tree, stored in its own frame.

    ``offset`` and ``width_ratio`` place the shadow of ``B(u, sigma)``
    inside the parent's shadow (units of the parent's half-width).
    """

    word: tuple
    level: int
    phase: str
    distance: float
    zeta: complex | None
    parent: "HTreeNode | None" = field(default=None, repr=False)
    offset: float = 0.0
    width_ratio: float = 1.0
    step: tuple = ()
    step_length: float = 0.0
    depth: int = 0
    angle: object = 0
    log_half_width: float = math.log(math.pi)
    node_id: int = 0
    report: dict | None = field(default=None, repr=False)

    @property
    def is_root(self) -> bool:
        return self.zeta is None

    @property
    def half_width(self) -> float:
        return math.exp(self.log_half_width)

    @property
    def log_diameter(self) -> float:
        return math.log(2.0) + self.log_half_width

    @property
    def shadow(self) -> SphericalCap:
        """The cap as a double-precision :class:`SphericalCap` (shallow vertices only)."""
        hw = self.half_width
        if hw <= 0:
            raise GeometryError("cap too narrow for double precision; use angle/log_half_width")
        return SphericalCap(BoundaryPoint.from_angle(float(self.angle)), min(hw, math.pi))

    def ancestors(self):
        node = self
        while node is not None:
            yield node
            node = node.parent

    def to_record(self) -> dict:
        return {
            "id": self.node_id,
            "parent": None if self.parent is None else self.parent.node_id,
            "word": word_string(self.word),
            "level": self.level,
            "phase": self.phase,
            "depth": self.depth,
            "distance": self.distance,
            "direction": mpmath.nstr(self.angle, 40) if not isinstance(self.angle, (int, float)) else repr(float(self.angle)),
            "log_half_width": self.log_half_width,
            "offset": self.offset,
            "width_ratio": self.width_ratio,
        }


def root_node() -> HTreeNode:
    return HTreeNode((), 0, "root", 0.0, None, angle=mpmath.mpf(0))


# ---------------------------------------------------------------------------
# successor selection


@dataclass(frozen=True, eq=False)
class Selection:
    index: np.ndarray
    geometry: ChildGeometry
    ratio: float


def _circular_gap(x, y):
    """Distance between offsets measured in units of pi on the circle."""
    d = np.abs(x - y) % 2.0
    return np.minimum(d, 2.0 - d)


def select_successors(
    geo: ChildGeometry, s: float, comparability_c: float, root: bool, tol: float = 1e-12
) -> Selection:
    """Greedy packing: by shadow size, keep nested, disjoint, comparable caps."""
    wr, off, Dc = geo.width_ratio, geo.offset, geo.distance
    if root:
        nested = np.isfinite(wr)
    else:
        nested = np.abs(off) + wr <= 1.0 - tol
    order = np.lexsort((np.arange(wr.size), -wr))
    log_c = math.log(comparability_c)
    acc: list[int] = []
    for i in order:
        if not nested[i]:
            continue
        if acc:
            if Dc[i] - Dc[acc[0]] > log_c:
                continue
            j = np.array(acc)
            gap = _circular_gap(off[i], off[j]) if root else np.abs(off[i] - off[j])
            if np.any(gap < wr[i] + wr[j] + tol):
                continue
        acc.append(int(i))
    idx = np.array(acc, dtype=np.int64)
    ratio = float(np.sum(wr[idx] ** s)) if idx.size else 0.0
    return Selection(idx, geo, ratio)


def successor_geometry(u: HTreeNode, params: RRPParams) -> ChildGeometry:
    c = params.candidates
    return child_geometry(u.zeta, u.distance, c.a, c.b, params.sigma)


def verify_selection(sel: Selection, params: RRPParams, root: bool, tol: float = 1e-9):
    """Check properties (i)-(iv) of a successor set; raises :class:`RRPError`."""
    g = sel.geometry
    idx = sel.index
    if idx.size < 2:
        raise RRPError("size", f"only {idx.size} successors")
    off, wr, Dc, step = g.offset[idx], g.width_ratio[idx], g.distance[idx], g.step_length[idx]
    if not root and np.any(np.abs(off) + wr > 1.0 + tol):
        raise RRPError("i", "successor shadow not nested in the parent shadow")
    for k in range(idx.size):
        others = np.arange(idx.size) != k
        gap = _circular_gap(off[k], off[others]) if root else np.abs(off[k] - off[others])
        if np.any(gap < wr[k] + wr[others] - tol):
            raise RRPError("i", "successor shadows overlap")
    if np.any(step > params.ell + tol):
        raise RRPError("ii", f"edge longer than ell_s = {params.ell}")
    if Dc.max() - Dc.min() > math.log(params.comparability_c) + tol:
        raise RRPError("iii", "successor distances not comparable")
    if sel.ratio < params.K * (1 - tol):
        raise RRPError("iv", f"scaling ratio {sel.ratio:.6g} below K_s = {params.K:.6g}")


# ---------------------------------------------------------------------------
# node construction


def make_child(u: HTreeNode, geo: ChildGeometry, i: int, step: tuple, phase: str,
               level: int, sigma: float, node_id: int = 0, r_child: float | None = None) -> HTreeNode:
    off = float(geo.offset[i])
    wr = float(geo.width_ratio[i])
    D = float(geo.distance[i])
    dps = int(max(D, u.distance) / 2.0) + 40
    with mpmath.workdps(dps):
        if u.is_root:
            ang = mpmath.mpf(off) * mpmath.pi
        else:
            hw = mpmath.asin(mpmath.sinh(sigma) / mpmath.sinh(u.distance))
            ang = u.angle + mpmath.mpf(off) * hw
    return HTreeNode(
        word=reduce_letters(u.word + tuple(step)),
        level=level,
        phase=phase,
        distance=D,
        zeta=complex(geo.zeta[i]),
        parent=u,
        offset=off,
        width_ratio=wr,
        step=tuple(step),
        step_length=float(geo.step_length[i]),
        depth=u.depth + 1,
        angle=ang,
        log_half_width=float(log_half_width(D, sigma)),
        node_id=node_id,
    )


def rrp_successors(u: HTreeNode, params: RRPParams) -> Selection:
    """Select and verify the successor set of ``u`` without building nodes."""
    geo = successor_geometry(u, params)
    sel = select_successors(geo, params.s, params.comparability_c, u.is_root)
    verify_selection(sel, params, u.is_root)
    return sel


def rrp_expand(u: HTreeNode, params: RRPParams, selection: Selection | None = None) -> list[HTreeNode]:
    """Successors of ``u`` satisfying properties (i)-(iv).

    The candidates are the images ``g_u h'(0)`` for the calibrated
    elements ``h'``; since ``g_u h' = (h gamma^n h' gamma^{-n}) gamma^n``
    they lie in ``H(z_n)`` and ``d(u, g_u h'(0)) = d(0, h'(0))``.
    """
    sel = rrp_successors(u, params) if selection is None else selection
    cands = params.candidates
    return [
        make_child(u, sel.geometry, int(i), cands.words[i], "recurrent", u.level, params.sigma)
        for i in sel.index
    ]


# ---------------------------------------------------------------------------
# transient prolongation


def gamma_powers(params: TRPParams, q: int):
    a, b = [1.0 + 0j], [0j]
    for _ in range(q):
        na, nb = su_mul(a[-1], b[-1], params.gamma_a, params.gamma_b)
        a.append(complex(na))
        b.append(complex(nb))
    return np.array(a), np.array(b)


def summit_offset(zeta: complex, D: float, eta_plus: complex) -> float:
    """Signed distance from the vertex to the summit of its axis copy.

    In the frame of the vertex the axis passes through 0 towards
    ``eta_plus``; positive values mean the summit (seen from the origin)
    lies ahead of the vertex.
    """
    c = (np.conj(eta_plus) * zeta).real
    s2 = 0.5 * (1.0 - c)  # sin^2(phi/2)
    c2 = 0.5 * (1.0 + c)
    e = 2.0 * math.exp(-2.0 * D) / (1.0 + math.exp(-2.0 * D))
    one_minus = 2.0 * s2 + c * e
    one_plus = 2.0 * c2 - c * e
    return 0.5 * (math.log(one_plus) - math.log(one_minus))


@dataclass(frozen=True)
class TRPReport:
    step_ratios: tuple
    cumulative: float
    summit_distance: float
    summit_ahead: bool
    eta_in_cap: bool
    nested_in_parent: bool
    bound: float

    @property
    def normalized_ratios(self) -> tuple:
        return self.step_ratios


def trp_apply(u: HTreeNode, q: int, params: TRPParams, check: bool = True) -> HTreeNode:
    """Prolong ``u = h(z_n)`` to ``h(z_{n+q}) = (h gamma^q h^{-1})(u)``.

    The per-step shadow ratios ``diam(h z_{n+j}) / diam(h z_{n+j-1})``
    are measured in the frame of ``u``; the cumulative ratio is checked
    against ``k_gamma^q``. The summit ``z_hat`` of ``h(A_gamma)`` is
    checked to lie within ``2 ell_s + tau`` of ``u`` and ``h(eta_plus)``
    to lie in the shadow of ``B(z_hat, tau)``.
    """
    if q == 0:
        return u
    if u.is_root:
        raise TRPError("prolongation needs a non-root vertex")
    A, B = gamma_powers(params, q)
    geo = child_geometry(u.zeta, u.distance, A[1:], B[1:], params.sigma)
    wr = np.concatenate([[1.0], geo.width_ratio])
    ratios = wr[1:] / wr[:-1]
    cumulative = float(wr[-1])

    t_star = summit_offset(u.zeta, u.distance, params.eta_plus)
    eta = params.eta_plus
    z_hat = eta * math.tanh(t_star / 2.0)
    w_eta = np.conj(u.zeta) * eta
    w_hat = np.conj(u.zeta) * z_hat
    off_eta = float(frame_offset(np.array([w_eta]), u.distance, params.sigma)[0])
    off_hat = float(frame_offset(np.array([w_hat]), u.distance, params.sigma)[0])
    log_den = -2.0 * (abs(t_star) / 2.0 + math.log1p(math.exp(-abs(t_star))) - math.log(2.0))
    D_hat = float(frame_distance(np.array([w_hat]), u.distance, log_den)[0])
    hw_hat = float(frame_width_ratio(np.array([D_hat]), u.distance, params.sigma, TAU)[0])
    eta_in_cap = abs(off_eta - off_hat) <= hw_hat * (1 + 1e-9)
    nested = abs(float(geo.offset[-1])) + float(geo.width_ratio[-1]) <= 1.0

    bound = params.k_gamma ** q
    report = TRPReport(
        tuple(float(r) for r in ratios), cumulative, abs(t_star), t_star > 0,
        bool(eta_in_cap), bool(nested), bound,
    )
    if check:
        if cumulative < bound * (1 - 1e-9):
            raise TRPError(f"shrinkage {cumulative:.6g} below k_gamma^q = {bound:.6g}")
        if abs(t_star) > params.summit_slack:
            raise TRPError(
                f"summit at distance {abs(t_star):.6g} exceeds 2 ell_s + tau = {params.summit_slack:.6g}"
            )
        if not eta_in_cap:
            raise TRPError("attracting fixed point outside the summit shadow")
        dev = np.abs(np.log(ratios) + params.lam)
        if np.any(dev > math.log(params.comparability_c) + 1e-9):
            raise TRPError(
                f"step ratio off exp(-lambda) by factor {math.exp(dev.max()):.6g} "
                f"> c = {params.comparability_c:.6g}"
            )
    node = make_child(u, geo, q - 1, (0,) * q, "transient", u.level + q, params.sigma)
    node.report = {
        "step_ratios": list(report.step_ratios),
        "cumulative": cumulative,
        "summit_distance": report.summit_distance,
        "summit_ahead": report.summit_ahead,
        "eta_in_cap": report.eta_in_cap,
        "nested_in_parent": report.nested_in_parent,
    }
    return node


# ---------------------------------------------------------------------------
# calibration


def _probe_states(params_like, G: SchottkyGroup, n_walks: int, walk_length: int, q: int,
                  rng: np.random.Generator):
    """Vertex states visited by random descents through the tree.

    Returns a list of nodes: the root, every vertex on ``n_walks`` random
    recurrent descents of ``walk_length`` steps, and the prolongations by
    ``gamma^q`` of the walk endpoints together with recurrent descents
    from those.
    """
    trp = TRPParams(q, 0.5, math.inf, params_like.sigma, G.translation_length,
                    complex(G.letter_a[0]), complex(G.letter_b[0]),
                    fixed_points(G.gamma)[1].complex)
    root = root_node()
    states = [root]
    for _ in range(n_walks):
        u = root
        for phase in range(2):
            for _ in range(walk_length):
                geo = successor_geometry(u, params_like)
                sel = select_successors(geo, params_like.s, params_like.comparability_c, u.is_root)
                if sel.index.size == 0:
                    break
                i = int(rng.choice(sel.index))
                u = make_child(u, geo, i, params_like.candidates.words[i], "recurrent", u.level,
                               params_like.sigma)
                states.append(u)
            if phase == 0 and not u.is_root:
                u = trp_apply(u, q, trp, check=False)
                states.append(u)
    return states


def rrp_calibrate(
    H: OrbitTable,
    s: float,
    budget: int = 2_000_000,
    sigma: float = TAU,
    margin: float = 0.01,
    ell_grid: Sequence[float] | None = None,
    n_walks: int = 24,
    walk_length: int = 12,
    seed: int = 0,
    delta_hi: float | None = None,
) -> RRPParams:
    """Find the smallest edge length ``ell_s`` with a scaling factor ``K_s >= 1 + margin``.

    For each candidate ``ell`` the successor sets are computed at a sample
    of vertex states: the root and the vertices met by seeded random
    descents through the tree built with that ``ell`` (including vertices
    just after a transient prolongation, whose frames look down the axis).
    ``K_s`` is the smallest scaling ratio over the sample.

    ``H`` is an orbit table of the subgroup; its completeness radius
    bounds the largest ``ell`` that can be tried, and ``budget`` bounds
    its size.
    """
    if not 0 < s:
        raise ValueError("s must be positive")
    if delta_hi is not None and s >= delta_hi:
        raise CalibrationError(f"s = {s} is not below the delta band ({delta_hi})")
    if len(H) > budget:
        raise CalibrationError("orbit table exceeds the calibration budget")
    G = H.group
    t_max = H.complete_to if H.complete_to is not None else float(H.displacement.max())
    if ell_grid is None:
        ell_grid = np.arange(1.0, t_max + 1e-9, 0.25)
    tried = []
    for ell in ell_grid:
        if ell > t_max:
            break
        cands = SuccessorCandidates.from_table(H, ell)
        if len(cands) < 2:
            continue
        trial = RRPParams(s, float(ell), 1.0 + 1e-12, sigma, math.exp(ell), cands)
        q = max(1, math.ceil(4 * ell / G.translation_length))
        rng = np.random.default_rng(seed)
        states = _probe_states(trial, G, n_walks, walk_length, q, rng)
        ratios, sizes = [], []
        for u in states:
            sel = select_successors(successor_geometry(u, trial), s, trial.comparability_c, u.is_root)
            ratios.append(sel.ratio)
            sizes.append(sel.index.size)
        K = float(min(ratios))
        tried.append({"ell": float(ell), "K": K, "min_successors": int(min(sizes)),
                      "states": len(states)})
        if K >= 1.0 + margin and min(sizes) >= 2:
            report = {"tried": tried, "states": len(states), "median_ratio": float(np.median(ratios))}
            return RRPParams(s, float(ell), K, sigma, math.exp(ell), cands, report)
    raise CalibrationError(
        f"s too close to delta(H) for this budget: no ell <= {t_max:g} gives K_s >= {1 + margin}"
    )


def k_gamma_estimate(G: SchottkyGroup, rrp: RRPParams, sample_size: int = 64, q: int | None = None,
                     seed: int = 0) -> tuple[float, dict]:
    """Lower bound for the one-step shadow ratio along axis copies.

    Samples recurrent vertices by random descents, prolongs each by
    ``q`` steps and returns the smallest per-step ratio seen, together
    with a summary.
    """
    if sample_size <= 0:
        raise ValueError("empty sample")
    lam = G.translation_length
    q = max(1, math.ceil(4 * rrp.ell / lam)) if q is None else q
    rng = np.random.default_rng(seed)
    trp = TRPParams(q, 0.5, math.inf, rrp.sigma, lam, complex(G.letter_a[0]),
                    complex(G.letter_b[0]), fixed_points(G.gamma)[1].complex)
    ratios = []
    walks = max(1, sample_size // 4)
    states = [u for u in _probe_states(rrp, G, walks, 4, q, rng) if not u.is_root][:sample_size]
    for u in states:
        node = trp_apply(u, q, trp, check=False)
        ratios.extend(node.report["step_ratios"])
    r = np.array(ratios)
    k = float(r.min())
    return k, {"samples": len(states), "min": k, "median": float(np.median(r)),
               "max": float(r.max()), "exp_minus_lambda": math.exp(-lam)}


def calibrate_h_table(G: SchottkyGroup, t: float, budget: int = 5_000_000) -> OrbitTable:
    return subgroup_filter(enumerate_words(G, max_displacement=t, budget=budget), 0)
