"""Poincaré-ball hyperbolic geometry.

Points of the ball ``D^{m+1}`` are stored as Euclidean coordinate vectors.
Isometries are unit-determinant 2x2 complex matrices: in dimension 2 they
act on the unit disk by Möbius transformations (the matrices lie in
``SU(1,1)``), in dimension 3 they act on the Riemann sphere and are
extended to the ball through the standard map between the ball and upper
half-space.

Throughout, ``d`` is the hyperbolic metric with curvature -1, so a point
at Euclidean radius ``tanh(r/2)`` lies at hyperbolic distance ``r`` from
the origin.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

#: Schweikart's constant ``log(1 + sqrt 2)``.
TAU = math.log1p(math.sqrt(2.0))

#: Points closer than this to the unit sphere are rejected.
BOUNDARY_EPS = 1e-12

#: Default relative tolerance for numerical comparisons.
TOL = 1e-9


class GeometryError(ValueError):
    """Raised when an input lies outside the domain of an operation."""


class IndeterminateError(GeometryError):
    """Raised when a classification is numerically borderline."""


class Kind(str, enum.Enum):
    IDENTITY = "identity"
    ELLIPTIC = "elliptic"
    PARABOLIC = "parabolic"
    LOXODROMIC = "loxodromic"


def _vector(x) -> np.ndarray:
    if isinstance(x, (complex, np.complexfloating)):
        return np.array([x.real, x.imag], dtype=float)
    arr = np.asarray(x, dtype=float).reshape(-1)
    return arr.copy()


# ---------------------------------------------------------------------------
# points


@dataclass(frozen=True, eq=False)
class BallPoint:
    """A point strictly inside the unit ball."""

    coords: np.ndarray
    eps: float = field(default=BOUNDARY_EPS, repr=False)

    def __post_init__(self):
        c = _vector(self.coords)
        if c.size < 2 or c.size > 3:
            raise GeometryError(f"unsupported dimension {c.size}")
        if not np.all(np.isfinite(c)):
            raise GeometryError("non-finite coordinates")
        if np.linalg.norm(c) >= 1.0 - self.eps:
            raise GeometryError(f"point {c} is not inside the open ball")
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)

    @classmethod
    def origin(cls, dim: int = 2) -> "BallPoint":
        return cls(np.zeros(dim))

    @classmethod
    def from_complex(cls, z: complex) -> "BallPoint":
        return cls(np.array([z.real, z.imag]))

    @classmethod
    def polar(cls, distance: float, direction) -> "BallPoint":
        """Point at hyperbolic ``distance`` from 0 in the given direction.

        ``direction`` is an angle (2D) or a vector.
        """
        if np.ndim(direction) == 0:
            u = np.array([math.cos(direction), math.sin(direction)])
        else:
            u = _vector(direction)
            u = u / np.linalg.norm(u)
        return cls(math.tanh(distance / 2.0) * u)

    @property
    def dim(self) -> int:
        return self.coords.size

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))

    @property
    def complex(self) -> complex:
        if self.dim != 2:
            raise GeometryError("complex coordinate only exists in dimension 2")
        return complex(self.coords[0], self.coords[1])

    def hyperboloid(self) -> np.ndarray:
        return to_hyperboloid(self.coords)

    def __eq__(self, other):
        return isinstance(other, BallPoint) and np.array_equal(self.coords, other.coords)

    def __hash__(self):
        return hash(self.coords.tobytes())


@dataclass(frozen=True, eq=False)
class BoundaryPoint:
    """A point of the boundary sphere, stored as a unit vector."""

    direction: np.ndarray
    tol: float = field(default=TOL, repr=False)

    def __post_init__(self):
        u = _vector(self.direction)
        if u.size < 2 or u.size > 3:
            raise GeometryError(f"unsupported dimension {u.size}")
        n = np.linalg.norm(u)
        if abs(n - 1.0) > max(self.tol, 1e-7):
            raise GeometryError(f"direction {u} is not a unit vector")
        u = u / n
        u.flags.writeable = False
        object.__setattr__(self, "direction", u)

    @classmethod
    def from_angle(cls, theta: float) -> "BoundaryPoint":
        return cls(np.array([math.cos(theta), math.sin(theta)]))

    @classmethod
    def normalized(cls, v) -> "BoundaryPoint":
        v = _vector(v)
        return cls(v / np.linalg.norm(v))

    @property
    def dim(self) -> int:
        return self.direction.size

    @property
    def angle(self) -> float:
        return math.atan2(self.direction[1], self.direction[0])

    @property
    def complex(self) -> complex:
        return complex(self.direction[0], self.direction[1])

    def __eq__(self, other):
        return isinstance(other, BoundaryPoint) and np.array_equal(
            self.direction, other.direction
        )

    def __hash__(self):
        return hash(self.direction.tobytes())


def _coords(z) -> np.ndarray:
    if isinstance(z, BallPoint):
        return z.coords
    c = _vector(z)
    if np.linalg.norm(c) >= 1.0 - BOUNDARY_EPS:
        raise GeometryError(f"point {c} is not inside the open ball")
    return c


# ---------------------------------------------------------------------------
# metric and hyperboloid helpers


def to_hyperboloid(x: np.ndarray) -> np.ndarray:
    """Map ball coordinates (last axis) to the hyperboloid model."""
    x = np.asarray(x, dtype=float)
    n2 = np.sum(x * x, axis=-1, keepdims=True)
    return np.concatenate([(1.0 + n2), 2.0 * x], axis=-1) / (1.0 - n2)


def from_hyperboloid(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[..., 1:] / (1.0 + X[..., :1])


def minkowski(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Lorentzian form ``-x0 y0 + x1 y1 + ...``."""
    return -X[..., 0] * Y[..., 0] + np.sum(X[..., 1:] * Y[..., 1:], axis=-1)


def distances(z: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Vectorised hyperbolic distance between coordinate arrays."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    num = np.sum((z - w) ** 2, axis=-1)
    den = (1.0 - np.sum(z * z, axis=-1)) * (1.0 - np.sum(w * w, axis=-1))
    return 2.0 * np.arcsinh(np.sqrt(num / den))


def distance(z, w) -> float:
    """Hyperbolic distance between two points of the ball.

    Uses ``sinh(d/2) = |z - w| / sqrt((1-|z|^2)(1-|w|^2))``, which is the
    cosine-form ``cosh d = 1 + 2|z-w|^2/((1-|z|^2)(1-|w|^2))`` rewritten to
    avoid cancellation for nearby points.
    """
    return float(distances(_coords(z), _coords(w)))


def distance_to_origin(z) -> float:
    r = np.linalg.norm(_coords(z))
    return 2.0 * math.atanh(r)


# ---------------------------------------------------------------------------
# isometries


def _stereo_to_plane(x: np.ndarray) -> complex:
    """Stereographic projection of the unit sphere from the north pole."""
    if abs(1.0 - x[2]) < 1e-300:
        return complex("inf")
    return complex(x[0], x[1]) / (1.0 - x[2])


def _plane_to_stereo(z: complex) -> np.ndarray:
    if not np.isfinite(z):
        return np.array([0.0, 0.0, 1.0])
    r2 = abs(z) ** 2
    return np.array([2 * z.real, 2 * z.imag, r2 - 1.0]) / (r2 + 1.0)


_NORTH = np.array([0.0, 0.0, 1.0])


def _ball_to_upper(x: np.ndarray) -> np.ndarray:
    """Isometry from the 3-ball to upper half-space.

    Inversion in the sphere about the north pole of radius sqrt(2) followed
    by reflection in the horizontal plane; on the boundary this is
    stereographic projection from the north pole.
    """
    y = _NORTH + 2.0 * (x - _NORTH) / np.sum((x - _NORTH) ** 2)
    y[2] = -y[2]
    return y


def _upper_to_ball(y: np.ndarray) -> np.ndarray:
    y = np.array(y, dtype=float)
    y[2] = -y[2]
    return _NORTH + 2.0 * (y - _NORTH) / np.sum((y - _NORTH) ** 2)


def _moebius(m: np.ndarray, z: complex) -> complex:
    a, b, c, d = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    if not np.isfinite(z):
        return a / c if c != 0 else complex("inf")
    den = c * z + d
    if den == 0:
        return complex("inf")
    return (a * z + b) / den


class Isometry:
    """Orientation-preserving isometry given by a unit-determinant matrix.

    Parameters
    ----------
    matrix : array_like, shape (2, 2)
        Complex matrix, rescaled to determinant 1. In dimension 2 it must
        preserve the unit disk, i.e. have the form ``[[a, b], [conj b, conj a]]``.
    dim : {2, 3}
        Dimension of the ball the isometry acts on.
    """

    def __init__(self, matrix, dim: int = 2, tol: float = TOL):
        m = np.array(matrix, dtype=complex).reshape(2, 2)
        det = np.linalg.det(m)
        if not np.isfinite(det) or abs(det) < 1e-300:
            raise GeometryError("degenerate matrix")
        scale = np.abs(m).max()
        su11_shaped = (abs(m[0, 0] - np.conj(m[1, 1])) <= tol * scale
                       and abs(m[0, 1] - np.conj(m[1, 0])) <= tol * scale)
        # the determinant of a long translation cancels badly; SU(1,1)-shaped
        # input is normalised through |a|^2 - |b|^2 below instead
        if not (dim == 2 and su11_shaped and det.real > 0):
            m = m / np.sqrt(det)
        if dim not in (2, 3):
            raise GeometryError(f"unsupported dimension {dim}")
        if dim == 2:
            scale = np.abs(m).max()
            if (
                abs(m[0, 0] - np.conj(m[1, 1])) > tol * scale
                or abs(m[0, 1] - np.conj(m[1, 0])) > tol * scale
            ):
                # a disk-preserving matrix may come out as i*SU(1,1) after
                # the square root of the determinant; undo that phase
                m = m * 1j
                if (
                    abs(m[0, 0] - np.conj(m[1, 1])) > tol * scale
                    or abs(m[0, 1] - np.conj(m[1, 0])) > tol * scale
                ):
                    raise GeometryError("matrix does not preserve the unit disk")
            a = 0.5 * (m[0, 0] + np.conj(m[1, 1]))
            b = 0.5 * (m[0, 1] + np.conj(m[1, 0]))
            n2 = abs(a) ** 2 - abs(b) ** 2
            # already unimodular up to cancellation in n2: rescaling would add error
            if abs(n2 - 1.0) > 1e-12 * max(1.0, abs(a) ** 2):
                n = math.sqrt(n2)
                a, b = a / n, b / n
            m = np.array([[a, b], [np.conj(b), np.conj(a)]])
        m.flags.writeable = False
        self.matrix = m
        self.dim = dim
        self.tol = tol

    # constructors -----------------------------------------------------------

    @classmethod
    def identity(cls, dim: int = 2) -> "Isometry":
        return cls(np.eye(2), dim)

    @classmethod
    def from_su11(cls, a: complex, b: complex) -> "Isometry":
        return cls([[a, b], [np.conj(b), np.conj(a)]], 2)

    @classmethod
    def rotation(cls, angle: float, dim: int = 2) -> "Isometry":
        """Rotation by ``angle`` about the origin (about the vertical axis in 3D)."""
        h = 0.5 * angle
        return cls([[np.exp(1j * h), 0], [0, np.exp(-1j * h)]], dim)

    @classmethod
    def translation(cls, length: float, direction=0.0, dim: int = 2) -> "Isometry":
        """Translation by ``length`` along the diameter through ``direction``.

        The origin is moved towards the boundary point ``direction``.
        """
        if np.ndim(direction) == 0 and dim == 2:
            u = BoundaryPoint.from_angle(float(direction))
        else:
            u = BoundaryPoint.normalized(direction)
        return cls.from_fixed_points(BoundaryPoint(-u.direction), u, length)

    @classmethod
    def from_fixed_points(
        cls, repelling: BoundaryPoint, attracting: BoundaryPoint, length: float
    ) -> "Isometry":
        """Loxodromic translation by ``length`` from ``repelling`` to ``attracting``."""
        dim = repelling.dim
        if attracting.dim != dim:
            raise GeometryError("fixed points of different dimensions")
        if length <= 0:
            raise GeometryError("translation length must be positive")
        if dim == 2:
            zm, zp = repelling.complex, attracting.complex
        else:
            zm, zp = _stereo_to_plane(repelling.direction), _stereo_to_plane(attracting.direction)
        if np.linalg.norm(repelling.direction - attracting.direction) < 1e-12:
            raise GeometryError("fixed points coincide")
        if not np.isfinite(zp):
            P = np.array([[1, zm], [0, 1]], dtype=complex)
        elif not np.isfinite(zm):
            P = np.array([[zp, 1], [1, 0]], dtype=complex)
        else:
            P = np.array([[zp, zm], [1, 1]], dtype=complex)
        D = np.diag([math.exp(length / 2), math.exp(-length / 2)]).astype(complex)
        return cls(P @ D @ np.linalg.inv(P), dim)

    # group operations -------------------------------------------------------

    def __matmul__(self, other: "Isometry") -> "Isometry":
        if self.dim != other.dim:
            raise GeometryError("dimension mismatch")
        return Isometry(self.matrix @ other.matrix, self.dim, self.tol)

    def inverse(self) -> "Isometry":
        a, b, c, d = self.matrix.ravel()
        return Isometry([[d, -b], [-c, a]], self.dim, self.tol)

    def power(self, k: int) -> "Isometry":
        if k < 0:
            return self.inverse().power(-k)
        return Isometry(np.linalg.matrix_power(self.matrix, k), self.dim, self.tol)

    def __call__(self, z):
        return apply(self, z)

    @property
    def trace(self) -> complex:
        return complex(self.matrix[0, 0] + self.matrix[1, 1])

    @cached_property
    def kind(self) -> Kind:
        return classify(self)

    def boundary_apply(self, xi: BoundaryPoint) -> BoundaryPoint:
        if self.dim == 2:
            w = _moebius(self.matrix, xi.complex)
            return BoundaryPoint.normalized([w.real, w.imag])
        w = _moebius(self.matrix, _stereo_to_plane(xi.direction))
        return BoundaryPoint.normalized(_plane_to_stereo(w))

    def __repr__(self):
        return f"Isometry(dim={self.dim}, matrix={self.matrix.tolist()})"


def apply(g: Isometry, z):
    """Image of a ball point under ``g``."""
    x = _coords(z)
    if x.size != g.dim:
        raise GeometryError("dimension mismatch between isometry and point")
    m = g.matrix
    if g.dim == 2:
        w = _moebius(m, complex(x[0], x[1]))
        out = np.array([w.real, w.imag])
    else:
        y = _ball_to_upper(x)
        zc, t = complex(y[0], y[1]), y[2]
        a, b, c, d = m.ravel()
        den = abs(c * zc + d) ** 2 + abs(c) ** 2 * t * t
        num = (a * zc + b) * np.conj(c * zc + d) + a * np.conj(c) * t * t
        out = _upper_to_ball(np.array([num.real / den, num.imag / den, t / den]))
    r = np.linalg.norm(out)
    if r >= 1.0:
        out = out * ((1.0 - 1e-16) / r)
    return BallPoint(out, eps=0.0)


def classify(g: Isometry) -> Kind:
    """Classify ``g`` from its trace.

    Raises :class:`IndeterminateError` when ``|tr^2 - 4|`` is within the
    tolerance of the parabolic threshold.
    """
    m = g.matrix
    tol = g.tol
    if np.allclose(m, np.eye(2), atol=tol) or np.allclose(m, -np.eye(2), atol=tol):
        return Kind.IDENTITY
    tr = g.trace
    disc = tr * tr - 4.0
    if abs(disc) <= tol * max(1.0, abs(tr) ** 2):
        raise IndeterminateError(f"trace {tr} is numerically parabolic")
    if abs(tr.imag) <= tol * max(1.0, abs(tr)) and abs(tr.real) < 2.0:
        return Kind.ELLIPTIC
    return Kind.LOXODROMIC


def _require_loxodromic(g: Isometry):
    if g.kind is not Kind.LOXODROMIC:
        raise GeometryError(f"isometry is {g.kind.value}, not loxodromic")


def translation_length(g: Isometry) -> float:
    _require_loxodromic(g)
    half = g.trace / 2.0
    root = np.sqrt(half * half - 1.0)
    lam = max(abs(half + root), abs(half - root))
    return 2.0 * math.log(lam)


def fixed_points(g: Isometry) -> tuple[BoundaryPoint, BoundaryPoint]:
    """Repelling and attracting fixed points ``(eta_minus, eta_plus)``."""
    _require_loxodromic(g)
    a, b, c, d = g.matrix.ravel()
    if abs(c) < 1e-14 * np.abs(g.matrix).max():
        # one fixed point at infinity (3D only)
        roots = [complex("inf"), b / (d - a)]
    else:
        disc = np.sqrt((d - a) ** 2 + 4 * b * c)
        roots = [(a - d - disc) / (2 * c), (a - d + disc) / (2 * c)]
    pts = []
    for z in roots:
        if np.isfinite(z):
            deriv = abs(c * z + d) ** -2
        else:
            # multiplier at infinity of z -> (a z + b)/d
            deriv = abs(d / a)
        pts.append((deriv, z))
    pts.sort(key=lambda p: p[0])  # attracting fixed point has |g'| < 1
    attr, rep = pts[0][1], pts[1][1]
    if g.dim == 2:
        return (
            BoundaryPoint.normalized([rep.real, rep.imag]),
            BoundaryPoint.normalized([attr.real, attr.imag]),
        )
    return (
        BoundaryPoint.normalized(_plane_to_stereo(rep)),
        BoundaryPoint.normalized(_plane_to_stereo(attr)),
    )


def axis(g: Isometry) -> "Geodesic":
    eta_minus, eta_plus = fixed_points(g)
    return Geodesic(eta_minus, eta_plus)


# ---------------------------------------------------------------------------
# geodesics


@dataclass(frozen=True, eq=False)
class Geodesic:
    """Complete geodesic, oriented from ``start`` to ``end``."""

    start: BoundaryPoint
    end: BoundaryPoint

    def __post_init__(self):
        if self.start.dim != self.end.dim:
            raise GeometryError("endpoints of different dimensions")
        if np.linalg.norm(self.start.direction - self.end.direction) < 1e-12:
            raise GeometryError("geodesic endpoints coincide")

    @property
    def endpoints(self) -> tuple[BoundaryPoint, BoundaryPoint]:
        return self.start, self.end

    @property
    def half_angle(self) -> float:
        """Half the angle ``beta`` subtended by the endpoints at the origin."""
        c = float(np.clip(self.start.direction @ self.end.direction, -1.0, 1.0))
        return 0.5 * math.acos(c)

    @cached_property
    def _frame(self):
        u, v = self.start.direction, self.end.direction
        s = u + v
        ns = np.linalg.norm(s)
        if ns < 1e-12:
            # through the origin: summit is 0, tangent points towards end
            S = np.zeros(u.size + 1)
            S[0] = 1.0
            U = np.concatenate([[0.0], v])
            return S, U
        e1 = s / ns
        e2 = v - (v @ e1) * e1
        e2 = e2 / np.linalg.norm(e2)
        d0 = math.acosh(1.0 / math.sin(self.half_angle))
        S = np.concatenate([[math.cosh(d0)], math.sinh(d0) * e1])
        U = np.concatenate([[0.0], e2])
        return S, U

    @cached_property
    def summit(self) -> BallPoint:
        return summit(self)

    def point_at(self, t) -> np.ndarray:
        """Ball coordinates of the point at signed arclength ``t`` from the summit.

        Positive ``t`` moves towards ``end``. Accepts arrays.
        """
        S, U = self._frame
        t = np.asarray(t, dtype=float)[..., None]
        X = np.cosh(t) * S + np.sinh(t) * U
        return from_hyperboloid(X)

    def normal(self) -> np.ndarray:
        """Spacelike unit normal (2D) pointing away from the origin side."""
        if self.start.dim != 2:
            raise GeometryError("normals are only provided in dimension 2")
        S, U = self._frame
        # n is orthogonal to S and U in the Lorentzian form
        n = np.array([
            S[1] * U[2] - S[2] * U[1],
            S[0] * U[2] - S[2] * U[0],
            -(S[0] * U[1] - S[1] * U[0]),
        ])
        n = n / math.sqrt(minkowski(n, n))
        origin = np.array([1.0, 0.0, 0.0])
        if minkowski(origin, n) > 0:
            n = -n
        return n


def summit(A: Geodesic) -> BallPoint:
    """Point of ``A`` closest to the origin (the origin for diameters)."""
    S, _ = A._frame
    return BallPoint(from_hyperboloid(S))


def summit_ray_gap(A: Geodesic, endpoint: int = 1) -> float:
    """Distance from the summit of ``A`` to the radial segment towards an endpoint.

    The endpoints subtend an angle ``2*beta`` at the origin and the summit
    lies at distance ``d0`` with ``cosh d0 = 1/sin(beta)``. The summit
    ray makes angle ``beta`` with the radial ray towards either endpoint,
    and the hyperbolic right triangle gives
    ``sinh(gap) = sinh(d0) sin(beta) = cos(beta)``. In particular the gap
    is always below ``asinh(1) = TAU``.
    """
    beta = A.half_angle
    if beta >= 0.5 * math.pi - 1e-15:
        return 0.0
    return math.asinh(math.cos(beta))


# ---------------------------------------------------------------------------
# shadows


def euclidean_ball(w, r: float) -> tuple[np.ndarray, float]:
    """Euclidean center and radius of the hyperbolic ball ``B(w, r)``."""
    x = _coords(w)
    rho = np.linalg.norm(x)
    if rho == 0:
        return np.zeros_like(x), math.tanh(r / 2)
    D = 2.0 * math.atanh(rho)
    u = x / rho
    lo, hi = math.tanh((D - r) / 2.0), math.tanh((D + r) / 2.0)
    return 0.5 * (lo + hi) * u, 0.5 * (hi - lo)


@dataclass(frozen=True, eq=False)
class SphericalCap:
    """Boundary cap: all directions within ``half_width`` of ``center``."""

    center: BoundaryPoint
    half_width: float

    def __post_init__(self):
        if not (0.0 < self.half_width <= math.pi):
            raise GeometryError(f"half-width {self.half_width} outside (0, pi]")

    @property
    def diameter(self) -> float:
        return 2.0 * self.half_width

    def angle_to(self, xi) -> float:
        u = xi.direction if isinstance(xi, BoundaryPoint) else xi.center.direction
        c = float(np.clip(self.center.direction @ u, -1.0, 1.0))
        return math.acos(c)

    def contains_point(self, xi: BoundaryPoint, tol: float = 0.0) -> bool:
        return self.angle_to(xi) <= self.half_width + tol

    def contains(self, other: "SphericalCap", tol: float = 0.0) -> bool:
        if self.half_width >= math.pi:
            return True
        return self.angle_to(other) + other.half_width <= self.half_width + tol

    def disjoint(self, other: "SphericalCap", tol: float = 0.0) -> bool:
        return self.angle_to(other) >= self.half_width + other.half_width - tol


def shadow(w, r: float) -> SphericalCap:
    """Radial projection from 0 of the hyperbolic ball ``B(w, r)``.

    The cap has half-width ``arcsin(rho_E / |c_E|)`` for the Euclidean
    center ``c_E`` and radius ``rho_E`` of the ball, which in hyperbolic
    terms is ``arcsin(sinh r / sinh d(0, w))``.
    """
    if r <= 0:
        raise GeometryError("radius must be positive")
    x = _coords(w)
    D = 2.0 * math.atanh(np.linalg.norm(x))
    if D <= r:
        raise GeometryError("full-sphere shadow: the ball contains the origin")
    c, rho = euclidean_ball(x, r)
    half = math.asin(min(1.0, rho / np.linalg.norm(c)))
    return SphericalCap(BoundaryPoint.normalized(x), half)


def shadow_half_width(D, r: float):
    """Half-width ``arcsin(sinh r / sinh D)`` of the shadow of a ball at distance ``D``."""
    D = np.asarray(D, dtype=float)
    return np.arcsin(math.sinh(r) / np.sinh(D))


def shadow_comparability(r: float, distances_: Sequence[float]) -> tuple[float, float, float]:
    """Ratio ``diam(shadow) / (e^r e^{-D})`` over the given distances.

    Returns ``(min, max, c)`` where ``c = max(max, 1/min)`` is the
    comparability constant for ``diam ~ e^r e^{-D}``.
    """
    D = np.asarray(distances_, dtype=float)
    ratio = 2.0 * shadow_half_width(D, r) / (math.exp(r) * np.exp(-D))
    lo, hi = float(ratio.min()), float(ratio.max())
    return lo, hi, max(hi, 1.0 / lo)


# ---------------------------------------------------------------------------
# triangles and quasi-geodesics


def pythagoras_defect(alpha0: float) -> float:
    """Constant ``K`` with ``b + c - K <= a <= b + c`` for angle ``>= alpha0`` opposite ``a``.

    From the cosine rule
    ``cosh a = cosh b cosh c - sinh b sinh c cos(alpha)`` and
    ``cosh b cosh c - sinh b sinh c cos(alpha) >= e^{b+c} (1 - cos alpha) / 4``
    one gets ``a >= b + c + log((1 - cos alpha0)/2) = b + c + 2 log sin(alpha0/2)``.
    The constant is sharp as ``b, c -> infinity``.
    """
    if not (0.0 < alpha0 < math.pi):
        raise GeometryError("alpha0 must lie in (0, pi)")
    return -2.0 * math.log(math.sin(alpha0 / 2.0))


@dataclass(frozen=True)
class TriangleCheck:
    alpha0: float
    K: float
    samples: int
    lower_violations: int
    upper_violations: int
    min_lower_slack: float
    worst: tuple | None

    @property
    def passed(self) -> bool:
        return self.lower_violations == 0 and self.upper_violations == 0


def check_pythagoras(
    alpha0: float,
    samples: int,
    rng: np.random.Generator,
    max_side: float = 10.0,
    K: float | None = None,
    tol: float = TOL,
) -> TriangleCheck:
    """Verify the two-sided bound on random triangles built in the disk.

    The vertex carrying the angle is placed at the origin, the other two
    at hyperbolic distances ``b`` and ``c`` along directions ``alpha``
    apart, with ``alpha`` uniform in ``[alpha0, pi]``. The opposite side
    is measured with :func:`distance`.
    """
    if samples <= 0:
        raise ValueError("sample size must be positive")
    K = pythagoras_defect(alpha0) if K is None else K
    b = rng.uniform(0.05, max_side, samples)
    c = rng.uniform(0.05, max_side, samples)
    alpha = rng.uniform(alpha0, math.pi, samples)
    B = np.stack([np.tanh(c / 2), np.zeros(samples)], axis=-1)
    C = np.stack([np.tanh(b / 2) * np.cos(alpha), np.tanh(b / 2) * np.sin(alpha)], axis=-1)
    a = distances(B, C)
    lower = a - (b + c - K)
    upper = (b + c) - a
    lo_bad = lower < -tol * np.maximum(1.0, a)
    up_bad = upper < -tol * np.maximum(1.0, a)
    i = int(np.argmin(lower))
    worst = (float(b[i]), float(c[i]), float(alpha[i]), float(a[i]))
    return TriangleCheck(
        alpha0, K, samples, int(lo_bad.sum()), int(up_bad.sum()), float(lower.min()), worst
    )


class PathError(GeometryError):
    """Raised when a path violates the quasi-geodesic invariants."""


@dataclass(frozen=True, eq=False)
class QuasiGeodesicPath:
    """Piecewise geodesic path with edge lengths and bend angles bounded below."""

    vertices: tuple
    min_edge_length: float
    min_angle: float

    def __post_init__(self):
        verts = tuple(v if isinstance(v, BallPoint) else BallPoint(v) for v in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 2:
            raise PathError("a path needs at least two vertices")
        if self.min_edge_length <= 0:
            raise PathError("min_edge_length must be positive")
        if not (0.0 < self.min_angle < math.pi):
            raise PathError("min_angle must lie in (0, pi)")
        for i, L in enumerate(self.edge_lengths()):
            if L < self.min_edge_length * (1 - TOL):
                raise PathError(
                    f"edge {i} has length {L:.6g} < {self.min_edge_length:.6g}"
                )
        for i, ang in enumerate(self.angles(), start=1):
            if ang < self.min_angle * (1 - TOL):
                raise PathError(f"angle at vertex {i} is {ang:.6g} < {self.min_angle:.6g}")

    def edge_lengths(self) -> list[float]:
        return [distance(u, v) for u, v in zip(self.vertices, self.vertices[1:])]

    def angles(self) -> list[float]:
        """Interior angles at the inner vertices."""
        X = np.array([v.hyperboloid() for v in self.vertices])
        out = []
        for i in range(1, len(X) - 1):
            out.append(_vertex_angle(X[i], X[i - 1], X[i + 1]))
        return out


def _tangent(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Unit tangent at ``X`` of the geodesic towards ``Y`` (hyperboloid)."""
    V = Y + minkowski(X, Y) * X
    return V / math.sqrt(max(minkowski(V, V), 1e-300))


def _vertex_angle(X, P, Q) -> float:
    u, v = _tangent(X, P), _tangent(X, Q)
    return math.acos(float(np.clip(minkowski(u, v), -1.0, 1.0)))


def ray_endpoint(w0, w1) -> BoundaryPoint:
    """Endpoint of the geodesic ray from ``w0`` through ``w1``."""
    X0, X1 = to_hyperboloid(_coords(w0)), to_hyperboloid(_coords(w1))
    N = X0 + _tangent(X0, X1)
    return BoundaryPoint.normalized(N[1:] / N[0])


def distance_to_ray(w0, xi: BoundaryPoint, points: np.ndarray) -> np.ndarray:
    """Distance from each point to the geodesic ray from ``w0`` towards ``xi``."""
    X0 = to_hyperboloid(_coords(w0))
    N = np.concatenate([[1.0], xi.direction])
    U = -N / minkowski(N, X0) - X0  # unit tangent at X0 towards xi
    P = to_hyperboloid(np.atleast_2d(points))
    p0 = -minkowski(P, X0)
    p1 = minkowski(P, U)
    # foot on the full geodesic at parameter t = atanh(p1/p0); clip to t >= 0
    on_ray = p1 > 0
    full = np.arccosh(np.maximum(1.0, np.sqrt(np.maximum(p0**2 - p1**2, 1.0))))
    to_start = np.arccosh(np.maximum(1.0, p0))
    return np.where(on_ray, full, to_start)


@dataclass(frozen=True)
class QuasiGeodesicLimit:
    point: BoundaryPoint
    max_deviation: float
    deviations: tuple


def quasi_geodesic_limit(path: QuasiGeodesicPath) -> QuasiGeodesicLimit:
    """Boundary point approached by a quasi-geodesic path.

    The limit is estimated as the endpoint of the ray from the first to
    the deepest vertex; the report includes the distance from every vertex
    to that ray.
    """
    verts = path.vertices
    xi = ray_endpoint(verts[0], verts[-1])
    pts = np.array([v.coords for v in verts])
    dev = distance_to_ray(verts[0], xi, pts)
    return QuasiGeodesicLimit(xi, float(dev.max()), tuple(float(d) for d in dev))


def geodesic_rows(geodesics: Iterable[Geodesic]) -> list[dict]:
    """Rows for CSV export of geodesics."""
    rows = []
    for A in geodesics:
        s = A.summit.coords
        row = {}
        for name, v in (("start", A.start.direction), ("end", A.end.direction), ("summit", s)):
            for k, x in enumerate(v):
                row[f"{name}_{k}"] = float(x)
        rows.append(row)
    return rows


def cap_rows(caps: Iterable[SphericalCap]) -> list[dict]:
    rows = []
    for cap in caps:
        row = {f"dir_{k}": float(x) for k, x in enumerate(cap.center.direction)}
        row["half_width"] = float(cap.half_width)
        rows.append(row)
    return rows
