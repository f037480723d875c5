"""Schottky groups, free-group words, orbit enumeration and Poincaré series.

Letters are small integers: generator ``i`` is letter ``2*i`` and its
inverse is ``2*i + 1``, printed as ``a, A, b, B, ...``. Group elements of
the disk are stored as the pair ``(a, b)`` of the ``SU(1,1)`` matrix
``[[a, b], [conj b, conj a]]``; then ``g(0) = b / conj(a)`` and the
displacement ``d(0, g(0))`` is ``2 asinh|b|``.

The normal subgroup ``H`` is the kernel of the homomorphism ``phi`` to the
integers given by weighted exponent sums (by default the exponent sum of
the designated generator ``gamma = a``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Iterator, Sequence

import numpy as np

from .hypgeo import (
    BallPoint,
    BoundaryPoint,
    GeometryError,
    Isometry,
    Kind,
    TOL,
    distances,
    translation_length,
)


class PingPongError(GeometryError):
    """Raised when the Schottky disks of a generating set overlap."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class BudgetExceeded(RuntimeError):
    """Raised when an enumeration creates more nodes than its budget allows."""

    def __init__(self, message, partial_count: int):
        super().__init__(f"{message} (partial count {partial_count})")
        self.partial_count = partial_count


class WindowError(ValueError):
    """Raised when the counting window is too short for a fit."""


# ---------------------------------------------------------------------------
# letters and words


def inverse_letter(x: int) -> int:
    return x ^ 1


def letter_name(x: int) -> str:
    ch = chr(ord("a") + x // 2)
    return ch.upper() if x & 1 else ch


def word_string(letters: Sequence[int]) -> str:
    return "".join(letter_name(x) for x in letters) or "1"


def parse_word(text: str) -> tuple[int, ...]:
    """Parse ``"abAB"`` (or ``"1"`` for the identity) into letters.

    Exponents are not supported; write ``aa`` for ``a^2``.
    """
    if text in ("", "1", "e"):
        return ()
    out = []
    for ch in text:
        if not ch.isalpha():
            raise ValueError(f"bad letter {ch!r} in word {text!r}")
        k = ord(ch.lower()) - ord("a")
        out.append(2 * k + (1 if ch.isupper() else 0))
    return tuple(out)


def reduce_letters(letters: Iterable[int]) -> tuple[int, ...]:
    stack: list[int] = []
    for x in letters:
        if stack and stack[-1] == x ^ 1:
            stack.pop()
        else:
            stack.append(x)
    return tuple(stack)


def is_reduced(letters: Sequence[int]) -> bool:
    return all(letters[i] != letters[i + 1] ^ 1 for i in range(len(letters) - 1))


@dataclass(frozen=True)
class Word:
    """Freely reduced word with its coset label and displacement ``d(0, w(0))``."""

    letters: tuple[int, ...]
    coset_label: int
    displacement: float

    def __post_init__(self):
        if not is_reduced(self.letters):
            raise ValueError(f"word {word_string(self.letters)} is not freely reduced")

    def __len__(self):
        return len(self.letters)

    def __str__(self):
        return word_string(self.letters)


@dataclass(frozen=True)
class OrbitPoint:
    """Image of a basepoint ``z_n`` under a word."""

    word: Word
    image: BallPoint
    basepoint_tag: int


# ---------------------------------------------------------------------------
# SU(1,1) arithmetic on (a, b) pairs


def su_mul(a1, b1, a2, b2):
    """Product of ``(a1, b1)`` and ``(a2, b2)``; broadcasts over arrays."""
    return a1 * a2 + b1 * np.conj(b2), a1 * b2 + b1 * np.conj(a2)


def su_inv(a, b):
    return np.conj(a), -b


def su_apply(a, b, z):
    return (a * z + b) / (np.conj(b) * z + np.conj(a))


def su_displacement(b):
    return 2.0 * np.arcsinh(np.abs(b))


# ---------------------------------------------------------------------------
# groups


class SchottkyGroup:
    """Free Schottky group of the disk with a designated generator ``gamma``.

    Parameters
    ----------
    generators : sequence of Isometry
        Loxodromic generators of the disk. The first one is ``gamma``.
    labels : sequence of int, optional
        Values of ``phi`` on the generators; defaults to ``(1, 0, ..., 0)``.

    Each letter ``x`` has a target disk ``D_x`` (inside the isometric
    circle of ``x^{-1}``) such that ``x`` maps the complement of
    ``D_{x^{-1}}`` into ``D_x``. The constructor checks that all these
    disks are pairwise disjoint.
    """

    def __init__(self, generators: Sequence[Isometry], labels: Sequence[int] | None = None):
        gens = list(generators)
        if len(gens) < 2:
            raise GeometryError("a non-elementary Schottky group needs rank >= 2")
        for i, g in enumerate(gens):
            if g.dim != 2:
                raise GeometryError("Schottky groups are supported in dimension 2 only")
            if g.kind is not Kind.LOXODROMIC:
                raise GeometryError(f"generator {letter_name(2 * i)} is {g.kind.value}")
        self.generators = tuple(gens)
        self.rank = len(gens)
        if labels is None:
            labels = (1,) + (0,) * (self.rank - 1)
        if len(labels) != self.rank:
            raise ValueError("one label per generator is required")
        self.labels = tuple(int(x) for x in labels)
        if self.labels[0] == 0:
            raise ValueError("the designated generator must have nonzero label")

        la = []
        lb = []
        for g in gens:
            a, b = g.matrix[0, 0], g.matrix[0, 1]
            la += [a, np.conj(a)]
            lb += [b, -b]
        self.letter_a = np.array(la, dtype=complex)
        self.letter_b = np.array(lb, dtype=complex)
        self.letter_label = np.array(
            [s * lab for lab in self.labels for s in (1, -1)], dtype=np.int64
        )
        # target disk of letter x: center a/conj(b), radius 1/|b|
        self.disk_center = self.letter_a / np.conj(self.letter_b)
        self.disk_radius = 1.0 / np.abs(self.letter_b)
        self.disk_angle = np.angle(self.disk_center)
        self.disk_half_angle = np.arccos(np.abs(self.letter_b) / np.abs(self.letter_a))
        # spacelike unit normals (hyperboloid), positive inside the disk
        self.disk_normal = np.stack(
            [np.ones(2 * self.rank), self.disk_center.real, self.disk_center.imag], axis=-1
        ) / self.disk_radius[:, None]
        self._check_ping_pong()

        n = self.disk_normal
        gram = -np.outer(n[:, 0], n[:, 0]) + n[:, 1:] @ n[:, 1:].T
        off = ~np.eye(2 * self.rank, dtype=bool)
        #: minimal distance between distinct disks: displacement gain per letter
        self.min_gain = float(np.arccosh(-gram[off]).min())
        #: minimal distance from the origin to a disk
        self.origin_clearance = float(np.arcsinh(1.0 / self.disk_radius).min())

    # construction checks ------------------------------------------------------

    def _check_ping_pong(self):
        k = 2 * self.rank
        for i in range(k):
            for j in range(i + 1, k):
                gap = abs(math.remainder(self.disk_angle[i] - self.disk_angle[j], 2 * math.pi))
                if gap <= self.disk_half_angle[i] + self.disk_half_angle[j]:
                    raise PingPongError(
                        f"Schottky disks of {letter_name(i)} and {letter_name(j)} overlap",
                        pair=(letter_name(i), letter_name(j)),
                    )

    # basic data ----------------------------------------------------------------

    @property
    def gamma(self) -> Isometry:
        return self.generators[0]

    @property
    def translation_length(self) -> float:
        """``d(0, gamma(0))``; equals the translation length since 0 is on the axis."""
        return float(su_displacement(self.letter_b[0]))

    @property
    def dim(self) -> int:
        return 2

    def names(self) -> list[str]:
        return [letter_name(x) for x in range(2 * self.rank)]

    def element(self, letters: Sequence[int]) -> tuple[complex, complex]:
        a, b = 1.0 + 0j, 0j
        for x in letters:
            a, b = su_mul(a, b, self.letter_a[x], self.letter_b[x])
        return complex(a), complex(b)

    def isometry(self, letters: Sequence[int]) -> Isometry:
        a, b = self.element(letters)
        return Isometry.from_su11(a, b)

    def label(self, letters: Sequence[int]) -> int:
        return int(sum(self.letter_label[x] for x in letters))

    def word(self, letters: Sequence[int] | str) -> Word:
        if isinstance(letters, str):
            letters = parse_word(letters)
        red = reduce_letters(letters)
        a, b = self.element(red)
        return Word(red, self.label(red), float(su_displacement(b)))

    def multiply(self, w1: Word, w2: Word) -> Word:
        return self.word(w1.letters + w2.letters)

    def inverse(self, w: Word) -> Word:
        return self.word(tuple(x ^ 1 for x in reversed(w.letters)))

    def gamma_power(self, n: int) -> tuple[complex, complex]:
        letter = 0 if n >= 0 else 1
        return self.element((letter,) * abs(n))

    def basepoint(self, n: int) -> BallPoint:
        """``z_n = gamma^n(0)``."""
        a, b = self.gamma_power(n)
        return BallPoint.from_complex(b / np.conj(a))

    def orbit_point(self, w: Word, n: int = 0) -> OrbitPoint:
        a, b = self.element(w.letters)
        z = self.basepoint(n).complex
        return OrbitPoint(w, BallPoint.from_complex(complex(su_apply(a, b, z))), n)

    def certified_length(self, t: float) -> int:
        """Word length ``L`` such that every word with displacement ``<= t`` has length ``<= L``.

        Along a reduced word of length ``L`` the geodesic from 0 crosses
        ``L`` nested disk boundaries, gaining at least ``origin_clearance``
        at both ends and ``min_gain`` between consecutive crossings.
        """
        if t < 2 * self.origin_clearance:
            return 0
        return int(math.floor((t - 2 * self.origin_clearance) / self.min_gain)) + 1

    def certified_displacement(self, L: int) -> float:
        """Largest ``t`` such that length ``<= L`` covers all displacements ``<= t``."""
        return 2 * self.origin_clearance + L * self.min_gain

    def describe(self) -> dict:
        return {
            "rank": self.rank,
            "labels": list(self.labels),
            "generators": [
                {"a": [float(a.real), float(a.imag)], "b": [float(b.real), float(b.imag)]}
                for a, b in zip(self.letter_a[::2], self.letter_b[::2])
            ],
            "translation_lengths": [translation_length(g) for g in self.generators],
            "min_gain": self.min_gain,
            "origin_clearance": self.origin_clearance,
        }


@dataclass(frozen=True)
class GeneratorSpec:
    """Generator given by its axis endpoints (angles, repelling then attracting) and length."""

    endpoints: tuple[float, float]
    length: float


def build_schottky(spec: Sequence, labels: Sequence[int] | None = None) -> SchottkyGroup:
    """Build a verified Schottky group from axis endpoints and translation lengths.

    ``spec`` is a list of :class:`GeneratorSpec` or ``((theta_minus, theta_plus), length)``
    pairs. The whole configuration is conjugated so that the origin lies
    on the axis of the first generator, which becomes ``gamma``.
    """
    gens = []
    for item in spec:
        if isinstance(item, GeneratorSpec):
            ends, length = item.endpoints, item.length
        elif isinstance(item, dict):
            ends, length = item["endpoints"], item["length"]
        else:
            ends, length = item
        pts = [e if isinstance(e, BoundaryPoint) else BoundaryPoint.from_angle(float(e)) for e in ends]
        gens.append(Isometry.from_fixed_points(pts[0], pts[1], float(length)))
    if not gens:
        raise GeometryError("empty generator list")
    from .hypgeo import axis

    s = axis(gens[0]).summit.complex
    if abs(s) > 1e-15:
        T = Isometry([[1, -s], [-np.conj(s), 1]])  # moves the summit to 0
        Ti = T.inverse()
        gens = [T @ g @ Ti for g in gens]
    return SchottkyGroup(gens, labels)


def _preset_table() -> dict:
    text = resources.files("kleincantor").joinpath("presets.json").read_text()
    return json.loads(text)


def preset_names() -> list[str]:
    return sorted(_preset_table())


def preset_spec(name: str) -> dict:
    table = _preset_table()
    if name not in table:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(sorted(table))}")
    return table[name]


def group_from_spec(spec: dict) -> SchottkyGroup:
    gens = [GeneratorSpec(tuple(g["endpoints"]), float(g["length"])) for g in spec["generators"]]
    return build_schottky(gens, spec.get("labels"))


def load_preset(name: str) -> SchottkyGroup:
    return group_from_spec(preset_spec(name))


# ---------------------------------------------------------------------------
# orbit tables


@dataclass(eq=False)
class OrbitTable:
    """Enumerated group elements stored as a prefix tree.

    Every node is a reduced word whose parent is the word with its last
    letter removed (node 0 is the identity). ``index`` selects the nodes
    that belong to the table; iterating yields :class:`Word` objects in
    enumeration order.

    ``complete_to`` is the displacement up to which the selection provably
    contains every element of the enumerated set (``None`` if unknown).
    """

    group: SchottkyGroup
    parent: np.ndarray
    last: np.ndarray
    length: np.ndarray
    a: np.ndarray
    b: np.ndarray
    label: np.ndarray
    index: np.ndarray
    complete_to: float | None = None
    description: str = ""

    @property
    def displacement(self) -> np.ndarray:
        return su_displacement(self.b[self.index])

    @property
    def labels(self) -> np.ndarray:
        return self.label[self.index]

    @property
    def elements(self) -> tuple[np.ndarray, np.ndarray]:
        return self.a[self.index], self.b[self.index]

    def __len__(self):
        return int(self.index.size)

    def letters(self, i: int | None = None):
        """Letters of the ``i``-th selected word, or of all selected words."""
        if i is not None:
            node = int(self.index[i])
            out = []
            while node != 0:
                out.append(int(self.last[node]))
                node = int(self.parent[node])
            return tuple(reversed(out))
        nodes = self.index.copy()
        L = self.length[nodes]
        maxlen = int(L.max()) if L.size else 0
        mat = np.full((nodes.size, maxlen), -1, dtype=np.int8)
        pos = L - 1
        cur = nodes
        for _ in range(maxlen):
            live = pos >= 0
            mat[np.nonzero(live)[0], pos[live]] = self.last[cur[live]]
            cur = np.where(live, self.parent[cur], cur)
            pos = pos - 1
        return [tuple(int(x) for x in row[: l]) for row, l in zip(mat, L)]

    def __iter__(self) -> Iterator[Word]:
        disp = self.displacement
        for k, letters in enumerate(self.letters()):
            yield Word(letters, int(self.label[self.index[k]]), float(disp[k]))

    def select(self, mask: np.ndarray, description: str | None = None) -> "OrbitTable":
        return OrbitTable(
            self.group, self.parent, self.last, self.length, self.a, self.b, self.label,
            self.index[mask], self.complete_to, description or self.description,
        )

    def within(self, t: float) -> "OrbitTable":
        return self.select(self.displacement <= t)

    @classmethod
    def from_words(
        cls, group: SchottkyGroup, words: Iterable[Sequence[int]], complete_to=None, description=""
    ) -> "OrbitTable":
        """Build a table from explicit (reduced) letter sequences."""
        nodes = {(): 0}
        parent, last, length, A, B, lab = [0], [-1], [0], [1.0 + 0j], [0j], [0]
        index = []
        for w in words:
            w = reduce_letters(w)
            for k in range(1, len(w) + 1):
                pre = w[:k]
                if pre not in nodes:
                    p = nodes[pre[:-1]]
                    x = pre[-1]
                    a, b = su_mul(A[p], B[p], group.letter_a[x], group.letter_b[x])
                    nodes[pre] = len(parent)
                    parent.append(p)
                    last.append(x)
                    length.append(k)
                    A.append(complex(a))
                    B.append(complex(b))
                    lab.append(lab[p] + int(group.letter_label[x]))
            index.append(nodes[w])
        return cls(
            group, np.array(parent), np.array(last, dtype=np.int8), np.array(length),
            np.array(A), np.array(B), np.array(lab, dtype=np.int64), np.array(index, dtype=np.int64),
            complete_to, description,
        )


def enumerate_words(
    G: SchottkyGroup,
    max_length: int | None = None,
    max_displacement: float | None = None,
    budget: int = 5_000_000,
    include_identity: bool = False,
    prune_slack: float = 0.0,
) -> OrbitTable:
    """Enumerate freely reduced words level by level.

    With ``max_length`` every reduced word of at most that length is
    produced. With ``max_displacement = t`` a branch ``w x ...`` is pruned
    when the hyperbolic distance from ``w^{-1}(0)`` to the disk ``D_x``
    exceeds ``t + prune_slack``: every word extending ``w x`` moves 0 into
    ``w(D_x)``, so no element of that branch has displacement ``<= t``.
    The pruning is therefore exact (no element within ``t`` is lost).

    Nodes are produced breadth-first by length and, within a length, by
    parent then letter, so the order is deterministic.

    Raises
    ------
    BudgetExceeded
        When more than ``budget`` tree nodes would be created.
    """
    if max_length is None and max_displacement is None:
        raise ValueError("a finite length or displacement bound is required")
    t = math.inf if max_displacement is None else float(max_displacement)
    L = 10**9 if max_length is None else int(max_length)
    k = 2 * G.rank
    la, lb, ll = G.letter_a, G.letter_b, G.letter_label
    normals = G.disk_normal

    parents = [np.zeros(1, dtype=np.int64)]
    lasts = [np.full(1, -1, dtype=np.int8)]
    lengths = [np.zeros(1, dtype=np.int64)]
    As = [np.ones(1, dtype=complex)]
    Bs = [np.zeros(1, dtype=complex)]
    labs = [np.zeros(1, dtype=np.int64)]
    total = 1
    f_idx = np.zeros(1, dtype=np.int64)
    f_a, f_b, f_last, f_lab = As[0], Bs[0], lasts[0].astype(np.int64), labs[0]
    depth = 0
    while f_idx.size and depth < L:
        depth += 1
        cand = np.ones((f_idx.size, k), dtype=bool)
        has_last = f_last >= 0
        cand[np.nonzero(has_last)[0], f_last[has_last] ^ 1] = False
        if math.isfinite(t):
            # hyperboloid point of w^{-1}(0) is (|a|^2+|b|^2, -2 b conj(a))
            q = -2.0 * f_b * np.conj(f_a)
            X0 = np.abs(f_a) ** 2 + np.abs(f_b) ** 2
            ip = -X0[:, None] * normals[None, :, 0] + q.real[:, None] * normals[None, :, 1] \
                + q.imag[:, None] * normals[None, :, 2]
            lower = np.arcsinh(np.maximum(0.0, -ip))
            cand &= lower <= t + prune_slack
        rows, cols = np.nonzero(cand)
        n_new = rows.size
        if total + n_new > budget:
            raise BudgetExceeded(
                f"enumeration budget of {budget} nodes exceeded at length {depth} "
                f"({total + n_new} needed)", total
            )
        na, nb = su_mul(f_a[rows], f_b[rows], la[cols], lb[cols])
        new_idx = total + np.arange(n_new, dtype=np.int64)
        parents.append(f_idx[rows])
        lasts.append(cols.astype(np.int8))
        lengths.append(np.full(n_new, depth, dtype=np.int64))
        As.append(na)
        Bs.append(nb)
        nl = f_lab[rows] + ll[cols]
        labs.append(nl)
        total += n_new
        f_idx, f_a, f_b, f_last, f_lab = new_idx, na, nb, cols.astype(np.int64), nl

    parent = np.concatenate(parents)
    last = np.concatenate(lasts)
    length = np.concatenate(lengths)
    A = np.concatenate(As)
    B = np.concatenate(Bs)
    lab = np.concatenate(labs)
    disp = su_displacement(B)
    keep = disp <= t
    if not include_identity:
        keep[0] = False
    if max_length is not None:
        complete_to = G.certified_displacement(L)
        if max_displacement is not None:
            complete_to = min(complete_to, t)
        desc = f"G, length <= {L}"
    else:
        complete_to = t
        desc = f"G, displacement <= {t:g}"
    return OrbitTable(
        G, parent, last, length, A, B, lab, np.nonzero(keep)[0], complete_to, desc
    )


def subgroup_filter(words, label: int = 0):
    """Words whose coset label equals ``label`` (``label = 0`` gives ``H``).

    Accepts an :class:`OrbitTable` (returns a table sharing storage) or any
    iterable of :class:`Word` (returns a generator).
    """
    if isinstance(words, OrbitTable):
        tag = "H" if label == 0 else f"coset {label}"
        return words.select(words.labels == label, f"{tag} of {words.description}")
    return (w for w in words if w.coset_label == label)


def cyclic_subgroup(G: SchottkyGroup, t: float, generator: int = 0) -> OrbitTable:
    """Table of the powers of one generator with displacement ``<= t``."""
    lam = translation_length(G.generators[generator])
    n = int(math.floor(t / lam)) + 1
    words = []
    for k in range(1, n + 1):
        words.append((2 * generator,) * k)
        words.append((2 * generator + 1,) * k)
    table = OrbitTable.from_words(G, words, complete_to=None, description="cyclic")
    table = table.within(t)
    table.complete_to = t
    return table


def trivial_table(G: SchottkyGroup) -> OrbitTable:
    table = OrbitTable.from_words(G, [()], description="trivial")
    table.complete_to = math.inf
    return table


# ---------------------------------------------------------------------------
# Poincaré series


@dataclass(frozen=True)
class TruncatedSeries:
    s: float
    t: float
    value: float
    count: int
    certified: bool = True
    basepoint: tuple = (0.0, 0.0)


def displacements_at(table: OrbitTable, w=None) -> np.ndarray:
    """``d(w, h(w))`` for every element of the table."""
    if w is None:
        return table.displacement
    z = w.complex if isinstance(w, BallPoint) else complex(w)
    if z == 0:
        return table.displacement
    a, b = table.elements
    img = su_apply(a, b, z)
    P = np.stack([img.real, img.imag], axis=-1)
    return distances(P, np.array([z.real, z.imag]))


def _covers(table: OrbitTable, t: float, w) -> bool:
    r = 0.0
    if w is not None:
        z = w.complex if isinstance(w, BallPoint) else complex(w)
        r = 2.0 * math.atanh(abs(z))
    return table.complete_to is not None and table.complete_to >= t + 2 * r - 1e-12


def poincare_truncated(table: OrbitTable, s: float, w=None, t: float = math.inf) -> TruncatedSeries:
    """``sum over h with d(w, h w) <= t of exp(-s d(w, h w))``.

    The identity contributes 1 whether or not the table lists it. The
    result is flagged uncertified when the table is not known to contain
    every element with ``d(0, h 0) <= t + 2 d(0, w)``.
    """
    if s < 0:
        raise ValueError("s must be non-negative")
    d = displacements_at(table, w)
    nonzero = d > 1e-12
    sel = d[nonzero & (d <= t)]
    value = 1.0 + float(np.sum(np.exp(-s * np.sort(sel))))
    base = (0.0, 0.0) if w is None else tuple(float(x) for x in np.atleast_1d(
        w.coords if isinstance(w, BallPoint) else [complex(w).real, complex(w).imag]))
    return TruncatedSeries(s, t, value, int(sel.size) + 1, _covers(table, t, w), base)


@dataclass(frozen=True)
class ConjugationReport:
    n: int
    t: float
    s: float
    count_origin: int
    count_shifted: int
    max_abs_diff: float
    series_origin: float
    series_shifted: float
    certified: bool
    passed: bool
    first_unmatched: float | None


def conjugation_invariance_check(
    table: OrbitTable, s: float, n: int, t: float, tol: float = TOL
) -> ConjugationReport:
    """Compare displacement multisets of ``H`` seen from ``z_n`` and from 0.

    The map ``h -> gamma^{-n} h gamma^n`` is a bijection of ``H`` with
    ``d(z_n, h z_n) = d(0, gamma^{-n} h gamma^n 0)``, so both multisets
    agree. The table must be complete to ``t + 2 |n| lambda`` so that every
    ``h`` with ``d(z_n, h z_n) <= t`` is present.
    """
    G = table.group
    zn = G.basepoint(n)
    d0 = np.sort(table.displacement)
    d0 = d0[d0 <= t]
    dn = np.sort(displacements_at(table, zn))
    dn = dn[dn <= t]
    certified = _covers(table, t, zn)
    m = min(d0.size, dn.size)
    diff = np.abs(d0[:m] - dn[:m])
    max_diff = float(diff.max()) if m else 0.0
    first = None
    bad = np.nonzero(diff > tol * np.maximum(1.0, d0[:m]))[0]
    if bad.size:
        first = float(d0[bad[0]])
    elif d0.size != dn.size:
        extra = d0[m:] if d0.size > m else dn[m:]
        # elements sitting on the cutoff may fall either side by rounding
        if np.any(t - extra > tol * max(1.0, t)):
            first = float(extra[0])
    passed = first is None and certified
    return ConjugationReport(
        n, t, s, int(d0.size), int(dn.size), max_diff,
        poincare_truncated(table, s, None, t).value,
        poincare_truncated(table, s, zn, t).value,
        certified, passed, first,
    )


# ---------------------------------------------------------------------------
# exponent of convergence


@dataclass(frozen=True)
class DeltaEstimate:
    value: float
    method: str
    band: tuple[float, float]
    t_max: float = 0.0
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = self.band
        if not (lo <= self.value <= hi):
            raise ValueError("estimate outside its confidence band")

    @property
    def lo(self) -> float:
        return self.band[0]

    @property
    def hi(self) -> float:
        return self.band[1]

    def overlaps(self, other: "DeltaEstimate") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi

    def to_dict(self) -> dict:
        return {
            "value": self.value, "method": self.method, "band": list(self.band),
            "t_max": self.t_max, "details": self.details,
        }


def _lstsq(x: np.ndarray, y: np.ndarray, with_log: bool):
    """Slope of ``y ~ c + slope*x (+ kappa*log x)`` and its standard error."""
    cols = [np.ones_like(x), x]
    if with_log:
        cols.append(np.log(x))
    M = np.stack(cols, axis=-1)
    coef, *_ = np.linalg.lstsq(M, y, rcond=None)
    res = y - M @ coef
    dof = max(1, x.size - M.shape[1])
    cov = np.linalg.pinv(M.T @ M) * float(res @ res) / dof
    return float(coef[1]), float(math.sqrt(max(cov[1, 1], 0.0)))


def _window(t_max: float, n_annuli: int, min_annuli: int):
    edges = np.linspace(0.0, t_max, n_annuli + 1)[1:]
    lo = int(math.ceil(0.2 * n_annuli))
    hi = n_annuli - int(math.floor(0.1 * n_annuli))
    kept = edges[lo:hi]
    if kept.size < min_annuli:
        raise WindowError(
            f"only {kept.size} annuli left after trimming; need at least {min_annuli}"
        )
    return kept


def estimate_delta(
    table: OrbitTable,
    method: str = "counting_fit",
    n_annuli: int | None = None,
    min_annuli: int = 5,
    dim: int = 1,
) -> DeltaEstimate:
    """Estimate the exponent of convergence from a complete orbit table.

    Both methods use annuli of ``[0, t_max]`` (``t_max`` = the table's
    completeness radius), discarding the first 20% and last 10%.

    ``counting_fit`` fits ``log N(t)`` against ``t`` where ``N`` is the
    orbital counting function. ``series_bisection`` bisects on ``s`` for
    the growth rate of the increments of the truncated series
    ``P_t(s) - P_{t-W}(s)`` over a fixed window ``W``; growth means
    ``s < delta`` and decay ``s > delta``.

    The band combines the standard error of the fit, the spread between
    the two halves of the window, and the difference between a pure
    exponential model and one with a polynomial prefactor ``t^kappa``.
    """
    if table.complete_to is None or not math.isfinite(table.complete_to):
        raise WindowError("the table has no finite completeness radius")
    t_max = float(table.complete_to)
    if n_annuli is None:
        n_annuli = max(10, int(round(2 * t_max)))
    edges = _window(t_max, n_annuli, min_annuli)
    d = np.sort(table.displacement)
    d = d[(d > 1e-12) & (d <= t_max)]
    halves = [edges[: edges.size // 2 + 1], edges[edges.size // 2:]]

    if method == "counting_fit":
        N = np.searchsorted(d, edges, side="right").astype(float)

        def fit(e, with_log):
            Ne = np.searchsorted(d, e, side="right").astype(float)
            ok = Ne > 0
            if ok.sum() < 3:
                return 0.0, math.inf
            return _lstsq(e[ok], np.log(Ne[ok]), with_log)

        if np.count_nonzero(N) < min_annuli:
            raise WindowError("too few non-empty annuli in the counting window")
        solve = fit
    elif method == "series_bisection":
        width = max(edges[1] - edges[0], 0.25 * (edges[-1] - edges[0]))
        width = max(width, 2 * (t_max / n_annuli))

        def growth(s, e, with_log):
            P = np.concatenate([[0.0], np.cumsum(np.exp(-s * (d - e[0])))])
            hi = np.searchsorted(d, e, side="right")
            lo = np.searchsorted(d, e - width, side="right")
            inc = P[hi] - P[lo]
            ok = inc > 0
            if ok.sum() < 3:
                return -math.inf, math.inf
            return _lstsq(e[ok], np.log(inc[ok]), with_log)

        def solve(e, with_log):
            g0, se = growth(0.0, e, with_log)
            if not math.isfinite(g0):
                return 0.0, math.inf
            if g0 <= 0:
                return 0.0, se
            lo, hi = 0.0, max(1.0, 2 * g0)
            while growth(hi, e, with_log)[0] > 0:
                hi *= 2
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if growth(mid, e, with_log)[0] > 0:
                    lo = mid
                else:
                    hi = mid
            s_star = 0.5 * (lo + hi)
            return s_star, growth(s_star, e, with_log)[1]

        if len(d) == 0:
            raise WindowError("no orbit points in the window")
    else:
        raise ValueError(f"unknown method {method!r}")

    value, se = solve(edges, False)
    alt, se_alt = solve(edges, True)
    h1, _ = solve(halves[0], False)
    h2, _ = solve(halves[1], False)
    if not math.isfinite(se):
        raise WindowError("fit failed: too few populated annuli")
    spread = [value - 2 * se, value + 2 * se, alt, h1, h2]
    if math.isfinite(se_alt):
        spread += [alt - 2 * se_alt, alt + 2 * se_alt]
    value = min(max(value, 0.0), float(dim))
    lo = min(max(min(spread), 0.0), value)
    hi = max(min(max(spread), float(dim)), value)
    details = {
        "slope_exponential": value,
        "slope_with_prefactor": alt,
        "standard_error": se,
        "half_window_slopes": [h1, h2],
        "annuli": int(n_annuli),
        "window": [float(edges[0]), float(edges[-1])],
        "points": int(d.size),
    }
    return DeltaEstimate(value, method, (lo, hi), t_max, details)


def orbit_rows(table: OrbitTable, n: int = 0) -> list[dict]:
    """Rows for the orbit CSV dump: word, label, displacement, image of ``z_n``."""
    z = table.group.basepoint(n).complex
    a, b = table.elements
    img = su_apply(a, b, z)
    disp = table.displacement
    rows = []
    for k, letters in enumerate(table.letters()):
        rows.append({
            "word": word_string(letters),
            "label": int(table.label[table.index[k]]),
            "displacement": float(disp[k]),
            "x": float(img[k].real),
            "y": float(img[k].imag),
        })
    return rows
