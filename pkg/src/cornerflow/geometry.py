"""Truncation domains on the square lattice.

A region is a cone (half-plane, convex or concave quarter-plane) with its
corner at the origin, optionally edited near the corner ("bumps"), and cut
down to the finite box ``max(|x|, |y|) <= L``.  Sites inside the box are
enumerated row-major by ``(y, x)``.

Orientation convention: boundary paths keep the material on their left.
For a convex cone this is anticlockwise (in along face 2, out along face 1),
for a concave cone it turns clockwise at the corner.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage

KINDS = ("half_plane", "convex_cone", "concave_cone")


class GeometryError(ValueError):
    """Invalid cone, bump or region specification."""


class LatticePoint(NamedTuple):
    x: int
    y: int


def wedge(a, b) -> float:
    """Signed area ``a x b`` of two plane vectors."""
    return a[0] * b[1] - a[1] * b[0]


def _encode(x, y):
    return (np.asarray(x, dtype=np.int64) << 32) + np.asarray(y, dtype=np.int64)


def _is_int_vector(v) -> bool:
    return all(isinstance(c, (int, np.integer)) for c in v)


@dataclass(frozen=True)
class ConeSpec:
    """Cone with apex at the origin.

    Parameters
    ----------
    kind : {"half_plane", "convex_cone", "concave_cone"}
    a1, a2 : pair of numbers
        Asymptotic generators.  Rational faces take primitive integer
        vectors; irrational faces take a real direction such as ``(1, alpha)``.
        Convex cones need ``a1 x a2 > 0``.  Concave cones sweep the reflex
        angle anticlockwise from ``a1`` to ``a2``, so ``a1 x a2 < 0``; the
        open convex cone spanned by ``a2`` and ``a1`` is the removed hole.
        A half-plane keeps ``{p : a1 x p >= 0}`` and sets ``a2 = -a1``.
    slope_mode : pair of {"rational", "irrational"}
    """

    kind: str = "convex_cone"
    a1: tuple = (1, 0)
    a2: tuple | None = (0, 1)
    slope_mode: tuple = ("rational", "rational")

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GeometryError(f"unknown cone kind {self.kind!r}")
        a1 = tuple(self.a1)
        if self.kind == "half_plane":
            a2 = tuple(-c for c in a1)
            mode = (self.slope_mode[0],) * 2
        else:
            if self.a2 is None:
                raise GeometryError("a2 is required for quarter-planes")
            a2 = tuple(self.a2)
            mode = tuple(self.slope_mode)
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)
        object.__setattr__(self, "slope_mode", mode)
        for a, m in zip((a1, a2), mode):
            if len(a) != 2:
                raise GeometryError("generators must be 2-vectors")
            if m == "rational":
                if not _is_int_vector(a):
                    raise GeometryError(f"rational generator {a} must be integer")
                if math.gcd(int(a[0]), int(a[1])) != 1:
                    raise GeometryError(f"generator {a} is not primitive")
            elif m == "irrational":
                if np.hypot(*a) == 0:
                    raise GeometryError("zero generator")
            else:
                raise GeometryError(f"unknown slope mode {m!r}")
        if self.kind != "half_plane":
            d = wedge(a1, a2)
            if d == 0:
                raise GeometryError("degenerate cone: a1 and a2 are parallel")
            if self.kind == "convex_cone" and d < 0:
                raise GeometryError("convex cone needs a1 x a2 > 0 (swap a1, a2)")
            if self.kind == "concave_cone" and d > 0:
                raise GeometryError("concave cone needs a1 x a2 < 0 (swap a1, a2)")

    @classmethod
    def irrational_quadrant(cls, alpha: float) -> "ConeSpec":
        """``{x >= 0, y >= alpha x}`` with the lower face of slope ``alpha``."""
        return cls("convex_cone", (1.0, float(alpha)), (0, 1), ("irrational", "rational"))

    @property
    def rational(self) -> bool:
        return self.slope_mode == ("rational", "rational")

    def generator(self, i: int) -> np.ndarray:
        return np.asarray(self.a1 if i == 1 else self.a2, dtype=float)

    def norm(self, i: int) -> float:
        return float(np.hypot(*self.generator(i)))

    def contains(self, x, y):
        """Membership of the infinite cone; vectorised over ``x``, ``y``."""
        x = np.asarray(x)
        y = np.asarray(y)
        a1, a2 = self.a1, self.a2
        s1 = a1[0] * y - a1[1] * x >= 0
        if self.kind == "half_plane":
            return s1
        s2 = a2[0] * y - a2[1] * x <= 0
        if self.kind == "convex_cone":
            return s1 & s2
        return s1 | s2

    def complement(self) -> "ConeSpec":
        """The closed complementary cone; shares both face rays with ``self``."""
        if self.kind == "half_plane":
            return ConeSpec("half_plane", tuple(-c for c in self.a1), None, self.slope_mode)
        kind = "concave_cone" if self.kind == "convex_cone" else "convex_cone"
        return ConeSpec(kind, self.a2, self.a1, self.slope_mode[::-1])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a1": list(self.a1), "a2": list(self.a2),
                "slope_mode": list(self.slope_mode)}


@dataclass(frozen=True)
class BumpSpec:
    """Site edits confined to the square ``[-R, R]^2`` around the corner."""

    radius: int = 0
    added: frozenset = frozenset()
    removed: frozenset = frozenset()

    def __post_init__(self):
        added = frozenset(LatticePoint(int(p[0]), int(p[1])) for p in self.added)
        removed = frozenset(LatticePoint(int(p[0]), int(p[1])) for p in self.removed)
        object.__setattr__(self, "added", added)
        object.__setattr__(self, "removed", removed)
        if self.radius < 0:
            raise GeometryError("bump radius must be non-negative")
        for p in added | removed:
            if max(abs(p.x), abs(p.y)) > self.radius:
                raise GeometryError(f"bump edit {tuple(p)} outside [-R, R]^2, R={self.radius}")
        if added & removed:
            raise GeometryError("a site cannot be both added and removed")

    @property
    def empty(self) -> bool:
        return not (self.added or self.removed)

    def to_dict(self) -> dict:
        return {"radius": self.radius, "added": sorted(map(list, self.added)),
                "removed": sorted(map(list, self.removed))}


@dataclass(frozen=True)
class ConeMatrices:
    M: np.ndarray
    M_perp: np.ndarray
    det: int


def cone_matrices(cone: ConeSpec) -> ConeMatrices:
    """Integer matrices ``M`` and ``M_perp`` of a rational convex cone.

    ``M @ p >= 0`` componentwise is cone membership and
    ``M @ M_perp = det * 1``.
    """
    if not cone.rational:
        raise GeometryError("cone matrices need rational generators")
    (x1, y1), (x2, y2) = cone.a1, cone.a2
    M = np.array([[y2, -x2], [-y1, x1]], dtype=np.int64)
    M_perp = np.array([[x1, x2], [y1, y2]], dtype=np.int64)
    det = int(round(np.linalg.det(M_perp)))
    if det <= 0:
        raise GeometryError("det M must be positive (swap a1, a2)")
    return ConeMatrices(M, M_perp, det)


def _convex_outward(a1, a2, i: int) -> tuple[int, int]:
    # unique v with (Mv)_i' = -1 on the face's own row and the other row in [0, det)
    cm = cone_matrices(ConeSpec("convex_cone", a1, a2))
    for t in range(cm.det):
        rhs = np.array([t, -1] if i == 1 else [-1, t])
        v = cm.M_perp @ rhs
        if np.all(v % cm.det == 0):
            v = v // cm.det
            return int(v[0]), int(v[1])
    raise GeometryError("no outward vector found")  # unreachable for primitive generators


def outward_vector(cone: ConeSpec, i: int) -> tuple[int, int]:
    """Lattice step leaving the material across face ``i``.

    ``P_{F_i} = 1 - V_g V_g^*`` with ``g = -outward_vector(cone, i)``.
    """
    a = cone.a1 if i == 1 else cone.a2
    if cone.slope_mode[i - 1] == "irrational":
        units = [(0, -1), (1, 0), (0, 1), (-1, 0)]
        sign = 1 if i == 1 else -1
        scores = [sign * wedge(a, u) for u in units]
        return units[int(np.argmin(scores))]
    if cone.kind == "half_plane" or not cone.rational:
        # shortest v with a x v = -1 (face 1) or v x a = -1 (face 2)
        sign = 1 if i == 1 else -1
        best = None
        for vx in range(-abs(a[1]) - 1, abs(a[1]) + 2):
            for vy in range(-abs(a[0]) - 1, abs(a[0]) + 2):
                if sign * wedge(a, (vx, vy)) == -1 and (best is None or vx * vx + vy * vy < best[0]):
                    best = (vx * vx + vy * vy, (vx, vy))
        return best[1]
    if cone.kind == "convex_cone":
        return _convex_outward(cone.a1, cone.a2, i)
    # concave: step into the open hole cone(a2, a1), through the matching hole face
    v = _convex_outward(cone.a2, cone.a1, 2 if i == 1 else 1)
    return -v[0], -v[1]


@dataclass(frozen=True, eq=False)
class Region:
    """Finite window of a (possibly bumpy) cone, with deterministic site order."""

    cone: ConeSpec
    bump: BumpSpec
    L: int
    interior_margin: int
    sites: np.ndarray = field(repr=False)
    index: dict = field(repr=False)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def x(self) -> np.ndarray:
        return self.sites[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.sites[:, 1]

    def contains(self, x, y):
        """Membership of the infinite edited cone (the window is ignored)."""
        x = np.asarray(x)
        y = np.asarray(y)
        inside = np.asarray(self.cone.contains(x, y))
        if self.bump.empty:
            return inside
        code = _encode(x, y)
        for pts, value in ((self.bump.removed, False), (self.bump.added, True)):
            if pts:
                arr = np.array(sorted(pts))
                inside = np.where(np.isin(code, _encode(arr[:, 0], arr[:, 1])), value, inside)
        return inside

    def in_window(self, x, y):
        return np.maximum(np.abs(x), np.abs(y)) <= self.L

    def cut_distance(self) -> np.ndarray:
        """Chebyshev distance of every site to the artificial window cut."""
        return self.L - np.maximum(np.abs(self.x), np.abs(self.y))

    def interior(self, margin: int | None = None) -> np.ndarray:
        m = self.interior_margin if margin is None else margin
        return self.cut_distance() >= m

    def lookup(self, points) -> np.ndarray:
        """Site indices of ``points``; ``-1`` where a point is not enumerated."""
        return np.array([self.index.get((int(p[0]), int(p[1])), -1) for p in points], dtype=np.int64)

    def along(self, i: int) -> np.ndarray:
        """Position along face ``i``: ``a_i . p / |a_i|``."""
        a = self.cone.generator(i)
        return self.sites @ a / np.hypot(*a)

    def depth(self, i: int) -> np.ndarray:
        """Distance into the material from the line of face ``i``."""
        a = self.cone.generator(i)
        w = a[0] * self.y - a[1] * self.x
        return (w if i == 1 else -w) / np.hypot(*a)

    def to_dict(self) -> dict:
        return {"cone": self.cone.to_dict(), "bump": self.bump.to_dict(),
                "L": self.L, "m": self.interior_margin}

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def build_region(cone: ConeSpec, bump: BumpSpec | None = None, L: int = 20,
                 m: int | None = None) -> Region:
    """Enumerate the sites of ``cone`` edited by ``bump`` inside the box of size ``L``."""
    bump = BumpSpec() if bump is None else bump
    m = L // 4 if m is None else int(m)
    scale = max(bump.radius, cone.norm(1), cone.norm(2))
    if L < 2 * scale:
        raise GeometryError(f"window L={L} too small; need L >= {2 * scale:g}")
    if not 0 <= m < L:
        raise GeometryError("interior margin must satisfy 0 <= m < L")
    r = np.arange(-L, L + 1)
    X, Y = np.meshgrid(r, r)  # rows are y, columns x: ravel is row-major by (y, x)
    mask = np.asarray(cone.contains(X, Y))
    for p in bump.removed:
        if max(abs(p.x), abs(p.y)) <= L:
            mask[p.y + L, p.x + L] = False
    for p in bump.added:
        mask[p.y + L, p.x + L] = True
    labels, count = ndimage.label(mask)
    if count != 1:
        raise GeometryError(f"region is not connected ({count} components)")
    sites = np.column_stack([X[mask], Y[mask]]).astype(np.int64)
    index = {(int(a), int(b)): k for k, (a, b) in enumerate(sites.tolist())}
    return Region(cone, bump, int(L), m, sites, index)


def face_mask(region: Region, i: int) -> np.ndarray:
    """Boolean mask of face ``i``: sites whose outward translate leaves the region."""
    v = outward_vector(region.cone, i)
    out = ~np.asarray(region.contains(region.x + v[0], region.y + v[1]))
    if region.cone.kind == "half_plane":
        # both faces lie on one line; split it at the corner
        s = region.along(1)
        out &= (s >= 0) if i == 1 else (s <= 0)
    return out


def face_sites(region: Region, i: int) -> list[LatticePoint]:
    """Face ``i`` ordered by increasing distance from the corner."""
    idx = np.flatnonzero(face_mask(region, i))
    pts = region.sites[idx]
    key = np.lexsort((region.along(i)[idx], np.hypot(pts[:, 0], pts[:, 1])))
    return [LatticePoint(int(a), int(b)) for a, b in pts[key]]


def _right(d):
    return (d[1], -d[0])


def _wall_follow(region: Region) -> list[LatticePoint]:
    a2 = region.cone.a2
    heading = (-a2[0], -a2[1])
    for a in (region.cone.a1, region.cone.a2):
        if not region.cone.rational or abs(a[0]) + abs(a[1]) != 1:
            raise GeometryError("boundary walk of bumpy regions needs axis-aligned faces")
    start = face_sites(region, 2)[-1]
    stop = face_sites(region, 1)[-1]
    path = [start]
    seen = {start}
    p, d = start, heading
    limit = 4 * region.n_sites
    while p != stop:
        for turn in (_right(d), d, (-d[1], d[0]), (-d[0], -d[1])):
            q = LatticePoint(p.x + turn[0], p.y + turn[1])
            if q in region.index:
                break
        else:
            raise GeometryError("isolated site on the boundary walk")
        if q in seen or len(path) > limit:
            raise GeometryError("boundary is not a simple path")
        path.append(q)
        seen.add(q)
        p, d = q, turn
    return path


def boundary_path(region: Region) -> list[LatticePoint]:
    """Ordered boundary sites with the material on the left.

    Perfect cones: face 2 inwards, the corner, then face 1 outwards.  Bumpy
    regions: a right-hand wall walk over 4-neighbour steps from the far end
    of face 2 to the far end of face 1.
    """
    if not region.bump.empty:
        return _wall_follow(region)
    f1, f2 = face_sites(region, 1), face_sites(region, 2)
    corner = LatticePoint(0, 0)
    seq = f2[::-1] + ([corner] if corner in region.index else []) + f1
    path, seen = [], set()
    for p in seq:
        if p not in seen:
            path.append(p)
            seen.add(p)
    return path


def arc_length(path: Sequence[LatticePoint]) -> np.ndarray:
    """Cumulative Euclidean arc length along ``path``, zero at the corner site."""
    pts = np.asarray(path, dtype=float)
    steps = np.hypot(*np.diff(pts, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(steps)])
    corner = np.argmin(np.hypot(pts[:, 0], pts[:, 1]))
    return s - s[corner]


def export_sites(region: Region) -> str:
    lines = [f"# region {region.hash}"]
    lines += [f"{a} {b}" for a, b in region.sites.tolist()]
    return "\n".join(lines) + "\n"


def import_sites(region: Region, text: str) -> Region:
    """Region with the same cone, bump and window but the site list read from ``text``.

    No consistency check is made here; ``membership_deviation`` reports
    sites that disagree with the cone, bump and window.
    """
    pts = [tuple(int(v) for v in line.split()[:2]) for line in text.splitlines()
           if line.strip() and not line.lstrip().startswith("#")]
    sites = np.array(pts, dtype=np.int64).reshape(-1, 2)
    index = {p: k for k, p in enumerate(pts)}
    return Region(region.cone, region.bump, region.L, region.interior_margin, sites, index)


STANDARD = ConeSpec("convex_cone", (1, 0), (0, 1))
HALF_PLANE = ConeSpec("half_plane", (0, -1), None)
CONCAVE_STANDARD = ConeSpec("concave_cone", (0, -1), (-1, 0))
FIG5_CONE = ConeSpec("convex_cone", (2, -1), (1, 1))
STAIRCASE = BumpSpec(radius=1, removed=frozenset({(0, 0)}))
FIG4_BUMP = BumpSpec(
    radius=5,
    removed=frozenset({(0, 0), (0, 1), (1, 2), (5, 0)}),
    added=frozenset({(-1, 2), (-1, 3), (-1, 4)}),
)
