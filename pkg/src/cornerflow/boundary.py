"""Edge-travelling operators, face traces and cyclic-cocycle pairings.

For a unitary ``U`` and face ``i`` the pairing is

    <xi_i, U> = tau_i((U^* - 1) [Q_i, U - 1]),

with ``Q_i`` the position along face ``i`` and ``tau_i`` the trace per unit
length over a slab of the face.  The diagonal entry at a site ``p`` is
``sum_q |(U - 1)_{qp}|^2 (Q_q - Q_p)``, so only the window columns of
``U - 1`` are needed.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import (BumpSpec, LatticePoint, Region, boundary_path, build_region,
                       face_sites, outward_vector)
from .topology import ExpUnitary, SmoothStep, exp_minus_one_gap, exp_obstruction
from .truncation import TruncatedOperator


class PairingError(RuntimeError):
    """Trace window or winding number outside its contract."""


@dataclass
class EdgeTravelOperator:
    """One-step translation along an ordered boundary path and its unitisation."""

    matrix: sp.csr_matrix
    unitisation: sp.csr_matrix
    region: Region
    orientation: str
    path: list = field(repr=False)

    def steps(self) -> list[tuple[int, int]]:
        return [(b.x - a.x, b.y - a.y) for a, b in zip(self.path, self.path[1:])]


def _path_operator(region: Region, path, n: int = 1) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    idx = region.lookup(path)
    if np.any(idx < 0):
        raise PairingError("path leaves the region")
    N = region.n_sites
    w = sp.coo_matrix((np.ones(len(idx) - 1), (idx[1:], idx[:-1])), shape=(N, N)).tocsr()
    on_path = np.zeros(N)
    on_path[idx] = 1
    W = (w + sp.diags(1 - on_path)).tocsr()
    if n > 1:
        w = sp.kron(w, sp.identity(n), format="csr")
        W = sp.kron(W, sp.identity(n), format="csr")
    return w, W


def _orientation(region: Region) -> str:
    return "clockwise" if region.cone.kind == "concave_cone" else "anticlockwise"


def edge_travel(region: Region, n: int = 1) -> EdgeTravelOperator:
    """Successor map along ``boundary_path`` (material on the left)."""
    path = boundary_path(region)
    w, W = _path_operator(region, path, n)
    return EdgeTravelOperator(w, W, region, _orientation(region), path)


def inward_shift(region: Region) -> tuple[int, int]:
    """Smallest inward translate ``d = k g`` (``k >= 1``) of the perfect cone lying inside the region.

    ``g = a1 + a2`` for convex cones, ``-(a1 + a2)`` for concave ones (that
    sum points into the hole) and the inward face normal for half-planes.
    """
    cone = region.cone
    if cone.kind == "half_plane":
        v = outward_vector(cone, 1)
        g = (-v[0], -v[1])
    else:
        sign = -1 if cone.kind == "concave_cone" else 1
        g = (sign * (cone.a1[0] + cone.a2[0]), sign * (cone.a1[1] + cone.a2[1]))
    perfect = region.sites[np.asarray(region.cone.contains(region.x, region.y))]
    for k in range(1, 4 * region.bump.radius + 3):
        d = (k * g[0], k * g[1])
        moved = perfect + np.asarray(d)
        inwin = np.max(np.abs(moved), axis=1) <= region.L
        if np.all(region.contains(moved[inwin, 0], moved[inwin, 1])):
            return d
    raise PairingError("no inward translate of the perfect cone fits inside the region")


def edge_travel_smooth(region: Region, shift=None, n: int = 1) -> EdgeTravelOperator:
    """Edge-travelling operator along the perfect cone's path moved inward by ``shift``."""
    d = inward_shift(region) if shift is None else tuple(shift)
    perfect = build_region(region.cone, BumpSpec(), region.L, region.interior_margin)
    path = [LatticePoint(p.x + d[0], p.y + d[1]) for p in boundary_path(perfect)]
    path = [p for p in path if p in region.index]
    w, W = _path_operator(region, path, n)
    return EdgeTravelOperator(w, W, region, _orientation(region), path)


def irrational_edge_travel(region: Region, n: int = 1) -> EdgeTravelOperator:
    """Successor map along the approximate boundary points of an irrational face."""
    if region.cone.rational:
        warnings.warn("region has rational faces; this is the ordinary edge_travel", stacklevel=2)
    return edge_travel(region, n)


def concave_edge_travel(region: Region, n: int = 1) -> EdgeTravelOperator:
    """Clockwise successor map around a concave corner."""
    if region.cone.kind != "concave_cone":
        raise PairingError("concave_edge_travel needs a concave region")
    return edge_travel(region, n)


def sturmian_steps(region: Region) -> np.ndarray:
    """Vertical increments of successive face-1 points (0 or 1 on slopes in (0, 1))."""
    f1 = np.asarray(face_sites(region, 1))
    return np.diff(f1[:, 1])


# --- traces, derivations, pairings ------------------------------------------

WEIGHTINGS = ("auto", "flat", "hann")


@dataclass(frozen=True)
class FaceTrace:
    """Trace per unit length over a slab along face ``i``.

    The slab holds sites with along-face position in ``[s, s + length)`` and
    depth at most ``depth``.  On rational faces the length is rounded to a
    whole number of periods ``|a_i|`` and sites are weighted flat, which is
    exact for face-periodic operators.  Irrational faces are quasi-periodic,
    so a sharp window leaves an ``O(1/length)`` edge bias; ``"auto"`` then
    uses the Hann weight ``(2/length) sin^2(pi (Q - s) / length)``.
    """

    face: int
    s: float
    ell: float
    depth: float = 6.0
    weighting: str = "auto"

    def __post_init__(self):
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r}")

    def length(self, region: Region) -> float:
        a = region.cone.norm(self.face)
        if region.cone.slope_mode[self.face - 1] == "rational":
            return max(1, round(self.ell / a)) * a
        return float(self.ell)

    def site_mask(self, region: Region) -> np.ndarray:
        q = region.along(self.face)
        eps = 1e-9
        return ((q >= self.s - eps) & (q < self.s + self.length(region) - eps)
                & (region.depth(self.face) <= self.depth + eps))

    def site_weights(self, region: Region) -> tuple[np.ndarray, np.ndarray]:
        """Slab sites and their weights (summing to ``1`` per unit length)."""
        sites = np.flatnonzero(self.site_mask(region))
        length = self.length(region)
        mode = self.weighting
        if mode == "auto":
            mode = "flat" if region.cone.slope_mode[self.face - 1] == "rational" else "hann"
        if mode == "flat":
            return sites, np.full(len(sites), 1 / length)
        t = (region.along(self.face)[sites] - self.s) / length
        return sites, 2 / length * np.sin(np.pi * t) ** 2

    def dofs(self, region: Region, n: int) -> np.ndarray:
        sites = np.flatnonzero(self.site_mask(region))
        return (sites[:, None] * n + np.arange(n)).ravel()

    def dof_weights(self, region: Region, n: int) -> tuple[np.ndarray, np.ndarray]:
        sites, wt = self.site_weights(region)
        return (sites[:, None] * n + np.arange(n)).ravel(), np.repeat(wt, n)

    def shifted(self, region: Region, delta_periods: int) -> "FaceTrace":
        a = region.cone.norm(self.face)
        step = a if region.cone.slope_mode[self.face - 1] == "rational" else 1.0
        return FaceTrace(self.face, self.s + delta_periods * step, self.ell, self.depth, self.weighting)

    def check(self, region: Region):
        mask = self.site_mask(region)
        if not np.any(mask):
            raise PairingError(f"empty trace window on face {self.face}")
        if np.any(region.cut_distance()[mask] < region.interior_margin):
            warnings.warn(f"trace window on face {self.face} reaches the window cut margin",
                          stacklevel=3)


def face_trace_eval(tau: FaceTrace, A, region: Region, n: int = 1) -> float:
    """Weighted sum of diagonal entries of ``A`` over the slab (trace per unit length)."""
    tau.check(region)
    d = A.diagonal() if sp.issparse(A) else np.diag(np.asarray(A))
    dofs, wt = tau.dof_weights(region, n)
    return float(np.real(d[dofs] @ wt))


@dataclass(frozen=True)
class Derivation:
    """``A -> [Q_i, A]`` with ``Q_i = a_i . r / |a_i|``."""

    face: int

    def q(self, region: Region, n: int = 1) -> np.ndarray:
        return np.repeat(region.along(self.face), n)


def derivation_apply(D: Derivation, A, region: Region, n: int = 1):
    Q = sp.diags(D.q(region, n))
    if sp.issparse(A):
        return (Q @ A - A @ Q).tocsr()
    A = np.asarray(A)
    q = D.q(region, n)
    return q[:, None] * A - A * q[None, :]


@dataclass
class CocyclePairing:
    value: float
    face: int
    window_start: float
    window_len: float
    error_estimate: float = 0.0
    depth: float = 0.0

    def csv_row(self) -> str:
        return (f"{self.face},{self.window_start:.12g},{self.window_len:.12g},"
                f"{self.value:.12g},{self.error_estimate:.6g}")


PAIRING_HEADER = "face,window_start,window_len,value,error_estimate"


def _minus_one_columns(U, cols: np.ndarray) -> np.ndarray:
    if isinstance(U, ExpUnitary):
        return U.minus_one(cols)
    if isinstance(U, EdgeTravelOperator):
        U = U.unitisation
    if sp.issparse(U):
        D = U.tocsc()[:, cols].toarray()
    else:
        D = np.asarray(U)[:, cols].copy()
    D[cols, np.arange(len(cols))] -= 1
    return D


def _pairing_value(U, tau: FaceTrace, region: Region, n: int) -> float:
    tau.check(region)
    cols, wt = tau.dof_weights(region, n)
    D = _minus_one_columns(U, cols)
    Q = np.repeat(region.along(tau.face), n)
    dens = np.einsum("qc,qc->c", np.abs(D) ** 2, Q[:, None] - Q[cols][None, :])
    return float(dens @ wt)


def _window_valid(tau: FaceTrace, region: Region) -> bool:
    mask = tau.site_mask(region)
    return (tau.s >= region.bump.radius + 1 and np.any(mask)
            and not np.any(region.cut_distance()[mask] < region.interior_margin))


def error_shifts(tau: FaceTrace, region: Region) -> list[FaceTrace]:
    """Windows shifted by about a quarter length either way, kept inside the valid range."""
    a = region.cone.norm(tau.face)
    periods = max(1, round(tau.length(region) / a / 4))
    for p in (periods, 1):
        out = [t for t in (tau.shifted(region, -p), tau.shifted(region, p)) if _window_valid(t, region)]
        if out:
            return out
    return []


def cocycle_pairing(i: int, U, region: Region, window: FaceTrace | None = None, n: int = 1,
                    estimate_error: bool = True) -> CocyclePairing:
    """``tau_i((U^* - 1) [Q_i, U - 1])`` over the slab ``window`` of face ``i``."""
    tau = window if window is not None else default_window(region, i)
    if tau.face != i:
        tau = FaceTrace(i, tau.s, tau.ell, tau.depth, tau.weighting)
    value = _pairing_value(U, tau, region, n)
    err = 0.0
    if estimate_error:
        shifts = error_shifts(tau, region)
        if not shifts:
            warnings.warn("no valid shifted window for the error estimate", stacklevel=2)
        err = max((abs(_pairing_value(U, t, region, n) - value) for t in shifts), default=0.0)
    return CocyclePairing(value, i, tau.s, tau.length(region), err, tau.depth)


def default_window(region: Region, i: int, depth: float = 6.0) -> FaceTrace:
    """Window starting a quarter of the way out along the face, half a quarter long."""
    L = region.L
    s = max(region.bump.radius + 2, L / 4)
    return FaceTrace(i, float(s), max(1.0, L / 4), depth)


def pairing_columns(region: Region, windows, n: int) -> np.ndarray:
    """All dofs needed for the windows and their error-estimate shifts."""
    cols = []
    for tau in windows:
        for t in [tau] + error_shifts(tau, region):
            cols.append(t.dofs(region, n))
    return np.unique(np.concatenate(cols))


GAP_EIGH_LIMIT = 1500


def boundary_currents(H: TruncatedOperator, phi: SmoothStep, windows, method: str = "auto",
                      tol: float = 1e-4, warn_tol: float = 0.05) -> list[CocyclePairing]:
    """Pairings of ``exp(-2 pi i phi(H))`` with the face cocycles of ``windows``.

    ``method``: ``"gap-eigh"`` (eigenpairs inside the gap), ``"chebyshev"``
    (windowed columns, expansion tail below ``tol``), ``"dense"`` (full
    unitary) or ``"auto"`` (gap-eigh up to ``GAP_EIGH_LIMIT`` dofs).
    A warning is issued when the window-shift error exceeds ``warn_tol``.
    """
    region = H.region
    cols = pairing_columns(region, windows, H.n)
    if method == "auto":
        method = "gap-eigh" if H.dim <= GAP_EIGH_LIMIT else "chebyshev"
    if method == "gap-eigh":
        U = exp_minus_one_gap(H, phi, cols)
    else:
        U = exp_obstruction(H, phi, method=method, columns=cols, tol=tol)
    out = [cocycle_pairing(t.face, U, region, t, H.n) for t in windows]
    for p in out:
        if p.error_estimate > warn_tol:
            warnings.warn(f"face {p.face}: window sensitivity {p.error_estimate:.3g} exceeds {warn_tol}; "
                          "geometry too small", stacklevel=2)
    return out


def boundary_current(H: TruncatedOperator, phi: SmoothStep, i: int, window: FaceTrace | None = None,
                     method: str = "auto", tol: float = 1e-4) -> CocyclePairing:
    tau = window if window is not None else default_window(H.region, i)
    return boundary_currents(H, phi, [tau], method, tol)[0]


# --- winding numbers on a path ---------------------------------------------

@dataclass
class WindingResult:
    value: int
    pairing: float
    fredholm_index: int


def shift_operator(N: int, power: int = 1, periodic: bool = True) -> np.ndarray:
    """``S^power`` on ``N`` sites with ``S e_k = e_{k+1}``."""
    S = np.roll(np.eye(N), 1, axis=0)
    if not periodic:
        S[0, -1] = 0
    return np.linalg.matrix_power(S, power) if power >= 0 else np.linalg.matrix_power(S.T, -power)


def fredholm_index(T: np.ndarray, threshold: float = 1e-8) -> int:
    """Index of a compression to a half-line, read off at the physical (left) end.

    A finite matrix always has index 0; the right end is an artificial cut,
    so only (co)kernel vectors localised in the left half are counted.
    """
    u, s, vh = np.linalg.svd(T)
    N = len(s)
    small = s < threshold
    half = N // 2

    def left(vecs):
        return int(np.sum(np.sum(np.abs(vecs[:half]) ** 2, axis=0) > 0.5))

    return left(vh[small].conj().T) - left(u[:, small])


def winding_number(U: np.ndarray, window: tuple[int, int] | None = None, tol: float = 0.1) -> WindingResult:
    """Winding of a unitary on a 1D chain of ``N`` sites ordered by position.

    The pairing uses the trace per site over ``window`` with ``Q`` the site
    index; the Fredholm index of the compression to the right half-chain is
    cross-checked to equal minus the winding.
    """
    U = np.asarray(U)
    N = len(U)
    lo, hi = window if window is not None else (N // 4, N // 2)
    Q = np.arange(N, dtype=float)
    cols = np.arange(lo, hi)
    D = U[:, cols].copy()
    D[cols, np.arange(len(cols))] -= 1
    pairing = float(np.einsum("qc,qc->", np.abs(D) ** 2, Q[:, None] - Q[cols][None, :]) / len(cols))
    value = int(round(pairing))
    if abs(pairing - value) > tol:
        raise PairingError(f"non-integer winding {pairing:.4f}")
    start = N // 2
    idx = fredholm_index(U[start:, start:])
    if idx != -value:
        raise PairingError(f"Fredholm index {idx} does not match winding {value}")
    return WindingResult(value, pairing, idx)
