"""Bulk invariants and the exponential-map unitary.

Chern numbers use the plaquette (link-variable) method with plaquettes
oriented ``kx`` then ``ky``.  The overall sign is chosen so that the
pairing of the face-1 cocycle with ``exp(-2 pi i phi(H))`` equals the
Chern number (see ``CHERN_SIGN``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.fft import dct
from scipy.sparse.linalg import eigsh

from .bulk import HoppingModel, bloch, bulk_gap, k_grid, torus_hamiltonian
from .truncation import TruncatedOperator, path_distance

# Sign relating the plaquette sum to the reported Chern number, fixed so that
# the face-1 pairing with exp(-2 pi i phi(H)) equals the Chern number.
CHERN_SIGN = -1

PROFILES = ("cosine", "polynomial")


class TopologyError(RuntimeError):
    """Gapless input or a failed numerical contract."""


@dataclass(frozen=True)
class SmoothStep:
    """Smooth switch from 1 below ``b`` to 0 above ``c``.

    ``cosine``: ``(1 + cos(pi t)) / 2``; ``polynomial``: ``1 - S_7(t)`` with the
    degree-7 smoothstep ``S_7(t) = 35 t^4 - 84 t^5 + 70 t^6 - 20 t^7`` (three
    continuous derivatives), where ``t = (E - b) / (c - b)``.
    """

    b: float
    c: float
    profile: str = "cosine"

    def __post_init__(self):
        if not self.b < self.c:
            raise ValueError("smooth step needs b < c")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")

    def __call__(self, E):
        t = np.clip((np.asarray(E, dtype=float) - self.b) / (self.c - self.b), 0.0, 1.0)
        if self.profile == "cosine":
            return (1 + np.cos(np.pi * t)) / 2
        return 1 - t**4 * (35 - 84 * t + 70 * t**2 - 20 * t**3)


def smooth_step(b: float, c: float, profile: str = "cosine") -> SmoothStep:
    return SmoothStep(float(b), float(c), profile)


@dataclass
class ChernResult:
    value: int
    grid: int
    plaquette_fluxes: np.ndarray = field(repr=False)
    converged: bool

    @property
    def raw(self) -> float:
        return CHERN_SIGN * float(self.plaquette_fluxes.sum()) / (2 * np.pi)


def _fhs_fluxes(frames: np.ndarray) -> np.ndarray:
    """Plaquette Berry fluxes from frames ``[ix, iy, n, nocc]`` on a periodic grid."""
    def link(a, b):
        ov = np.einsum("...ji,...jk->...ik", a.conj(), b)
        d = np.linalg.det(ov)
        return d / np.abs(d)

    fx = np.roll(frames, -1, axis=0)
    fy = np.roll(frames, -1, axis=1)
    ux = link(frames, fx)
    uy = link(frames, fy)
    uy_x = np.roll(uy, -1, axis=0)
    ux_y = np.roll(ux, -1, axis=1)
    return np.angle(ux * uy_x / (ux_y * uy))


def _occupied_frames(model: HoppingModel, N: int, nocc: int) -> np.ndarray:
    _, V = np.linalg.eigh(bloch(model, k_grid(N)))
    return V[..., :nocc]


def _chern_from_frames(frames) -> tuple[int, np.ndarray, float]:
    F = _fhs_fluxes(frames)
    raw = CHERN_SIGN * F.sum() / (2 * np.pi)
    return int(round(raw)), F, raw


def chern_number(source, N: int = 64, nocc: int | None = None) -> ChernResult:
    """Chern number of the bands below the main gap, or of a projection family.

    ``source`` is a ``HoppingModel`` (gap must be resolved) or a callable
    ``projection(N) -> array [N, N, n, n]`` of projections on the grid.
    """
    def frames_at(M):
        if isinstance(source, HoppingModel):
            return _occupied_frames(source, M, nocc)
        P = source(M)
        w, V = np.linalg.eigh(P)
        rank = int(round(np.trace(P[0, 0]).real))
        return V[..., -rank:] if rank else V[..., :0]

    if isinstance(source, HoppingModel) and nocc is None:
        gap = bulk_gap(source, max(N, 16))
        if not gap.resolved:
            raise TopologyError("bulk gap is not resolved; Chern number undefined")
        nocc = gap.band_index
    value, F, _ = _chern_from_frames(frames_at(N))
    value2, _, _ = _chern_from_frames(frames_at(2 * N))
    return ChernResult(value, N, F, value == value2)


def bott_projection(N: int, m: float = 1.0) -> np.ndarray:
    """Reference projection family ``(1 + n_hat(k) . sigma) / 2`` on the ``N x N`` grid.

    ``n(k) = (sin kx, sin ky, m - cos kx - cos ky)`` winds once over the
    sphere for ``0 < m < 2``.  This is the valence projection of
    ``bott_generator_model`` and has Chern number ``+1``, the class whose
    exponential pairs to ``+1`` with the face-1 cocycle like the edge-travelling ``w``.
    """
    k = k_grid(N)
    n = np.stack([np.sin(k[..., 0]), np.sin(k[..., 1]),
                   m - np.cos(k[..., 0]) - np.cos(k[..., 1])], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    sig = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]])
    return 0.5 * (np.eye(2) + np.einsum("...a,aij->...ij", n, sig))


def bott_index_torus(model: HoppingModel, N: int = 12, nocc: int | None = None) -> float:
    """Real-space invariant on the ``N x N`` torus (independent oracle).

    ``(1/2 pi) Im tr log(V_y V_x V_y^* V_x^*)`` with ``V = P exp(2 pi i X / N) P``
    on the occupied subspace ``P``.
    """
    H = torus_hamiltonian(model, N)
    E, V = np.linalg.eigh(H)
    if nocc is None:
        nocc = bulk_gap(model, 32).band_index
    occ = V[:, : nocc * N * N]
    n = model.n
    idx = np.arange(N * N)
    x = np.repeat(idx % N, n)
    y = np.repeat(idx // N, n)
    ux = occ.conj().T @ (np.exp(2j * np.pi * x / N)[:, None] * occ)
    uy = occ.conj().T @ (np.exp(2j * np.pi * y / N)[:, None] * occ)
    W = uy @ ux @ uy.conj().T @ ux.conj().T
    return float(np.sum(np.angle(np.linalg.eigvals(W))) / (2 * np.pi))


# --- exponential-map unitary -------------------------------------------------

DENSE_LIMIT = 4000


@dataclass
class ExpUnitary:
    """``U = exp(-2 pi i phi(H))`` held either densely or as selected columns of ``U - 1``."""

    region: object
    phi: SmoothStep
    n: int
    method: str
    matrix: np.ndarray | None = field(default=None, repr=False)
    columns: np.ndarray | None = field(default=None, repr=False)
    block: np.ndarray | None = field(default=None, repr=False)
    degree: int = 0
    support_radius: float = float("nan")

    def minus_one(self, cols: np.ndarray) -> np.ndarray:
        """Columns ``(U - 1)[:, cols]``."""
        cols = np.asarray(cols)
        if self.matrix is not None:
            out = self.matrix[:, cols].copy()
            out[cols, np.arange(len(cols))] -= 1
            return out
        pos = {c: k for k, c in enumerate(self.columns.tolist())}
        try:
            sel = [pos[c] for c in cols.tolist()]
        except KeyError as err:
            raise TopologyError(f"column {err} was not computed") from None
        return self.block[:, sel]

    def unitarity_defect(self) -> float:
        if self.matrix is None:
            raise TopologyError("unitarity check needs the dense matrix")
        U = self.matrix
        return float(np.max(np.abs(U.conj().T @ U - np.eye(len(U)))))


def _phase_fn(phi: SmoothStep) -> Callable:
    return lambda E: np.exp(-2j * np.pi * phi(E)) - 1


def spectral_bound(H: TruncatedOperator) -> float:
    """Safe bound on ``||H||``: Lanczos estimate with a 2% margin, capped by Gershgorin."""
    A = H.matrix
    gersh = float(np.max(np.asarray(abs(A).sum(axis=1)))) if A.nnz else 0.0
    if A.shape[0] < 50:
        return float(np.max(np.abs(np.linalg.eigvalsh(A.toarray())), initial=0)) * 1.02 + 1e-9
    # seeded start vector: reproducible, and generic enough to overlap the top eigenvector
    v0 = np.random.default_rng(0).normal(size=A.shape[0]).astype(complex)
    lam = eigsh(A, k=1, which="LM", return_eigenvectors=False, tol=1e-8, v0=v0)
    est = abs(float(lam[0])) * 1.02 + 1e-6
    if H.norm_bound is not None:
        est = min(est, H.norm_bound * 1.001)
    return min(est, gersh) if gersh > 0 else est


def chebyshev_coefficients(f: Callable, bound: float, tol: float = 1e-5,
                           max_degree: int = 6000) -> np.ndarray:
    """Chebyshev coefficients of ``f`` on ``[-bound, bound]``, truncated when the tail drops below ``tol``."""
    M = 2 * max_degree
    theta = np.pi * (np.arange(M) + 0.5) / M
    vals = f(bound * np.cos(theta))
    c = (dct(vals.real, type=2) + 1j * dct(vals.imag, type=2)) / M
    c[0] /= 2
    c = c[:max_degree]
    tail = np.cumsum(np.abs(c[::-1]))[::-1]
    below = np.flatnonzero(tail < tol)
    deg = int(below[0]) if below.size else max_degree
    return c[:max(deg, 1)]


def chebyshev_apply(A: sp.spmatrix, coeffs: np.ndarray, bound: float, X: np.ndarray) -> np.ndarray:
    """``sum_k c_k T_k(A / bound) X`` by the three-term recurrence."""
    A = (A / bound).tocsr()
    t0 = X.astype(complex)
    out = coeffs[0] * t0
    if len(coeffs) == 1:
        return out
    t1 = A @ t0
    out += coeffs[1] * t1
    for ck in coeffs[2:]:
        t2 = 2 * (A @ t1) - t0
        out += ck * t2
        t0, t1 = t1, t2
    return out


def exp_obstruction(H: TruncatedOperator, phi: SmoothStep, method: str = "auto",
                    columns=None, tol: float = 1e-5) -> ExpUnitary:
    """Unitary ``exp(-2 pi i phi(H))``.

    ``method="dense"`` diagonalises the full matrix; ``"chebyshev"`` applies a
    polynomial expansion of ``exp(-2 pi i phi) - 1`` to the requested
    ``columns`` only; ``"auto"`` picks dense up to ``DENSE_LIMIT``.
    """
    if method == "auto":
        method = "dense" if H.dim <= DENSE_LIMIT or columns is None else "chebyshev"
    f = _phase_fn(phi)
    if method == "dense":
        E, V = sla.eigh(H.dense(), driver="evr")
        U = (V * np.exp(-2j * np.pi * phi(E))) @ V.conj().T
        out = ExpUnitary(H.region, phi, H.n, "dense", matrix=U)
        out.support_radius = _support_radius(H, U - np.eye(H.dim))
        return out
    if columns is None:
        raise ValueError("chebyshev route needs explicit columns")
    cols = np.unique(np.asarray(columns))
    bound = spectral_bound(H)
    coeffs = chebyshev_coefficients(f, bound, tol)
    X = np.zeros((H.dim, len(cols)), dtype=complex)
    X[cols, np.arange(len(cols))] = 1
    block = chebyshev_apply(H.matrix, coeffs, bound, X)
    return ExpUnitary(H.region, phi, H.n, "chebyshev", columns=cols, block=block, degree=len(coeffs))


def gap_eigenpairs(H: TruncatedOperator, b: float, c: float) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs with energies in the open interval ``(b, c)``."""
    E, V = sla.eigh(H.dense(), subset_by_value=(b, c), driver="evr")
    keep = (E > b) & (E < c)
    return E[keep], V[:, keep]


def exp_minus_one_gap(H: TruncatedOperator, phi: SmoothStep, columns) -> ExpUnitary:
    """Columns of ``U - 1`` from the eigenpairs inside ``(b, c)`` only (``U - 1`` vanishes elsewhere)."""
    cols = np.unique(np.asarray(columns))
    E, V = gap_eigenpairs(H, phi.b, phi.c)
    g = np.exp(-2j * np.pi * phi(E)) - 1
    block = (V * g) @ V[cols].conj().T
    return ExpUnitary(H.region, phi, H.n, "gap-eigh", columns=cols, block=block)


def _support_radius(H: TruncatedOperator, D: np.ndarray, tol: float = 1e-6) -> float:
    dist = np.repeat(path_distance(H.region), H.n)
    cut = np.repeat(H.region.cut_distance(), H.n)
    weight = np.linalg.norm(D, axis=0)
    keep = (weight > tol) & (dist < cut)
    return float(dist[keep].max()) if np.any(keep) else 0.0


# --- gap filling -------------------------------------------------------------

@dataclass
class GapFillingReport:
    b: float
    c: float
    energies: np.ndarray
    physical_weight: np.ndarray
    sample_weight: np.ndarray
    x_mean: np.ndarray
    y_mean: np.ndarray
    largest_subgap: float
    d: float
    table_threshold: float = 0.5

    @property
    def table(self) -> np.ndarray:
        """Indices of gap states with at least half their weight near the sample boundary."""
        return np.flatnonzero(self.sample_weight >= self.table_threshold)

    def csv_rows(self) -> list[str]:
        rows = ["index,energy,boundary_weight,x_mean,y_mean"]
        for k in self.table:
            rows.append(f"{k},{self.energies[k]:.12g},{self.physical_weight[k]:.12g},"
                        f"{self.x_mean[k]:.12g},{self.y_mean[k]:.12g}")
        return rows


def gap_filling_report(H: TruncatedOperator, b: float, c: float, d: float = 6.0,
                       eigvecs: bool = True) -> GapFillingReport:
    """Eigenstates of ``H`` inside ``(b, c)`` and their boundary localisation.

    ``physical_weight`` counts sites within ``d`` of the physical boundary;
    ``sample_weight`` also counts sites within ``d`` of the window cut.
    """
    E, V = gap_eigenpairs(H, b, c)
    region = H.region
    n = H.n
    prob = (np.abs(V) ** 2).reshape(region.n_sites, n, -1).sum(axis=1)
    dist = path_distance(region)
    cut = region.cut_distance()
    phys = (dist <= d).astype(float) @ prob
    samp = ((dist <= d) | (cut <= d)).astype(float) @ prob
    xm = region.x @ prob
    ym = region.y @ prob
    edges = np.concatenate([[b], np.sort(E), [c]])
    return GapFillingReport(b, c, E, phys, samp, xm, ym, float(np.max(np.diff(edges))), d)
