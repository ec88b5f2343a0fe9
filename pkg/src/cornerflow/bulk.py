"""Translation-invariant tight-binding models on Z^2.

A model is a finite map ``gamma -> W_gamma`` of ``n x n`` hopping matrices,
``H = sum_gamma U_gamma (x) W_gamma``, with real-space matrix elements
``<s'|H|s> = W_{s' - s}`` and Bloch matrices
``H_k = sum_gamma exp(i k . gamma) W_gamma``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIGMA_0 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

GAUGES = ("landau_x", "landau_y", "symmetric")


class ModelError(ValueError):
    """Invalid hopping model or twist."""


@dataclass
class HoppingModel:
    """Hopping matrices keyed by lattice displacement ``(gx, gy)``."""

    n: int
    hops: dict = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        clean = {}
        for g, W in self.hops.items():
            W = np.asarray(W, dtype=complex)
            if W.shape != (self.n, self.n):
                raise ModelError(f"hop {g} has shape {W.shape}, expected {(self.n, self.n)}")
            clean[(int(g[0]), int(g[1]))] = W
        self.hops = clean

    @property
    def hop_range(self) -> int:
        nz = [g for g, W in self.hops.items() if np.any(W != 0)]
        return max((max(abs(g[0]), abs(g[1])) for g in nz), default=0)

    @property
    def norm_bound(self) -> float:
        """Upper bound on the operator norm of the model and of any truncation."""
        return float(sum(np.linalg.norm(W, 2) for W in self.hops.values()))

    def conjugate(self) -> "HoppingModel":
        """Model with ``W_gamma -> conj(W_{-gamma})``: Bloch matrices ``conj(H_k)``, opposite Chern number."""
        hops = {g: np.conj(self.hops.get((-g[0], -g[1]), np.zeros((self.n, self.n))))
                for g in set(self.hops) | {(-g[0], -g[1]) for g in self.hops}}
        return HoppingModel(self.n, hops, name=f"conj({self.name})")

    def to_hop_lines(self) -> list[str]:
        """Explicit hop list lines ``gx gy re(W[0,0]) im(W[0,0]) ...`` in row-major order."""
        out = []
        for g in sorted(self.hops):
            W = self.hops[g].ravel()
            vals = " ".join(f"{v.real:.17g} {v.imag:.17g}" for v in W)
            out.append(f"{g[0]} {g[1]} {vals}")
        return out

    @classmethod
    def from_hop_lines(cls, lines, n: int, name: str = "explicit") -> "HoppingModel":
        hops = {}
        for line in lines:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            vals = np.array(parts[2:], dtype=float)
            if vals.size != 2 * n * n:
                raise ModelError(f"hop line {line!r} needs {2 * n * n} numbers after gamma")
            W = (vals[0::2] + 1j * vals[1::2]).reshape(n, n)
            hops[(int(parts[0]), int(parts[1]))] = W
        return cls(n, hops, name=name)


@dataclass
class ValidationReport:
    ok: bool
    max_deviation: float
    offending: list


def validate(model: HoppingModel, tol: float = 1e-12) -> ValidationReport:
    """Check ``W_gamma^dagger = W_{-gamma}`` for every stored ``gamma``."""
    worst = 0.0
    bad = []
    for g, W in model.hops.items():
        partner = model.hops.get((-g[0], -g[1]))
        if partner is None:
            if np.any(W != 0):
                bad.append(g)
                worst = max(worst, float(np.linalg.norm(W)))
            continue
        dev = float(np.linalg.norm(W.conj().T - partner))
        worst = max(worst, dev)
        if dev > tol:
            bad.append(g)
    return ValidationReport(not bad, worst, sorted(bad))


def _require_valid(model: HoppingModel):
    rep = validate(model)
    if not rep.ok:
        raise ModelError(f"non-Hermitian hopping at {rep.offending} (deviation {rep.max_deviation:.3g})")


def bloch(model: HoppingModel, k) -> np.ndarray:
    """Bloch matrix ``H_k``; ``k`` may carry leading batch axes, shape ``(..., 2)``."""
    k = np.asarray(k, dtype=float)
    H = np.zeros(k.shape[:-1] + (model.n, model.n), dtype=complex)
    for g, W in model.hops.items():
        phase = np.exp(1j * (k[..., 0] * g[0] + k[..., 1] * g[1]))
        H += phase[..., None, None] * W
    return H


def k_grid(N: int) -> np.ndarray:
    """``N x N`` grid of the Brillouin torus ``[0, 2 pi)^2`` indexed ``[ix, iy]``."""
    ks = 2 * np.pi * np.arange(N) / N
    KX, KY = np.meshgrid(ks, ks, indexing="ij")
    return np.stack([KX, KY], axis=-1)


@dataclass
class BulkGap:
    a: float
    b: float
    c: float
    d: float
    resolved: bool
    band_index: int = -1

    @property
    def width(self) -> float:
        return self.c - self.b


GAP_THRESHOLD = 1e-6


def bulk_gap(model: HoppingModel, N: int = 64) -> BulkGap:
    """Largest gap between consecutive bands on the ``N x N`` k-grid.

    ``band_index`` counts the bands below the gap.
    """
    if N < 16:
        raise ModelError("k-grid must have N >= 16")
    _require_valid(model)
    E = np.linalg.eigvalsh(bloch(model, k_grid(N))).reshape(-1, model.n)
    lo, hi = E.min(axis=0), E.max(axis=0)
    a, d = float(lo[0]), float(hi[-1])
    if model.n < 2:
        return BulkGap(a, d, d, d, False)
    gaps = lo[1:] - hi[:-1]
    j = int(np.argmax(gaps))
    resolved = bool(gaps[j] > GAP_THRESHOLD)
    return BulkGap(a, float(hi[j]), float(lo[j + 1]), d, resolved, j + 1)


def qwz_model(m: float) -> HoppingModel:
    """Two-band model with ``H_k = sin kx sx + sin ky sy + (m - cos kx - cos ky) sz``.

    Gapless at ``m in {0, +-2}``; Chern number ``+-1`` for ``0 < |m| < 2``.
    """
    tx = -0.5j * SIGMA_X - 0.5 * SIGMA_Z
    ty = -0.5j * SIGMA_Y - 0.5 * SIGMA_Z
    hops = {(0, 0): m * SIGMA_Z, (1, 0): tx, (-1, 0): tx.conj().T,
            (0, 1): ty, (0, -1): ty.conj().T}
    return HoppingModel(2, hops, name=f"qwz(m={m:g})")


def atomic_model(mass: float = 1.0) -> HoppingModel:
    """Onsite ``mass * sz`` only: the trivial insulator."""
    return HoppingModel(2, {(0, 0): mass * SIGMA_Z}, name=f"atomic({mass:g})")


def haldane_model(t1: float = 1.0, t2: float = 0.1, phi: float = np.pi / 2,
                  M_onsite: float = 0.0) -> HoppingModel:
    """Haldane honeycomb model flattened onto Z^2 with a two-site cell.

    The Bravais basis vectors are the lattice unit vectors; site A of cell
    ``s`` bonds to B in cells ``s``, ``s - (1, 0)`` and ``s - (0, 1)``.
    Second-neighbour hops along the cyclic triple ``(1,0), (-1,1), (0,-1)``
    carry ``t2 exp(+i phi)`` on A and ``t2 exp(-i phi)`` on B.
    """
    hops: dict = {}

    def add(g, W):
        W = np.asarray(W, dtype=complex)
        hops[g] = hops.get(g, 0) + W
        if g == (0, 0):
            return
        mg = (-g[0], -g[1])
        hops[mg] = hops.get(mg, 0) + W.conj().T

    add((0, 0), np.array([[M_onsite, t1], [t1, -M_onsite]]))
    for g in ((-1, 0), (0, -1)):
        W = np.zeros((2, 2), dtype=complex)
        W[1, 0] = t1
        add(g, W)
    for g in ((1, 0), (-1, 1), (0, -1)):
        add(g, np.diag([t2 * np.exp(1j * phi), t2 * np.exp(-1j * phi)]))
    return HoppingModel(2, hops, name=f"haldane(t1={t1:g},t2={t2:g},phi={phi:g},M={M_onsite:g})")


def hofstadter_model(t: float = 1.0) -> HoppingModel:
    """Single-orbital nearest-neighbour square lattice; twist it to get Hofstadter bands."""
    h = -t * np.ones((1, 1))
    return HoppingModel(1, {(1, 0): h, (-1, 0): h, (0, 1): h, (0, -1): h}, name=f"square(t={t:g})")


def bott_generator_model() -> HoppingModel:
    """Model whose lower band is the reference Bott projection family.

    ``H_k = -(n(k) . sigma)`` with ``n`` the QWZ(1) vector field, so the filled
    band projects onto ``(1 + n_hat . sigma) / 2``.
    """
    q = qwz_model(1.0)
    return HoppingModel(2, {g: -W for g, W in q.hops.items()}, name="bott_generator")


@dataclass(frozen=True)
class MagneticTwist:
    """Uniform flux ``theta`` per unit plaquette in a fixed gauge.

    Peierls phases (hop from ``r`` to ``r'``):

    * ``landau_x``:  ``2 pi theta (x + x')/2 (y' - y)``
    * ``landau_y``:  ``-2 pi theta (y + y')/2 (x' - x)``
    * ``symmetric``: ``pi theta (r ^ r')``

    Each gives phase product ``exp(2 pi i theta)`` around an anticlockwise
    unit plaquette, and magnetic translations with
    ``T_x T_y = exp(2 pi i theta) T_y T_x``.
    """

    theta: float = 0.0
    gauge: str = "landau_x"

    def __post_init__(self):
        if self.gauge not in GAUGES:
            raise ModelError(f"unknown gauge {self.gauge!r}")

    def phase(self, x, y, xp, yp) -> np.ndarray:
        """Peierls phase angle of the hop ``(x, y) -> (xp, yp)``."""
        th = 2 * np.pi * self.theta
        if self.gauge == "landau_x":
            return th * (x + xp) / 2 * (yp - y)
        if self.gauge == "landau_y":
            return -th * (y + yp) / 2 * (xp - x)
        return th / 2 * (x * yp - y * xp)

    def translation_phase(self, gamma, x, y) -> np.ndarray:
        """Phase ``f`` with ``(T_gamma psi)(r) = exp(i f(r)) psi(r - gamma)``."""
        th = 2 * np.pi * self.theta
        if self.gauge == "landau_x":
            return th * gamma[0] * y
        if self.gauge == "landau_y":
            return -th * gamma[1] * x
        return th / 2 * (gamma[0] * y - gamma[1] * x)


def magnetic_supercell_model(model: HoppingModel, theta_p: int, theta_q: int) -> HoppingModel:
    """Landau-x twisted model at ``theta = p/q`` on the ``(q, 1)`` magnetic cell.

    Internal index is ``x0 * n + orbital`` for ``x0`` in ``range(q)``; the
    returned model lives on the superlattice spanned by ``(q, 0)`` and ``(0, 1)``.
    """
    q = int(theta_q)
    twist = MagneticTwist(theta_p / q, "landau_x")
    n = model.n
    hops: dict = {}
    for j in range(q):
        for g, W in model.hops.items():
            xt = j + g[0]
            cell = (xt // q, g[1])
            jt = xt % q
            ph = np.exp(1j * twist.phase(j, 0, xt, g[1]))
            block = hops.setdefault(cell, np.zeros((n * q, n * q), dtype=complex))
            block[jt * n:(jt + 1) * n, j * n:(j + 1) * n] += ph * W
    return HoppingModel(n * q, hops, name=f"{model.name}@theta={theta_p}/{q}")


def torus_hamiltonian(model: HoppingModel, N: int) -> np.ndarray:
    """Dense real-space Hamiltonian on the periodic ``N x N`` torus, site order ``x + N y``."""
    n = model.n
    H = np.zeros((N * N * n, N * N * n), dtype=complex)
    for g, W in model.hops.items():
        for y in range(N):
            for x in range(N):
                s = x + N * y
                t = (x + g[0]) % N + N * ((y + g[1]) % N)
                H[t * n:(t + 1) * n, s * n:(s + 1) * n] += W
    return H
