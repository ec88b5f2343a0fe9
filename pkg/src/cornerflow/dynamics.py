"""Boundary wavepackets and their exact unitary evolution."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.spatial import cKDTree

from .geometry import Region, arc_length, boundary_path
from .topology import gap_eigenpairs
from .truncation import TruncatedOperator, path_distance


class DynamicsError(RuntimeError):
    """No usable edge states for a packet."""


@dataclass
class Wavepacket:
    psi: np.ndarray = field(repr=False)
    energy_window: tuple[float, float]
    s0: float
    center: tuple[int, int]
    n_states: int

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.psi))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray = field(repr=False)

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def energies(self, H) -> np.ndarray:
        """``<psi(t)|H|psi(t)>`` at every time."""
        A = H.matrix if isinstance(H, TruncatedOperator) else H
        return np.real(np.einsum("ti,ti->t", self.states.conj(), (A @ self.states.T).T))


@dataclass
class Spectrum:
    """Full eigendecomposition, reused by packet preparation and evolution."""

    energies: np.ndarray
    vectors: np.ndarray = field(repr=False)


def spectrum(H: TruncatedOperator | np.ndarray) -> Spectrum:
    A = H.dense() if isinstance(H, TruncatedOperator) else np.asarray(H)
    E, V = sla.eigh(A, driver="evr")
    return Spectrum(E, V)


def _site_weights(V: np.ndarray, n: int) -> np.ndarray:
    return (np.abs(V) ** 2).reshape(-1, n, V.shape[-1]).sum(axis=1)


def prepare_edge_packet(H: TruncatedOperator, b: float, c: float, center, width: float = 4.0,
                        d: float = 6.0, min_weight: float = 0.5,
                        spec: Spectrum | None = None) -> Wavepacket:
    """Gaussian at ``center`` projected onto edge eigenstates in the middle half of ``(b, c)``.

    Eligible states have at least ``min_weight`` of their weight within ``d``
    sites of the sample boundary (physical edge or window cut).  The internal
    spinor is the one whose projected Gaussian has the largest norm.
    """
    region = H.region
    n = H.n
    lo, hi = b + (c - b) / 4, c - (c - b) / 4
    if spec is None:
        E, V = gap_eigenpairs(H, lo, hi)
    else:
        sel = (spec.energies > lo) & (spec.energies < hi)
        E, V = spec.energies[sel], spec.vectors[:, sel]
    near = (path_distance(region) <= d) | (region.cut_distance() <= d)
    weight = near.astype(float) @ _site_weights(V, n) if len(E) else np.zeros(0)
    keep = weight >= min_weight
    if keep.sum() < 3:
        raise DynamicsError(f"only {int(keep.sum())} edge states in ({lo:.3g}, {hi:.3g})")
    V = V[:, keep]
    cx, cy = center
    g = np.exp(-((region.x - cx) ** 2 + (region.y - cy) ** 2) / (2 * width**2))
    # overlaps <v_j | g (x) e_a> for each orbital a
    ov = np.einsum("saj,s->ja", V.reshape(region.n_sites, n, -1).conj(), g)
    _, chi = np.linalg.eigh(ov.conj().T @ ov)
    coeff = ov @ chi[:, -1]
    psi = V @ coeff
    psi /= np.linalg.norm(psi)
    path = boundary_path(region)
    s = arc_length(path)
    k = int(np.argmin([(p.x - cx) ** 2 + (p.y - cy) ** 2 for p in path]))
    return Wavepacket(psi, (lo, hi), float(s[k]), (int(cx), int(cy)), int(keep.sum()))


def evolve(H, psi0: np.ndarray, times, spec: Spectrum | None = None) -> Trajectory:
    """``psi(t) = exp(-i H t) psi0`` by eigendecomposition."""
    if spec is None:
        spec = spectrum(H)
    times = np.asarray(times, dtype=float)
    c = spec.vectors.conj().T @ np.asarray(psi0, dtype=complex)
    phases = np.exp(-1j * np.outer(times, spec.energies))
    states = (phases * c) @ spec.vectors.T
    return Trajectory(times, states)


@dataclass
class EdgeMetrics:
    times: np.ndarray
    s: np.ndarray
    beta: np.ndarray
    horizon: int
    chirality: int
    min_beta: float
    sign_violations: float
    corner_passed: bool
    beta_threshold: float
    energy: np.ndarray | None = None

    @property
    def monotone(self) -> bool:
        return self.sign_violations <= 0.05

    def csv_rows(self) -> list[str]:
        energy = np.full(len(self.times), np.nan) if self.energy is None else self.energy
        rows = ["t,s_mean,beta,energy"]
        rows += [f"{t:.12g},{s:.12g},{b:.12g},{e:.12g}"
                 for t, s, b, e in zip(self.times, self.s, self.beta, energy)]
        return rows

    def report(self) -> dict:
        return {"chirality": self.chirality, "min_beta": self.min_beta,
                "sign_violations": self.sign_violations, "monotone": self.monotone,
                "corner_passed": self.corner_passed, "horizon": self.horizon,
                "beta_threshold": self.beta_threshold}


def edge_following_metrics(traj: Trajectory, region: Region, n: int = 1, d: float = 3.0,
                           beta_threshold: float = 0.8, horizon: float | None = None,
                           H=None) -> EdgeMetrics:
    """Arc-length mean ``s(t)``, boundary weight ``beta(t)`` and corner passage.

    ``beta`` is the weight within ``d`` sites of the physical boundary and
    ``s`` the weight-averaged arc length of the nearest path site over that
    band.  Samples after ``|s|`` first exceeds ``horizon`` (default ``0.8 L``)
    are dropped.  ``corner_passed`` requires ``s`` to change sign while
    ``beta >= beta_threshold`` at every retained sample.  Passing ``H``
    records the energy series.
    """
    path = boundary_path(region)
    arc = arc_length(path)
    pts = np.array([(p.x, p.y) for p in path], dtype=float)
    dist, nearest = cKDTree(pts).query(np.column_stack([region.x, region.y]))
    band = dist <= d
    prob = (np.abs(traj.states) ** 2).reshape(len(traj.times), region.n_sites, n).sum(axis=2)
    beta = prob[:, band].sum(axis=1)
    s = (prob[:, band] @ arc[nearest[band]]) / np.maximum(beta, 1e-300)
    lim = 0.8 * region.L if horizon is None else horizon
    over = np.flatnonzero(np.abs(s) > lim)
    stop = int(over[0]) if over.size else len(s)
    s_in, b_in = s[:stop], beta[:stop]
    ds = np.diff(s_in)
    chir = int(np.sign(ds.mean())) if ds.size else 0
    active = b_in[1:] >= 0.5
    viol = float(np.mean(np.sign(ds[active]) != chir)) if np.any(active) else 1.0
    min_beta = float(b_in.min()) if b_in.size else 0.0
    crossed = s_in.size > 1 and s_in.min() < 0 < s_in.max()
    energy = None if H is None else traj.energies(H)
    return EdgeMetrics(traj.times, s, beta, stop, chir, min_beta, viol,
                       bool(crossed and min_beta >= beta_threshold), beta_threshold, energy)
