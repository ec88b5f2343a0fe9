"""Compression of lattice operators onto a region.

``A -> p A i`` keeps the matrix elements between sites of the region and
drops everything else.  The map is linear and respects adjoints but is not
multiplicative; the failure of multiplicativity is concentrated on faces.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh
from scipy.spatial import cKDTree

from .bulk import HoppingModel, MagneticTwist, _require_valid
from .geometry import (LatticePoint, Region, boundary_path, face_mask, face_sites,
                       outward_vector)


@dataclass
class TruncatedOperator:
    """Sparse operator on ``l2(region sites) (x) C^n``; dof index is ``site * n + orbital``."""

    matrix: sp.csr_matrix
    region: Region
    n: int = 1
    tag: str = ""
    norm_bound: float | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def interior_mask(self) -> np.ndarray:
        return np.repeat(self.region.interior(), self.n)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __add__(self, other: "TruncatedOperator") -> "TruncatedOperator":
        nb = None
        if self.norm_bound is not None and other.norm_bound is not None:
            nb = self.norm_bound + other.norm_bound
        return TruncatedOperator((self.matrix + other.matrix).tocsr(), self.region, self.n,
                                 f"{self.tag}+{other.tag}", nb)

    def to_coo_text(self) -> str:
        """Coordinate list ``row col re im`` with a header naming region and tag."""
        m = self.matrix.tocoo()
        order = np.lexsort((m.col, m.row))
        lines = [f"# region {self.region.hash} operator {self.tag} dim {self.dim}"]
        for r, c, v in zip(m.row[order], m.col[order], m.data[order]):
            lines.append(f"{r} {c} {v.real:.17g} {v.imag:.17g}")
        return "\n".join(lines) + "\n"


def _grid_index(region: Region) -> np.ndarray:
    L = region.L
    grid = np.full((2 * L + 1, 2 * L + 1), -1, dtype=np.int64)
    grid[region.y + L, region.x + L] = np.arange(region.n_sites)
    return grid


def _shifted_pairs(region: Region, gamma, grid=None):
    """Source/target site indices for ``s -> s + gamma`` with both in the region."""
    grid = _grid_index(region) if grid is None else grid
    L = region.L
    tx, ty = region.x + gamma[0], region.y + gamma[1]
    ok = (np.abs(tx) <= L) & (np.abs(ty) <= L)
    src = np.flatnonzero(ok)
    tgt = grid[ty[ok] + L, tx[ok] + L]
    keep = tgt >= 0
    return src[keep], tgt[keep]


def truncate(model: HoppingModel, region: Region, twist: MagneticTwist | None = None) -> TruncatedOperator:
    """Compressed Hamiltonian ``<s'|H|s> = W_{s'-s}`` for ``s, s'`` in the region."""
    _require_valid(model)
    if region.L <= 2 * model.hop_range:
        raise ValueError("window too small for the hopping range")
    n = model.n
    grid = _grid_index(region)
    rows, cols, vals = [], [], []
    jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    for g, W in sorted(model.hops.items()):
        if not np.any(W):
            continue
        src, tgt = _shifted_pairs(region, g, grid)
        w = np.broadcast_to(W, (len(src), n, n))
        if twist is not None and twist.theta != 0:
            ph = np.exp(1j * twist.phase(region.x[src], region.y[src], region.x[tgt], region.y[tgt]))
            w = w * ph[:, None, None]
        rows.append((tgt[:, None, None] * n + jj).ravel())
        cols.append((src[:, None, None] * n + ii).ravel())
        vals.append(np.asarray(w).ravel())
    dim = region.n_sites * n
    if rows:
        M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(dim, dim)).tocsr()
    else:
        M = sp.csr_matrix((dim, dim), dtype=complex)
    M.eliminate_zeros()
    tag = model.name if twist is None else f"{model.name}@theta={twist.theta:g}/{twist.gauge}"
    return TruncatedOperator(M, region, n, tag, model.norm_bound)


def magnetic_operator(model: HoppingModel, twist: MagneticTwist, region: Region) -> TruncatedOperator:
    """Truncation with Peierls phases realising flux ``twist.theta`` per plaquette."""
    return truncate(model, region, twist)


def magnetic_translation(region: Region, gamma, twist: MagneticTwist, n: int = 1) -> TruncatedOperator:
    """Compressed magnetic translation ``(T psi)(r) = exp(i f(r)) psi(r - gamma)``."""
    src, tgt = _shifted_pairs(region, gamma)
    ph = np.exp(1j * twist.translation_phase(gamma, region.x[tgt], region.y[tgt]))
    M = sp.coo_matrix((ph, (tgt, src)), shape=(region.n_sites,) * 2).tocsr()
    if n > 1:
        M = sp.kron(M, sp.identity(n), format="csr")
    return TruncatedOperator(M, region, n, f"T{tuple(gamma)}")


def translation(region: Region, gamma, n: int = 1) -> TruncatedOperator:
    """Partial isometry ``V_gamma |s> = |s + gamma>`` when both sites are in the region."""
    src, tgt = _shifted_pairs(region, gamma)
    M = sp.coo_matrix((np.ones(len(src)), (tgt, src)), shape=(region.n_sites,) * 2).tocsr()
    if n > 1:
        M = sp.kron(M, sp.identity(n), format="csr")
    return TruncatedOperator(M, region, n, f"V{tuple(int(c) for c in gamma)}")


def projection(region: Region, mask: np.ndarray, n: int = 1, tag: str = "P") -> TruncatedOperator:
    d = np.repeat(np.asarray(mask, dtype=float), n)
    return TruncatedOperator(sp.diags(d, format="csr"), region, n, tag)


@dataclass
class FaceProjection:
    face: int
    operator: TruncatedOperator

    @property
    def matrix(self):
        return self.operator.matrix


def face_projection(region: Region, i: int, n: int = 1) -> FaceProjection:
    return FaceProjection(i, projection(region, face_mask(region, i), n, f"P_F{i}"))


def _max_dev(A, mask) -> float:
    """Largest entry of ``A`` restricted to interior rows and columns."""
    A = sp.csr_matrix(A)
    idx = np.flatnonzero(mask)
    sub = A[idx][:, idx]
    return float(np.max(np.abs(sub.data))) if sub.nnz else 0.0


def _set_projection(region: Region, gamma, sign: int) -> np.ndarray:
    """Mask of sites ``s`` with ``s + sign * gamma`` in the (infinite) region."""
    return np.asarray(region.contains(region.x + sign * gamma[0], region.y + sign * gamma[1]))


@dataclass
class IdentityReport:
    deviations: dict
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(v == 0 for v in self.deviations.values())

    def failed(self) -> list:
        return [k for k, v in self.deviations.items() if v != 0]


def membership_deviation(region: Region) -> int:
    """Number of sites where the enumeration disagrees with cone, bump and window."""
    L = region.L
    r = np.arange(-L, L + 1)
    X, Y = np.meshgrid(r, r)
    want = np.asarray(region.contains(X.ravel(), Y.ravel()))
    expected = {(int(a), int(b)) for a, b, w in zip(X.ravel(), Y.ravel(), want) if w}
    have = [tuple(map(int, s)) for s in region.sites.tolist()]
    bad = len(expected.symmetric_difference(have)) + (len(have) - len(set(have)))
    bad += sum(1 for k, s in enumerate(have) if region.index.get(s) != k)
    order = np.lexsort((region.x, region.y))
    bad += int(np.any(order != np.arange(region.n_sites)))
    return bad


def verify_identities(region: Region) -> IdentityReport:
    """Check the exact 0/1 identities between translations and face projections.

    Every identity compares an operator product against a set-theoretic
    oracle built from region membership, restricted to the interior mask.
    Deviations are exact (entries are small integers).
    """
    mask = region.interior()
    N = region.n_sites
    eye = sp.identity(N, format="csr")
    dev: dict = {"membership": float(membership_deviation(region))}
    details: dict = {}
    V = {g: translation(region, g).matrix for g in [(1, 0), (0, 1), (-1, 0), (0, -1)]}
    Vx, Vy = V[(1, 0)], V[(0, 1)]
    for name, g in (("x", (1, 0)), ("y", (0, 1))):
        Vg = V[g]
        comm = Vg.T @ Vg - Vg @ Vg.T
        oracle = sp.diags(_set_projection(region, g, 1).astype(float)
                          - _set_projection(region, g, -1).astype(float))
        dev[f"commutator_{name}"] = _max_dev(comm - oracle, mask)
    # [V_y^*, V_x]
    comm = Vy.T @ Vx - Vx @ Vy.T
    diag = (1, -1)
    src, tgt = _shifted_pairs(region, diag)
    a = _set_projection(region, (1, 0), 1)[src]      # s + x in R
    b = _set_projection(region, (0, -1), 1)[src]     # s - y in R
    coef = a.astype(float) - b.astype(float)
    oracle = sp.coo_matrix((coef, (tgt, src)), shape=(N, N))
    dev["commutator_yx"] = _max_dev(comm - oracle, mask)
    P = {}
    for i in (1, 2):
        P[i] = face_projection(region, i).matrix
        v = outward_vector(region.cone, i)
        Vv = translation(region, v).matrix
        dev[f"face{i}_killed"] = _max_dev(Vv @ P[i], mask)
    for i in (1, 2):
        v = outward_vector(region.cone, i)
        Vg = translation(region, (-v[0], -v[1])).matrix
        target = P[i]
        if region.cone.kind == "half_plane":
            # both faces sit on the same line
            target = sp.diags(np.minimum(P[1].diagonal() + P[2].diagonal(), 1.0))
        dev[f"face{i}_range"] = _max_dev(target - (eye - Vg @ Vg.T), mask)
    if region.cone.kind == "concave_cone":
        # the faces of a concave corner are disjoint rays
        rank = int(np.count_nonzero((P[1] @ P[2]).diagonal()[mask]))
        dev["corner_rank"] = float(rank)
        details["corner_rank"] = rank
    elif region.cone.kind == "convex_cone" and region.cone.rational:
        # shift face 1 along a2 and face 2 along a1 until they meet in one site
        a1, a2 = region.cone.a1, region.cone.a2
        found = None
        for j in range(region.bump.radius + 3):
            S1 = translation(region, (j * a2[0], j * a2[1])).matrix
            S2 = translation(region, (j * a1[0], j * a1[1])).matrix
            prod = (S1 @ P[1] @ S1.T) @ (S2 @ P[2] @ S2.T)
            rank = int(np.count_nonzero(prod.diagonal()[mask]))
            if rank == 1:
                found = j
                details["corner_site"] = tuple(map(int, region.sites[np.flatnonzero(prod.diagonal())[0]]))
                break
        dev["corner_rank"] = 0.0 if found is not None else 1.0
        details["corner_shift"] = found
    if region.cone.rational and region.cone.a1 == (1, 0) and region.cone.a2 == (0, 1):
        # standard family: commutators are face projections up to finite corrections near the corner
        for name, Vg, i in (("x", Vx, 2), ("y", Vy, 1)):
            corr = (Vg.T @ Vg - Vg @ Vg.T) - P[i]
            idx = np.flatnonzero(mask)
            sub = sp.csr_matrix(corr)[idx][:, idx]
            pts = sorted({tuple(map(int, region.sites[idx[r]])) for r in sub.nonzero()[0]})
            details[f"commutator_{name}_correction"] = pts
            R = region.bump.radius + 1
            dev[f"commutator_{name}_local"] = float(sum(1 for p in pts if max(map(abs, p)) > R))
    return IdentityReport(dev, details)


def path_distance(region: Region, path=None) -> np.ndarray:
    """Euclidean distance of every site to the nearest physical boundary site."""
    path = boundary_path(region) if path is None else path
    tree = cKDTree(np.asarray(path, dtype=float))
    d, _ = tree.query(region.sites.astype(float))
    return d


def boundary_perturbation(region: Region, spec: dict, n: int = 1) -> TruncatedOperator:
    """Hermitian term supported near the physical boundary.

    ``spec`` kinds:

    * ``{"kind": "zero"}``
    * ``{"kind": "onsite", "face": i, "value": v}``: ``v`` on every face-``i`` site
    * ``{"kind": "random", "norm": r, "depth": d, "seed": s}``: random
      nearest-neighbour Hermitian term on sites within ``d`` of the boundary
      path, rescaled to operator norm ``r``
    * ``{"kind": "matrix", "matrix": A, "depth": d}``: explicit dense matrix,
      rejected when non-Hermitian or supported deeper than ``d``
    """
    kind = spec.get("kind", "zero")
    dim = region.n_sites * n
    if kind == "zero":
        return TruncatedOperator(sp.csr_matrix((dim, dim), dtype=complex), region, n, "zero", 0.0)
    if kind == "onsite":
        d = np.repeat(face_mask(region, int(spec["face"])) * float(spec["value"]), n)
        return TruncatedOperator(sp.diags(d.astype(complex), format="csr"), region, n,
                                 "onsite", abs(float(spec["value"])))
    depth = float(spec.get("depth", 2))
    near = path_distance(region) <= depth
    if kind == "matrix":
        A = np.asarray(spec["matrix"], dtype=complex)
        if A.shape != (dim, dim):
            raise ValueError("perturbation matrix has the wrong shape")
        if np.max(np.abs(A - A.conj().T), initial=0) > 1e-12:
            raise ValueError("boundary perturbation must be Hermitian")
        support = np.any(np.abs(A) > 0, axis=0) | np.any(np.abs(A) > 0, axis=1)
        if np.any(support & ~np.repeat(near, n)):
            raise ValueError("boundary perturbation reaches into the bulk")
        return TruncatedOperator(sp.csr_matrix(A), region, n, "matrix", float(np.linalg.norm(A, 2)))
    if kind != "random":
        raise ValueError(f"unknown perturbation kind {kind!r}")
    rng = np.random.default_rng(spec.get("seed", 0))
    sites = np.flatnonzero(near)
    onsite = rng.normal(size=(len(sites), n, n)) + 1j * rng.normal(size=(len(sites), n, n))
    rows, cols, vals = [], [], []
    jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    rows.append((sites[:, None, None] * n + jj).ravel())
    cols.append((sites[:, None, None] * n + ii).ravel())
    vals.append(onsite.ravel())
    for g in ((1, 0), (0, 1)):
        src, tgt = _shifted_pairs(region, g)
        keep = near[src] & near[tgt]
        src, tgt = src[keep], tgt[keep]
        hop = rng.normal(size=(len(src), n, n)) + 1j * rng.normal(size=(len(src), n, n))
        rows.append((tgt[:, None, None] * n + jj).ravel())
        cols.append((src[:, None, None] * n + ii).ravel())
        vals.append(hop.ravel())
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(dim, dim)).tocsr()
    A = (A + A.getH()) / 2
    # seeded start vector keeps the rescaling bit-reproducible
    v0 = np.random.default_rng(0).normal(size=dim).astype(complex)
    lam = eigsh(A, k=1, which="LM", return_eigenvectors=False, tol=1e-10, v0=v0)
    A = A * (float(spec.get("norm", 0.1)) / abs(lam[0]))
    return TruncatedOperator(A.tocsr(), region, n, "random", float(spec.get("norm", 0.1)))
