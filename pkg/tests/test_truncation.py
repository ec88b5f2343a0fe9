import time

import numpy as np
import pytest

from cornerflow.bulk import haldane_model, qwz_model
from cornerflow.geometry import (CONCAVE_STANDARD, FIG4_BUMP, FIG5_CONE, STAIRCASE, STANDARD,
                                 build_region, face_mask)
from cornerflow.truncation import (boundary_perturbation, face_projection, path_distance,
                                   translation, truncate, verify_identities)

REGIONS = {
    "standard": (STANDARD, None),
    "staircase": (STANDARD, STAIRCASE),
    "fig4": (STANDARD, FIG4_BUMP),
    "det3": (FIG5_CONE, None),
    "concave": (CONCAVE_STANDARD, None),
}


@pytest.mark.parametrize("name", list(REGIONS))
def test_identities_hold(name):
    cone, bump = REGIONS[name]
    rep = verify_identities(build_region(cone, bump, L=30))
    assert rep.ok, rep.failed()


def test_corner_shift_oracles():
    shifts = {name: verify_identities(build_region(c, b, L=20)).details.get("corner_shift")
              for name, (c, b) in REGIONS.items() if name != "concave"}
    assert shifts == {"standard": 0, "staircase": 1, "fig4": 2, "det3": 0}
    rep = verify_identities(build_region(STANDARD, STAIRCASE, L=20))
    assert rep.details["corner_site"] == (1, 1)
    assert verify_identities(build_region(CONCAVE_STANDARD, L=20)).details["corner_rank"] == 0


def test_fig4_commutator_corrections():
    details = verify_identities(build_region(STANDARD, FIG4_BUMP, L=20)).details
    assert details["commutator_x_correction"] == [(0, 2), (4, 0)]
    assert details["commutator_y_correction"] == [(-1, 4), (1, 1)]


def test_standard_has_no_corrections():
    details = verify_identities(build_region(STANDARD, L=20)).details
    assert details["commutator_x_correction"] == []
    assert details["commutator_y_correction"] == []


def test_truncation_is_not_multiplicative():
    r = build_region(STANDARD, L=12)
    Vx = translation(r, (1, 0)).dense()
    mask = r.interior()
    defect = (np.eye(r.n_sites) - Vx @ Vx.T)[np.ix_(mask, mask)]
    P2 = face_projection(r, 2).operator.dense()[np.ix_(mask, mask)]
    np.testing.assert_array_equal(defect, P2)
    assert np.count_nonzero(P2) > 0


def test_truncated_entries_match_hops():
    model = haldane_model()
    r = build_region(STANDARD, STAIRCASE, L=8)
    H = truncate(model, r).dense()
    np.testing.assert_allclose(H, H.conj().T, atol=1e-15)
    n = model.n
    for s in [(3, 3), (1, 1), (0, 5)]:
        for g, W in model.hops.items():
            t = (s[0] + g[0], s[1] + g[1])
            if t in r.index:
                i, j = r.index[t], r.index[s]
                np.testing.assert_array_equal(H[i * n:(i + 1) * n, j * n:(j + 1) * n], W)


def test_window_too_small_for_range():
    with pytest.raises(ValueError):
        truncate(qwz_model(1.0), build_region(STANDARD, L=2))


def test_coo_text_header():
    r = build_region(STANDARD, L=4)
    text = truncate(qwz_model(1.0), r).to_coo_text()
    assert text.splitlines()[0] == f"# region {r.hash} operator qwz(m=1) dim {2 * r.n_sites}"


def test_random_perturbation_contract():
    r = build_region(STANDARD, FIG4_BUMP, L=16)
    P = boundary_perturbation(r, {"kind": "random", "norm": 0.6, "depth": 2, "seed": 3}, n=2)
    A = P.dense()
    np.testing.assert_allclose(A, A.conj().T, atol=1e-14)
    assert np.linalg.norm(A, 2) == pytest.approx(0.6, rel=1e-8)
    support = np.any(np.abs(A) > 0, axis=0).reshape(-1, 2).any(axis=1)
    assert np.all(path_distance(r)[support] <= 2)
    again = boundary_perturbation(r, {"kind": "random", "norm": 0.6, "depth": 2, "seed": 3}, n=2)
    np.testing.assert_array_equal(A, again.dense())


def test_onsite_and_matrix_perturbations():
    r = build_region(STANDARD, L=6)
    P = boundary_perturbation(r, {"kind": "onsite", "face": 1, "value": 0.5})
    np.testing.assert_array_equal(P.dense().diagonal(), 0.5 * face_mask(r, 1))
    N = r.n_sites
    bad = np.zeros((N, N))
    bad[0, 1] = 1.0
    with pytest.raises(ValueError, match="Hermitian"):
        boundary_perturbation(r, {"kind": "matrix", "matrix": bad})
    deep = np.zeros((N, N))
    k = r.index[(4, 4)]
    deep[k, k] = 1.0
    with pytest.raises(ValueError, match="bulk"):
        boundary_perturbation(r, {"kind": "matrix", "matrix": deep, "depth": 2})
    with pytest.raises(ValueError):
        boundary_perturbation(r, {"kind": "gaussian"})


def test_identity_suite_runtime():
    t0 = time.perf_counter()
    for cone, bump in REGIONS.values():
        verify_identities(build_region(cone, bump, L=30))
    assert time.perf_counter() - t0 < 10
