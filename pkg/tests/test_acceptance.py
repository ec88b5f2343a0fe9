"""Acceptance suite: one test and one printed PASS/FAIL line per criterion."""
import math
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from cornerflow.boundary import (Derivation, FaceTrace, boundary_currents, cocycle_pairing,
                                 derivation_apply, edge_travel, edge_travel_smooth,
                                 irrational_edge_travel, sturmian_steps)
from cornerflow.bulk import (GAUGES, MagneticTwist, atomic_model, bloch, bott_generator_model,
                             haldane_model, hofstadter_model, k_grid, magnetic_supercell_model,
                             qwz_model)
from cornerflow.cli import main
from cornerflow.dynamics import (DynamicsError, edge_following_metrics, evolve,
                                 prepare_edge_packet, spectrum)
from cornerflow.geometry import (CONCAVE_STANDARD, FIG4_BUMP, FIG5_CONE, HALF_PLANE, STAIRCASE,
                                 STANDARD, ConeSpec, build_region)
from cornerflow.topology import (bott_index_torus, bott_projection, chern_number,
                                 gap_filling_report, smooth_step)
from cornerflow.truncation import (boundary_perturbation, magnetic_operator, translation, truncate,
                                   verify_identities)

GOLDEN = (math.sqrt(5) - 1) / 2
FIXTURES = Path(__file__).parent / "fixtures"

GEOMETRIES = {
    "standard": (STANDARD, None),
    "staircase": (STANDARD, STAIRCASE),
    "fig4": (STANDARD, FIG4_BUMP),
    "det3": (FIG5_CONE, None),
    "concave": (CONCAVE_STANDARD, None),
}


def _windows(s=25.0, ell=20.0):
    return [FaceTrace(1, s, ell), FaceTrace(2, s, ell)]


def _currents(H, profile="polynomial", b=-1.0, c=1.0, windows=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pairs = boundary_currents(H, smooth_step(b, c, profile), windows or _windows(), method="chebyshev")
    return np.array([p.value for p in pairs])


# --- 1. exact identities ------------------------------------------------------

def test_criterion_1_identities(report):
    t0 = time.perf_counter()
    worst, failed = 0.0, []
    rng = np.random.default_rng(1)
    for name, (cone, bump) in GEOMETRIES.items():
        r = build_region(cone, bump, L=30)
        rep = verify_identities(r)
        failed += [f"{name}:{k}" for k in rep.failed()]
        mask = r.interior()
        for builder in (edge_travel, edge_travel_smooth):
            W = builder(r).unitisation
            for A in (W.getH() @ W, W @ W.getH()):
                D = (A - sp.identity(r.n_sites)).tocsr()[mask][:, mask]
                worst = max(worst, float(abs(D).max()) if D.nnz else 0.0)
        A = sum(rng.normal() * translation(r, g).matrix for g in [(1, 0), (0, 1), (1, 1)])
        B = sum(rng.normal() * translation(r, g).matrix for g in [(-1, 0), (0, -1), (2, -1)])
        for i in (1, 2):
            Di = Derivation(i)
            lhs = derivation_apply(Di, A @ B, r)
            rhs = derivation_apply(Di, A, r) @ B + A @ derivation_apply(Di, B, r)
            diff = (lhs - rhs).tocsr()[mask][:, mask]
            worst = max(worst, float(abs(diff).max()) if diff.nnz else 0.0)
    dt = time.perf_counter() - t0
    ok = not failed and worst < 1e-12 and dt < 10
    report(1, ok, f"combinatorial failures={failed or 0}, composite deviation={worst:.2e} (<1e-12), "
                  f"runtime {dt:.1f}s (<10s)")
    assert ok


# --- 2. pairings of edge-travelling operators -----------------------------------

def test_criterion_2_w_pairings(report):
    t0 = time.perf_counter()
    worst = 0.0
    cases = [("standard", edge_travel), ("det3", edge_travel), ("concave", edge_travel),
             ("staircase", edge_travel), ("staircase", edge_travel_smooth),
             ("fig4", edge_travel), ("fig4", edge_travel_smooth)]
    for name, builder in cases:
        cone, bump = GEOMETRIES[name]
        r = build_region(cone, bump, L=40)
        et = builder(r)
        for i in (1, 2):
            v = cocycle_pairing(i, et, r, estimate_error=False).value
            worst = max(worst, abs(v - (-1) ** (i + 1)))
    dt = time.perf_counter() - t0
    ok = worst < 1e-9 and dt < 5
    report(2, ok, f"max |<xi_i,w> - (-1)^(i+1)| = {worst:.2e} (<1e-9) over {len(cases)} operators, "
                  f"runtime {dt:.1f}s (<5s)")
    assert ok


# --- 3. Chern numbers -------------------------------------------------------------

def test_criterion_3_chern(report):
    t0 = time.perf_counter()
    family = {N: chern_number(bott_projection, N).value for N in (32, 64, 128)}
    models = {"qwz(1)": qwz_model(1.0), "qwz(-1)": qwz_model(-1.0), "qwz(0.5)": qwz_model(0.5),
              "qwz(3)": qwz_model(3.0), "haldane": haldane_model(), "haldane(-phi)": haldane_model(phi=-np.pi / 2),
              "bott_generator": bott_generator_model(), "atomic": atomic_model()}
    mismatch = []
    for name, m in models.items():
        fhs = chern_number(m, 64).value
        oracle = bott_index_torus(m, 12)
        if abs(fhs - oracle) > 1e-6:
            mismatch.append(f"{name}:{fhs}/{oracle:.3f}")
    dt = time.perf_counter() - t0
    ok = all(v == 1 for v in family.values()) and not mismatch and dt < 30
    report(3, ok, f"Bott family N=32/64/128 -> {list(family.values())}, FHS vs torus oracle mismatches="
                  f"{mismatch or 0} over {len(models)} models, runtime {dt:.1f}s (<30s)")
    assert ok


# --- 4. gap filling -------------------------------------------------------------

def test_criterion_4_gap_filling(report):
    t0 = time.perf_counter()
    model = qwz_model(1.0)
    b, c = -1.0, 1.0
    cases = {"half_plane": (HALF_PLANE, None), "standard": (STANDARD, None),
             "staircase": (STANDARD, STAIRCASE), "fig4": (STANDARD, FIG4_BUMP)}
    gaps_ok, weight_ok, parts = True, True, []
    for name, (cone, bump) in cases.items():
        subgaps, rep = [], None
        for L in (10, 20, 30):
            rep = gap_filling_report(truncate(model, build_region(cone, bump, L=L)), b, c, d=6.0)
            subgaps.append(rep.largest_subgap)
        mono = all(x > y for x, y in zip(subgaps, subgaps[1:]))
        small = subgaps[-1] < 0.1 * (c - b)
        w = float(rep.sample_weight.min())
        gaps_ok &= mono and small
        weight_ok &= w >= 0.9
        parts.append(f"{name}: subgaps {'/'.join(f'{x:.3f}' for x in subgaps)}, "
                     f"min weight {w:.2f} (physical {rep.physical_weight.min():.2f})")
    dt = time.perf_counter() - t0
    ok = gaps_ok and weight_ok and dt < 120
    report(4, ok, f"subgap monotone & <0.2: {gaps_ok}; all gap states >=90% within 6 sites: {weight_ok}; "
                  + "; ".join(parts) + f"; runtime {dt:.0f}s (<120s)")
    assert ok


# --- 5. boundary current quantisation at L = 60 ----------------------------------

@pytest.mark.slow
def test_criterion_5_current(report):
    worst, slowest, parts = 0.0, 0.0, []
    base = {}
    for name, (cone, bump) in GEOMETRIES.items():
        t0 = time.perf_counter()
        r = build_region(cone, bump, L=60)
        for m in (1.0, -1.0):
            model = qwz_model(m)
            k = chern_number(model, 32).value
            vals = _currents(truncate(model, r))
            dev = float(np.max(np.abs(vals - k * np.array([1, -1]))))
            worst = max(worst, dev)
            base[(name, m)] = vals
        dt = time.perf_counter() - t0
        slowest = max(slowest, dt)
        parts.append(f"{name} {dt:.0f}s")
    # boundary perturbation and profile swap on the bumpy region
    r = build_region(STANDARD, FIG4_BUMP, L=60)
    H = truncate(qwz_model(1.0), r)
    pert = boundary_perturbation(r, {"kind": "random", "norm": 0.3 * 2.0, "depth": 2, "seed": 11}, n=2)
    drift_pert = float(np.max(np.abs(_currents(H + pert) - base[("fig4", 1.0)])))
    drift_prof = float(np.max(np.abs(_currents(H, "cosine") - base[("fig4", 1.0)])))
    ok = worst < 0.05 and drift_pert < 0.05 and drift_prof < 0.05 and slowest < 600
    report(5, ok, f"max |<xi_i,Exp> - k(-1)^(i+1)| = {worst:.1e} (<0.05) over 5 geometries x QWZ(+-1); "
                  f"drift under perturbation {drift_pert:.1e}, under profile swap {drift_prof:.1e} (<0.05); "
                  f"per-geometry runtime {', '.join(parts)} (<600s)")
    assert ok


# --- 6. irrational slope ---------------------------------------------------------

def test_criterion_6_irrational(report):
    r = build_region(ConeSpec.irrational_quadrant(GOLDEN), L=60)
    steps = sturmian_steps(r)[1:]
    n = np.arange(1, len(steps) + 1)
    sturm_ok = bool(np.array_equal(steps, np.floor(GOLDEN * (n + 1)) - np.floor(GOLDEN * n)))
    et = irrational_edge_travel(r)
    w_dev = max(abs(cocycle_pairing(i, et, r, FaceTrace(i, 25, 20), estimate_error=False).value
                    - (-1) ** (i + 1)) for i in (1, 2))
    worst = 0.0
    for m in (1.0, -1.0):
        model = qwz_model(m)
        k = chern_number(model, 32).value
        vals = _currents(truncate(model, r))
        worst = max(worst, float(np.max(np.abs(vals - k * np.array([1, -1])))))
    ok = sturm_ok and worst < 0.08 and w_dev < 0.08
    report(6, ok, f"Sturmian steps exact: {sturm_ok} ({len(steps)} steps); current deviation {worst:.4f}, "
                  f"w deviation {w_dev:.4f} (<0.08)")
    assert ok


# --- 7. magnetic twist -------------------------------------------------------------

def _plaquette_dev(region, twist):
    H = magnetic_operator(hofstadter_model(-1.0), twist, region).dense()
    dev = 0.0
    for x, y in region.sites[region.interior()].tolist():
        idx = region.lookup([(x, y), (x + 1, y), (x + 1, y + 1), (x, y + 1)])
        if np.any(idx < 0):
            continue
        prod = np.prod([H[b, a] for a, b in zip(idx, np.roll(idx, -1))])
        dev = max(dev, abs(prod - np.exp(2j * np.pi * twist.theta)))
    return dev


def test_criterion_7_magnetic(report):
    small = build_region(STANDARD, STAIRCASE, L=16)
    flux = max(_plaquette_dev(small, MagneticTwist(th, g)) for g in GAUGES for th in (1 / 3, 0.137))
    period = 0.0
    for g in GAUGES:
        E0 = np.linalg.eigvalsh(magnetic_operator(qwz_model(1.0), MagneticTwist(0.3, g), small).dense())
        E1 = np.linalg.eigvalsh(magnetic_operator(qwz_model(1.0), MagneticTwist(1.3, g), small).dense())
        period = max(period, float(np.max(np.abs(E0 - E1))))
    cell = magnetic_supercell_model(hofstadter_model(), 1, 3)
    bands = np.linalg.eigvalsh(bloch(cell, k_grid(64))).reshape(-1, 3)
    r = build_region(STANDARD, L=60)
    worst, parts = 0.0, []
    for nocc in (1, 2):
        k = chern_number(cell, 48, nocc=nocc).value
        b, c = float(bands[:, nocc - 1].max()), float(bands[:, nocc].min())
        for g in GAUGES:
            H = magnetic_operator(hofstadter_model(), MagneticTwist(1 / 3, g), r)
            vals = _currents(H, b=b, c=c)
            worst = max(worst, float(np.max(np.abs(vals - k * np.array([1, -1])))))
        parts.append(f"gap {nocc}: FHS {k:+d}")
    ok = flux < 1e-12 and period < 1e-8 and worst < 0.08
    report(7, ok, f"plaquette flux deviation {flux:.1e}; theta->theta+1 spectral deviation {period:.1e} (<1e-8); "
                  f"theta=1/3 current deviation from FHS integer {worst:.4f} (<0.08) in 3 gauges ({', '.join(parts)})")
    assert ok


# --- 8. edge-following dynamics -------------------------------------------------------

def test_criterion_8_dynamics(report):
    t0 = time.perf_counter()
    r = build_region(STANDARD, FIG4_BUMP, L=30)
    times = np.linspace(0, 30, 121)
    metrics = {}
    for name, model in (("qwz", qwz_model(1.0)), ("conj", qwz_model(1.0).conjugate())):
        H = truncate(model, r)
        spec = spectrum(H)
        pk = prepare_edge_packet(H, -1.0, 1.0, (0, 12), width=4.0, spec=spec)
        metrics[name] = edge_following_metrics(evolve(H, pk.psi, times, spec), r, 2)
    m, mc = metrics["qwz"], metrics["conj"]
    dt = time.perf_counter() - t0
    ok = (m.corner_passed and m.min_beta >= 0.8 and m.monotone
          and mc.chirality == -m.chirality != 0 and dt < 180)
    report(8, ok, f"corner passed {m.corner_passed}, min beta {m.min_beta:.3f} (>=0.8), sign violations "
                  f"{m.sign_violations:.1%} (<=5%), chirality {m.chirality:+d} -> {mc.chirality:+d} under "
                  f"conjugation, runtime {dt:.0f}s (<180s)")
    assert ok


# --- 9. negative controls ------------------------------------------------------------

def test_criterion_9_negative_controls(report, tmp_path):
    r = build_region(STANDARD, FIG4_BUMP, L=30)
    H = truncate(atomic_model(), r)
    pairing = float(np.max(np.abs(_currents(H, windows=_windows(10, 8)))))
    table = len(gap_filling_report(H, -1.0, 1.0).table)
    try:
        prepare_edge_packet(H, -1.0, 1.0, (0, 12))
        packet_error = False
    except DynamicsError:
        packet_error = True
    code = main(["verify", "--config", str(FIXTURES / "corrupted.yaml"), "--out", str(tmp_path)])
    ok = pairing < 1e-9 and table == 0 and packet_error and code == 3
    report(9, ok, f"atomic pairing {pairing:.1e}, gap-state table size {table}, packet error {packet_error}, "
                  f"corrupted fixture verify exit code {code} (3)")
    assert ok
