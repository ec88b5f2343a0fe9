"""Command-line front end.

Every command reads one YAML/JSON config, writes CSV tables and a
``key=value`` record into ``--out`` and returns an exit code: 0 on success,
2 for configuration errors, 3 for numerical-contract violations.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import itertools
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from .boundary import (PAIRING_HEADER, FaceTrace, PairingError, boundary_currents, cocycle_pairing,
                       edge_travel, edge_travel_smooth, face_trace_eval, winding_number)
from .bulk import HoppingModel, bulk_gap, bloch, k_grid, magnetic_supercell_model
from .config import ConfigError, ExperimentConfig
from .dynamics import DynamicsError, edge_following_metrics, evolve, prepare_edge_packet, spectrum
from .geometry import GeometryError, boundary_path, face_mask
from .topology import TopologyError, bott_index_torus, bott_projection, chern_number, gap_filling_report
from .truncation import boundary_perturbation, truncate, verify_identities

COMMANDS = ("spectrum", "chern", "current", "winding", "evolve", "verify", "sweep")
VERIFY_TOL = 1e-12


class ContractError(RuntimeError):
    """Numerical result outside its contract (exit code 3)."""


class Result:
    """Tables and a key=value record produced by one command."""

    def __init__(self, command: str, cfg: ExperimentConfig):
        self.command = command
        self.cfg = cfg
        self.tables: dict[str, list[str]] = {}
        self.record: dict = {}
        self.contract_error: str | None = None

    def write(self, out: Path):
        out.mkdir(parents=True, exist_ok=True)
        head = f"# config_hash={self.cfg.hash} version={__version__}"
        for name, rows in self.tables.items():
            (out / name).write_text("\n".join([head] + rows) + "\n")
        rec = {"command": self.command, **self.cfg.header(), **self.record}
        lines = [f"{k}={_fmt(v)}" for k, v in rec.items()]
        lines.append(f"timestamp={_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}")
        (out / f"{self.command}.record").write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


# --- shared helpers ----------------------------------------------------------

def _bloch_model(cfg: ExperimentConfig, model: HoppingModel) -> HoppingModel:
    """Model whose Bloch bands describe the (possibly twisted) bulk."""
    tw = cfg.twist()
    if tw is None:
        return model
    frac = Fraction(tw.theta).limit_denominator(64)
    if abs(float(frac) - tw.theta) > 1e-12:
        raise ConfigError(f"twist theta={tw.theta} is not a rational p/q with q <= 64")
    return magnetic_supercell_model(model, frac.numerator, frac.denominator)


def _gap(cfg: ExperimentConfig, bmodel: HoppingModel) -> tuple[float, float, int]:
    """``(b, c)`` of the selected gap and the number of bands below it."""
    p = cfg.data["phi"]
    E = np.linalg.eigvalsh(bloch(bmodel, k_grid(64))).reshape(-1, bmodel.n)
    if p["b"] is not None and p["c"] is not None:
        b, c = float(p["b"]), float(p["c"])
        nocc = int(np.sum(E.max(axis=0) <= b))
        if np.any((E > b) & (E < c)):
            raise ContractError(f"configured gap ({b}, {c}) contains bulk spectrum")
        return b, c, nocc
    g = bulk_gap(bmodel, 64)
    if not g.resolved:
        raise ContractError("bulk gap not resolved")
    return g.b, g.c, g.band_index


def _hamiltonian(cfg: ExperimentConfig, model, region, gap_width: float):
    H = truncate(model, region, cfg.twist())
    spec = dict(cfg.data["perturbation"])
    if spec.get("kind", "zero") != "zero":
        if "gap_fraction" in spec:
            spec["norm"] = float(spec.pop("gap_fraction")) * gap_width
        spec.setdefault("seed", cfg.data["seed"])
        H = H + boundary_perturbation(region, spec, model.n)
    return H


# --- commands ----------------------------------------------------------------

def cmd_spectrum(cfg: ExperimentConfig) -> Result:
    res = Result("spectrum", cfg)
    model = cfg.model()
    region = cfg.region()
    b, c, _ = _gap(cfg, _bloch_model(cfg, model))
    H = _hamiltonian(cfg, model, region, c - b)
    E = np.linalg.eigvalsh(H.dense())
    rep = gap_filling_report(H, b, c, float(cfg.data["spectrum"]["d"]))
    res.tables["spectrum.csv"] = ["index,energy"] + [f"{k},{e:.12g}" for k, e in enumerate(E)]
    res.tables["gap_states.csv"] = rep.csv_rows()
    res.record.update(b=b, c=c, dim=H.dim, n_in_gap=len(rep.energies), n_table=len(rep.table),
                      largest_subgap=rep.largest_subgap, region_hash=region.hash)
    return res


def cmd_chern(cfg: ExperimentConfig) -> Result:
    res = Result("chern", cfg)
    N = int(cfg.data["chern"]["N"])
    if cfg.data["model"]["name"] == "bott_family":
        r = chern_number(lambda M: bott_projection(M), N)
        res.record.update(model="bott_family", value=r.value, raw=r.raw, converged=r.converged, N=N)
    else:
        bm = _bloch_model(cfg, cfg.model())
        b, c, nocc = _gap(cfg, bm)
        r = chern_number(bm, N, nocc=nocc)
        res.record.update(model=bm.name, value=r.value, raw=r.raw, converged=r.converged, N=N,
                          b=b, c=c, nocc=nocc)
        oracle_N = int(cfg.data["chern"]["oracle_N"])
        if oracle_N:
            bott = bott_index_torus(bm, oracle_N, nocc)
            res.record.update(bott_index=bott)
            if round(bott) != r.value:
                raise ContractError(f"Bott index {bott:.4f} disagrees with Chern number {r.value}")
    if not r.converged:
        raise ContractError("Chern number changed between N and 2N")
    return res


def cmd_current(cfg: ExperimentConfig) -> Result:
    res = Result("current", cfg)
    model = cfg.model()
    region = cfg.region()
    bm = _bloch_model(cfg, model)
    b, c, nocc = _gap(cfg, bm)
    k = chern_number(bm, 32, nocc=nocc).value
    H = _hamiltonian(cfg, model, region, c - b)
    pairs = boundary_currents(H, cfg.phi(b, c), cfg.windows(region), cfg.data["method"])
    res.tables["current.csv"] = [PAIRING_HEADER] + [p.csv_row() for p in pairs]
    dev = max(abs(p.value - round(p.value)) for p in pairs)
    expected = [k * (-1) ** (p.face + 1) for p in pairs]
    res.record.update(chern=k, b=b, c=c, values=[p.value for p in pairs], expected=expected,
                      max_integer_deviation=dev,
                      max_expected_deviation=max(abs(p.value - e) for p, e in zip(pairs, expected)),
                      region_hash=region.hash)
    if dev > float(cfg.data["tolerance"]):
        res.contract_error = f"boundary current off integer by {dev:.4f}"
    return res


def cmd_winding(cfg: ExperimentConfig) -> Result:
    res = Result("winding", cfg)
    region = cfg.region()
    ops = {"w": edge_travel(region)}
    if not region.bump.empty:
        ops["w_smooth"] = edge_travel_smooth(region)
    rows = ["operator," + PAIRING_HEADER]
    for name, w in ops.items():
        for tau in cfg.windows(region):
            p = cocycle_pairing(tau.face, w, region, tau)
            rows.append(f"{name},{p.csv_row()}")
            res.record[f"{name}_face{tau.face}"] = p.value
            if abs(p.value - round(p.value)) > float(cfg.data["tolerance"]):
                res.contract_error = f"{name} pairing on face {tau.face} is {p.value:.4f}"
    path_idx = region.lookup(ops["w"].path)
    wp = ops["w"].matrix[path_idx][:, path_idx].toarray()
    wp[0, -1] = 1  # close the path into a ring so the pairing sees a unitary
    try:
        wn = winding_number(wp)
    except PairingError as err:
        raise ContractError(str(err)) from None
    res.tables["winding.csv"] = rows
    res.record.update(path_winding=wn.value, path_pairing=wn.pairing, fredholm_index=wn.fredholm_index,
                      region_hash=region.hash)
    return res


def cmd_evolve(cfg: ExperimentConfig) -> Result:
    res = Result("evolve", cfg)
    e = cfg.data["evolve"]
    model = cfg.model()
    region = cfg.region()
    b, c, _ = _gap(cfg, _bloch_model(cfg, model))
    H = _hamiltonian(cfg, model, region, c - b)
    spec = spectrum(H)
    center = e["center"]
    if center is None:
        path = boundary_path(region)
        p = path[len(path) // 4]
        center = (p.x, p.y)
    try:
        pk = prepare_edge_packet(H, b, c, tuple(center), float(e["width"]), spec=spec)
    except DynamicsError as err:
        raise ContractError(str(err)) from None
    times = np.linspace(0, float(e["t_max"]), int(e["n_times"]))
    traj = evolve(H, pk.psi, times, spec)
    met = edge_following_metrics(traj, region, H.n, float(e["d"]), float(e["beta_threshold"]), H=H)
    res.tables["trajectory.csv"] = met.csv_rows()
    res.record.update(s0=pk.s0, n_states=pk.n_states, **met.report(),
                      norm_drift=float(np.max(np.abs(traj.norms() - 1))))
    return res


def cmd_verify(cfg: ExperimentConfig) -> Result:
    res = Result("verify", cfg)
    region = cfg.region()
    rep = verify_identities(region)
    dev = dict(rep.deviations)
    idx = np.flatnonzero(region.interior())
    eye = sp.identity(region.n_sites, format="csr")
    builders = {"edge_travel": edge_travel}
    if not region.bump.empty:
        builders["edge_travel_smooth"] = edge_travel_smooth
    for name, build in builders.items():
        try:
            W = build(region).unitisation
        except (GeometryError, PairingError) as err:
            dev[f"{name}_unitary"] = float("inf")
            res.record[f"{name}_error"] = str(err)
            continue
        for tag, A in (("WtW", W.getH() @ W), ("WWt", W @ W.getH())):
            D = (A - eye)[idx][:, idx]
            dev[f"{name}_unitary_{tag}"] = float(np.max(np.abs(D.toarray()), initial=0))
    if region.cone.rational and region.cone.kind == "convex_cone":
        for i in (1, 2):
            tau = FaceTrace(i, region.bump.radius + 2, max(2.0, region.L / 4))
            for j in (1, 2):
                P = sp.diags(face_mask(region, j).astype(float), format="csr")
                target = 1 / region.cone.norm(i) if i == j else 0.0
                dev[f"trace_{i}{j}"] = abs(face_trace_eval(tau, P, region) - target)
    failed = sorted(k for k, v in dev.items() if not v <= VERIFY_TOL)
    res.tables["verify.csv"] = ["identity,deviation"] + [f"{k},{_fmt(v)}" for k, v in dev.items()]
    res.record.update(region_hash=region.hash, n_sites=region.n_sites, ok=not failed,
                      failed=failed or "none", **{f"detail_{k}": v for k, v in rep.details.items()})
    if failed:
        res.contract_error = f"identities failed: {', '.join(failed)}"
    return res


def cmd_sweep(cfg: ExperimentConfig) -> Result:
    """Run ``sweep.command`` over the Cartesian product of ``sweep.axes``."""
    res = Result("sweep", cfg)
    sw = cfg.data["sweep"]
    command = sw.get("command", "current")
    if command not in SINGLE:
        raise ConfigError(f"sweep.command must be one of {sorted(SINGLE)}")
    axes = sw.get("axes") or {}
    keys = sorted(axes)
    grids = [list(axes[k]) for k in keys]
    rows = [",".join(keys + ["status", "payload"])]
    n = 0
    if keys and all(grids):
        for point in itertools.product(*grids):
            sub = cfg
            for k, v in zip(keys, point):
                sub = sub.with_value(k, v)
            try:
                r = SINGLE[command](sub)
                status = "ok" if r.contract_error is None else "contract"
            except ContractError as err:
                r, status = None, f"contract:{err}".replace(",", ";")
            payload = "" if r is None else ";".join(
                f"{k}={_fmt(v)}" for k, v in sorted(r.record.items()) if not isinstance(v, str))
            rows.append(",".join([_fmt(v) for v in point] + [status, payload]))
            n += 1
    res.tables["sweep.csv"] = rows
    res.record.update(sweep_command=command, points=n)
    return res


SINGLE = {"spectrum": cmd_spectrum, "chern": cmd_chern, "current": cmd_current,
          "winding": cmd_winding, "evolve": cmd_evolve, "verify": cmd_verify}
RUNNERS = {**SINGLE, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cornerflow", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="YAML or JSON experiment config")
    ap.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    ap.add_argument("--threads", type=int, default=1, help="BLAS threads")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key (dotted path, YAML value)")
    return ap


def run(command: str, cfg: ExperimentConfig, out: Path) -> int:
    try:
        res = RUNNERS[command](cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (ContractError, PairingError, TopologyError) as err:
        print(f"contract violation: {err}", file=sys.stderr)
        return 3
    res.write(out)
    if res.contract_error:
        print(f"contract violation: {res.contract_error}", file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.from_dict({})
        for item in args.set:
            key, _, value = item.partition("=")
            cfg = cfg.with_value(key, yaml.safe_load(value))
        if args.seed is not None:
            cfg = cfg.with_value("seed", args.seed)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    with threadpool_limits(args.threads):
        return run(args.command, cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
