from pathlib import Path

import pytest
import yaml

from cornerflow.cli import main
from cornerflow.config import ConfigError, ExperimentConfig

FIXTURES = Path(__file__).parent / "fixtures"


def _run(tmp_path, command, cfg: dict | None = None, *extra, out="out"):
    args = [command, "--out", str(tmp_path / out)]
    if cfg is not None:
        path = tmp_path / f"{out}.yaml"
        path.write_text(yaml.safe_dump(cfg))
        args += ["--config", str(path)]
    return main(args + list(extra))


def _table(path: Path) -> list[str]:
    return path.read_text().splitlines()


def _record(path: Path) -> dict:
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


SMALL = {"region": {"cone": "standard", "bump": "staircase", "L": 20}}


def test_unknown_key_exits_2(tmp_path):
    assert _run(tmp_path, "verify", {"regoin": {"L": 10}}) == 2
    assert _run(tmp_path, "verify", {"region": {"L": -3}}) == 2
    assert _run(tmp_path, "verify", None, "--set", "model.name=graphene") == 2
    assert _run(tmp_path, "current", {"region": {"bump": "fig4", "L": 6}}) == 2


def test_config_api():
    cfg = ExperimentConfig.from_dict(SMALL)
    assert cfg.data["region"]["L"] == 20 and cfg.data["model"]["name"] == "qwz"
    cfg2 = cfg.with_value("model.m", -1.0)
    assert cfg2.hash != cfg.hash and cfg2.model().name == "qwz(m=-1)"
    with pytest.raises(ConfigError):
        cfg.with_value("windows", [{"face": 3, "s": 1, "ell": 2}])
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"model": {"name": "qwz", "mass": 1}}).model()


def test_verify_and_records(tmp_path):
    assert _run(tmp_path, "verify", SMALL) == 0
    rec = _record(tmp_path / "out" / "verify.record")
    assert rec["ok"] == "True" and rec["detail_corner_site"] == "1;1"
    rows = _table(tmp_path / "out" / "verify.csv")
    assert rows[0].startswith("# config_hash=")
    assert rows[1] == "identity,deviation"


def test_fig5_cone_verifies(tmp_path):
    assert _run(tmp_path, "verify", {"region": {"cone": "fig5", "L": 30}}) == 0


def test_corrupted_region_fails_verify(tmp_path):
    code = main(["verify", "--config", str(FIXTURES / "corrupted.yaml"), "--out", str(tmp_path / "o")])
    assert code == 3
    rec = _record(tmp_path / "o" / "verify.record")
    assert "membership" in rec["failed"]


def test_current_is_deterministic(tmp_path):
    cfg = {**SMALL, "perturbation": {"kind": "random", "gap_fraction": 0.3, "seed": 7}}
    assert _run(tmp_path, "current", cfg, out="a") == 0
    assert _run(tmp_path, "current", cfg, out="b") == 0
    a = (tmp_path / "a" / "current.csv").read_bytes()
    assert a == (tmp_path / "b" / "current.csv").read_bytes()
    rows = _table(tmp_path / "a" / "current.csv")
    assert rows[1] == "face,window_start,window_len,value,error_estimate"
    vals = [float(r.split(",")[3]) for r in rows[2:]]
    assert abs(vals[0] + 1) < 0.1 and abs(vals[1] - 1) < 0.1


def test_chern_command(tmp_path):
    assert _run(tmp_path, "chern", {"model": {"name": "qwz", "m": 1.0}, "chern": {"N": 32, "oracle_N": 10}}) == 0
    rec = _record(tmp_path / "out" / "chern.record")
    assert rec["value"] == "-1"
    assert abs(float(rec["bott_index"]) + 1) < 1e-6
    assert _run(tmp_path, "chern", {"model": {"name": "bott_family"}, "chern": {"N": 32}}, out="b") == 0
    assert _record(tmp_path / "b" / "chern.record")["value"] == "1"


def test_atomic_controls(tmp_path):
    cfg = {"model": {"name": "atomic"}, "region": {"L": 12}}
    assert _run(tmp_path, "spectrum", cfg, out="s") == 0
    assert _table(tmp_path / "s" / "gap_states.csv")[1:] == ["index,energy,boundary_weight,x_mean,y_mean"]
    assert _run(tmp_path, "evolve", cfg, out="e") == 3
    assert _run(tmp_path, "current", cfg, out="c") == 0
    vals = [float(r.split(",")[3]) for r in _table(tmp_path / "c" / "current.csv")[2:]]
    assert all(abs(v) < 1e-12 for v in vals)


def test_winding_and_evolve(tmp_path):
    assert _run(tmp_path, "winding", SMALL, out="w") == 0
    rec = _record(tmp_path / "w" / "winding.record")
    assert rec["path_winding"] == "1" and rec["fredholm_index"] == "-1"
    cfg = {**SMALL, "evolve": {"center": [0, 8], "t_max": 20, "n_times": 41}}
    assert _run(tmp_path, "evolve", cfg, out="e") == 0
    assert _record(tmp_path / "e" / "evolve.record")["corner_passed"] == "True"
    assert len(_table(tmp_path / "e" / "trajectory.csv")) == 43


def test_empty_sweep_is_a_noop(tmp_path):
    assert _run(tmp_path, "sweep", SMALL) == 0
    assert _record(tmp_path / "out" / "sweep.record")["points"] == "0"
    assert _table(tmp_path / "out" / "sweep.csv")[1:] == ["status,payload"]


def test_sweep_over_mass(tmp_path):
    cfg = {**SMALL, "sweep": {"command": "chern", "axes": {"model.m": [1.0, 3.0]}}, "chern": {"N": 32}}
    assert _run(tmp_path, "sweep", cfg) == 0
    rows = _table(tmp_path / "out" / "sweep.csv")
    assert len(rows) == 4 and "value=-1" in rows[2] and "value=0" in rows[3]
