"""Experiment configuration: parsing, validation and object construction."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .boundary import FaceTrace, default_window
from .bulk import (GAUGES, HoppingModel, MagneticTwist, ModelError, atomic_model,
                   bott_generator_model, haldane_model, hofstadter_model, qwz_model)
from .geometry import (CONCAVE_STANDARD, FIG4_BUMP, FIG5_CONE, HALF_PLANE, STAIRCASE, STANDARD,
                       BumpSpec, ConeSpec, GeometryError, Region, build_region, import_sites)
from .topology import PROFILES, SmoothStep


class ConfigError(ValueError):
    """Malformed or out-of-range configuration (exit code 2)."""


MODELS = {
    "qwz": (qwz_model, {"m": 1.0}),
    "haldane": (haldane_model, {"t1": 1.0, "t2": 0.1, "phi": float(np.pi / 2), "M_onsite": 0.0}),
    "hofstadter": (hofstadter_model, {"t": 1.0}),
    "atomic": (atomic_model, {"mass": 1.0}),
    "bott_generator": (bott_generator_model, {}),
}
CONES = {
    "standard": STANDARD,
    "half_plane": HALF_PLANE,
    "concave": CONCAVE_STANDARD,
    "fig5": FIG5_CONE,
}
BUMPS = {"none": BumpSpec(), "staircase": STAIRCASE, "fig4": FIG4_BUMP}

DEFAULTS = {
    "model": {"name": "qwz", "conjugate": False},
    "region": {"cone": "standard", "bump": "none", "L": 30, "m": None, "sites_file": None},
    "twist": {"theta": 0.0, "gauge": "landau_x"},
    "phi": {"profile": "polynomial", "b": None, "c": None},
    "windows": None,
    "perturbation": {"kind": "zero"},
    "method": "auto",
    "tolerance": 0.1,
    "chern": {"N": 64, "oracle_N": 0},
    "spectrum": {"d": 6.0},
    "evolve": {"center": None, "width": 4.0, "t_max": 30.0, "n_times": 121,
               "beta_threshold": 0.8, "d": 3.0},
    "sweep": {"command": "current", "axes": {}},
    "seed": 0,
}
TOP_KEYS = set(DEFAULTS)


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if path == "" and k not in TOP_KEYS:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(out.get(k), dict) and isinstance(v, dict) and k not in ("axes",):
            out[k] = _merge(out[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def set_dotted(d: dict, key: str, value) -> dict:
    """Copy of ``d`` with ``a.b.c = value``."""
    out = copy.deepcopy(d)
    node = out
    parts = key.split(".")
    if parts[0] not in TOP_KEYS:
        raise ConfigError(f"unknown config key {parts[0]!r}")
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value
    return out


@dataclass
class ExperimentConfig:
    data: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, raw: dict | None, base_dir: Path | None = None) -> "ExperimentConfig":
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        cfg = cls(_merge(DEFAULTS, raw), base_dir or Path.cwd())
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text())
        except (OSError, yaml.YAMLError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from None
        return cls.from_dict(raw, path.parent)

    def with_value(self, key: str, value) -> "ExperimentConfig":
        out = ExperimentConfig(set_dotted(self.data, key, value), self.base_dir)
        out.validate()
        return out

    @property
    def hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def header(self) -> dict:
        return {"config_hash": self.hash, "version": __version__}

    # --- validation --------------------------------------------------------

    def validate(self):
        d = self.data
        m = d["model"]
        if not isinstance(m, dict) or "name" not in m:
            raise ConfigError("model needs a name")
        if m["name"] not in MODELS and m["name"] not in ("explicit", "bott_family"):
            raise ConfigError(f"unknown model {m['name']!r}")
        r = d["region"]
        if not isinstance(r.get("L"), int) or r["L"] < 1:
            raise ConfigError("region.L must be a positive integer")
        if d["phi"]["profile"] not in PROFILES:
            raise ConfigError(f"phi.profile must be one of {PROFILES}")
        if d["twist"]["gauge"] not in GAUGES:
            raise ConfigError(f"twist.gauge must be one of {GAUGES}")
        try:
            float(d["twist"]["theta"])
            float(d["tolerance"])
        except (TypeError, ValueError):
            raise ConfigError("twist.theta and tolerance must be numbers") from None
        if d["windows"] is not None:
            if not isinstance(d["windows"], list):
                raise ConfigError("windows must be a list")
            for w in d["windows"]:
                if not isinstance(w, dict) or w.get("face") not in (1, 2) or "s" not in w or "ell" not in w:
                    raise ConfigError(f"window {w!r} needs face (1 or 2), s and ell")
        if not isinstance(d["sweep"].get("axes", {}), dict):
            raise ConfigError("sweep.axes must be a mapping")
        if d["method"] not in ("auto", "dense", "chebyshev", "gap-eigh"):
            raise ConfigError(f"unknown method {d['method']!r}")

    # --- builders ------------------------------------------------------------

    def model(self) -> HoppingModel:
        m = dict(self.data["model"])
        name = m.pop("name")
        conj = bool(m.pop("conjugate", False))
        if name == "bott_family":
            raise ConfigError("bott_family is a projection family, not a hopping model")
        try:
            if name == "explicit":
                model = HoppingModel.from_hop_lines(self._hop_lines(m), int(m["n"]))
            else:
                fn, defaults = MODELS[name]
                unknown = set(m) - set(defaults)
                if unknown:
                    raise ConfigError(f"unknown parameters {sorted(unknown)} for model {name!r}")
                model = fn(**{**defaults, **m})
        except (ModelError, KeyError, TypeError) as err:
            raise ConfigError(f"bad model spec: {err}") from None
        return model.conjugate() if conj else model

    def _hop_lines(self, m: dict) -> list[str]:
        if "hops_file" in m:
            return (self.base_dir / m["hops_file"]).read_text().splitlines()
        return list(m.get("hops", []))

    def cone(self) -> ConeSpec:
        r = self.data["region"]
        c = r["cone"]
        try:
            if isinstance(c, str):
                if c == "irrational":
                    return ConeSpec.irrational_quadrant(float(r.get("alpha", (5**0.5 - 1) / 2)))
                return CONES[c]
            return ConeSpec(c.get("kind", "convex_cone"), tuple(c["a1"]),
                            None if c.get("a2") is None else tuple(c["a2"]),
                            tuple(c.get("slope_mode", ("rational", "rational"))))
        except (KeyError, GeometryError, TypeError) as err:
            raise ConfigError(f"bad cone spec: {err}") from None

    def bump(self) -> BumpSpec:
        b = self.data["region"]["bump"]
        try:
            if isinstance(b, str) or b is None:
                return BUMPS["none" if b is None else b]
            return BumpSpec(int(b["radius"]),
                            frozenset(tuple(p) for p in b.get("added", [])),
                            frozenset(tuple(p) for p in b.get("removed", [])))
        except (KeyError, GeometryError, TypeError) as err:
            raise ConfigError(f"bad bump spec: {err}") from None

    def region(self) -> Region:
        r = self.data["region"]
        try:
            region = build_region(self.cone(), self.bump(), r["L"], r["m"])
        except GeometryError as err:
            raise ConfigError(str(err)) from None
        if r.get("sites_file"):
            region = import_sites(region, (self.base_dir / r["sites_file"]).read_text())
        return region

    def twist(self) -> MagneticTwist | None:
        t = self.data["twist"]
        theta = float(t["theta"])
        return MagneticTwist(theta, t["gauge"]) if theta != 0 else None

    def phi(self, b: float, c: float) -> SmoothStep:
        p = self.data["phi"]
        b = b if p["b"] is None else float(p["b"])
        c = c if p["c"] is None else float(p["c"])
        return SmoothStep(b, c, p["profile"])

    def windows(self, region: Region) -> list[FaceTrace]:
        ws = self.data["windows"]
        if ws is None:
            return [default_window(region, 1), default_window(region, 2)]
        return [FaceTrace(int(w["face"]), float(w["s"]), float(w["ell"]), float(w.get("depth", 6.0)),
                          w.get("weighting", "auto")) for w in ws]
