"""Run configuration: defaults, JSON-file overrides, and hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, replace
from pathlib import Path

from .dose import DoseParams, PlanConstraints
from .register import RegistrationParams
from .sim import InsertionParams, Phantom


def defaults() -> dict:
    return {
        "dose": asdict(DoseParams()),
        "plan": asdict(PlanConstraints()),
        "insertion": asdict(InsertionParams()),
        "registration": asdict(RegistrationParams()),
        "shape": {"beta": 0.1},
        "phantom": {},   # overrides applied onto the scenario phantom
    }


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None) -> dict:
    cfg = defaults()
    if path is not None:
        cfg = _deep_merge(cfg, json.loads(Path(path).read_text(encoding="utf-8")))
    return cfg


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def dose_params(cfg: dict) -> DoseParams:
    raw = dict(cfg["dose"])
    raw["radial_dose_table"] = tuple(tuple(x) for x in raw["radial_dose_table"])
    return DoseParams(**raw)


def plan_constraints(cfg: dict) -> PlanConstraints:
    return PlanConstraints(**cfg["plan"])


def insertion_params(cfg: dict, spin_rate: float | None = None) -> InsertionParams:
    raw = dict(cfg["insertion"])
    if spin_rate is not None:
        raw["spin_rate"] = spin_rate
    return InsertionParams(**raw)


def registration_params(cfg: dict) -> RegistrationParams:
    return RegistrationParams(**cfg["registration"])


def apply_phantom_overrides(phantom: Phantom, cfg: dict,
                            rng_seed: int | None = None) -> Phantom:
    overrides = dict(cfg.get("phantom", {}))
    if rng_seed is not None:
        overrides["rng_seed"] = rng_seed
    return replace(phantom, **overrides) if overrides else phantom
