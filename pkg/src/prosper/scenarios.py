"""Bundled scenarios so the whole system runs with zero external data.

reference       mid-size gland behind the template, pubic-arch plate well
                clear of every usable trajectory
large_prostate  enlarged gland raised behind an arch plate that blocks every
                horizontal path; +15 degree oblique paths from the lowest
                template rows duck under the plate and climb into the gland
edema           the reference gland swollen by 20 % in volume
"""

from __future__ import annotations

from dataclasses import dataclass

from .dose import DoseParams
from .errors import UnknownScenario
from .geom import RigidTransform, TriMesh, box_mesh
from .robot import RobotDescription
from .shape import ShapeModel, default_shape_model
from .sim import Phantom, apply_edema

SCENARIO_NAMES = ("reference", "large_prostate", "edema")

REFERENCE_GLAND_CENTER = (0.0, 70.0, 0.0)
LARGE_GLAND_CENTER = (0.0, 75.0, 22.0)
LARGE_GLAND_SCALE = 1.25


@dataclass(frozen=True)
class ScenarioBundle:
    name: str
    phantom: Phantom
    target: TriMesh
    arch: TriMesh | None
    shape_model: ShapeModel
    robot: RobotDescription
    dose_params: DoseParams


def _gland(center, scale: float = 1.0) -> TriMesh:
    mesh = default_shape_model().mean_mesh()
    verts = mesh.vertices * scale
    return TriMesh(verts, mesh.faces).transformed(
        RigidTransform(translation=list(center)))


def _reference() -> ScenarioBundle:
    gland = _gland(REFERENCE_GLAND_CENTER)
    # plate above the gland; every gland-hitting trajectory clears it
    arch = box_mesh(center=(0.0, 55.0, 32.0), half_extents=(40.0, 12.0, 6.0))
    phantom = Phantom(prostate=gland, arch=arch, rng_seed=2026)
    return ScenarioBundle("reference", phantom, gland, arch,
                          default_shape_model(), RobotDescription(), DoseParams())


def _large_prostate() -> ScenarioBundle:
    gland = _gland(LARGE_GLAND_CENTER, LARGE_GLAND_SCALE)
    # plate spanning the gland's whole frontal projection: horizontal paths
    # cross it, oblique paths from rows -6..-4 pass under its lower edge
    arch = box_mesh(center=(0.0, 34.0, 27.0), half_extents=(45.0, 4.0, 33.0))
    phantom = Phantom(prostate=gland, arch=arch, rng_seed=2027)
    return ScenarioBundle("large_prostate", phantom, gland, arch,
                          default_shape_model(), RobotDescription(), DoseParams())


def _edema() -> ScenarioBundle:
    base = _reference()
    phantom = apply_edema(base.phantom, 0.2)
    return ScenarioBundle("edema", phantom, phantom.prostate, base.arch,
                          base.shape_model, base.robot, base.dose_params)


_BUILDERS = {
    "reference": _reference,
    "large_prostate": _large_prostate,
    "edema": _edema,
}


def load_scenario(name: str) -> ScenarioBundle:
    """Construct a bundled scenario; raises UnknownScenario for other names."""
    if name not in _BUILDERS:
        raise UnknownScenario(f"unknown scenario '{name}'; bundled: {', '.join(SCENARIO_NAMES)}")
    return _BUILDERS[name]()


def scenario_payload(bundle: ScenarioBundle) -> dict:
    from .io import mesh_payload, phantom_payload, robot_payload, shape_model_payload
    from dataclasses import asdict

    return {
        "name": bundle.name,
        "phantom": phantom_payload(bundle.phantom),
        "target": mesh_payload(bundle.target),
        "arch": mesh_payload(bundle.arch) if bundle.arch is not None else None,
        "shape_model": shape_model_payload(bundle.shape_model),
        "robot": robot_payload(bundle.robot),
        "dose_params": asdict(bundle.dose_params),
    }


def scenario_from_payload(p: dict) -> ScenarioBundle:
    from .io import (mesh_from_payload, phantom_from_payload,
                     robot_from_payload, shape_model_from_payload)

    params = dict(p["dose_params"])
    params["radial_dose_table"] = tuple(tuple(x) for x in params["radial_dose_table"])
    return ScenarioBundle(
        name=p["name"],
        phantom=phantom_from_payload(p["phantom"]),
        target=mesh_from_payload(p["target"]),
        arch=mesh_from_payload(p["arch"]) if p.get("arch") else None,
        shape_model=shape_model_from_payload(p["shape_model"]),
        robot=robot_from_payload(p["robot"]),
        dose_params=DoseParams(**params),
    )
