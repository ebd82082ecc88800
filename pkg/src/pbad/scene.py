"""Scene files: JSON schema, parsing, serialization and the bundled benchmark scenes.

A scene is kept as its validated JSON document; the model, force model and
simulation settings are derived from it, so ``parse(dump(scene))`` rebuilds
exactly the same objects.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .model import JOINT_DOFS, Box, JointSpec, KinematicModel, LinkSpec, ModelError, PointMasses, build_model, pose
from .objective import OBJECTIVE_KINDS, RESIDUAL, Actuation, ContactModel, ForceModel
from .optim import LBFGS, LM, OptimizerConfig
from .stepper import BOOTSTRAPS, INTEGRATORS, PBAD, SimConfig

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_NUMS = {"type": "array", "items": {"type": "number"}}

SCENE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["links", "gravity", "integrator", "dt", "duration", "initial"],
    "properties": {
        "description": {"type": "string"},
        "links": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["parent", "joint", "geometry"],
                "properties": {
                    "parent": {"type": ["integer", "null"]},
                    "joint": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["kind", "offset"],
                        "properties": {
                            "kind": {"enum": sorted(JOINT_DOFS)},
                            "axis": _VEC3,
                            "axis2": _VEC3,
                            "offset": {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["translation", "rotation_vector"],
                                "properties": {"translation": _VEC3, "rotation_vector": _VEC3},
                            },
                        },
                    },
                    "geometry": {
                        "oneOf": [
                            {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["box"],
                                "properties": {
                                    "box": {
                                        "type": "object",
                                        "additionalProperties": False,
                                        "required": ["size", "density", "center"],
                                        "properties": {
                                            "size": _VEC3,
                                            "density": {"type": "number", "exclusiveMinimum": 0},
                                            "center": _VEC3,
                                        },
                                    }
                                },
                            },
                            {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["point_masses"],
                                "properties": {
                                    "point_masses": {
                                        "type": "array",
                                        "minItems": 1,
                                        "items": {
                                            "type": "object",
                                            "additionalProperties": False,
                                            "required": ["mass", "position"],
                                            "properties": {
                                                "mass": {"type": "number", "exclusiveMinimum": 0},
                                                "position": _VEC3,
                                            },
                                        },
                                    }
                                },
                            },
                        ]
                    },
                    "contact_samples": {"type": "array", "items": _VEC3},
                },
            },
        },
        "gravity": _VEC3,
        "drag_D": {"type": "number", "minimum": 0},
        "contact": {
            "type": "object",
            "additionalProperties": False,
            "required": ["normal", "offset", "D1", "D2"],
            "properties": {
                "normal": _VEC3,
                "offset": {"type": "number"},
                "D1": {"type": "number", "minimum": 0},
                "D2": {"type": "number", "minimum": 0},
            },
        },
        "actuation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "amplitude"],
            "properties": {
                "kind": {"enum": ["constant", "sinusoidal"]},
                "amplitude": _NUMS,
                "frequency_hz": {"type": "number", "minimum": 0},
                "phase": _NUMS,
            },
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": list(INTEGRATORS)},
                "order": {"type": "integer", "minimum": 2},
                "objective": {"enum": list(OBJECTIVE_KINDS)},
                "optimizer": {"enum": [LM, LBFGS]},
                "bootstrap": {"enum": list(BOOTSTRAPS)},
            },
        },
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "duration": {"type": "number", "exclusiveMinimum": 0},
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "required": ["q", "qdot"],
            "properties": {"q": _NUMS, "qdot": _NUMS},
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCENE_SCHEMA)


class SceneError(ValueError):
    """Malformed scene; the message names the offending field (and line for syntax errors)."""


def _field_path(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<document>"


def _schema_message(err: jsonschema.ValidationError) -> str:
    where = _field_path(err.absolute_path)
    if err.validator == "required":
        missing = [r for r in err.validator_value if r not in err.instance]
        name = missing[0] if missing else "?"
        return f"{where}: missing required field '{name}'"
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return f"{where}: unknown field(s) {', '.join(repr(e) for e in extra)}"
    if err.validator == "oneOf" and isinstance(err.instance, dict):
        return f"{where}: geometry must hold exactly one of 'box' or 'point_masses' with their required fields"
    return f"{where}: {err.message}"


@dataclass(frozen=True, eq=False)
class Scene:
    doc: dict
    model: KinematicModel
    forces: ForceModel

    @property
    def dt(self) -> float:
        return float(self.doc["dt"])

    @property
    def duration(self) -> float:
        return float(self.doc["duration"])

    @property
    def integrator(self) -> dict:
        return self.doc["integrator"]

    def sim_config(self, optimizer: OptimizerConfig | None = None, **overrides) -> SimConfig:
        """Simulation settings from the scene; keyword overrides win."""
        integ = self.integrator
        order = int(integ.get("order", 2))
        kw = dict(
            dt=self.dt,
            duration=self.duration,
            q0=np.asarray(self.doc["initial"]["q"], dtype=float),
            qdot0=np.asarray(self.doc["initial"]["qdot"], dtype=float),
            integrator=integ["kind"],
            order=order,
            objective=integ.get("objective", "energy" if order == 2 else RESIDUAL),
            optimizer=optimizer or OptimizerConfig(kind=integ.get("optimizer", LM)),
            bootstrap=integ.get("bootstrap", "linear"),
        )
        kw.update({k: v for k, v in overrides.items() if v is not None})
        if kw["order"] > 2 and overrides.get("objective") is None:
            # the energy objective only exists at order 2
            kw["objective"] = RESIDUAL
        return SimConfig(**kw)

    def with_overrides(self, **fields) -> "Scene":
        """Copy with top-level (``dt``, ``duration``) or integrator fields replaced."""
        doc = copy.deepcopy(self.doc)
        for key, value in fields.items():
            if value is None:
                continue
            if key in ("dt", "duration"):
                doc[key] = float(value)
            elif key == "integrator":
                doc["integrator"]["kind"] = value
            elif key in ("order", "objective", "optimizer", "bootstrap"):
                doc["integrator"][key] = value
            else:
                raise SceneError(f"cannot override field {key!r}")
        integ = doc["integrator"]
        if fields.get("order") is not None and fields.get("objective") is None and int(integ.get("order", 2)) > 2:
            # the energy objective only exists at order 2
            integ["objective"] = RESIDUAL
        return scene_from_dict(doc)


def _joint(j: dict) -> JointSpec:
    off = pose(j["offset"]["translation"], j["offset"]["rotation_vector"])
    return JointSpec(j["kind"], axis=j.get("axis"), axis2=j.get("axis2"), offset=off)


def _geometry(g: dict):
    if "box" in g:
        b = g["box"]
        return Box(tuple(b["size"]), float(b["density"]), tuple(b["center"]))
    pm = g["point_masses"]
    return PointMasses(tuple(float(p["mass"]) for p in pm), tuple(tuple(p["position"]) for p in pm))


def scene_from_dict(doc: dict) -> Scene:
    """Validate a scene document and build its model and forces."""
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        raise SceneError(_schema_message(errors[0]))
    doc = copy.deepcopy(doc)
    links = []
    for i, ld in enumerate(doc["links"]):
        try:
            joint = _joint(ld["joint"])
            samples = ld.get("contact_samples")
            links.append(LinkSpec(ld["parent"], joint, _geometry(ld["geometry"]),
                                  None if samples is None else np.asarray(samples, dtype=float).reshape(-1, 3)))
        except ModelError as exc:
            raise SceneError(f"links[{i}]: {exc}") from None
    try:
        model = build_model(links)
    except ModelError as exc:
        raise SceneError(f"links: {exc}") from None
    n = model.total_dofs
    for key in ("q", "qdot"):
        vals = doc["initial"][key]
        if len(vals) != n:
            raise SceneError(f"initial.{key}: expected {n} entries for the model DOF count, got {len(vals)}")
        if not all(math.isfinite(v) for v in vals):
            raise SceneError(f"initial.{key}: entries must be finite")
    contact = None
    if "contact" in doc:
        c = doc["contact"]
        nrm = np.asarray(c["normal"], dtype=float)
        if abs(np.linalg.norm(nrm) - 1.0) > 1e-12:
            raise SceneError("contact.normal: must be a unit vector")
        contact = ContactModel(tuple(c["normal"]), float(c["offset"]), float(c["D1"]), float(c["D2"]))
    actuation = None
    if "actuation" in doc:
        a = doc["actuation"]
        for key in ("amplitude", "phase"):
            if key in a and len(a[key]) != n:
                raise SceneError(f"actuation.{key}: expected {n} entries for the model DOF count, got {len(a[key])}")
        actuation = Actuation(a["kind"], a["amplitude"], float(a.get("frequency_hz", 0.0)), a.get("phase"))
    integ = doc["integrator"]
    if integ["kind"] == PBAD and integ.get("objective") == "energy" and int(integ.get("order", 2)) != 2:
        raise SceneError("integrator.objective: 'energy' requires order 2")
    forces = ForceModel(tuple(doc["gravity"]), float(doc.get("drag_D", 0.0)), contact, actuation)
    return Scene(doc, model, forces)


def parse_scene(text: str, source: str = "<scene>") -> Scene:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return scene_from_dict(doc)
    except SceneError as exc:
        raise SceneError(f"{source}: {exc}") from None


def load_scene(path) -> Scene:
    """Load a scene file, or a bundled scene by name (``chain10``, ``spider``, ...)."""
    p = Path(path)
    if not p.exists() and str(path) in bundled_scene_names():
        return parse_scene(_bundled_text(str(path)), str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise SceneError(f"{path}: {exc.strerror or exc}") from None
    return parse_scene(text, str(path))


def dump_scene(scene: Scene | dict) -> str:
    doc = scene.doc if isinstance(scene, Scene) else scene
    # json writes floats with repr, the shortest string that parses back to the same double
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def bundled_scene_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("pbad").joinpath("scenes").iterdir() if p.name.endswith(".json"))


def _bundled_text(name: str) -> str:
    return resources.files("pbad").joinpath("scenes", f"{name}.json").read_text()


# --- generators for the bundled scenes ---------------------------------------

LINK_LENGTH = 0.5
LINK_WIDTH = 0.1
DENSITY = 1000.0


def _offset(t=(0.0, 0.0, 0.0), r=(0.0, 0.0, 0.0)) -> dict:
    return {"translation": [float(x) for x in t], "rotation_vector": [float(x) for x in r]}


def _box(size, center) -> dict:
    return {"box": {"size": [float(s) for s in size], "density": DENSITY, "center": [float(c) for c in center]}}


def chain_scene(n_links: int, dt: float = 0.0025, duration: float = 10.0, order: int = 2) -> dict:
    """Chain of ``n_links`` boxes joined by two-axis (universal) joints, released horizontally.

    The pivot sits at a height equal to the chain length, so the hanging chain
    just reaches the ground plane z = 0 and the initial energy is positive.
    """
    L = LINK_LENGTH
    links = []
    for i in range(n_links):
        links.append({
            "parent": None if i == 0 else i - 1,
            "joint": {"kind": "universal", "axis": [0.0, 1.0, 0.0], "axis2": [0.0, 0.0, 1.0],
                      "offset": _offset((0.0, 0.0, n_links * L) if i == 0 else (L, 0.0, 0.0))},
            "geometry": _box((L, LINK_WIDTH, LINK_WIDTH), (L / 2, 0.0, 0.0)),
        })
    n = 2 * n_links
    integ = {"kind": PBAD, "order": order, "objective": RESIDUAL, "optimizer": LM}
    return {
        "description": f"{n_links}-link chain ({n} DOF), {L} x {LINK_WIDTH} x {LINK_WIDTH} m boxes at "
                       f"{DENSITY:g} kg/m^3, universal joints, pivot at z = {n_links * L:g} m, released from rest horizontally",
        "links": links,
        "gravity": [0.0, 0.0, -9.81],
        "integrator": integ,
        "dt": dt,
        "duration": duration,
        "initial": {"q": [0.0] * n, "qdot": [0.0] * n},
    }


def swimmer_scene() -> dict:
    """Four boxes in a row: free root plus three z-hinges, neutrally buoyant, with drag and a travelling-wave stroke."""
    L = LINK_LENGTH
    links = [{"parent": None, "joint": {"kind": "free", "offset": _offset()},
              "geometry": _box((L, LINK_WIDTH, LINK_WIDTH), (L / 2, 0.0, 0.0))}]
    for i in range(1, 4):
        links.append({"parent": i - 1,
                      "joint": {"kind": "hinge", "axis": [0.0, 0.0, 1.0], "offset": _offset((L, 0.0, 0.0))},
                      "geometry": _box((L, LINK_WIDTH, LINK_WIDTH), (L / 2, 0.0, 0.0))})
    n = 9
    amp = [0.0] * 6 + [2.0, 2.0, 2.0]
    phase = [0.0] * 6 + [0.0, -2.0 * math.pi / 3.0, -4.0 * math.pi / 3.0]
    return {
        "description": "4-link swimmer (9 DOF: free root and 3 hinges about z), 0.5 x 0.1 x 0.1 m boxes at 1000 kg/m^3, "
                       "no gravity (neutrally buoyant), drag D = 0.05, sinusoidal hinge torques 2 N m at 0.5 Hz "
                       "with a travelling-wave phase lag",
        "links": links,
        "gravity": [0.0, 0.0, 0.0],
        "drag_D": 0.05,
        "actuation": {"kind": "sinusoidal", "amplitude": amp, "frequency_hz": 0.5, "phase": phase},
        "integrator": {"kind": PBAD, "order": 2, "objective": "energy", "optimizer": LM},
        "dt": 0.05,
        "duration": 10.0,
        "initial": {"q": [0.0] * n, "qdot": [0.0] * n},
    }


def spider_scene() -> dict:
    """Flat four-legged tree dropped onto the ground plane.

    Torso (free joint), four upper legs on ball joints at the torso edges and
    four lower legs on hinges; every box is 0.1 m tall and samples contact at
    its four bottom corners, so at rest all samples share the load.
    """
    T = 0.2  # torso side
    Lu, Ll = 0.3, 0.3
    h = LINK_WIDTH
    drop = 0.2
    links = [{"parent": None, "joint": {"kind": "free", "offset": _offset((0.0, 0.0, h / 2 + drop))},
              "geometry": _box((T, T, h), (0.0, 0.0, 0.0)),
              "contact_samples": _bottom_corners((T, T, h), (0.0, 0.0, 0.0))}]
    for k in range(4):
        yaw = k * math.pi / 2.0
        c, s = math.cos(yaw), math.sin(yaw)
        links.append({"parent": 0,
                      "joint": {"kind": "ball", "offset": _offset((T / 2 * c, T / 2 * s, 0.0), (0.0, 0.0, yaw))},
                      "geometry": _box((Lu, h, h), (Lu / 2, 0.0, 0.0)),
                      "contact_samples": _bottom_corners((Lu, h, h), (Lu / 2, 0.0, 0.0))})
    for k in range(4):
        links.append({"parent": 1 + k,
                      "joint": {"kind": "hinge", "axis": [0.0, 1.0, 0.0], "offset": _offset((Lu, 0.0, 0.0))},
                      "geometry": _box((Ll, h, h), (Ll / 2, 0.0, 0.0)),
                      "contact_samples": _bottom_corners((Ll, h, h), (Ll / 2, 0.0, 0.0))})
    n = 6 + 4 * 3 + 4
    return {
        "description": "spider: 0.2 x 0.2 x 0.1 m torso on a free joint, four 0.3 m upper legs on ball joints and "
                       "four 0.3 m lower legs on y-hinges, all boxes 0.1 m tall at 1000 kg/m^3; dropped flat from "
                       "0.2 m onto the plane z = 0 (D1 = 1e4, D2 = 1e2); contact samples are the bottom box corners",
        "links": links,
        "gravity": [0.0, 0.0, -9.81],
        "contact": {"normal": [0.0, 0.0, 1.0], "offset": 0.0, "D1": 1e4, "D2": 1e2},
        "integrator": {"kind": PBAD, "order": 2, "objective": "energy", "optimizer": LM},
        "dt": 0.01,
        "duration": 3.0,
        "initial": {"q": [0.0] * n, "qdot": [0.0] * n},
    }


def _bottom_corners(size, center) -> list:
    hx, hy, hz = (0.5 * s for s in size)
    cx, cy, cz = center
    return [[cx + sx * hx, cy + sy * hy, cz - hz] for sx in (-1.0, 1.0) for sy in (-1.0, 1.0)]


BUNDLED = {
    "chain10": lambda: chain_scene(10),
    "chain100": lambda: chain_scene(100),
    "swimmer": swimmer_scene,
    "spider": spider_scene,
}


def write_bundled_scenes(directory) -> list[Path]:
    """Regenerate the bundled scene files from the generators above."""
    out = []
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, make in BUNDLED.items():
        doc = make()
        scene_from_dict(doc)
        p = d / f"{name}.json"
        p.write_text(dump_scene(doc))
        out.append(p)
    return out
