"""JSON run configuration: strict schema, cross-field checks, resolved objects."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .errors import ConfigError, StorageError
from .fespace import THSpace, build_taylor_hood
from .fom import FomConfig, Scheme
from .mesh import Mesh, load_msh, unit_square_mesh
from .pod import PodConfig
from .problems import DeskProblem, Forcing, ManufacturedSolution, desk_forcing, table_forcing, zero_forcing

__all__ = ["RunConfig", "load_config", "parse_config", "SCHEMA", "DEFAULTS"]

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _obj({
    "mesh": {"oneOf": [
        _obj({"square": {"type": "integer", "minimum": 1}, "side_markers": {"type": "boolean"}}, ["square"]),
        _obj({"msh": {"type": "string"}}, ["msh"]),
    ]},
    "physics": _obj({"nu": _nonneg, "mu": _nonneg, "test_mode": {"type": "boolean"}}, ["nu"]),
    "time": _obj({
        "dt": _pos, "T": _pos,
        "scheme": {"enum": [s.value for s in Scheme]},
        "picard_tol": _pos, "picard_max_iters": {"type": "integer", "minimum": 1},
    }, ["dt", "T"]),
    "forcing": _obj({
        "case": {"enum": ["manufactured", "zero", "table", "desk"]},
        "table": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
                  "minItems": 1},
        "desk": _obj({"amplitude": _num, "omega": _pos, "harmonics": {"type": "integer", "minimum": 0},
                      "decay": _num}),
    }, ["case"]),
    "bc": {"type": "object", "patternProperties": {
        "^[0-9]+$": {"oneOf": [{"const": "zero"},
                               {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                               {"const": "free"}]}},
        "additionalProperties": False},
    "snapshots": _obj({
        "window": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "stride": {"type": "integer", "minimum": 1},
        "centering": {"type": "boolean"},
    }, ["window"]),
    "pod": {"oneOf": [_obj({"r": {"type": "integer"}}, ["r"]), _obj({"tol": _pos}, ["tol"]), _obj({})]},
    "rom": _obj({
        "forms": {"type": "array", "items": {"enum": ["skew", "emac"]}, "minItems": 1, "uniqueItems": True},
        "r": {"oneOf": [{"type": "integer"}, {"type": "array", "items": {"type": "integer"}, "minItems": 1}]},
        "window": {"enum": ["reconstructive", "predictive"]},
        "scheme": {"enum": [s.value for s in Scheme]},
    }),
    "forces": _obj({"marker": {"type": "integer"}, "density": _pos, "velocity": _pos,
                    "diameter": _pos}, ["marker"]),
    "output": _obj({"directory": {"type": "string"}}),
}, ["mesh", "physics", "time", "forcing"])

DEFAULTS = {
    "physics.mu": 0.05,
    "physics.test_mode": False,
    "time.scheme": Scheme.IMPLICIT_EULER.value,
    "time.picard_tol": 1e-10,
    "time.picard_max_iters": 50,
    "snapshots.stride": 1,
    "snapshots.centering": False,
    "rom.forms": ["skew"],
    "rom.window": "reconstructive",
    "output.directory": "out",
}


def _apply_defaults(doc: dict) -> tuple[dict, list[str]]:
    applied = []
    doc.setdefault("rom", {})
    doc.setdefault("output", {})
    for key, value in DEFAULTS.items():
        section, name = key.split(".")
        if section not in doc:
            continue
        if name not in doc[section]:
            doc[section][name] = copy.deepcopy(value)
            applied.append(key)
    if "scheme" not in doc["rom"]:
        doc["rom"]["scheme"] = doc["time"]["scheme"]
        applied.append("rom.scheme")
    return doc, applied


@dataclass
class RunConfig:
    """Validated configuration with the defaults that were filled in."""

    doc: dict
    applied_defaults: list
    base_dir: Path

    # -- resolved objects ------------------------------------------------

    def mesh(self) -> Mesh:
        m = self.doc["mesh"]
        if "square" in m:
            return unit_square_mesh(m["square"], m.get("side_markers", False))
        path = Path(m["msh"])
        if not path.is_absolute():
            path = self.base_dir / path
        return load_msh(path)

    def space(self, mesh: Mesh | None = None) -> THSpace:
        mesh = self.mesh() if mesh is None else mesh
        bc = self.doc.get("bc")
        if bc is None:
            return build_taylor_hood(mesh)
        markers, values = [], {}
        for key, spec in bc.items():
            if spec == "free":
                continue
            markers.append(int(key))
            if spec != "zero":
                gx, gy = float(spec[0]), float(spec[1])
                values[int(key)] = (lambda x, y, gx=gx, gy=gy: (gx + 0 * x, gy + 0 * x))
        unknown = set(markers) - mesh.markers()
        if unknown:
            raise ConfigError(f"bc: markers {sorted(unknown)} do not occur on the mesh")
        return build_taylor_hood(mesh, markers, values)

    @property
    def exact(self) -> ManufacturedSolution | None:
        if self.doc["forcing"]["case"] == "manufactured":
            return ManufacturedSolution(self.doc["physics"]["nu"])
        return None

    def forcing(self) -> Forcing:
        f = self.doc["forcing"]
        case = f["case"]
        if case == "manufactured":
            return self.exact.forcing()
        if case == "zero":
            return zero_forcing()
        if case == "table":
            return table_forcing(f["table"])
        return desk_forcing(DeskProblem(**f.get("desk", {})))

    def fom_config(self, keep_reference: bool = True) -> FomConfig:
        ph, tm = self.doc["physics"], self.doc["time"]
        snaps = self.doc.get("snapshots")
        exact = self.exact
        window = tuple(snaps["window"]) if snaps else None
        return FomConfig(
            nu=ph["nu"], mu=ph["mu"], dt=tm["dt"], T=tm["T"], scheme=tm["scheme"],
            picard_tol=tm["picard_tol"], picard_max_iters=tm["picard_max_iters"],
            forcing=self.forcing(), initial=None if exact is None else exact.velocity(0.0),
            window=window, stride=snaps["stride"] if snaps else 1, exact=exact,
            reference_end=tm["T"] if (snaps and keep_reference) else None,
            test_mode=ph["test_mode"])

    def pod_config(self) -> PodConfig:
        p = self.doc.get("pod", {})
        centering = self.doc.get("snapshots", {}).get("centering", False)
        return PodConfig(centering=centering, r=p.get("r"), tol=p.get("tol"))

    def rom_ranks(self, d_v: int) -> list[int]:
        rom = self.doc.get("rom", {})
        r = rom.get("r", self.doc.get("pod", {}).get("r", d_v))
        return [r] if isinstance(r, int) else list(r)

    @property
    def output_dir(self) -> Path:
        out = Path(self.doc["output"]["directory"])
        return out if out.is_absolute() else self.base_dir / out

    def resolved(self) -> dict:
        return {"config": self.doc, "applied_defaults": self.applied_defaults}


def _where(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def parse_config(doc: dict, base_dir=".") -> RunConfig:
    """Validate a configuration document and fill documented defaults."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(f"field {_where(e)}: {e.message}")
    doc, applied = _apply_defaults(copy.deepcopy(doc))
    tm = doc["time"]
    if "snapshots" in doc:
        t0, t1 = doc["snapshots"]["window"]
        if not (0 <= t0 <= t1 <= tm["T"] * (1 + 1e-12)):
            raise ConfigError(f"field snapshots.window: [{t0}, {t1}] is not inside [0, {tm['T']}]")
    if "r" in doc.get("pod", {}) and doc["pod"]["r"] < 1:
        raise ConfigError("field pod.r: r must be >= 1")
    r = doc.get("rom", {}).get("r")
    if r is not None and min([r] if isinstance(r, int) else r) < 1:
        raise ConfigError("field rom.r: r must be >= 1")
    if doc["forcing"]["case"] == "table" and "table" not in doc["forcing"]:
        raise ConfigError("field forcing.table: required for case 'table'")
    if doc["physics"]["nu"] == 0 and not doc["physics"]["test_mode"]:
        raise ConfigError("field physics.nu: nu = 0 requires physics.test_mode")
    cfg = RunConfig(doc, applied, Path(base_dir))
    cfg.fom_config()  # runs the time-grid checks
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(doc, path.parent)
