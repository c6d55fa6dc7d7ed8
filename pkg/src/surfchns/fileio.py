"""Configuration files, VTK snapshots, CSV diagnostics and run manifests.

Configuration files are TOML with the sections ``[geometry]``,
``[material]``, ``[potential]``, ``[numerics]``, ``[initial]`` and
``[output]``.  Every key is optional; unknown keys are errors.  Floats in
VTK and CSV output are written with 17 significant digits so that files
read back to the identical binary values.
"""

import datetime as _dt
import json
import logging
import typing
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import expr as _expr
from .config import InitialSpec, NumericsSpec, OutputSpec, SimConfig
from .diagnostics import CSV_COLUMNS, DiagRow
from .errors import ConfigurationError
from .geometry import GeometryPreset
from .physics import MaterialSpec, PotentialSpec

logger = logging.getLogger(__name__)

FLOAT_FMT = "%.17g"
SCALAR_FIELDS = ("phi", "mu", "pi", "H", "K", "vn")
VECTOR_FIELDS = ("V", "u_hat", "v_total", "normal")

# file section -> (dataclass, {file key: attribute})
_SECTIONS = {
    "geometry": (GeometryPreset, {"preset": "kind"}),
    "material": (MaterialSpec, {}),
    "potential": (PotentialSpec, {}),
    "numerics": (NumericsSpec, {}),
    "initial": (InitialSpec, {}),
    "output": (OutputSpec, {}),
}


def _public_fields(cls):
    return [f for f in fields(cls) if f.init and not f.name.startswith("_")]


def _file_keys(section):
    cls, renames = _SECTIONS[section]
    inverse = {v: k for k, v in renames.items()}
    keys = [inverse.get(f.name, f.name) for f in _public_fields(cls)]
    if section == "geometry":
        keys.append("subdivisions")
    return keys


def _check_type(section, key, value, annotation):
    where = f"{section}.{key}"
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is typing.Union and type(None) in args:
        annotation = next(a for a in args if a is not type(None))
        origin = typing.get_origin(annotation)
    if annotation is bool:
        ok = isinstance(value, bool)
    elif annotation is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif annotation is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif annotation is str:
        ok = isinstance(value, str)
    elif origin in (tuple, typing.Tuple):
        ok = isinstance(value, list) and all(isinstance(v, str) for v in value)
        value = tuple(value) if ok else value
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigurationError(f"{where}: expected {getattr(annotation, '__name__', annotation)}, got {value!r}")
    return value


_DEFAULT_SUBDIVISIONS = next(f.default for f in fields(SimConfig) if f.name == "subdivisions")


def check_initial_data(config):
    """Compile the initial expressions and check the separation margin.

    ``|phi0| <= 1 - 2 delta0`` is required on the initial mesh when the
    separation monitor is enabled.
    """
    ini = config.initial
    mesh = config.preset.initial_mesh(config.subdivisions)
    try:
        phi = _expr.evaluate(ini.phi0, mesh.vertices, 0.0)
        for comp in ini.v0:
            _expr.evaluate(comp, mesh.vertices, 0.0)
    except ConfigurationError as exc:
        raise ConfigurationError(f"[initial] {exc}") from None
    if ini.monitor_separation:
        top = float(np.max(np.abs(phi)))
        if top > 1.0 - 2.0 * ini.delta0 + 1e-12:
            raise ConfigurationError(
                f"[initial] phi0 reaches |phi| = {top:.6g}, above 1 - 2 delta0 = {1.0 - 2.0 * ini.delta0:.6g}")


def config_from_dict(data, source="<config>"):
    """Build a validated :class:`SimConfig` from a sectioned mapping."""
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigurationError(f"{source}: unknown section(s) {unknown}; expected {sorted(_SECTIONS)}")
    built = {}
    subdivisions = _DEFAULT_SUBDIVISIONS
    for section, (cls, renames) in _SECTIONS.items():
        raw = data.get(section, {})
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{source}: [{section}] must be a table")
        allowed = _file_keys(section)
        bad = sorted(set(raw) - set(allowed))
        if bad:
            raise ConfigurationError(f"{source}: unknown key(s) in [{section}]: {bad}")
        hints = typing.get_type_hints(cls)
        kwargs = {}
        for key, value in raw.items():
            if section == "geometry" and key == "subdivisions":
                subdivisions = _check_type(section, key, value, int)
                continue
            attr = renames.get(key, key)
            kwargs[attr] = _check_type(section, key, value, hints[attr])
        try:
            built[section] = cls(**kwargs)
        except ConfigurationError as exc:
            raise ConfigurationError(f"{source}: [{section}] {exc}") from None
    try:
        cfg = SimConfig(preset=built["geometry"], subdivisions=subdivisions, material=built["material"],
                        potential=built["potential"], numerics=built["numerics"],
                        initial=built["initial"], output=built["output"])
        check_initial_data(cfg)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    return cfg


def config_to_dict(config, include_none=False):
    """Fully resolved sectioned mapping of a config (TOML/JSON friendly)."""
    objs = {
        "geometry": config.preset, "material": config.material, "potential": config.potential,
        "numerics": config.numerics, "initial": config.initial, "output": config.output,
    }
    out = {}
    for section, obj in objs.items():
        _, renames = _SECTIONS[section]
        inverse = {v: k for k, v in renames.items()}
        d = {}
        for f in _public_fields(type(obj)):
            value = getattr(obj, f.name)
            if callable(value):
                raise ConfigurationError(f"{section}.{f.name} holds a callable and cannot be serialized")
            if isinstance(value, tuple):
                value = list(value)
            if value is None and not include_none:
                continue
            d[inverse.get(f.name, f.name)] = value
        if section == "geometry":
            d["subdivisions"] = config.subdivisions
        out[section] = d
    return out


def parse_config_text(text, source="<string>"):
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"{source}: parse error: {exc}") from None
    return config_from_dict(data, source)


def parse_config(path):
    """Read and validate a run configuration file.

    Raises
    ------
    ConfigurationError
        Missing file, TOML syntax error (with line and column), unknown
        keys, wrong value types or semantic validation failures.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"configuration file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"), str(p))


def serialize_config(config):
    """TOML text that :func:`parse_config_text` maps back to an equal config."""
    return tomli_w.dumps(config_to_dict(config))


# ---------------------------------------------------------------------------
# VTK


def _fmt(values):
    return " ".join(FLOAT_FMT % v for v in values)


def snapshot_fields(state):
    """Point data written for a :class:`StepState`, in file order."""
    s = state.surface
    scalars = {"phi": state.phi, "mu": state.mu, "pi": state.pi, "H": s.mean_curv,
               "K": s.gauss_curv, "vn": s.v_n}
    vectors = {"V": state.V, "u_hat": state.u_hat, "v_total": state.v_total, "normal": s.normal}
    return scalars, vectors


def write_vtk(state, path, title=None):
    """Legacy ASCII VTK polydata of one step state."""
    s = state.surface
    scalars, vectors = snapshot_fields(state)
    title = title or f"surfchns step {state.step} t {FLOAT_FMT % s.t}"
    pts = s.positions
    faces = s.faces
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET POLYDATA",
             f"POINTS {len(pts)} double"]
    lines += [_fmt(p) for p in pts]
    lines.append(f"POLYGONS {len(faces)} {4 * len(faces)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in faces]
    lines.append(f"POINT_DATA {len(pts)}")
    for name in SCALAR_FIELDS:
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [FLOAT_FMT % v for v in np.asarray(scalars[name], dtype=float)]
    for name in VECTOR_FIELDS:
        lines.append(f"VECTORS {name} double")
        lines += [_fmt(v) for v in np.asarray(vectors[name], dtype=float)]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


@dataclass(frozen=True, eq=False)
class VtkData:
    title: str
    points: np.ndarray
    faces: np.ndarray
    scalars: dict
    vectors: dict


def read_vtk(path):
    """Read files produced by :func:`write_vtk`."""
    with open(path, encoding="ascii") as fh:
        tokens_by_line = [ln.split() for ln in fh.read().splitlines()]
    title = " ".join(tokens_by_line[1])
    it = iter(tokens_by_line[4:])
    scalars, vectors = {}, {}
    points = faces = None
    n = 0
    for head in it:
        if not head:
            continue
        kind = head[0]
        if kind == "POINTS":
            n = int(head[1])
            points = np.array([[float(x) for x in next(it)] for _ in range(n)])
        elif kind == "POLYGONS":
            m = int(head[1])
            rows = [next(it) for _ in range(m)]
            if any(r[0] != "3" for r in rows):
                raise ValueError(f"{path}: only triangles are supported")
            faces = np.array([[int(x) for x in r[1:]] for r in rows], dtype=np.int64)
        elif kind == "POINT_DATA":
            n = int(head[1])
        elif kind == "SCALARS":
            next(it)  # LOOKUP_TABLE
            scalars[head[1]] = np.array([float(next(it)[0]) for _ in range(n)])
        elif kind == "VECTORS":
            vectors[head[1]] = np.array([[float(x) for x in next(it)] for _ in range(n)])
        else:
            raise ValueError(f"{path}: unexpected section {kind!r}")
    return VtkData(title, points, faces, scalars, vectors)


# ---------------------------------------------------------------------------
# CSV


def _cell(value):
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return FLOAT_FMT % float(value)


def write_csv(rows, path):
    """Diagnostics table with the fixed column order of :data:`CSV_COLUMNS`."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row.values()) + "\n")


def read_csv(path):
    """Rows written by :func:`write_csv` as :class:`DiagRow` objects."""
    with open(path, encoding="ascii") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        out = []
        for line in fh:
            cells = line.rstrip("\n").split(",")
            kw = {c: (int(v) if c == "picard_iters" else float(v)) for c, v in zip(CSV_COLUMNS, cells)}
            out.append(DiagRow(**kw))
    return out


# ---------------------------------------------------------------------------
# run directories


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(path, config, start, end, abort=None, events=None, outputs=()):
    from . import __version__

    data = {
        "version": __version__,
        "config": config_to_dict(config, include_none=True),
        "start": start,
        "end": end,
        "abort": abort,
        "events": dict(sorted((events or {}).items())),
        "outputs": list(outputs),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=False)
        fh.write("\n")
    return data


def read_manifest(path):
    """Manifest mapping plus its config re-parsed to a :class:`SimConfig`."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    cfg = {sec: {k: v for k, v in vals.items() if v is not None} for sec, vals in data["config"].items()}
    return data, config_from_dict(cfg, str(path))


def run_to_directory(config, out_dir, keep_states=False):
    """Run a simulation and write snapshots, diagnostics and the manifest.

    Returns
    -------
    (Trajectory, dict)
        The trajectory and the manifest content.
    """
    from .stepper import run

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def on_output(state):
        if config.output.write_vtk:
            name = f"snapshot_{state.step:06d}.vtk"
            write_vtk(state, out / name)
            written.append(name)

    start = _now()
    traj = run(config, on_output=on_output, keep_states=keep_states)
    if config.output.write_csv:
        write_csv(traj.rows, out / "diagnostics.csv")
        written.append("diagnostics.csv")
    manifest = write_manifest(out / "manifest.json", config, start, _now(), traj.abort, traj.events, written)
    return traj, manifest


__all__ = [
    "parse_config", "parse_config_text", "serialize_config", "config_from_dict", "config_to_dict",
    "write_vtk", "read_vtk", "write_csv", "read_csv", "write_manifest", "read_manifest",
    "run_to_directory", "check_initial_data", "VtkData", "SCALAR_FIELDS", "VECTOR_FIELDS",
]
