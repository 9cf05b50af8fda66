"""File formats: stmesh meshes, result files, scenario configs, CSV output.

The ``stmesh`` format is ASCII and line-oriented with ``#`` comments:

    stmesh <dim> <n_nodes> <n_elements> <n_boundary_facets>
    <dim floats per node line>
    <dim+1 zero-based node ids per element line>
    <dim node ids and a tag string per facet line>

Result files append a ``field <n_nodes> <n_components>`` block of nodal
rows to the mesh block.  Floats are written with 17 significant digits so
round-trips are bitwise stable.
"""

from __future__ import annotations

import numpy as np

from .errors import IoFailure, ParseError, UnknownKey
from .mesh import SimplexMesh, SpaceTimeMesh


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_stmesh(mesh: SimplexMesh, path) -> None:
    try:
        with open(path, "w") as f:
            _write_mesh_block(mesh, f)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _write_mesh_block(mesh: SimplexMesh, f) -> None:
    f.write(f"stmesh {mesh.dim} {mesh.n_nodes} {mesh.n_elements} "
            f"{len(mesh.boundary_facets)}\n")
    for p in mesh.nodes:
        f.write(" ".join(_fmt(v) for v in p) + "\n")
    for el in mesh.elements:
        f.write(" ".join(str(int(v)) for v in el) + "\n")
    for row, tag in zip(mesh.boundary_facets, mesh.boundary_tags):
        f.write(" ".join(str(int(v)) for v in row)
                + f" {mesh.tag_names[tag]}\n")


class _LineReader:
    def __init__(self, path):
        try:
            with open(path) as f:
                raw = f.readlines()
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        self.lines = []
        for no, line in enumerate(raw, start=1):
            body = line.split("#", 1)[0].strip()
            if body:
                self.lines.append((no, body))
        self.pos = 0

    def next(self, what: str):
        if self.pos >= len(self.lines):
            raise ParseError(f"unexpected end of file, expected {what}")
        no, body = self.lines[self.pos]
        self.pos += 1
        return no, body

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.lines)


def _read_mesh_block(reader: _LineReader) -> SimplexMesh:
    no, header = reader.next("stmesh header")
    parts = header.split()
    if len(parts) != 5 or parts[0] != "stmesh":
        raise ParseError("expected 'stmesh <dim> <nodes> <elements> <facets>'",
                         line=no)
    try:
        dim, n_nodes, n_el, n_bf = (int(v) for v in parts[1:])
    except ValueError:
        raise ParseError("non-integer count in stmesh header", line=no)

    nodes = np.empty((n_nodes, dim))
    for k in range(n_nodes):
        no, body = reader.next("node line")
        vals = body.split()
        if len(vals) != dim:
            raise ParseError(f"expected {dim} coordinates", line=no)
        try:
            nodes[k] = [float(v) for v in vals]
        except ValueError:
            raise ParseError("bad float in node line", line=no)

    elements = np.empty((n_el, dim + 1), dtype=np.int64)
    for k in range(n_el):
        no, body = reader.next("element line")
        vals = body.split()
        if len(vals) != dim + 1:
            raise ParseError(f"expected {dim + 1} node ids", line=no)
        try:
            elements[k] = [int(v) for v in vals]
        except ValueError:
            raise ParseError("bad node id in element line", line=no)

    facets = np.empty((n_bf, dim), dtype=np.int64)
    tag_names: list = []
    tags = np.empty(n_bf, dtype=np.int64)
    for k in range(n_bf):
        no, body = reader.next("facet line")
        vals = body.split()
        if len(vals) != dim + 1:
            raise ParseError(f"expected {dim} node ids and a tag", line=no)
        try:
            facets[k] = [int(v) for v in vals[:dim]]
        except ValueError:
            raise ParseError("bad node id in facet line", line=no)
        name = vals[dim]
        if name not in tag_names:
            tag_names.append(name)
        tags[k] = tag_names.index(name)
    return SimplexMesh(nodes, elements, facets, tags, tag_names)


def read_stmesh(path) -> SimplexMesh:
    return _read_mesh_block(_LineReader(path))


def write_result(mesh: SimplexMesh, values: np.ndarray, path) -> None:
    """Mesh block followed by a nodal field block."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != mesh.n_nodes:
        raise IoFailure("field rows do not match node count")
    try:
        with open(path, "w") as f:
            _write_mesh_block(mesh, f)
            f.write(f"field {values.shape[0]} {values.shape[1]}\n")
            for row in values:
                f.write(" ".join(_fmt(v) for v in row) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_result(path):
    """(mesh, values); the mesh is a SpaceTimeMesh when the field has as
    many components as the mesh dimension (velocity + pressure), i.e. the
    mesh block stores a space-time grid."""
    reader = _LineReader(path)
    mesh = _read_mesh_block(reader)
    no, header = reader.next("field header")
    parts = header.split()
    if len(parts) != 3 or parts[0] != "field":
        raise ParseError("expected 'field <n_nodes> <n_components>'", line=no)
    n_rows, n_comp = int(parts[1]), int(parts[2])
    if n_rows != mesh.n_nodes:
        raise ParseError("field node count does not match mesh", line=no)
    values = np.empty((n_rows, n_comp))
    for k in range(n_rows):
        no, body = reader.next("field row")
        vals = body.split()
        if len(vals) != n_comp:
            raise ParseError(f"expected {n_comp} components", line=no)
        values[k] = [float(v) for v in vals]

    if n_comp == mesh.dim:  # space-time mesh: n_sd velocities + pressure
        times = mesh.nodes[:, -1]
        mesh = SpaceTimeMesh(mesh.nodes, mesh.elements, mesh.boundary_facets,
                             mesh.boundary_tags, mesh.tag_names,
                             float(times.min()), float(times.max()),
                             fix_orientation=False)
    return mesh, values


# -- scenario configuration ---------------------------------------------------

_CASE_KEYS = {"base", "name", "mode", "levels", "dt", "t_end", "mesh"}
_MATERIAL_KEYS = {"rho", "mu", "convective"}
_ROTATION_KEYS = {"omega", "center", "axis"}
_SECTIONS = {"case": _CASE_KEYS, "material": _MATERIAL_KEYS,
             "rotation": _ROTATION_KEYS}


def read_config(path):
    """Parse a ``key = value`` scenario file into a ScenarioSpec.

    The file must name a builtin base case; remaining keys override its
    scalar parameters.  Unknown sections or keys raise UnknownKey with the
    offending line number.
    """
    from .scenarios import builtin_cases

    entries = {}
    section = None
    try:
        with open(path) as f:
            raw = f.readlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    for no, line in enumerate(raw, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("[") and body.endswith("]"):
            section = body[1:-1].strip()
            if section not in _SECTIONS:
                raise UnknownKey(f"unknown section [{section}]", line=no)
            continue
        if "=" not in body:
            raise ParseError("expected 'key = value'", line=no)
        if section is None:
            raise ParseError("key outside of any [section]", line=no)
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in _SECTIONS[section]:
            raise UnknownKey(f"unknown key {key!r} in [{section}]", line=no)
        entries[(section, key)] = (no, value)

    if ("case", "base") not in entries:
        raise ParseError("config must set base = <case name> in [case]")
    no, base = entries.pop(("case", "base"))
    registry = builtin_cases()
    if base not in registry:
        raise ParseError(f"unknown base case {base!r} "
                         f"(known: {sorted(registry)})", line=no)

    mesh_override = None
    if ("case", "mesh") in entries:
        no, mesh_path = entries.pop(("case", "mesh"))
        mesh_override = read_stmesh(mesh_path)

    spec = registry[base]() if mesh_override is None else \
        registry[base](mesh=mesh_override)

    def as_float(no, v):
        try:
            return float(v)
        except ValueError:
            raise ParseError(f"bad float {v!r}", line=no)

    def as_int(no, v):
        try:
            return int(v)
        except ValueError:
            raise ParseError(f"bad integer {v!r}", line=no)

    for (section, key), (no, value) in entries.items():
        if (section, key) == ("case", "name"):
            spec.name = value
        elif (section, key) == ("case", "mode"):
            if value not in ("ust", "slab"):
                raise ParseError(f"mode must be ust or slab, got {value!r}",
                                 line=no)
            spec.mode = value
        elif (section, key) == ("case", "levels"):
            spec.levels = as_int(no, value)
        elif (section, key) == ("case", "dt"):
            spec.dt = as_float(no, value)
        elif (section, key) == ("case", "t_end"):
            spec.t_end = as_float(no, value)
        elif (section, key) == ("material", "rho"):
            spec.material.rho = as_float(no, value)
        elif (section, key) == ("material", "mu"):
            spec.material.mu = as_float(no, value)
        elif (section, key) == ("material", "convective"):
            spec.convective = value.lower() in ("1", "true", "yes", "on")
        elif (section, key) == ("rotation", "omega"):
            spec.omega = as_float(no, value)
        elif (section, key) == ("rotation", "center"):
            spec.center = tuple(as_float(no, v) for v in value.split())
        elif (section, key) == ("rotation", "axis"):
            spec.axis = tuple(as_float(no, v) for v in value.split())
    return spec


def write_probe_csv(path, points: np.ndarray, values: np.ndarray,
                    found: np.ndarray) -> None:
    """CSV rows x,y[,z],t,u1,u2[,u3],p; missing points get empty fields."""
    points = np.atleast_2d(points)
    dim = points.shape[1]
    n_sd = dim - 1
    coord_names = ["x", "y", "z"][:n_sd]
    comp_names = [f"u{k + 1}" for k in range(n_sd)]
    header = ",".join(coord_names + ["t"] + comp_names + ["p"])
    try:
        with open(path, "w") as f:
            f.write(header + "\n")
            for p, row, ok in zip(points, values, found):
                cells = [_fmt(v) for v in p]
                cells += [_fmt(v) for v in row] if ok else [""] * (n_sd + 1)
                f.write(",".join(cells) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_convergence_csv(path, rows) -> None:
    cols = ["size", "h", "err_u", "err_p", "order_u", "order_p"]
    try:
        with open(path, "w") as f:
            f.write(",".join(cols) + "\n")
            for row in rows:
                f.write(",".join(
                    _fmt(row[c]) if isinstance(row.get(c), float)
                    else str(row.get(c, "")) for c in cols) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
