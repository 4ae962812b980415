"""File formats: OFF/OBJ meshes, XYZ/PLY point sets, OBJ exports, JSON reports.

Text is written with 17 significant digits so values round-trip through
float64.  Parsers raise ParseError with the offending path and line number.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .laguerre import RestrictedLaguerreDiagram
from .measures import SimplexSoup, SiteSet

log = logging.getLogger(__name__)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _data_lines(path: str):
    """Yield (line_number, tokens) for non-blank lines, comments stripped."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------

def load_mesh(path: str, density_path: str | None = None,
              allow_fan: bool = True) -> SimplexSoup:
    """Triangle soup from an OFF or OBJ file, by extension.

    Faces with more than three sides are fan-triangulated around their first
    vertex (with a warning), unless allow_fan is off, in which case they are
    a parse error.  An optional sidecar file supplies one density value per
    vertex, one per line.
    """
    lower = path.lower()
    if lower.endswith(".off"):
        vertices, faces = _load_off(path, allow_fan)
    elif lower.endswith(".obj"):
        vertices, faces = _load_obj(path, allow_fan)
    else:
        raise ValidationError(f"unknown mesh extension in {path!r} "
                              "(expected .off or .obj)")
    density = None
    if density_path is not None:
        density = load_density(density_path, len(vertices))
    return SimplexSoup(np.array(vertices, dtype=np.float64),
                       np.array(faces, dtype=np.int64).reshape(-1, 3),
                       density=density)


def _fan(face: list[int], path: str, lineno: int, fanned: list[int],
         allow_fan: bool):
    if len(face) < 3:
        raise ParseError(path, lineno, f"face with {len(face)} vertices")
    if len(face) > 3:
        if not allow_fan:
            raise ParseError(path, lineno,
                             f"non-triangle face ({len(face)} vertices) and "
                             "fan triangulation is disabled")
        fanned[0] += 1
    for k in range(1, len(face) - 1):
        yield (face[0], face[k], face[k + 1])


def _load_off(path: str, allow_fan: bool = True):
    lines = _data_lines(path)
    try:
        lineno, tokens = next(lines)
    except StopIteration:
        raise ParseError(path, 1, "empty file") from None
    if tokens == ["OFF"]:
        try:
            lineno, tokens = next(lines)
        except StopIteration:
            raise ParseError(path, lineno, "missing counts line") from None
    if len(tokens) != 3:
        raise ParseError(path, lineno, f"expected 'nv nf ne', got {' '.join(tokens)!r}")
    try:
        nv, nf, _ = (int(t) for t in tokens)
    except ValueError:
        raise ParseError(path, lineno, "counts are not integers") from None
    vertices, faces = [], []
    fanned = [0]
    for _ in range(nv):
        try:
            lineno, tokens = next(lines)
        except StopIteration:
            raise ParseError(path, lineno, f"expected {nv} vertices") from None
        try:
            vertices.append(tuple(float(t) for t in tokens[:3]))
        except ValueError:
            raise ParseError(path, lineno, f"bad vertex line {' '.join(tokens)!r}") from None
        if len(tokens) < 3:
            raise ParseError(path, lineno, "vertex needs three coordinates")
    for _ in range(nf):
        try:
            lineno, tokens = next(lines)
        except StopIteration:
            raise ParseError(path, lineno, f"expected {nf} faces") from None
        try:
            k = int(tokens[0])
            face = [int(t) for t in tokens[1:1 + k]]
        except ValueError:
            raise ParseError(path, lineno, f"bad face line {' '.join(tokens)!r}") from None
        if len(face) != k:
            raise ParseError(path, lineno, f"face promises {k} vertices, has {len(face)}")
        faces.extend(_fan(face, path, lineno, fanned, allow_fan))
    if fanned[0]:
        log.warning("%s: fan-triangulated %d polygonal faces", path, fanned[0])
    return vertices, faces


def _load_obj(path: str, allow_fan: bool = True):
    vertices, faces = [], []
    fanned = [0]
    for lineno, tokens in _data_lines(path):
        if tokens[0] == "v":
            if len(tokens) < 4:
                raise ParseError(path, lineno, "vertex needs three coordinates")
            try:
                vertices.append(tuple(float(t) for t in tokens[1:4]))
            except ValueError:
                raise ParseError(path, lineno, f"bad vertex line {' '.join(tokens)!r}") from None
        elif tokens[0] == "f":
            face = []
            for t in tokens[1:]:
                head = t.split("/", 1)[0]
                try:
                    idx = int(head)
                except ValueError:
                    raise ParseError(path, lineno, f"bad face index {t!r}") from None
                if idx == 0:
                    raise ParseError(path, lineno, "OBJ indices are 1-based")
                face.append(idx - 1 if idx > 0 else len(vertices) + idx)
            faces.extend(_fan(face, path, lineno, fanned, allow_fan))
        # all other directives (vn, vt, usemtl, ...) are ignored
    if fanned[0]:
        log.warning("%s: fan-triangulated %d polygonal faces", path, fanned[0])
    if not vertices:
        raise ParseError(path, 1, "no vertices found")
    return vertices, faces


def load_density(path: str, n_vertices: int) -> np.ndarray:
    """Per-vertex density values, one number per line."""
    values = []
    for lineno, tokens in _data_lines(path):
        tokens = [t for t in ",".join(tokens).split(",") if t]
        if len(tokens) != 1:
            raise ParseError(path, lineno, f"expected one value, got {len(tokens)}")
        try:
            values.append(float(tokens[0]))
        except ValueError:
            raise ParseError(path, lineno, f"bad density value {tokens[0]!r}") from None
    if len(values) != n_vertices:
        raise ValidationError(f"{path}: {len(values)} density values for "
                              f"{n_vertices} vertices")
    return np.array(values, dtype=np.float64)


def write_obj(path: str, vertices: np.ndarray, faces: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in np.asarray(vertices, dtype=np.float64):
            fh.write(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
        for f in np.asarray(faces, dtype=np.int64):
            fh.write("f " + " ".join(str(int(i) + 1) for i in f) + "\n")


# ---------------------------------------------------------------------------
# point sets
# ---------------------------------------------------------------------------

def load_points(path: str) -> SiteSet:
    """Point set from an XYZ or PLY file, by extension.

    XYZ rows carry three coordinates and an optional fourth mass column.
    PLY files may be ascii or binary_little_endian; the vertex element needs
    x, y, z properties and may carry a mass property.
    """
    lower = path.lower()
    if lower.endswith(".xyz"):
        return _load_xyz(path)
    if lower.endswith(".ply"):
        return _load_ply(path)
    raise ValidationError(f"unknown point extension in {path!r} "
                          "(expected .xyz or .ply)")


def _load_xyz(path: str) -> SiteSet:
    rows, width = [], None
    for lineno, tokens in _data_lines(path):
        if len(tokens) not in (3, 4):
            raise ParseError(path, lineno, f"expected 3 or 4 columns, got {len(tokens)}")
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise ParseError(path, lineno, f"row width changed from {width} "
                             f"to {len(tokens)}")
        try:
            rows.append(tuple(float(t) for t in tokens))
        except ValueError:
            raise ParseError(path, lineno, f"bad number in {' '.join(tokens)!r}") from None
    if not rows:
        raise ParseError(path, 1, "no points found")
    data = np.array(rows, dtype=np.float64)
    masses = _normalized_masses(data[:, 3], path) if width == 4 else None
    return SiteSet(data[:, :3], masses)


def _normalized_masses(raw: np.ndarray, path: str) -> np.ndarray:
    # mass columns are relative weights; rescale so they sum to one
    total = float(raw.sum())
    if not np.isfinite(total) or total <= 0.0:
        raise ValidationError(f"{path}: point masses must sum to a positive value")
    return raw / total


_PLY_TYPES = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


def _load_ply(path: str) -> SiteSet:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"ply":
            raise ParseError(path, 1, "not a PLY file")
        fmt = None
        n_vertices = None
        props: list[tuple[str, str]] = []
        in_vertex = False
        lineno = 1
        while True:
            raw = fh.readline()
            lineno += 1
            if not raw:
                raise ParseError(path, lineno, "header ended prematurely")
            tokens = raw.decode("ascii", "replace").split()
            if not tokens or tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                if tokens[1] not in ("ascii", "binary_little_endian"):
                    raise ParseError(path, lineno,
                                     f"unsupported PLY format {tokens[1]!r}")
                fmt = tokens[1]
            elif tokens[0] == "element":
                in_vertex = tokens[1] == "vertex"
                if in_vertex:
                    n_vertices = int(tokens[2])
                elif n_vertices is None:
                    raise ParseError(path, lineno,
                                     "vertex element must come first")
                elif int(tokens[2]) != 0:
                    raise ParseError(path, lineno,
                                     f"unsupported element {tokens[1]!r}")
            elif tokens[0] == "property" and in_vertex:
                if tokens[1] == "list":
                    raise ParseError(path, lineno,
                                     "list properties on vertices are unsupported")
                if tokens[1] not in _PLY_TYPES:
                    raise ParseError(path, lineno,
                                     f"unknown property type {tokens[1]!r}")
                props.append((tokens[2], _PLY_TYPES[tokens[1]]))
            elif tokens[0] == "end_header":
                break
        if fmt is None or n_vertices is None:
            raise ParseError(path, lineno, "missing format or vertex element")
        names = [p[0] for p in props]
        for needed in ("x", "y", "z"):
            if needed not in names:
                raise ParseError(path, lineno, f"vertex element lacks {needed!r}")
        if fmt == "ascii":
            data = np.zeros((n_vertices, len(props)))
            for r in range(n_vertices):
                raw = fh.readline()
                lineno += 1
                tokens = raw.decode("ascii", "replace").split()
                if len(tokens) < len(props):
                    raise ParseError(path, lineno,
                                     f"expected {len(props)} values per vertex")
                data[r] = [float(t) for t in tokens[:len(props)]]
        else:
            rec = struct.Struct("<" + "".join(p[1] for p in props))
            buf = fh.read(rec.size * n_vertices)
            if len(buf) != rec.size * n_vertices:
                raise ParseError(path, lineno, "binary payload truncated")
            data = np.array([rec.unpack_from(buf, k * rec.size)
                             for k in range(n_vertices)], dtype=np.float64)
            data = data.reshape(n_vertices, len(props))
    cols = {name: data[:, k] for k, (name, _) in enumerate(props)}
    positions = np.column_stack([cols["x"], cols["y"], cols["z"]])
    masses = cols.get("mass")
    if masses is not None:
        masses = _normalized_masses(masses, path)
    return SiteSet(positions, masses)


def write_xyz(path: str, positions: np.ndarray,
              masses: np.ndarray | None = None) -> None:
    positions = np.asarray(positions, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        for k, p in enumerate(positions):
            row = f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}"
            if masses is not None:
                row += f" {_fmt(masses[k])}"
            fh.write(row + "\n")


def write_weights(path: str, psi) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x in np.asarray(psi, dtype=np.float64):
            fh.write(_fmt(x) + "\n")


def export_cells(diagram: RestrictedLaguerreDiagram, path: str) -> None:
    """Write every cell's polygons to an OBJ, one group per site (g cell_<i>).

    Polygons are fan-triangulated around their first vertex so the file
    re-imports as a plain triangle soup; fan slivers far below the geometric
    tolerance are dropped.  Output order is deterministic: ascending site
    index, then source-triangle order.  Needs a diagram computed with
    geometry retained.
    """
    if diagram.cells is None:
        raise ValidationError("diagram carries no geometry; recompute with "
                              "want_geometry=True")
    # skip fan triangles that would fail the degenerate-area check on re-import
    sliver = 100.0 * diagram.soup.eps_geom ** 2
    by_site: dict[int, list[np.ndarray]] = {}
    for row in diagram.cells:
        for i, poly in row:
            by_site.setdefault(i, []).append(poly.vertices)
    with open(path, "w", encoding="utf-8") as fh:
        offset = 1
        for i in sorted(by_site):
            fh.write(f"g cell_{i}\n")
            for verts in by_site[i]:
                faces = []
                for k in range(1, len(verts) - 1):
                    cross = np.cross(verts[k] - verts[0], verts[k + 1] - verts[0])
                    if 0.5 * float(np.linalg.norm(cross)) <= sliver:
                        continue
                    faces.append((offset, offset + k, offset + k + 1))
                if not faces:
                    continue
                for v in verts:
                    fh.write(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
                for a, b, c in faces:
                    fh.write(f"f {a} {b} {c}\n")
                offset += len(verts)


# ---------------------------------------------------------------------------
# run reports
# ---------------------------------------------------------------------------

def mesh_digest(soup) -> dict:
    """Size, extent and mass summary identifying a loaded soup."""
    lo, hi = soup.bbox
    return {
        "vertices": int(soup.vertices.shape[0]),
        "triangles": int(soup.triangles.shape[0]),
        "bbox": [[float(x) for x in lo], [float(x) for x in hi]],
        "total_mass": float(soup.total_mass),
    }


def points_digest(sites) -> dict:
    lo = sites.positions.min(axis=0)
    hi = sites.positions.max(axis=0)
    return {
        "count": int(sites.n),
        "bbox": [[float(x) for x in lo], [float(x) for x in hi]],
        "total_mass": float(sites.masses.sum()),
    }


@dataclass
class RunReport:
    """Machine-readable record of one CLI run (schema version 1)."""

    command: str
    arguments: dict = field(default_factory=dict)
    status: str = "ok"
    error: str | None = None
    inputs: dict = field(default_factory=dict)
    solve: dict | None = None
    certificate: dict | None = None
    warnings: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    def to_json_dict(self) -> dict:
        d = {
            "schema": 1,
            "command": self.command,
            "arguments": self.arguments,
            "status": self.status,
            "inputs": self.inputs,
            "warnings": list(self.warnings),
            "outputs": self.outputs,
            "wall_time_s": self.wall_time_s,
        }
        if self.error is not None:
            d["error"] = self.error
        if self.solve is not None:
            d["solve"] = self.solve
        if self.certificate is not None:
            d["certificate"] = self.certificate
        d.update(self.extra)
        return d


def write_run_report(path: str, report: RunReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
