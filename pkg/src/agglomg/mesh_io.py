"""File formats: gmsh MSH 2.2 reading, legacy VTK writing, CSV/JSON reports."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .mesh import Mesh

VTK_TRIANGLE = 5
VTK_TETRA = 10


class MshFormatError(ValueError):
    """The MSH file is missing sections or uses an unsupported version."""


@dataclass
class SweepRecord:
    """One row of a size-sweep table (one algorithm at one desired size)."""

    algorithm: str
    desired_size: int
    actual_average_size: float
    grid_complexity: float
    node_element_ratio: float
    average_connectivity: float
    iterations: int | None = None
    solve_time_s: float | None = None
    setup_time_s: float | None = None
    status: str = "ok"

    def validate(self):
        if self.status == "ok":
            if self.grid_complexity < 1.0:
                raise ValueError("grid complexity must be >= 1")
            if self.actual_average_size < 1.0:
                raise ValueError("average agglomerate size must be >= 1")


def read_msh(path):
    """Read an ASCII MSH 2.2 file into a Mesh.

    Volume elements are type 2 (triangle) or type 4 (tetrahedron); in a
    tetrahedral file, triangles become tagged boundary faces. The first
    physical tag maps to the region id (volume) or boundary tag (surface).
    Anything else is skipped, with a warning giving the skip count.
    Triangles of a tetrahedral file that are not faces of any tetrahedron
    indicate a mixed-dimensional volume mesh and are rejected.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    sections = {}
    i = 0
    while i < len(lines):
        ln = lines[i]
        if ln.startswith("$") and not ln.startswith("$End"):
            name = ln[1:]
            end = f"$End{name}"
            j = i + 1
            while j < len(lines) and lines[j] != end:
                j += 1
            if j >= len(lines):
                raise MshFormatError(f"unterminated section {ln}")
            sections[name] = lines[i + 1:j]
            i = j + 1
        else:
            i += 1

    if "MeshFormat" not in sections:
        raise MshFormatError("missing $MeshFormat section")
    version = sections["MeshFormat"][0].split()[0]
    if not version.startswith("2.2"):
        raise MshFormatError(f"unsupported MSH version {version}; need 2.2 ASCII")
    if "Nodes" not in sections or "Elements" not in sections:
        raise MshFormatError("missing $Nodes or $Elements section")

    node_lines = sections["Nodes"]
    n_nodes = int(node_lines[0])
    if len(node_lines) - 1 != n_nodes:
        raise MshFormatError(
            f"declared {n_nodes} nodes but found {len(node_lines) - 1}")
    ids = np.empty(n_nodes, dtype=np.int64)
    xyz = np.empty((n_nodes, 3), dtype=float)
    for r, ln in enumerate(node_lines[1:]):
        parts = ln.split()
        ids[r] = int(parts[0])
        xyz[r] = [float(parts[1]), float(parts[2]), float(parts[3])]
    id_to_row = {int(v): r for r, v in enumerate(ids)}

    elem_lines = sections["Elements"]
    n_declared = int(elem_lines[0])
    if len(elem_lines) - 1 != n_declared:
        raise MshFormatError(
            f"declared {n_declared} elements but found {len(elem_lines) - 1}")
    lines_1d, line_tags = [], []
    tris, tri_tags = [], []
    tets, tet_tags = [], []
    skipped = 0
    for ln in elem_lines[1:]:
        parts = [int(p) for p in ln.split()]
        etype, ntags = parts[1], parts[2]
        tags = parts[3:3 + ntags]
        conn = parts[3 + ntags:]
        phys = tags[0] if tags else 0
        if etype == 1:
            lines_1d.append(conn)
            line_tags.append(phys)
        elif etype == 2:
            tris.append(conn)
            tri_tags.append(phys)
        elif etype == 4:
            tets.append(conn)
            tet_tags.append(phys)
        else:
            skipped += 1
    if skipped:
        warnings.warn(f"skipped {skipped} unsupported MSH element(s)")

    if tets:
        dim = 3
        elements = np.array([[id_to_row[v] for v in t] for t in tets], dtype=np.int64)
        material = np.array(tet_tags, dtype=np.int64)
        coords = xyz
    elif tris:
        dim = 2
        elements = np.array([[id_to_row[v] for v in t] for t in tris], dtype=np.int64)
        material = np.array(tri_tags, dtype=np.int64)
        coords = xyz[:, :2]
    else:
        raise MshFormatError("no triangle or tetrahedron elements found")

    # fix inverted elements by swapping two nodes (geometry is unchanged)
    x = coords[elements]
    if dim == 2:
        d1, d2 = x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]
        vol = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    else:
        vol = np.linalg.det(x[:, 1:] - x[:, 0:1])
    flipped = vol < 0
    if flipped.any():
        elements = elements.copy()
        elements[flipped] = elements[flipped][:, [0, 2, 1] + ([3] if dim == 3 else [])]

    # surface entities become boundary tags: triangles under tetrahedra,
    # lines under triangles; a triangle that is no tetrahedron's face means
    # the file mixes 2D and 3D volume elements
    boundary_tag = {}
    if dim == 3 and tris:
        tet_faces = set()
        for t in elements:
            for skip in range(4):
                tet_faces.add(tuple(sorted(int(t[j]) for j in range(4) if j != skip)))
        for conn, phys in zip(tris, tri_tags):
            key = tuple(sorted(id_to_row[v] for v in conn))
            if key not in tet_faces:
                raise MshFormatError(
                    "mixed 2D/3D volume mesh: triangle "
                    f"{key} is not a face of any tetrahedron")
            boundary_tag[key] = phys
    elif dim == 2:
        for conn, phys in zip(lines_1d, line_tags):
            key = tuple(sorted(id_to_row[v] for v in conn))
            boundary_tag[key] = phys
    return Mesh(dim=dim, node_coords=coords, elements=elements,
                material_id=material, boundary_tag=boundary_tag)


def write_vtk(path, mesh: Mesh, level_agglomerations=()):
    """Legacy ASCII VTK unstructured grid with one id array per level.

    ``level_agglomerations`` holds the per-level element -> agglomerate
    maps, each defined on the previous level's elements; they are composed
    so the CELL_DATA array ``agglomerate_L<k>`` gives each finest-level
    element its level-k agglomerate id.
    """
    composed = []
    current = np.arange(mesh.n_elements)
    for k, agg in enumerate(level_agglomerations):
        e2a = agg.element_to_agg if hasattr(agg, "element_to_agg") else np.asarray(agg)
        if (e2a < 0).any():
            raise ValueError(f"level {k} has unassigned elements")
        current = e2a[current]
        composed.append(current.copy())

    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("agglomerated unstructured mesh\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        for p in mesh.node_coords:
            row = list(p) + [0.0] * (3 - mesh.dim)
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        k = mesh.dim + 1
        fh.write(f"CELLS {mesh.n_elements} {mesh.n_elements * (k + 1)}\n")
        for el in mesh.elements:
            fh.write(f"{k} " + " ".join(str(int(v)) for v in el) + "\n")
        fh.write(f"CELL_TYPES {mesh.n_elements}\n")
        ctype = VTK_TRIANGLE if mesh.dim == 2 else VTK_TETRA
        fh.write("\n".join([str(ctype)] * mesh.n_elements) + "\n")
        if composed:
            fh.write(f"CELL_DATA {mesh.n_elements}\n")
            for k_lvl, ids in enumerate(composed):
                fh.write(f"SCALARS agglomerate_L{k_lvl + 1} int 1\n")
                fh.write("LOOKUP_TABLE default\n")
                fh.write("\n".join(str(int(v)) for v in ids) + "\n")


def read_vtk_cell_data(path):
    """Parse back the per-level id arrays of a file written by write_vtk."""
    arrays = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = 0
    n_cells = None
    while i < len(lines):
        ln = lines[i]
        if ln.startswith("CELLS "):
            n_cells = int(ln.split()[1])
        if ln.startswith("SCALARS "):
            name = ln.split()[1]
            vals = []
            i += 2  # skip LOOKUP_TABLE
            while len(vals) < n_cells:
                vals.extend(int(v) for v in lines[i].split())
                i += 1
            arrays[name] = np.array(vals, dtype=np.int64)
            continue
        i += 1
    return arrays


def write_sweep_csv(path, records):
    """CSV table of sweep records; header row matches the field names."""
    fields = [f for f in SweepRecord.__dataclass_fields__]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for rec in records:
            row = asdict(rec)
            writer.writerow(["" if row[f] is None else row[f] for f in fields])


def write_report_json(path, report):
    """JSON solve report with the residual history as an array."""
    payload = {
        "problem": getattr(report, "problem", None),
        "algorithm": getattr(report, "algorithm", None),
        "levels": getattr(report, "levels", None),
        "iterations": report.iterations,
        "setup_time_s": report.setup_time_s,
        "solve_time_s": report.solve_time_s,
        "converged": report.converged,
        "residuals": [float(r) for r in report.residuals],
        "meta": getattr(report, "meta", {}),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
