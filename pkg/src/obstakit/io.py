"""Bit-stable writers for the delimited and VTK artifacts.

All floating-point output goes through one formatter (17 significant
digits, C locale semantics, '\\n' line endings) so that identical runs
produce byte-identical files.
"""

import numpy as np

from .mesh import extend_with_boundary


def format_value(value):
    """Render one cell: floats at 17 significant digits, the rest via str."""
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows):
    """Comma-separated table with a header row and fixed float formatting."""
    lines = [",".join(str(h) for h in header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_vtk(path, mesh, point_data, title="obstakit field output"):
    """Legacy ASCII VTK unstructured grid with per-point scalar fields.

    point_data maps field names to interior nodal vectors; each field is
    extended by zero to the boundary so viewers see the whole square.
    """
    nodes = mesh.nodes
    tris = mesh.triangles
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(nodes)} double",
    ]
    for x1, x2 in nodes:
        lines.append(f"{format_value(float(x1))} {format_value(float(x2))} 0")
    lines.append(f"CELLS {len(tris)} {4 * len(tris)}")
    for a, b, c in tris:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {len(tris)}")
    lines.extend(["5"] * len(tris))
    lines.append(f"POINT_DATA {len(nodes)}")
    for name, values in point_data.items():
        full = extend_with_boundary(mesh, np.asarray(values, dtype=float))
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(format_value(float(v)) for v in full)
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
