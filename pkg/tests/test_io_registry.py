"""Tests for the artifact writers and the named-expression registry."""

import numpy as np
import pytest

from obstakit.errors import ConfigError
from obstakit.figures import save_field_figure
from obstakit.io import format_value, write_csv, write_vtk
from obstakit.mesh import friedrichs_keller, interpolate
from obstakit.registry import (
    expression_names,
    field_expression,
    nodal_bound,
    nodal_field,
)


def test_format_value_precision_roundtrip():
    rng = np.random.default_rng(11)
    for x in rng.normal(scale=10.0, size=50):
        assert float(format_value(float(x))) == float(x)
    assert format_value(3) == "3"
    assert format_value(np.int64(-2)) == "-2"
    assert format_value(0.1) == "0.10000000000000001"


def test_write_csv_layout(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["a", "b"], [(1, 0.5), (2, -1.0 / 3.0)])
    data = path.read_bytes()
    assert b"\r" not in data
    lines = data.decode().splitlines()
    assert lines[0] == "a,b"
    assert lines[2] == "2,-0.33333333333333331"


def test_write_vtk_structure(tmp_path):
    mesh = friedrichs_keller(2)
    path = tmp_path / "t.vtk"
    values = np.array([2.5])  # single interior node
    write_vtk(path, mesh, {"field": values})
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert lines[4] == "POINTS 9 double"
    cells_at = lines.index("CELLS 8 32")
    assert all(line.startswith("3 ") for line in lines[cells_at + 1:cells_at + 9])
    types_at = lines.index("CELL_TYPES 8")
    assert lines[types_at + 1:types_at + 9] == ["5"] * 8
    data_at = lines.index("POINT_DATA 9")
    assert lines[data_at + 1] == "SCALARS field double 1"
    # boundary nodes zero-extended, interior node carries the value
    written = [float(v) for v in lines[data_at + 3:data_at + 12]]
    assert written.count(2.5) == 1
    assert written.count(0.0) == 8


def test_registry_known_fields():
    mesh = friedrichs_keller(4)
    assert "tilted-plane" in expression_names()
    vals = nodal_field(mesh, "tilted-plane")
    coords = mesh.interior_coords()
    expected = 10.0 * (-coords[:, 0] - coords[:, 1] + 1.0)
    assert np.max(np.abs(vals - expected)) == 0.0
    assert np.max(np.abs(nodal_field(mesh, "zero"))) == 0.0
    assert np.max(np.abs(nodal_field(mesh, "const:2.5") - 2.5)) == 0.0


def test_registry_bounds_and_errors():
    mesh = friedrichs_keller(4)
    assert np.all(nodal_bound(mesh, "none", "lower") == -np.inf)
    assert np.all(nodal_bound(mesh, "none", "upper") == np.inf)
    assert np.all(nodal_bound(mesh, "const:-5", "lower") == -5.0)
    with pytest.raises(ConfigError):
        field_expression("definitely-not-registered")
    with pytest.raises(ConfigError):
        field_expression("const:noise")
    with pytest.raises(ConfigError):
        field_expression("const:inf")


def test_field_expression_matches_interpolate():
    mesh = friedrichs_keller(6)
    direct = interpolate(mesh, field_expression("bump"))
    named = nodal_field(mesh, "bump")
    assert np.max(np.abs(direct - named)) == 0.0
    assert np.max(named) <= 1.0 + 1e-12


def test_save_field_figure_writes_png(tmp_path):
    mesh = friedrichs_keller(4)
    path = tmp_path / "f.png"
    save_field_figure(mesh, nodal_field(mesh, "bump"), path, title="t",
                      symmetric=True)
    assert path.read_bytes()[:4] == b"\x89PNG"
