"""
Tests for stage artifacts on disk.
"""

import numpy as np
import pytest

from upscaled_ch.homogenization.errors import DependencyError, DimensionError
from upscaled_ch.homogenization.geometry import build_channel_cell
from upscaled_ch.homogenization.microcell import (
    solve_corrector_phi,
    solve_periodic_stokes,
)
from upscaled_ch.homogenization.tensors import EffectiveTensors
from upscaled_ch.storage import (
    read_corrector,
    read_flow,
    read_mask,
    read_summary,
    read_table,
    read_tensor_report,
    require,
    write_corrector,
    write_flow,
    write_mask,
    write_summary,
    write_tensor_report,
    write_vtk,
)

HASH = "0" * 64


def edit_entry(path, name, value):
    """Replace one value of a tensor report the way a user would."""
    lines = path.read_text().splitlines()
    lines = [f"{name},{value}" if ln.startswith(name + ",") else ln for ln in lines]
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture(scope="module")
def cell():
    return build_channel_cell(0.2, 0.46, 32)


@pytest.fixture
def tensors():
    return EffectiveTensors(
        D=np.diag([0.38, 0.0]),
        C=np.diag([1.2e-5, 3e-7]),
        M_phi=np.diag([0.38, 0.0]),
        M_w=np.diag([0.38, 0.0]),
        v=[2.1e-4, 0.0],
        porosity=0.46,
        pe_mic=0.04,
        notes={"geometry": "channel"},
    )


class TestMask:
    """Test the mask file."""

    def test_round_trip(self, tmp_path, cell):
        path = write_mask(tmp_path / "mask.txt", cell, HASH)
        restored = read_mask(path)
        assert np.array_equal(restored.mask, cell.mask)
        assert restored.label == cell.label
        assert f"config_hash: {HASH}" in path.read_text()

    def test_missing_mask_names_stage(self, tmp_path):
        with pytest.raises(DependencyError, match="'cell' stage") as info:
            read_mask(tmp_path / "mask.txt")
        assert info.value.path == tmp_path / "mask.txt"


class TestFields:
    """Test corrector and flow tables."""

    def test_corrector_round_trip(self, tmp_path, cell):
        xi = solve_corrector_phi(cell, 1)
        path = write_corrector(tmp_path / "xi.csv", xi, cell, HASH)
        restored = read_corrector(path, cell, 1, "phi")
        assert np.array_equal(restored.values, xi.values)
        assert np.array_equal(restored.gradient, xi.gradient)
        metadata, columns, data = read_table(path)
        assert metadata["field"] == "xi_phi_1"
        assert columns[:2] == ["i", "j"]
        assert data.shape == (cell.mask.size, 8)

    def test_corrector_on_other_geometry(self, tmp_path, cell):
        xi = solve_corrector_phi(cell, 1)
        path = write_corrector(tmp_path / "xi.csv", xi, cell, HASH)
        other = build_channel_cell(0.1, 0.46, 32)
        with pytest.raises(DependencyError, match="geometry"):
            read_corrector(path, other, 1, "phi")

    def test_flow_round_trip(self, tmp_path, cell):
        flow = solve_periodic_stokes(cell)
        path = write_flow(tmp_path / "flow.csv", flow, cell, HASH)
        restored = read_flow(path, cell)
        assert np.array_equal(restored.u, flow.u)
        assert np.array_equal(restored.u_faces, flow.u_faces)
        assert restored.force == (1.0, 0.0)
        assert restored.max_divergence == flow.max_divergence

    def test_vtk_layout(self, tmp_path, cell):
        values = np.arange(cell.mask.size, dtype=float).reshape(cell.nx, cell.ny)
        path = write_vtk(tmp_path / "f.vtk", cell, "xi", HASH, scalars={"xi": values})
        lines = path.read_text().splitlines()
        assert lines[4] == f"DIMENSIONS {cell.nx} {cell.ny} 1"
        first = lines.index("LOOKUP_TABLE default") + 1
        # x runs fastest: the second point is node (1, 0)
        assert float(lines[first + 1]) == values[1, 0]


class TestTensorReport:
    """Test the editable tensor report."""

    def test_round_trip(self, tmp_path, tensors):
        path = write_tensor_report(
            tmp_path / "report.csv", tensors, HASH, residuals={"xi_phi_1": 1e-12}
        )
        restored, metadata = read_tensor_report(path)
        assert np.array_equal(restored.C, tensors.C)
        assert np.array_equal(restored.v, tensors.v)
        assert metadata["config_hash"] == HASH
        assert restored.notes["geometry"] == "channel"
        assert "residual.xi_phi_1," in path.read_text()

    def test_hand_edit_is_read(self, tmp_path, tensors):
        path = write_tensor_report(tmp_path / "report.csv", tensors, HASH)
        edit_entry(path, "D_11", "0.5")
        restored, _ = read_tensor_report(path)
        assert restored.D[0, 0] == 0.5

    def test_bad_value_names_line(self, tmp_path, tensors):
        path = write_tensor_report(tmp_path / "report.csv", tensors, HASH)
        edit_entry(path, "C_22", "three")
        with pytest.raises(DimensionError, match="C_22"):
            read_tensor_report(path)

    def test_missing_report(self, tmp_path):
        with pytest.raises(DependencyError, match="'tensors' stage"):
            read_tensor_report(tmp_path / "report.csv")


class TestSummary:
    """Test stage summaries."""

    def test_round_trip(self, tmp_path):
        path = write_summary(tmp_path / "s.json", {"stage": "cell", "porosity": 0.46})
        assert read_summary(path) == {"porosity": 0.46, "stage": "cell"}

    def test_missing_summary_is_empty(self, tmp_path):
        assert read_summary(tmp_path / "none.json") == {}

    def test_require(self, tmp_path):
        target = tmp_path / "here.txt"
        target.write_text("x")
        assert require(target) == target
