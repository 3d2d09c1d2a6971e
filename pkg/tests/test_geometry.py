"""
Tests for reference-cell geometries.

Covers the channel, empty and disk builders, mask import and the
connectivity predicates used by the cell solvers.
"""

import numpy as np
import pytest

from upscaled_ch.homogenization.errors import (
    DegenerateGeometryError,
    InvalidGeometryError,
)
from upscaled_ch.homogenization.geometry import (
    CellGeometry,
    boundary_faces,
    build_channel_cell,
    build_disk_cell,
    build_empty_cell,
    build_triangle_cell,
    fluid_components,
    from_mask,
    mask_from_text,
    mask_to_text,
    porosity,
    wraps_in_x,
    wraps_in_y,
)


def stripe_mask(n: int = 16, rows=(6, 7, 8, 9)) -> np.ndarray:
    """Horizontal fluid band spanning the cell in x."""
    mask = np.zeros((n, n), dtype=bool)
    mask[:, list(rows)] = True
    return mask


class TestChannelCell:
    """Test the sinusoidal channel builder."""

    def test_porosity_matches_cross_section(self):
        cell = build_channel_cell(0.2, 0.46, 128)
        assert abs(cell.porosity - 0.46) <= 1.0 / 128
        assert porosity(cell) == cell.porosity

    @pytest.mark.parametrize("amplitude", [0.0, 0.1, 0.3, 0.5])
    def test_porosity_independent_of_amplitude(self, amplitude):
        cell = build_channel_cell(amplitude, 0.46, 128)
        assert abs(cell.porosity - 0.46) <= 1.0 / 128

    def test_channel_percolates(self):
        cell = build_channel_cell(0.2, 0.46, 64)
        assert fluid_components(cell) == 1
        assert wraps_in_x(cell)
        assert not wraps_in_y(cell)

    def test_mask_is_read_only(self):
        cell = build_channel_cell(0.2, 0.46, 32)
        with pytest.raises(ValueError):
            cell.mask[0, 0] = not cell.mask[0, 0]

    def test_spacing(self):
        cell = build_channel_cell(0.2, 0.46, 32)
        assert cell.nx == cell.ny == 32
        assert cell.hx == pytest.approx(1.0 / 32)

    @pytest.mark.parametrize(
        "amplitude, cross_section, resolution",
        [
            (-0.1, 0.46, 64),
            (0.2, 0.0, 64),
            (0.2, 1.2, 64),
            (0.6, 0.46, 64),
            (0.2, 0.46, 8),
        ],
    )
    def test_invalid_parameters(self, amplitude, cross_section, resolution):
        with pytest.raises(InvalidGeometryError):
            build_channel_cell(amplitude, cross_section, resolution)

    def test_digest_is_content_hash(self):
        a = build_channel_cell(0.2, 0.46, 32)
        b = build_channel_cell(0.2, 0.46, 32)
        c = build_channel_cell(0.1, 0.46, 32)
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()


class TestOtherCells:
    """Test the empty, disk and triangle cells."""

    def test_empty_cell(self):
        cell = build_empty_cell(16)
        assert cell.porosity == 1.0
        assert wraps_in_x(cell) and wraps_in_y(cell)
        assert boundary_faces(cell) == []

    def test_disk_cell_porosity(self):
        cell = build_disk_cell(0.25, 128)
        assert cell.porosity == pytest.approx(1.0 - np.pi / 16, abs=0.01)
        assert wraps_in_x(cell) and wraps_in_y(cell)

    def test_disk_radius_range(self):
        with pytest.raises(InvalidGeometryError):
            build_disk_cell(0.5, 32)

    def test_triangle_cell_porosity(self):
        cell = build_triangle_cell(0.5, 128)
        assert cell.porosity == pytest.approx(1.0 - 0.5**2 / 2, abs=0.01)
        assert wraps_in_x(cell) and wraps_in_y(cell)

    def test_triangle_has_no_vertical_mirror(self):
        mask = build_triangle_cell(0.5, 32).mask
        mirrored = mask[::-1]
        assert not any(
            np.array_equal(mask, np.roll(mirrored, s, axis=0)) for s in range(32)
        )

    def test_triangle_apex_points_along_x(self):
        cell = build_triangle_cell(0.5, 32)
        solid_per_column = (~cell.mask).sum(axis=1)
        assert solid_per_column[8] > solid_per_column[20] > 0
        assert solid_per_column[0] == 0

    @pytest.mark.parametrize("size", [0.0, 1.0])
    def test_triangle_size_range(self, size):
        with pytest.raises(InvalidGeometryError):
            build_triangle_cell(size, 32)


class TestMaskImport:
    """Test arbitrary masks and their text form."""

    def test_disconnected_fluid_rejected(self):
        mask = stripe_mask(rows=(2, 3)) | stripe_mask(rows=(10, 11))
        with pytest.raises(InvalidGeometryError):
            from_mask(mask)

    def test_all_solid_accepted(self):
        cell = from_mask(np.zeros((16, 16), dtype=bool))
        assert cell.n_fluid == 0
        assert fluid_components(cell) == 0
        assert not wraps_in_x(cell)

    def test_all_solid_has_no_boundary(self):
        cell = from_mask(np.zeros((16, 16), dtype=bool))
        with pytest.raises(DegenerateGeometryError):
            boundary_faces(cell)

    def test_enclosed_pocket_does_not_wrap(self):
        mask = np.zeros((16, 16), dtype=bool)
        mask[4:12, 4:12] = True
        cell = from_mask(mask)
        assert fluid_components(cell) == 1
        assert not wraps_in_x(cell)
        assert not wraps_in_y(cell)

    def test_vertical_stripe_wraps_in_y_only(self):
        cell = from_mask(stripe_mask().T)
        assert wraps_in_y(cell)
        assert not wraps_in_x(cell)

    def test_text_round_trip(self):
        cell = build_channel_cell(0.2, 0.46, 32)
        restored = mask_from_text(mask_to_text(cell))
        assert np.array_equal(restored.mask, cell.mask)

    def test_text_top_row_first(self):
        mask = np.zeros((16, 16), dtype=bool)
        mask[:, 15] = True
        mask[:, 14] = True
        lines = mask_to_text(from_mask(mask)).splitlines()
        assert lines[0] == "1" * 16
        assert lines[-1] == "0" * 16

    def test_text_skips_comments(self):
        text = "# pinned mask\n\n" + mask_to_text(from_mask(stripe_mask()))
        assert np.array_equal(mask_from_text(text).mask, stripe_mask())

    def test_text_rejects_bad_characters(self):
        with pytest.raises(InvalidGeometryError):
            mask_from_text("0101\n01x1\n")

    def test_text_rejects_ragged_rows(self):
        with pytest.raises(InvalidGeometryError):
            mask_from_text("0101\n011\n")

    def test_mask_must_be_2d(self):
        with pytest.raises(InvalidGeometryError):
            CellGeometry(np.ones(16, dtype=bool))


class TestBoundaryFaces:
    """Test the staircase wall description."""

    def test_straight_channel_walls(self):
        cell = from_mask(stripe_mask())
        faces = boundary_faces(cell)
        assert len(faces) == 2 * cell.nx
        normals = {face.normal for face in faces}
        assert normals == {(0.0, 1.0), (0.0, -1.0)}

    def test_face_location(self):
        cell = from_mask(stripe_mask())
        top = [f for f in boundary_faces(cell) if f.normal == (0.0, 1.0)]
        assert all(f.node[1] == 9 for f in top)
        assert all(f.location[1] == pytest.approx(10 / 16) for f in top)

    def test_faces_are_sorted(self):
        faces = boundary_faces(build_channel_cell(0.2, 0.46, 32))
        assert faces == sorted(faces, key=lambda f: (f.node, f.normal))
