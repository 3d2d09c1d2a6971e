"""
Periodic reference-cell geometries on a Cartesian mask.

The cell is the unit square [0,1]^2 sampled at cell-centred nodes
``(x_i, y_j) = ((i + 0.5) hx, (j + 0.5) hy)``. ``mask[i, j]`` is True where
the node belongs to the fluid phase Y1 and False in the solid Y2. Solid
walls are represented as a staircase of axis-aligned node faces.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import DegenerateGeometryError, InvalidGeometryError

logger = logging.getLogger(__name__)

MIN_RESOLUTION = 16

# (di, dj) offsets of the four face neighbours, with the outward normal
_FACE_DIRECTIONS = (
    ((1, 0), (1.0, 0.0)),
    ((-1, 0), (-1.0, 0.0)),
    ((0, 1), (0.0, 1.0)),
    ((0, -1), (0.0, -1.0)),
)


class BoundaryFace(NamedTuple):
    """A fluid-solid face of the staircase boundary."""

    node: Tuple[int, int]
    location: Tuple[float, float]
    normal: Tuple[float, float]


@dataclass(frozen=True, eq=False)
class CellGeometry:
    """Immutable fluid/solid mask of the periodic reference cell."""

    mask: np.ndarray
    label: str = "mask"
    hx: float = field(init=False)
    hy: float = field(init=False)

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool, copy=True)
        if mask.ndim != 2 or min(mask.shape) < 1:
            raise InvalidGeometryError(
                f"mask must be a non-empty 2D array, got shape {mask.shape}"
            )
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "hx", 1.0 / mask.shape[0])
        object.__setattr__(self, "hy", 1.0 / mask.shape[1])

    @property
    def nx(self) -> int:
        return self.mask.shape[0]

    @property
    def ny(self) -> int:
        return self.mask.shape[1]

    @property
    def n_fluid(self) -> int:
        return int(self.mask.sum())

    @property
    def porosity(self) -> float:
        return porosity(self)

    def fluid_index(self) -> np.ndarray:
        """Map each node to its position among fluid unknowns (-1 for solid)."""
        index = np.full(self.mask.shape, -1, dtype=np.int64)
        index[self.mask] = np.arange(self.n_fluid)
        return index

    def node_coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return the (x, y) coordinates of every node, indexed [i, j]."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def digest(self) -> str:
        """Short content hash of the mask, used to tag reports."""
        h = hashlib.sha256()
        h.update(np.asarray(self.mask.shape, dtype=np.int64).tobytes())
        h.update(np.packbits(self.mask).tobytes())
        return h.hexdigest()[:16]


def porosity(cell: CellGeometry) -> float:
    """Fraction of fluid nodes, |Y1|/|Y|."""
    return cell.n_fluid / cell.mask.size


def build_channel_cell(
    amplitude: float, cross_section: float, resolution: int
) -> CellGeometry:
    """Build a sinusoidal channel of constant vertical cross-section.

    The centreline is ``y_c(x) = 1/2 + (amplitude/2) sin(2 pi x)`` and the
    fluid occupies ``|y - y_c(x)| < cross_section / 2``, so the porosity
    equals the cross-section up to node counting.

    Args:
        amplitude: Peak-to-peak centreline excursion, as a fraction of the cell.
        cross_section: Vertical channel width, as a fraction of the cell.
        resolution: Nodes per cell side.

    Returns:
        The validated channel geometry.

    Raises:
        InvalidGeometryError: On out-of-range parameters or if the fluid
            does not form one connected channel that wraps in x.
    """
    if amplitude < 0:
        raise InvalidGeometryError(f"amplitude must be >= 0, got {amplitude}")
    if not 0 < cross_section <= 1:
        raise InvalidGeometryError(
            f"cross_section must lie in (0, 1], got {cross_section}"
        )
    if amplitude + cross_section > 1 + 1e-12:
        raise InvalidGeometryError(
            f"amplitude + cross_section must not exceed 1 "
            f"(got {amplitude} + {cross_section})"
        )
    if resolution < MIN_RESOLUTION:
        raise InvalidGeometryError(
            f"resolution must be >= {MIN_RESOLUTION}, got {resolution}"
        )

    nodes = (np.arange(resolution) + 0.5) / resolution
    x, y = np.meshgrid(nodes, nodes, indexing="ij")
    centre = 0.5 + 0.5 * amplitude * np.sin(2.0 * np.pi * x)
    mask = np.abs(y - centre) < 0.5 * cross_section

    cell = CellGeometry(
        mask,
        label=f"channel(amplitude={amplitude:g}, cross_section={cross_section:g})",
    )
    _require_percolating(cell)
    return cell


def build_empty_cell(resolution: int) -> CellGeometry:
    """A cell without obstacles (porosity 1)."""
    if resolution < MIN_RESOLUTION:
        raise InvalidGeometryError(
            f"resolution must be >= {MIN_RESOLUTION}, got {resolution}"
        )
    return CellGeometry(np.ones((resolution, resolution), dtype=bool), label="empty")


def build_disk_cell(radius: float, resolution: int) -> CellGeometry:
    """A cell with one centred circular solid inclusion."""
    if not 0 < radius < 0.5:
        raise InvalidGeometryError(f"radius must lie in (0, 0.5), got {radius}")
    if resolution < MIN_RESOLUTION:
        raise InvalidGeometryError(
            f"resolution must be >= {MIN_RESOLUTION}, got {resolution}"
        )
    nodes = (np.arange(resolution) + 0.5) / resolution
    x, y = np.meshgrid(nodes, nodes, indexing="ij")
    mask = (x - 0.5) ** 2 + (y - 0.5) ** 2 >= radius**2
    cell = CellGeometry(mask, label=f"disk(radius={radius:g})")
    _require_percolating(cell)
    return cell


def build_triangle_cell(size: float, resolution: int) -> CellGeometry:
    """A cell with an isosceles triangular inclusion pointing along +x.

    The base of length ``size`` stands at ``x = (1 - size)/2`` and the apex
    sits at ``(x, y) = ((1 + size)/2, 1/2)``. The inclusion is symmetric
    about ``y = 1/2`` but not about any vertical line, so the cell flow is
    not mirror-symmetric in x and the convection tensor does not vanish.
    """
    if not 0 < size < 1:
        raise InvalidGeometryError(f"size must lie in (0, 1), got {size}")
    if resolution < MIN_RESOLUTION:
        raise InvalidGeometryError(
            f"resolution must be >= {MIN_RESOLUTION}, got {resolution}"
        )
    nodes = (np.arange(resolution) + 0.5) / resolution
    x, y = np.meshgrid(nodes, nodes, indexing="ij")
    base = 0.5 * (1.0 - size)
    along = (x - base) / size
    half_height = 0.5 * size * (1.0 - along)
    solid = (along >= 0.0) & (along <= 1.0) & (np.abs(y - 0.5) <= half_height)
    cell = CellGeometry(~solid, label=f"triangle(size={size:g})")
    _require_percolating(cell)
    return cell


def from_mask(mask: np.ndarray, label: str = "mask") -> CellGeometry:
    """Wrap an arbitrary mask, rejecting a fluid phase split into pieces.

    An all-solid mask is accepted here; solvers report it as degenerate.
    """
    cell = CellGeometry(mask, label=label)
    if cell.n_fluid and fluid_components(cell) != 1:
        raise InvalidGeometryError(
            f"fluid phase of '{label}' is not connected "
            f"({fluid_components(cell)} components)"
        )
    return cell


def boundary_faces(cell: CellGeometry) -> List[BoundaryFace]:
    """List every fluid-solid face with its outward (fluid to solid) normal.

    Raises:
        DegenerateGeometryError: The cell has no fluid.
    """
    if cell.n_fluid == 0:
        raise DegenerateGeometryError(f"cell '{cell.label}' has no fluid nodes")
    faces: List[BoundaryFace] = []
    mask = cell.mask
    for (di, dj), normal in _FACE_DIRECTIONS:
        neighbour = np.roll(mask, shift=(-di, -dj), axis=(0, 1))
        hits = np.argwhere(mask & ~neighbour)
        for i, j in hits:
            x = (i + 0.5 + 0.5 * di) * cell.hx
            y = (j + 0.5 + 0.5 * dj) * cell.hy
            faces.append(BoundaryFace((int(i), int(j)), (x, y), normal))
    faces.sort(key=lambda f: (f.node, f.normal))
    return faces


def _fluid_graph(cell: CellGeometry):
    """Periodic face-adjacency graph of the fluid nodes.

    Returns the symmetric adjacency matrix together with the directed
    x-edges ``(a, b)`` from node (i, j) to (i+1, j) and a flag telling
    whether that edge crosses the periodic x boundary.
    """
    index = cell.fluid_index()
    mask = cell.mask
    ii, jj = np.nonzero(mask)

    right_i = (ii + 1) % cell.nx
    right_ok = mask[right_i, jj]
    xa = index[ii[right_ok], jj[right_ok]]
    xb = index[right_i[right_ok], jj[right_ok]]
    crosses = ii[right_ok] == cell.nx - 1

    up_j = (jj + 1) % cell.ny
    up_ok = mask[ii, up_j]
    ya = index[ii[up_ok], jj[up_ok]]
    yb = index[ii[up_ok], up_j[up_ok]]

    rows = np.concatenate([xa, ya])
    cols = np.concatenate([xb, yb])
    n = cell.n_fluid
    graph = sparse.coo_matrix(
        (np.ones(rows.size), (rows, cols)), shape=(n, n)
    ).tocsr()
    return graph, xa, xb, crosses


def fluid_components(cell: CellGeometry) -> int:
    """Number of periodically connected fluid components."""
    if cell.n_fluid == 0:
        return 0
    graph, _, _, _ = _fluid_graph(cell)
    count, _ = csgraph.connected_components(graph, directed=False)
    return int(count)


def wraps_in_x(cell: CellGeometry) -> bool:
    """Whether some fluid path winds around the cell in the x direction.

    A spanning tree assigns every node an integer x-winding; an x-edge whose
    endpoints disagree with the tree closes a loop that winds around the
    torus, which is exactly a periodic flow path.
    """
    if cell.n_fluid == 0:
        return False
    graph, xa, xb, crosses = _fluid_graph(cell)
    count, labels = csgraph.connected_components(graph, directed=False)
    winding = np.zeros(cell.n_fluid, dtype=np.int64)
    edge_step = {}
    for a, b, c in zip(xa, xb, crosses):
        edge_step[(int(a), int(b))] = 1 if c else 0
        edge_step[(int(b), int(a))] = -1 if c else 0

    for component in range(count):
        root = int(np.flatnonzero(labels == component)[0])
        order, predecessors = csgraph.breadth_first_order(
            graph, root, directed=False, return_predecessors=True
        )
        for node in order[1:]:
            parent = int(predecessors[node])
            winding[node] = winding[parent] + edge_step.get((parent, int(node)), 0)

    step = np.where(crosses, 1, 0)
    return bool(np.any(winding[xb] - winding[xa] != step))


def wraps_in_y(cell: CellGeometry) -> bool:
    """Whether some fluid path winds around the cell in the y direction."""
    return wraps_in_x(CellGeometry(cell.mask.T, label=cell.label))


def _require_percolating(cell: CellGeometry) -> None:
    components = fluid_components(cell)
    if components != 1:
        raise InvalidGeometryError(
            f"fluid phase of '{cell.label}' is not connected ({components} components)"
        )
    if not wraps_in_x(cell):
        raise InvalidGeometryError(
            f"fluid phase of '{cell.label}' has no periodic path in x"
        )


def mask_to_text(cell: CellGeometry) -> str:
    """Serialize the mask as rows of 0/1 characters, top row first."""
    rows = []
    for j in range(cell.ny - 1, -1, -1):
        rows.append("".join("1" if v else "0" for v in cell.mask[:, j]))
    return "\n".join(rows) + "\n"


def mask_from_text(text: str, label: str = "mask-file") -> CellGeometry:
    """Parse a mask written by :func:`mask_to_text`.

    Blank lines and lines starting with ``#`` are ignored.
    """
    rows = [
        line.strip()
        for line in text.splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not rows:
        raise InvalidGeometryError("mask text contains no rows")
    width = len(rows[0])
    for number, row in enumerate(rows, start=1):
        if len(row) != width:
            raise InvalidGeometryError(
                f"mask row {number} has {len(row)} columns, expected {width}"
            )
        if set(row) - {"0", "1"}:
            raise InvalidGeometryError(
                f"mask row {number} contains characters other than 0/1"
            )
    grid = np.array([[c == "1" for c in row] for row in reversed(rows)], dtype=bool)
    return from_mask(grid.T, label=label)
