"""
Uniform cell-centered grids on an interval and on a rectangle.

Both grid types expose the same face bookkeeping so the finite-volume
assembly in :mod:`ddrobin.solver` does not need to branch on dimension:

* ``interior_faces()`` returns the (left cell, right cell) flat indices of every
  interior face together with the center-to-center distance and face measure.
* ``boundary_faces()`` returns the adjacent cell, the face midpoint, the face
  measure and the outward normal of every boundary face.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np


class InteriorFaces(NamedTuple):
    left: np.ndarray  # flat index of the cell on the negative side
    right: np.ndarray  # flat index of the cell on the positive side
    spacing: np.ndarray  # center-to-center distance
    measure: np.ndarray  # face length (1 in 1-D)


class BoundaryFaces(NamedTuple):
    cell: np.ndarray
    points: np.ndarray  # shape (m,) in 1-D, (m, 2) in 2-D
    measure: np.ndarray
    normal_sign: np.ndarray  # +1 if the outward normal points along +axis
    axis: np.ndarray
    spacing: np.ndarray  # cell width normal to the face


@dataclass(frozen=True)
class Grid1D:
    n_cells: int
    x_left: float = 0.0
    x_right: float = 1.0
    cell_centers: np.ndarray = field(init=False, repr=False, compare=False)
    cell_width: float = field(init=False)

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise ValueError(f"Grid1D needs n_cells >= 2, got {self.n_cells}")
        if not (np.isfinite(self.x_left) and np.isfinite(self.x_right)):
            raise ValueError("grid endpoints must be finite")
        if not self.x_right > self.x_left:
            raise ValueError(
                f"degenerate interval [{self.x_left}, {self.x_right}]"
            )
        h = (self.x_right - self.x_left) / self.n_cells
        centers = self.x_left + (np.arange(self.n_cells) + 0.5) * h
        centers.setflags(write=False)
        object.__setattr__(self, "n_cells", int(self.n_cells))
        object.__setattr__(self, "cell_width", h)
        object.__setattr__(self, "cell_centers", centers)

    dim = 1

    @property
    def shape(self) -> tuple[int]:
        return (self.n_cells,)

    @property
    def size(self) -> int:
        return self.n_cells

    @property
    def cell_volume(self) -> float:
        return self.cell_width

    @property
    def faces(self) -> np.ndarray:
        return np.linspace(self.x_left, self.x_right, self.n_cells + 1)

    def interior_faces(self) -> InteriorFaces:
        n = self.n_cells
        left = np.arange(n - 1)
        return InteriorFaces(
            left, left + 1, np.full(n - 1, self.cell_width), np.ones(n - 1)
        )

    def boundary_faces(self) -> BoundaryFaces:
        h = self.cell_width
        return BoundaryFaces(
            cell=np.array([0, self.n_cells - 1]),
            points=np.array([self.x_left, self.x_right]),
            measure=np.ones(2),
            normal_sign=np.array([-1.0, 1.0]),
            axis=np.zeros(2, dtype=int),
            spacing=np.full(2, h),
        )


@dataclass(frozen=True)
class Grid2D:
    n_x: int
    n_y: int
    domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    h_x: float = field(init=False)
    h_y: float = field(init=False)

    def __post_init__(self):
        for name in ("n_x", "n_y"):
            n = getattr(self, name)
            if int(n) != n or n < 3:
                raise ValueError(f"Grid2D needs {name} >= 3, got {n}")
            object.__setattr__(self, name, int(n))
        x0, x1, y0, y1 = (float(v) for v in self.domain)
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate rectangle {self.domain}")
        object.__setattr__(self, "domain", (x0, x1, y0, y1))
        object.__setattr__(self, "h_x", (x1 - x0) / self.n_x)
        object.__setattr__(self, "h_y", (y1 - y0) / self.n_y)

    dim = 2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_y)

    @property
    def size(self) -> int:
        return self.n_x * self.n_y

    @property
    def cell_volume(self) -> float:
        return self.h_x * self.h_y

    @property
    def x_centers(self) -> np.ndarray:
        return self.domain[0] + (np.arange(self.n_x) + 0.5) * self.h_x

    @property
    def y_centers(self) -> np.ndarray:
        return self.domain[2] + (np.arange(self.n_y) + 0.5) * self.h_y

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates, both of shape ``(n_x, n_y)``."""
        return np.meshgrid(self.x_centers, self.y_centers, indexing="ij")

    def interior_faces(self) -> InteriorFaces:
        idx = np.arange(self.size).reshape(self.shape)
        # x-normal faces then y-normal faces
        lx, rx = idx[:-1, :].ravel(), idx[1:, :].ravel()
        ly, ry = idx[:, :-1].ravel(), idx[:, 1:].ravel()
        return InteriorFaces(
            np.concatenate([lx, ly]),
            np.concatenate([rx, ry]),
            np.concatenate([np.full(lx.size, self.h_x), np.full(ly.size, self.h_y)]),
            np.concatenate([np.full(lx.size, self.h_y), np.full(ly.size, self.h_x)]),
        )

    def boundary_faces(self) -> BoundaryFaces:
        """Faces ordered left (x=x0), right, bottom (y=y0), top."""
        x0, x1, y0, y1 = self.domain
        idx = np.arange(self.size).reshape(self.shape)
        xc, yc = self.x_centers, self.y_centers
        nx, ny = self.n_x, self.n_y
        cells = np.concatenate([idx[0, :], idx[-1, :], idx[:, 0], idx[:, -1]])
        points = np.concatenate(
            [
                np.column_stack([np.full(ny, x0), yc]),
                np.column_stack([np.full(ny, x1), yc]),
                np.column_stack([xc, np.full(nx, y0)]),
                np.column_stack([xc, np.full(nx, y1)]),
            ]
        )
        measure = np.concatenate(
            [np.full(2 * ny, self.h_y), np.full(2 * nx, self.h_x)]
        )
        normal_sign = np.concatenate(
            [-np.ones(ny), np.ones(ny), -np.ones(nx), np.ones(nx)]
        )
        axis = np.concatenate([np.zeros(2 * ny, int), np.ones(2 * nx, int)])
        spacing = np.where(axis == 0, self.h_x, self.h_y)
        return BoundaryFaces(cells, points, measure, normal_sign, axis, spacing)


Grid = Union[Grid1D, Grid2D]


def build_grid_1d(n_cells: int, endpoints: tuple[float, float] = (0.0, 1.0)) -> Grid1D:
    """Uniform partition of ``endpoints`` into ``n_cells`` cells."""
    a, b = endpoints
    return Grid1D(n_cells, float(a), float(b))


def build_grid_2d(
    n_x: int, n_y: int, domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
) -> Grid2D:
    return Grid2D(n_x, n_y, tuple(domain))


def cell_integral(grid: Grid, values) -> float:
    """Midpoint-rule integral of a cell field over the whole domain."""
    values = np.asarray(values, dtype=float)
    if values.size != grid.size:
        raise ValueError(
            f"field has {values.size} entries, grid has {grid.size} cells"
        )
    return float(np.sum(values) * grid.cell_volume)
