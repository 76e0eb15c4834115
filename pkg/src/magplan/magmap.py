"""Scalar magnetic-field maps over a 2D workspace.

A map is a rectangular grid of total-field intensities (nT) with bilinear
interpolation between grid nodes. Maps are immutable after construction and
safe to share between any number of readers.

File format (text, one map per file)::

    magmap v1 <width> <height> <origin_x> <origin_y> <cell_size>
    v v v ... v        (row 0, minimum y; `width` values)
    ...
    v v v ... v        (row height-1, maximum y)

Values are decimal nT, written with full round-trip precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class MapError(Exception):
    """Base error for map construction, queries, and I/O."""


class OutOfMapError(MapError):
    """A query point lies outside the map's rectangular extent."""


class MapFormatError(MapError):
    """A map file could not be parsed.

    Attributes:
        line: 1-based line number where parsing failed.
    """

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class GridGeometry:
    """Placement of a grid in the workspace: node (0, 0) sits at `origin`."""

    origin: tuple[float, float]
    cell_size: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.cell_size > 0 and math.isfinite(self.cell_size)):
            raise MapError(f"cell_size must be finite and > 0, got {self.cell_size}")
        if self.width < 2 or self.height < 2:
            raise MapError(f"grid must be at least 2x2, got {self.width}x{self.height}")
        if not all(math.isfinite(c) for c in self.origin):
            raise MapError(f"origin must be finite, got {self.origin}")

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """X and Y coordinates of grid columns and rows."""
        xs = self.origin[0] + self.cell_size * np.arange(self.width)
        ys = self.origin[1] + self.cell_size * np.arange(self.height)
        return xs, ys


@dataclass(frozen=True)
class MagMap:
    """Rasterized scalar field map.

    `values` has shape (height, width); row 0 is the minimum-y row. All
    intensities must be finite and strictly positive.
    """

    origin: tuple[float, float]
    cell_size: float
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise MapError(f"values must be a 2D grid, got ndim={vals.ndim}")
        height, width = vals.shape
        geom = GridGeometry(self.origin, self.cell_size, width, height)  # validates
        del geom
        if not np.all(np.isfinite(vals)):
            raise MapError("map values must all be finite")
        if not np.all(vals > 0):
            raise MapError("map values must all be > 0")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.origin, self.cell_size, self.width, self.height)

    def extent(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) of the interpolatable rectangle."""
        x0, y0 = self.origin
        return (
            x0,
            x0 + self.cell_size * (self.width - 1),
            y0,
            y0 + self.cell_size * (self.height - 1),
        )

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the extent (boundary inclusive)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x_min, x_max, y_min, y_max = self.extent()
        return (
            (pts[:, 0] >= x_min)
            & (pts[:, 0] <= x_max)
            & (pts[:, 1] >= y_min)
            & (pts[:, 1] <= y_max)
        )

    def clamp(self, points: np.ndarray) -> np.ndarray:
        """Clip points onto the extent rectangle (nearest in-map point)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x_min, x_max, y_min, y_max = self.extent()
        out = np.empty_like(pts)
        out[:, 0] = np.clip(pts[:, 0], x_min, x_max)
        out[:, 1] = np.clip(pts[:, 1], y_min, y_max)
        return out


def sample_points(grid: MagMap, points: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of the map at an (N, 2) array of positions.

    All points must lie inside the extent; raises OutOfMapError otherwise.
    Callers that want edge clamping clamp first (see `MagMap.clamp`).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not bool(np.all(grid.contains(pts))):
        bad = pts[~grid.contains(pts)][0]
        raise OutOfMapError(
            f"point ({bad[0]:g}, {bad[1]:g}) outside map extent {grid.extent()}"
        )
    u = (pts[:, 0] - grid.origin[0]) / grid.cell_size
    v = (pts[:, 1] - grid.origin[1]) / grid.cell_size
    i0 = np.clip(np.floor(u).astype(int), 0, grid.width - 2)
    j0 = np.clip(np.floor(v).astype(int), 0, grid.height - 2)
    fu = u - i0
    fv = v - j0
    vals = grid.values
    z00 = vals[j0, i0]
    z10 = vals[j0, i0 + 1]
    z01 = vals[j0 + 1, i0]
    z11 = vals[j0 + 1, i0 + 1]
    return (
        z00 * (1 - fu) * (1 - fv)
        + z10 * fu * (1 - fv)
        + z01 * (1 - fu) * fv
        + z11 * fu * fv
    )


def sample(grid: MagMap, p: tuple[float, float]) -> float:
    """Field intensity (nT) at a single position inside the map."""
    return float(sample_points(grid, np.asarray(p, dtype=float).reshape(1, 2))[0])


@dataclass(frozen=True)
class SyntheticMapSpec:
    """Single Gaussian peak on a uniform background.

    `peak_sigma` is the spatial spread per axis in metres; pass equal
    components for an isotropic peak. `peak_amplitude` may be 0 for a
    uniform map.
    """

    base_field: float
    peak_center: tuple[float, float]
    peak_amplitude: float
    peak_sigma: tuple[float, float]

    def __post_init__(self) -> None:
        if not (self.base_field > 0 and math.isfinite(self.base_field)):
            raise MapError(f"base_field must be finite and > 0, got {self.base_field}")
        if not all(s > 0 and math.isfinite(s) for s in self.peak_sigma):
            raise MapError(f"peak_sigma must be finite and > 0, got {self.peak_sigma}")
        if not math.isfinite(self.peak_amplitude):
            raise MapError("peak_amplitude must be finite")


def generate_synthetic(spec: SyntheticMapSpec, geometry: GridGeometry) -> MagMap:
    """Evaluate the peak-on-background field on every grid node."""
    xs, ys = geometry.node_coords()
    xg, yg = np.meshgrid(xs, ys)
    sx, sy = spec.peak_sigma
    dx = xg - spec.peak_center[0]
    dy = yg - spec.peak_center[1]
    bump = np.exp(-(dx * dx / (2 * sx * sx) + dy * dy / (2 * sy * sy)))
    values = spec.base_field + spec.peak_amplitude * bump
    return MagMap(geometry.origin, geometry.cell_size, values)


def save_map(grid: MagMap, path: str) -> None:
    """Write the documented text format; load_map inverts it losslessly."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(
            "magmap v1 %d %d %r %r %r\n"
            % (
                grid.width,
                grid.height,
                float(grid.origin[0]),
                float(grid.origin[1]),
                float(grid.cell_size),
            )
        )
        for row in grid.values:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")


def load_map(path: str) -> MagMap:
    """Parse a map file; MapFormatError carries the offending line number."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or not any(line.strip() for line in lines):
        raise MapFormatError("empty map file", line=1)
    header = lines[0].split()
    if len(header) != 7 or header[0] != "magmap" or header[1] != "v1":
        raise MapFormatError(
            "expected header 'magmap v1 <width> <height> <origin_x> <origin_y> <cell_size>'",
            line=1,
        )
    try:
        width, height = int(header[2]), int(header[3])
        origin = (float(header[4]), float(header[5]))
        cell_size = float(header[6])
    except ValueError as exc:
        raise MapFormatError(f"bad header field: {exc}", line=1) from exc
    body = [line for line in lines[1:] if line.strip()]
    if len(body) != height:
        raise MapFormatError(
            f"declared {height} rows but found {len(body)}", line=len(lines)
        )
    values = np.empty((height, width), dtype=float)
    for j, line in enumerate(body):
        fields = line.split()
        if len(fields) != width:
            raise MapFormatError(
                f"row has {len(fields)} values, expected {width}", line=j + 2
            )
        try:
            values[j] = [float(f) for f in fields]
        except ValueError as exc:
            raise MapFormatError(f"bad value: {exc}", line=j + 2) from exc
        if not bool(np.all(np.isfinite(values[j])) and np.all(values[j] > 0)):
            raise MapFormatError("field values must be finite and > 0", line=j + 2)
    try:
        return MagMap(origin, cell_size, values)
    except MapError as exc:
        raise MapFormatError(str(exc), line=1) from exc
