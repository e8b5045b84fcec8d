"""Uniform box grids with zero-flux boundaries and the discrete calculus on them.

Cell-centred finite volumes: a :class:`ScalarField` holds one value per cell,
a :class:`FaceField` holds one value per face and axis.  Face ``i`` along an
axis separates cells ``i-1`` and ``i``; faces ``0`` and ``N`` are the walls.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

MAGIC = b"TAXF"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Grid:
    """Uniform grid on the box ``[0, extents[0]] x [0, extents[1]]``.

    Attributes:
        extents: physical length per axis.
        cells: number of cells per axis.
    """

    extents: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        extents = tuple(float(e) for e in np.atleast_1d(self.extents))
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "cells", cells)
        if len(extents) != len(cells) or len(cells) not in (1, 2):
            raise ValueError("grid must be 1D or 2D with one extent per axis")
        if any(c < 2 for c in cells) or int(np.prod(cells)) < 4:
            raise ValueError("need at least 2 cells per axis and 4 cells in total")
        if any(not np.isfinite(e) or e <= 0 for e in extents):
            raise ValueError("extents must be positive and finite")

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / c for e, c in zip(self.extents, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    def axis_centers(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def axis_faces(self, axis: int) -> np.ndarray:
        return np.arange(self.cells[axis] + 1) * self.spacing[axis]

    def centers(self) -> tuple[np.ndarray, ...]:
        """Cell-centre coordinates, one broadcast-ready array per axis."""
        return tuple(np.meshgrid(*[self.axis_centers(i) for i in range(self.dim)], indexing="ij"))

    def face_centers(self, axis: int) -> tuple[np.ndarray, ...]:
        """Coordinates of the faces normal to ``axis``."""
        axes = [self.axis_faces(i) if i == axis else self.axis_centers(i) for i in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    @classmethod
    def from_spacing(cls, cells: Sequence[int], spacing: Sequence[float]) -> "Grid":
        """Rebuild a grid whose ``spacing`` reproduces the given values bit for bit."""
        extents = []
        for c, h in zip(cells, spacing):
            e = float(h) * int(c)
            # nudge by ulps until e / c == h exactly
            for _ in range(8):
                q = e / int(c)
                if q == h:
                    break
                e = float(np.nextafter(e, np.inf if q < h else -np.inf))
            extents.append(e)
        return cls(tuple(extents), tuple(int(c) for c in cells))


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass
class FaceField:
    """Per-axis face values; component ``i`` has ``cells[i] + 1`` entries along axis ``i``."""

    grid: Grid
    components: tuple[np.ndarray, ...] = field(default_factory=tuple)

    def __post_init__(self):
        comps = tuple(np.asarray(c, dtype=float) for c in self.components)
        for axis, comp in enumerate(comps):
            expected = list(self.grid.shape)
            expected[axis] += 1
            if comp.shape != tuple(expected):
                raise ValueError(f"face component {axis} has shape {comp.shape}, expected {tuple(expected)}")
        if len(comps) != self.grid.dim:
            raise ValueError("one face component per axis required")
        self.components = comps

    @classmethod
    def zeros(cls, grid: Grid) -> "FaceField":
        comps = []
        for axis in range(grid.dim):
            shape = list(grid.shape)
            shape[axis] += 1
            comps.append(np.zeros(shape))
        return cls(grid, tuple(comps))

    def boundary_is_zero(self) -> bool:
        for axis, comp in enumerate(self.components):
            if np.any(_take(comp, 0, axis) != 0) or np.any(_take(comp, -1, axis) != 0):
                return False
        return True


def _take(a: np.ndarray, idx, axis: int) -> np.ndarray:
    sl = [slice(None)] * a.ndim
    sl[axis] = idx
    return a[tuple(sl)]


def _pad_faces(interior: np.ndarray, axis: int) -> np.ndarray:
    """Embed interior-face values into a full face array with zero walls."""
    shape = list(interior.shape)
    shape[axis] += 2
    out = np.zeros(shape)
    sl = [slice(None)] * interior.ndim
    sl[axis] = slice(1, -1)
    out[tuple(sl)] = interior
    return out


# ---------------------------------------------------------------------------
# array-level kernels, shared with the solver and the certificate code


def face_gradient(values: np.ndarray, grid: Grid) -> tuple[np.ndarray, ...]:
    """Two-point differences at interior faces, zero on the walls."""
    out = []
    for axis, h in enumerate(grid.spacing):
        d = np.diff(values, axis=axis) / h
        out.append(_pad_faces(d, axis))
    return tuple(out)


def face_average(values: np.ndarray, grid: Grid) -> tuple[np.ndarray, ...]:
    """Arithmetic mean of the two neighbouring cells on every face.

    Wall faces take the value of their single adjacent cell.
    """
    out = []
    for axis in range(grid.dim):
        mid = 0.5 * (_take(values, slice(0, -1), axis) + _take(values, slice(1, None), axis))
        out.append(np.concatenate([_take(values, slice(0, 1), axis), mid, _take(values, slice(-1, None), axis)], axis=axis))
    return tuple(out)


def face_divergence(components: Sequence[np.ndarray], grid: Grid) -> np.ndarray:
    div = np.zeros(grid.shape)
    for axis, (comp, h) in enumerate(zip(components, grid.spacing)):
        div += np.diff(comp, axis=axis) / h
    return div


def cell_gradient(values: np.ndarray, grid: Grid) -> tuple[np.ndarray, ...]:
    """Cell-centred gradient: mean of the two face gradients bounding each cell."""
    out = []
    for axis, comp in enumerate(face_gradient(values, grid)):
        out.append(0.5 * (_take(comp, slice(0, -1), axis) + _take(comp, slice(1, None), axis)))
    return tuple(out)


def laplacian_values(values: np.ndarray, grid: Grid) -> np.ndarray:
    return face_divergence(face_gradient(values, grid), grid)


# ---------------------------------------------------------------------------
# public operations


def integrate(f: Union[ScalarField, np.ndarray], grid: Grid | None = None) -> float:
    """Midpoint-rule integral over the box.

    Sums axis by axis, last axis first, so the result does not depend on memory
    layout tricks.
    """
    if isinstance(f, ScalarField):
        grid, values = f.grid, f.values
    else:
        values = np.asarray(f, dtype=float)
    total = values
    for axis in reversed(range(values.ndim)):
        total = np.sum(total, axis=axis)
    return float(total) * grid.cell_volume


def gradient_neumann(f: ScalarField) -> FaceField:
    return FaceField(f.grid, face_gradient(f.values, f.grid))


def divergence(F: FaceField) -> ScalarField:
    return ScalarField(F.grid, face_divergence(F.components, F.grid))


def laplacian(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, laplacian_values(f.values, f.grid))


TestValues = Union[ScalarField, np.ndarray, Callable[..., np.ndarray]]


def _sample(phi: TestValues, grid: Grid) -> np.ndarray:
    if isinstance(phi, ScalarField):
        return phi.values
    if callable(phi):
        return np.broadcast_to(np.asarray(phi(*grid.centers()), dtype=float), grid.shape)
    return np.broadcast_to(np.asarray(phi, dtype=float), grid.shape)


def gauss_green_residual(F: FaceField, divF: ScalarField, phi: TestValues) -> float:
    """Discrete normal-trace pairing ``<F.nu, phi> = int F.grad(phi) + int phi div(F)``.

    ``phi`` is sampled at cell centres and differentiated with the same two-point
    stencil as :func:`gradient_neumann`, so summation by parts leaves exactly the
    wall flux weighted by the adjacent cell value of ``phi``.  ``phi`` may be a
    field, an array, or a callable of the centre coordinates.
    """
    grid = F.grid
    phi_c = _sample(phi, grid)
    vol = grid.cell_volume
    total = 0.0
    for axis, (comp, h) in enumerate(zip(F.components, grid.spacing)):
        dphi = np.diff(phi_c, axis=axis) / h
        total += float(np.sum(_take(comp, slice(1, -1), axis) * dphi)) * vol
    total += integrate(phi_c * divF.values, grid)
    return total


def boundary_pairing(F: FaceField, phi: TestValues) -> float:
    """Wall flux of ``F`` weighted by the adjacent cell values of ``phi`` (outward normal)."""
    grid = F.grid
    phi_c = _sample(phi, grid)
    total = 0.0
    for axis, comp in enumerate(F.components):
        area = grid.cell_volume / grid.spacing[axis]
        total += float(np.sum(_take(comp, -1, axis) * _take(phi_c, -1, axis))) * area
        total -= float(np.sum(_take(comp, 0, axis) * _take(phi_c, 0, axis))) * area
    return total


# ---------------------------------------------------------------------------
# binary snapshots


def write_field(path: Union[str, Path], f: ScalarField) -> None:
    """Write ``f`` as a little-endian TAXF snapshot."""
    grid = f.grid
    header = MAGIC + struct.pack("<II", FORMAT_VERSION, grid.dim)
    header += struct.pack(f"<{grid.dim}I", *grid.cells)
    header += struct.pack(f"<{grid.dim}d", *grid.spacing)
    data = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + data)


def read_field(path: Union[str, Path]) -> ScalarField:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a TAXF snapshot")
    version, dim = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported TAXF version {version}")
    off = 12
    cells = struct.unpack_from(f"<{dim}I", raw, off)
    off += 4 * dim
    spacing = struct.unpack_from(f"<{dim}d", raw, off)
    off += 8 * dim
    grid = Grid.from_spacing(cells, spacing)
    values = np.frombuffer(raw, dtype="<f8", offset=off, count=grid.size).astype(float)
    return ScalarField(grid, values.reshape(grid.shape))
