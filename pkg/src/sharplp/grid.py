"""Periodic grids standing in for R^d, grid functions, and dyadic cube partitions.

The torus [0, L)^d is sampled at x = i*h, i = 0..n-1 per axis, with h = L/n.
Norms carry the cell measure h^d so they approximate continuum integrals.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import CapacityError, InvalidArgument, InvalidData, ScaleOutOfRange

MAX_POINTS = 2**24


def _is_power_of_two(x) -> bool:
    if x <= 0:
        return False
    m, _ = math.frexp(float(x))
    return m == 0.5


@dataclass(frozen=True)
class TorusGrid:
    d: int
    n: int
    L: float

    def __post_init__(self):
        if self.d not in (1, 2):
            raise InvalidArgument(f"dimension must be 1 or 2, got {self.d}")
        if not isinstance(self.n, (int, np.integer)) or not _is_power_of_two(self.n):
            raise InvalidArgument(f"n must be a power of two, got {self.n}")
        if self.n < 8:
            raise InvalidArgument(f"n must be at least 8, got {self.n}")
        if not _is_power_of_two(self.L):
            raise InvalidArgument(f"L must be a power of two, got {self.L}")
        if self.n**self.d > MAX_POINTS:
            raise CapacityError(f"{self.n}^{self.d} points exceeds cap {MAX_POINTS}")
        object.__setattr__(self, "L", float(self.L))

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell(self) -> float:
        """Measure of one grid cell, h^d."""
        return self.h**self.d

    @property
    def dual_cell(self) -> float:
        """Measure of one frequency cell, (2 pi / L)^d."""
        return (2 * math.pi / self.L) ** self.d

    def coords(self) -> np.ndarray:
        """Point coordinates, shape (size, d), row-major order."""
        axes = [np.arange(self.n) * self.h] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def frequencies(self, shifted: bool = False) -> list[np.ndarray]:
        """Per-axis angular frequencies 2 pi m / L as full d-dim arrays."""
        k1 = 2 * math.pi * np.fft.fftfreq(self.n, d=self.h)
        if shifted:
            k1 = np.fft.fftshift(k1)
        return list(np.meshgrid(*([k1] * self.d), indexing="ij"))

    def freq_norm(self) -> np.ndarray:
        """|xi| on the FFT-ordered frequency grid."""
        return np.sqrt(sum(k**2 for k in self.frequencies()))

    def torus_displacement(self, a, b) -> np.ndarray:
        """Componentwise difference a - b wrapped into [-L/2, L/2)."""
        diff = np.asarray(a, float) - np.asarray(b, float)
        return (diff + self.L / 2) % self.L - self.L / 2

    def torus_distance_to(self, point) -> np.ndarray:
        """Torus distance of every grid point to ``point``, shape (size,)."""
        disp = self.torus_displacement(self.coords(), np.asarray(point, float).reshape(1, -1))
        return np.sqrt((disp**2).sum(axis=1))

    def scale_range(self) -> tuple[int, int]:
        """Valid dyadic scales j with h <= 2^-j <= L."""
        return -int(round(math.log2(self.L))), -int(round(math.log2(self.h)))


def make_grid(d: int, n: int, L: float) -> TorusGrid:
    return TorusGrid(d, n, L)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Complex samples on a grid; ``space`` is 'position' or 'frequency'.

    Frequency-side values are stored in fftshift order, i.e. on
    2 pi / L * {-n/2, ..., n/2 - 1} per axis.
    """

    grid: TorusGrid
    values: np.ndarray
    space: str = "position"

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.size != self.grid.size:
            raise InvalidArgument(f"expected {self.grid.size} values, got {vals.size}")
        vals = vals.reshape(self.grid.shape).astype(complex, copy=True)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.space not in ("position", "frequency"):
            raise InvalidArgument(f"unknown space {self.space!r}")

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @property
    def measure(self) -> float:
        return self.grid.cell if self.space == "position" else self.grid.dual_cell

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _check_same(self, other)
        return GridFunction(self.grid, self.values + other.values, self.space)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _check_same(self, other)
        return GridFunction(self.grid, self.values - other.values, self.space)

    def scaled(self, c) -> "GridFunction":
        return GridFunction(self.grid, c * self.values, self.space)

    # Serialization: header (d, n, L) then interleaved re/im in row-major order.
    _HEADER = struct.Struct("<4sIId")

    def to_bytes(self) -> bytes:
        head = self._HEADER.pack(b"SLGF", self.grid.d, self.grid.n, self.grid.L)
        body = np.ascontiguousarray(self.flat).view(np.float64).astype("<f8").tobytes()
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "GridFunction":
        magic, d, n, L = cls._HEADER.unpack_from(data)
        if magic != b"SLGF":
            raise InvalidData("not a serialized grid function")
        grid = TorusGrid(d, n, L)
        raw = np.frombuffer(data, dtype="<f8", offset=cls._HEADER.size)
        if raw.size != 2 * grid.size:
            raise InvalidData(f"payload has {raw.size} floats, expected {2 * grid.size}")
        return cls(grid, raw[0::2] + 1j * raw[1::2])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["d", "n", "L"])
        w.writerow([self.grid.d, self.grid.n, repr(self.grid.L)])
        w.writerow(["re", "im"])
        for z in self.flat:
            w.writerow([repr(float(z.real)), repr(float(z.imag))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GridFunction":
        rows = list(csv.reader(io.StringIO(text)))
        d, n, L = int(rows[1][0]), int(rows[1][1]), float(rows[1][2])
        vals = np.array([float(r[0]) + 1j * float(r[1]) for r in rows[3:]])
        return cls(TorusGrid(d, n, L), vals)


def _check_same(f: GridFunction, g: GridFunction):
    if f.grid != g.grid or f.space != g.space:
        raise InvalidArgument("grid functions live on different grids or spaces")


def lp_norm(f: GridFunction, p: float) -> float:
    """(cell * sum |f|^p)^(1/p), or max |f| for p = inf."""
    vals = np.abs(f.values)
    if np.isnan(vals).any():
        raise InvalidData("NaN in grid function values")
    if p < 1:
        raise InvalidArgument(f"exponent must be >= 1, got {p}")
    if math.isinf(p):
        return float(vals.max())
    return float((f.measure * np.sum(vals**p)) ** (1.0 / p))


def fourier_transform(f: GridFunction, direction: str = "forward") -> GridFunction:
    """Unitary transform between position and frequency grids.

    forward:  F(xi) = (2 pi)^(-d/2) h^d sum_x f(x) e^{-i x.xi}
    """
    g, d = f.grid, f.grid.d
    axes = tuple(range(d))
    if direction == "forward":
        out = (2 * math.pi) ** (-d / 2) * g.cell * np.fft.fftshift(np.fft.fftn(f.values), axes=axes)
        return GridFunction(g, out, "frequency")
    if direction == "inverse":
        scale = (2 * math.pi) ** (-d / 2) * g.dual_cell * g.size
        out = scale * np.fft.ifftn(np.fft.ifftshift(f.values, axes=axes))
        return GridFunction(g, out, "position")
    raise InvalidArgument(f"direction must be 'forward' or 'inverse', got {direction!r}")


@dataclass(frozen=True)
class Cube:
    j: int
    anchor: tuple[int, ...]
    side: float
    start: tuple[int, ...]
    stop: tuple[int, ...]
    index: int

    @property
    def point_range(self) -> tuple[slice, ...]:
        return tuple(slice(a, b) for a, b in zip(self.start, self.stop))


@dataclass(frozen=True, eq=False)
class DyadicPartition:
    grid: TorusGrid
    j: int
    cubes: tuple[Cube, ...] = field(repr=False)

    @property
    def per_axis(self) -> int:
        return int(round(self.grid.L * 2.0**self.j))

    @property
    def points_per_side(self) -> int:
        return self.grid.n // self.per_axis

    def __len__(self) -> int:
        return len(self.cubes)

    @cached_property
    def labels(self) -> np.ndarray:
        """Cube index of every grid point (flattened, row-major)."""
        m, c = self.points_per_side, self.per_axis
        idx = [np.arange(self.grid.n) // m] * self.grid.d
        mesh = np.meshgrid(*idx, indexing="ij")
        lab = np.zeros(self.grid.shape, dtype=np.int64)
        for axis_idx in mesh:
            lab = lab * c + axis_idx
        return lab.ravel()

    @cached_property
    def members(self) -> np.ndarray:
        """Flat point indices grouped by cube, shape (ncubes, points per cube)."""
        order = np.argsort(self.labels, kind="stable")
        return order.reshape(len(self.cubes), -1)

    @cached_property
    def distances(self) -> np.ndarray:
        """Pairwise torus distances between closed cubes, shape (ncubes, ncubes)."""
        anchors = np.array([q.anchor for q in self.cubes])
        c = self.per_axis
        delta = np.abs(anchors[:, None, :] - anchors[None, :, :])
        delta = np.minimum(delta, c - delta)
        gaps = np.maximum(delta - 1, 0) * (2.0 ** (-self.j))
        return np.sqrt((gaps**2).sum(axis=-1))

    def owns(self, cube: Cube) -> bool:
        return 0 <= cube.index < len(self.cubes) and self.cubes[cube.index] == cube


def dyadic_partition(grid: TorusGrid, j: int) -> DyadicPartition:
    """Tile the torus by dyadic cubes of side 2^-j, lexicographic in anchor."""
    j_min, j_max = grid.scale_range()
    if not (j_min <= j <= j_max):
        raise ScaleOutOfRange(j, j_min, j_max)
    side = 2.0 ** (-j)
    c = int(round(grid.L / side))
    m = grid.n // c
    cubes = []
    for idx, anchor in enumerate(np.ndindex(*([c] * grid.d))):
        start = tuple(a * m for a in anchor)
        stop = tuple(s + m for s in start)
        cubes.append(Cube(j, tuple(int(a) for a in anchor), side, start, stop, idx))
    return DyadicPartition(grid, j, tuple(cubes))


def cube_distance(P: DyadicPartition, a: Cube, b: Cube) -> float:
    if not (P.owns(a) and P.owns(b)):
        raise InvalidArgument("cubes do not belong to this partition")
    return float(P.distances[a.index, b.index])


def cube_mask(grid: TorusGrid, Q: Cube) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    mask[Q.point_range] = True
    return mask


def restrict(f: GridFunction, Q: Cube, partition: DyadicPartition | None = None) -> GridFunction:
    """Multiply f by the indicator of Q."""
    if f.space != "position":
        raise InvalidArgument("restriction acts on position-space functions")
    if partition is not None and (partition.grid != f.grid or not partition.owns(Q)):
        raise InvalidArgument("cube does not belong to a partition of this grid")
    if any(s > f.grid.n for s in Q.stop):
        raise InvalidArgument("cube exceeds the grid of f")
    vals = np.where(cube_mask(f.grid, Q), f.values, 0)
    return GridFunction(f.grid, vals)
