"""Pixel lattices, patch shapes, neighborhoods and patch extraction.

Images are plain numpy arrays whose shape equals ``Lattice.dims``: float64 for
intensities and int8 (values +1/-1) for labels. Pixels are addressed either by
coordinate tuples or by row-major flat index; every table built here uses the
flat index.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from typing import Sequence

import numpy as np

from .errors import ContractViolation

BOUNDARY_POLICIES = ("clamp", "mirror")


@dataclass(frozen=True)
class Lattice:
    """Finite uniformly sampled grid of 1 to 3 dimensions."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(s) for s in self.dims)
        if not 1 <= len(dims) <= 3 or any(s <= 0 for s in dims):
            raise ContractViolation(f"lattice dims must be 1-3 positive extents, got {self.dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def flat(self, pixel: Sequence[int]) -> int:
        pixel = tuple(int(p) for p in np.atleast_1d(pixel))
        if len(pixel) != self.ndim or any(not 0 <= p < s for p, s in zip(pixel, self.dims)):
            raise ContractViolation(f"pixel {pixel} is not in lattice {self.dims}")
        return int(np.ravel_multi_index(pixel, self.dims))

    def unflat(self, index: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(int(index), self.dims))

    def coords(self) -> np.ndarray:
        """All pixel coordinates, shape (size, ndim), in row-major order."""
        grids = np.indices(self.dims).reshape(self.ndim, -1)
        return np.ascontiguousarray(grids.T)

    def check_image(self, image, kind="intensity") -> np.ndarray:
        arr = np.asarray(image)
        if arr.shape != self.dims:
            raise ContractViolation(f"{kind} image shape {arr.shape} does not match lattice {self.dims}")
        if kind == "label":
            if not np.all((arr == 1) | (arr == -1)):
                raise ContractViolation("label image entries must be exactly +1 or -1")
            return arr.astype(np.int8, copy=False)
        arr = arr.astype(np.float64, copy=False)
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("intensity image contains non-finite values")
        return arr


def _resolve(coord: np.ndarray, extent: int, policy: str) -> np.ndarray:
    if policy == "clamp":
        return np.clip(coord, 0, extent - 1)
    if extent == 1:
        return np.zeros_like(coord)
    # reflect across the edge pixel: -1 -> 1, extent -> extent - 2
    period = 2 * (extent - 1)
    c = np.mod(coord, period)
    return np.where(c > extent - 1, period - c, c)


def _box_offsets(radius: Sequence[int]) -> tuple[tuple[int, ...], ...]:
    ranges = [range(-r, r + 1) for r in radius]
    return tuple(product(*ranges))


def _as_radius(radius, ndim: int) -> tuple[int, ...]:
    if np.isscalar(radius):
        radius = (int(radius),) * ndim
    radius = tuple(int(r) for r in radius)
    if len(radius) != ndim or any(r < 0 for r in radius):
        raise ContractViolation(f"radius must be {ndim} nonnegative integers, got {radius}")
    return radius


@dataclass(frozen=True)
class PatchShape:
    """Ordered offsets defining a patch, plus the boundary policy."""

    offsets: tuple[tuple[int, ...], ...]
    boundary: str = "clamp"

    def __post_init__(self):
        offsets = tuple(tuple(int(c) for c in off) for off in self.offsets)
        if not offsets:
            raise ContractViolation("patch shape needs at least one offset")
        if len({len(o) for o in offsets}) != 1:
            raise ContractViolation("patch offsets must share one dimensionality")
        if len(set(offsets)) != len(offsets):
            raise ContractViolation("patch offsets must be distinct")
        if self.boundary not in BOUNDARY_POLICIES:
            raise ContractViolation(f"boundary policy must be one of {BOUNDARY_POLICIES}")
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def box(cls, radius, ndim: int, boundary: str = "clamp") -> "PatchShape":
        """Centered box of side ``2*radius+1`` per axis, row-major offset order."""
        return cls(_box_offsets(_as_radius(radius, ndim)), boundary)

    @classmethod
    def single(cls, ndim: int) -> "PatchShape":
        return cls(((0,) * ndim,))

    @property
    def d(self) -> int:
        return len(self.offsets)

    @property
    def ndim(self) -> int:
        return len(self.offsets[0])

    def offset_array(self) -> np.ndarray:
        return np.array(self.offsets, dtype=np.int64).reshape(self.d, self.ndim)

    def index_table(self, lattice: Lattice) -> np.ndarray:
        """Flat source index of every patch entry, shape (lattice.size, d)."""
        return _patch_index_table(lattice, self)


@lru_cache(maxsize=64)
def _patch_index_table(lattice: Lattice, shape: PatchShape) -> np.ndarray:
    if shape.ndim != lattice.ndim:
        raise ContractViolation("patch shape and lattice dimensionality differ")
    coords = lattice.coords()[:, None, :] + shape.offset_array()[None, :, :]
    for axis, extent in enumerate(lattice.dims):
        coords[..., axis] = _resolve(coords[..., axis], extent, shape.boundary)
    table = np.ravel_multi_index(tuple(np.moveaxis(coords, -1, 0)), lattice.dims)
    table = np.ascontiguousarray(table, dtype=np.int64)
    table.flags.writeable = False
    return table


@dataclass(frozen=True)
class Neighborhood:
    """Search neighborhood N(i): a centered box or an explicit offset list.

    Neighbors that fall off the lattice are dropped, never clamped.
    """

    radius: tuple[int, ...] | int | None = None
    offsets: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if (self.radius is None) == (self.offsets is None):
            raise ContractViolation("neighborhood needs exactly one of radius or offsets")
        if self.offsets is not None:
            offsets = tuple(tuple(int(c) for c in off) for off in self.offsets)
            if not offsets or len(set(offsets)) != len(offsets):
                raise ContractViolation("neighborhood offsets must be nonempty and distinct")
            object.__setattr__(self, "offsets", offsets)
        else:
            r = self.radius
            r = int(r) if np.isscalar(r) else tuple(int(x) for x in r)
            if np.any(np.asarray(r) < 0):
                raise ContractViolation("neighborhood radius must be nonnegative")
            object.__setattr__(self, "radius", r)

    @classmethod
    def box(cls, radius) -> "Neighborhood":
        return cls(radius=radius)

    @classmethod
    def explicit(cls, offsets) -> "Neighborhood":
        return cls(offsets=tuple(map(tuple, offsets)))

    def offset_array(self, ndim: int) -> np.ndarray:
        if self.offsets is not None:
            offs = self.offsets
            if any(len(o) != ndim for o in offs):
                raise ContractViolation("neighborhood offsets do not match lattice dimensionality")
        else:
            offs = _box_offsets(_as_radius(self.radius, ndim))
        return np.array(sorted(offs), dtype=np.int64).reshape(len(offs), ndim)

    def declared_size(self, ndim: int) -> int:
        return len(self.offset_array(ndim))

    def table(self, lattice: Lattice) -> np.ndarray:
        """Neighbor flat indices, shape (size, K); rows ascending, padded with -1."""
        return _neighbor_table(lattice, self)

    def max_size(self, lattice: Lattice) -> int:
        """Largest clipped neighborhood over all pixels (the bound's |N|)."""
        return int((self.table(lattice) >= 0).sum(axis=1).max())


@lru_cache(maxsize=64)
def _neighbor_table(lattice: Lattice, nbhd: Neighborhood) -> np.ndarray:
    offs = nbhd.offset_array(lattice.ndim)
    coords = lattice.coords()[:, None, :] + offs[None, :, :]
    dims = np.array(lattice.dims)
    inside = np.all((coords >= 0) & (coords < dims), axis=-1)
    clipped = np.where(inside[..., None], coords, 0)
    flat = np.ravel_multi_index(tuple(np.moveaxis(clipped, -1, 0)), lattice.dims)
    flat = np.where(inside, flat, np.iinfo(np.int64).max)
    flat = np.sort(flat, axis=1)
    table = np.where(flat == np.iinfo(np.int64).max, -1, flat).astype(np.int64)
    # drop columns that are padding for every pixel
    keep = (table >= 0).any(axis=0)
    table = np.ascontiguousarray(table[:, keep])
    table.flags.writeable = False
    return table


def extract_patch(image, center: Sequence[int], shape: PatchShape) -> np.ndarray:
    """Patch of ``image`` centered at pixel ``center`` (coordinate tuple)."""
    image = np.asarray(image)
    lattice = Lattice(image.shape)
    flat = lattice.flat(center)
    return image.reshape(-1)[shape.index_table(lattice)[flat]]


def extract_patches(image, shape: PatchShape) -> np.ndarray:
    """All patches of ``image``, shape (size, d), rows in row-major pixel order."""
    image = np.asarray(image)
    lattice = Lattice(image.shape)
    return image.reshape(-1)[shape.index_table(lattice)]


def sq_dist(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"patch lengths differ: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.dot(diff, diff))


def neighborhood_pixels(lattice: Lattice, pixel: Sequence[int], spec: Neighborhood) -> list[tuple[int, ...]]:
    """Neighbors of ``pixel`` inside the lattice, in row-major order."""
    row = spec.table(lattice)[lattice.flat(pixel)]
    return [lattice.unflat(j) for j in row if j >= 0]
