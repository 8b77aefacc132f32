"""Voxel grid model: affine voxel<->world transforms, world conventions, and
trilinear occupancy sampling of label masks.

All types are immutable after construction and all operations are pure, so
everything here is safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import InvalidFrame

__all__ = [
    "Convention",
    "AffineFrame",
    "LabelVolume",
    "OccupancyField",
    "convert_convention",
    "voxel_to_world",
    "world_to_voxel",
    "sample_occupancy",
    "INSIDE_THRESHOLD",
]

# Occupancy at or above this value counts as "inside the mask". 0.5 places
# axis-aligned boundaries exactly on voxel faces between full/empty neighbors.
INSIDE_THRESHOLD = 0.5


class Convention(str, Enum):
    """World-space axis convention. RAS is NIfTI world, LPS is ITK world."""

    RAS = "RAS"
    LPS = "LPS"


# RAS <-> LPS negates exactly the first two coordinates.
_FLIP = np.array([-1.0, -1.0, 1.0])


def convert_convention(p: np.ndarray, src: Convention, dst: Convention) -> np.ndarray:
    """Convert point(s) between RAS and LPS. Identity when src == dst."""
    p = np.asarray(p, dtype=float)
    if src == dst:
        return p.copy()
    return p * _FLIP


def _as_points(p) -> tuple[np.ndarray, bool]:
    """Normalize input to an (n, 3) array; report whether it was a single point."""
    a = np.asarray(p, dtype=float)
    if a.ndim == 1:
        return a.reshape(1, 3), True
    return a, False


@dataclass(frozen=True)
class AffineFrame:
    """Homogeneous 4x4 transform from continuous voxel indices to world mm.

    The inverse is computed once at construction; world->voxel is the hot
    path during interpolation.
    """

    matrix: np.ndarray
    convention: Convention = Convention.RAS
    inverse: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (4, 4) or not np.all(np.isfinite(m)):
            raise InvalidFrame(f"affine must be a finite 4x4 matrix, got shape {m.shape}")
        if not np.allclose(m[3], (0.0, 0.0, 0.0, 1.0), atol=1e-12):
            raise InvalidFrame(f"last affine row must be (0,0,0,1), got {m[3]}")
        m[3] = (0.0, 0.0, 0.0, 1.0)
        if abs(np.linalg.det(m[:3, :3])) < 1e-12:
            raise InvalidFrame("voxel-to-world affine is singular")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        inv = np.linalg.inv(m)
        inv.setflags(write=False)
        object.__setattr__(self, "inverse", inv)
        object.__setattr__(self, "convention", Convention(self.convention))

    @classmethod
    def identity(cls, convention: Convention = Convention.RAS) -> "AffineFrame":
        return cls(np.eye(4), convention)

    @classmethod
    def from_spacing(cls, spacing, origin=(0.0, 0.0, 0.0),
                     convention: Convention = Convention.RAS) -> "AffineFrame":
        m = np.eye(4)
        m[:3, :3] = np.diag(np.asarray(spacing, dtype=float))
        m[:3, 3] = np.asarray(origin, dtype=float)
        return cls(m, convention)

    @property
    def spacing(self) -> np.ndarray:
        """Voxel edge lengths in mm (column norms of the linear block)."""
        return np.linalg.norm(self.matrix[:3, :3], axis=0)

    def apply(self, p) -> np.ndarray:
        pts, single = _as_points(p)
        out = pts @ self.matrix[:3, :3].T + self.matrix[:3, 3]
        return out[0] if single else out

    def apply_inverse(self, p) -> np.ndarray:
        pts, single = _as_points(p)
        out = pts @ self.inverse[:3, :3].T + self.inverse[:3, 3]
        return out[0] if single else out


def voxel_to_world(frame: AffineFrame, p) -> np.ndarray:
    """Map continuous voxel index(es) to world mm."""
    return frame.apply(p)


def world_to_voxel(frame: AffineFrame, p) -> np.ndarray:
    """Map world mm point(s) to continuous voxel indices."""
    return frame.apply_inverse(p)


@dataclass(frozen=True)
class LabelVolume:
    """Dense 3D array of integer subregion labels (0 = background) plus the
    affine frame that places voxel indices in world space.
    """

    labels: np.ndarray
    frame: AffineFrame
    _indicator_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        a = np.asarray(self.labels)
        if a.ndim != 3:
            raise ValueError(f"labels must be a 3D array, got ndim={a.ndim}")
        if not np.issubdtype(a.dtype, np.integer):
            raise ValueError(f"labels must be integer-typed, got {a.dtype}")
        if a.size == 0:
            raise ValueError("labels array is empty")
        if a.min() < 0:
            raise ValueError("labels must be non-negative")
        a = np.ascontiguousarray(a)
        a.setflags(write=False)
        object.__setattr__(self, "labels", a)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    def present_codes(self) -> np.ndarray:
        """Sorted nonzero label codes present in the volume."""
        u = np.unique(self.labels)
        return u[u > 0]

    def indicator(self, label_set: Iterable[int]) -> np.ndarray:
        """Float32 binary mask for a set of codes. Cached per label set."""
        key = frozenset(int(c) for c in label_set)
        cached = self._indicator_cache.get(key)
        if cached is None:
            if key:
                mask = np.isin(self.labels, np.fromiter(key, dtype=self.labels.dtype))
            else:
                mask = np.zeros(self.labels.shape, dtype=bool)
            cached = mask.astype(np.float32)
            cached.setflags(write=False)
            self._indicator_cache[key] = cached
        return cached


def _trilinear(field_arr: np.ndarray, vox: np.ndarray) -> np.ndarray:
    # grid-constant keeps interpolating past the edge, so this is exactly the
    # 8-corner weighted sum with out-of-grid corners contributing 0
    # (plain "constant" would clamp the boundary shell to cval instead).
    return map_coordinates(field_arr, vox.T, order=1, mode="grid-constant",
                           cval=0.0, output=np.float64)


def sample_occupancy(vol: LabelVolume, label_set: Iterable[int], p) -> np.ndarray | float:
    """Trilinearly interpolated occupancy of the label mask at world point(s).

    Points outside the grid see zero occupancy; a point counts as inside the
    mask iff the returned value is >= 0.5.
    """
    pts, single = _as_points(p)
    vox = world_to_voxel(vol.frame, pts)
    out = _trilinear(vol.indicator(label_set), np.atleast_2d(vox))
    return float(out[0]) if single else out


class OccupancyField:
    """Occupancy sampler for one label set, cropped to the mask bounding box.

    Sampling agrees exactly with :func:`sample_occupancy` on the parent
    volume; the crop only avoids hauling the full grid through every query.
    """

    def __init__(self, vol: LabelVolume, label_set: Iterable[int], pad: int = 2):
        full = vol.indicator(label_set)
        nz = np.nonzero(full)
        self.frame = vol.frame
        self.empty = nz[0].size == 0
        if self.empty:
            self._crop = np.zeros((1, 1, 1), dtype=np.float32)
            self._offset = np.zeros(3)
            self._bbox_vox = None
            return
        lo = np.array([idx.min() for idx in nz]) - pad
        hi = np.array([idx.max() for idx in nz]) + pad + 1
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, full.shape)
        self._crop = full[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
        self._offset = lo.astype(float)
        self._bbox_vox = (np.array([idx.min() for idx in nz], dtype=float),
                          np.array([idx.max() for idx in nz], dtype=float))

    def sample(self, p) -> np.ndarray | float:
        pts, single = _as_points(p)
        if self.empty:
            return 0.0 if single else np.zeros(len(pts))
        vox = world_to_voxel(self.frame, pts) - self._offset
        out = _trilinear(self._crop, np.atleast_2d(vox))
        return float(out[0]) if single else out

    def inside(self, p) -> bool:
        return bool(self.sample(p) >= INSIDE_THRESHOLD)

    def bbox_diagonal_mm(self) -> float:
        """World-space diagonal of the mask bounding box (raycast travel cap)."""
        if self.empty:
            return 0.0
        lo, hi = self._bbox_vox
        corners = np.array([[lo[i] if b & (1 << i) == 0 else hi[i] for i in range(3)]
                            for b in range(8)])
        world = voxel_to_world(self.frame, corners)
        diffs = world[:, None, :] - world[None, :, :]
        return float(np.sqrt((diffs ** 2).sum(axis=2)).max())

    def nearest_inside_voxel_center(self, p) -> np.ndarray:
        """World center of the mask voxel closest to p (fallback ray origin)."""
        if self.empty:
            raise ValueError("mask is empty")
        nz = np.nonzero(self._crop)
        centers = np.stack(nz, axis=1).astype(float) + self._offset
        world = voxel_to_world(self.frame, centers)
        d = np.linalg.norm(world - np.asarray(p, dtype=float), axis=1)
        return world[int(np.argmin(d))]
