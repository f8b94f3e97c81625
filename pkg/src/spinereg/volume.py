"""Dense 3D scalar and label grids.

Arrays are indexed ``data[x, y, z]``; world coordinates are
``origin + index * spacing`` (axis aligned, no orientation matrix).
"""
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .exceptions import ConstantVolume, GridMismatch, UnknownBody

__all__ = [
    "Volume",
    "LabelVolume",
    "grid_coords",
    "as_array",
    "check_same_grid",
    "sample_trilinear",
    "sample_gradient",
    "normalize_intensity",
    "resample_isotropic",
]


def _triple(value, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (3,))
    return tuple(float(v) for v in arr)


@dataclass(frozen=True, eq=False)
class Volume:
    """Real-valued 3D image with spacing (mm/voxel) and origin (mm)."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {data.shape}")
        if min(data.shape) < 2:
            raise ValueError(f"every axis needs at least 2 voxels, got {data.shape}")
        spacing = _triple(self.spacing, "spacing")
        if min(spacing) <= 0:
            raise ValueError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", _triple(self.origin, "origin"))

    @property
    def dims(self):
        return tuple(self.data.shape)

    def with_data(self, data):
        return type(self)(data, self.spacing, self.origin)


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer label map; 0 is background, every other value is a rigid body."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)
    body_ids: tuple = field(init=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 2:
            raise ValueError(f"label data must be 3D with >= 2 voxels per axis, got {data.shape}")
        if not np.issubdtype(data.dtype, np.integer):
            if not np.all(np.equal(np.mod(data, 1), 0)):
                raise ValueError("label data must be integer valued")
        data = data.astype(np.int64)
        if data.min() < 0:
            raise ValueError("labels must be non-negative")
        spacing = _triple(self.spacing, "spacing")
        if min(spacing) <= 0:
            raise ValueError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", _triple(self.origin, "origin"))
        ids = np.unique(data)
        object.__setattr__(self, "body_ids", tuple(int(i) for i in ids[ids != 0]))

    @property
    def dims(self):
        return tuple(self.data.shape)

    def indicator(self, body):
        if body not in self.body_ids:
            raise UnknownBody(f"body {body} not in {self.body_ids}")
        return (self.data == body).astype(float)

    def with_data(self, data):
        return type(self)(data, self.spacing, self.origin)


def as_array(obj):
    """The ndarray behind a Volume/field, or ``obj`` itself if already an array."""
    return obj if isinstance(obj, np.ndarray) else np.asarray(obj.data)


def grid_coords(shape):
    """Voxel coordinates of every grid point, shape ``shape + (3,)``."""
    axes = [np.arange(n, dtype=float) for n in shape]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def check_same_grid(a, b, what="grids"):
    if tuple(a.dims) != tuple(b.dims):
        raise GridMismatch(f"{what} differ in dims: {a.dims} vs {b.dims}")
    if not (np.allclose(a.spacing, b.spacing) and np.allclose(a.origin, b.origin)):
        raise GridMismatch(f"{what} differ in spacing/origin")


def _as_points(p):
    pts = np.asarray(p, dtype=float)
    single = pts.ndim == 1
    return np.ascontiguousarray(pts.reshape(-1, 3)), single, pts.shape[:-1]


def sample_trilinear(vol, p):
    """Trilinear value of ``vol`` at voxel coordinate(s) ``p`` (edge-clamped)."""
    pts, single, lead = _as_points(p)
    out = _kernels.sample(vol.data[..., None], pts)[:, 0]
    return float(out[0]) if single else out.reshape(lead)


def sample_gradient(vol, p):
    """Gradient of the trilinear interpolant at ``p``, intensity per voxel.

    Components along axes where ``p`` lies outside the grid are zero, which
    is the exact derivative of the clamped interpolant.
    """
    pts, single, lead = _as_points(p)
    _, der = _kernels.sample_grad(vol.data[..., None], pts)
    der = der[:, 0, :]
    return der[0] if single else der.reshape(lead + (3,))


def normalize_intensity(vol):
    """Affinely rescale intensities to [0, 1]."""
    lo, hi = float(vol.data.min()), float(vol.data.max())
    if hi == lo:
        raise ConstantVolume("cannot normalize a constant volume")
    return vol.with_data((vol.data - lo) / (hi - lo))


def resample_isotropic(vol, target_spacing=1.0):
    """Resample onto an isotropic grid covering the same physical extent.

    Scalar volumes use trilinear sampling, label volumes nearest neighbour.
    """
    if target_spacing <= 0:
        raise ValueError("target_spacing must be positive")
    spacing = np.asarray(vol.spacing)
    if np.allclose(spacing, target_spacing):
        return vol.with_data(vol.data.copy())
    extent = (np.asarray(vol.dims) - 1) * spacing
    dims = tuple(int(np.ceil(e / target_spacing - 1e-9)) + 1 for e in extent)
    coords = grid_coords(dims) * (target_spacing / spacing)
    if isinstance(vol, LabelVolume):
        idx = np.rint(coords).astype(np.int64)
        for a in range(3):
            np.clip(idx[..., a], 0, vol.dims[a] - 1, out=idx[..., a])
        data = vol.data[idx[..., 0], idx[..., 1], idx[..., 2]]
    else:
        data = sample_trilinear(vol, coords)
    return type(vol)(data, (target_spacing,) * 3, vol.origin)
