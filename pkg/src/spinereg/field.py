"""Stationary velocity fields, scaling and squaring, warping and Jacobians.

Vector fields are stored channel-last, ``data[x, y, z, c]``, in voxel units
of the fixed grid. A displacement ``u`` defines the map ``phi(x) = x + u(x)``
from fixed-grid coordinates into moving-grid coordinates.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import GridMismatch
from .volume import LabelVolume, Volume, _triple, as_array, check_same_grid, grid_coords

__all__ = [
    "VectorField",
    "VelocityField",
    "DisplacementField",
    "JacobianField",
    "exp_svf",
    "exp_svf_adjoint",
    "warp_volume",
    "warp_label_soft",
    "warp_labels",
    "jacobian",
    "jacobian_det",
    "compose",
    "spatial_gradient",
    "spatial_gradient_adjoint",
]

DEFAULT_STEPS = 7


@dataclass(frozen=True, eq=False)
class VectorField:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 4 or data.shape[-1] != 3:
            raise ValueError(f"vector field must have shape (X, Y, Z, 3), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("vector field contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _triple(self.spacing, "spacing"))
        object.__setattr__(self, "origin", _triple(self.origin, "origin"))

    @property
    def dims(self):
        return tuple(self.data.shape[:3])

    @classmethod
    def zeros(cls, like):
        return cls(np.zeros(tuple(like.dims) + (3,)), like.spacing, like.origin)

    @classmethod
    def from_function(cls, like, fn):
        """Build a field by evaluating ``fn`` on the (X, Y, Z, 3) voxel grid."""
        return cls(fn(grid_coords(like.dims)), like.spacing, like.origin)

    def with_data(self, data):
        return type(self)(data, self.spacing, self.origin)


class VelocityField(VectorField):
    """Stationary velocity field ``v`` (voxels per unit time)."""


class DisplacementField(VectorField):
    """Dense displacement ``u`` with ``phi(x) = x + u(x)``."""

    @classmethod
    def identity(cls, like):
        return cls.zeros(like)

    def positions(self):
        """``phi(x)`` for every fixed-grid voxel, shape (X, Y, Z, 3)."""
        return grid_coords(self.dims) + self.data


@dataclass(frozen=True, eq=False)
class JacobianField:
    """Per-voxel 3x3 Jacobian ``J[x, y, z, c, d] = d phi_c / d x_d``."""

    data: np.ndarray

    @property
    def dims(self):
        return tuple(self.data.shape[:3])


# --- array-level kernels ---------------------------------------------------

def _flat(a):
    return np.ascontiguousarray(a.reshape(-1, a.shape[-1]))


def sample_field(grid, pts):
    """Sample a channel-last grid at (X', Y', Z', 3) positions."""
    out = _kernels.sample(np.ascontiguousarray(grid), _flat(pts))
    return out.reshape(pts.shape[:-1] + (grid.shape[-1],))


def sample_field_grad(grid, pts):
    val, der = _kernels.sample_grad(np.ascontiguousarray(grid), _flat(pts))
    lead = pts.shape[:-1]
    return val.reshape(lead + (grid.shape[-1],)), der.reshape(lead + (grid.shape[-1], 3))


def scatter_field(weights, pts, shape):
    """Adjoint of `sample_field` with respect to the grid values."""
    return _kernels.scatter(_flat(weights), _flat(pts), tuple(shape))


def squaring_history(v, steps):
    """All intermediate displacements ``u_0 .. u_steps`` of scaling and squaring."""
    u = np.ascontiguousarray(v, dtype=float) / 2.0**steps
    history = [u]
    for _ in range(steps):
        u = _kernels.squaring_step(u)
        history.append(u)
    return history


def squaring_adjoint(history, grad):
    """Reverse-mode pass through the recursion recorded by `squaring_history`."""
    steps = len(history) - 1
    g = np.ascontiguousarray(grad, dtype=float)
    for k in range(steps - 1, -1, -1):
        g = _kernels.squaring_adjoint_step(history[k], g)
    return g / 2.0**steps


def spatial_gradient(a, axis):
    """Central differences inside, one-sided differences on the two faces."""
    return np.gradient(a, axis=axis)


def spatial_gradient_adjoint(g, axis):
    """Transpose of `spatial_gradient` along ``axis``."""
    g = np.moveaxis(np.asarray(g, dtype=float), axis, 0)
    out = np.zeros_like(g)
    out[2:] += 0.5 * g[1:-1]
    out[:-2] -= 0.5 * g[1:-1]
    out[1] += g[0]
    out[0] -= g[0]
    out[-1] += g[-1]
    out[-2] -= g[-1]
    return np.moveaxis(out, 0, axis)


def jacobian_array(u):
    """Jacobian of ``x + u(x)`` as an (X, Y, Z, 3, 3) array."""
    J = np.empty(u.shape[:3] + (3, 3))
    for c in range(3):
        for d in range(3):
            J[..., c, d] = spatial_gradient(u[..., c], d)
        J[..., c, c] += 1.0
    return J


def jacobian_array_adjoint(dJ):
    """Pull a gradient on the Jacobian entries back to the displacement."""
    du = np.zeros(dJ.shape[:3] + (3,))
    for c in range(3):
        for d in range(3):
            du[..., c] += spatial_gradient_adjoint(dJ[..., c, d], d)
    return du


def det3(J):
    return (
        J[..., 0, 0] * (J[..., 1, 1] * J[..., 2, 2] - J[..., 1, 2] * J[..., 2, 1])
        - J[..., 0, 1] * (J[..., 1, 0] * J[..., 2, 2] - J[..., 1, 2] * J[..., 2, 0])
        + J[..., 0, 2] * (J[..., 1, 0] * J[..., 2, 1] - J[..., 1, 1] * J[..., 2, 0])
    )


def cofactor3(J):
    """Cofactor matrix, i.e. the derivative of det(J) with respect to J."""
    C = np.empty_like(J)
    for i in range(3):
        for j in range(3):
            i1, i2 = (i + 1) % 3, (i + 2) % 3
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            C[..., i, j] = J[..., i1, j1] * J[..., i2, j2] - J[..., i1, j2] * J[..., i2, j1]
    return C


# --- public operations -----------------------------------------------------

def exp_svf(v, steps=DEFAULT_STEPS):
    """Lie exponential of a stationary velocity field by scaling and squaring."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    u = squaring_history(v.data, steps)[-1]
    return DisplacementField(u, v.spacing, v.origin)


def exp_svf_adjoint(v, grad_phi, steps=DEFAULT_STEPS):
    """Gradient with respect to ``v`` given the gradient with respect to ``phi``."""
    grad_phi = np.asarray(as_array(grad_phi), dtype=float)
    if grad_phi.shape != v.data.shape:
        raise GridMismatch(f"gradient shape {grad_phi.shape} != field shape {v.data.shape}")
    return squaring_adjoint(squaring_history(v.data, steps), grad_phi)


def warp_volume(vol, phi):
    """Pull ``vol`` back through ``phi``: ``out(x) = vol(phi(x))``."""
    check_same_grid(vol, phi, "volume and field")
    data = sample_field(vol.data[..., None], phi.positions())[..., 0]
    return Volume(data, phi.spacing, phi.origin)


def warp_label_soft(labels, body, phi):
    """Trilinear warp of one body's {0, 1} indicator; threshold at 0.5 for a hard mask."""
    check_same_grid(labels, phi, "labels and field")
    ind = labels.indicator(body)
    data = sample_field(ind[..., None], phi.positions())[..., 0]
    return Volume(data, phi.spacing, phi.origin)


def warp_labels(labels, phi):
    """Hard warp of a label map: each voxel takes the body whose soft warp is largest and above 0.5."""
    check_same_grid(labels, phi, "labels and field")
    out = np.zeros(labels.dims, dtype=np.int64)
    best = np.full(labels.dims, 0.5)
    pos = phi.positions()
    for body in labels.body_ids:
        soft = sample_field(labels.indicator(body)[..., None], pos)[..., 0]
        take = soft > best
        out[take] = body
        best = np.where(take, soft, best)
    return LabelVolume(out, phi.spacing, phi.origin)


def jacobian(phi):
    return JacobianField(jacobian_array(phi.data))


def jacobian_det(J):
    return det3(as_array(J))


def compose(outer, inner):
    """Displacement of ``outer ∘ inner``: ``x -> outer(inner(x))``."""
    pos = inner.positions()
    u = inner.data + sample_field(outer.data, pos)
    return DisplacementField(u, inner.spacing, inner.origin)
