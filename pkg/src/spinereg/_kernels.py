"""Compiled trilinear kernels shared by the volume and field modules.

All kernels take channel-last grids of shape (X, Y, Z, C) and query points
of shape (M, 3) in voxel coordinates. Coordinates outside the grid are
clamped to the boundary face before interpolation.
"""
import numba
import numpy as np
from numba import njit, prange

# the bundled TBB is too old for numba; workqueue needs nothing extra
numba.config.THREADING_LAYER = "workqueue"


@njit(cache=True, inline="always")
def _cell(p, n):
    # clamp, then pick the lower corner so that i0 + 1 is always valid
    q = min(max(p, 0.0), n - 1.0)
    i0 = int(np.floor(q))
    if i0 > n - 2:
        i0 = n - 2
    inside = 1.0 if (p >= 0.0 and p <= n - 1.0) else 0.0
    return i0, q - i0, inside


@njit(cache=True, parallel=True)
def sample(grid, pts):
    nx, ny, nz, nc = grid.shape
    m = pts.shape[0]
    out = np.empty((m, nc))
    for k in prange(m):
        i, fx, _ = _cell(pts[k, 0], nx)
        j, fy, _ = _cell(pts[k, 1], ny)
        l, fz, _ = _cell(pts[k, 2], nz)
        gx = 1.0 - fx
        gy = 1.0 - fy
        gz = 1.0 - fz
        for c in range(nc):
            out[k, c] = (
                gx * gy * gz * grid[i, j, l, c]
                + fx * gy * gz * grid[i + 1, j, l, c]
                + gx * fy * gz * grid[i, j + 1, l, c]
                + fx * fy * gz * grid[i + 1, j + 1, l, c]
                + gx * gy * fz * grid[i, j, l + 1, c]
                + fx * gy * fz * grid[i + 1, j, l + 1, c]
                + gx * fy * fz * grid[i, j + 1, l + 1, c]
                + fx * fy * fz * grid[i + 1, j + 1, l + 1, c]
            )
    return out


@njit(cache=True, parallel=True)
def sample_grad(grid, pts):
    """Values (M, C) and spatial derivatives (M, C, 3) of the interpolant.

    The derivative along an axis is zero where the coordinate was clamped.
    """
    nx, ny, nz, nc = grid.shape
    m = pts.shape[0]
    val = np.empty((m, nc))
    der = np.empty((m, nc, 3))
    for k in prange(m):
        i, fx, ix = _cell(pts[k, 0], nx)
        j, fy, iy = _cell(pts[k, 1], ny)
        l, fz, iz = _cell(pts[k, 2], nz)
        gx = 1.0 - fx
        gy = 1.0 - fy
        gz = 1.0 - fz
        for c in range(nc):
            c000 = grid[i, j, l, c]
            c100 = grid[i + 1, j, l, c]
            c010 = grid[i, j + 1, l, c]
            c110 = grid[i + 1, j + 1, l, c]
            c001 = grid[i, j, l + 1, c]
            c101 = grid[i + 1, j, l + 1, c]
            c011 = grid[i, j + 1, l + 1, c]
            c111 = grid[i + 1, j + 1, l + 1, c]
            val[k, c] = (
                gx * gy * gz * c000 + fx * gy * gz * c100
                + gx * fy * gz * c010 + fx * fy * gz * c110
                + gx * gy * fz * c001 + fx * gy * fz * c101
                + gx * fy * fz * c011 + fx * fy * fz * c111
            )
            der[k, c, 0] = ix * (
                gy * gz * (c100 - c000) + fy * gz * (c110 - c010)
                + gy * fz * (c101 - c001) + fy * fz * (c111 - c011)
            )
            der[k, c, 1] = iy * (
                gx * gz * (c010 - c000) + fx * gz * (c110 - c100)
                + gx * fz * (c011 - c001) + fx * fz * (c111 - c101)
            )
            der[k, c, 2] = iz * (
                gx * gy * (c001 - c000) + fx * gy * (c101 - c100)
                + gx * fy * (c011 - c010) + fx * fy * (c111 - c110)
            )
    return val, der


@njit(cache=True)
def scatter(weights, pts, shape):
    """Adjoint of `sample`: splat (M, C) weights onto a (X, Y, Z, C) grid.

    Serial on purpose; the accumulation order is fixed so results are
    bit-reproducible.
    """
    nx, ny, nz, nc = shape
    out = np.zeros((nx, ny, nz, nc))
    m = pts.shape[0]
    for k in range(m):
        i, fx, _ = _cell(pts[k, 0], nx)
        j, fy, _ = _cell(pts[k, 1], ny)
        l, fz, _ = _cell(pts[k, 2], nz)
        gx = 1.0 - fx
        gy = 1.0 - fy
        gz = 1.0 - fz
        for c in range(nc):
            w = weights[k, c]
            if w == 0.0:
                continue
            out[i, j, l, c] += gx * gy * gz * w
            out[i + 1, j, l, c] += fx * gy * gz * w
            out[i, j + 1, l, c] += gx * fy * gz * w
            out[i + 1, j + 1, l, c] += fx * fy * gz * w
            out[i, j, l + 1, c] += gx * gy * fz * w
            out[i + 1, j, l + 1, c] += fx * gy * fz * w
            out[i, j + 1, l + 1, c] += gx * fy * fz * w
            out[i + 1, j + 1, l + 1, c] += fx * fy * fz * w
    return out


def set_threads(n):
    """Set the worker count for the parallel sampling kernels (1 = serial)."""
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


@njit(cache=True, parallel=True)
def squaring_step(u):
    """``u(x) + u(x + u(x))`` on the grid of ``u`` (X, Y, Z, 3)."""
    nx, ny, nz, _ = u.shape
    out = np.empty_like(u)
    for x in prange(nx):
        for y in range(ny):
            for z in range(nz):
                i, fx, _ = _cell(x + u[x, y, z, 0], nx)
                j, fy, _ = _cell(y + u[x, y, z, 1], ny)
                l, fz, _ = _cell(z + u[x, y, z, 2], nz)
                gx = 1.0 - fx
                gy = 1.0 - fy
                gz = 1.0 - fz
                for c in range(3):
                    out[x, y, z, c] = u[x, y, z, c] + (
                        gx * gy * gz * u[i, j, l, c] + fx * gy * gz * u[i + 1, j, l, c]
                        + gx * fy * gz * u[i, j + 1, l, c] + fx * fy * gz * u[i + 1, j + 1, l, c]
                        + gx * gy * fz * u[i, j, l + 1, c] + fx * gy * fz * u[i + 1, j, l + 1, c]
                        + gx * fy * fz * u[i, j + 1, l + 1, c] + fx * fy * fz * u[i + 1, j + 1, l + 1, c]
                    )
    return out


@njit(cache=True)
def squaring_adjoint_step(u, g):
    """Transpose of the linearisation of `squaring_step` at ``u``, applied to ``g``.

    Direct term, scatter through the trilinear weights, and the inner-argument
    term ``(grad u)(x + u(x))^T g(x)``. Serial for a fixed accumulation order.
    """
    nx, ny, nz, _ = u.shape
    out = g.copy()
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                i, fx, ix = _cell(x + u[x, y, z, 0], nx)
                j, fy, iy = _cell(y + u[x, y, z, 1], ny)
                l, fz, iz = _cell(z + u[x, y, z, 2], nz)
                gx = 1.0 - fx
                gy = 1.0 - fy
                gz = 1.0 - fz
                for c in range(3):
                    w = g[x, y, z, c]
                    if w == 0.0:
                        continue
                    c000 = u[i, j, l, c]
                    c100 = u[i + 1, j, l, c]
                    c010 = u[i, j + 1, l, c]
                    c110 = u[i + 1, j + 1, l, c]
                    c001 = u[i, j, l + 1, c]
                    c101 = u[i + 1, j, l + 1, c]
                    c011 = u[i, j + 1, l + 1, c]
                    c111 = u[i + 1, j + 1, l + 1, c]
                    out[x, y, z, 0] += w * ix * (
                        gy * gz * (c100 - c000) + fy * gz * (c110 - c010)
                        + gy * fz * (c101 - c001) + fy * fz * (c111 - c011)
                    )
                    out[x, y, z, 1] += w * iy * (
                        gx * gz * (c010 - c000) + fx * gz * (c110 - c100)
                        + gx * fz * (c011 - c001) + fx * fz * (c111 - c101)
                    )
                    out[x, y, z, 2] += w * iz * (
                        gx * gy * (c001 - c000) + fx * gy * (c101 - c100)
                        + gx * fy * (c011 - c010) + fx * fy * (c111 - c110)
                    )
                    out[i, j, l, c] += gx * gy * gz * w
                    out[i + 1, j, l, c] += fx * gy * gz * w
                    out[i, j + 1, l, c] += gx * fy * gz * w
                    out[i + 1, j + 1, l, c] += fx * fy * gz * w
                    out[i, j, l + 1, c] += gx * gy * fz * w
                    out[i + 1, j, l + 1, c] += fx * gy * fz * w
                    out[i, j + 1, l + 1, c] += gx * fy * fz * w
                    out[i + 1, j + 1, l + 1, c] += fx * fy * fz * w
    return out
