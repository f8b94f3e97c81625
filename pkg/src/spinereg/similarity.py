"""Multi-modal similarity losses: MIND descriptors, NMI and NGF.

`mind_loss` returns its gradient with respect to the displacement field.
`nmi_loss` and `ngf_loss` return gradients with respect to the warped image
intensities; `objective` chains those to the field through ``∇M(phi(x))``.
"""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import GridMismatch
from .field import sample_field_grad, spatial_gradient, spatial_gradient_adjoint
from .volume import as_array, check_same_grid

__all__ = [
    "MindDescriptor",
    "JointHistogram",
    "mind_descriptor",
    "mind_loss",
    "nmi_loss",
    "joint_histogram",
    "ngf_loss",
    "ngf_epsilon",
]

# face neighbours, one descriptor channel each
SIX_NEIGHBOURHOOD = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class MindDescriptor:
    data: np.ndarray  # (X, Y, Z, 6)
    variance: np.ndarray  # (X, Y, Z)
    patch_radius: int
    spacing: tuple
    origin: tuple

    @property
    def dims(self):
        return tuple(self.data.shape[:3])


def _shift(a, offset):
    """``a[x + offset]`` with edge replication."""
    pad = [(max(-o, 0), max(o, 0)) for o in offset]
    padded = np.pad(a, pad, mode="edge")
    sl = tuple(slice(p[0] + o, p[0] + o + n) for p, o, n in zip(pad, offset, a.shape))
    return padded[sl]


def _patch_kernel(radius, sigma=0.5):
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def mind_descriptor(vol, patch_radius=1, sigma=0.5, variance_floor=VARIANCE_FLOOR):
    """Six-channel MIND descriptor with Gaussian-weighted patch distances.

    ``variance_floor`` bounds the local variance estimate from below; in flat
    noisy regions a larger floor keeps the descriptor near one instead of
    turning noise into full-contrast structure.
    """
    img = vol.data
    kernel = _patch_kernel(patch_radius, sigma)
    dist = np.empty(img.shape + (6,))
    for c, r in enumerate(SIX_NEIGHBOURHOOD):
        d = (img - _shift(img, r)) ** 2
        for axis in range(3):
            d = ndimage.correlate1d(d, kernel, axis=axis, mode="nearest")
        dist[..., c] = d
    variance = np.maximum(dist.mean(axis=-1), variance_floor)
    # max-normalising exp(-D/V) over channels == subtracting the smallest D
    desc = np.exp(-(dist - dist.min(axis=-1, keepdims=True)) / variance[..., None])
    return MindDescriptor(desc, variance, patch_radius, vol.spacing, vol.origin)


def mind_loss(fixed_desc, moving_desc, phi):
    """Mean squared descriptor difference after warping the moving descriptor.

    Returns ``(loss, grad)`` with ``grad`` shaped like ``phi.data``.
    """
    if tuple(fixed_desc.dims) != tuple(phi.dims):
        raise GridMismatch(f"descriptor grid {fixed_desc.dims} != field grid {phi.dims}")
    if tuple(moving_desc.dims) != tuple(phi.dims):
        raise GridMismatch("moving descriptor must live on the fixed grid")
    warped, der = sample_field_grad(moving_desc.data, phi.positions())
    diff = warped - fixed_desc.data
    loss = float(np.mean(diff**2))
    grad = np.einsum("...c,...cd->...d", diff, der) * (2.0 / diff.size)
    return loss, grad


@dataclass(frozen=True, eq=False)
class JointHistogram:
    counts: np.ndarray  # (bins, bins), sums to 1
    bins: int

    @property
    def fixed_marginal(self):
        return self.counts.sum(axis=1)

    @property
    def warped_marginal(self):
        return self.counts.sum(axis=0)


def _parzen(values, bins):
    """Bin indices, weights and weight derivatives of the cubic Hermite kernel.

    The kernel ``1 - 3s^2 + 2|s|^3`` is C1, non-negative, sums to one over
    bins and is exactly one at a bin centre, so intensities that sit on bin
    centres produce a crisp histogram.
    """
    t = np.clip(values, 0.0, 1.0) * (bins - 1)
    i0 = np.minimum(np.floor(t).astype(np.int64), bins - 2)
    s = t - i0
    w1 = s * s * (3.0 - 2.0 * s)
    dw1 = 6.0 * s * (1.0 - s) * (bins - 1)
    dw1 = np.where((values < 0.0) | (values > 1.0), 0.0, dw1)
    return i0, (1.0 - w1, w1), (-dw1, dw1)


def joint_histogram(fixed, warped, bins=32):
    f = np.ravel(as_array(fixed))
    w = np.ravel(as_array(warped))
    fi, fw, _ = _parzen(f, bins)
    wi, ww, _ = _parzen(w, bins)
    counts = np.zeros(bins * bins)
    for a in range(2):
        for b in range(2):
            counts += np.bincount((fi + a) * bins + wi + b, fw[a] * ww[b], minlength=bins * bins)
    return JointHistogram((counts / f.size).reshape(bins, bins), bins)


def _entropy(p):
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def nmi_loss(fixed, warped, bins=32):
    """Negative normalised mutual information ``-(H(F) + H(W)) / H(F, W)``.

    Returns ``(loss, grad)`` with ``grad`` the derivative with respect to the
    warped intensities.
    """
    check_same_grid(fixed, warped, "fixed and warped images")
    f = fixed.data.ravel()
    w = warped.data.ravel()
    n = f.size
    fi, fw, _ = _parzen(f, bins)
    wi, ww, dww = _parzen(w, bins)
    counts = np.zeros(bins * bins)
    for a in range(2):
        for b in range(2):
            counts += np.bincount((fi + a) * bins + wi + b, fw[a] * ww[b], minlength=bins * bins)
    p = (counts / n).reshape(bins, bins)
    pf, pw = p.sum(axis=1), p.sum(axis=0)
    hf, hw, hfw = _entropy(pf), _entropy(pw), _entropy(p)
    num = hf + hw
    loss = -num / hfw

    logp = np.log(np.where(p > 0, p, 1.0))
    logpw = np.log(np.where(pw > 0, pw, 1.0))
    dnum = -(logpw + 1.0)[None, :]
    dden = -(logp + 1.0)
    dp = (-(dnum * hfw - num * dden) / hfw**2).ravel()

    grad = np.zeros(n)
    for a in range(2):
        for b in range(2):
            grad += fw[a] * dww[b] * dp[(fi + a) * bins + wi + b]
    return float(loss), (grad / n).reshape(warped.data.shape)


def _gradients(img):
    return np.stack([spatial_gradient(img, d) for d in range(3)], axis=-1)


def ngf_epsilon(fixed, eps_rel=1e-2):
    """Edge parameter relative to the fixed image's mean gradient magnitude."""
    mag = np.sqrt(np.sum(_gradients(fixed.data) ** 2, axis=-1)).mean()
    return eps_rel * mag if mag > 0 else eps_rel


def ngf_loss(fixed, warped, eps=None, eps_rel=1e-2):
    """Squared normalised gradient field distance, ``1 - mean cos^2``.

    Returns ``(loss, grad)`` with ``grad`` with respect to warped intensities.
    """
    check_same_grid(fixed, warped, "fixed and warped images")
    if eps is None:
        eps = ngf_epsilon(fixed, eps_rel)
    if eps <= 0:
        raise ValueError("eps must be positive")
    gf = _gradients(fixed.data)
    gw = _gradients(warped.data)
    e2 = eps * eps
    nf = np.sum(gf**2, axis=-1) + e2
    nw = np.sum(gw**2, axis=-1) + e2
    dot = np.sum(gf * gw, axis=-1)
    ratio = dot**2 / (nf * nw)
    loss = 1.0 - float(ratio.mean())

    n = ratio.size
    coef_f = (-2.0 / n) * dot / (nf * nw)
    coef_w = (2.0 / n) * dot**2 / (nf * nw**2)
    dgw = coef_f[..., None] * gf + coef_w[..., None] * gw
    grad = sum(spatial_gradient_adjoint(dgw[..., d], d) for d in range(3))
    return loss, grad
