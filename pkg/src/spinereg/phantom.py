"""Synthetic spine phantoms with known piecewise-rigid ground truth.

Bodies ("vertebrae") are stacked along z, separated by discs, inside a soft
tissue background. Each body gets its own rigid motion; the ground-truth
displacement blends the per-body rigid displacements with inverse-distance
weights so that transitions happen in the gaps between bodies.
"""
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .exceptions import BodiesOverlapAfterMotion, EmptyBody
from .field import DisplacementField, sample_field
from .rigidity import RigidTransform
from .volume import LabelVolume, Volume, grid_coords

__all__ = ["PhantomSpec", "PhantomPair", "distance_transform", "edt", "generate_pair"]

BACKGROUND, DISC, BODY = 0, 1, 2
CT_INTENSITY = {BODY: 1.0, DISC: 0.3, BACKGROUND: 0.1}
MRI_INTENSITY = {BODY: 0.2, DISC: 0.9, BACKGROUND: 0.5}


@njit(cache=True)
def _edt_1d(f, out):
    # lower envelope of parabolas (Felzenszwalb & Huttenlocher), skipping
    # sites at infinity
    n = f.shape[0]
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = -1
    for q in range(n):
        if not np.isfinite(f[q]):
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    if k < 0:
        for q in range(n):
            out[q] = np.inf
        return
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        d = q - v[j]
        out[q] = d * d + f[v[j]]


@njit(cache=True)
def _edt_axis(sq, axis_len, lines):
    # sq is (lines, axis_len), transformed in place row by row
    buf = np.empty(axis_len)
    for i in range(lines):
        _edt_1d(sq[i].copy(), buf)
        sq[i, :] = buf


def edt(mask):
    """Exact Euclidean distance (voxels) from every voxel to the nearest True voxel."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyBody("distance transform of an empty region")
    sq = np.where(mask, 0.0, np.inf)
    for axis in range(mask.ndim):
        moved = np.ascontiguousarray(np.moveaxis(sq, axis, -1))
        flat = moved.reshape(-1, moved.shape[-1])
        _edt_axis(flat, flat.shape[1], flat.shape[0])
        sq = np.moveaxis(flat.reshape(moved.shape), -1, axis)
    return np.sqrt(sq)


def distance_transform(labels):
    """Per-body exact EDT, ``{body_id: Volume}``."""
    if not labels.body_ids:
        raise EmptyBody("label volume has no bodies")
    return {
        b: Volume(edt(labels.data == b), labels.spacing, labels.origin) for b in labels.body_ids
    }


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (64, 64, 64)
    n_bodies: int = 4
    half_extent: tuple = (12, 10, 4)
    gap: int = 6
    shape: str = "box"
    max_rotation_deg: float = 5.0
    max_translation: float = 3.0
    background_amplitude: float = 1.0
    noise: float = 0.02
    blend_exponent: float = 4.0
    seed: int = 7

    def __post_init__(self):
        if self.shape not in ("box", "ellipsoid"):
            raise ValueError(f"shape must be 'box' or 'ellipsoid', got {self.shape!r}")
        if self.n_bodies < 1:
            raise ValueError("need at least one body")
        height = self.n_bodies * (2 * self.half_extent[2] + 1) + (self.n_bodies - 1) * self.gap
        needs = (2 * self.half_extent[0] + 1, 2 * self.half_extent[1] + 1, height)
        for n, need in zip(self.dims, needs):
            if need + 4 > n:
                raise ValueError(f"bodies need {needs} voxels plus a 2-voxel margin, grid is {self.dims}")
        if self.gap < 1:
            raise ValueError("bodies must be separated by a gap")

    def centers(self):
        hz = self.half_extent[2]
        pitch = 2 * hz + 1 + self.gap
        height = self.n_bodies * (2 * hz + 1) + (self.n_bodies - 1) * self.gap
        z0 = (self.dims[2] - height) // 2 + hz
        cx, cy = (self.dims[0] - 1) // 2, (self.dims[1] - 1) // 2
        return np.array([[cx, cy, z0 + i * pitch] for i in range(self.n_bodies)], dtype=float)


@dataclass
class PhantomPair:
    fixed: Volume
    moving: Volume
    moving_labels: LabelVolume
    fixed_labels: LabelVolume
    gt_field: DisplacementField
    motions: list = field(default_factory=list)
    spec: PhantomSpec = None


def _inside(points, center, half, shape, pad=0.0):
    d = np.abs(points - center)
    h = np.asarray(half, dtype=float) + pad
    if shape == "box":
        return np.all(d <= h, axis=-1)
    return np.sum((d / h) ** 2, axis=-1) <= 1.0


def _tissue_map(spec, coords):
    """Tissue class per voxel of the (moving) geometry, plus body labels."""
    centers = spec.centers()
    half = np.asarray(spec.half_extent, dtype=float)
    tissue = np.full(coords.shape[:3], BACKGROUND, dtype=np.int64)
    labels = np.zeros(coords.shape[:3], dtype=np.int64)
    disc_half = np.array([half[0] - 1, half[1] - 1, spec.gap / 2.0])
    for i in range(len(centers) - 1):
        mid = (centers[i] + centers[i + 1]) / 2.0
        tissue[_inside(coords, mid, disc_half, spec.shape)] = DISC
    for i, c in enumerate(centers):
        inside = _inside(coords, c, half, spec.shape)
        tissue[inside] = BODY
        labels[inside] = i + 1
    return tissue, labels


def _draw_motions(spec, rng, scale):
    motions = []
    for c in spec.centers():
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = np.deg2rad(spec.max_rotation_deg) * scale * rng.uniform(-1.0, 1.0)
        R = Rotation.from_rotvec(axis * angle).as_matrix()
        t = spec.max_translation * scale * rng.uniform(-1.0, 1.0, size=3)
        # fixed -> moving: x -> R (x - c) + c + t
        motions.append(RigidTransform(R, c + t - R @ c, c))
    return motions


def _background_field(spec, rng):
    noise = rng.normal(size=tuple(spec.dims) + (3,))
    smooth = np.stack([ndimage.gaussian_filter(noise[..., a], 6.0, mode="nearest") for a in range(3)], -1)
    peak = np.abs(smooth).max()
    return smooth * (spec.background_amplitude / peak) if peak > 0 else smooth


def _ground_truth(spec, motions, coords, background):
    half = np.asarray(spec.half_extent, dtype=float)
    centers = spec.centers()
    cores = [
        _inside(T.apply(coords), c, half, spec.shape, pad=1.5) for T, c in zip(motions, centers)
    ]
    occupancy = np.sum(cores, axis=0)
    if occupancy.max() > 1:
        raise BodiesOverlapAfterMotion("rigid bodies collide after motion")
    for i in range(len(cores)):
        for j in range(i + 1, len(cores)):
            if (edt(cores[i])[cores[j]] < 2.0).any():
                raise BodiesOverlapAfterMotion(f"bodies {i + 1} and {j + 1} nearly touch")
    dist = np.stack([edt(core) for core in cores])
    w = (1.0 + dist) ** (-spec.blend_exponent)
    w /= w.sum(axis=0)
    rigid = np.stack([T.apply(coords) - coords for T in motions])
    u = np.einsum("i...,i...c->...c", w, rigid)
    nearest = dist.min(axis=0)
    # background motion fades in away from the bodies
    s = np.clip(nearest / 6.0, 0.0, 1.0)
    u += (s * s * (3.0 - 2.0 * s))[..., None] * background
    for core, R in zip(cores, rigid):
        u[core] = R[core]
    return u


def generate_pair(spec=None, max_retries=5):
    """Build a pseudo-MRI fixed / pseudo-CT moving pair with ground truth.

    If the drawn motions make bodies collide the motions are shrunk and
    redrawn deterministically; after ``max_retries`` the error is raised.
    """
    spec = spec or PhantomSpec()
    coords = grid_coords(spec.dims)
    tissue, labels = _tissue_map(spec, coords)
    ct = np.vectorize(CT_INTENSITY.get)(tissue).astype(float)
    mri = np.vectorize(MRI_INTENSITY.get)(tissue).astype(float)

    scale = 1.0
    for attempt in range(max_retries + 1):
        rng = np.random.default_rng(spec.seed)
        motions = _draw_motions(spec, rng, scale)
        background = _background_field(spec, rng)
        try:
            u = _ground_truth(spec, motions, coords, background)
            break
        except BodiesOverlapAfterMotion:
            if attempt == max_retries:
                raise
            scale *= 0.75

    pos = coords + u
    fixed_mri = sample_field(mri[..., None], pos)[..., 0]
    fixed_labels = np.zeros(spec.dims, dtype=np.int64)
    for b in range(1, spec.n_bodies + 1):
        soft = sample_field((labels == b).astype(float)[..., None], pos)[..., 0]
        fixed_labels[soft > 0.5] = b

    noise_rng = np.random.default_rng([spec.seed, 1])
    fixed = np.clip(fixed_mri + spec.noise * noise_rng.normal(size=spec.dims), 0.0, 1.0)
    moving = np.clip(ct + spec.noise * noise_rng.normal(size=spec.dims), 0.0, 1.0)
    return PhantomPair(
        fixed=Volume(fixed),
        moving=Volume(moving),
        moving_labels=LabelVolume(labels),
        fixed_labels=LabelVolume(fixed_labels),
        gt_field=DisplacementField(u),
        motions=motions,
        spec=spec,
    )


def zero_motion(spec):
    return replace(spec, max_rotation_deg=0.0, max_translation=0.0, background_amplitude=0.0)
