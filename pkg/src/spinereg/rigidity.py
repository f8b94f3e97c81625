"""Rigidity and volume penalties for labelled rigid bodies.

Every loss returns ``(value, grad)`` where ``grad`` is the derivative with
respect to the displacement data of ``phi`` (shape (X, Y, Z, 3)). A body's
region in the fixed domain is the set of voxels whose trilinearly warped
indicator exceeds `MASK_THRESHOLD`; that selection is piecewise constant
and carries no gradient. Closest-rigid fits are held constant as well.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateGeometry
from .field import (
    cofactor3,
    det3,
    jacobian_array,
    jacobian_array_adjoint,
    sample_field,
    sample_field_grad,
)
from .volume import check_same_grid, grid_coords

__all__ = [
    "RigidTransform",
    "PointCorrespondences",
    "fit_rigid",
    "rigid_fit_residual",
    "closest_rigid_of_body",
    "rigid_dice_loss",
    "rigid_field_loss",
    "pc_loss",
    "oc_loss",
    "volume_loss",
    "RIGIDITY_TERMS",
]

MASK_THRESHOLD = 0.5
DICE_EPS = 1e-6
RIGIDITY_TERMS = ("pc", "oc", "rigid_dice", "rigid_field", "volume")


@dataclass(frozen=True)
class RigidTransform:
    """``p -> rotation @ p + translation``; ``center`` is the fit centroid."""

    rotation: np.ndarray
    translation: np.ndarray
    center: np.ndarray = None

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3), np.zeros(3))

    def apply(self, points):
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def angle(self):
        """Rotation angle in radians."""
        return float(np.arccos(np.clip((np.trace(self.rotation) - 1.0) / 2.0, -1.0, 1.0)))


@dataclass(frozen=True)
class PointCorrespondences:
    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.source, dtype=float).reshape(-1, 3)
        tgt = np.asarray(self.target, dtype=float).reshape(-1, 3)
        if src.shape != tgt.shape:
            raise ValueError(f"source {src.shape} and target {tgt.shape} differ")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "target", tgt)


def fit_rigid(source, target=None):
    """Least-squares rotation and translation (Kabsch, no scaling).

    Accepts a `PointCorrespondences` or two (n, 3) arrays. Reflections are
    rejected by flipping the weakest singular direction, so the returned
    rotation always has determinant +1.
    """
    corr = source if target is None else PointCorrespondences(source, target)
    P, Q = corr.source, corr.target
    if len(P) < 3:
        raise DegenerateGeometry(f"need at least 3 correspondences, got {len(P)}")
    p_bar = P.mean(axis=0)
    q_bar = Q.mean(axis=0)
    Pc = P - p_bar
    spread = np.linalg.svd(Pc, compute_uv=False)
    if spread[1] <= 1e-9 * max(spread[0], 1e-300):
        raise DegenerateGeometry("source points are collinear")
    H = Pc.T @ (Q - q_bar)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(R, q_bar - R @ p_bar, p_bar)


def rigid_fit_residual(source, target):
    """Mean squared residual of the best rigid fit of ``source`` onto ``target``."""
    T = fit_rigid(source, target)
    return float(np.mean(np.sum((T.apply(source) - target) ** 2, axis=1)))


def _stratified(n, cap):
    if cap is None or n <= cap:
        return slice(None)
    return np.unique(np.linspace(0, n - 1, cap).round().astype(np.int64))


def _positions(phi):
    return grid_coords(phi.dims) + phi.data


def _soft_warp(indicator, pos):
    val, der = sample_field_grad(indicator[..., None], pos)
    return val[..., 0], der[..., 0, :]


def _fit_on_mask(mask, pos, sample_cap=None, body=None):
    src = np.argwhere(mask).astype(float)
    tgt = pos[mask]
    sel = _stratified(len(src), sample_cap)
    try:
        return fit_rigid(src[sel], tgt[sel])
    except DegenerateGeometry as exc:
        raise DegenerateGeometry(f"body {body}: {exc}", body=body) from None


def closest_rigid_of_body(labels, body, phi, sample_cap=None):
    """Rigid transform closest to ``phi`` over the body's warped region."""
    check_same_grid(labels, phi, "labels and field")
    pos = _positions(phi)
    soft = sample_field(labels.indicator(body)[..., None], pos)[..., 0]
    return _fit_on_mask(soft > MASK_THRESHOLD, pos, sample_cap, body)


# --- array-level losses used by the objective -------------------------------

def _rigid_dice(indicator, pos, coords, sample_cap=None, body=None):
    A, dA = _soft_warp(indicator, pos)
    T = _fit_on_mask(A > MASK_THRESHOLD, pos, sample_cap, body)
    B = sample_field(indicator[..., None], T.apply(coords))[..., 0]
    # squared-sum denominator: identical soft maps give exactly zero loss,
    # binary maps give the ordinary Dice
    s_ab = float(np.sum(A * B))
    den = float(np.sum(A * A) + np.sum(B * B)) + DICE_EPS
    loss = 1.0 - 2.0 * s_ab / den
    dl_da = -2.0 * (B * den - 2.0 * s_ab * A) / den**2
    return loss, dl_da[..., None] * dA


def _rigid_field(indicator, pos, coords, sample_cap=None, body=None):
    A = sample_field(indicator[..., None], pos)[..., 0]
    mask = A > MASK_THRESHOLD
    T = _fit_on_mask(mask, pos, sample_cap, body)
    residual = pos[mask] - T.apply(coords[mask])
    count = residual.shape[0]
    grad = np.zeros(pos.shape)
    grad[mask] = 2.0 * residual / count
    return float(np.sum(residual**2) / count), grad


def _jacobian_penalty(masks, u, kind):
    """Per-body mean of a per-voxel Jacobian penalty (``pc`` or ``oc``).

    Returns ``(per_body_values, grad)``; ``grad`` is for the body average.
    """
    J = jacobian_array(u)
    if kind == "pc":
        det = det3(J)
        per_voxel = (det - 1.0) ** 2
        dvox = 2.0 * (det - 1.0)[..., None, None] * cofactor3(J)
    else:
        M = np.einsum("...ki,...kj->...ij", J, J) - np.eye(3)
        per_voxel = np.sum(M**2, axis=(-2, -1))
        dvox = 4.0 * np.einsum("...ik,...kj->...ij", J, M)
    n_bodies = len(masks)
    values = []
    weight = np.zeros(u.shape[:3])
    for mask in masks:
        count = int(mask.sum())
        # a body with an empty warped region contributes nothing
        values.append(float(per_voxel[mask].sum()) / count if count else 0.0)
        if count:
            weight[mask] += 1.0 / count / n_bodies
    return values, jacobian_array_adjoint(dvox * weight[..., None, None])


def _volume(indicators, pos):
    n_bodies = len(indicators)
    values = []
    grad = np.zeros(pos.shape)
    for ind in indicators:
        A, dA = _soft_warp(ind, pos)
        ref = float(ind.sum())
        rel = (float(A.sum()) - ref) / ref
        values.append(rel**2)
        grad += (2.0 * rel / ref / n_bodies) * dA
    return values, grad


def _penalty_mask(indicator, pos):
    return sample_field(indicator[..., None], pos)[..., 0] > MASK_THRESHOLD


def _masks(labels, pos, bodies):
    return [_penalty_mask(labels.indicator(b), pos) for b in bodies]


# --- public per-field API ---------------------------------------------------

def rigid_dice_loss(labels, body, phi, sample_cap=None):
    """Soft Dice between the warped body and the body under its closest rigid motion."""
    check_same_grid(labels, phi, "labels and field")
    return _rigid_dice(labels.indicator(body), _positions(phi), grid_coords(phi.dims), sample_cap, body)


def rigid_field_loss(labels, body, phi, sample_cap=None):
    """Mean squared distance between ``phi`` and its closest rigid motion inside the body."""
    check_same_grid(labels, phi, "labels and field")
    return _rigid_field(labels.indicator(body), _positions(phi), grid_coords(phi.dims), sample_cap, body)


def pc_loss(labels, phi):
    """Mean of ``(det J - 1)^2`` inside each body, averaged over bodies."""
    check_same_grid(labels, phi, "labels and field")
    values, grad = _jacobian_penalty(_masks(labels, _positions(phi), labels.body_ids), phi.data, "pc")
    return float(np.mean(values)), grad


def oc_loss(labels, phi):
    """Mean of ``||J^T J - I||_F^2`` inside each body, averaged over bodies."""
    check_same_grid(labels, phi, "labels and field")
    values, grad = _jacobian_penalty(_masks(labels, _positions(phi), labels.body_ids), phi.data, "oc")
    return float(np.mean(values)), grad


def volume_loss(labels, phi, bodies=None):
    """Squared relative change of each body's soft volume, averaged over bodies."""
    check_same_grid(labels, phi, "labels and field")
    bodies = labels.body_ids if bodies is None else bodies
    values, grad = _volume([labels.indicator(b) for b in bodies], _positions(phi))
    return float(np.mean(values)), grad
