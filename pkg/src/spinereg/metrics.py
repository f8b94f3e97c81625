"""Registration quality metrics and the JSON report."""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import AllFolded, GridMismatch
from .field import det3, jacobian_array, sample_field
from .rigidity import MASK_THRESHOLD, closest_rigid_of_body, pc_loss
from .volume import check_same_grid, grid_coords

__all__ = [
    "MetricReport",
    "BodyMetrics",
    "dsc",
    "rigid_dsc",
    "pct_vol_change",
    "folding_count",
    "sd_log_jac",
    "pc_metric",
    "warped_mask",
    "compute_report",
]


def dsc(a, b):
    """Dice overlap of two boolean masks; 1.0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise GridMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def warped_mask(labels, body, phi):
    """Hard warped label of one body (soft warp thresholded at 0.5)."""
    check_same_grid(labels, phi, "labels and field")
    soft = sample_field(labels.indicator(body)[..., None], phi.positions())[..., 0]
    return soft > MASK_THRESHOLD


def rigid_dsc(labels, body, phi, sample_cap=None):
    """Dice between the warped body and the body moved by its closest rigid transform."""
    T = closest_rigid_of_body(labels, body, phi, sample_cap)
    rigid = sample_field(labels.indicator(body)[..., None], T.apply(grid_coords(phi.dims)))[..., 0]
    return dsc(warped_mask(labels, body, phi), rigid > MASK_THRESHOLD)


def pct_vol_change(labels, body, phi):
    """Absolute relative change of the body's voxel count, in percent."""
    source = int(labels.indicator(body).sum())
    warped = int(warped_mask(labels, body, phi).sum())
    return 100.0 * abs(warped - source) / source


def _det(phi):
    return det3(jacobian_array(phi.data))


def folding_count(phi):
    """Number of voxels whose Jacobian determinant is <= 0."""
    return int(np.count_nonzero(_det(phi) <= 0))


def sd_log_jac(phi):
    """Standard deviation of log det J over voxels with positive determinant."""
    det = _det(phi)
    pos = det[det > 0]
    if pos.size == 0:
        raise AllFolded("every voxel is folded")
    return float(np.std(np.log(pos)))


def pc_metric(labels, phi):
    """Properness penalty reported as a metric (lower is better)."""
    return pc_loss(labels, phi)[0]


@dataclass
class BodyMetrics:
    body: int
    dsc: float
    rigid_dsc: float
    pct_vol_change: float
    pc_metric: float


@dataclass
class MetricReport:
    bodies: list
    folding_voxels: int
    sd_log_jac: float
    wall_seconds: float = None
    aggregates: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def mean(self, key):
        vals = [getattr(b, key) for b in self.bodies if getattr(b, key) is not None]
        return float(np.mean(vals)) if vals else None

    def to_dict(self):
        out = {
            "per_body": [asdict(b) for b in self.bodies],
            "folding_voxels": self.folding_voxels,
            "sd_log_jac": self.sd_log_jac,
            "wall_seconds": self.wall_seconds,
            "aggregates": self.aggregates,
        }
        out.update(self.extra)
        return _round(out)

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _round(obj):
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.6g}")
    return obj


def compute_report(moving_labels, phi, fixed_labels=None, wall_seconds=None, sample_cap=None):
    """Per-body and global metrics for a displacement field.

    ``dsc`` needs ``fixed_labels``; without them it is reported as None.
    """
    check_same_grid(moving_labels, phi, "labels and field")
    if fixed_labels is not None:
        check_same_grid(fixed_labels, phi, "fixed labels and field")
    bodies = []
    for b in moving_labels.body_ids:
        warped = warped_mask(moving_labels, b, phi)
        d = dsc(warped, fixed_labels.data == b) if fixed_labels is not None else None
        bodies.append(
            BodyMetrics(
                body=b,
                dsc=d,
                rigid_dsc=rigid_dsc(moving_labels, b, phi, sample_cap),
                pct_vol_change=pct_vol_change(moving_labels, b, phi),
                pc_metric=pc_metric(moving_labels.with_data(np.where(moving_labels.data == b, b, 0)), phi),
            )
        )
    report = MetricReport(bodies, folding_count(phi), sd_log_jac(phi), wall_seconds)
    for key in ("dsc", "rigid_dsc", "pct_vol_change", "pc_metric"):
        vals = [getattr(x, key) for x in bodies if getattr(x, key) is not None]
        report.aggregates[key] = (
            {"mean": float(np.mean(vals)), "sd": float(np.std(vals))} if vals else None
        )
    return report
