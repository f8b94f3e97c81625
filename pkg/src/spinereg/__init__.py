"""Rigidity-preserving deformable registration of vertebral images.

A stationary velocity field is optimised under a multi-modal similarity,
a diffusion smoothness term and optional rigidity penalties on labelled
bodies. See `register` for the main entry point and `SpineRegistration`
for the scikit-learn style wrapper.
"""
from .estimator import SpineRegistration
from .exceptions import (
    AllFolded,
    BodiesOverlapAfterMotion,
    ConstantVolume,
    DegenerateGeometry,
    EmptyBody,
    GridMismatch,
    MetaImageError,
    NonFiniteLoss,
    RegistrationError,
    UnknownBody,
)
from .field import DisplacementField, VelocityField, exp_svf, jacobian, jacobian_det, warp_volume
from .metrics import MetricReport, compute_report
from .objective import LossBreakdown, LossWeights, PRESETS, evaluate, preset
from .optimizer import OptimSettings, RegistrationResult, register, warm_start
from .phantom import PhantomPair, PhantomSpec, generate_pair
from .rigidity import RigidTransform, fit_rigid
from .volume import LabelVolume, Volume

__version__ = "0.1.0"

__all__ = [
    "AllFolded",
    "BodiesOverlapAfterMotion",
    "ConstantVolume",
    "DegenerateGeometry",
    "DisplacementField",
    "EmptyBody",
    "GridMismatch",
    "LabelVolume",
    "LossBreakdown",
    "LossWeights",
    "MetaImageError",
    "MetricReport",
    "NonFiniteLoss",
    "OptimSettings",
    "PRESETS",
    "PhantomPair",
    "PhantomSpec",
    "RegistrationError",
    "RegistrationResult",
    "RigidTransform",
    "SpineRegistration",
    "UnknownBody",
    "VelocityField",
    "Volume",
    "compute_report",
    "evaluate",
    "exp_svf",
    "fit_rigid",
    "generate_pair",
    "jacobian",
    "jacobian_det",
    "preset",
    "register",
    "warm_start",
    "warp_volume",
]
