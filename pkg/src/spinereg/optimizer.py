"""Per-pair instance optimisation of the velocity field."""
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import _kernels
from .exceptions import GridMismatch, NonFiniteLoss
from .field import DisplacementField, VelocityField, exp_svf, sample_field
from .objective import LossWeights, Objective
from .volume import LabelVolume, Volume, grid_coords, normalize_intensity, resample_isotropic

__all__ = ["OptimSettings", "RegistrationResult", "Adam", "register", "warm_start", "prepare_inputs"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimSettings:
    max_iters: int = 150  # per pyramid level
    step_size: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tol: float = 1e-4
    window: int = 10
    levels: int = 2
    activate_after: int = 0
    update_sigma: float = 1.0  # Gaussian smoothing of each update, voxels; 0 disables
    seed: int = 0  # recorded for provenance; the optimiser itself draws no random numbers
    threads: int = 1

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("decay rates must lie in (0, 1)")
        if self.max_iters < 1 or self.levels < 1 or self.window < 1:
            raise ValueError("max_iters, levels and window must be >= 1")
        if self.update_sigma < 0:
            raise ValueError("update_sigma must be >= 0")


class Adam:
    """Bias-corrected adaptive-moment update for one array parameter.

    ``eps`` is scaled by the running RMS of the whole gradient so the update
    does not depend on the absolute loss scale.
    """

    def __init__(self, shape, step_size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.s = np.zeros(shape)
        self.t = 0
        self.step_size = step_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, grad):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m = b1 * self.m + (1 - b1) * grad
        self.s = b2 * self.s + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1**self.t)
        s_hat = self.s / (1 - b2**self.t)
        floor = self.eps * np.sqrt(s_hat.mean())
        return -self.step_size * m_hat / (np.sqrt(s_hat) + floor + 1e-300)


@dataclass
class RegistrationResult:
    velocity: VelocityField
    displacement: DisplacementField
    history: list
    iterations: int
    seconds: float
    weights: LossWeights = None
    settings: OptimSettings = None
    inputs: tuple = field(default=None, repr=False)

    @property
    def final_total(self):
        return self.history[-1].total if self.history else None


def prepare_inputs(fixed, moving, labels=None):
    """Bring images onto one isotropic grid and normalise intensities."""
    if not (np.allclose(fixed.spacing, moving.spacing) and fixed.dims == moving.dims):
        target = min(min(fixed.spacing), min(moving.spacing))
        fixed = resample_isotropic(fixed, target)
        moving = resample_isotropic(moving, target)
        if labels is not None:
            labels = resample_isotropic(labels, target)
    if fixed.dims != moving.dims:
        raise GridMismatch(f"fixed {fixed.dims} and moving {moving.dims} grids differ after resampling")
    if labels is not None and labels.dims != fixed.dims:
        raise GridMismatch(f"labels {labels.dims} do not match images {fixed.dims}")
    fixed = normalize_intensity(fixed)
    moving = normalize_intensity(moving)
    return fixed, moving, labels


def _downsample(vol):
    if isinstance(vol, LabelVolume):
        return LabelVolume(vol.data[::2, ::2, ::2], tuple(2 * s for s in vol.spacing), vol.origin)
    data = ndimage.gaussian_filter(vol.data, 1.0, mode="nearest")[::2, ::2, ::2]
    return Volume(data, tuple(2 * s for s in vol.spacing), vol.origin)


def _upsample_velocity(v, dims):
    coords = grid_coords(dims) / 2.0
    return 2.0 * sample_field(v, coords)


def _pyramid(fixed, moving, labels, levels):
    out = [(fixed, moving, labels)]
    for _ in range(levels - 1):
        f, m, l = out[-1]
        if min(f.dims) < 8:
            break
        out.append((_downsample(f), _downsample(m), _downsample(l) if l is not None else None))
    return out[::-1]


def _optimise(objective, v, settings, history, iteration0, max_iters):
    adam = Adam(v.shape, settings.step_size, settings.beta1, settings.beta2, settings.eps)
    level_totals = []
    for k_iter in range(max_iters):
        it = iteration0 + k_iter
        active = it >= settings.activate_after
        breakdown, grad = objective(v, rigidity_active=active)
        if not (np.isfinite(breakdown.total) and np.all(np.isfinite(grad))):
            raise NonFiniteLoss(f"non-finite loss at iteration {it}", iteration=it)
        history.append(breakdown)
        if it == settings.activate_after and it > iteration0:
            level_totals = []  # the objective changed; restart the convergence window
        level_totals.append(breakdown.total)
        k = settings.window
        if len(level_totals) > k:
            ref = level_totals[-1 - k]
            if abs(ref - level_totals[-1]) <= settings.tol * max(abs(ref), 1e-12):
                break
        step = adam.step(grad)
        if settings.update_sigma > 0:
            # keeps v free of grid-scale modes that central differences cannot see
            step = ndimage.gaussian_filter(step, settings.update_sigma, axes=(0, 1, 2), mode="nearest")
        v = v + step
    return v


def register(fixed, moving, labels, weights=None, settings=None):
    """Register ``moving`` onto ``fixed`` by optimising a stationary velocity field.

    ``labels`` are the moving image's rigid-body labels (may be None when no
    rigidity term is active). Inputs are resampled to a common isotropic grid
    if needed and intensity-normalised.
    """
    weights = weights or LossWeights()
    settings = settings or OptimSettings()
    _kernels.set_threads(settings.threads)
    start = time.perf_counter()
    fixed, moving, labels = prepare_inputs(fixed, moving, labels)
    history = []
    v = None
    for f, m, l in _pyramid(fixed, moving, labels, settings.levels):
        if v is None:
            v = np.zeros(f.dims + (3,))
        else:
            v = _upsample_velocity(v, f.dims)
        objective = Objective(f, m, l, weights)
        v = _optimise(objective, v, settings, history, len(history), settings.max_iters)
        log.debug("level %s done after %d iterations, total %.6g", f.dims, len(history), history[-1].total)
    velocity = VelocityField(v, fixed.spacing, fixed.origin)
    return RegistrationResult(
        velocity=velocity,
        displacement=exp_svf(velocity, weights.steps),
        history=history,
        iterations=len(history),
        seconds=time.perf_counter() - start,
        weights=weights,
        settings=settings,
        inputs=(fixed, moving, labels),
    )


def warm_start(result, new_weights, settings=None, max_iters=None):
    """Continue optimising a previous result's velocity under new weights (finest level only)."""
    settings = settings or result.settings
    fixed, moving, labels = result.inputs
    if result.velocity.dims != fixed.dims:
        raise GridMismatch("stored velocity does not match the stored inputs")
    _kernels.set_threads(settings.threads)
    start = time.perf_counter()
    history = []
    objective = Objective(fixed, moving, labels, new_weights)
    # the activation delay counts from the start of the continuation
    v = _optimise(objective, result.velocity.data.copy(), settings, history, 0, max_iters or settings.max_iters)
    velocity = VelocityField(v, fixed.spacing, fixed.origin)
    return RegistrationResult(
        velocity=velocity,
        displacement=exp_svf(velocity, new_weights.steps),
        history=history,
        iterations=len(history),
        seconds=time.perf_counter() - start,
        weights=new_weights,
        settings=settings,
        inputs=result.inputs,
    )
