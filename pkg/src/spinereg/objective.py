"""Composite registration objective and its gradient with respect to ``v``.

    total = similarity(F, M∘phi) + lambda_smooth * smoothness(v)
            + sum over active terms of weight[term] * term(labels, phi)

with ``phi = exp(v)``. ``pc``, ``oc`` and ``volume`` are averaged over
bodies; ``rigid_dice`` and ``rigid_field`` are summed over bodies.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import GridMismatch
from .field import (
    DEFAULT_STEPS,
    DisplacementField,
    sample_field_grad,
    spatial_gradient,
    spatial_gradient_adjoint,
    squaring_adjoint,
    squaring_history,
)
from .rigidity import (
    RIGIDITY_TERMS,
    _jacobian_penalty,
    _penalty_mask,
    _rigid_dice,
    _rigid_field,
    _soft_warp,
    _volume,
)
from .similarity import mind_descriptor, mind_loss, ngf_epsilon, ngf_loss, nmi_loss
from .volume import as_array, Volume, check_same_grid, grid_coords

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "Objective",
    "smoothness_loss",
    "evaluate",
    "PRESETS",
    "preset",
]

SIMILARITIES = ("mind", "nmi", "ngf")
SUMMED_TERMS = ("rigid_dice", "rigid_field")

# Per-term rigidity weights used when a preset switches a term on. These are
# not published values; they were picked on the phantom pairs so that each
# term is a minor fraction of the similarity at convergence.
DEFAULT_TERM_WEIGHTS = {
    "pc": 0.05,
    "oc": 0.02,
    "rigid_dice": 0.006,
    "rigid_field": 0.01,
    "volume": 0.5,
}


@dataclass(frozen=True)
class LossWeights:
    similarity: str = "mind"
    lambda_smooth: float = 0.01
    lambda_sim: float = 1.0
    rigidity: dict = field(default_factory=dict)
    steps: int = DEFAULT_STEPS
    mind_patch_radius: int = 1
    mind_variance_floor: float = 1e-2
    nmi_bins: int = 32
    ngf_eps_rel: float = 1e-2
    sample_cap: int = None

    def __post_init__(self):
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"similarity must be one of {SIMILARITIES}, got {self.similarity!r}")
        unknown = set(self.rigidity) - set(RIGIDITY_TERMS)
        if unknown:
            raise ValueError(f"unknown rigidity terms {sorted(unknown)}")
        values = [self.lambda_smooth, self.lambda_sim, *self.rigidity.values()]
        if not all(np.isfinite(w) and w >= 0 for w in values):
            raise ValueError("weights must be finite and non-negative")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        object.__setattr__(self, "rigidity", {k: float(v) for k, v in self.rigidity.items()})

    @property
    def active_terms(self):
        return tuple(t for t in RIGIDITY_TERMS if self.rigidity.get(t, 0.0) > 0)

    def with_rigidity(self, **weights):
        return replace(self, rigidity={**self.rigidity, **weights})


PRESETS = {
    "baseline": {},
    "staring": {"similarity": "nmi", "terms": ("pc", "oc")},
    "pc": {"terms": ("pc",)},
    "oc": {"terms": ("oc",)},
    "rigid_dice": {"terms": ("rigid_dice",)},
    "rigid_field": {"terms": ("rigid_field",)},
    "pc_oc": {"terms": ("pc", "oc")},
    "pc_rigid_dice": {"terms": ("pc", "rigid_dice")},
    "pc_rigid_field": {"terms": ("pc", "rigid_field")},
    "volume": {"terms": ("volume",)},
}


def preset(name, **overrides):
    """`LossWeights` for one of the named ablation rows."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    spec = PRESETS[name]
    rigidity = {t: DEFAULT_TERM_WEIGHTS[t] for t in spec.get("terms", ())}
    kwargs = {"similarity": spec.get("similarity", "mind"), "rigidity": rigidity}
    kwargs.update(overrides)
    return LossWeights(**kwargs)


@dataclass
class LossBreakdown:
    total: float
    similarity: float
    smoothness: float
    rigidity: dict = field(default_factory=dict)  # term -> {body_id: value}
    weights: LossWeights = None

    def term_value(self, term):
        values = list(self.rigidity.get(term, {}).values())
        if not values:
            return 0.0
        return float(np.sum(values) if term in SUMMED_TERMS else np.mean(values))

    def recompute_total(self):
        w = self.weights
        total = w.lambda_sim * self.similarity + w.lambda_smooth * self.smoothness
        for term in self.rigidity:
            total += w.rigidity.get(term, 0.0) * self.term_value(term)
        return total

    def as_dict(self):
        return {
            "total": self.total,
            "similarity": self.similarity,
            "smoothness": self.smoothness,
            "rigidity": {t: {str(b): v for b, v in vals.items()} for t, vals in self.rigidity.items()},
        }


def smoothness_loss(v):
    """Mean over voxels of ``sum_c ||grad v_c||^2`` and its gradient."""
    data = as_array(v)
    n = data.shape[0] * data.shape[1] * data.shape[2]
    loss = 0.0
    grad = np.zeros(data.shape)
    for c in range(3):
        for d in range(3):
            g = spatial_gradient(data[..., c], d)
            loss += float(np.sum(g * g))
            grad[..., c] += spatial_gradient_adjoint(g, d)
    return loss / n, grad * (2.0 / n)


class Objective:
    """Loss and gradient for one image pair, with per-pair precomputation.

    Calling the instance with a velocity array returns ``(LossBreakdown,
    grad)``; ``grad`` has the shape of the velocity array.
    """

    def __init__(self, fixed, moving, labels, weights, debug=False):
        check_same_grid(fixed, moving, "fixed and moving images")
        if labels is not None:
            check_same_grid(fixed, labels, "fixed image and labels")
        if weights.active_terms and (labels is None or not labels.body_ids):
            raise ValueError("rigidity terms need at least one labelled body")
        self.fixed = fixed
        self.moving = moving
        self.labels = labels
        self.weights = weights
        self.debug = debug
        self.coords = grid_coords(fixed.dims)
        self.moving_grid = moving.data[..., None]
        if weights.similarity == "mind":
            self.fixed_desc = mind_descriptor(fixed, weights.mind_patch_radius, variance_floor=weights.mind_variance_floor)
            self.moving_desc = mind_descriptor(moving, weights.mind_patch_radius, variance_floor=weights.mind_variance_floor)
        elif weights.similarity == "ngf":
            self.ngf_eps = ngf_epsilon(fixed, weights.ngf_eps_rel)
        self.bodies = labels.body_ids if labels is not None else ()
        self.indicators = [labels.indicator(b) for b in self.bodies]

    def similarity(self, phi):
        w = self.weights
        if w.similarity == "mind":
            return mind_loss(self.fixed_desc, self.moving_desc, phi)
        warped, dm = sample_field_grad(self.moving_grid, phi.positions())
        warped = Volume(warped[..., 0], self.fixed.spacing, self.fixed.origin)
        if w.similarity == "nmi":
            loss, dw = nmi_loss(self.fixed, warped, w.nmi_bins)
        else:
            loss, dw = ngf_loss(self.fixed, warped, eps=self.ngf_eps)
        return loss, dw[..., None] * dm[..., 0, :]

    def rigidity(self, phi, terms):
        """Per-body values and the weighted gradient of the active terms."""
        w = self.weights
        pos = phi.positions()
        values = {}
        grad = np.zeros(pos.shape)
        masks = None
        for term in terms:
            weight = w.rigidity[term]
            if term in ("pc", "oc"):
                if masks is None:
                    masks = [_penalty_mask(ind, pos) for ind in self.indicators]
                per_body, g = _jacobian_penalty(masks, phi.data, term)
            elif term == "volume":
                per_body, g = _volume(self.indicators, pos)
            else:
                fn = _rigid_dice if term == "rigid_dice" else _rigid_field
                per_body = []
                g = np.zeros(pos.shape)
                for body, ind in zip(self.bodies, self.indicators):
                    val, gb = fn(ind, pos, self.coords, w.sample_cap, body)
                    per_body.append(val)
                    g += gb
            values[term] = dict(zip(self.bodies, per_body))
            grad += weight * g
        return values, grad

    def __call__(self, v, rigidity_active=True):
        v = np.asarray(as_array(v), dtype=float)
        if v.shape[:3] != tuple(self.fixed.dims):
            raise GridMismatch(f"velocity grid {v.shape[:3]} != image grid {self.fixed.dims}")
        w = self.weights
        history = squaring_history(v, w.steps)
        phi = DisplacementField(history[-1], self.fixed.spacing, self.fixed.origin)

        if w.lambda_sim > 0:
            sim, grad_phi = self.similarity(phi)
            grad_phi = w.lambda_sim * grad_phi
        else:
            sim, grad_phi = self.similarity(phi)[0], np.zeros(v.shape)
        terms = w.active_terms if rigidity_active else ()
        rig_values, rig_grad = self.rigidity(phi, terms)
        if terms:
            grad_phi = grad_phi + rig_grad

        grad_v = squaring_adjoint(history, grad_phi)
        smooth = 0.0
        if w.lambda_smooth > 0:
            smooth, g_smooth = smoothness_loss(v)
            grad_v += w.lambda_smooth * g_smooth
        else:
            smooth = smoothness_loss(v)[0]

        breakdown = LossBreakdown(0.0, sim, smooth, rig_values, w)
        breakdown.total = breakdown.recompute_total()
        if self.debug:
            parts = w.lambda_sim * sim + w.lambda_smooth * smooth + sum(
                w.rigidity[t] * breakdown.term_value(t) for t in rig_values
            )
            assert abs(parts - breakdown.total) <= 1e-9 * max(1.0, abs(parts))
        return breakdown, grad_v


def evaluate(fixed, moving, labels, v, weights, debug=False):
    """One-shot evaluation of the composite loss; see `Objective`."""
    return Objective(fixed, moving, labels, weights, debug=debug)(v)
