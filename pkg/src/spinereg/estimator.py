"""scikit-learn style front end to `register`."""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .field import warp_labels, warp_volume
from .metrics import compute_report
from .objective import preset
from .optimizer import OptimSettings, register, warm_start
from .volume import LabelVolume, Volume

__all__ = ["SpineRegistration", "check_volume", "check_labels"]


def check_volume(x, name="volume"):
    """Accept a `Volume` or a 3D array; reject non-finite intensities."""
    if isinstance(x, LabelVolume):
        raise TypeError(f"{name} must be an intensity volume, got labels")
    vol = x if isinstance(x, Volume) else Volume(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(vol.data)):
        raise ValueError(f"{name} contains non-finite values")
    return vol


def check_labels(x, name="labels"):
    if x is None:
        return None
    return x if isinstance(x, LabelVolume) else LabelVolume(np.asarray(x))


class SpineRegistration(BaseEstimator):
    """Rigidity-preserving deformable registration of one image pair.

    ``fit(fixed, moving, labels)`` optimises the velocity field; afterwards
    ``transform`` warps moving-space volumes or label maps into the fixed
    grid. Loss weights come from ``preset``; ``rigidity`` (a term -> weight
    dict) and ``lambda_smooth`` override it when given.
    """

    def __init__(
        self,
        preset="baseline",
        similarity=None,
        lambda_smooth=None,
        rigidity=None,
        steps=7,
        max_iters=150,
        step_size=0.1,
        levels=2,
        tol=1e-4,
        update_sigma=1.0,
        activate_after=0,
        seed=0,
        threads=1,
    ):
        self.preset = preset
        self.similarity = similarity
        self.lambda_smooth = lambda_smooth
        self.rigidity = rigidity
        self.steps = steps
        self.max_iters = max_iters
        self.step_size = step_size
        self.levels = levels
        self.tol = tol
        self.update_sigma = update_sigma
        self.activate_after = activate_after
        self.seed = seed
        self.threads = threads

    def _weights(self):
        overrides = {"steps": self.steps}
        if self.similarity is not None:
            overrides["similarity"] = self.similarity
        if self.lambda_smooth is not None:
            overrides["lambda_smooth"] = self.lambda_smooth
        if self.rigidity is not None:
            overrides["rigidity"] = dict(self.rigidity)
        return preset(self.preset, **overrides)

    def _settings(self):
        return OptimSettings(
            max_iters=self.max_iters,
            step_size=self.step_size,
            levels=self.levels,
            tol=self.tol,
            update_sigma=self.update_sigma,
            activate_after=self.activate_after,
            seed=self.seed,
            threads=self.threads,
        )

    def fit(self, fixed, moving, labels=None):
        fixed = check_volume(fixed, "fixed")
        moving = check_volume(moving, "moving")
        labels = check_labels(labels)
        self.result_ = register(fixed, moving, labels, self._weights(), self._settings())
        self._set_fitted()
        return self

    def refine(self, **params):
        """Warm-start the fitted field under updated parameters (finest level only)."""
        check_is_fitted(self, "result_")
        self.set_params(**params)
        self.result_ = warm_start(self.result_, self._weights(), self._settings())
        self._set_fitted()
        return self

    def _set_fitted(self):
        self.displacement_ = self.result_.displacement
        self.velocity_ = self.result_.velocity
        self.history_ = self.result_.history
        self.n_iter_ = self.result_.iterations

    def transform(self, X):
        """Warp a moving-space `Volume` or `LabelVolume` (or 3D array) onto the fixed grid."""
        check_is_fitted(self, "result_")
        phi = self.displacement_
        if isinstance(X, LabelVolume):
            return warp_labels(LabelVolume(X.data, phi.spacing, phi.origin), phi)
        vol = check_volume(X, "X")
        return warp_volume(Volume(vol.data, phi.spacing, phi.origin), phi)

    def report(self, moving_labels, fixed_labels=None):
        """`MetricReport` of the fitted field."""
        check_is_fitted(self, "result_")
        return compute_report(
            check_labels(moving_labels), self.displacement_, check_labels(fixed_labels), self.result_.seconds
        )
