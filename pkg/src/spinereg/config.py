"""``key = value`` configuration files for registration runs and phantom specs.

Blank lines and ``#`` comments are ignored. Registration keys::

    similarity = mind            # mind | nmi | ngf
    mind.patch_radius = 1
    mind.variance_floor = 0.01   # on [0, 1]-normalised intensities
    nmi.bins = 32
    ngf.eps_rel = 0.01
    lambda_smooth = 0.01
    lambda_sim = 1.0
    T = 7                        # alias: steps
    rigidity.terms = pc, oc      # replaces the preset's term list
    rigidity.weight = 0.05       # applied to every listed term
    rigidity.weight.oc = 0.02    # per-term override
    rigidity.sample_cap = 2000
    rigidity.activate_after = 0
    optimizer.max_iters = 150    # also step_size, beta1, beta2, eps, tol,
                                 # window, levels, update_sigma
"""
from dataclasses import fields, replace

from .objective import DEFAULT_TERM_WEIGHTS, preset
from .optimizer import OptimSettings
from .phantom import PhantomSpec
from .rigidity import RIGIDITY_TERMS

__all__ = ["parse_config", "read_config", "registration_setup", "phantom_spec"]

_OPTIMIZER_KEYS = ("max_iters", "step_size", "beta1", "beta2", "eps", "tol", "window", "levels", "update_sigma")
_SCALAR_KEYS = {
    "similarity": ("similarity", str),
    "mind.patch_radius": ("mind_patch_radius", int),
    "mind.variance_floor": ("mind_variance_floor", float),
    "nmi.bins": ("nmi_bins", int),
    "ngf.eps_rel": ("ngf_eps_rel", float),
    "lambda_smooth": ("lambda_smooth", float),
    "lambda_sim": ("lambda_sim", float),
    "T": ("steps", int),
    "steps": ("steps", int),
    "rigidity.sample_cap": ("sample_cap", int),
}


def parse_config(text, source="<config>"):
    """Parse ``key = value`` lines into an ordered dict of strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def _terms(value):
    terms = tuple(t for t in value.replace(",", " ").split() if t)
    bad = [t for t in terms if t not in RIGIDITY_TERMS]
    if bad:
        raise ValueError(f"unknown rigidity terms {bad}; choose from {RIGIDITY_TERMS}")
    return terms


def _convert(key, value, kind):
    try:
        return kind(value)
    except ValueError:
        raise ValueError(f"bad value for {key}: {value!r}") from None


def registration_setup(config=None, preset_name="baseline", seed=None, threads=None):
    """Build ``(LossWeights, OptimSettings)`` from a preset plus config overrides."""
    config = dict(config or {})
    weights = preset(preset_name)
    kwargs = {}
    for key, (name, kind) in _SCALAR_KEYS.items():
        if key in config:
            if name in kwargs:
                raise ValueError("give only one of 'T' and 'steps'")
            kwargs[name] = _convert(key, config.pop(key), kind)

    terms = _terms(config.pop("rigidity.terms")) if "rigidity.terms" in config else weights.active_terms
    common = config.pop("rigidity.weight", None)
    rigidity = {}
    for term in terms:
        w = weights.rigidity.get(term, DEFAULT_TERM_WEIGHTS[term])
        rigidity[term] = _convert("rigidity.weight", common, float) if common is not None else w
    for key in [k for k in config if k.startswith("rigidity.weight.")]:
        term = key.rsplit(".", 1)[1]
        if term not in RIGIDITY_TERMS:
            raise ValueError(f"unknown rigidity term in {key!r}")
        rigidity[term] = _convert(key, config.pop(key), float)
    weights = replace(weights, rigidity=rigidity, **kwargs)

    opt = {}
    if "rigidity.activate_after" in config:
        opt["activate_after"] = _convert("rigidity.activate_after", config.pop("rigidity.activate_after"), int)
    for name in _OPTIMIZER_KEYS:
        key = f"optimizer.{name}"
        if key in config:
            kind = int if name in ("max_iters", "window", "levels") else float
            opt[name] = _convert(key, config.pop(key), kind)
    if seed is not None:
        opt["seed"] = int(seed)
    if threads is not None:
        opt["threads"] = int(threads)
    if config:
        raise ValueError(f"unknown config keys: {sorted(config)}")
    return weights, OptimSettings(**opt)


def phantom_spec(config):
    """`PhantomSpec` from config keys named like its fields; tuples are comma separated."""
    config = dict(config)
    kwargs = {}
    for f in fields(PhantomSpec):
        if f.name not in config:
            continue
        value = config.pop(f.name)
        default = f.default
        if isinstance(default, tuple):
            kind = type(default[0])
            parts = [p for p in value.replace(",", " ").split() if p]
            kwargs[f.name] = tuple(_convert(f.name, p, kind) for p in parts)
        else:
            kwargs[f.name] = _convert(f.name, value, type(default))
    if config:
        raise ValueError(f"unknown phantom keys: {sorted(config)}")
    return PhantomSpec(**kwargs)
