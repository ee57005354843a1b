"""Flat ``section.key = value`` configuration for fitting.

Unknown keys are errors so a typo in a loss weight cannot pass silently.
"""

from dataclasses import asdict, replace

from .errors import ConfigError, ContractViolation
from .fileio import parse_key_values
from .losses import LossWeights
from .optimizer import DEFAULT_LR, DensifyThresholds, FitConfig


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _color(s):
    parts = [float(x) for x in s.replace(",", " ").split()]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise ValueError("background needs one or three numbers")
    return tuple(parts)


# key -> (section, field, parser)
KEYS = {
    "fit.iterations": ("fit", "iterations", int),
    "fit.seed": ("fit", "seed", int),
    "fit.k_buffer": ("fit", "k_buffer", int),
    "fit.optimize_poses": ("fit", "optimize_poses", _bool),
    "fit.checkpoint_every": ("fit", "checkpoint_every", int),
    "fit.log_every": ("fit", "log_every", int),
    "fit.background": ("fit", "background", _color),
    "fit.scale_center_lr_by_extent": ("fit", "scale_center_lr_by_extent", _bool),
    "lr.center_final": ("fit", "center_lr_final", float),
    "lr.sh_rest": ("fit", "sh_rest_lr", float),
    "loss.lambda_r": ("loss", "lambda_r", float),
    "loss.lambda_depth": ("loss", "lambda_depth", float),
    "loss.lambda_intensity": ("loss", "lambda_intensity", float),
    "loss.lambda_raydrop": ("loss", "lambda_raydrop", float),
    "loss.lambda_normal": ("loss", "lambda_normal", float),
    "densify.every": ("fit", "densify_every", int),
    "densify.from": ("fit", "densify_from", int),
    "densify.until": ("fit", "densify_until", int),
    "densify.grad": ("densify", "grad", float),
    "densify.min_opacity": ("densify", "min_opacity", float),
    "densify.split_factor": ("densify", "split_factor", float),
    "densify.percent_dense": ("densify", "percent_dense", float),
}
KEYS.update({f"lr.{g}": ("lr", g, float) for g in DEFAULT_LR})


def config_from_items(items, base=None):
    """FitConfig from a ``{key: string value}`` mapping."""
    base = FitConfig() if base is None else base
    unknown = sorted(k for k in items if k not in KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    fit_kw, loss_kw, dens_kw = {}, asdict(base.weights), asdict(base.densify)
    lr = dict(base.lr)
    for key, raw in items.items():
        section, name, parse = KEYS[key]
        try:
            value = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
        {"fit": fit_kw, "loss": loss_kw, "densify": dens_kw, "lr": lr}[section][name] = value
    try:
        weights = LossWeights(**loss_kw)
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from None
    for k, v in lr.items():
        if not v >= 0:
            raise ConfigError(f"learning rate lr.{k} must be non-negative")
    return replace(base, weights=weights, densify=DensifyThresholds(**dens_kw), lr=lr, **fit_kw)


def parse_config(text, source="config"):
    return config_from_items(parse_key_values(text, source))


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config(text, str(path))


def config_items(cfg):
    """Inverse of :func:`config_from_items` (every key, as strings)."""
    out = {}
    dens = asdict(cfg.densify)
    loss = asdict(cfg.weights)
    for key, (section, name, _) in KEYS.items():
        if section == "fit":
            v = getattr(cfg, name)
        elif section == "loss":
            v = loss[name]
        elif section == "densify":
            v = dens[name]
        else:
            v = cfg.lr[name]
        if isinstance(v, tuple):
            v = " ".join(repr(float(x)) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        out[key] = repr(v) if isinstance(v, float) else str(v)
    return out
