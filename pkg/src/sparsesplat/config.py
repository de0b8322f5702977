"""Flat key = value training configuration files.

UTF-8 text, one `key = value` per line, '#' starts a comment. Every
TrainConfig / ScheduleConfig / LossWeights field is addressable; an
empty (or absent) file yields the defaults. Unknown keys are an error
so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

from pathlib import Path

from .depth_reg import ScheduleConfig
from .errors import ConfigError, EngineError
from .losses import LossWeights
from .trainer import TrainConfig


def _parse_bool(value: str) -> bool:
    low = value.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got '{value}'")


def _parse_float_list(value: str) -> tuple[float, ...]:
    toks = [tok.strip() for tok in value.split(",") if tok.strip()]
    if not toks:
        raise ConfigError(f"expected a comma-separated list, got '{value}'")
    return tuple(float(tok) for tok in toks)


def _parse_scales(value: str) -> tuple[float, ...]:
    # Accept divisors ("1,2,4") or fractions ("1,0.5,0.25"); both mean
    # the same power-of-two downsampling factors.
    return _parse_float_list(value)


_KEYS = {
    "total_iters": int,
    "seed": int,
    "lr_mu": float,
    "lr_mu_final": float,
    "lr_rot": float,
    "lr_log_scale": float,
    "lr_opacity": float,
    "lr_color": float,
    "momentum": float,
    "lambda1": float,
    "lambda2": float,
    "lambda3": float,
    "asmg_alpha": float,
    "asmg_beta": float,
    "asmg_scales": _parse_scales,
    "asmg_scale_weights": _parse_float_list,
    "mask_threshold": float,
    "pyramid_levels": int,
    "pyramid_weights": _parse_float_list,
    "pyramid_top_weight": float,
    "densify_interval": int,
    "densify_start": int,
    "densify_stop_fraction": float,
    "densify_grad_threshold": float,
    "densify_size_threshold": float,
    "prune_opacity": float,
    "max_gaussians": int,
    "eval_interval": int,
    "real_view_repeat": int,
    "regularize_train_views": _parse_bool,
    "workers": int,
}


def parse_config_text(text: str) -> dict:
    values = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {ln}: unknown key '{key}'")
        try:
            values[key] = _KEYS[key](value)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {ln}: bad value for '{key}': {exc}") from exc
    return values


def build_train_config(values: dict) -> TrainConfig:
    """Assemble a TrainConfig (nested weights + schedule) from flat keys."""
    try:
        weights = LossWeights(
            lambda1=values.get("lambda1", 0.8),
            lambda2=values.get("lambda2", 1.0),
            lambda3=values.get("lambda3", 0.5),
        )
        total_iters = values.get("total_iters", 6000)
        scales = values.get("asmg_scales", (1, 2, 4))
        default_w = tuple(1.0 for _ in scales)
        schedule = ScheduleConfig(
            alpha=values.get("asmg_alpha", 0.3),
            beta=values.get("asmg_beta", 1.0),
            total_iters=max(total_iters, 1),
            scales=tuple(scales),
            scale_weights=tuple(values.get("asmg_scale_weights", default_w)),
            mask_threshold=values.get("mask_threshold", 0.4),
        )
        kwargs = {
            k: values[k]
            for k in values
            if k
            not in (
                "lambda1", "lambda2", "lambda3",
                "asmg_alpha", "asmg_beta", "asmg_scales", "asmg_scale_weights", "mask_threshold",
            )
        }
        kwargs["total_iters"] = total_iters
        return TrainConfig(weights=weights, schedule=schedule, **kwargs)
    except ConfigError:
        raise
    except EngineError as exc:
        raise ConfigError(str(exc)) from exc


def load_train_config(path=None) -> TrainConfig:
    """Parse a config file (or use pure defaults when path is None)."""
    if path is None:
        return build_train_config({})
    path = Path(path)
    try:
        return build_train_config(parse_config_text(path.read_text(encoding="utf-8")))
    except EngineError:
        raise
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
