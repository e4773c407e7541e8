"""Run configuration: JSON schema, defaults, and typed access.

User files are deep-merged over the defaults and the result is validated
against CONFIG_SCHEMA before any work starts. The architecture-relevant
sections are hashed into checkpoints so incompatible weights are rejected
at load time.
"""

import copy
import hashlib
import json
import os
from pathlib import Path

import jsonschema

from .errors import ConfigError

MODEL_KINDS = ("pgan", "resvit", "palette3d")

DEFAULT_CONFIG = {
    "model": "pgan",
    "seed": 7,
    "data_dir": "data",
    "out_dir": "runs/out",
    "phantom": {
        "n": 4,
        "dims": [64, 64, 64],
        "semi_axes_range": [0.70, 0.85],
        "texture_sigma": 2.5,
        "tumor_radius_range": [5.0, 8.0],
    },
    "preprocess": {
        "slice_axis": 2,
        "norm_domain": "nonzero",
        "crop_size": [96, 96, 96],
    },
    "loss_weights": {"pix": 100.0, "per": 100.0, "adv": 1.0},
    "optimizer": {"lr": 2e-4, "beta1": 0.5, "beta2": 0.999, "eps": 1e-8},
    "train": {"steps": 50, "batch_size": 4, "checkpoint_interval": 25},
    "generator": {
        "base_width": 16,
        "depth": 2,
        "blocks": 2,
        "token_dim": 32,
        "heads": 4,
        "patch": 8,
    },
    "discriminator": {"layers": 3, "base_width": 16},
    "extractor": {"widths": [8, 16, 16, 16], "taps": [2, 4], "seed": 1234},
    "diffusion": {
        "timesteps": 1000,
        "beta_start": 1e-4,
        "beta_end": 0.02,
        "base_width": 8,
        "depth": 2,
        "embed_dim": 32,
    },
    "adversarial": "lsgan",
}

_POSNUM = {"type": "number", "exclusiveMinimum": 0}
_POSINT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {"enum": list(MODEL_KINDS)},
        "seed": {"type": "integer", "minimum": 0},
        "data_dir": {"type": "string"},
        "out_dir": {"type": "string"},
        "phantom": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": _POSINT,
                "dims": {"type": "array", "items": _POSINT,
                         "minItems": 3, "maxItems": 3},
                "semi_axes_range": {"type": "array", "items": _POSNUM,
                                    "minItems": 2, "maxItems": 2},
                "texture_sigma": _POSNUM,
                "tumor_radius_range": {"type": "array", "items": _POSNUM,
                                       "minItems": 2, "maxItems": 2},
            },
        },
        "preprocess": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "slice_axis": {"enum": [0, 1, 2]},
                "norm_domain": {"enum": ["nonzero", "all"]},
                "crop_size": {"type": "array", "items": _POSINT,
                              "minItems": 3, "maxItems": 3},
            },
        },
        "loss_weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pix": {"type": "number", "minimum": 0},
                "per": {"type": "number", "minimum": 0},
                "adv": {"type": "number", "minimum": 0},
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": {"type": "number", "minimum": 0},
                "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "eps": _POSNUM,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": _POSINT,
                "batch_size": _POSINT,
                "checkpoint_interval": _POSINT,
            },
        },
        "generator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "base_width": _POSINT,
                "depth": _POSINT,
                "blocks": _POSINT,
                "token_dim": _POSINT,
                "heads": _POSINT,
                "patch": _POSINT,
            },
        },
        "discriminator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"layers": _POSINT, "base_width": _POSINT},
        },
        "extractor": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "widths": {"type": "array", "items": _POSINT, "minItems": 1},
                "taps": {"type": "array", "items": _POSINT, "minItems": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "diffusion": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "timesteps": _POSINT,
                "beta_start": {"type": "number", "exclusiveMinimum": 0,
                               "exclusiveMaximum": 1},
                "beta_end": {"type": "number", "exclusiveMinimum": 0,
                             "exclusiveMaximum": 1},
                "base_width": _POSINT,
                "depth": _POSINT,
                "embed_dim": _POSINT,
            },
        },
        "adversarial": {"enum": ["lsgan", "bce"]},
    },
}

# sections that determine parameter shapes / meanings
_ARCH_SECTIONS = ("model", "generator", "discriminator", "extractor", "diffusion")


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    return cfg


def load_config(path=None, overrides: dict = None) -> dict:
    """Defaults, optionally overlaid with a JSON file and explicit overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        cfg = _deep_merge(cfg, user)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    cfg = validate_config(cfg)
    if "INPAINT_DATA_DIR" in os.environ and (
            path is None or "data_dir" not in _read_keys(path)):
        cfg["data_dir"] = os.environ["INPAINT_DATA_DIR"]
    return cfg


def _read_keys(path) -> set:
    try:
        return set(json.loads(Path(path).read_text()))
    except Exception:
        return set()


def config_hash(cfg: dict) -> str:
    """Stable hash over the architecture-relevant sections."""
    arch = {k: cfg[k] for k in _ARCH_SECTIONS if k in cfg}
    blob = json.dumps(arch, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
