"""Run configuration: JSON schema, defaults, and dataclass builders."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigError
from .postprocess import DetectConfig
from .panoptic import PanopticConfig
from .rangeimage import SensorSpec
from .synth import ClassSpec, SceneSpec
from .targets import LossConfig

_RANGE = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "sensor": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rows": {"type": "integer", "minimum": 1},
                "cols": {"type": "integer", "minimum": 1},
                "azimuth_span": _RANGE,
                "inclination": {"type": "array", "items": {"type": "number"}, "minItems": 2},
            },
        },
        "scene": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer"},
                "box_count": _RANGE,
                "classes": {
                    "type": "object",
                    "additionalProperties": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {"l": _RANGE, "w": _RANGE, "h": _RANGE},
                        "required": ["l", "w", "h"],
                    },
                },
                "radius": _RANGE,
                "min_gap": {"type": "number", "minimum": 0},
                "min_view_gap": {"type": "number", "minimum": 0},
                "view_gap_lambda": {"type": "number"},
                "ground_z": {"type": "number"},
                "noise_sigma": {"type": "number", "minimum": 0},
            },
        },
        "loss": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda_s": {"type": "number", "minimum": 0},
                "lambda_r": {"type": "number", "minimum": 0},
                "tau": {"type": "number", "minimum": 0, "maximum": 1},
                "focal_alpha": {"type": "number"},
                "focal_gamma": {"type": "number"},
                "balanced_alpha": {"type": "number"},
                "balanced_gamma": {"type": "number"},
            },
        },
        "detect": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "semantic_threshold": {"type": "number", "minimum": 0, "maximum": 1},
                "centerness_threshold": {"type": "number", "minimum": 0, "maximum": 1},
                "nms_iou": {"type": "number", "minimum": 0, "maximum": 1},
                "nms_iou_per_class": {"type": "object", "additionalProperties": {"type": "number"}},
            },
        },
        "panoptic": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau_c": {"type": "number", "minimum": 0, "maximum": 1},
                "tau_s": {"type": "number", "minimum": 0, "maximum": 1},
                "lambda": {"type": "number", "minimum": 0, "maximum": 1},
                "cluster_eps": {"type": "number", "exclusiveMinimum": 0},
                "heatmap_nms_window": {"type": "integer", "minimum": 1},
            },
        },
        "metrics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "iou_threshold": {"type": "number", "minimum": 0, "maximum": 1},
                "iou_threshold_per_class": {"type": "object", "additionalProperties": {"type": "number"}},
                "iou_kind": {"type": "string", "enum": ["bev", "3d"]},
            },
        },
    },
}

DEFAULT_CONFIG = {
    "sensor": {
        "rows": 64,
        "cols": 1024,
        "azimuth_span": [-math.pi, math.pi],
        "inclination": [-0.30, 0.05],
    },
    "scene": {
        "seed": 1,
        "box_count": [4, 8],
        "classes": {
            "1": {"l": [3.5, 5.0], "w": [1.6, 2.2], "h": [1.4, 1.9]},
            "2": {"l": [0.5, 0.9], "w": [0.5, 0.9], "h": [1.5, 1.9]},
        },
        "radius": [8.0, 40.0],
        "min_gap": 2.0,
        "min_view_gap": 2.5,
        "view_gap_lambda": 0.01,
        "ground_z": -2.0,
        "noise_sigma": 0.0,
    },
    "loss": {
        "lambda_s": 0.1,
        "lambda_r": 1.0,
        "tau": 0.5,
        "focal_alpha": 0.25,
        "focal_gamma": 2.0,
        "balanced_alpha": 0.5,
        "balanced_gamma": 1.5,
    },
    "detect": {
        "semantic_threshold": 0.3,
        "centerness_threshold": 0.5,
        "nms_iou": 0.7,
        "nms_iou_per_class": {"2": 0.5},
    },
    "panoptic": {
        "tau_c": 0.7,
        "tau_s": 0.3,
        "lambda": 0.01,
        "cluster_eps": 0.5,
        "heatmap_nms_window": 3,
    },
    "metrics": {"iou_threshold": 0.7, "iou_threshold_per_class": {"2": 0.5}, "iou_kind": "3d"},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(source: str | Path | dict | None = None) -> dict:
    """Merge user config over the defaults; unknown keys are rejected."""
    if source is None:
        user: dict = {}
    elif isinstance(source, dict):
        user = source
    else:
        try:
            user = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
    try:
        jsonschema.validate(user, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    cfg = _merge(DEFAULT_CONFIG, user)
    # User-provided class tables replace, not extend, the default ones.
    if "scene" in user and "classes" in user["scene"]:
        cfg["scene"]["classes"] = copy.deepcopy(user["scene"]["classes"])
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def make_sensor(cfg: dict) -> SensorSpec:
    s = cfg["sensor"]
    incl = s["inclination"]
    return SensorSpec(
        rows=s["rows"],
        cols=s["cols"],
        azimuth_span=tuple(s["azimuth_span"]),
        inclination=tuple(incl) if len(incl) == 2 else np.asarray(incl),
    )


def make_scene_spec(cfg: dict, seed: int) -> SceneSpec:
    s = cfg["scene"]
    classes = {
        int(k): ClassSpec(l_range=tuple(v["l"]), w_range=tuple(v["w"]), h_range=tuple(v["h"]))
        for k, v in s["classes"].items()
    }
    return SceneSpec(
        seed=seed,
        box_count=tuple(int(v) for v in s["box_count"]),
        classes=classes,
        radius_range=tuple(s["radius"]),
        min_gap=s["min_gap"],
        min_view_gap=s["min_view_gap"],
        view_gap_lambda=s["view_gap_lambda"],
        ground_z=s["ground_z"],
        noise_sigma=s["noise_sigma"],
    )


def make_loss(cfg: dict) -> LossConfig:
    return LossConfig(**cfg["loss"])


def make_detect(cfg: dict) -> DetectConfig:
    d = dict(cfg["detect"])
    d["nms_iou_per_class"] = {int(k): v for k, v in d.get("nms_iou_per_class", {}).items()}
    return DetectConfig(**d)


def make_panoptic(cfg: dict) -> PanopticConfig:
    p = cfg["panoptic"]
    return PanopticConfig(
        tau_c=p["tau_c"],
        tau_s=p["tau_s"],
        lam=p["lambda"],
        cluster_eps=p["cluster_eps"],
        heatmap_nms_window=p["heatmap_nms_window"],
    )


def num_classes(cfg: dict) -> int:
    return max(int(k) for k in cfg["scene"]["classes"])
