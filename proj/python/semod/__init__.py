"""Python bindings for the semod detection pipeline."""

import json

from . import _semod
from ._semod import (
    Detector,
    RuntimeFailure,
    ValidationError,
    charbonnier,
    class_vocabulary,
    config_keys,
    degrade,
    iou,
    nms,
    psnr,
    render_scene,
    ssim,
)


def default_config():
    """Default training config as a dict."""
    return json.loads(_semod._default_config_json())


def validate_config(cfg):
    """Check a config dict; returns it with defaults filled in."""
    return json.loads(_semod._normalize_config_json(json.dumps(cfg)))


__all__ = [
    "Detector",
    "RuntimeFailure",
    "ValidationError",
    "charbonnier",
    "class_vocabulary",
    "config_keys",
    "default_config",
    "degrade",
    "iou",
    "nms",
    "psnr",
    "render_scene",
    "ssim",
    "validate_config",
]
