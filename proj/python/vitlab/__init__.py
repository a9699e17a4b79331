# Copyright 2026 The vitlab Authors
# SPDX-License-Identifier: Apache-2.0
"""Python access to the vitlab ViT / LayerNorm-placement core.

Configs are plain dicts using the run-spec schema; arrays are float64 NumPy
arrays. Heavy lifting happens in the native ``_core`` extension.
"""

import json

from . import _core
from ._core import (
    DomainError,
    Error,
    ShapeError,
    affine_only,
    clip_global_norm,
    layer_norm,
    normalize_only,
    patchify,
    placement_grid,
    rms_norm,
)

__all__ = [
    "DomainError", "Error", "ShapeError", "ablate_stem", "affine_only", "clip_global_norm",
    "cosine_schedule", "export_scales", "gradient_check_model", "init_params", "layer_norm",
    "micro_model", "normalize_only", "patchify", "placement_grid", "rms_norm", "stem_forward",
    "sweep_placements", "train", "vit_logits",
]


def _dump(cfg):
    return cfg if isinstance(cfg, str) else json.dumps(cfg)


def micro_model(**overrides):
    """The depth-2, D=16 micro model used by gradient checks, as a dict."""
    cfg = json.loads(_core.micro_model_json())
    cfg.update(overrides)
    return cfg


def init_params(model, seed=0, loss="sigmoid_xent"):
    return _core.init_params(_dump(model), seed, loss)


def vit_logits(model, params, images):
    return _core.vit_logits(_dump(model), params, images)


def stem_forward(model, params, patches):
    return _core.stem_forward(_dump(model), params, patches)


def gradient_check_model(model, batch=2, seed=0, tolerance=1e-4):
    return _core.gradient_check_model(_dump(model), batch, seed, tolerance)


def cosine_schedule(step, train):
    return _core.cosine_schedule(step, _dump(train))


def train(spec):
    return _core.train(_dump(spec))


def sweep_placements(spec):
    return _core.sweep_placements(_dump(spec))


def ablate_stem(spec):
    return _core.ablate_stem(_dump(spec))


def export_scales(checkpoint, out_dir):
    return _core.export_scales(str(checkpoint), str(out_dir))
