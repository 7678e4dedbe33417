"""Adversarial self-supervised GAN toolkit (C++ core)."""

import json as _json

from ._advss import (  # noqa: F401
    CheckpointError,
    ConfigError,
    DatasetError,
    DivergenceError,
    default_config,
    feature_fid,
    frechet_distance,
    load_config,
    make_pseudo_batch,
    normalize_config,
    read_metrics,
    report,
    rotate,
    sample,
    smooth,
    synthetic_blobs,
    train,
)


def config_dict(text=None):
    """Validated config as a dict; defaults when text is None."""
    return _json.loads(default_config() if text is None else normalize_config(text))
