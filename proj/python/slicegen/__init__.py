"""Python bindings for the slicegen C++ core."""

import json

from ._slicegen import (
    CheckpointError,
    ConfigError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    InfinitePsnrError,
    LoadError,
    Model,
    SubjectProfile,
    checkpoint_header,
    fcm_cluster,
    generate_dataset,
    level_grid,
    load_model,
    make_profile,
    mutual_information,
    psnr,
    registered_mutual_information,
    render_slice,
    ssim,
)
from ._slicegen import default_config as _default_config


def default_config():
    """Default run config as a dict."""
    return json.loads(_default_config())
