# SPDX-License-Identifier: Apache-2.0
"""Spatial histology and transcriptomics toolkit."""

import json as _json

from ._histost import (
    ContractViolation,
    DomainError,
    FormatError,
    IoError,
    NotFoundError,
    Model,
    NumericalError,
    Slide,
    asw,
    c_index,
    chaos,
    cox_fit,
    external_metrics,
    kmeans,
    km_curve,
    load_slide,
    logrank,
    normalize,
    pas,
    pca,
    pcc_genewise,
    run_cli,
    save_slide,
    select_hvg,
    synth_slide,
)

__version__ = "0.1.0"


def make_model(config=None, seed=0, **overrides):
    """Builds a Model from a dict of model settings (see model_config.json)."""
    settings = dict(config or {})
    settings.update(overrides)
    return Model(_json.dumps(settings), seed)
