# Copyright 2026 The patchcast Authors
# SPDX-License-Identifier: Apache-2.0
"""Patch-based time series forecasting with self-supervised pretraining."""

from ._patchcast import (
    DataError,
    Model,
    NumericError,
    ShapeError,
    attention_bench,
    attention_flops,
    contrastive_loss,
    dynamic_mask_ratio,
    generate_synthetic,
    pinball_loss,
    read_csv,
)

__all__ = [
    "DataError",
    "Model",
    "NumericError",
    "ShapeError",
    "attention_bench",
    "attention_flops",
    "contrastive_loss",
    "dynamic_mask_ratio",
    "generate_synthetic",
    "pinball_loss",
    "read_csv",
]
__version__ = "0.1.0"
