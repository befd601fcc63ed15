"""Two-scale temporal encoders, one pair per modality.

Each modality window [T, d_in] is summarized twice: a fine path (narrow
same-padded temporal convolution, ReLU, mean over time) that reacts to
local movement, and a coarse path (wide mean-pooling, linear projection,
ReLU, mean over time) that only sees block averages.  Both yield a vector
of length d_e; downstream code consumes them separately and concatenated,
always fine first.

The single-scale ablation keeps every parameter in place and simply feeds
one path's output into both slots, so ablated and full models have equal
parameter counts and any metric gap is about information, not capacity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError
from .numcore import (Rng, Variable, affine, concat, constant, mean, param,
                      relu, temporal_conv, temporal_pool)

SCALE_MODES = ("multi", "fine_only", "coarse_only")


@dataclass
class EncoderParams:
    """Parameters for one modality's fine and coarse paths."""

    conv_kernel: Variable  # [w_f, d_in, d_e]
    conv_bias: Variable    # [d_e]
    pool_window: int       # w_c
    proj_weight: Variable  # [d_in, d_e]
    proj_bias: Variable    # [d_e]

    @property
    def window_fine(self) -> int:
        return self.conv_kernel.value.shape[0]

    @property
    def d_in(self) -> int:
        return self.conv_kernel.value.shape[1]

    @property
    def d_e(self) -> int:
        return self.conv_kernel.value.shape[2]

    def validate(self) -> None:
        w_f, d_in, d_e = self.conv_kernel.value.shape
        if w_f % 2 == 0:
            raise ConfigurationError("fine window must be odd")
        if self.pool_window < 2:
            raise ConfigurationError("coarse window must be >= 2")
        if d_e < 1:
            raise ConfigurationError("d_e must be >= 1")
        if self.proj_weight.value.shape != (d_in, d_e):
            raise ConfigurationError("projection shape disagrees with kernel")

    def variables(self) -> list[Variable]:
        return [self.conv_kernel, self.conv_bias,
                self.proj_weight, self.proj_bias]


@dataclass
class ModalityFeatures:
    """Fine and coarse summaries plus their fixed-order concatenation."""

    fine: Variable      # [d_e]
    coarse: Variable    # [d_e]
    combined: Variable  # [2*d_e], fine then coarse


def init_encoder(d_in: int, d_e: int, w_f: int, w_c: int, rng: Rng,
                 name: str = "enc") -> EncoderParams:
    """Small scaled-normal weights, zero biases."""
    if w_f % 2 == 0:
        raise ConfigurationError("fine window must be odd")
    if w_c < 2:
        raise ConfigurationError("coarse window must be >= 2")
    k = rng.normal((w_f, d_in, d_e), scale=1.0 / np.sqrt(w_f * d_in))
    p = rng.normal((d_in, d_e), scale=1.0 / np.sqrt(d_in))
    return EncoderParams(
        conv_kernel=param(k, name=f"{name}.conv_kernel"),
        conv_bias=param(np.zeros(d_e), name=f"{name}.conv_bias"),
        pool_window=w_c,
        proj_weight=param(p, name=f"{name}.proj_weight"),
        proj_bias=param(np.zeros(d_e), name=f"{name}.proj_bias"),
    )


def _as_variable(x) -> Variable:
    return x if isinstance(x, Variable) else constant(np.asarray(x, dtype=np.float64))


def encode_fine(x, params: EncoderParams) -> Variable:
    """Local path: same-padded conv, ReLU, temporal mean -> [d_e]."""
    x = _as_variable(x)
    if x.value.shape[0] < params.window_fine:
        raise DataError(
            f"window of {x.value.shape[0]} rows is shorter than the fine "
            f"kernel ({params.window_fine})")
    h = temporal_conv(x, params.conv_kernel, params.conv_bias)
    return mean(relu(h), axis=0)


def encode_coarse(x, params: EncoderParams) -> Variable:
    """Global path: mean-pool, linear map, ReLU, temporal mean -> [d_e]."""
    x = _as_variable(x)
    if x.value.shape[0] < params.pool_window:
        raise DataError(
            f"window of {x.value.shape[0]} rows is shorter than the coarse "
            f"pool ({params.pool_window})")
    pooled = temporal_pool(x, params.pool_window)
    h = affine(pooled, params.proj_weight, params.proj_bias)
    return mean(relu(h), axis=0)


def encode_modality(x, params: EncoderParams,
                    mode: str = "multi") -> ModalityFeatures:
    """Run both paths, or duplicate one of them under an ablation mode."""
    if mode not in SCALE_MODES:
        raise ConfigurationError(f"unknown scale mode {mode!r}")
    if mode == "fine_only":
        f = encode_fine(x, params)
        fine, coarse = f, f
    elif mode == "coarse_only":
        c = encode_coarse(x, params)
        fine, coarse = c, c
    else:
        fine = encode_fine(x, params)
        coarse = encode_coarse(x, params)
    return ModalityFeatures(fine=fine, coarse=coarse,
                            combined=concat([fine, coarse]))
