"""Fusion of per-modality, per-scale features into one masked stack.

Every modality contributes two vectors of length d_e (fine, coarse).  The
aligner projects each of the C = 2M vectors into a shared width d_a and
stacks them in a fixed row order: modality 0 fine, modality 0 coarse,
modality 1 fine, and so on, modalities in the order the parameters were
built with.

Selection works on the whole stack at once: a learned elementwise score
w * x + u over all C*d_a entries goes through one global softmax, the top
k = ceil(rho * C * d_a) entries survive (ties resolved toward the lower
flat index) and the rest are zeroed.  The hard mask is a constant in the
backward pass; the scoring parameters learn through an entropy penalty on
the score distribution that the training loss adds separately.

Two deliberately dumber fusers exist for ablations: raw stacking with
pad/truncate to d_a, and a single shared linear map over the full
concatenation.  Neither masks anything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoder import ModalityFeatures
from .errors import ConfigurationError, ContractError, DimensionError
from .numcore import (Rng, Tensor, Variable, add, affine, concat, constant,
                      log, mul, narrow, param, reduce_sum, reshape, scale,
                      softmax)

FUSION_MODES = ("msa_bl", "stack", "concat")
SCALES = ("fine", "coarse")


def row_order(modalities: tuple[str, ...]) -> tuple[tuple[str, str], ...]:
    """The fixed (modality, scale) order of stack rows."""
    return tuple((m, s) for m in modalities for s in SCALES)


@dataclass
class FusionParams:
    mode: str
    rho: float
    modalities: tuple[str, ...]
    d_e: int
    d_a: int
    # msa_bl: one projection per stack row, plus the elementwise scorer
    align_w: list[Variable]
    align_b: list[Variable]
    score_w: Variable | None
    score_u: Variable | None
    # concat baseline: one shared map from [C*d_e] to [C*d_a]
    concat_w: Variable | None
    concat_b: Variable | None

    @property
    def n_rows(self) -> int:
        return 2 * len(self.modalities)

    def validate(self) -> None:
        if self.mode not in FUSION_MODES:
            raise ConfigurationError(f"unknown fusion mode {self.mode!r}")
        if not 0.0 < self.rho <= 1.0:
            raise ConfigurationError("rho must be in (0, 1]")

    def variables(self) -> list[Variable]:
        out = list(self.align_w) + list(self.align_b)
        for v in (self.score_w, self.score_u, self.concat_w, self.concat_b):
            if v is not None:
                out.append(v)
        return out


@dataclass
class AlignedStack:
    """C aligned rows, one per (modality, scale), in fixed order."""

    slots: Variable  # [C, d_a]
    order: tuple[tuple[str, str], ...]

    @property
    def d_a(self) -> int:
        return self.slots.value.shape[1]

    def row(self, modality: str, scale: str) -> Variable:
        i = self.order.index((modality, scale))
        return reshape(narrow(self.slots, i, i + 1, axis=0), (self.d_a,))


@dataclass
class BlankMask:
    mask: Tensor       # binary [C, d_a]
    k: int
    scores: Variable   # softmax probabilities, [C, d_a]


@dataclass
class FusedRepresentation:
    x_all: Variable  # [C, d_a]


def init_fusion(modalities: tuple[str, ...], d_e: int, d_a: int, rho: float,
                mode: str, rng: Rng, name: str = "fusion") -> FusionParams:
    if mode not in FUSION_MODES:
        raise ConfigurationError(f"unknown fusion mode {mode!r}")
    if not 0.0 < rho <= 1.0:
        raise ConfigurationError("rho must be in (0, 1]")
    c = 2 * len(modalities)
    align_w: list[Variable] = []
    align_b: list[Variable] = []
    score_w = score_u = concat_w = concat_b = None
    if mode == "msa_bl":
        for i, (m, s) in enumerate(row_order(modalities)):
            w = rng.normal((d_e, d_a), scale=1.0 / np.sqrt(d_e))
            align_w.append(param(w, name=f"{name}.align_w.{m}.{s}"))
            align_b.append(param(np.zeros(d_a), name=f"{name}.align_b.{m}.{s}"))
        # identity-ish scorer start: scores track feature magnitudes
        score_w = param(np.ones(c * d_a), name=f"{name}.score_w")
        score_u = param(np.zeros(c * d_a), name=f"{name}.score_u")
    elif mode == "concat":
        w = rng.normal((c * d_e, c * d_a), scale=1.0 / np.sqrt(c * d_e))
        concat_w = param(w, name=f"{name}.concat_w")
        concat_b = param(np.zeros(c * d_a), name=f"{name}.concat_b")
    return FusionParams(mode=mode, rho=rho, modalities=tuple(modalities),
                        d_e=d_e, d_a=d_a, align_w=align_w, align_b=align_b,
                        score_w=score_w, score_u=score_u,
                        concat_w=concat_w, concat_b=concat_b)


def _gather_rows(features: dict[str, ModalityFeatures],
                 params: FusionParams) -> list[Variable]:
    rows = []
    for m, s in row_order(params.modalities):
        if m not in features:
            raise ContractError(
                f"modality {m!r} missing from features; complete it first")
        feats = features[m]
        rows.append(feats.fine if s == "fine" else feats.coarse)
    return rows


def align_features(features: dict[str, ModalityFeatures],
                   params: FusionParams) -> AlignedStack:
    """Project every scale vector to d_a and stack in fixed row order."""
    rows = _gather_rows(features, params)
    projected = []
    for i, r in enumerate(rows):
        v = affine(r, params.align_w[i], params.align_b[i])
        projected.append(reshape(v, (1, params.d_a)))
    return AlignedStack(slots=concat(projected, axis=0),
                        order=row_order(params.modalities))


def blank_mask(stack: AlignedStack, params: FusionParams,
               rho: float | None = None) -> BlankMask:
    """Score, softmax, keep the top k entries of the whole stack.

    The returned mask is a plain array: selection does not carry gradient.
    The score distribution stays a graph node so an entropy penalty can
    reach the scoring parameters.
    """
    if rho is None:
        rho = params.rho
    if not 0.0 < rho <= 1.0:
        raise ConfigurationError("rho must be in (0, 1]")
    c, d_a = stack.slots.value.shape
    n = c * d_a
    flat = reshape(stack.slots, (n,))
    s = add(mul(params.score_w, flat), params.score_u)
    probs = softmax(s)
    k = math.ceil(rho * n)
    # stable argsort of the negated probabilities puts ties at lower index
    keep = np.argsort(-probs.value, kind="stable")[:k]
    mask = np.zeros(n)
    mask[keep] = 1.0
    return BlankMask(mask=mask.reshape(c, d_a), k=k,
                     scores=reshape(probs, (c, d_a)))


def mask_entropy(bm: BlankMask) -> Variable:
    """H(scores) = -sum p log p, a scalar graph node."""
    n = bm.scores.value.size
    flat = reshape(bm.scores, (n,))
    return scale(reduce_sum(mul(flat, log(flat))), -1.0)


def fuse(stack: AlignedStack, bm: BlankMask) -> FusedRepresentation:
    """Elementwise product with the binary mask; exact zeros where masked."""
    if bm.mask.shape != stack.slots.value.shape:
        raise DimensionError(
            f"mask shape {bm.mask.shape} does not match stack "
            f"{stack.slots.value.shape}")
    return FusedRepresentation(x_all=mul(stack.slots, constant(bm.mask)))


def _fit_width(v: Variable, d_e: int, d_a: int) -> Variable:
    if d_e == d_a:
        return v
    if d_e > d_a:
        return narrow(v, 0, d_a)
    return concat([v, constant(np.zeros(d_a - d_e))])


def fuse_baseline(features: dict[str, ModalityFeatures], params: FusionParams,
                  mode: str | None = None) -> AlignedStack:
    """Unlearned stack or shared-linear concat, for the fusion ablation.

    Both return a [C, d_a] stack in the standard row order with nothing
    masked out; ``concat`` mixes rows through one shared map first.
    """
    if mode is None:
        mode = params.mode
    if mode not in ("stack", "concat"):
        raise ConfigurationError(f"not a baseline fusion mode: {mode!r}")
    rows = _gather_rows(features, params)
    if mode == "stack":
        fitted = [reshape(_fit_width(r, params.d_e, params.d_a),
                          (1, params.d_a)) for r in rows]
        slots = concat(fitted, axis=0)
    else:
        long = concat(rows)
        out = affine(long, params.concat_w, params.concat_b)
        slots = reshape(out, (params.n_rows, params.d_a))
    return AlignedStack(slots=slots, order=row_order(params.modalities))


@dataclass
class FusionOutput:
    """What the rest of the model consumes, whatever the fusion mode."""

    stack: AlignedStack
    mask: BlankMask | None     # None for the unmasked baselines
    fused: Variable            # [C, d_a]


def run_fusion(features: dict[str, ModalityFeatures],
               params: FusionParams) -> FusionOutput:
    params.validate()
    if params.mode == "msa_bl":
        stack = align_features(features, params)
        bm = blank_mask(stack, params)
        fused = fuse(stack, bm)
        return FusionOutput(stack=stack, mask=bm, fused=fused.x_all)
    stack = fuse_baseline(features, params)
    return FusionOutput(stack=stack, mask=None, fused=stack.slots)
