"""Detail refining decoder: ASPP/stage-feature fusion followed by region refinement.

Shapes below use B batch, C channels, N tokens, HW = (H/8)(W/8) flattened
positions of the stride-8 feature map.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from ..tensor import (
    Conv2d,
    Linear,
    Module,
    Tensor,
    TensorError,
    add,
    concat,
    gelu,
    matmul,
    mul,
    permute,
    reshape,
    softmax_lastdim,
    transpose,
    upsample_bilinear,
)
from .config import DrdConfig

_HE_GAIN = math.sqrt(2.0)


class StubEncoder(Module):
    """Strided 3x3 conv pyramid standing in for a pretrained backbone.

    Returns features at strides 4, 8 and 16; the stride-8 map plays the role
    of the backbone's third-stage output used by the fusion stage.
    """

    def __init__(self, config: DrdConfig, rng: np.random.Generator):
        c = config.channels
        self.stem = Conv2d(config.in_channels, c, 3, rng, stride=2, padding=1, gain=_HE_GAIN)
        self.stage1 = Conv2d(c, c, 3, rng, stride=2, padding=1, gain=_HE_GAIN)
        self.stage2 = Conv2d(c, c, 3, rng, stride=2, padding=1, gain=_HE_GAIN)
        self.stage3 = Conv2d(c, c, 3, rng, stride=2, padding=1, gain=_HE_GAIN)

    def __call__(self, image: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        x4 = gelu(self.stage1(gelu(self.stem(image))))
        x8 = gelu(self.stage2(x4))
        x16 = gelu(self.stage3(x8))
        return x4, x8, x16


class Fusion(Module):
    """ASPP on the stride-16 features, upsampled and fused with stride-8 features."""

    def __init__(self, config: DrdConfig, rng: np.random.Generator):
        c = config.channels
        self.aspp = [
            Conv2d(c, c, 1, rng, gain=_HE_GAIN) if d == 1
            else Conv2d(c, c, 3, rng, padding=d, dilation=d, gain=_HE_GAIN)
            for d in config.aspp_dilations
        ]
        self.aspp_proj = Conv2d(c * len(self.aspp), c, 1, rng, gain=_HE_GAIN)
        self.skip_proj = Conv2d(c, c, 1, rng, gain=_HE_GAIN)
        self.fuse = Conv2d(2 * c, c, 3, rng, padding=1, gain=_HE_GAIN)

    def __call__(self, enc_stage3: Tensor, enc_last: Tensor) -> Tensor:
        if enc_stage3.ndim != 4 or enc_last.ndim != 4:
            raise TensorError("fusion expects 4-D feature maps")
        h8, w8 = enc_stage3.shape[2:]
        h16, w16 = enc_last.shape[2:]
        if (h8, w8) != (2 * h16, 2 * w16):
            raise TensorError(f"stage-3 extents {h8}x{w8} are not twice the last extents {h16}x{w16}")
        branches = [gelu(conv(enc_last)) for conv in self.aspp]
        context = gelu(self.aspp_proj(concat(branches, axis=1)))
        context = upsample_bilinear(context, h8, w8)
        skip = gelu(self.skip_proj(enc_stage3))
        return gelu(self.fuse(concat([context, skip], axis=1)))


class RegionRefineOutput(NamedTuple):
    S: Tensor            # (..., N, HW, C) broadcast product of maps and features
    A: Tensor            # (..., N, HW) one attention map per token
    R_O: Tensor          # (..., N, C) refined tokens
    R_E: Tensor          # (..., N, C) tokens after cross-attention + residual
    token_attention: Tensor  # (..., heads, N, HW) attention used to update the tokens


class RegionRefine(Module):
    def __init__(self, config: DrdConfig, rng: np.random.Generator):
        c = config.channels
        self.config = config
        tokens = rng.normal(0.0, config.token_init_std, size=(config.num_region_tokens, c))
        self.tokens = Tensor(tokens, requires_grad=True)
        # Products whose rows are region tokens are computed row by row (see matmul).
        self.f_q = Linear(c, c, rng, row_stable=True)
        self.f_k = Linear(c, c, rng)
        self.f_v = Linear(c, c, rng)
        self.f_o = Linear(c, c, rng, bias=False, row_stable=True)
        self.ffn_in = Linear(c, config.ffn_ratio * c, rng, row_stable=True)
        self.ffn_out = Linear(config.ffn_ratio * c, c, rng, row_stable=True)
        self.f_q1 = Linear(c, c, rng, row_stable=True)
        self.f_k1 = Linear(c, c, rng)

    def __call__(self, F: Tensor, R: Tensor | None = None) -> RegionRefineOutput:
        return region_refine_forward(F, self.tokens if R is None else R, self)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # (..., L, C) -> (..., heads, L, C/heads)
    *lead, length, c = x.shape
    x = reshape(x, (*lead, length, heads, c // heads))
    nd = x.ndim
    axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    return permute(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    # (..., heads, L, d) -> (..., L, heads * d)
    *lead, heads, length, d = x.shape
    nd = x.ndim
    axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    return reshape(permute(x, axes), (*lead, length, heads * d))


def region_refine_forward(F: Tensor, R: Tensor, params: RegionRefine) -> RegionRefineOutput:
    """Token cross-attention, token FFN, map attention and broadcast combination.

    ``F`` is (HW, C) or (B, HW, C); ``R`` is (N, C).
    """
    cfg = params.config
    c, n, heads = cfg.channels, cfg.num_region_tokens, cfg.num_heads
    if F.ndim not in (2, 3) or F.shape[-1] != c:
        raise TensorError(f"features must be (HW, {c}) or (B, HW, {c}), got {F.shape}")
    if R.shape != (n, c):
        raise TensorError(f"region tokens must be ({n}, {c}), got {R.shape}")

    R_Q = params.f_q(R)
    F_K = params.f_k(F)
    F_V = params.f_v(F)

    q = _split_heads(R_Q, heads)          # (heads, N, d)
    k = _split_heads(F_K, heads)          # (..., heads, HW, d)
    v = _split_heads(F_V, heads)
    scale = math.sqrt(c) if cfg.literal_sqrt_c else math.sqrt(c // heads)
    token_attention = softmax_lastdim(mul(matmul(q, transpose(k), row_stable=True), 1.0 / scale))  # (..., heads, N, HW)
    attended = params.f_o(_merge_heads(matmul(token_attention, v, row_stable=True)))               # (..., N, C)
    R_E = add(attended, R)
    R_O = add(params.ffn_out(gelu(params.ffn_in(R_E))), R_E)

    R_Q1 = params.f_q1(R_O)
    F_K1 = params.f_k1(F)
    A = softmax_lastdim(mul(matmul(R_Q1, transpose(F_K1), row_stable=True), 1.0 / math.sqrt(c)))  # (..., N, HW)

    lead = F.shape[:-2]
    hw = F.shape[-2]
    A_e = reshape(A, (*lead, n, hw, 1))
    F_e = reshape(F, (*lead, 1, hw, c))
    S = mul(A_e, F_e)
    return RegionRefineOutput(S, A, R_O, R_E, token_attention)


class DetailRefiningDecoder(Module):
    """Stub encoder + fusion + region refinement + final 1x1 projection."""

    def __init__(self, config: DrdConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        self.encoder = StubEncoder(config, rng)
        self.fusion = Fusion(config, rng)
        self.rrm = RegionRefine(config, rng)
        groups = config.num_classes if config.token_mode == "class" else 1
        self.final_proj = Conv2d(config.num_region_tokens * config.channels, config.num_classes, 1, rng,
                                 groups=groups)

    def features(self, image: Tensor) -> Tensor:
        _, x8, x16 = self.encoder(image)
        return self.fusion(x8, x16)

    def __call__(self, image: Tensor) -> Tensor:
        return drd_forward(image, self)

    def forward_with_maps(self, image: Tensor) -> tuple[Tensor, RegionRefineOutput]:
        return _forward(image, self)


def fusion_forward(enc_stage3: Tensor, enc_last: Tensor, params: DetailRefiningDecoder | Fusion) -> Tensor:
    fusion = params.fusion if isinstance(params, DetailRefiningDecoder) else params
    return fusion(enc_stage3, enc_last)


def flatten_features(fmap: Tensor) -> Tensor:
    """(B, C, h, w) -> (B, hw, C)."""
    b, c, h, w = fmap.shape
    return permute(reshape(fmap, (b, c, h * w)), (0, 2, 1))


def tokens_to_channels(S: Tensor, h: int, w: int) -> Tensor:
    """(B, N, hw, C) -> (B, N*C, h, w), token-major channel order."""
    b, n, _, c = S.shape
    return reshape(permute(S, (0, 1, 3, 2)), (b, n * c, h, w))


def _forward(image: Tensor, model: DetailRefiningDecoder) -> tuple[Tensor, RegionRefineOutput]:
    cfg = model.config
    if image.ndim != 4 or image.shape[1] != cfg.in_channels:
        raise TensorError(f"image must be (B, {cfg.in_channels}, H, W), got {image.shape}")
    H, W = image.shape[2:]
    if H % 16 or W % 16:
        raise TensorError(f"image extents {H}x{W} must be divisible by 16")
    fmap = model.features(image)
    h, w = fmap.shape[2:]
    out = model.rrm(flatten_features(fmap))
    S = out.S
    if cfg.rescale_maps:
        # attention maps average 1/hw per position; restore unit scale
        S = mul(S, float(h * w))
    logits = model.final_proj(tokens_to_channels(S, h, w))
    return logits, out


def drd_forward(image: Tensor, model: DetailRefiningDecoder) -> Tensor:
    """(B, 3, H, W) image -> (B, K, H/8, W/8) logits."""
    return _forward(image, model)[0]
