"""Finite-difference checks of the decoder's fusion stage, region refinement and full forward."""

from __future__ import annotations

import numpy as np

from ..tensor import GradCheckReport, Tensor, grad_check, mul, sum_
from .config import DrdConfig
from .loss import cross_entropy_loss
from .model import DetailRefiningDecoder

GRAD_CHECK_CONFIG = DrdConfig(num_region_tokens=5, num_heads=4, channels=32, num_classes=21)
SAMPLES_PER_INPUT = 8


def _projected(out: Tensor, rng: np.random.Generator):
    weights = Tensor(rng.normal(size=out.shape))
    return sum_(mul(out, weights))


def check_fusion(config: DrdConfig, seed: int = 0, **kwargs) -> GradCheckReport:
    model = DetailRefiningDecoder(config, seed=seed)
    rng = np.random.default_rng(seed + 1)
    c = config.channels
    x8 = Tensor(rng.normal(size=(1, c, 4, 4)), requires_grad=True)
    x16 = Tensor(rng.normal(size=(1, c, 2, 2)), requires_grad=True)
    proj = Tensor(rng.normal(size=(1, c, 4, 4)))
    return grad_check(lambda: sum_(mul(model.fusion(x8, x16), proj)),
                      [x8, x16, *model.fusion.parameters()],
                      max_checks_per_input=SAMPLES_PER_INPUT, seed=seed, **kwargs)


def check_region_refine(config: DrdConfig, seed: int = 0, **kwargs) -> GradCheckReport:
    model = DetailRefiningDecoder(config, seed=seed)
    rng = np.random.default_rng(seed + 2)
    c, n = config.channels, config.num_region_tokens
    F = Tensor(rng.normal(size=(16, c)), requires_grad=True)
    # Tokens drawn at unit scale so every path carries a measurable gradient.
    model.rrm.tokens.data = rng.normal(size=(n, c))
    proj_s = Tensor(rng.normal(size=(n, 16, c)))
    proj_r = Tensor(rng.normal(size=(n, c)))

    def f():
        out = model.rrm(F)
        return sum_(mul(out.S, proj_s)) + sum_(mul(out.R_O, proj_r))

    return grad_check(f, [F, *model.rrm.parameters()], max_checks_per_input=SAMPLES_PER_INPUT, seed=seed,
                      **kwargs)


def check_end_to_end(config: DrdConfig, seed: int = 0, size: int = 32, **kwargs) -> GradCheckReport:
    model = DetailRefiningDecoder(config, seed=seed)
    rng = np.random.default_rng(seed + 3)
    image = Tensor(rng.normal(size=(1, config.in_channels, size, size)), requires_grad=True)
    target = rng.integers(0, config.num_classes, size=(1, size // 8, size // 8))
    return grad_check(lambda: cross_entropy_loss(model(image), target), [image, *model.parameters()],
                      max_checks_per_input=SAMPLES_PER_INPUT, seed=seed, **kwargs)


def run_all(config: DrdConfig = GRAD_CHECK_CONFIG, seed: int = 0, **kwargs) -> dict[str, GradCheckReport]:
    return {
        "fusion": check_fusion(config, seed, **kwargs),
        "region_refine": check_region_refine(config, seed, **kwargs),
        "end_to_end": check_end_to_end(config, seed, **kwargs),
    }
