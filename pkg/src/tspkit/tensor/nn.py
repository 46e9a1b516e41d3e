"""Parameter containers: a small Module base plus Linear and Conv2d layers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .core import Tensor, TensorError, add, conv2d, matmul, reshape


class Module:
    """Collects Tensor parameters and sub-modules from instance attributes.

    Parameter names are dotted attribute paths, e.g. ``fusion.aspp.0.weight``.
    Lists of modules are walked with their index as the path component.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            path = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise TensorError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    """y = x @ weight + bias over the last axis; weight is (C_in, C_out)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, bias: bool = True, gain: float = 1.0,
                 row_stable: bool = False):
        self.c_in, self.c_out = c_in, c_out
        self.row_stable = row_stable
        self.weight = Tensor(rng.normal(0.0, gain / np.sqrt(c_in), size=(c_in, c_out)), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.c_in:
            raise TensorError(f"Linear expects last extent {self.c_in}, got {x.shape}")
        lead = x.shape[:-1]
        flat = reshape(x, (-1, self.c_in)) if x.ndim != 2 else x
        y = matmul(flat, self.weight, row_stable=self.row_stable)
        if self.bias is not None:
            y = add(y, self.bias)
        return reshape(y, lead + (self.c_out,)) if x.ndim != 2 else y


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, *,
                 stride: int = 1, padding: int = 0, dilation: int = 1, groups: int = 1, bias: bool = True,
                 gain: float = 1.0):
        if c_in % groups or c_out % groups:
            raise TensorError(f"Conv2d: channels {c_in}->{c_out} not divisible by groups={groups}")
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.stride, self.padding, self.dilation, self.groups = stride, padding, dilation, groups
        fan_in = (c_in // groups) * kernel * kernel
        self.weight = Tensor(
            rng.normal(0.0, gain / np.sqrt(fan_in), size=(c_out, c_in // groups, kernel, kernel)),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise TensorError(f"Conv2d expects (B, {self.c_in}, H, W), got {x.shape}")
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation, self.groups)
