"""Parameter containers: a small Module base plus Linear/Embedder layers."""

from __future__ import annotations

import math
from collections.abc import Iterator

import numpy as np

from .tensor import Tensor, matmul


class Module:
    """Attribute-registered parameters, named by dotted path in insertion order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        unexpected = state.keys() - own.keys()
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"tensor {name!r}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data[...] = arr

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """Token-wise affine map; weight is (*stack, out, in)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = False, stack=()):
        stack = tuple(stack)
        self.weight = param(kaiming_uniform(rng, stack + (out_dim, in_dim), in_dim))
        if bias:
            self.bias = param(np.zeros(stack + (out_dim,)))
        else:
            self.bias = None

    def __call__(self, x) -> Tensor:
        """x: (..., L, in) -> (..., L, out)."""
        nd = self.weight.ndim
        y = matmul(x, self.weight.transpose(tuple(range(nd - 2)) + (nd - 1, nd - 2)))
        if self.bias is not None:
            y = y + self.bias.reshape(self.bias.shape[:-1] + (1, self.bias.shape[-1]))
        return y

    def pointwise(self, x) -> Tensor:
        """Apply to every pixel of a (in, H, W) map -> (out, H, W)."""
        c, h, w = x.shape
        y = matmul(self.weight, x.reshape(c, h * w))
        if self.bias is not None:
            y = y + self.bias.reshape(-1, 1)
        return y.reshape(self.weight.shape[-2], h, w)


class Embedder(Module):
    """Single affine layer mapping a pooled style vector to generated parameters.

    With ``zero_init`` both weight and bias start exactly at zero.
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        zero_init: bool = False,
        stack=(),
        bias_init=None,
    ):
        stack = tuple(stack)
        self.in_dim, self.out_dim, self.zero_init = in_dim, out_dim, zero_init
        if zero_init:
            self.weight = param(np.zeros(stack + (out_dim, in_dim)))
            self.bias = param(np.zeros(stack + (out_dim,)))
        else:
            self.weight = param(kaiming_uniform(rng, stack + (out_dim, in_dim), in_dim))
            b = np.zeros(stack + (out_dim,))
            if bias_init is not None:
                b[...] = bias_init
            self.bias = param(b)

    def __call__(self, pooled) -> Tensor:
        """pooled: (in,) -> (*stack, out)."""
        if pooled.shape != (self.in_dim,):
            raise ValueError(f"embedder expects a ({self.in_dim},) vector, got {pooled.shape}")
        y = matmul(self.weight, pooled.reshape(self.in_dim, 1))
        return y.reshape(self.bias.shape) + self.bias
