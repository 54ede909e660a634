"""Small neural-network layers on top of the autodiff tensor core.

Initialization convention: weight and bias entries are drawn from
uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); embedding tables from
normal(0, 0.02). Every layer takes the numpy Generator that owns its
randomness, so a model built twice from the same seed is byte-identical.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ContractError, DimensionError, ValidationError


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def normal_init(rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.02) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


class Module:
    """Base class with recursive, insertion-ordered parameter discovery."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{key}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{key}", item

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters():
            if name not in arrays:
                raise ContractError(f"missing parameter array '{name}'")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise DimensionError(
                    f"parameter '{name}': stored shape {arr.shape} != model shape {t.data.shape}")
            t.data = arr.copy()


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = uniform_init(rng, (in_dim, out_dim), in_dim)
        self.bias = uniform_init(rng, (out_dim,), in_dim)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias, self.eps)


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: np.random.Generator):
        self.table = normal_init(rng, (count, dim))

    def __call__(self, indices) -> Tensor:
        return ad.take_rows(self.table, indices)

    def lookup(self, index: int) -> Tensor:
        count = self.table.shape[0]
        if not 0 <= index < count:
            raise ValidationError(f"embedding index {index} out of range [0, {count})")
        return ad.row(self.table, index)


class SeluMLP(Module):
    """Two-layer MLP with SELU after each layer (self-normalizing style)."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator):
        self.fc1 = Linear(in_dim, hidden, rng)
        self.fc2 = Linear(hidden, out_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.selu(self.fc2(ad.selu(self.fc1(x))))


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator):
        if dim % n_heads != 0:
            raise ValidationError(f"model width {dim} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        scale = 1.0 / np.sqrt(self.head_dim)
        outs = []
        for h in range(self.n_heads):
            lo, hi = h * self.head_dim, (h + 1) * self.head_dim
            qh = ad.slice_cols(q, lo, hi)
            kh = ad.slice_cols(k, lo, hi)
            vh = ad.slice_cols(v, lo, hi)
            att = ad.softmax_rows(ad.mul(ad.matmul(qh, ad.transpose(kh)), scale))
            outs.append(ad.matmul(att, vh))
        return self.wo(ad.concat_cols(outs))


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm block: x + MHA(LN(x)), then x + FF(LN(x))."""

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator, ff_mult: int = 4):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, n_heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ff = FeedForward(dim, ff_mult * dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = ad.add(x, self.attn(self.ln1(x)))
        return ad.add(x, self.ff(self.ln2(x)))


class GatedAttentionPool(Module):
    """Gated-attention pooling over an instance bag.

    Scores a_i = w . (tanh(V x_i) * sigmoid(U x_i)); the bag token is the
    attention-weighted instance sum. Permutation invariant by construction.
    """

    def __init__(self, in_dim: int, att_dim: int, rng: np.random.Generator):
        self.v = uniform_init(rng, (in_dim, att_dim), in_dim)
        self.u = uniform_init(rng, (in_dim, att_dim), in_dim)
        self.w = uniform_init(rng, (att_dim,), att_dim)

    def __call__(self, bag: Tensor) -> tuple[Tensor, Tensor]:
        if bag.ndim != 2 or bag.shape[0] < 1:
            raise ContractError(f"attention pooling needs a non-empty (P, d) bag, got {bag.shape}")
        gate = ad.mul(ad.ttanh(ad.matmul(bag, self.v)), ad.sigmoid(ad.matmul(bag, self.u)))
        scores = ad.matmul(gate, self.w)
        attention = ad.softmax_rows(scores)
        pooled = ad.matmul(attention, bag)
        return pooled, attention
