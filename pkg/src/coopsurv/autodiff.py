"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every learnable component in the package is built on this module. Tensors
hold 0-d, 1-d, or 2-d numpy arrays; operations record a dynamic tape
(define-by-run) and ``Tensor.backward`` walks it in reverse topological
order. Gradients accumulate across repeated backward calls until cleared.

Shape discipline: there is no silent broadcasting. The only shape
adaptations allowed are row-wise bias addition ((n, d) + (d,)) and
multiplication by a 0-d scalar tensor; everything else must match exactly
or go through an explicit op (``scale_rows``, ``stack_rows``, ...).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .exceptions import ContractError, DimensionError

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_K = 0.044715

_grad_enabled = True


class no_grad:
    """Context manager disabling tape recording (frozen-parameter forward)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A dense float64 array participating in a reverse-mode gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise DimensionError(f"tensors are at most 2-d, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Underlying array (a view; copy before mutating)."""
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        # float - tensor, used for (1 - h) style expressions
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis: int | None = None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return tmean(self, axis)

    def backward(self) -> None:
        """Populate ``grad`` on every reachable requires_grad tensor.

        Must be called on a scalar (single-element) loss. Repeated calls
        accumulate into existing gradients.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        # Per-pass flow gradients; merged into .grad afterwards so that a
        # second backward() call adds rather than overwrites.
        flow: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flow.get(id(node))
            if g is None:
                continue
            if node._backward is not None:
                parent_grads = node._backward(g)
                for parent, pg in zip(node._parents, parent_grads):
                    if pg is None or not parent.requires_grad:
                        continue
                    acc = flow.get(id(parent))
                    flow[id(parent)] = pg if acc is None else acc + pg
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _track(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- binary ops ----------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    """Elementwise add; also accepts (n, d) + (d,) row bias and python floats."""
    if isinstance(b, (int, float)):
        c = float(b)
        return _track(a.data + c, (a,), lambda g: (g,))
    b = _wrap(b)
    if a.shape == b.shape:
        return _track(a.data + b.data, (a, b), lambda g: (g, g))
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return _track(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    if b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return _track(a.data + b.data, (a, b), lambda g: (g.sum(axis=0), g))
    raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return add(a, -float(b))
    return add(a, neg(_wrap(b)))


def neg(a: Tensor) -> Tensor:
    return _track(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; shapes must match, or one side is scalar."""
    if isinstance(b, (int, float)):
        c = float(b)
        return _track(a.data * c, (a,), lambda g: (g * c,))
    b = _wrap(b)
    if a.shape == b.shape:
        ad, bd = a.data, b.data
        return _track(ad * bd, (a, b), lambda g: (g * bd, g * ad))
    if a.ndim == 0 or b.ndim == 0:
        ad, bd = a.data, b.data

        def _bw(g):
            ga = g * bd
            gb = g * ad
            if a.ndim == 0:
                ga = np.asarray(ga.sum())
            if b.ndim == 0:
                gb = np.asarray(gb.sum())
            return ga, gb

        return _track(ad * bd, (a, b), _bw)
    raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy 1-d/2-d semantics and explicit backward."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul: operands must be 1-d or 2-d, got {a.shape} x {b.shape}")
    inner_a = a.shape[-1]
    inner_b = b.shape[0]
    if inner_a != inner_b:
        raise DimensionError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    if a.ndim == 2 and b.ndim == 2:
        def _bw(g):
            return g @ bd.T, ad.T @ g
    elif a.ndim == 2 and b.ndim == 1:
        def _bw(g):
            return np.outer(g, bd), ad.T @ g
    elif a.ndim == 1 and b.ndim == 2:
        def _bw(g):
            return bd @ g, np.outer(ad, g)
    else:  # 1-d dot 1-d -> scalar
        def _bw(g):
            return g * bd, g * ad

    return _track(out, (a, b), _bw)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _track(a.data.T.copy(), (a,), lambda g: (g.T,))


# -- reductions ----------------------------------------------------------

def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        shape = a.shape
        return _track(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))
    if a.ndim != 2 or axis not in (0, 1):
        raise DimensionError(f"sum(axis={axis}) needs a matrix, got shape {a.shape}")
    n, d = a.shape
    if axis == 0:
        return _track(a.data.sum(axis=0), (a,), lambda g: (np.tile(g, (n, 1)),))
    return _track(a.data.sum(axis=1), (a,), lambda g: (np.repeat(g[:, None], d, axis=1),))


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        return mul(tsum(a), 1.0 / a.data.size)
    count = a.shape[axis]
    return mul(tsum(a, axis), 1.0 / count)


# -- elementwise unaries -------------------------------------------------

def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _track(out, (a,), lambda g: (g * out,))


def tlog(a: Tensor) -> Tensor:
    ad = a.data
    return _track(np.log(ad), (a,), lambda g: (g / ad,))


def tsqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _track(out, (a,), lambda g: (g * 0.5 / out,))


def ttanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _track(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    flat = x.ravel()
    out = np.empty_like(flat)
    pos = flat >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    ex = np.exp(flat[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.reshape(x.shape)


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_stable(a.data)
    return _track(out, (a,), lambda g: (g * out * (1.0 - out),))


def selu(a: Tensor) -> Tensor:
    """Self-normalizing activation with the standard published constants."""
    ad = a.data
    neg_part = np.minimum(ad, 0.0)  # keeps exp() off the positive branch
    out = SELU_LAMBDA * np.where(ad > 0.0, ad, SELU_ALPHA * np.expm1(neg_part))
    deriv = SELU_LAMBDA * np.where(ad > 0.0, 1.0, SELU_ALPHA * np.exp(neg_part))
    return _track(out, (a,), lambda g: (g * deriv,))


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU; smooth, with its exact analytic derivative."""
    ad = a.data
    u = _GELU_C * (ad + _GELU_K * ad ** 3)
    t = np.tanh(u)
    out = 0.5 * ad * (1.0 + t)
    deriv = 0.5 * (1.0 + t) + 0.5 * ad * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_K * ad ** 2)
    return _track(out, (a,), lambda g: (g * deriv,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient is zero outside the open interval."""
    ad = a.data
    out = np.clip(ad, lo, hi)
    inside = (ad > lo) & (ad < hi)
    return _track(out, (a,), lambda g: (g * inside,))


# -- structured ops ------------------------------------------------------

def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction; 1-d input is one row."""
    ad = a.data if a.ndim == 2 else a.data[None, :]
    shifted = ad - ad.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y2 = e / e.sum(axis=1, keepdims=True)
    out = y2 if a.ndim == 2 else y2[0]

    def _bw(g):
        g2 = g if g.ndim == 2 else g[None, :]
        dot = (g2 * y2).sum(axis=1, keepdims=True)
        dx = (g2 - dot) * y2
        return (dx if a.ndim == 2 else dx[0],)

    return _track(out, (a,), _bw)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardization followed by an affine map gain*xhat + bias."""
    two_d = a.ndim == 2
    ad = a.data if two_d else a.data[None, :]
    d = ad.shape[1]
    if d == 1 and eps == 0.0:
        raise ContractError("layer_norm on width-1 rows requires eps > 0 (zero variance)")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain/bias shapes {gain.shape}/{bias.shape} do not match width {d}")
    mu = ad.mean(axis=1, keepdims=True)
    var = ad.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (ad - mu) * inv
    y2 = xhat * gain.data + bias.data
    out = y2 if two_d else y2[0]

    def _bw(g):
        g2 = g if two_d else g[None, :]
        dgain = (g2 * xhat).sum(axis=0)
        dbias = g2.sum(axis=0)
        dxhat = g2 * gain.data
        dx = inv * (dxhat
                    - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return (dx if two_d else dx[0]), dgain, dbias

    return _track(out, (a, gain, bias), _bw)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows; gradient accumulates only into the selected rows."""
    idx = np.asarray(indices, dtype=np.intp)
    ad = a.data
    shape = ad.shape

    def _bw(g):
        acc = np.zeros(shape)
        np.add.at(acc, idx, g)
        return (acc,)

    return _track(ad[idx].copy(), (a,), _bw)


def row(a: Tensor, index: int) -> Tensor:
    """Single-row lookup of a matrix, returning a vector."""
    if a.ndim != 2:
        raise DimensionError(f"row() expects a matrix, got shape {a.shape}")
    i = int(index)
    shape = a.shape

    def _bw(g):
        acc = np.zeros(shape)
        acc[i] = g
        return (acc,)

    return _track(a.data[i].copy(), (a,), _bw)


def vitem(a: Tensor, index: int) -> Tensor:
    """Single element of a vector as a 0-d tensor."""
    if a.ndim != 1:
        raise DimensionError(f"vitem() expects a vector, got shape {a.shape}")
    i = int(index)
    n = a.shape[0]

    def _bw(g):
        acc = np.zeros(n)
        acc[i] = float(g)
        return (acc,)

    return _track(np.asarray(a.data[i]), (a,), _bw)


def slice_vec(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 1:
        raise DimensionError(f"slice_vec() expects a vector, got shape {a.shape}")
    n = a.shape[0]

    def _bw(g):
        acc = np.zeros(n)
        acc[start:stop] = g
        return (acc,)

    return _track(a.data[start:stop].copy(), (a,), _bw)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"slice_cols() expects a matrix, got shape {a.shape}")
    shape = a.shape

    def _bw(g):
        acc = np.zeros(shape)
        acc[:, start:stop] = g
        return (acc,)

    return _track(a.data[:, start:stop].copy(), (a,), _bw)


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    """Stack 1-d tensors of equal length into a matrix."""
    vs = list(vectors)
    if not vs or any(v.ndim != 1 for v in vs):
        raise DimensionError("stack_rows() needs a non-empty list of vectors")
    widths = {v.shape[0] for v in vs}
    if len(widths) != 1:
        raise DimensionError(f"stack_rows() widths differ: {sorted(widths)}")
    out = np.stack([v.data for v in vs])
    return _track(out, vs, lambda g: tuple(g[i] for i in range(len(vs))))


def concat_rows(mats: Sequence[Tensor]) -> Tensor:
    ms = list(mats)
    if not ms or any(m.ndim != 2 for m in ms):
        raise DimensionError("concat_rows() needs a non-empty list of matrices")
    sizes = [m.shape[0] for m in ms]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([m.data for m in ms], axis=0)
    return _track(out, ms,
                  lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(ms))))


def concat_cols(mats: Sequence[Tensor]) -> Tensor:
    ms = list(mats)
    if not ms or any(m.ndim != 2 for m in ms):
        raise DimensionError("concat_cols() needs a non-empty list of matrices")
    sizes = [m.shape[1] for m in ms]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([m.data for m in ms], axis=1)
    return _track(out, ms,
                  lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(ms))))


def concat_vec(vectors: Sequence[Tensor]) -> Tensor:
    vs = list(vectors)
    if not vs or any(v.ndim != 1 for v in vs):
        raise DimensionError("concat_vec() needs a non-empty list of vectors")
    sizes = [v.shape[0] for v in vs]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([v.data for v in vs])
    return _track(out, vs,
                  lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(vs))))


def scale_rows(a: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of a matrix by s[i] (explicit row scaling, no broadcast)."""
    if a.ndim != 2 or s.ndim != 1 or a.shape[0] != s.shape[0]:
        raise DimensionError(f"scale_rows: incompatible shapes {a.shape} and {s.shape}")
    ad, sd = a.data, s.data
    return _track(ad * sd[:, None], (a, s),
                  lambda g: (g * sd[:, None], (g * ad).sum(axis=1)))


# -- optimizer -----------------------------------------------------------

class Adam:
    """Adam with bias correction; moment buffers live on the optimizer.

    Step count increases by exactly 1 per update. Parameters without a
    populated gradient make step() fail rather than silently freeze.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        if not all(p.requires_grad for p in self.params):
            raise ContractError("Adam received a tensor with requires_grad=False")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        # A grad of None means the caller never ran zero_grad()/backward();
        # sparsely-activated parameters carry explicit zero buffers instead.
        for p in self.params:
            if p.grad is None:
                raise ContractError("Adam.step() called with a missing gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)
