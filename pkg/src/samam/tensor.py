"""Dense numpy-backed tensors with taped reverse-mode differentiation.

Every op that touches a tensor with ``requires_grad`` records a closure that
maps the output adjoint to input adjoints. ``Tensor.backward`` walks the tape
in reverse topological order. Leaf gradients accumulate across calls; call
``zero_grad`` (or ``Adam.zero_grad``) between steps.
"""

from __future__ import annotations

import contextlib
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"shapes {a} and {b} are not broadcast-compatible") from None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    # ---------------------------------------------------------------- backward
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        for node in order:
            if node._backward is not None:
                node.grad = None
        self._accum(np.broadcast_to(grad, self.shape))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ------------------------------------------------------------- arithmetic
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def softplus(self):
        return softplus(self)

    def silu(self):
        return silu(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def sqrt(self):
        return power(self, 0.5)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("division by an exact zero in Tensor.div")
    out_data = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out_data / b.data, b.shape))

    return _make(out_data, (a, b), bw)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data**exponent

    def bw(g):
        a._accum(g * exponent * a.data ** (exponent - 1))

    return _make(out_data, (a,), bw)


def _unary(a, fwd: np.ndarray, dfdx: Callable[[], np.ndarray]) -> Tensor:
    def bw(g):
        a._accum(g * dfdx())

    return _make(fwd, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _unary(a, out, lambda: out)


def log(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.log(a.data), lambda: 1.0 / a.data)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # branchless stable form
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus_np(x: np.ndarray) -> np.ndarray:
    safe = np.minimum(x, 20.0)
    return np.where(x > 20.0, x, np.log1p(np.exp(safe)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid_np(a.data)
    return _unary(a, s, lambda: s * (1.0 - s))


def softplus(a) -> Tensor:
    """log(1 + exp(x)); returns x itself above 20 to avoid overflow."""
    a = as_tensor(a)
    return _unary(a, _softplus_np(a.data), lambda: np.where(a.data > 20.0, 1.0, _sigmoid_np(a.data)))


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid_np(a.data)
    return _unary(a, a.data * s, lambda: s * (1.0 + a.data * (1.0 - s)))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _unary(a, t, lambda: 1.0 - t * t)


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.maximum(a.data, 0.0), lambda: (a.data > 0).astype(DTYPE))


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "silu": silu,
    "tanh": tanh,
    "relu": relu,
}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name; unary kinds ignore ``b``."""
    try:
        fn = ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    if kind in ("add", "sub", "mul", "div"):
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        return fn(a, b)
    return fn(a)


# ------------------------------------------------------------------ reductions
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        a._accum(np.broadcast_to(g, a.shape))

    return _make(np.asarray(out, dtype=DTYPE), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = math.prod(a.shape[i] for i in axes)
    return tsum(a, axes, keepdims) * (1.0 / count)


def l2norm(a) -> Tensor:
    """Frobenius norm of the whole tensor; the subgradient at zero is taken as 0."""
    a = as_tensor(a)
    n = float(np.sqrt(np.sum(a.data * a.data)))

    def bw(g):
        if n > 0.0:
            a._accum(g * a.data / n)

    return _make(np.asarray(n, dtype=DTYPE), (a,), bw)


# ------------------------------------------------------------- shape plumbing
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(old)))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: a._accum(g.transpose(inv)))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        a._accum(full)

    return _make(np.array(out, dtype=DTYPE), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(ts, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(part)

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in ts], axis=axis)


# --------------------------------------------------------------------- matmul
def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, (a, b), bw)


# ----------------------------------------------------------------------- conv
def conv2d(x, k, stride: int = 1, padding: int | str = "same", groups: int = 1) -> Tensor:
    """Cross-correlate ``x`` (Cin, H, W) with ``k`` (Cout, Cin/groups, kh, kw).

    ``padding="same"`` pads kh//2 / kw//2 zeros (odd kernels only), giving
    (H - 1)//stride + 1 output rows. An integer pads that many zeros.
    """
    x, k = as_tensor(x), as_tensor(k)
    if x.ndim != 3 or k.ndim != 4:
        raise ShapeError(f"conv2d expects x (C,H,W) and k (O,I,kh,kw), got {x.shape}, {k.shape}")
    cin, h, w = x.shape
    cout, cin_g, kh, kw = k.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ShapeError(f"channels in={cin} out={cout} not divisible by groups={groups}")
    if cin_g * groups != cin:
        raise ShapeError(f"kernel expects {cin_g * groups} input channels, input has {cin}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"same padding needs odd kernel sizes, got {kh}x{kw}")
        ph, pw = kh // 2, kw // 2
    else:
        ph = pw = int(padding)
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (w + 2 * pw - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {xp.shape[1:]}")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    g = groups
    win_g = win.reshape(g, cin // g, ho, wo, kh, kw)
    k_g = k.data.reshape(g, cout // g, cin_g, kh, kw)
    out = np.einsum("gchwij,gocij->gohw", win_g, k_g, optimize=True).reshape(cout, ho, wo)

    def bw(gy):
        gy_g = gy.reshape(g, cout // g, ho, wo)
        if k.requires_grad:
            gk = np.einsum("gohw,gchwij->gocij", gy_g, win_g, optimize=True)
            k._accum(gk.reshape(k.shape))
        if x.requires_grad:
            gwin = np.einsum("gohw,gocij->gchwij", gy_g, k_g, optimize=True).reshape(cin, ho, wo, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += gwin[..., i, j]
            x._accum(gxp[:, ph : ph + h, pw : pw + w])

    return _make(out, (x, k), bw)


def upsample_nearest(x, factor: int = 2) -> Tensor:
    x = as_tensor(x)
    c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def bw(g):
        x._accum(g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)))

    return _make(out, (x,), bw)


def instance_norm(x, eps: float = 1e-5) -> Tensor:
    """Per-channel spatial standardization of a (C, H, W) tensor (no affine)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"instance_norm expects (C,H,W), got {x.shape}")
    c, h, w = x.shape
    if h * w < 2:
        raise ShapeError(f"instance_norm needs at least 2 spatial positions, got {h}x{w}")
    mu = x.data.mean(axis=(1, 2), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def bw(g):
        gm = g.mean(axis=(1, 2), keepdims=True)
        gym = (g * y).mean(axis=(1, 2), keepdims=True)
        x._accum(inv * (g - gm - y * gym))

    return _make(y, (x,), bw)


# -------------------------------------------------------------------- training
@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray | None], state: AdamState) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    if state.step == 0 and not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("optimizer state does not match parameter list")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self) -> None:
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ----------------------------------------------------------------- grad check
def numerical_grad(f: Callable[[], Tensor], t: Tensor, eps: float = 1e-5, indices=None) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. entries of ``t``.

    Only the flat ``indices`` are perturbed (all entries by default); the rest
    of the returned array is zero.
    """
    flat = t.data.reshape(-1)
    out = np.zeros_like(flat)
    idx = range(flat.size) if indices is None else indices
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * eps)
    return out.reshape(t.shape)


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """||a - n|| / max(||a||, ||n||); both norms under ``floor`` counts as exact."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def gradcheck(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[float]:
    """Relative error of autodiff vs central differences, one value per input.

    With ``max_entries`` set, a random subset of at most that many coordinates
    is compared per input.
    """
    for t in inputs:
        t.grad = None
    loss = f()
    loss.backward()
    errs = []
    for t in inputs:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.copy()
        if max_entries is not None and t.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idx = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        else:
            idx = np.arange(t.size)
        numeric = numerical_grad(f, t, eps, idx)
        errs.append(rel_error(analytic.reshape(-1)[idx], numeric.reshape(-1)[idx]))
    return errs
