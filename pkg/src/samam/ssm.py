"""Diagonal state-space primitives: discretization, recurrent scan, convolution form.

Shapes follow the token-major convention used across the package: ``x`` is
(..., L, E), per-token discrete parameters are (..., L, N, E), and the
readout ``C`` is (..., L, N). Any leading dims are independent batches (the
SAVSSM runs its four scan paths as one batch of four).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE, ShapeError, Tensor, _make, as_tensor, exp, matmul, mul, softplus


def discretize_zoh(A, B, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold discretization of a diagonal continuous system.

    Returns ``Abar = exp(delta*A)`` and ``Bbar = (exp(delta*A) - 1) / A * B``.
    Entries with ``A == 0`` take the limit ``Bbar = delta*B``.
    """
    if not np.all(np.asarray(delta) > 0):
        raise ValueError(f"delta must be positive, got {delta}")
    A = np.asarray(A, dtype=DTYPE)
    B = np.asarray(B, dtype=DTYPE)
    dA = delta * A
    Abar = np.exp(dA)
    zero = A == 0.0
    safe = np.where(zero, 1.0, dA)
    Bbar = np.where(zero, delta * B, np.expm1(dA) / safe * delta * B)
    return Abar, Bbar


def discretize_simplified(A, B, delta) -> tuple[Tensor, Tensor]:
    """Per-token discretization with an Euler input term.

    A: (..., N, E), B: (..., L, N), delta: (..., L, E).
    Returns Abar[t,n,e] = exp(delta[t,e] * A[n,e]) and Bbar[t,n,e] = delta[t,e] * B[t,n].
    """
    A, B, delta = as_tensor(A), as_tensor(B), as_tensor(delta)
    if A.ndim < 2 or B.ndim < 2 or delta.ndim < 2:
        raise ShapeError(f"expected A (N,E), B (L,N), delta (L,E); got {A.shape}, {B.shape}, {delta.shape}")
    n, e = A.shape[-2:]
    L = delta.shape[-2]
    if B.shape[-2:] != (L, n) or delta.shape[-1] != e:
        raise ShapeError(f"inconsistent shapes A {A.shape}, B {B.shape}, delta {delta.shape}")
    d = delta.reshape(delta.shape[:-1] + (1, e))
    Abar = exp(mul(d, A.reshape(A.shape[:-2] + (1, n, e))))
    Bbar = mul(d, B.reshape(B.shape + (1,)))
    return Abar, Bbar


def discretize_zoh_tensor(A, B, delta) -> tuple[Tensor, Tensor]:
    """Differentiable per-token ZOH with the same shapes as :func:`discretize_simplified`.

    Requires every entry of A to be nonzero.
    """
    A, B, delta = as_tensor(A), as_tensor(B), as_tensor(delta)
    n, e = A.shape[-2:]
    d = delta.reshape(delta.shape[:-1] + (1, e))
    A4 = A.reshape(A.shape[:-2] + (1, n, e))
    Abar = exp(mul(d, A4))
    Bbar = (Abar - 1.0) / A4 * B.reshape(B.shape + (1,))
    return Abar, Bbar


@dataclass
class DiscreteSSM:
    """Discretized parameters. Arrays or Tensors are both accepted."""

    Abar: object  # (..., L, N, E)
    Bbar: object  # (..., L, N, E)
    C: object  # (..., L, N)
    D: object  # (..., E)
    delta: object | None = None  # (..., L, E), informational

    @classmethod
    def time_invariant(cls, Abar, Bbar, C, D, length: int) -> DiscreteSSM:
        """Tile (N, E) / (N,) parameters across ``length`` tokens."""
        Abar = np.asarray(Abar, dtype=DTYPE)
        Bbar = np.asarray(Bbar, dtype=DTYPE)
        C = np.asarray(C, dtype=DTYPE)
        return cls(
            np.broadcast_to(Abar, (length,) + Abar.shape).copy(),
            np.broadcast_to(Bbar, (length,) + Bbar.shape).copy(),
            np.broadcast_to(C, (length,) + C.shape).copy(),
            np.asarray(D, dtype=DTYPE),
        )


def _check_scan_shapes(Abar, Bbar, C, D, x):
    if x.ndim < 2 or Abar.ndim < 3:
        raise ShapeError(f"scan expects x (...,L,E) and Abar (...,L,N,E), got {x.shape}, {Abar.shape}")
    L, e = x.shape[-2:]
    n = Abar.shape[-2]
    lead = x.shape[:-2]
    if Abar.shape != lead + (L, n, e) or Bbar.shape != Abar.shape:
        raise ShapeError(f"Abar {Abar.shape} / Bbar {Bbar.shape} do not match x {x.shape}")
    if C.shape != lead + (L, n):
        raise ShapeError(f"C {C.shape} does not match (..., L={L}, N={n})")
    if D.shape[-1] != e or D.ndim > len(lead) + 1:
        raise ShapeError(f"D {D.shape} does not match E={e}")


def scan_op(Abar, Bbar, C, D, x) -> Tensor:
    """Sequential diagonal recurrence with a hand-written adjoint.

    h[t] = Abar[t] * h[t-1] + Bbar[t] * x[t][None]; y[t] = C[t] . h[t] + D * x[t].
    All hidden states are retained for the reverse pass.
    """
    Abar, Bbar, C, D, x = (as_tensor(v) for v in (Abar, Bbar, C, D, x))
    _check_scan_shapes(Abar.data, Bbar.data, C.data, D.data, x.data)
    a = np.moveaxis(Abar.data, -3, 0)  # (L, ..., N, E)
    b = np.moveaxis(Bbar.data, -3, 0)
    c = np.moveaxis(C.data, -2, 0)  # (L, ..., N)
    xs = np.moveaxis(x.data, -2, 0)  # (L, ..., E)
    L = xs.shape[0]
    d_b = D.data.reshape(D.shape[:-1] + (1, D.shape[-1])) if D.ndim > 1 else D.data
    u = b * xs[..., None, :]
    hs = np.empty_like(u)
    if L:
        hs[0] = u[0]
    for t in range(1, L):
        # in place: no per-step temporaries
        np.multiply(a[t], hs[t - 1], out=hs[t])
        hs[t] += u[t]
    y = np.einsum("l...ne,l...n->l...e", hs, c) + xs * np.moveaxis(np.broadcast_to(d_b, x.shape), -2, 0)
    out = np.moveaxis(y, 0, -2)

    def bw(gy):
        g = np.moveaxis(gy, -2, 0)  # (L, ..., E)
        # dh_all[t] = c[t] g[t] + a[t+1] * dh_all[t+1]
        dh_all = c[..., :, None] * g[..., None, :]
        for t in range(L - 2, -1, -1):
            dh_all[t] += a[t + 1] * dh_all[t + 1]
        if Abar.requires_grad:
            h_prev = np.concatenate([np.zeros_like(hs[:1]), hs[:-1]], axis=0)
            Abar._accum(np.moveaxis(dh_all * h_prev, 0, -3))
        if Bbar.requires_grad:
            Bbar._accum(np.moveaxis(dh_all * xs[..., None, :], 0, -3))
        if C.requires_grad:
            C._accum(np.moveaxis(np.einsum("l...ne,l...e->l...n", hs, g), 0, -2))
        if D.requires_grad:
            gd = np.moveaxis(g * xs, 0, -2).sum(axis=-2)
            D._accum(_reduce_to(gd, D.shape))
        if x.requires_grad:
            gx = np.einsum("l...ne,l...ne->l...e", dh_all, b)
            gx = gx + g * np.moveaxis(np.broadcast_to(d_b, x.shape), -2, 0)
            x._accum(np.moveaxis(gx, 0, -2))

    return _make(out, (Abar, Bbar, C, D, x), bw)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g.reshape(shape)


def recurrent_scan(d: DiscreteSSM, x) -> Tensor:
    """Run the discretized system over the token axis of ``x`` (..., L, E)."""
    return scan_op(d.Abar, d.Bbar, d.C, d.D, x)


def conv_form(d: DiscreteSSM, x) -> np.ndarray:
    """Evaluate a time-invariant system as a causal convolution with K[k] = C Abar^k Bbar.

    Only valid when Abar, Bbar and C are identical across tokens; selective
    (per-token) parameters raise ``ValueError``.
    """
    Abar, Bbar, C = (np.asarray(getattr(v, "data", v), dtype=DTYPE) for v in (d.Abar, d.Bbar, d.C))
    D = np.asarray(getattr(d.D, "data", d.D), dtype=DTYPE)
    x = np.asarray(getattr(x, "data", x), dtype=DTYPE)
    if x.ndim != 2:
        raise ShapeError(f"conv_form expects x (L, E), got {x.shape}")
    _check_scan_shapes(Abar, Bbar, C, D, x)
    for name, arr in (("Abar", Abar), ("Bbar", Bbar), ("C", C)):
        if not np.all(arr == arr[:1]):
            raise ValueError(f"conv_form needs time-invariant parameters; {name} varies across tokens")
    a, b, c = Abar[0], Bbar[0], C[0]  # (N,E), (N,E), (N,)
    L = x.shape[0]
    powers = a[None] ** np.arange(L)[:, None, None]  # (L, N, E)
    kernel = np.einsum("n,kne,ne->ke", c, powers, b)  # (L, E)
    y = np.empty_like(x)
    for t in range(L):
        y[t] = np.einsum("ke,ke->e", kernel[: t + 1], x[t::-1])
    return y + D * x


def parallel_scan(Abar, Bbar, x) -> np.ndarray:
    """Hidden states of the diagonal recurrence by log-depth doubling.

    Composes affine maps h -> a*h + b pairwise (Hillis-Steele). Forward only.
    Returns hs with the same shape as Abar, (L, N, E).
    """
    a = np.array(Abar, dtype=DTYPE)
    b = np.asarray(Bbar, dtype=DTYPE) * np.asarray(x, dtype=DTYPE)[:, None, :]
    L = a.shape[0]
    step = 1
    while step < L:
        b_new = b.copy()
        a_new = a.copy()
        b_new[step:] = a[step:] * b[:-step] + b[step:]
        a_new[step:] = a[step:] * a[:-step]
        a, b = a_new, b_new
        step *= 2
    return b


def selective_scan(x, W_B, W_C, W_delta, A, D, delta_bias, zoh: bool = False) -> Tensor:
    """Input-dependent scan: B, C and delta are projected from ``x`` per token.

    x: (..., L, E); W_B, W_C: (..., N, E); W_delta: (..., E, E);
    A: (..., N, E); D: (..., E); delta_bias: (..., E).
    """
    x = as_tensor(x)
    B = matmul(x, as_tensor(W_B).transpose(_swap_last(W_B)))
    C = matmul(x, as_tensor(W_C).transpose(_swap_last(W_C)))
    dt_bias = as_tensor(delta_bias)
    dt = matmul(x, as_tensor(W_delta).transpose(_swap_last(W_delta)))
    delta = softplus(dt + dt_bias.reshape(dt_bias.shape[:-1] + (1, dt_bias.shape[-1])))
    disc = discretize_zoh_tensor if zoh else discretize_simplified
    Abar, Bbar = disc(A, B, delta)
    return scan_op(Abar, Bbar, C, D, x)


def _swap_last(t) -> tuple[int, ...]:
    nd = len(np.shape(getattr(t, "data", t)))
    return tuple(range(nd - 2)) + (nd - 1, nd - 2)


def init_delta_bias(rng: np.random.Generator, shape, dt_min: float = 1e-3, dt_max: float = 1e-1) -> np.ndarray:
    """Inverse-softplus of timescales drawn log-uniformly in [dt_min, dt_max]."""
    dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=shape))
    return dt + np.log(-np.expm1(-dt))
