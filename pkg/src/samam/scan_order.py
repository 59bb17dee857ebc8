"""Four-way 2D scan orders (zigzag and cross) as explicit permutations.

A path maps sequence position ``t`` to the flat grid index ``r * W + c``.
Zigzag paths start at one image corner each and run the first scan-line
clockwise along the border from that corner, then snake back and forth, so
consecutive tokens are always 4-neighbours. Cross paths are row-major,
column-major and their reversals.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import ShapeError, Tensor, _make, as_tensor

MODES = ("zigzag", "cross")
VERTICES = ("top-left", "top-right", "bottom-right", "bottom-left")


@dataclass(frozen=True)
class ScanPath:
    mode: str
    path_index: int
    height: int
    width: int
    perm: np.ndarray
    inv: np.ndarray

    @property
    def length(self) -> int:
        return self.height * self.width

    def coords(self) -> np.ndarray:
        """(L, 2) array of (row, col) in visit order."""
        return np.stack(np.divmod(self.perm, self.width), axis=1)


def _check(h: int, w: int, path_index: int) -> None:
    if h < 1 or w < 1:
        raise ValueError(f"grid dims must be positive, got {h}x{w}")
    if path_index not in (0, 1, 2, 3):
        raise ValueError(f"path_index must be 0..3, got {path_index}")


def _freeze(mode: str, path_index: int, h: int, w: int, perm: np.ndarray) -> ScanPath:
    perm = np.ascontiguousarray(perm, dtype=np.int64)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    perm.setflags(write=False)
    inv.setflags(write=False)
    return ScanPath(mode, path_index, h, w, perm, inv)


@lru_cache(maxsize=None)
def zigzag_indices(h: int, w: int, path_index: int) -> ScanPath:
    """Serpentine path from corner ``path_index`` (0 TL, 1 TR, 2 BR, 3 BL).

    0: row 0 left->right, row 1 right->left, ...
    1: column W-1 top->bottom, column W-2 bottom->top, ...
    2: row H-1 right->left, row H-2 left->right, ...
    3: column 0 bottom->top, column 1 top->bottom, ...
    """
    _check(h, w, path_index)
    grid = np.arange(h * w).reshape(h, w)
    # each row of ``lines`` is one scan-line in its first-visit direction
    lines = (grid, grid.T[::-1], grid[::-1, ::-1], grid.T[:, ::-1])[path_index].copy()
    lines[1::2] = lines[1::2, ::-1]
    return _freeze("zigzag", path_index, h, w, lines.reshape(-1))


@lru_cache(maxsize=None)
def cross_scan_indices(h: int, w: int, path_index: int) -> ScanPath:
    """0 row-major, 1 column-major, 2 reversed row-major, 3 reversed column-major."""
    _check(h, w, path_index)
    row_major = np.arange(h * w)
    col_major = np.arange(h * w).reshape(h, w).T.reshape(-1)
    perm = (row_major, col_major, row_major[::-1], col_major[::-1])[path_index]
    return _freeze("cross", path_index, h, w, perm)


def scan_paths(mode: str, h: int, w: int) -> tuple[ScanPath, ...]:
    if mode == "zigzag":
        return tuple(zigzag_indices(h, w, p) for p in range(4))
    if mode == "cross":
        return tuple(cross_scan_indices(h, w, p) for p in range(4))
    raise ValueError(f"unknown scan mode {mode!r}; expected one of {MODES}")


@lru_cache(maxsize=None)
def _stacked(mode: str, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    paths = scan_paths(mode, h, w)
    perms = np.stack([p.perm for p in paths])
    invs = np.stack([p.inv for p in paths])
    perms.setflags(write=False)
    invs.setflags(write=False)
    return perms, invs


def manhattan_steps(path: ScanPath) -> np.ndarray:
    """Grid distance between consecutive visited positions (length L-1)."""
    rc = path.coords()
    return np.abs(np.diff(rc, axis=0)).sum(axis=1)


def gather(x, path: ScanPath) -> Tensor:
    """(C, H, W) feature map -> (L, C) token sequence in path order."""
    x = as_tensor(x)
    c, h, w = x.shape
    if (h, w) != (path.height, path.width):
        raise ShapeError(f"feature map {h}x{w} does not match path {path.height}x{path.width}")
    return _permute_tokens(x.reshape(c, h * w), path.perm[None], path.inv[None])[0]


def merge(y, path: ScanPath) -> Tensor:
    """(L, C) token sequence in path order -> (C, H, W) feature map."""
    y = as_tensor(y)
    if y.ndim != 2 or y.shape[0] != path.length:
        raise ShapeError(f"sequence {y.shape} does not match path length {path.length}")
    return _unpermute_tokens(y.reshape((1,) + y.shape), path.inv[None], path.perm[None]).reshape(
        y.shape[1], path.height, path.width
    )


def _permute_tokens(flat, perms: np.ndarray, invs: np.ndarray) -> Tensor:
    """(C, L) -> (P, L, C) with out[p, t] = flat[:, perms[p, t]]."""
    out = flat.data[:, perms].transpose(1, 2, 0)

    def bw(g):
        # adjoint of a permutation is its inverse
        flat._accum(g[np.arange(len(invs))[:, None], invs].sum(axis=0).T)

    return _make(np.ascontiguousarray(out), (flat,), bw)


def _unpermute_tokens(ys, invs: np.ndarray, perms: np.ndarray) -> Tensor:
    """(P, L, C) path-ordered -> (C, L) grid-ordered, summed over paths."""
    idx = np.arange(len(invs))[:, None]
    out = ys.data[idx, invs].sum(axis=0).T

    def bw(g):
        ys._accum(g.T[perms])

    return _make(np.ascontiguousarray(out), (ys,), bw)


def gather_paths(x, mode: str) -> Tensor:
    """(C, H, W) -> (4, L, C): the feature map read along all four paths of ``mode``."""
    x = as_tensor(x)
    c, h, w = x.shape
    perms, invs = _stacked(mode, h, w)
    return _permute_tokens(x.reshape(c, h * w), perms, invs)


def merge_paths(ys, mode: str, h: int, w: int) -> Tensor:
    """(4, L, E) per-path outputs -> (E, H, W), summed over paths in order 0..3."""
    ys = as_tensor(ys)
    perms, invs = _stacked(mode, h, w)
    return _unpermute_tokens(ys, invs, perms).reshape(ys.shape[-1], h, w)
