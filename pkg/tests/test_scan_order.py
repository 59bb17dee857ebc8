import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from samam.scan_order import (
    cross_scan_indices,
    gather,
    gather_paths,
    manhattan_steps,
    merge,
    merge_paths,
    scan_paths,
    zigzag_indices,
)
from samam.tensor import ShapeError, Tensor

dims = st.integers(1, 12)


def walk_oracle(h, w, corner):
    """Independent serpentine construction by stepping a cursor cell by cell."""
    # (start row, start col, first-line direction, line-advance direction)
    start = {0: (0, 0, (0, 1), (1, 0)), 1: (0, w - 1, (1, 0), (0, -1)),
             2: (h - 1, w - 1, (0, -1), (-1, 0)), 3: (h - 1, 0, (-1, 0), (0, 1))}[corner]
    r, c, (dr, dc), (ar, ac) = start
    out = []
    n_lines = h if ar else w
    line_len = w if ar else h
    for line in range(n_lines):
        for k in range(line_len):
            out.append(r * w + c)
            if k < line_len - 1:
                r, c = r + dr, c + dc
        r, c = r + ar, c + ac
        dr, dc = -dr, -dc
    return out


class TestZigzag:
    def test_two_by_two(self):
        assert zigzag_indices(2, 2, 0).perm.tolist() == [0, 1, 3, 2]

    def test_three_by_four_path0(self):
        coords = zigzag_indices(3, 4, 0).coords().tolist()
        assert coords[:6] == [[0, 0], [0, 1], [0, 2], [0, 3], [1, 3], [1, 2]]

    def test_single_cell(self):
        for p in range(4):
            assert zigzag_indices(1, 1, p).perm.tolist() == [0]

    @pytest.mark.parametrize("h,w", [(1, 5), (5, 1), (2, 3), (4, 4), (3, 7), (6, 5)])
    @pytest.mark.parametrize("p", range(4))
    def test_matches_walk_oracle(self, h, w, p):
        assert zigzag_indices(h, w, p).perm.tolist() == walk_oracle(h, w, p)

    def test_starts_at_distinct_corners(self):
        h, w = 4, 5
        corners = {tuple(zigzag_indices(h, w, p).coords()[0]) for p in range(4)}
        assert corners == {(0, 0), (0, w - 1), (h - 1, w - 1), (h - 1, 0)}

    def test_paths_distinct(self):
        perms = {tuple(p.perm) for p in scan_paths("zigzag", 3, 3)}
        assert len(perms) == 4

    @settings(max_examples=60, deadline=None)
    @given(dims, dims, st.integers(0, 3))
    def test_bijective_and_continuous(self, h, w, p):
        path = zigzag_indices(h, w, p)
        assert np.array_equal(np.sort(path.perm), np.arange(h * w))
        assert np.array_equal(path.perm[path.inv], np.arange(h * w))
        assert np.all(manhattan_steps(path) == 1)

    def test_read_only(self):
        with pytest.raises(ValueError):
            zigzag_indices(3, 3, 0).perm[0] = 5


class TestCross:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 12), st.integers(2, 12))
    def test_discontinuity_counts(self, h, w):
        counts = [int(np.sum(manhattan_steps(p) != 1)) for p in scan_paths("cross", h, w)]
        assert counts == [h - 1, w - 1, h - 1, w - 1]

    def test_row_major(self):
        assert cross_scan_indices(2, 3, 0).perm.tolist() == [0, 1, 2, 3, 4, 5]
        assert cross_scan_indices(2, 3, 1).perm.tolist() == [0, 3, 1, 4, 2, 5]
        assert cross_scan_indices(2, 3, 3).perm.tolist() == [5, 2, 4, 1, 3, 0]


class TestValidation:
    @pytest.mark.parametrize("h,w,p", [(0, 3, 0), (3, -1, 0), (2, 2, 4), (2, 2, -1)])
    def test_bad_args(self, h, w, p):
        with pytest.raises(ValueError):
            zigzag_indices(h, w, p)

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="unknown scan mode"):
            scan_paths("spiral", 2, 2)

    def test_gather_shape_mismatch(self):
        with pytest.raises(ShapeError):
            gather(np.zeros((2, 3, 3)), zigzag_indices(3, 4, 0))

    def test_merge_length_mismatch(self):
        with pytest.raises(ShapeError):
            merge(np.zeros((5, 2)), zigzag_indices(2, 2, 0))


class TestGatherMerge:
    @pytest.mark.parametrize("mode", ["zigzag", "cross"])
    @pytest.mark.parametrize("p", range(4))
    def test_round_trip(self, mode, p):
        x = np.random.default_rng(p).normal(size=(3, 5, 6))
        path = scan_paths(mode, 5, 6)[p]
        assert np.array_equal(merge(gather(x, path), path).data, x)

    def test_gather_order(self):
        x = np.arange(4.0).reshape(1, 2, 2)
        assert gather(x, zigzag_indices(2, 2, 0)).data[:, 0].tolist() == [0.0, 1.0, 3.0, 2.0]

    def test_gather_gradient_is_ones(self):
        x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 4)), requires_grad=True)
        gather(x, zigzag_indices(3, 4, 2)).sum().backward()
        assert np.array_equal(x.grad, np.ones((2, 3, 4)))

    def test_stacked_paths_match_single(self):
        x = np.random.default_rng(1).normal(size=(2, 4, 3))
        stacked = gather_paths(x, "zigzag").data
        for p, path in enumerate(scan_paths("zigzag", 4, 3)):
            assert np.array_equal(stacked[p], gather(x, path).data)

    def test_merge_paths_sums(self):
        x = np.random.default_rng(2).normal(size=(2, 4, 3))
        assert np.allclose(merge_paths(gather_paths(x, "cross"), "cross", 4, 3).data, 4 * x, rtol=1e-15)

    def test_merge_paths_adjoint(self):
        rng = np.random.default_rng(3)
        ys = Tensor(rng.normal(size=(4, 12, 2)), requires_grad=True)
        g = rng.normal(size=(2, 3, 4))
        (merge_paths(ys, "zigzag", 3, 4) * g).sum().backward()
        assert np.allclose(ys.grad, gather_paths(g, "zigzag").data)
