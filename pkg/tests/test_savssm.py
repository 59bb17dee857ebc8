import numpy as np
import pytest
from synthetic import randomize_zero_init

from samam.nn import Embedder
from samam.savssm import (
    SAVSSM,
    VSSM,
    LocalEnhance,
    S7Block,
    StyleEmbedding,
    local_enhance,
    s7_block,
    sain,
    savssm_forward,
    scm,
    sconv,
    vssm_forward,
)
from samam.tensor import Tensor, gradcheck, no_grad


@pytest.fixture
def rng():
    return np.random.default_rng(11)


@pytest.fixture
def style(rng):
    return StyleEmbedding(rng.normal(size=(4, 3, 5)))


def trained_block(rng, c=4, e=8, n=2, mode="zigzag"):
    block = SAVSSM(c, e, n, rng, scan_mode=mode)
    randomize_zero_init(block, rng)
    return block


class TestStyleEmbedding:
    def test_pooled_is_spatial_mean(self, rng):
        f = rng.normal(size=(3, 4, 6))
        assert np.allclose(StyleEmbedding(f).pooled.data, f.mean(axis=(1, 2)))

    def test_rejects_flat_feature(self):
        with pytest.raises(ValueError):
            StyleEmbedding(np.zeros((3, 4)))


class TestSAIN:
    def test_zero_init_outputs_zero(self, rng, style):
        emb = Embedder(4, 8, rng, zero_init=True)
        y = sain(rng.normal(size=(4, 5, 5)), style, emb)
        assert np.array_equal(y.data, np.zeros((4, 5, 5)))

    def test_unit_gamma_is_plain_instance_norm(self, rng, style):
        emb = Embedder(4, 8, rng, zero_init=True)
        emb.bias.data[:4] = 1.0
        x = rng.normal(2.0, 3.0, size=(4, 6, 6))
        y = sain(x, style, emb).data
        ref = (x - x.mean(axis=(1, 2), keepdims=True)) / np.sqrt(x.var(axis=(1, 2), keepdims=True) + 1e-5)
        assert np.allclose(y, ref, rtol=1e-12)

    def test_output_moments_follow_style(self, rng, style):
        emb = Embedder(4, 8, rng)
        y = sain(rng.normal(size=(4, 8, 8)), style, emb).data
        gb = emb(style.pooled).data
        assert np.allclose(y.mean(axis=(1, 2)), gb[4:], atol=1e-10)
        assert np.allclose(y.std(axis=(1, 2)), np.abs(gb[:4]), rtol=1e-4)

    def test_wrong_width(self, rng, style):
        with pytest.raises(ValueError):
            sain(np.ones((4, 2, 2)), style, Embedder(4, 6, rng))


class TestSConv:
    def test_delta_kernel_is_identity(self, rng, style):
        emb = Embedder(4, 8 * 9, rng, zero_init=True)
        emb.bias.data.reshape(8, 3, 3)[:, 1, 1] = 1.0
        x = rng.normal(size=(8, 5, 4))
        assert np.allclose(sconv(x, style, emb).data, x, rtol=1e-15)

    def test_channels_do_not_mix(self, rng, style):
        emb = Embedder(4, 2 * 9, rng)
        x = np.zeros((2, 5, 5))
        x[0] = rng.normal(size=(5, 5))
        assert np.array_equal(sconv(x, style, emb).data[1], np.zeros((5, 5)))


class TestSCM:
    def test_zero_init_halves(self, rng, style):
        x = rng.normal(size=(4, 3, 3))
        assert np.array_equal(scm(x, style, Embedder(4, 4, rng, zero_init=True)).data, 0.5 * x)

    def test_gate_in_unit_interval(self, rng, style):
        emb = Embedder(4, 4, rng)
        emb.weight.data *= 100
        y = scm(np.ones((4, 2, 2)), style, emb).data
        assert np.all((y >= 0) & (y <= 1))


class TestS7:
    def test_style_changes_output(self, rng):
        block = S7Block(4, 6, 3, rng, n_paths=1)
        x = rng.normal(size=(10, 6))
        s1 = StyleEmbedding(rng.normal(size=(4, 3, 3)))
        s2 = StyleEmbedding(rng.normal(size=(4, 3, 3)))
        assert not np.allclose(s7_block(x, s1, block).data, s7_block(x, s2, block).data)

    def test_decay_strictly_negative(self, rng, style):
        block = S7Block(4, 6, 3, rng)
        block.emb_A.weight.data *= 50
        assert np.all(block.decay(style).data < 0)

    def test_default_decay_is_minus_one_to_n(self, rng):
        block = S7Block(4, 2, 3, rng, n_paths=1)
        A = block.decay(StyleEmbedding(np.zeros((4, 2, 2)))).data[0]
        assert np.allclose(A, -np.arange(1, 4)[:, None] * np.ones((1, 2)), rtol=1e-12)

    def test_2d_input_needs_single_path(self, rng, style):
        with pytest.raises(ValueError):
            s7_block(np.ones((5, 8)), style, S7Block(4, 8, 2, rng))

    def test_gradients(self, rng):
        block = S7Block(3, 4, 2, rng, n_paths=2)
        feat = Tensor(rng.normal(size=(3, 2, 2)), requires_grad=True)
        x = Tensor(rng.normal(size=(2, 5, 4)), requires_grad=True)
        w = rng.normal(size=(2, 5, 4))
        params = [x, feat] + block.parameters()
        errs = gradcheck(lambda: (block(x, StyleEmbedding(feat)) * w).sum(), params)
        assert max(errs) <= 1e-4


class TestSAVSSM:
    @pytest.mark.parametrize("shape", [(4, 2, 2), (4, 3, 5), (4, 6, 6)])
    def test_fresh_block_halves_input(self, rng, shape):
        block = SAVSSM(4, 8, 2, rng)
        x = rng.normal(size=shape)
        y = block(x, StyleEmbedding(rng.normal(size=(4, 3, 3)))).data
        assert np.max(np.abs(y - 0.5 * x)) <= 1e-12

    def test_style_spatial_shuffle_invariance(self, rng):
        block = trained_block(rng)
        x = rng.normal(size=(4, 4, 4))
        f = rng.normal(size=(4, 5, 5))
        shuffled = f.reshape(4, -1)[:, rng.permutation(25)].reshape(4, 5, 5)
        with no_grad():
            a = block(x, StyleEmbedding(f)).data
            b = block(x, StyleEmbedding(shuffled)).data
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)

    def test_scan_mode_matters(self, rng, style):
        block = trained_block(rng)
        x = rng.normal(size=(4, 4, 5))
        zig = savssm_forward(x, style, block).data
        cross = savssm_forward(x, style, block, scan_mode="cross").data
        assert not np.allclose(zig, cross)
        assert block.scan_mode == "zigzag"

    def test_global_receptive_field(self, rng, style):
        block = trained_block(rng)
        x = Tensor(rng.normal(size=(4, 6, 6)), requires_grad=True)
        block(x, style)[:, 0, 0].sum().backward()
        assert np.all(np.abs(x.grad[:, 5, 5]) > 0)

    def test_gradients(self, rng):
        block = trained_block(rng, c=3, e=4, n=2)
        x = Tensor(rng.normal(size=(3, 3, 3)), requires_grad=True)
        feat = Tensor(rng.normal(size=(3, 2, 2)), requires_grad=True)
        w = rng.normal(size=(3, 3, 3))
        params = [x, feat] + block.parameters()
        errs = gradcheck(lambda: (block(x, StyleEmbedding(feat)) * w).sum(), params, max_entries=20)
        assert max(errs) <= 1e-4

    def test_zoh_variant_runs(self, rng, style):
        block = SAVSSM(4, 8, 2, rng, zoh=True)
        randomize_zero_init(block, rng)
        assert block(rng.normal(size=(4, 3, 3)), style).shape == (4, 3, 3)


class TestVSSM:
    def test_zero_input(self, rng):
        block = VSSM(4, 8, 2, rng)
        assert np.allclose(vssm_forward(np.zeros((4, 3, 3)), block).data, 0.0, atol=1e-12)

    def test_shape(self, rng):
        assert VSSM(4, 8, 2, rng)(rng.normal(size=(4, 3, 7))).shape == (4, 3, 7)

    def test_gradients(self, rng):
        block = VSSM(3, 4, 2, rng)
        x = Tensor(rng.normal(size=(3, 3, 3)), requires_grad=True)
        w = rng.normal(size=(3, 3, 3))
        errs = gradcheck(lambda: (block(x) * w).sum(), [x] + block.parameters(), max_entries=20)
        assert max(errs) <= 1e-4


class TestLocalEnhance:
    def test_zero_conv_is_identity(self, rng):
        block = LocalEnhance(4, rng)
        block.conv.data[...] = 0.0
        x = rng.normal(size=(4, 3, 3))
        assert np.array_equal(local_enhance(x, block).data, x)

    def test_small_channel_count_keeps_one_hidden_unit(self, rng):
        assert LocalEnhance(2, rng).se_down.weight.shape == (1, 2)

    @pytest.mark.parametrize("use_se", [True, False])
    def test_gradients(self, rng, use_se):
        block = LocalEnhance(4, rng, use_se=use_se)
        x = Tensor(rng.normal(size=(4, 3, 3)), requires_grad=True)
        w = rng.normal(size=(4, 3, 3))
        errs = gradcheck(lambda: (block(x) * w).sum(), [x] + block.parameters(), max_entries=30)
        assert max(errs) <= 1e-4
