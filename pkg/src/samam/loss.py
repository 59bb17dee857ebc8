"""Content, style and identity losses over a frozen multi-stage feature extractor."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .savssm import StyleEmbedding
from .tensor import Tensor, as_tensor, conv2d, l2norm, relu

DEFAULT_WIDTHS = (8, 16, 32, 64)


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = 10.0
    lambda_id1: float = 1.0
    lambda_id2: float = 50.0

    def __post_init__(self):
        if min(self.lambda_s, self.lambda_id1, self.lambda_id2) < 0:
            raise ValueError("loss weights must be nonnegative")


class FeatureExtractor:
    """Fixed conv+ReLU stages standing in for a pretrained perceptual network.

    ``features(img)[0]`` is the image itself and ``features(img)[k]`` the output
    of stage k. Stage 1 keeps resolution; each later stage halves it. Kernels
    are never trainable. Pass ``kernels`` (a list of (out, in, 3, 3) arrays) to
    plug in external weights.
    """

    def __init__(
        self,
        widths: Sequence[int] = DEFAULT_WIDTHS,
        seed: int = 1234,
        kernels: Sequence[np.ndarray] | None = None,
        content_layers: Sequence[int] = (3,),
        style_layers: Sequence[int] = (1, 2, 3, 4),
        identity_layers: Sequence[int] = (1, 2, 3, 4),
        use_std: bool = True,
        eps: float = 1e-5,
    ):
        if kernels is None:
            rng = np.random.default_rng(seed)
            kernels, cin = [], 3
            for w in widths:
                # He-normal keeps activations from vanishing across stages
                kernels.append(rng.normal(0.0, np.sqrt(2.0 / (cin * 9)), size=(w, cin, 3, 3)))
                cin = w
        self.stages = [Tensor(np.array(k, dtype=float)) for k in kernels]
        depth = len(self.stages)
        for layers in (content_layers, style_layers, identity_layers):
            if any(not 0 <= l <= depth for l in layers):
                raise ValueError(f"layer indices {tuple(layers)} out of range for a {depth}-stage extractor")
        self.content_layers = tuple(content_layers)
        self.style_layers = tuple(style_layers)
        self.identity_layers = tuple(identity_layers)
        self.use_std = use_std
        self.eps = eps

    @property
    def depth(self) -> int:
        return len(self.stages)

    def features(self, img, upto: int | None = None) -> list[Tensor]:
        x = as_tensor(img)
        feats = [x]
        upto = self.depth if upto is None else upto
        for i, k in enumerate(self.stages[:upto]):
            x = relu(conv2d(x, k, stride=1 if i == 0 else 2, padding="same"))
            feats.append(x)
        return feats

    def snapshot(self) -> list[np.ndarray]:
        return [k.data.copy() for k in self.stages]


def _stats(f: Tensor, use_std: bool, eps: float) -> tuple[Tensor, Tensor]:
    mu = f.mean(axis=(1, 2))
    centered = f - mu.reshape(-1, 1, 1)
    var = (centered * centered).mean(axis=(1, 2))
    return mu, ((var + eps) ** 0.5 if use_std else var)


def _check_same(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")


def feature_distance(x, y, fx: FeatureExtractor, layers: Sequence[int], fx_x=None, fx_y=None) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _check_same(x, y)
    fx_x = fx_x or fx.features(x)
    fx_y = fx_y or fx.features(y)
    total = Tensor(0.0)
    for l in layers:
        total = total + l2norm(fx_x[l] - fx_y[l])
    return total


def content_loss(stylized, content, fx: FeatureExtractor, feats_cs=None, feats_c=None) -> Tensor:
    """Sum over content layers of ||phi(I_cs) - phi(I_c)||_2."""
    return feature_distance(stylized, content, fx, fx.content_layers, feats_cs, feats_c)


def style_loss(stylized, style, fx: FeatureExtractor, feats_cs=None, feats_s=None) -> Tensor:
    """Sum over style layers of the L2 gaps between channel means and spreads."""
    feats_cs = feats_cs or fx.features(stylized)
    feats_s = feats_s or fx.features(style)
    total = Tensor(0.0)
    for l in fx.style_layers:
        mu_a, sd_a = _stats(feats_cs[l], fx.use_std, fx.eps)
        mu_b, sd_b = _stats(feats_s[l], fx.use_std, fx.eps)
        total = total + l2norm(mu_a - mu_b) + l2norm(sd_a - sd_b)
    return total


def identity_losses(model, content, style, fx: FeatureExtractor) -> tuple[Tensor, Tensor]:
    """Pixel and feature distances of stylize(I, I) from I, for both inputs."""
    content, style = as_tensor(content), as_tensor(style)
    i_cc = model.stylize(content, content)
    i_ss = model.stylize(style, style)
    return identity_terms(i_cc, content, i_ss, style, fx)


def identity_terms(i_cc, content, i_ss, style, fx: FeatureExtractor, feats_c=None, feats_s=None) -> tuple[Tensor, Tensor]:
    _check_same(as_tensor(i_cc), as_tensor(content))
    _check_same(as_tensor(i_ss), as_tensor(style))
    l_id1 = l2norm(i_cc - content) + l2norm(i_ss - style)
    l_id2 = feature_distance(i_cc, content, fx, fx.identity_layers, None, feats_c) + feature_distance(
        i_ss, style, fx, fx.identity_layers, None, feats_s
    )
    return l_id1, l_id2


def total_loss(parts, w: LossWeights = LossWeights()):
    """L_c + lambda_s L_s + lambda_id1 L_id1 + lambda_id2 L_id2; ``parts`` is (L_c, L_s, L_id1, L_id2)."""
    l_c, l_s, l_id1, l_id2 = parts
    return l_c + w.lambda_s * l_s + w.lambda_id1 * l_id1 + w.lambda_id2 * l_id2


@dataclass
class LossParts:
    content: Tensor
    style: Tensor
    id1: Tensor
    id2: Tensor

    def as_tuple(self):
        return (self.content, self.style, self.id1, self.id2)

    def total(self, w: LossWeights = LossWeights()) -> Tensor:
        return total_loss(self.as_tuple(), w)


def training_losses(model, content, style, fx: FeatureExtractor) -> LossParts:
    """All four terms for one content/style pair, sharing encoder passes and features."""
    content, style = as_tensor(content), as_tensor(style)
    ec = model.encode(content, "content")
    es = model.encode(style, "style")
    emb_s = StyleEmbedding(es)
    i_cs = model.decode(ec, emb_s)
    i_cc = model.decode(ec, StyleEmbedding(model.encode(content, "style")))
    i_ss = model.decode(model.encode(style, "content"), emb_s)
    feats_c = fx.features(content)
    feats_s = fx.features(style)
    feats_cs = fx.features(i_cs)
    l_c = content_loss(i_cs, content, fx, feats_cs, feats_c)
    l_s = style_loss(i_cs, style, fx, feats_cs, feats_s)
    l_id1, l_id2 = identity_terms(i_cc, content, i_ss, style, fx, feats_c, feats_s)
    return LossParts(l_c, l_s, l_id1, l_id2)
