"""Full style-transfer network: two scan encoders and a style-aware decoder."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

import numpy as np

from .nn import Module, kaiming_uniform, param
from .savssm import SAVSSM, VSSM, LocalEnhance, PointwiseBlock, StyleEmbedding
from .scan_order import MODES
from .tensor import ShapeError, Tensor, as_tensor, conv2d, silu, upsample_nearest

PATCH = 4


@dataclass
class ModelConfig:
    C: int = 16
    E: int = 32
    N: int = 4
    encoder_depth: int = 2
    groups: int = 2
    blocks_per_group: int = 2
    scan_mode: str = "zigzag"
    sconv_kernel: int = 3
    se_reduction: int = 4
    use_loe: bool = True
    conv_only: bool = False
    zoh: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.scan_mode not in MODES:
            raise ValueError(f"scan_mode must be one of {MODES}, got {self.scan_mode!r}")
        for name in ("C", "E", "N", "sconv_kernel", "se_reduction"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.sconv_kernel % 2 == 0:
            raise ValueError(f"sconv_kernel must be odd, got {self.sconv_kernel}")
        if min(self.encoder_depth, self.groups, self.blocks_per_group) < 0:
            raise ValueError("block counts must be nonnegative")

    @classmethod
    def full_scale(cls, **overrides) -> ModelConfig:
        return cls(C=256, E=512, N=16, **overrides)

    def to_text(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> ModelConfig:
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep or key not in kinds:
                raise ValueError(f"config line {lineno}: unrecognised entry {line!r}")
            values[key] = _parse(raw, kinds[key])
        return cls(**values)

    def replace(self, **changes) -> ModelConfig:
        return dataclasses.replace(self, **changes)


def _fmt(v) -> str:
    return str(v).lower() if isinstance(v, bool) else str(v)


def _parse(raw: str, kind: str):
    if kind == "bool":
        if raw.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1")
    if kind == "int":
        return int(raw)
    return raw


class PatchEmbed(Module):
    """4x4 stride-4 convolution, 3 -> C channels."""

    def __init__(self, c: int, rng: np.random.Generator):
        self.kernel = param(kaiming_uniform(rng, (c, 3, PATCH, PATCH), 3 * PATCH * PATCH))
        self.bias = param(np.zeros(c))

    def __call__(self, img) -> Tensor:
        img = as_tensor(img)
        if img.ndim != 3 or img.shape[0] != 3:
            raise ShapeError(f"expected a (3, H, W) image, got {img.shape}")
        _, h, w = img.shape
        if h % PATCH or w % PATCH:
            raise ShapeError(f"image dims {h}x{w} must be divisible by {PATCH}; pad the image first")
        y = conv2d(img, self.kernel, stride=PATCH, padding=0)
        return y + self.bias.reshape(-1, 1, 1)


def patch_embed(img, layer: PatchEmbed) -> Tensor:
    return layer(img)


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.patch = PatchEmbed(cfg.C, rng)
        if cfg.conv_only:
            self.blocks = [PointwiseBlock(cfg.C, cfg.E, rng) for _ in range(cfg.encoder_depth)]
        else:
            self.blocks = [VSSM(cfg.C, cfg.E, cfg.N, rng, cfg.scan_mode, cfg.sconv_kernel) for _ in range(cfg.encoder_depth)]
        self.loe = LocalEnhance(cfg.C, rng, cfg.se_reduction, use_se=not cfg.conv_only) if cfg.use_loe else None

    def __call__(self, img) -> Tensor:
        x = self.patch(img)
        for block in self.blocks:
            x = block(x)
        if self.loe is not None:
            x = self.loe(x)
        return x


class Group(Module):
    """Stack of style-aware blocks followed by local enhancement."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        if cfg.conv_only:
            self.blocks = [PointwiseBlock(cfg.C, cfg.E, rng) for _ in range(cfg.blocks_per_group)]
        else:
            self.blocks = [
                SAVSSM(cfg.C, cfg.E, cfg.N, rng, cfg.scan_mode, cfg.sconv_kernel, cfg.zoh)
                for _ in range(cfg.blocks_per_group)
            ]
        self.loe = LocalEnhance(cfg.C, rng, cfg.se_reduction, use_se=not cfg.conv_only) if cfg.use_loe else None

    def __call__(self, x, style: StyleEmbedding) -> Tensor:
        for block in self.blocks:
            x = block(x, style)
        if self.loe is not None:
            x = self.loe(x)
        return x


class SynthesisHead(Module):
    """(conv3x3 + SiLU, nearest x2) twice, then conv3x3 to RGB."""

    def __init__(self, c: int, rng: np.random.Generator):
        self.conv1 = param(kaiming_uniform(rng, (c, c, 3, 3), c * 9))
        self.bias1 = param(np.zeros(c))
        self.conv2 = param(kaiming_uniform(rng, (c, c, 3, 3), c * 9))
        self.bias2 = param(np.zeros(c))
        self.conv_out = param(kaiming_uniform(rng, (3, c, 3, 3), c * 9))
        self.bias_out = param(np.zeros(3))

    def __call__(self, x) -> Tensor:
        x = upsample_nearest(silu(conv2d(x, self.conv1) + self.bias1.reshape(-1, 1, 1)), 2)
        x = upsample_nearest(silu(conv2d(x, self.conv2) + self.bias2.reshape(-1, 1, 1)), 2)
        return conv2d(x, self.conv_out) + self.bias_out.reshape(-1, 1, 1)


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.groups = [Group(cfg, rng) for _ in range(cfg.groups)]
        self.head = SynthesisHead(cfg.C, rng)

    def __call__(self, content_feature, style: StyleEmbedding) -> Tensor:
        x = as_tensor(content_feature)
        for group in self.groups:
            x = group(x, style)
        return self.head(x)


class SaMam(Module):
    """Content encoder + style encoder + style-pluggable decoder.

    Parameters are created in a fixed order from ``np.random.default_rng(cfg.seed)``,
    so equal configs give bit-identical weights.
    """

    def __init__(self, cfg: ModelConfig | None = None):
        self.config = cfg or ModelConfig()
        rng = np.random.default_rng(self.config.seed)
        self.content_encoder = Encoder(self.config, rng)
        self.style_encoder = Encoder(self.config, rng)
        self.decoder = Decoder(self.config, rng)

    def encode(self, img, which: str = "content") -> Tensor:
        if which == "content":
            return self.content_encoder(img)
        if which == "style":
            return self.style_encoder(img)
        raise ValueError(f"which must be 'content' or 'style', got {which!r}")

    def decode(self, content_feature, style: StyleEmbedding) -> Tensor:
        return self.decoder(content_feature, style)

    def style_embedding(self, style_img) -> StyleEmbedding:
        return StyleEmbedding(self.encode(style_img, "style"))

    def stylize(self, content_img, style_img) -> Tensor:
        """Raw (unclamped) stylized image with the content image's shape."""
        return self.decode(self.encode(content_img, "content"), self.style_embedding(style_img))

    __call__ = stylize


def stylize(content_img, style_img, model: SaMam) -> Tensor:
    return model.stylize(content_img, style_img)


def model_summary(cfg: ModelConfig) -> dict[str, int]:
    """Parameter counts per top-level component plus ``total``."""
    out: dict[str, int] = {}
    for name, p in SaMam(cfg).named_parameters():
        top = name.split(".")[0]
        out[top] = out.get(top, 0) + p.size
    out["total"] = sum(out.values())
    return out


def erf_map(model: SaMam, input_size: int, seed: int = 0) -> np.ndarray:
    """Normalized |d(center output pixel)/d(input pixel)| over a random content image.

    The centre pixel's channels are summed before differentiating; the input
    gradient magnitude is summed over RGB. Returns an (H, W) map with max 1.
    """
    if input_size % PATCH:
        raise ShapeError(f"input size {input_size} must be divisible by {PATCH}")
    rng = np.random.default_rng(seed)
    content = Tensor(rng.uniform(size=(3, input_size, input_size)), requires_grad=True)
    style = Tensor(rng.uniform(size=(3, input_size, input_size)))
    out = model.stylize(content, style)
    c = input_size // 2
    out[:, c, c].sum().backward()
    heat = np.abs(content.grad).sum(axis=0)
    for p in model.parameters():
        p.grad = None
    peak = heat.max()
    return heat / peak if peak > 0 else heat
