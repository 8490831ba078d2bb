"""Building blocks of the backbone.

Stem: two stride-2 3x3 convolutions (BN + ReLU after each), total reduction
4x. FfnBlock: residual inverted-bottleneck MLP built from convolutions,
1x1 expand (4x) -> BN -> GeLU -> 3x3 depthwise -> BN -> GeLU -> 1x1 project.
DownsampleLayer: strided 3x3 conv + BN between stages. MdmBlock: a Mamba
token-mixing branch followed by a ConvMLP, each behind its own entry BN and
residual; the mixing branch projects to an inner width of 2x channels, adds
a learned positional map (stored at the stage-native grid and bilinearly
resized elsewhere), applies a depthwise conv + SiLU, then runs the four-path
direction-aware scan mix and projects back.

Convolutions directly followed by a BN carry no bias.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor
from .nn import BatchNorm2d, Conv2d, DepthwiseConv2d, LayerNorm, Module, trunc_normal
from .scanpath import path_table
from .ssm import SsmParams, multi_directional_mix


class Stem(Module):
    def __init__(self, out_channels: int, *, rng: np.random.Generator,
                 dtype=ad.DEFAULT_DTYPE):
        super().__init__()
        mid = max(1, out_channels // 2)
        self.conv1 = Conv2d(3, mid, 3, stride=2, padding=1, bias=False, rng=rng, dtype=dtype)
        self.norm1 = BatchNorm2d(mid, dtype=dtype)
        self.conv2 = Conv2d(mid, out_channels, 3, stride=2, padding=1, bias=False,
                            rng=rng, dtype=dtype)
        self.norm2 = BatchNorm2d(out_channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeMismatch("stem", f"expected (B, 3, H, W) images, got {x.shape}")
        x = ad.relu(self.norm1(self.conv1(x)))
        return ad.relu(self.norm2(self.conv2(x)))


class ConvMlp(Module):
    """The FFN transform without its residual: expand, depthwise, project."""

    def __init__(self, channels: int, *, expansion: int = 4,
                 rng: np.random.Generator, dtype=ad.DEFAULT_DTYPE):
        super().__init__()
        hidden = channels * expansion
        self.expand = Conv2d(channels, hidden, 1, bias=False, rng=rng, dtype=dtype)
        self.norm1 = BatchNorm2d(hidden, dtype=dtype)
        self.dwconv = DepthwiseConv2d(hidden, 3, padding=1, bias=False, rng=rng, dtype=dtype)
        self.norm2 = BatchNorm2d(hidden, dtype=dtype)
        self.project = Conv2d(hidden, channels, 1, bias=True, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = ad.gelu(self.norm1(self.expand(x)))
        x = ad.gelu(self.norm2(self.dwconv(x)))
        return self.project(x)


class FfnBlock(Module):
    def __init__(self, channels: int, *, expansion: int = 4,
                 rng: np.random.Generator, dtype=ad.DEFAULT_DTYPE):
        super().__init__()
        self.mlp = ConvMlp(channels, expansion=expansion, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ad.add(x, self.mlp(x))


class DownsampleLayer(Module):
    def __init__(self, in_channels: int, out_channels: int, *,
                 rng: np.random.Generator, dtype=ad.DEFAULT_DTYPE):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, 3, stride=2, padding=1, bias=False,
                           rng=rng, dtype=dtype)
        self.norm = BatchNorm2d(out_channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(self.conv(x))


class MambaBranch(Module):
    """Token mixing: 1x1 in-projection to 2x channels, positional map,
    depthwise conv + SiLU, four-path direction-aware scan mix with a channel
    layer norm, 1x1 out-projection + BN."""

    def __init__(self, channels: int, native_grid: tuple[int, int], *, n_state: int = 16,
                 rng: np.random.Generator, dtype=ad.DEFAULT_DTYPE):
        super().__init__()
        d_inner = 2 * channels
        gh, gw = native_grid
        if gh < 1 or gw < 1:
            raise ValueError(f"native grid must be positive, got {native_grid}")
        self.d_inner = d_inner
        self.in_proj = Conv2d(channels, d_inner, 1, bias=True, rng=rng, dtype=dtype)
        self.pos_table = Tensor(trunc_normal(rng, (d_inner, gh, gw), dtype=dtype),
                                requires_grad=True, dtype=dtype)
        self.dwconv = DepthwiseConv2d(d_inner, 3, padding=1, bias=True, rng=rng, dtype=dtype)
        self.ssm = SsmParams(d_inner, n_state, rng=rng, dtype=dtype)
        self.mix_norm = LayerNorm(d_inner, dtype=dtype)
        self.out_proj = Conv2d(d_inner, channels, 1, bias=False, rng=rng, dtype=dtype)
        self.out_norm = BatchNorm2d(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        z = self.in_proj(x)
        pos = ad.bilinear_resize(self.pos_table, h, w)
        z = ad.add_map(z, pos)
        z = ad.silu(self.dwconv(z))
        z = multi_directional_mix(z, self.ssm, path_table(h, w),
                                  self.mix_norm.gamma, self.mix_norm.beta,
                                  eps=self.mix_norm.eps)
        return self.out_norm(self.out_proj(z))


class MdmBlock(Module):
    """Mamba mixing then ConvMLP, each residual with its own entry BN:
    x1 = x + mamba(BN(x)); out = x1 + mlp(BN(x1))."""

    def __init__(self, channels: int, native_grid: tuple[int, int], *, n_state: int = 16,
                 expansion: int = 4, rng: np.random.Generator, dtype=ad.DEFAULT_DTYPE):
        super().__init__()
        self.norm1 = BatchNorm2d(channels, dtype=dtype)
        self.mamba = MambaBranch(channels, native_grid, n_state=n_state, rng=rng, dtype=dtype)
        self.norm2 = BatchNorm2d(channels, dtype=dtype)
        self.mlp = ConvMlp(channels, expansion=expansion, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = ad.add(x, self.mamba(self.norm1(x)))
        return ad.add(x, self.mlp(self.norm2(x)))
