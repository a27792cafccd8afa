"""Conditional discriminator with spatial pyramid pooling.

Judges (haze condition, candidate) pairs stacked into a 6-channel input:
three 5x5 stride-2 convolutions, one 5x5 stride-1 convolution, then an
SPP layer that pools any spatial size into a fixed-length vector, and a
linear head producing a real-vs-generated logit. With pyramid levels
1..4 the head input width is channels * (1 + 4 + 9 + 16) = 30 * C
regardless of image size, which is what makes adversarial training
input-size flexible.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .generator import FeatureMapNorm, init_parameters


def spp_pool(features, levels):
    """Pyramid max pooling to a fixed-length vector.

    For each level n in 1..levels the map is split into an n x n grid
    with floor/ceil proportional cell boundaries and each cell is
    max-pooled. Accepts (C, h, w) or (B, C, h, w); returns (C * sum n^2,)
    or (B, C * sum n^2).
    """
    squeeze = features.dim() == 3
    x = features.unsqueeze(0) if squeeze else features
    if x.dim() != 4:
        raise ValueError(f"expected (C, h, w) or (B, C, h, w), got shape {tuple(features.shape)}")
    h, w = x.shape[-2:]
    if h < levels or w < levels:
        raise ValueError(
            f"feature map {h}x{w} too small for {levels} pyramid levels; "
            f"need at least {levels}x{levels} so every grid cell is nonempty"
        )
    parts = []
    for n in range(1, levels + 1):
        parts.append(F.adaptive_max_pool2d(x, n).flatten(start_dim=1))
    out = torch.cat(parts, dim=1)
    return out.squeeze(0) if squeeze else out


@dataclass
class DiscriminatorSpec:
    conv_channels: tuple = (64, 128, 256, 512)
    spp_levels: int = 4

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if len(self.conv_channels) != 4 or any(c < 1 for c in self.conv_channels):
            raise ValueError(f"conv_channels must be 4 positive counts, got {self.conv_channels}")
        if self.spp_levels < 1:
            raise ValueError(f"spp_levels must be >= 1, got {self.spp_levels}")

    @property
    def head_width(self):
        return self.conv_channels[-1] * sum(n * n for n in range(1, self.spp_levels + 1))

    @property
    def min_input_side(self):
        # Three stride-2 convs take n to ceil(n/8); the post-conv map must
        # be at least spp_levels on each side.
        return 8 * (self.spp_levels - 1) + 1


class SppDiscriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec, leak=0.2):
        super().__init__()
        self.spec = spec
        self.leak = leak
        c = spec.conv_channels
        ins = (6, c[0], c[1], c[2])
        strides = (2, 2, 2, 1)
        self.convs = nn.ModuleList(
            nn.Conv2d(cin, cout, 5, stride=s, padding=2) for cin, cout, s in zip(ins, c, strides)
        )
        self.norms = nn.ModuleList(FeatureMapNorm(cout) for cout in c)
        self.head = nn.Linear(spec.head_width, 1)

    def forward(self, condition, candidate):
        """Logit that `candidate` is the real clear image for `condition`."""
        if condition.shape != candidate.shape:
            raise ValueError(
                f"condition shape {tuple(condition.shape)} != candidate shape {tuple(candidate.shape)}"
            )
        h, w = condition.shape[-2:]
        m = self.spec.min_input_side
        if h < m or w < m:
            raise ValueError(
                f"input {h}x{w} below discriminator minimum {m}x{m} "
                f"(post-conv map must be >= {self.spec.spp_levels} per side)"
            )
        x = torch.cat([condition, candidate], dim=1)
        for conv, norm in zip(self.convs, self.norms):
            x = F.leaky_relu(norm(conv(x)), self.leak)
        v = spp_pool(x, self.spec.spp_levels)
        return self.head(v).squeeze(-1)


def build_discriminator(spec: DiscriminatorSpec, seed=0):
    return init_parameters(SppDiscriminator(spec), seed)


def discriminate(model, condition, candidate):
    """Probability in (0, 1) that the candidate is real, per the cGAN
    objective (sigmoid of the head logit)."""
    return torch.sigmoid(model(condition, candidate))
