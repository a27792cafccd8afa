"""UR-Net-K generator: an encoder-decoder that maps a hazy image of any
size to a haze-free image of the identical size.

The encoder is a chain of 5x5 stride-2 convolutions, so the feature map
at level i has spatial size (ceil(h/2^i), ceil(w/2^i)). The decoder is K
U-type residual units. Each unit deconvolves back up with the output
size forced to its encoder mate's exact (h, w), concatenates the mate as
a skip connection, reduces channels back down with a 3x3 convolution and
subtracts the result from the mate (residual learning). A final 5x5
deconvolution produces the 3-channel pre-tanh output map.

Conditional noise comes from dropout after the three deepest
deconvolutions, active at both training and test time, drawn from an
explicit seeded source so forward passes are reproducible.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

# Clamp applied to the image-shaped taps before exponentiation; the taps
# are unconstrained conv outputs and exp would overflow otherwise.
EXP_CLAMP = (-20.0, 10.0)


def default_encoder_channels(depth):
    """64, 128, 256 then 512s, one entry per encoder level."""
    base = [64, 128, 256, 512]
    return [base[i] if i < len(base) else 512 for i in range(depth)]


class FeatureMapNorm(nn.Module):
    """Per-feature-map normalization with learned affine.

    Batch normalization at batch size 1 degenerates to normalizing each
    channel over its own spatial extent, which is what this computes.
    Unlike nn.InstanceNorm2d it accepts 1x1 maps (the deep levels of the
    ceil-halving ladder), where the centered value is 0 and the output
    is just the bias.
    """

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mean = x.mean(dim=(2, 3), keepdim=True)
        var = x.var(dim=(2, 3), unbiased=False, keepdim=True)
        xhat = (x - mean) / torch.sqrt(var + self.eps)
        w = self.weight.view(1, -1, 1, 1)
        b = self.bias.view(1, -1, 1, 1)
        return xhat * w + b


@dataclass
class LayerShape:
    level: int
    height: int
    width: int
    channels: int | None = None


def layer_size(input_h, input_w, level):
    """Spatial size of encoder level `level` for an input of (h, w).

    Each 5x5 stride-2 convolution (padding 2) takes n to ceil(n/2), so
    level i sits at (ceil(h/2^i), ceil(w/2^i)).
    """
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    if input_h < 1 or input_w < 1:
        raise ValueError(f"input dims must be >= 1, got {input_h}x{input_w}")
    return LayerShape(
        level=level,
        height=math.ceil(input_h / 2**level),
        width=math.ceil(input_w / 2**level),
    )


@dataclass
class GeneratorSpec:
    """Architecture of a UR-Net-K generator.

    depth_k is the number of U-type residual units; the encoder has
    depth_k + 1 convolutions. star=True omits the subtraction in the last
    unit. dropout_sites lists the decoder deconvolutions (indexed by the
    encoder level they consume) that carry conditional noise; None means
    the three deepest.
    """

    depth_k: int = 7
    star: bool = False
    encoder_channels: list = None
    dropout_sites: tuple = None
    dropout_rate: float = 0.5
    leak: float = 0.2

    def __post_init__(self):
        if self.depth_k < 1:
            raise ValueError(f"depth_k must be >= 1, got {self.depth_k}")
        if self.encoder_channels is None:
            self.encoder_channels = default_encoder_channels(self.encoder_depth)
        self.encoder_channels = [int(c) for c in self.encoder_channels]
        if len(self.encoder_channels) != self.encoder_depth:
            raise ValueError(
                f"encoder_channels must have {self.encoder_depth} entries for "
                f"depth_k={self.depth_k}, got {len(self.encoder_channels)}"
            )
        if any(c < 1 for c in self.encoder_channels):
            raise ValueError("encoder channel counts must be >= 1")
        if self.dropout_sites is None:
            deepest = range(self.encoder_depth, max(self.encoder_depth - 3, 1), -1)
            self.dropout_sites = tuple(deepest)
        self.dropout_sites = tuple(sorted(set(int(s) for s in self.dropout_sites)))
        for s in self.dropout_sites:
            if not 2 <= s <= self.encoder_depth:
                raise ValueError(
                    f"dropout site {s} outside decoder range 2..{self.encoder_depth}"
                )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def encoder_depth(self):
        return self.depth_k + 1


class NoiseSource:
    """Seeded source of the dropout masks used as conditional noise.

    Each call to .generator() restarts the stream, so the same source
    replayed through the same forward pass gives bitwise-equal results.
    """

    def __init__(self, seed):
        self.seed = int(seed) % 2**63

    def generator(self):
        g = torch.Generator()
        g.manual_seed(self.seed)
        return g

    def derive(self, offset):
        return NoiseSource(self.seed * 1000003 + offset)


def seeded_dropout(x, rate, gen):
    """Inverted dropout with an explicit torch.Generator."""
    if rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (torch.rand(x.shape, generator=gen, dtype=x.dtype) < keep).to(x.dtype)
    return x * mask / keep


@dataclass
class GeneratorOutput:
    """Forward-pass products: the dehazed image plus the image-shaped taps
    (i_r from the input, j_g pre-tanh) and their residual m = i_r - j_g."""

    dehazed: torch.Tensor
    i_r: torch.Tensor
    j_g: torch.Tensor
    m: torch.Tensor


class UrNetGenerator(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        ch = spec.encoder_channels
        depth = spec.encoder_depth

        # Learned log-domain tap on the raw input; linear so it can
        # represent the (negative-valued) log transform.
        self.input_tap = nn.Conv2d(3, 3, 3, stride=1, padding=1)

        self.enc_convs = nn.ModuleList()
        self.enc_norms = nn.ModuleList()
        for i in range(depth):
            cin = 3 if i == 0 else ch[i - 1]
            self.enc_convs.append(nn.Conv2d(cin, ch[i], 5, stride=2, padding=2))
            self.enc_norms.append(FeatureMapNorm(ch[i]))

        # Unit consuming level i: deconv to level i-1 (mate channels),
        # then reduce the concatenation back to the mate's width.
        self.deconvs = nn.ModuleList()
        self.deconv_norms = nn.ModuleList()
        self.reduce_convs = nn.ModuleList()
        self.reduce_norms = nn.ModuleList()
        for i in range(depth, 1, -1):
            cout = ch[i - 2]
            self.deconvs.append(nn.ConvTranspose2d(ch[i - 1], cout, 5, stride=2, padding=2))
            self.deconv_norms.append(FeatureMapNorm(cout))
            self.reduce_convs.append(nn.Conv2d(2 * cout, cout, 3, stride=1, padding=1))
            self.reduce_norms.append(FeatureMapNorm(cout))

        # Final size-targeted deconv to the full-resolution pre-tanh map.
        # No normalization here: tanh consumes the raw logits.
        self.out_deconv = nn.ConvTranspose2d(ch[0], 3, 5, stride=2, padding=2)

    def forward(self, x, noise: NoiseSource | None = None):
        """Run the generator on a (B, 3, H, W) tensor on the [-1, 1] scale."""
        if not torch.isfinite(x).all():
            raise ValueError("generator input contains non-finite values")
        spec = self.spec
        depth = spec.encoder_depth
        gen = noise.generator() if noise is not None else None

        i_r = self.input_tap(x)

        feats = [x]  # feats[i] = encoder output at level i
        h = x
        for conv, norm in zip(self.enc_convs, self.enc_norms):
            h = F.leaky_relu(norm(conv(h)), spec.leak)
            feats.append(h)

        d = feats[depth]
        for k, level in enumerate(range(depth, 1, -1)):
            mate = feats[level - 1]
            up = self.deconvs[k](d, output_size=mate.shape[-2:])
            up = F.leaky_relu(self.deconv_norms[k](up), spec.leak)
            if level in spec.dropout_sites:
                if gen is not None:
                    up = seeded_dropout(up, spec.dropout_rate, gen)
                else:
                    up = F.dropout(up, spec.dropout_rate, training=True)
            r = torch.cat([up, mate], dim=1)
            r = F.leaky_relu(self.reduce_norms[k](self.reduce_convs[k](r)), spec.leak)
            last_unit = level == 2
            if last_unit and spec.star:
                d = r
            else:
                d = mate - r

        j_g = self.out_deconv(d, output_size=x.shape[-2:])
        dehazed = torch.tanh(j_g)
        return GeneratorOutput(dehazed=dehazed, i_r=i_r, j_g=j_g, m=i_r - j_g)


def init_parameters(model, seed):
    """Gaussian(0, 0.02) kernels, zero biases, identity norms; fully
    determined by the seed regardless of global RNG state."""
    g = torch.Generator().manual_seed(int(seed) % 2**63)
    for m in model.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            m.weight.data.normal_(0.0, 0.02, generator=g)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, FeatureMapNorm):
            m.weight.data.fill_(1.0)
            m.bias.data.zero_()
    return model


def build_generator(spec: GeneratorSpec, seed=0):
    return init_parameters(UrNetGenerator(spec), seed)


def reconstruct_from_haze_map(haze, i_r, m, clamp=EXP_CLAMP):
    """Rebuild the dehazed image from a haze map via the log-residual
    identity: with j_g = i_r - m, J = I - (exp(i_r) - exp(j_g)).

    Shared by the multi-scale fusion head, which only has a fused haze
    map, no direct network output, at the native scale.
    """
    j_g = i_r - m
    lo, hi = clamp
    recon = haze - (torch.exp(i_r.clamp(lo, hi)) - torch.exp(j_g.clamp(lo, hi)))
    return recon, j_g
