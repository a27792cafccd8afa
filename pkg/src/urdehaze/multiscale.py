"""Gaussian-pyramid fusion cGAN: three star generators at scales 1, 1/2
and 1/4 whose haze maps are fused by a learned 1x1 convolution.

The fused haze map is turned back into an image through the log-residual
identity shared with the single-scale reconstruction. Each of the four
outputs (three scales plus the fusion) gets its own discriminator with a
disjoint parameter set, and the single-scale objective is applied to
every (output, target, discriminator) triple.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import losses
from .discriminator import discriminate
from .generator import (
    GeneratorSpec,
    NoiseSource,
    UrNetGenerator,
    default_encoder_channels,
    init_parameters,
    reconstruct_from_haze_map,
)

SCALE_DEPTHS = (7, 6, 5)
SCALE_FACTORS = (1, 2, 4)


def bicubic_resize(x, size):
    """Bicubic resize of a (B, C, H, W) tensor to an exact (h, w)."""
    return F.interpolate(x, size=size, mode="bicubic", align_corners=False)


@dataclass
class PyramidInput:
    haze1: torch.Tensor
    haze2: torch.Tensor
    haze3: torch.Tensor

    def __iter__(self):
        return iter((self.haze1, self.haze2, self.haze3))


def build_pyramid(image):
    """Three-scale stack (native, ceil-half, ceil-quarter) via bicubic
    downsampling of a (B, C, H, W) tensor."""
    h, w = image.shape[-2:]
    if h < 4 or w < 4:
        raise ValueError(f"input {h}x{w} too small for a 3-level pyramid (need >= 4x4)")
    half = bicubic_resize(image, (math.ceil(h / 2), math.ceil(w / 2)))
    quarter = bicubic_resize(image, (math.ceil(h / 4), math.ceil(w / 4)))
    return PyramidInput(haze1=image, haze2=half, haze3=quarter)


@dataclass
class FusionOutputs:
    """Per-scale generator outputs plus the fused haze map and the image
    reconstructed from it at native scale."""

    scales: tuple  # three GeneratorOutput: native, half, quarter
    m_fusion: torch.Tensor
    j_g_fusion: torch.Tensor
    hf_fusion: torch.Tensor

    @property
    def hf1(self):
        return self.scales[0].dehazed

    @property
    def hf2(self):
        return self.scales[1].dehazed

    @property
    def hf3(self):
        return self.scales[2].dehazed

    @property
    def m1(self):
        return self.scales[0].m

    @property
    def m2(self):
        return self.scales[1].m

    @property
    def m3(self):
        return self.scales[2].m


def multiscale_specs(channel_scale=1.0, dropout_rate=0.5):
    """Star generator specs at depths 7/6/5 with optionally scaled widths."""
    specs = []
    for depth in SCALE_DEPTHS:
        chans = [max(1, int(c * channel_scale)) for c in default_encoder_channels(depth + 1)]
        specs.append(
            GeneratorSpec(depth_k=depth, star=True, encoder_channels=chans, dropout_rate=dropout_rate)
        )
    return specs


class MultiScaleGenerator(nn.Module):
    """UR-Net-7*, UR-Net-6* and UR-Net-5* plus the 1x1 fusion conv."""

    def __init__(self, specs=None):
        super().__init__()
        if specs is None:
            specs = multiscale_specs()
        if tuple(s.depth_k for s in specs) != SCALE_DEPTHS or not all(s.star for s in specs):
            raise ValueError("multiscale requires star generators at depths 7/6/5")
        self.specs = list(specs)
        self.gen1 = UrNetGenerator(specs[0])
        self.gen2 = UrNetGenerator(specs[1])
        self.gen3 = UrNetGenerator(specs[2])
        self.fusion = nn.Conv2d(9, 3, 1)
        init_uniform_fusion(self.fusion)

    @property
    def generators(self):
        return (self.gen1, self.gen2, self.gen3)

    def forward(self, pyramid: PyramidInput, noise: NoiseSource | None = None):
        outs = []
        for k, (gen, haze_k) in enumerate(zip(self.generators, pyramid)):
            n = noise.derive(k) if noise is not None else None
            outs.append(gen(haze_k, n))
        native = pyramid.haze1.shape[-2:]
        stacked = torch.cat(
            [outs[0].m, bicubic_resize(outs[1].m, native), bicubic_resize(outs[2].m, native)],
            dim=1,
        )
        m_fusion = self.fusion(stacked)
        hf_fusion, j_g_fusion = reconstruct_from_haze_map(pyramid.haze1, outs[0].i_r, m_fusion)
        return FusionOutputs(
            scales=tuple(outs), m_fusion=m_fusion, j_g_fusion=j_g_fusion, hf_fusion=hf_fusion
        )


def init_uniform_fusion(conv):
    """Start the fusion conv as an unbiased average of the three maps."""
    with torch.no_grad():
        conv.weight.zero_()
        for c in range(3):
            for s in range(3):
                conv.weight[c, c + 3 * s, 0, 0] = 1.0 / 3.0
        conv.bias.zero_()
    return conv


def init_select_scale(conv, scale_index):
    """Fix the fusion conv to pass exactly one scale's haze map through."""
    with torch.no_grad():
        conv.weight.zero_()
        for c in range(3):
            conv.weight[c, c + 3 * scale_index, 0, 0] = 1.0
        conv.bias.zero_()
    return conv


def build_multiscale_generator(channel_scale=1.0, seed=0, dropout_rate=0.5):
    model = MultiScaleGenerator(multiscale_specs(channel_scale, dropout_rate))
    init_parameters(model, seed)
    init_uniform_fusion(model.fusion)
    return model


def _loss_triples(outputs: FusionOutputs, haze_pyr: PyramidInput, clear_pyr: PyramidInput):
    s = outputs.scales
    return [
        (haze_pyr.haze1, clear_pyr.haze1, outputs.hf1, s[0].i_r, s[0].j_g),
        (haze_pyr.haze2, clear_pyr.haze2, outputs.hf2, s[1].i_r, s[1].j_g),
        (haze_pyr.haze3, clear_pyr.haze3, outputs.hf3, s[2].i_r, s[2].j_g),
        (haze_pyr.haze1, clear_pyr.haze1, outputs.hf_fusion, s[0].i_r, outputs.j_g_fusion),
    ]


def multiscale_loss(outputs, haze_pyr, clear_pyr, discriminators, weights, weight_decay=0.0):
    """Generator-side objective summed over the four triples, plus the
    summed discriminator loss. The weight-decay term enters once.

    Returns (g_total, d_total, per-triple LossBreakdowns).
    """
    if len(discriminators) != 4:
        raise ValueError(f"expected 4 discriminators, got {len(discriminators)}")
    g_total = None
    d_total = None
    breakdowns = []
    for k, (haze_k, clear_k, out_k, i_r_k, j_g_k) in enumerate(
        _loss_triples(outputs, haze_pyr, clear_pyr)
    ):
        d_fake = discriminate(discriminators[k], haze_k, out_k)
        d_real = discriminate(discriminators[k], haze_k, clear_k)
        d_loss = losses.discriminator_adversarial_loss(d_real, d_fake.detach())
        cons = losses.consistency_loss(haze_k, out_k, i_r_k, j_g_k)
        g_adv = losses.generator_adversarial_loss(d_fake)
        l1 = losses.l1_loss(clear_k, out_k)
        ssim_l = losses.ssim_loss(clear_k, out_k)
        psnr_l = losses.psnr_loss(clear_k, out_k, weights.thresh)
        wd = weight_decay if k == 0 else 0.0
        t, bd = losses.total_generator_loss(
            cons, g_adv, l1, ssim_l, psnr_l, weights, weight_decay=wd, adversarial_d=d_loss
        )
        g_total = t if g_total is None else g_total + t
        d_total = d_loss if d_total is None else d_total + d_loss
        breakdowns.append(bd)
    return g_total, d_total, breakdowns
