"""The five training losses and their weighted combination.

All image losses are computed on the [-1, 1] network domain. Everything
is written on torch tensors so the gradients used by the trainer come
from autograd; independent scalar-loop oracles live in the test suite.
"""

import math
from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

from .generator import EXP_CLAMP

# Probability guard for the adversarial log terms.
PROB_EPS = 1e-7
# Floors keeping the PSNR loss finite early in training.
MSE_FLOOR = 1e-10
RANGE_FLOOR = 1e-6


@dataclass
class LossWeights:
    """Weights of the total objective; defaults are the canonical values
    (adversarial 1, L1/SSIM/PSNR 100, weight decay 1e-3, PSNR normalizer 40)."""

    lambda1: float = 1.0
    lambda2: float = 100.0
    lambda3: float = 100.0
    lambda4: float = 100.0
    lambda_wd: float = 0.001
    thresh: float = 40.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and >= 0, got {v}")


@dataclass
class LossBreakdown:
    consistency: float
    adversarial_g: float
    adversarial_d: float
    l1: float
    ssim_loss: float
    psnr_loss: float
    weight_decay: float
    total: float

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check_same_shape(*tensors):
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ValueError(f"shape mismatch: {tuple(shape)} vs {tuple(t.shape)}")


def consistency_loss(haze, dehazed, i_r, j_g):
    """Mean |I - exp(i_r) - J + exp(j_g)|.

    Zero exactly when i_r and j_g are the log transforms of haze and
    dehazed with a shared offset, which is what ties the two taps to the
    scattering model. Taps are clamped before exponentiation.
    """
    _check_same_shape(haze, dehazed, i_r, j_g)
    lo, hi = EXP_CLAMP
    resid = haze - torch.exp(i_r.clamp(lo, hi)) - dehazed + torch.exp(j_g.clamp(lo, hi))
    return resid.abs().mean()


def generator_adversarial_loss(d_fake):
    """Non-saturating generator loss -log D(fake)."""
    d_fake = _as_prob(d_fake)
    return -torch.log(d_fake.clamp(PROB_EPS, 1.0 - PROB_EPS)).mean()


def discriminator_adversarial_loss(d_real, d_fake):
    """-[log D(real) + log(1 - D(fake))]."""
    d_real = _as_prob(d_real).clamp(PROB_EPS, 1.0 - PROB_EPS)
    d_fake = _as_prob(d_fake).clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -(torch.log(d_real) + torch.log(1.0 - d_fake)).mean()


def _as_prob(p):
    return p if isinstance(p, torch.Tensor) else torch.as_tensor(float(p))


def adversarial_losses(d_real, d_fake):
    """Discriminator and (non-saturating) generator losses from the two
    probabilities. Inputs are epsilon-guarded before the logs."""
    return discriminator_adversarial_loss(d_real, d_fake), generator_adversarial_loss(d_fake)


def l1_loss(target, output):
    """Mean absolute difference."""
    _check_same_shape(target, output)
    return (target - output).abs().mean()


def _gaussian_window(win_size, sigma, dtype):
    half = win_size // 2
    x = torch.arange(-half, half + 1, dtype=dtype)
    k = torch.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def ssim(a, b, data_range, win_size=None, sigma=1.5):
    """Mean local SSIM over a Gaussian window, averaged across channels.

    win_size defaults to 11, shrunk to the largest odd size fitting the
    image; passing it explicitly errors when the image is smaller.
    Accepts (C, H, W) or (B, C, H, W).
    """
    _check_same_shape(a, b)
    squeeze = a.dim() == 3
    if squeeze:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    if a.dim() != 4:
        raise ValueError(f"expected (C, H, W) or (B, C, H, W), got {tuple(a.shape)}")
    h, w = a.shape[-2:]
    if win_size is None:
        win_size = min(11, h, w)
        if win_size % 2 == 0:
            win_size -= 1
        if win_size < 1:
            raise ValueError(f"image {h}x{w} too small for SSIM")
    if win_size > h or win_size > w:
        raise ValueError(f"SSIM window {win_size} exceeds image extent {h}x{w}")

    c = a.shape[1]
    k1d = _gaussian_window(win_size, sigma, a.dtype)
    kh = k1d.view(1, 1, -1, 1).expand(c, 1, -1, 1)
    kw = k1d.view(1, 1, 1, -1).expand(c, 1, 1, -1)

    def blur(x):
        return F.conv2d(F.conv2d(x, kh, groups=c), kw, groups=c)

    mu_a, mu_b = blur(a), blur(b)
    s_aa = blur(a * a) - mu_a * mu_a
    s_bb = blur(b * b) - mu_b * mu_b
    s_ab = blur(a * b) - mu_a * mu_b
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    s = ((2 * mu_a * mu_b + c1) * (2 * s_ab + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2)
    )
    return s.mean()


def ssim_loss(target, output, data_range=2.0):
    return 1.0 - ssim(target, output, data_range)


def psnr_value(target, output):
    """10*log10(range^2 / MSE) with the dynamic range taken from the
    TARGET image (max - min), so the value is not symmetric in general."""
    _check_same_shape(target, output)
    mse = ((target - output) ** 2).mean().clamp_min(MSE_FLOOR)
    rng = (target.max() - target.min()).clamp_min(RANGE_FLOOR)
    return 10.0 * torch.log10(rng * rng / mse)


def psnr_loss(target, output, thresh=40.0):
    return 1.0 - psnr_value(target, output) / thresh


def _term_value(x):
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def total_generator_loss(
    consistency,
    adversarial_g,
    l1,
    ssim_l,
    psnr_l,
    weights: LossWeights,
    weight_decay=0.0,
    adversarial_d=0.0,
):
    """Weighted sum of the generator-side terms, returned with its
    breakdown. The weight-decay term is the squared parameter norm and is
    only nonzero in multi-scale training."""
    total = (
        consistency
        + weights.lambda1 * adversarial_g
        + weights.lambda2 * l1
        + weights.lambda3 * ssim_l
        + weights.lambda4 * psnr_l
        + weights.lambda_wd * weight_decay
    )
    breakdown = LossBreakdown(
        consistency=_term_value(consistency),
        adversarial_g=_term_value(adversarial_g),
        adversarial_d=_term_value(adversarial_d),
        l1=_term_value(l1),
        ssim_loss=_term_value(ssim_l),
        psnr_loss=_term_value(psnr_l),
        weight_decay=_term_value(weight_decay),
        total=_term_value(total),
    )
    for name, value in breakdown.as_dict().items():
        if not math.isfinite(value):
            raise ValueError(f"non-finite loss term: {name} = {value}")
    return total, breakdown
