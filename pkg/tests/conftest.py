import sys
from pathlib import Path

import numpy as np
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(2)


def synthetic_clear(rng, h, w):
    """Structured pseudo-photo on [0, 1]: smooth color gradients plus a
    few rectangles, so a network has something learnable."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= max(h - 1, 1)
    xx /= max(w - 1, 1)
    img = np.zeros((h, w, 3))
    for c in range(3):
        fx, fy = rng.uniform(0.5, 2.0, 2)
        img[..., c] = 0.55 + 0.25 * np.sin(2 * np.pi * (fx * xx + fy * yy + rng.uniform()))
    for _ in range(4):
        r0 = int(rng.integers(0, max(h // 2, 1)))
        c0 = int(rng.integers(0, max(w // 2, 1)))
        r1 = r0 + int(rng.integers(max(h // 8, 1), max(h // 2, 2)))
        c1 = c0 + int(rng.integers(max(w // 8, 1), max(w // 2, 2)))
        img[r0:r1, c0:c1] += rng.uniform(-0.35, 0.35, 3)
    return np.clip(img, 0.0, 1.0)


def synthetic_pair_bytes(rng, h, w, beta_range=(0.8, 1.6), alpha_range=(0.8, 1.0)):
    """One (haze, clear) pair as uint8 arrays, hazed via the scattering
    model with per-pair alpha/beta."""
    from urdehaze.haze_model import ScatteringParams, synthesize_pair

    clear01 = synthetic_clear(rng, h, w)
    params = ScatteringParams(
        alpha=float(rng.uniform(*alpha_range)), beta=float(rng.uniform(*beta_range))
    )
    haze01, _ = synthesize_pair(clear01, params)
    to8 = lambda x: np.floor(np.clip(x, 0, 1) * 255.0 + 0.5).astype(np.uint8)
    return to8(haze01), to8(clear01)


def tiny_generator_spec(depth_k=7, scale=8):
    from urdehaze.generator import GeneratorSpec, default_encoder_channels

    chans = [max(1, c // scale) for c in default_encoder_channels(depth_k + 1)]
    return GeneratorSpec(depth_k=depth_k, encoder_channels=chans)


def tiny_discriminator_spec():
    from urdehaze.discriminator import DiscriminatorSpec

    return DiscriminatorSpec(conv_channels=(8, 16, 32, 64))
