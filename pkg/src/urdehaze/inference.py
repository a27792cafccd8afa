"""Numpy-in/numpy-out inference wrappers around the generators.

Test-time dropout is part of the model, so every wrapper takes a seed;
per-image seeds are derived from the image id, keeping batch runs
reproducible file by file.
"""

import zlib

import numpy as np
import torch

from .dataset import image_to_tensor, tensor_to_image
from .generator import NoiseSource
from .multiscale import MultiScaleGenerator, build_pyramid


def image_seed(base_seed, image_id):
    return (int(base_seed) + zlib.crc32(str(image_id).encode())) % 2**63


def run_generator(model, haze_unit, seed=0):
    """Full forward pass on an H x W x 3 unit-signed array; returns the
    (dehazed, i_r, j_g, m) arrays at native size."""
    noise = NoiseSource(seed)
    x = image_to_tensor(haze_unit)
    with torch.no_grad():
        if isinstance(model, MultiScaleGenerator):
            outs = model(build_pyramid(x), noise)
            return (
                tensor_to_image(outs.hf_fusion),
                tensor_to_image(outs.scales[0].i_r),
                tensor_to_image(outs.j_g_fusion),
                tensor_to_image(outs.m_fusion),
            )
        out = model(x, noise)
        return (
            tensor_to_image(out.dehazed),
            tensor_to_image(out.i_r),
            tensor_to_image(out.j_g),
            tensor_to_image(out.m),
        )


def dehaze_array(model, haze_unit, seed=0):
    return run_generator(model, haze_unit, seed)[0]


def hazemap_array(model, haze_unit, seed=0):
    return run_generator(model, haze_unit, seed)[3]


def make_dehaze_fn(model, base_seed=0):
    """Adapter for evaluation.evaluate_dataset: derives a stable per-image
    seed from the id."""

    def fn(haze_unit, image_id):
        return dehaze_array(model, haze_unit, image_seed(base_seed, image_id))

    return fn


def hazemap_to_bytes(m):
    """Visualize a haze map with the output denormalization: shift by 1,
    scale by the byte midpoint, clamp and round. A zero map renders as
    uniform gray 128, -1 as black, +1 as white."""
    v = (np.asarray(m, dtype=np.float64) + 1.0) * 127.5
    return np.floor(np.clip(v, 0.0, 255.0) + 0.5).astype(np.uint8)
