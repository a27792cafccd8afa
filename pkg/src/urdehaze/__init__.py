"""Input-size flexible cGAN single image dehazing.

Haze synthesis via the atmospheric scattering model, a U-type residual
generator (UR-Net-K) that accepts any input size, an SPP-based
discriminator, five-term loss training, a multi-scale fusion variant,
and image-quality evaluation with report/plot emission.
"""

__version__ = "0.1.0"
