"""Atmospheric scattering model: haze synthesis, inversion, residual maps.

The physical model is
    I(x) = J(x) * t(x) + alpha * (1 - t(x))
where I is the hazy image, J the clear scene radiance, t the medium
transmission map and alpha the global atmospheric light. Transmission
decays exponentially with scene depth, t(x) = exp(-beta * d(x)).

All functions here operate on float64 numpy arrays. Images are H x W x 3
on the [0, 1] synthesis scale; transmission and depth maps are H x W.
Everything is pure, so concurrent callers need no locking.
"""

from dataclasses import dataclass

import numpy as np

# Transmission floor for inversion: 1/t amplifies sensor noise and any
# numeric error, so t below this is rejected rather than clamped.
T_MIN = 1e-2


@dataclass
class ScatteringParams:
    """Global atmospheric light (per RGB channel, on (0, 1]) and scattering
    coefficient beta >= 0."""

    alpha: np.ndarray
    beta: float = 0.0

    def __post_init__(self):
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=np.float64))
        if self.alpha.size == 1:
            self.alpha = np.repeat(self.alpha, 3)
        if self.alpha.shape != (3,):
            raise ValueError(f"alpha must be scalar or length 3, got shape {self.alpha.shape}")
        if not np.all(np.isfinite(self.alpha)) or np.any(self.alpha <= 0) or np.any(self.alpha > 1):
            raise ValueError(f"alpha must lie in (0, 1] per channel, got {self.alpha}")
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ValueError(f"beta must be finite and >= 0, got {self.beta}")


@dataclass
class EstimationErrors:
    """Mean relative errors of the transmission and atmospheric-light
    estimates feeding an inversion."""

    delta_t: float
    delta_alpha: float

    def __post_init__(self):
        for name in ("delta_t", "delta_alpha"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    @property
    def total(self) -> float:
        return accumulate_error(self.delta_t, self.delta_alpha)


def _check_image(img, name="image"):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{name} must be H x W x 3, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name} contains non-finite values")
    return img


def _check_transmission(t, spatial_shape):
    t = np.asarray(t, dtype=np.float64)
    if t.shape != spatial_shape:
        raise ValueError(
            f"transmission shape {t.shape} does not match image spatial shape {spatial_shape}"
        )
    if np.any(t <= 0) or np.any(t > 1):
        raise ValueError("transmission values must lie in (0, 1]")
    return t


def apply_scattering(clear, t, params: ScatteringParams):
    """Synthesize a hazy image: I = J*t + alpha*(1 - t).

    `clear` is H x W x 3 on [0, 1]; `t` is H x W in (0, 1].
    """
    clear = _check_image(clear, "clear")
    t = _check_transmission(t, clear.shape[:2])
    t3 = t[:, :, None]
    return clear * t3 + params.alpha * (1.0 - t3)


def invert_scattering(haze, t, params: ScatteringParams):
    """Recover the clear image: J = I/t + alpha*(1 - 1/t).

    Any t below T_MIN is rejected: dividing by it amplifies estimation
    error without bound.
    """
    haze = _check_image(haze, "haze")
    t = _check_transmission(t, haze.shape[:2])
    if np.any(t < T_MIN):
        raise ValueError(
            f"transmission below the inversion floor t_min={T_MIN}: min t = {t.min():.3g}"
        )
    inv = 1.0 / t[:, :, None]
    return haze * inv + params.alpha * (1.0 - inv)


def transmission_from_depth(depth, beta):
    """t(x) = exp(-beta * d(x)); output always in (0, 1] for beta, d >= 0."""
    depth = np.asarray(depth, dtype=np.float64)
    if not np.isfinite(beta) or beta < 0:
        raise ValueError(f"beta must be finite and >= 0, got {beta}")
    if np.any(depth < 0) or not np.all(np.isfinite(depth)):
        raise ValueError("depth must be finite and nonnegative")
    return np.exp(-beta * depth)


def accumulate_error(delta_t, delta_alpha):
    """Total mean relative error of a two-parameter inversion.

    Estimating t and alpha independently with relative errors d1 and d2
    compounds to d1 + d2 + d1*d2 in the recovered image.
    """
    if delta_t < 0 or delta_alpha < 0:
        raise ValueError("estimation errors must be nonnegative")
    return delta_t + delta_alpha + delta_t * delta_alpha


def haze_map(i_r, j_g):
    """Log-domain haze residual M = I^r - J^g.

    Under the log view of the scattering model the hazy image splits
    into the clear image plus a content-dependent additive residual;
    this computes that residual from the two image-shaped taps.
    """
    i_r = np.asarray(i_r, dtype=np.float64)
    j_g = np.asarray(j_g, dtype=np.float64)
    if i_r.shape != j_g.shape:
        raise ValueError(f"shape mismatch: {i_r.shape} vs {j_g.shape}")
    return i_r - j_g


@dataclass
class DepthConfig:
    """Synthetic depth field: a constant base, optionally multiplied by a
    linear top-to-bottom ramp (sky far, ground near)."""

    constant: float = 1.0
    vertical_ramp: bool = False
    ramp_range: tuple = (1.5, 0.5)

    def build(self, height, width):
        d = np.full((height, width), float(self.constant), dtype=np.float64)
        if self.vertical_ramp:
            hi, lo = self.ramp_range
            ramp = np.linspace(hi, lo, height)[:, None]
            d = d * ramp
        return d


def synthesize_pair(clear, params: ScatteringParams, depth=None):
    """Build one (haze, clear) training pair from a clear image.

    When no depth map is given a unit constant depth is used, so the haze
    density is controlled entirely by params.beta.
    """
    clear = _check_image(clear, "clear")
    if depth is None:
        depth = np.ones(clear.shape[:2], dtype=np.float64)
    else:
        depth = np.asarray(depth, dtype=np.float64)
        if depth.shape != clear.shape[:2]:
            raise ValueError(
                f"depth shape {depth.shape} does not match image spatial shape {clear.shape[:2]}"
            )
    t = transmission_from_depth(depth, params.beta)
    return apply_scattering(clear, t, params), clear
