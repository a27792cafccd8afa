"""Image-quality metrics and dataset-level scoring.

All four metrics run on the byte scale [0, 255] (as float64), matching
the conventions of standard evaluation packages: MSE, Euclidean-
normalized RMSE, PSNR with fixed data range 255 and windowed SSIM.
Identical images score PSNR infinity; such rows are kept in the report
but excluded from the mean with the exclusion count noted.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from . import losses
from .dataset import load_pair, to_bytes

log = logging.getLogger(__name__)

METRIC_NAMES = ("mse", "nrmse", "psnr", "ssim")


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def nrmse(a, b):
    """sqrt(MSE) normalized by the reference image's root mean square;
    `a` is the reference."""
    a, b = _check_pair(a, b)
    denom = math.sqrt(float(np.mean(a * a)))
    if denom == 0.0:
        raise ValueError("NRMSE undefined for an all-zero reference image")
    return math.sqrt(mse(a, b)) / denom


def psnr_eval(a, b, data_range=255.0):
    """10*log10(range^2 / MSE); +inf when the images are identical."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / err)


def ssim_eval(a, b, data_range=255.0):
    """Windowed SSIM on the byte scale, same Gaussian kernel as the
    training-side loss."""
    a, b = _check_pair(a, b)
    ta = torch.from_numpy(np.transpose(a, (2, 0, 1)))
    tb = torch.from_numpy(np.transpose(b, (2, 0, 1)))
    return float(losses.ssim(ta, tb, data_range=data_range, win_size=11))


@dataclass
class MetricsReport:
    """Per-image rows (id, mse, nrmse, psnr, ssim) and their dataset
    means. Infinite PSNR rows are excluded from the psnr mean."""

    per_image: list = field(default_factory=list)
    means: dict = field(default_factory=dict)
    n: int = 0
    psnr_excluded: int = 0

    def finalize(self):
        self.n = len(self.per_image)
        if self.n == 0:
            raise ValueError("no images were scored")
        cols = {name: [row[name] for row in self.per_image] for name in METRIC_NAMES}
        finite_psnr = [v for v in cols["psnr"] if math.isfinite(v)]
        self.psnr_excluded = self.n - len(finite_psnr)
        # fsum makes the means independent of row order
        self.means = {
            "mse": math.fsum(cols["mse"]) / self.n,
            "nrmse": math.fsum(cols["nrmse"]) / self.n,
            "psnr": math.fsum(finite_psnr) / len(finite_psnr) if finite_psnr else math.inf,
            "ssim": math.fsum(cols["ssim"]) / self.n,
        }
        return self


def score_pair(image_id, reference_bytes, candidate_bytes):
    a = np.asarray(reference_bytes, dtype=np.float64)
    b = np.asarray(candidate_bytes, dtype=np.float64)
    return {
        "id": image_id,
        "mse": mse(a, b),
        "nrmse": nrmse(a, b),
        "psnr": psnr_eval(a, b),
        "ssim": ssim_eval(a, b),
    }


def evaluate_dataset(dehaze_fn, manifest):
    """Dehaze every manifest pair at native size and score against the
    clear image on the byte scale.

    dehaze_fn(haze_unit_signed, image_id) -> dehazed unit_signed array.
    Unreadable pairs are skipped with a logged id.
    """
    report = MetricsReport()
    for entry in manifest:
        try:
            haze, clear = load_pair(entry)
        except ValueError as exc:
            log.warning("skipping pair %s: %s", entry.id, exc)
            continue
        dehazed = dehaze_fn(haze, entry.id)
        report.per_image.append(score_pair(entry.id, to_bytes(clear), to_bytes(dehazed)))
    return report.finalize()


def baseline_report(manifest):
    """Score the haze images directly against the clear ones (the
    identity 'dehazer'); the bar any trained model must beat."""
    return evaluate_dataset(lambda haze, _id: haze, manifest)
