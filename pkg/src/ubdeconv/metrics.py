"""Image quality metrics."""

import numpy as np

from ._validation import DimensionError

ISNR_CAP_DB = 300.0


def rmse(a, b):
    """Root-mean-square difference over every pixel (and channel) of two images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"rmse needs equal shapes, got {a.shape} and {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def central(image, b):
    """Crop a width-``b`` frame from the last two axes."""
    if b == 0:
        return np.asarray(image)
    return np.asarray(image)[..., b:-b, b:-b]


def isnr(observed, estimate, truth):
    """Improvement in SNR (dB) of ``estimate`` over ``observed``, both against ``truth``.

    Arrays must already be cropped to the same region.  A perfect estimate
    is reported as :data:`ISNR_CAP_DB`.
    """
    observed = np.asarray(observed, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if not observed.shape == estimate.shape == truth.shape:
        raise DimensionError("isnr needs equally shaped observed, estimate and truth")
    num = np.sum((observed - truth) ** 2)
    den = np.sum((estimate - truth) ** 2)
    if den == 0:
        return ISNR_CAP_DB
    if num == 0:
        raise ZeroDivisionError("observation equals the truth; ISNR is undefined")
    return float(min(10.0 * np.log10(num / den), ISNR_CAP_DB))
