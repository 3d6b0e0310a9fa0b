import numpy as np
import pytest

from ubdeconv.grid_fft import PsfKernel, boxcar_psf
from ubdeconv.observation import ObservationModel, boundary_partition, synthesize

# lines collected by tests/test_acceptance.py and printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_image(shape, seed=0):
    """Piecewise-smooth random test image in [0, 1]."""
    r = np.random.default_rng(seed)
    H, W = shape
    yy, xx = np.mgrid[0:H, 0:W] / max(H, W)
    img = 0.4 + 0.3 * np.sin(6 * xx + 3 * r.random()) * np.cos(4 * yy + 3 * r.random())
    for _ in range(4):
        r0, c0 = r.integers(0, H // 2), r.integers(0, W // 2)
        img[r0:r0 + H // 3, c0:c0 + W // 3] += 0.3 * r.random()
    return np.clip(img, 0, 1)


def small_problem(size=24, psf=None, bsnr=50.0, lam=5e-4, seed=0):
    psf = psf or boxcar_psf(3)
    b = psf.half_width
    part = boundary_partition(size - 2 * b, size - 2 * b, b)
    y, truth, sigma = synthesize(smooth_image((size, size), seed), psf, part, bsnr, seed)
    return ObservationModel(psf, part, y[0], lam, sigma), truth


def invertible_psf():
    """3x3 kernel whose OTF is bounded away from zero (min 0.2)."""
    return PsfKernel(np.array([[0, 0.1, 0], [0.1, 0.6, 0.1], [0, 0.1, 0]]))


def dense_operator(apply, shape):
    """Matrix of a linear map on images of ``shape`` by probing basis vectors."""
    n = int(np.prod(shape))
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        cols.append(np.asarray(apply(e.reshape(shape))).ravel())
    return np.stack(cols, axis=1)
