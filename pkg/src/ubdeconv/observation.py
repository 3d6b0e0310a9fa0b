"""Pixel partitions, observation models and synthetic degradations.

A partition splits the ``height x width`` extended grid into observed pixels
(the data ``y``) and unobserved ones (the estimated variable ``z``).  Both
index lists are row-major flat indices in increasing order, so stacking
``[y; z]`` is the permutation of the grid that puts observed pixels first.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ._validation import DimensionError
from .grid_fft import circ_conv, psf_to_otf


@dataclass(frozen=True)
class PixelPartition:
    """Observed/unobserved split of a ``height x width`` grid.

    ``kind`` and ``params`` record how the partition was built (used when it
    is written to disk); ``m``, ``n`` and ``b`` describe the central block.
    """

    mask: np.ndarray
    kind: str = "custom"
    m: int = 0
    n: int = 0
    b: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise DimensionError("partition mask must be 2-D")
        if not mask.any():
            raise ValueError("a partition needs at least one observed pixel")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        flat = mask.ravel()
        obs = np.flatnonzero(flat)
        unobs = np.flatnonzero(~flat)
        obs.setflags(write=False)
        unobs.setflags(write=False)
        object.__setattr__(self, "observed_indices", obs)
        object.__setattr__(self, "unobserved_indices", unobs)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def total(self):
        return self.mask.size

    @property
    def k(self):
        return self.observed_indices.size

    @property
    def d(self):
        return self.unobserved_indices.size

    def __eq__(self, other):
        return isinstance(other, PixelPartition) and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash(self.mask.tobytes())


def boundary_partition(m, n, b):
    """Central ``m x n`` block observed inside a width-``b`` unobserved frame."""
    if b < 0:
        raise ValueError("boundary width must be nonnegative")
    mask = np.zeros((m + 2 * b, n + 2 * b), dtype=bool)
    mask[b:b + m, b:b + n] = True
    return PixelPartition(mask, "boundary", m, n, b)


def inpaint_partition(base, holes):
    """Move the pixels of each rectangle ``(row, col, height, width)`` to the unobserved set.

    Rectangles use grid coordinates and may overlap.
    """
    mask = base.mask.copy()
    H, W = mask.shape
    for r0, c0, h, w in holes:
        if r0 < 0 or c0 < 0 or h < 0 or w < 0 or r0 + h > H or c0 + w > W:
            raise DimensionError(f"hole {(r0, c0, h, w)} lies outside the {H}x{W} grid")
        mask[r0:r0 + h, c0:c0 + w] = False
    if not holes:
        return base
    return PixelPartition(mask, "inpaint", base.m, base.n, base.b, {"holes": [tuple(h) for h in holes]})


def decimation_partition(m_hi, n_hi, b, r):
    """Keep one sample per ``r x r`` cell of the central block (at offset ``r // 2``)."""
    if r < 1:
        raise ValueError("decimation factor must be >= 1")
    base = boundary_partition(m_hi, n_hi, b)
    if r == 1:
        return base
    mask = np.zeros_like(base.mask)
    off = r // 2
    mask[b + off:b + m_hi:r, b + off:b + n_hi:r] = True
    return PixelPartition(mask, "decimate", m_hi, n_hi, b, {"r": int(r)})


def bayer_partitions(m, n, b):
    """RGGB colour filter array over the central block: (R, G, B) partitions."""
    if m % 2 or n % 2:
        raise DimensionError(f"Bayer sampling needs even block dimensions, got {m}x{n}")
    H, W = m + 2 * b, n + 2 * b
    rows, cols = np.indices((m, n))
    blocks = {
        "R": (rows % 2 == 0) & (cols % 2 == 0),
        "G": (rows % 2) != (cols % 2),
        "B": (rows % 2 == 1) & (cols % 2 == 1),
    }
    out = []
    for name, block in blocks.items():
        mask = np.zeros((H, W), dtype=bool)
        mask[b:b + m, b:b + n] = block
        out.append(PixelPartition(mask, "bayer", m, n, b, {"channel": name}))
    return tuple(out)


def pack(x_full, partition):
    """Split a grid into ``(y, z)``: observed then unobserved values, row-major."""
    x_full = np.asarray(x_full)
    if x_full.shape != partition.shape:
        raise DimensionError(f"grid shape {x_full.shape} does not match partition {partition.shape}")
    flat = x_full.ravel()
    return flat[partition.observed_indices], flat[partition.unobserved_indices]


def unpack(y, z, partition):
    """Reassemble a grid from observed values ``y`` and unobserved values ``z``."""
    y = np.asarray(y)
    z = np.asarray(z)
    if y.shape != (partition.k,) or z.shape != (partition.d,):
        raise DimensionError(
            f"expected y of length {partition.k} and z of length {partition.d}, "
            f"got {y.shape} and {z.shape}")
    out = np.empty(partition.total, dtype=np.result_type(y, z))
    out[partition.observed_indices] = y
    out[partition.unobserved_indices] = z
    return out.reshape(partition.shape)


def nearest_fill(image, mask):
    """Replace unobserved pixels by the value of the nearest observed pixel.

    Nearness is Euclidean, so a width-``b`` frame is filled exactly as
    replicate padding of the central block would fill it.
    """
    if mask.all():
        return np.array(image, dtype=np.float64)
    _, (ri, ci) = ndimage.distance_transform_edt(~mask, return_indices=True)
    return np.asarray(image, dtype=np.float64)[ri, ci]


class ObservationModel:
    """Observed data, partitions and blur for one (possibly colour) problem.

    Parameters
    ----------
    psf : PsfKernel
    partitions : PixelPartition or sequence of them (one per channel)
    y : array or sequence of arrays
        Observed values, one vector of length ``k_c`` per channel.
    lam : float
        Regularization weight of the TV term.
    sigma : float, optional
        Noise standard deviation, for bookkeeping only.
    """

    def __init__(self, psf, partitions, y, lam, sigma=None):
        if isinstance(partitions, PixelPartition):
            partitions = (partitions,)
            y = (y,)
        partitions = tuple(partitions)
        if len(partitions) not in (1, 3) or len(y) != len(partitions):
            raise DimensionError("need one partition and one data vector per channel (1 or 3)")
        shape = partitions[0].shape
        if any(p.shape != shape for p in partitions):
            raise DimensionError("all channel partitions must share one grid")
        if not lam > 0:
            raise ValueError("lam must be > 0")
        ys = []
        for p, yc in zip(partitions, y):
            yc = np.asarray(yc, dtype=np.float64).ravel()
            if yc.shape != (p.k,):
                raise DimensionError(f"data vector has length {yc.size}, partition observes {p.k}")
            if not np.all(np.isfinite(yc)):
                raise ValueError("observed data must be finite")
            ys.append(yc)
        self.psf = psf
        self.partitions = partitions
        self.y = tuple(ys)
        self.lam = float(lam)
        self.sigma = sigma
        self.operator = psf_to_otf(psf, *shape)
        self.mask = np.stack([p.mask for p in partitions])
        self.y_full = np.zeros(self.mask.shape)
        for c, (p, yc) in enumerate(zip(partitions, ys)):
            self.y_full[c].ravel()[p.observed_indices] = yc
        self.mask.setflags(write=False)
        self.y_full.setflags(write=False)

    @classmethod
    def from_grid(cls, psf, observed, mask, lam, sigma=None):
        """Build a model from a ``(C, H, W)`` grid and a matching boolean mask."""
        observed = np.asarray(observed, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        parts = [PixelPartition(mc) for mc in mask]
        ys = [oc[mc] for oc, mc in zip(observed, mask)]
        return cls(psf, parts, ys, lam, sigma)

    @property
    def channels(self):
        return len(self.partitions)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def d(self):
        return sum(p.d for p in self.partitions)

    @property
    def k(self):
        return sum(p.k for p in self.partitions)

    def unpack(self, z):
        """Composite grid ``[y; z]`` from a stacked unobserved vector ``z``."""
        out = self.y_full.copy()
        out[~self.mask] = z
        return out

    def z_of(self, grid):
        """Stacked unobserved entries (channel-major) of a ``(C, H, W)`` grid."""
        return np.asarray(grid)[~self.mask]

    def padded(self):
        """Observed data extended to the full grid by nearest-pixel replication."""
        return np.stack([nearest_fill(self.y_full[c], self.mask[c]) for c in range(self.channels)])


def blur_snr(clean, noisy):
    """Realized BSNR in dB: variance of ``clean`` over mean square of the noise."""
    noise = np.asarray(noisy) - np.asarray(clean)
    return 10.0 * np.log10(np.var(clean) / np.mean(noise ** 2))


def synthesize(sharp, psf, partitions, bsnr_db, seed):
    """Degrade a sharp ``(C, H, W)`` image: circular blur, normalize, sample, add noise.

    The blurred image is mapped affinely onto ``[0, 1]`` (min-max over all
    channels); the same map is applied to the sharp image, which becomes the
    ground truth.  Noise variance is set from the variance (about the mean)
    of the noiseless observed pixels: ``var / 10**(bsnr_db / 10)``.

    Returns
    -------
    y : list of ndarray
        Noisy observed values per channel.
    truth : ndarray
        Normalized sharp image.
    sigma : float
    """
    sharp = np.asarray(sharp, dtype=np.float64)
    if sharp.ndim == 2:
        sharp = sharp[np.newaxis]
    if isinstance(partitions, PixelPartition):
        partitions = (partitions,) * sharp.shape[0]
    if len(partitions) != sharp.shape[0] or any(p.shape != sharp.shape[1:] for p in partitions):
        raise DimensionError("partitions do not match the sharp image grid")
    op = psf_to_otf(psf, *sharp.shape[1:])
    blur = circ_conv(sharp, op)
    lo, hi = blur.min(), blur.max()
    if not hi > lo:
        raise ValueError("degenerate image: blurred image is constant, BSNR undefined")
    blur = (blur - lo) / (hi - lo)
    truth = (sharp - lo) / (hi - lo)
    clean = [blur[c].ravel()[p.observed_indices] for c, p in enumerate(partitions)]
    pooled = np.concatenate(clean)
    var = pooled.var()
    if not var > 0:
        raise ValueError("degenerate image: observed pixels have zero variance")
    if np.isinf(bsnr_db) and bsnr_db > 0:
        sigma = 0.0
    else:
        sigma = float(np.sqrt(var / 10.0 ** (bsnr_db / 10.0)))
    rng = np.random.default_rng(seed)
    y = [yc + sigma * rng.standard_normal(yc.size) for yc in clean]
    return y, truth, sigma
