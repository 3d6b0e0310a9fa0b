"""Fast TV deconvolution of images with unobserved pixels (unknown boundaries,
holes, decimation, colour filter arrays) using FFT-diagonalized operators."""

from .baselines import CgConfig, CmConfig, admm_cg_run, cm_run, edge_taper
from .estimators import (ADMMCGDeconvolver, CondatDeconvolver, FrameworkDeconvolver,
                         PartialADMMDeconvolver)
from .framework import PLUGINS, OraclePlugin, TVPlugin, framework_run, get_plugin
from .grid_fft import (PsfKernel, SpectralOperator, boxcar_psf, circ_conv, delta_psf,
                       gaussian_psf, psf_from_spec, psf_to_otf, solve_diag)
from .metrics import isnr, rmse
from .observation import (ObservationModel, PixelPartition, bayer_partitions,
                          boundary_partition, decimation_partition, inpaint_partition,
                          synthesize)
from .partial_admm import DivergenceError, SolverConfig, SolverState, run

__all__ = [
    "ADMMCGDeconvolver", "CgConfig", "CmConfig", "CondatDeconvolver", "DivergenceError",
    "FrameworkDeconvolver", "ObservationModel", "OraclePlugin", "PLUGINS",
    "PartialADMMDeconvolver", "PixelPartition", "PsfKernel", "SolverConfig", "SolverState",
    "SpectralOperator", "TVPlugin", "admm_cg_run", "bayer_partitions", "boundary_partition",
    "boxcar_psf", "circ_conv", "cm_run", "decimation_partition", "delta_psf", "edge_taper",
    "framework_run", "gaussian_psf", "get_plugin", "inpaint_partition", "isnr",
    "psf_from_spec", "psf_to_otf", "rmse", "run", "solve_diag", "synthesize",
]
__version__ = "0.1.0"
