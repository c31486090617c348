"""Joint spectral amplitude reconstruction from spectrally resolved two-photon interference."""

from .core import FrequencyGrid, Interferogram, Jsa, SpectralMode, gaussian_mode, make_grid
from .forward import (Coherent, DetectorModel, Mixture, SinglePhoton, SourceModel, Thermal,
                      build_jsa, expected_heralded_histogram, expected_interferogram)
from .reconstruction import FilterSpec, assemble_jsa, fourier_filter, locate_sideband
from .analysis import fit_chirp, g2_predicted, overlap, schmidt

__version__ = "0.1.0"
