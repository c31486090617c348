import numpy as np
import pytest

from jsamode.core import FrequencyGrid, gaussian_mode
from jsamode.forward import SourceModel, build_jsa, source_grids

# geometry used by the presets: 128 bins over 9.3e-3 rad/fs, tau = 10 ps
PHOTON_WIDTH = 1.6e-3
REF_WIDTH = 3.0e-3
SPAN = 9.3e-3
TAU = 1.0e4
N_REF = 0.0125


@pytest.fixture(scope="session")
def grid():
    return FrequencyGrid(1.2153, SPAN, 128)


@pytest.fixture(scope="session")
def small_grid():
    return FrequencyGrid(1.2153, SPAN, 48)


@pytest.fixture(scope="session")
def clean_grid():
    """Wide, fine grid where baseband and sideband separate to machine precision."""
    return FrequencyGrid(1.2153, 1.4e-2, 256)


def heralded_setup(gdd=0.0, n_bins=128):
    model = SourceModel.separable(PHOTON_WIDTH, pump_gdd=gdd)
    g1, g2 = source_grids(model, n_bins, SPAN)
    jsa = build_jsa(model, g1, g2)
    ref = gaussian_mode(g1, REF_WIDTH).scaled(np.sqrt(N_REF))
    return model, jsa, ref


@pytest.fixture(scope="session")
def unchirped():
    return heralded_setup(0.0)


@pytest.fixture(scope="session")
def chirped():
    return heralded_setup(2.0e5)


def rel_overlap(a, b):
    return abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real)
