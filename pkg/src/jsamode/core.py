"""Frequency grids, complex spectra and matrix containers.

Units used throughout the package:

* angular frequency in rad/fs (detunings relative to a stored center)
* time in fs
* group-delay dispersion in fs^2

Every norm and inner product carries the grid measure ``dw`` so results do not
depend on the grid resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# speed of light in nm/fs
C_NM_PER_FS = 299.792458

MIN_BINS = 8


def wavelength_to_angular(wavelength_nm: float) -> float:
    """Absolute angular frequency (rad/fs) of a vacuum wavelength in nm."""
    return 2.0 * np.pi * C_NM_PER_FS / wavelength_nm


def angular_to_wavelength(omega: float) -> float:
    """Vacuum wavelength (nm) of an absolute angular frequency in rad/fs."""
    return 2.0 * np.pi * C_NM_PER_FS / omega


def ghz_to_angular(f_ghz: float) -> float:
    """Convert a frequency interval in GHz to rad/fs."""
    return 2.0 * np.pi * f_ghz * 1e-6


def angular_to_ghz(omega: float) -> float:
    return omega / (2.0 * np.pi) * 1e6


def thz_to_angular(f_thz: float) -> float:
    return 2.0 * np.pi * f_thz * 1e-3


def bandwidth_nm_to_angular(dlambda_nm: float, center_nm: float) -> float:
    """Small wavelength interval -> angular frequency interval (rad/fs), |dω| = 2πc·dλ/λ²."""
    return 2.0 * np.pi * C_NM_PER_FS * dlambda_nm / center_nm**2


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Uniform grid of angular-frequency detunings about ``center``.

    Bin ``k`` sits at detuning ``-span/2 + k*step`` with inclusive endpoints.
    Equality tolerates 1e-12 relative round-off so grids survive serialization.
    """

    center: float
    span: float
    n_bins: int

    def __post_init__(self):
        for name in ("center", "span"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")
        if self.span <= 0:
            raise ValueError(f"span must be positive, got {self.span!r}")
        if int(self.n_bins) != self.n_bins or self.n_bins < MIN_BINS:
            raise ValueError(f"n_bins must be an integer >= {MIN_BINS}, got {self.n_bins!r}")
        object.__setattr__(self, "n_bins", int(self.n_bins))

    def __eq__(self, other):
        if not isinstance(other, FrequencyGrid):
            return NotImplemented
        return (self.n_bins == other.n_bins
                and np.isclose(self.center, other.center, rtol=1e-12, atol=0)
                and np.isclose(self.span, other.span, rtol=1e-12, atol=0))

    def __hash__(self):
        return hash(self.n_bins)

    @property
    def step(self) -> float:
        return self.span / (self.n_bins - 1)

    @property
    def detunings(self) -> np.ndarray:
        return -self.span / 2 + np.arange(self.n_bins) * self.step

    @property
    def frequencies(self) -> np.ndarray:
        """Absolute angular frequencies (rad/fs)."""
        return self.center + self.detunings

    @property
    def wavelengths(self) -> np.ndarray:
        return angular_to_wavelength(self.frequencies)

    @property
    def center_wavelength(self) -> float:
        return angular_to_wavelength(self.center)

    def detuning(self, k):
        return -self.span / 2 + np.asarray(k) * self.step

    def index_of(self, detuning):
        """Nearest bin index for detuning(s); may fall outside ``[0, n_bins)``."""
        return np.rint((np.asarray(detuning) + self.span / 2) / self.step).astype(np.int64)

    def contains(self, detuning):
        k = self.index_of(detuning)
        return (k >= 0) & (k < self.n_bins)

    def zero_index(self) -> int:
        """Bin closest to zero detuning (lower one on a tie)."""
        return int(np.argmin(np.abs(self.detunings)))

    def time_axis(self, n_fft: int) -> np.ndarray:
        """Times (fs) conjugate to an ``n_fft``-point FFT along this grid."""
        return 2.0 * np.pi * np.fft.fftfreq(n_fft, d=self.step)


def make_grid(center: float, span: float, n_bins: int) -> FrequencyGrid:
    if not np.isfinite(center) or center <= 0:
        raise ValueError(f"center must be finite and positive, got {center!r}")
    return FrequencyGrid(float(center), float(span), n_bins)


def grid_for_bin_width(center: float, span: float, bin_width: float) -> FrequencyGrid:
    """Grid covering ``span`` with bins as close as possible to ``bin_width``."""
    if bin_width <= 0 or not np.isfinite(bin_width):
        raise ValueError("bin_width must be finite and positive")
    n = int(round(span / bin_width)) + 1
    return make_grid(center, span, n)


def _check_same_grid(a: FrequencyGrid, b: FrequencyGrid, what: str = "grids") -> None:
    if a != b:
        raise ValueError(f"{what} differ: {a} vs {b}")


@dataclass(frozen=True)
class SpectralMode:
    """Complex spectral amplitude sampled on a grid."""

    grid: FrequencyGrid
    amp: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amp, dtype=complex)
        if a.shape != (self.grid.n_bins,):
            raise ValueError(f"amplitude has shape {a.shape}, grid has {self.grid.n_bins} bins")
        if not np.all(np.isfinite(a)):
            raise ValueError("amplitude contains non-finite values")
        object.__setattr__(self, "amp", _readonly(a))

    @property
    def norm2(self) -> float:
        return float(np.sum(np.abs(self.amp) ** 2) * self.grid.step)

    def normalize(self) -> "SpectralMode":
        n2 = self.norm2
        if n2 == 0:
            raise ValueError("cannot normalize a zero mode")
        return SpectralMode(self.grid, self.amp / np.sqrt(n2))

    def scaled(self, factor: complex) -> "SpectralMode":
        return SpectralMode(self.grid, self.amp * factor)

    def intensity(self) -> np.ndarray:
        return np.abs(self.amp) ** 2

    def phase(self) -> np.ndarray:
        return np.angle(self.amp)


def inner_product(a: SpectralMode, b: SpectralMode) -> complex:
    """<a|b> = Σ conj(a)·b·Δω."""
    _check_same_grid(a.grid, b.grid)
    return complex(np.sum(np.conj(a.amp) * b.amp) * a.grid.step)


def gaussian_mode(grid: FrequencyGrid, width: float, center: float = 0.0,
                  gdd: float = 0.0, delay: float = 0.0) -> SpectralMode:
    """Normalized Gaussian mode exp(-(ω-ω_c)²/(2 width²)) with optional GDD and delay.

    The quadratic phase follows the pump convention ``exp(-i gdd/2 (ω-ω_c)²)``;
    a delay ``t`` adds ``exp(i ω t)``.
    """
    w = grid.detunings - center
    amp = np.exp(-w**2 / (2 * width**2) - 0.5j * gdd * w**2 + 1j * grid.detunings * delay)
    return SpectralMode(grid, amp).normalize()


@dataclass(frozen=True)
class Jsa:
    """Joint spectral amplitude f(ω₁, ω₂) on ``grid1 × grid2``.

    Two Jsa objects describe the same state when they differ by a global
    unit-modulus factor; use :meth:`equivalent` rather than ``==`` for that.
    """

    grid1: FrequencyGrid
    grid2: FrequencyGrid
    f: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=complex)
        if f.shape != (self.grid1.n_bins, self.grid2.n_bins):
            raise ValueError(
                f"matrix shape {f.shape} does not match grids "
                f"({self.grid1.n_bins}, {self.grid2.n_bins})")
        if not np.all(np.isfinite(f)):
            raise ValueError("JSA contains non-finite values")
        object.__setattr__(self, "f", _readonly(f))

    @property
    def measure(self) -> float:
        return self.grid1.step * self.grid2.step

    @property
    def norm2(self) -> float:
        return float(np.sum(np.abs(self.f) ** 2) * self.measure)

    def normalize(self) -> "Jsa":
        n2 = self.norm2
        if n2 == 0:
            raise ValueError("cannot normalize a zero JSA")
        return Jsa(self.grid1, self.grid2, self.f / np.sqrt(n2))

    def transpose(self) -> "Jsa":
        """Swap the roles of the two photons."""
        return Jsa(self.grid2, self.grid1, self.f.T)

    def abs(self) -> "Jsa":
        return Jsa(self.grid1, self.grid2, np.abs(self.f))

    def column(self, j: int) -> SpectralMode:
        """Cross-section f(·, ω₂ⱼ) as an (unnormalized) mode on grid1."""
        return SpectralMode(self.grid1, self.f[:, j])

    def row(self, i: int) -> SpectralMode:
        return SpectralMode(self.grid2, self.f[i, :])

    def marginal1(self) -> np.ndarray:
        """Reduced density matrix of photon 1, ρ(ω,ω') = Σ_j f(ω,ω_j) f*(ω',ω_j) Δω₂."""
        return self.f @ self.f.conj().T * self.grid2.step

    def equivalent(self, other: "Jsa", atol: float = 1e-9) -> bool:
        if self.grid1 != other.grid1 or self.grid2 != other.grid2:
            return False
        k = np.unravel_index(np.argmax(np.abs(self.f)), self.f.shape)
        if abs(other.f[k]) == 0:
            return bool(np.allclose(self.f, other.f, atol=atol))
        phase = self.f[k] / other.f[k]
        phase /= abs(phase)
        return bool(np.allclose(self.f, other.f * phase, atol=atol))


@dataclass(frozen=True)
class Interferogram:
    """Expected or sampled spectral intensity correlations.

    ``counts`` is indexed ``[ω₁, ω₂]`` or, with a herald axis, ``[ω₁, ω₂, ω_h]``.
    """

    grid1: FrequencyGrid
    grid2: FrequencyGrid
    counts: np.ndarray
    herald_grid: Optional[FrequencyGrid] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float)
        shape = (self.grid1.n_bins, self.grid2.n_bins)
        if self.herald_grid is not None:
            shape = shape + (self.herald_grid.n_bins,)
        if c.shape != shape:
            raise ValueError(f"counts shape {c.shape} does not match grids {shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("interferogram contains non-finite values")
        if np.any(c < 0):
            raise ValueError("interferogram contains negative entries")
        object.__setattr__(self, "counts", _readonly(c))

    @property
    def is_heralded(self) -> bool:
        return self.herald_grid is not None

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def slice(self, j: int) -> "Interferogram":
        """2D interferogram conditioned on herald bin ``j``."""
        if not self.is_heralded:
            raise ValueError("interferogram has no herald axis")
        return Interferogram(self.grid1, self.grid2, self.counts[:, :, j])

    def marginal(self) -> "Interferogram":
        """Sum over the herald axis."""
        if not self.is_heralded:
            return self
        return Interferogram(self.grid1, self.grid2, self.counts.sum(axis=2))

    def with_counts(self, counts: np.ndarray) -> "Interferogram":
        return Interferogram(self.grid1, self.grid2, counts, self.herald_grid)
