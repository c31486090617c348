"""Forward model: parametric JSAs and expected spectral intensity correlations.

A signal (single photon, phase-randomized coherent state or thermal state) is
mixed with a delayed coherent reference on a 50:50 beam splitter and the
frequency-resolved coincidence rate ``G(ω₁, ω₂)`` between the two outputs is
computed in closed form, sampled with shot noise, blurred by the detector, or
turned into a raw time-tag stream.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.special import ndtr

from .core import (
    C_NM_PER_FS,
    FrequencyGrid,
    Interferogram,
    Jsa,
    SpectralMode,
    _check_same_grid,
    angular_to_wavelength,
    bandwidth_nm_to_angular,
    wavelength_to_angular,
)

# fringe period must span at least this many bins
MIN_BINS_PER_FRINGE = 2.5
# bin-units below which detector blur is skipped
MIN_BLUR_BINS = 0.1
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


# ---------------------------------------------------------------- models

@dataclass(frozen=True)
class SourceModel:
    """Parametric pair source: pump envelope times a phase-matching ridge.

    ``f(ω₁, ω₂) = A(ω₁+ω₂) · φ(cosθ·ω₁ + sinθ·ω₂)`` with a Gaussian pump of
    amplitude std ``pump_bandwidth`` carrying ``exp(-i β/2 (ω₁+ω₂)²)``.
    """

    pump_bandwidth: float
    phasematch_bandwidth: float
    phasematch_angle: float = -math.pi / 4
    pump_gdd: float = 0.0
    signal_wavelength: float = 1550.0
    herald_wavelength: float = 1550.0
    phasematch_shape: str = "gaussian"

    def __post_init__(self):
        if self.pump_bandwidth <= 0 or self.phasematch_bandwidth <= 0:
            raise ValueError("bandwidths must be positive")
        if self.phasematch_shape not in ("gaussian", "sinc"):
            raise ValueError(f"unknown phase-matching shape {self.phasematch_shape!r}")

    @classmethod
    def separable(cls, photon_bandwidth: float, pump_gdd: float = 0.0, **kw) -> "SourceModel":
        """Source whose unchirped JSA is exp(-(ω₁²+ω₂²)/(2 s²)) for ``s = photon_bandwidth``."""
        return cls(pump_bandwidth=math.sqrt(2.0) * photon_bandwidth,
                   phasematch_bandwidth=photon_bandwidth,
                   phasematch_angle=-math.pi / 4, pump_gdd=pump_gdd, **kw)

    def with_gdd(self, gdd: float) -> "SourceModel":
        return SourceModel(self.pump_bandwidth, self.phasematch_bandwidth, self.phasematch_angle,
                           gdd, self.signal_wavelength, self.herald_wavelength,
                           self.phasematch_shape)

    @property
    def signal_center(self) -> float:
        return wavelength_to_angular(self.signal_wavelength)

    @property
    def herald_center(self) -> float:
        return wavelength_to_angular(self.herald_wavelength)


def separable_angle(pump_bandwidth: float, phasematch_bandwidth: float) -> float:
    """Phase-matching angle that cancels the ω₁ω₂ amplitude cross term."""
    x = -2.0 * phasematch_bandwidth**2 / pump_bandwidth**2
    if x < -1:
        raise ValueError("no separable angle: phase-matching bandwidth exceeds pump/√2")
    return 0.5 * math.asin(x)


@dataclass(frozen=True)
class SinglePhoton:
    pass


@dataclass(frozen=True)
class Coherent:
    mean_photons: float

    def __post_init__(self):
        if not self.mean_photons > 0:
            raise ValueError("mean photon number must be positive")


@dataclass(frozen=True)
class Thermal:
    mean_photons: float

    def __post_init__(self):
        if not self.mean_photons > 0:
            raise ValueError("mean photon number must be positive")


SignalStatistics = Union[SinglePhoton, Coherent, Thermal]


@dataclass(frozen=True)
class DetectorModel:
    """Dispersive single-photon spectrometer.

    dispersion in ps/nm, jitter FWHM in ps, repetition period in ns.
    """

    dispersion: float = -997.0
    jitter_fwhm: float = 40.0
    efficiency: float = 1.0
    rep_period: float = 12.5

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in [0, 1]")
        if self.dispersion == 0 or not np.isfinite(self.dispersion):
            raise ValueError("dispersion must be finite and non-zero")
        if self.jitter_fwhm < 0:
            raise ValueError("jitter must be non-negative")
        if self.rep_period <= 0:
            raise ValueError("repetition period must be positive")

    @property
    def rep_period_ps(self) -> float:
        return self.rep_period * 1e3

    def blur_fwhm_nm(self) -> float:
        return self.jitter_fwhm / abs(self.dispersion)

    def blur_fwhm_angular(self, center_wavelength: float) -> float:
        return bandwidth_nm_to_angular(self.blur_fwhm_nm(), center_wavelength)

    def blur_sigma_angular(self, center_wavelength: float) -> float:
        return self.blur_fwhm_angular(center_wavelength) / FWHM_PER_SIGMA


@dataclass(frozen=True)
class Mixture:
    """Incoherent mixture Σ pᵢ |ψᵢ⟩⟨ψᵢ| of normalized modes on one grid."""

    weights: Tuple[float, ...]
    modes: Tuple[SpectralMode, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.modes) or len(w) == 0:
            raise ValueError("need one weight per mode")
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-9):
            raise ValueError("weights must be non-negative and sum to 1")
        for m in self.modes[1:]:
            _check_same_grid(m.grid, self.modes[0].grid, "mixture mode grids")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "modes", tuple(m.normalize() for m in self.modes))

    @property
    def grid(self) -> FrequencyGrid:
        return self.modes[0].grid

    def density(self) -> np.ndarray:
        """ρ(ω, ω') with trace Σρ(ω,ω)Δω = 1."""
        rho = np.zeros((self.grid.n_bins,) * 2, dtype=complex)
        for p, m in zip(self.weights, self.modes):
            rho += p * np.outer(m.amp, m.amp.conj())
        return rho

    @classmethod
    def from_density(cls, grid: FrequencyGrid, rho: np.ndarray, tol: float = 1e-12) -> "Mixture":
        lam, vecs = np.linalg.eigh(0.5 * (rho + rho.conj().T) * grid.step)
        lam = np.clip(lam, 0, None)
        keep = lam > tol * lam.max()
        lam = lam[keep] / lam[keep].sum()
        modes = tuple(SpectralMode(grid, v / np.sqrt(grid.step)) for v in vecs[:, keep].T)
        return cls(tuple(lam), modes)


Signal = Union[SpectralMode, Mixture]


def _as_mixture(signal: Signal) -> Mixture:
    if isinstance(signal, Mixture):
        return signal
    return Mixture((1.0,), (signal,))


# ---------------------------------------------------------------- JSA construction

def pump_mode(model: SourceModel, grid: FrequencyGrid) -> SpectralMode:
    """Pump envelope ``|A(ω_p)| exp(-i β/2 ω_p²)`` on a pump-detuning grid."""
    w = grid.detunings
    amp = np.exp(-w**2 / (2 * model.pump_bandwidth**2) - 0.5j * model.pump_gdd * w**2)
    return SpectralMode(grid, amp).normalize()


def _phasematch(model: SourceModel, u: np.ndarray) -> np.ndarray:
    if model.phasematch_shape == "gaussian":
        return np.exp(-u**2 / (2 * model.phasematch_bandwidth**2))
    return np.sinc(u / (np.pi * model.phasematch_bandwidth))


def build_jsa(model: SourceModel, grid1: FrequencyGrid, grid2: FrequencyGrid) -> Jsa:
    w1, w2 = np.meshgrid(grid1.detunings, grid2.detunings, indexing="ij")
    wp = w1 + w2
    pump = np.exp(-wp**2 / (2 * model.pump_bandwidth**2) - 0.5j * model.pump_gdd * wp**2)
    th = model.phasematch_angle
    pm = _phasematch(model, math.cos(th) * w1 + math.sin(th) * w2)
    return Jsa(grid1, grid2, pump * pm).normalize()


def source_grids(model: SourceModel, n_bins: int, span: float) -> Tuple[FrequencyGrid, FrequencyGrid]:
    """Signal and herald grids of equal span centered on the model wavelengths."""
    return (FrequencyGrid(model.signal_center, span, n_bins),
            FrequencyGrid(model.herald_center, span, n_bins))


# ---------------------------------------------------------------- interferograms

def check_delay(grid: FrequencyGrid, tau: float) -> None:
    """Reject delays whose fringe period would be under-sampled."""
    if not np.isfinite(tau):
        raise ValueError("delay must be finite")
    if tau != 0 and 2 * np.pi / abs(tau) < MIN_BINS_PER_FRINGE * grid.step:
        raise ValueError(
            f"delay {tau} fs aliases: fringe period {2 * np.pi / abs(tau):.3g} rad/fs "
            f"is below {MIN_BINS_PER_FRINGE} bins of {grid.step:.3g} rad/fs")


def delayed_reference(reference: SpectralMode, tau: float) -> np.ndarray:
    return reference.amp * np.exp(1j * reference.grid.detunings * tau)


def _clip_roundoff(g: np.ndarray) -> np.ndarray:
    scale = np.max(np.abs(g)) if g.size else 0.0
    if np.any(g < -1e-10 * scale):
        raise ArithmeticError("expected interferogram has significantly negative entries")
    return np.clip(g, 0.0, None)


def expected_interferogram(signal: Signal, reference: SpectralMode, tau: float,
                           stats: SignalStatistics = SinglePhoton(),
                           background: float = 0.0) -> Interferogram:
    """Expected coincidence counts per pulse in each (ω₁, ω₂) bin.

    The signal mode is normalized and scaled to the mean photon number of
    ``stats`` (one photon for :class:`SinglePhoton`). The reference is used as
    given, so ``reference.norm2`` is its mean photon number per pulse.
    ``background`` adds a flat count per bin.
    """
    mix = _as_mixture(signal)
    grid = mix.grid
    _check_same_grid(grid, reference.grid, "signal and reference grids")
    check_delay(grid, tau)
    a = delayed_reference(reference, tau)
    Ia = np.abs(a) ** 2
    ref_ref = np.outer(Ia, Ia)

    if isinstance(stats, SinglePhoton):
        g = np.zeros((grid.n_bins,) * 2)
        for p, m in zip(mix.weights, mix.modes):
            psi = m.amp
            g += p * np.abs(np.outer(a, psi) - np.outer(psi, a)) ** 2
        g = 0.25 * (g + ref_ref)
    else:
        n = stats.mean_photons
        rho = n * mix.density()
        diag = np.real(np.diag(rho))
        zeta = np.outer(Ia, diag) + np.outer(diag, Ia) + ref_ref
        gamma = rho * np.outer(a.conj(), a)
        if isinstance(stats, Coherent):
            extra = sum(p * n**2 * np.outer(np.abs(m.amp) ** 2, np.abs(m.amp) ** 2)
                        for p, m in zip(mix.weights, mix.modes))
        elif isinstance(stats, Thermal):
            extra = np.outer(diag, diag) + np.abs(rho) ** 2
        else:
            raise TypeError(f"unknown statistics {stats!r}")
        g = 0.25 * (zeta + extra - 2.0 * gamma.real)
    g = _clip_roundoff(g * grid.step**2) + background
    return Interferogram(grid, grid, g)


def zeta_gamma(signal: Signal, reference: SpectralMode, tau: float,
               mean_photons: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Phase-insensitive term ζ and interference term Γ as densities (no Δω²)."""
    mix = _as_mixture(signal)
    rho = mean_photons * mix.density()
    a = delayed_reference(reference, tau)
    Ia = np.abs(a) ** 2
    diag = np.real(np.diag(rho))
    zeta = np.outer(Ia, diag) + np.outer(diag, Ia) + np.outer(Ia, Ia)
    return zeta, rho * np.outer(a.conj(), a)


def herald_marginal(jsa: Jsa) -> np.ndarray:
    """Probability of each herald bin, Σᵢ |f(ωᵢ, ω_hⱼ)|² Δω₁ Δω_h."""
    return np.sum(np.abs(jsa.f) ** 2, axis=0) * jsa.measure


def expected_heralded_histogram(jsa: Jsa, reference: SpectralMode, tau: float,
                                herald_grid: Optional[FrequencyGrid] = None,
                                background: float = 0.0) -> Interferogram:
    """3D histogram N(ω₁, ω₂, ω_h) for the photon on ``jsa.grid1`` heralded on ``grid2``.

    Slice ``j`` is the single-photon interferogram of the normalized
    cross-section f(·, ω_hⱼ) weighted by the herald-bin probability.
    """
    herald_grid = jsa.grid2 if herald_grid is None else herald_grid
    _check_same_grid(herald_grid, jsa.grid2, "herald grid and JSA grid2")
    grid = jsa.grid1
    _check_same_grid(grid, reference.grid, "JSA grid1 and reference grid")
    check_delay(grid, tau)
    a = delayed_reference(reference, tau)
    f = jsa.f
    # p_j |a1 ψ2 - ψ1 a2|² = Δω_h |a1 f2j - f1j a2|²
    cross = a[:, None, None] * f[None, :, :] - f[:, None, :] * a[None, :, None]
    g = herald_grid.step * np.abs(cross) ** 2
    p = herald_marginal(jsa)
    g += np.outer(np.abs(a) ** 2, np.abs(a) ** 2)[:, :, None] * p[None, None, :]
    g = _clip_roundoff(0.25 * g * grid.step**2) + background
    return Interferogram(grid, grid, g, herald_grid)


# ---------------------------------------------------------------- noise and detector

def sample_counts(expected: Interferogram, total_events: int, seed: int,
                  efficiency: float = 1.0) -> Interferogram:
    """Multinomial draw of ``total_events`` over the bins, then optional binomial thinning."""
    if total_events <= 0:
        raise ValueError("total_events must be positive")
    w = expected.counts.ravel()
    s = w.sum()
    if s <= 0:
        raise ValueError("expected interferogram is all zero")
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(int(total_events), w / s)
    if efficiency < 1.0:
        counts = rng.binomial(counts, efficiency)
    return expected.with_counts(counts.reshape(expected.counts.shape).astype(float))


def _g_integral(x):
    # ∫ Φ(x) dx = x Φ(x) + φ(x)
    return x * ndtr(x) + np.exp(-0.5 * x**2) / math.sqrt(2 * math.pi)


def blur_kernel(sigma_bins: float) -> np.ndarray:
    """Bin-transfer probabilities for uniform-in-bin events plus Gaussian noise."""
    r = int(math.ceil(6 * sigma_bins)) + 1
    k = np.arange(-r, r + 1, dtype=float)
    s = sigma_bins
    w = s * (_g_integral((k + 1) / s) - 2 * _g_integral(k / s) + _g_integral((k - 1) / s))
    w = np.clip(w, 0, None)
    return w / w.sum()


def apply_detector_blur(h: Interferogram, det: DetectorModel) -> Interferogram:
    """Convolve every frequency axis with the detector's spectral resolution.

    Axes where the blur is narrower than 0.1 bin are left untouched. Boundaries
    reflect, so the total count is conserved.
    """
    grids = [h.grid1, h.grid2] + ([h.herald_grid] if h.is_heralded else [])
    out = np.array(h.counts, dtype=float)
    for axis, g in enumerate(grids):
        sigma = det.blur_sigma_angular(g.center_wavelength) / g.step
        if sigma < MIN_BLUR_BINS:
            continue
        kern = blur_kernel(sigma)
        if len(kern) > 2 * g.n_bins - 1:
            raise ValueError("detector blur wider than the grid")
        out = ndimage.convolve1d(out, kern, axis=axis, mode="reflect")
    return h.with_counts(np.clip(out, 0, None))


# ---------------------------------------------------------------- Monte Carlo oracle

def _shot_fields(rng, mix: Mixture, n: float, stats, n_shots: int) -> np.ndarray:
    nb = mix.grid.n_bins
    if isinstance(stats, Thermal):
        rho = mix.density() * mix.grid.step
        lam, vecs = np.linalg.eigh(0.5 * (rho + rho.conj().T))
        lam = np.clip(lam, 0, None)
        modes = vecs / np.sqrt(mix.grid.step)
        x = (rng.standard_normal((n_shots, nb)) + 1j * rng.standard_normal((n_shots, nb))) / math.sqrt(2)
        return (x * np.sqrt(n * lam)) @ modes.T
    if isinstance(stats, Coherent):
        amps = np.array([m.amp for m in mix.modes])
        which = rng.choice(len(mix.modes), size=n_shots, p=np.asarray(mix.weights))
        return math.sqrt(n) * amps[which]
    raise TypeError("Monte Carlo oracle supports Coherent and Thermal statistics only")


def monte_carlo_interferogram(signal: Signal, reference: SpectralMode, tau: float,
                              stats: SignalStatistics, shots: int, seed: int,
                              block: int = 2000, workers: int = 1
                              ) -> Tuple[np.ndarray, np.ndarray]:
    """Ensemble average of |c(ω₁)|²|d(ω₂)|² over random classical shots.

    Each shot draws the signal field (fixed-amplitude coherent or circular
    Gaussian thermal) and a uniformly random reference phase, forms the beam
    splitter outputs c = (s + a)/√2, d = (s - a)/√2, and accumulates the
    product of output intensities. Block ``k`` uses its own RNG stream derived
    from ``(seed, k)`` and blocks are reduced in index order, so the result is
    bit-identical for any ``workers``.

    Returns ``(mean, standard_error)`` as count arrays per bin.
    """
    mix = _as_mixture(signal)
    grid = mix.grid
    _check_same_grid(grid, reference.grid)
    n = stats.mean_photons
    a0 = delayed_reference(reference, tau)
    sizes = [min(block, shots - s) for s in range(0, shots, block)]

    def run(k: int):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        m = sizes[k]
        s = _shot_fields(rng, mix, n, stats, m)
        phi = rng.uniform(0, 2 * np.pi, size=m)
        a = a0[None, :] * np.exp(1j * phi)[:, None]
        ic = np.abs(s + a) ** 2 / 2
        idd = np.abs(s - a) ** 2 / 2
        return ic.T @ idd, (ic**2).T @ (idd**2)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, range(len(sizes))))
    else:
        parts = [run(k) for k in range(len(sizes))]
    s1 = np.zeros((grid.n_bins,) * 2)
    s2 = np.zeros_like(s1)
    for p1, p2 in parts:
        s1 += p1
        s2 += p2
    scale = grid.step**2
    mean = s1 / shots
    var = np.clip(s2 / shots - mean**2, 0, None)
    return mean * scale, np.sqrt(var / shots) * scale


# ---------------------------------------------------------------- time tags

@dataclass(frozen=True)
class TagRates:
    """Detected rates (per second) for a synthetic acquisition.

    ``coincidences`` is the rate of true n-fold events; ``singles`` adds
    uncorrelated tags per channel (out_c, out_d, herald).
    """

    coincidences: float
    singles: Tuple[float, float, float] = (0.0, 0.0, 0.0)


def _unique_pulses(rng, n_pulses: int, n: int) -> np.ndarray:
    if n > n_pulses - 1:
        raise ValueError("more events than pulses")
    got = np.unique(rng.integers(1, n_pulses, size=n))
    while got.size < n:
        got = np.unique(np.concatenate([got, rng.integers(1, n_pulses, size=n - got.size)]))
    return got


def detuning_to_offset_ps(detuning: np.ndarray, center: float, det: DetectorModel) -> np.ndarray:
    """Arrival offset (ps) from the DCF for a detuning about ``center``."""
    lam_c = angular_to_wavelength(center)
    lam = 2 * np.pi * C_NM_PER_FS / (center + detuning)
    return det.dispersion * (lam - lam_c)


def synthesize_tag_stream(expected: Interferogram, det: DetectorModel, duration: float,
                          rates: TagRates, seed: int):
    """Emulate a time-tagger recording of ``expected``.

    A 3D (heralded) interferogram produces three-fold events on channels
    (0: out_c, 1: out_d, 2: herald); a 2D one produces two-folds on channels
    0 and 1. Each event sits in a distinct laser pulse; frequencies are drawn
    from the normalized histogram, uniform within the bin, mapped to arrival
    times through the dispersion and smeared by Gaussian jitter.

    Returns ``(stream, bookkeeping)``.
    """
    from .tags import TimeTagStream

    rng = np.random.default_rng(seed)
    t_rep = det.rep_period_ps
    n_pulses = int(duration * 1e12 // t_rep)
    grids = [expected.grid1, expected.grid2] + ([expected.herald_grid] if expected.is_heralded else [])
    fold = len(grids)
    occupancy = (rates.coincidences + np.asarray(rates.singles[:fold])) * t_rep * 1e-12
    if np.any(occupancy > 1.0):
        warnings.warn("rates exceed one event per pulse per channel; pile-up is not modeled")

    jitter_sigma = det.jitter_fwhm / FWHM_PER_SIGMA
    ts, ch = [], []

    def emit(channel, pulses, detunings):
        g = grids[channel]
        off = detuning_to_offset_ps(detunings, g.center, det)
        off = off + jitter_sigma * rng.standard_normal(off.shape)
        ts.append(pulses.astype(np.int64) * int(round(t_rep)) + np.rint(off).astype(np.int64))
        ch.append(np.full(pulses.shape, channel, dtype=np.uint8))

    w = expected.counts.ravel()
    n_ev = int(rng.poisson(rates.coincidences * duration))
    pulses = _unique_pulses(rng, n_pulses, n_ev) if n_ev else np.zeros(0, np.int64)
    pulses = rng.permutation(pulses)
    flat = rng.choice(w.size, size=n_ev, p=w / w.sum()) if n_ev else np.zeros(0, np.int64)
    idx = np.unravel_index(flat, expected.counts.shape)
    for c, g in enumerate(grids):
        det_c = g.detuning(idx[c]) + (rng.uniform(size=n_ev) - 0.5) * g.step
        emit(c, pulses, det_c)

    singles = []
    for c, g in enumerate(grids):
        n_s = int(rng.poisson(rates.singles[c] * duration))
        singles.append(n_s)
        if n_s == 0:
            continue
        marg = expected.counts.sum(axis=tuple(a for a in range(fold) if a != c))
        k = rng.choice(g.n_bins, size=n_s, p=marg / marg.sum())
        emit(c, rng.integers(1, n_pulses, size=n_s), g.detuning(k) + (rng.uniform(size=n_s) - 0.5) * g.step)

    t = np.concatenate(ts) if ts else np.zeros(0, np.int64)
    c = np.concatenate(ch) if ch else np.zeros(0, np.uint8)
    if np.any(t < 0):
        raise ValueError("negative timestamp: dispersion spread exceeds one pulse period")
    order = np.lexsort((c, t))
    stream = TimeTagStream(t[order].astype(np.uint64), c[order], det.rep_period)
    book = {"fold": fold, "coincidences": n_ev, "singles": singles, "pulses": n_pulses}
    return stream, book
