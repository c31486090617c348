"""Inversion of measured interferograms.

The interference term of an interferogram sits in a sideband of its 2D Fourier
transform, displaced from the baseband by the reference delay. Windowing that
sideband, dividing out the reference and diagonalizing yields the signal's
spectral density matrix; heralded cross-sections are then stitched into a
complex JSA.

Fourier convention: ``F(t₁, t₂) = ΣΣ g(ω₁, ω₂) exp(-i(ω₁t₁ + ω₂t₂))`` so the
term proportional to ``exp(i(ω₂-ω₁)τ)`` lands at ``(t₁, t₂) = (-τ, +τ)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .core import FrequencyGrid, Interferogram, Jsa, SpectralMode, _check_same_grid
from .forward import delayed_reference

PAD_LOCATE = 4
PAD_FILTER = 2
NOISE_FLOOR_FACTOR = 5.0
RELATIVE_FLOOR = 1e-3  # of the DC term; noiseless data has a round-off median, edge leakage sits near 1e-4
DEFAULT_THRESHOLD = 0.05
SUPPORT_LEVEL = 0.05
MAX_MASKED_FRACTION = 0.5
STITCH_TOL = 1e-8
STITCH_MAX_ITER = 20000


class NoSidebandError(ArithmeticError):
    """No interference sideband stands out of the Fourier-plane noise."""


class ReferenceTooNarrowError(ValueError):
    """The reference spectrum leaves most of the signal support masked."""


# ---------------------------------------------------------------- filter

@dataclass(frozen=True)
class FilterSpec:
    """Fourier-plane window.

    ``shape`` is ``"tukey"`` (flat top with cosine edges; ``widths`` are the
    support half-widths and ``taper`` the tapered fraction) or ``"gaussian"``
    (``widths`` are standard deviations).
    """

    center: Tuple[float, float]
    widths: Tuple[float, float]
    shape: str = "tukey"
    taper: float = 0.4

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(x) for x in self.center))
        object.__setattr__(self, "widths", tuple(float(x) for x in self.widths))
        if self.shape not in ("tukey", "gaussian"):
            raise ValueError(f"unknown window shape {self.shape!r}")
        if min(self.widths) <= 0:
            raise ValueError("filter widths must be positive")
        if not 0 <= self.taper <= 1:
            raise ValueError("taper must lie in [0, 1]")
        (c1, c2), (w1, w2) = self.center, self.widths
        if self.shape == "gaussian":
            if math.hypot(c1 / w1, c2 / w2) < 3.0:
                raise ValueError("filter overlaps the baseband: center is within 3 widths of the origin")
        elif abs(c1) <= w1 or abs(c2) <= w2:
            raise ValueError("filter overlaps the baseband: window support reaches a time axis")

    def conjugate(self) -> "FilterSpec":
        """Same window on the mirrored sideband."""
        return FilterSpec((-self.center[0], -self.center[1]), self.widths, self.shape, self.taper)

    def window(self, t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
        return np.outer(self._window1(t1, 0), self._window1(t2, 1))

    def _window1(self, t: np.ndarray, axis: int) -> np.ndarray:
        x = np.abs(np.asarray(t, dtype=float) - self.center[axis])
        w = self.widths[axis]
        if self.shape == "gaussian":
            return np.exp(-0.5 * (x / w) ** 2)
        flat = w * (1 - self.taper)
        out = np.where(x <= flat, 1.0, 0.0)
        if self.taper > 0:
            edge = (x > flat) & (x < w)
            out[edge] = 0.5 * (1 + np.cos(np.pi * (x[edge] - flat) / (w - flat)))
        return out


TUKEY_HALF_WIDTH = 0.4  # in units of τ; wider windows pass more shot noise into Φ̂


def default_filter(tau: float, shape: str = "tukey") -> FilterSpec:
    """Window on the (-τ, +τ) sideband: Tukey of half-width 0.4τ, or Gaussian σ = τ/4.

    The Tukey default assumes the sideband lobe lies within about ±0.25τ of its
    center; for short delays or strongly chirped signals pass a wider window.
    """
    tau = abs(float(tau))
    if tau == 0:
        raise ValueError("delay must be nonzero to separate the sideband")
    if shape == "gaussian":
        return FilterSpec((-tau, tau), (tau / 4, tau / 4), "gaussian")
    w = TUKEY_HALF_WIDTH * tau
    return FilterSpec((-tau, tau), (w, w), "tukey", 0.4)


def _time_axes(g: Interferogram, pad: int):
    n1, n2 = g.grid1.n_bins * pad, g.grid2.n_bins * pad
    return g.grid1.time_axis(n1), g.grid2.time_axis(n2), n1, n2


# ---------------------------------------------------------------- sideband location

def _parabolic(ym, y0, yp) -> float:
    den = ym - 2 * y0 + yp
    return 0.0 if den == 0 else 0.5 * (ym - yp) / den


def _rms_width(x: np.ndarray, w: np.ndarray) -> float:
    w = np.clip(w, 0, None)
    s = w.sum()
    if s <= 0:
        return 0.0
    m = np.sum(x * w) / s
    return float(np.sqrt(np.sum((x - m) ** 2 * w) / s))


def baseband_extent(g: Interferogram) -> Tuple[float, float]:
    """Time extent (fs) of the baseband, from the spectral widths of the marginals."""
    c = g.marginal().counts
    out = []
    for axis, grid in ((1, g.grid1), (0, g.grid2)):
        width = _rms_width(grid.detunings, c.sum(axis=axis))
        out.append(4.0 / width if width > 0 else np.inf)
    return out[0], out[1]


def locate_sideband(g: Interferogram, pad: int = PAD_LOCATE):
    """Peak of |F| in the t₁<0, t₂>0 quadrant outside the baseband.

    The noise floor is the median of |F| over that quadrant, but never less
    than ``RELATIVE_FLOOR`` of the DC term, so that truncation leakage in
    noiseless data does not pass as a sideband.

    Returns ``((t₁, t₂), τ̂)`` with sub-bin peak position from parabolic
    interpolation of log|F| along each axis.
    """
    counts = g.marginal().counts
    t1, t2, n1, n2 = _time_axes(g, pad)
    F = np.abs(np.fft.fft2(counts, s=(n1, n2)))
    e1, e2 = baseband_extent(g)
    region = (t1[:, None] < -e1) & (t2[None, :] > e2)
    if not region.any():
        raise NoSidebandError("no sideband: baseband fills the Fourier plane")
    vals = np.where(region, F, -np.inf)
    k1, k2 = np.unravel_index(np.argmax(vals), F.shape)
    peak = F[k1, k2]
    floor = max(float(np.median(F[region])), RELATIVE_FLOOR * float(F[0, 0]))
    interior = all(region[(k1 + d1) % n1, (k2 + d2) % n2]
                   for d1, d2 in ((-1, 0), (1, 0), (0, -1), (0, 1)))
    if not interior or not peak > NOISE_FLOOR_FACTOR * floor:
        raise NoSidebandError(
            f"no sideband: peak {peak:.3g} at ({t1[k1]:.0f}, {t2[k2]:.0f}) fs "
            f"is not an isolated maximum above {NOISE_FLOOR_FACTOR}x the noise floor {floor:.3g}")
    logF = np.log(np.maximum(F, np.finfo(float).tiny))
    d1 = _parabolic(logF[(k1 - 1) % n1, k2], logF[k1, k2], logF[(k1 + 1) % n1, k2])
    d2 = _parabolic(logF[k1, (k2 - 1) % n2], logF[k1, k2], logF[k1, (k2 + 1) % n2])
    dt1 = t1[1] - t1[0]
    dt2 = t2[1] - t2[0]
    c1 = t1[k1] + d1 * dt1
    c2 = t2[k2] + d2 * dt2
    return (float(c1), float(c2)), float((c2 - c1) / 2)


# ---------------------------------------------------------------- filtering

def fourier_filter(g: Interferogram, spec: FilterSpec, pad: int = PAD_FILTER) -> np.ndarray:
    """Estimate Γ(ω₁, ω₂) (density units, Δω² removed) from the windowed sideband.

    A heralded interferogram is filtered slice by slice and returns a
    ``(n₁, n₂, n_h)`` array.
    """
    t1, t2, n1, n2 = _time_axes(g, pad)
    win = spec.window(t1, t2)
    scale = -4.0 / (g.grid1.step * g.grid2.step)
    c = g.counts
    nb1, nb2 = g.grid1.n_bins, g.grid2.n_bins
    if c.ndim == 2:
        F = np.fft.fft2(c, s=(n1, n2))
        return scale * np.fft.ifft2(F * win)[:nb1, :nb2]
    out = np.zeros(c.shape, dtype=complex)
    step = 16
    for j0 in range(0, c.shape[2], step):
        blk = c[:, :, j0:j0 + step]
        live = blk.reshape(-1, blk.shape[2]).any(axis=0)
        if not live.any():
            continue
        F = np.fft.fft2(blk, s=(n1, n2), axes=(0, 1))
        out[:, :, j0:j0 + step] = scale * np.fft.ifft2(F * win[:, :, None], axes=(0, 1))[:nb1, :nb2]
    return out


def estimate_signal_intensity(g: Interferogram, reference: SpectralMode, tau: float,
                              pad: int = PAD_FILTER) -> np.ndarray:
    """Signal spectral density from the baseband, for support bookkeeping.

    Low-passes the interferogram, removes the known reference-reference term
    and solves ``R = I_a ⊗ x + x ⊗ I_a`` for ``x`` by projection on ``I_a``.
    """
    m = g.marginal()
    t1, t2, n1, n2 = _time_axes(m, pad)
    half = 0.5 * abs(tau) if tau else np.inf
    lp = np.outer(np.abs(t1) < half, np.abs(t2) < half)
    F = np.fft.fft2(m.counts, s=(n1, n2))
    base = np.real(np.fft.ifft2(F * lp)[:m.grid1.n_bins, :m.grid2.n_bins])
    base = 4.0 * base / (m.grid1.step * m.grid2.step)
    ia = np.abs(reference.amp) ** 2
    r = base - np.outer(ia, ia)
    nn = float(ia @ ia)
    if nn == 0:
        raise ValueError("reference is identically zero")
    v = r @ ia / nn
    x = v - ia * (v @ ia) / (2 * nn)
    return np.clip(x, 0, None)


# ---------------------------------------------------------------- reference division

@dataclass(frozen=True)
class Modes:
    """Eigen-decomposition of an estimated density matrix."""

    weights: np.ndarray  # descending, sum 1
    modes: Tuple[SpectralMode, ...]
    trace: float  # Σ positive eigenvalues before normalization
    clipped_mass: float  # |Σ negative eigenvalues| / Σ |eigenvalues|

    @property
    def purity(self) -> float:
        return float(self.weights[0])

    def leading_amplitude(self) -> np.ndarray:
        """√(λ₁)·mode₁ with the unnormalized leading eigenvalue."""
        return math.sqrt(self.trace * self.weights[0]) * self.modes[0].amp


@dataclass(frozen=True)
class ModeEstimate:
    """Reference-divided sideband Φ̂ ≈ ρ(ω₁, ω₂), Hermitian-symmetrized."""

    grid: FrequencyGrid
    phi: np.ndarray
    mask: np.ndarray
    hermiticity_residual: float
    masked_fraction: float
    _modes: Optional[Modes] = field(default=None, repr=False, compare=False)

    @property
    def decomposition(self) -> Modes:
        if self._modes is None:
            object.__setattr__(self, "_modes", extract_modes(self))
        return self._modes

    @property
    def purity(self) -> float:
        return self.decomposition.purity


def _support_mask(intensity: np.ndarray) -> np.ndarray:
    s = intensity >= SUPPORT_LEVEL * intensity.max() if intensity.max() > 0 else np.zeros_like(intensity, bool)
    return np.outer(s, s)


def remove_reference(gamma: np.ndarray, reference: SpectralMode, tau: float,
                     threshold: float = DEFAULT_THRESHOLD,
                     reference_phase: Optional[np.ndarray] = None,
                     signal_intensity: Optional[np.ndarray] = None) -> ModeEstimate:
    """Divide Γ̂ by ``α*(ω₁) α(ω₂) exp(i(ω₂-ω₁)τ)`` where the reference is strong enough.

    Bins where ``|α| < threshold·max|α|`` on either axis are masked to zero.
    ``reference_phase`` (radians per bin) is applied to α if the reference is
    known to be chirped. ``signal_intensity`` defines the support over which
    the masked fraction is measured; without it the whole grid is used and
    the narrow-reference check is skipped.
    """
    gamma = np.asarray(gamma, dtype=complex)
    grid = reference.grid
    if gamma.shape != (grid.n_bins, grid.n_bins):
        raise ValueError(f"Γ̂ shape {gamma.shape} does not match reference grid")
    ref = reference if reference_phase is None else \
        SpectralMode(grid, reference.amp * np.exp(1j * np.asarray(reference_phase)))
    a = delayed_reference(ref, tau)
    amag = np.abs(a)
    if amag.max() == 0:
        raise ValueError("reference is identically zero")
    keep = amag >= threshold * amag.max()
    mask = np.outer(keep, keep)
    den = np.outer(a.conj(), a)
    phi = np.zeros_like(gamma)
    phi[mask] = gamma[mask] / den[mask]
    norm = np.linalg.norm(phi)
    resid = float(np.linalg.norm(phi - phi.conj().T) / (2 * norm)) if norm > 0 else 0.0
    phi = 0.5 * (phi + phi.conj().T)
    if signal_intensity is None:
        frac = float(1.0 - mask.mean())
    else:
        supp = _support_mask(np.asarray(signal_intensity, dtype=float))
        n_supp = int(supp.sum())
        frac = float((supp & ~mask).sum() / n_supp) if n_supp else 0.0
        if frac > MAX_MASKED_FRACTION:
            raise ReferenceTooNarrowError(
                f"reference too narrow: {100 * frac:.0f}% of signal-support bins are "
                f"below {threshold:g} of the peak reference amplitude")
    return ModeEstimate(grid, phi, mask, resid, frac)


def _phase_convention(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    return v * np.exp(-1j * np.angle(v[k]))


def extract_modes(est: ModeEstimate) -> Modes:
    """Diagonalize Φ̂Δω; negative eigenvalues are clipped and their mass reported."""
    step = est.grid.step
    if not np.any(est.phi):
        raise ValueError("cannot extract modes from an all-zero estimate")
    lam, vecs = np.linalg.eigh(est.phi * step)
    order = np.argsort(lam)[::-1]
    lam, vecs = lam[order], vecs[:, order]
    pos = np.clip(lam, 0, None)
    total = pos.sum()
    if total <= 0:
        raise ValueError("estimate has no positive eigenvalue")
    clipped = float(-lam[lam < 0].sum() / np.abs(lam).sum())
    keep = pos > 1e-14 * total
    w = pos[keep] / total
    modes = tuple(SpectralMode(est.grid, _phase_convention(v) / math.sqrt(step))
                  for v in vecs[:, keep].T)
    return Modes(w, modes, float(total), clipped)


# ---------------------------------------------------------------- stitching

@dataclass
class StitchReport:
    iterations: int = 0
    residual: float = 0.0
    components: int = 1
    underdetermined: bool = False
    component_labels: Optional[np.ndarray] = None  # per bin, -1 where unsupported
    discrepancy: Optional[np.ndarray] = None  # |e^{iθ}A - e^{iφ}B| / max|f|
    stitched: bool = True


def _normalized(m: np.ndarray, measure: float) -> np.ndarray:
    n = np.sqrt(np.sum(np.abs(m) ** 2) * measure)
    if n == 0:
        raise ValueError("cross-section matrix is all zero")
    return m / n


def _fix_global_phase(f: np.ndarray, grid1: FrequencyGrid, grid2: FrequencyGrid) -> np.ndarray:
    i0, j0 = grid1.zero_index(), grid2.zero_index()
    ref = f[i0, j0]
    if abs(ref) < 1e-6 * np.abs(f).max():
        ref = f.flat[np.argmax(np.abs(f))]
    return f * np.exp(-1j * np.angle(ref))


def assemble_jsa(grid1: FrequencyGrid, grid2: FrequencyGrid, cols: np.ndarray,
                 rows: Optional[np.ndarray] = None, min_weight: float = 1e-4,
                 tol: float = STITCH_TOL, max_iter: int = STITCH_MAX_ITER):
    """Stitch column-wise and row-wise cross-sections into one complex JSA.

    ``cols[:, j]`` is f(·, ω₂ⱼ) up to a phase θⱼ and ``rows[i, :]`` is
    f(ωᵢ, ·) up to a phase φᵢ. The phases minimize
    ``Σ w |e^{iθⱼ}Aᵢⱼ - e^{iφᵢ}Bᵢⱼ|²`` with ``w = |A||B|`` by alternating
    updates. Amplitudes are the geometric mean of |A| and |B|, the output is
    normalized with arg f = 0 at the bin nearest zero detuning.

    Returns ``(Jsa, StitchReport)``. Disconnected support is stitched per
    component and flagged as underdetermined.
    """
    measure = grid1.step * grid2.step
    A = _normalized(np.asarray(cols, dtype=complex), measure)
    if A.shape != (grid1.n_bins, grid2.n_bins):
        raise ValueError("cross-section matrix does not match the grids")
    if rows is None:
        f = _fix_global_phase(A, grid1, grid2)
        return Jsa(grid1, grid2, f).normalize(), StitchReport(stitched=False)
    B = _normalized(np.asarray(rows, dtype=complex), measure)
    if B.shape != A.shape:
        raise ValueError("row and column cross-sections differ in shape")

    w = np.abs(A) * np.abs(B)
    wmax = w.max()
    if wmax == 0:
        raise ValueError("row and column cross-sections do not overlap")
    w = np.where(w >= min_weight * wmax, w, 0.0)
    n1, n2 = A.shape
    graph = csr_matrix(w > 0)
    big = csr_matrix((np.ones(graph.nnz), (graph.nonzero()[0], graph.nonzero()[1] + n1)),
                     shape=(n1 + n2, n1 + n2))
    n_comp, labels = connected_components(big, directed=False)
    active_r = w.sum(axis=1) > 0
    active_c = w.sum(axis=0) > 0
    used = set(labels[:n1][active_r]) | set(labels[n1:][active_c])

    wa = w * A
    wb = w * B
    theta = np.zeros(n2)
    phi = np.zeros(n1)
    it = 0
    for it in range(1, max_iter + 1):
        # θⱼ = arg Σᵢ w conj(A) e^{iφ} B ; φᵢ = arg Σⱼ w conj(B) e^{iθ} A
        new_theta = np.angle(np.sum(np.conj(A) * wb * np.exp(1j * phi)[:, None], axis=0))
        new_phi = np.angle(np.sum(np.conj(B) * wa * np.exp(1j * new_theta)[None, :], axis=1))
        new_theta = np.where(active_c, new_theta, 0.0)
        new_phi = np.where(active_r, new_phi, 0.0)
        d = max(np.max(np.abs(np.angle(np.exp(1j * (new_theta - theta))))),
                np.max(np.abs(np.angle(np.exp(1j * (new_phi - phi))))))
        theta, phi = new_theta, new_phi
        if d < tol:
            break
    # gauge: first active column of each component has θ = 0
    for comp in used:
        cidx = np.nonzero((labels[n1:] == comp) & active_c)[0]
        ridx = np.nonzero((labels[:n1] == comp) & active_r)[0]
        if cidx.size == 0:
            continue
        g0 = theta[cidx[0]]
        theta[cidx] -= g0
        phi[ridx] -= g0

    Ar = A * np.exp(1j * theta)[None, :]
    Br = B * np.exp(1j * phi)[:, None]
    amp = np.sqrt(np.abs(A) * np.abs(B))
    f = amp * np.exp(1j * np.angle(Ar + Br))
    diff = Ar - Br
    den = np.sum(w * (np.abs(A) ** 2 + np.abs(B) ** 2))
    resid = float(np.sum(w * np.abs(diff) ** 2) / den) if den > 0 else 0.0
    comp_map = np.full(A.shape, -1)
    nz = w > 0
    comp_map[nz] = labels[:n1][np.nonzero(nz)[0]]
    report = StitchReport(iterations=it, residual=resid, components=len(used),
                          underdetermined=len(used) > 1, component_labels=comp_map,
                          discrepancy=np.abs(diff) / max(np.abs(f).max(), 1e-300))
    f = _fix_global_phase(f, grid1, grid2)
    return Jsa(grid1, grid2, f).normalize(), report


# ---------------------------------------------------------------- pipelines

@dataclass
class ReconstructionReport:
    tau: float = 0.0
    sideband: Tuple[float, float] = (0.0, 0.0)
    filter: Optional[FilterSpec] = None
    slices_used: int = 0
    slices_skipped: int = 0
    hermiticity_residual: float = 0.0
    masked_fraction: float = 0.0
    clipped_mass: float = 0.0
    min_purity: float = 1.0
    stitch: Optional[StitchReport] = None

    def text(self) -> str:
        lines = [
            f"tau_fs: {self.tau:.6g}",
            f"sideband_fs: {self.sideband[0]:.6g} {self.sideband[1]:.6g}",
            f"filter: {self.filter}",
            f"slices_used: {self.slices_used}",
            f"slices_skipped: {self.slices_skipped}",
            f"hermiticity_residual_max: {self.hermiticity_residual:.3e}",
            f"masked_fraction_max: {self.masked_fraction:.4f}",
            f"clipped_eigenmass_max: {self.clipped_mass:.3e}",
            f"min_purity: {self.min_purity:.6f}",
        ]
        if self.stitch is not None:
            s = self.stitch
            lines += [f"stitched: {s.stitched}",
                      f"stitching_residual: {s.residual:.3e}",
                      f"stitching_iterations: {s.iterations}",
                      f"stitching_components: {s.components}",
                      f"stitching_underdetermined: {s.underdetermined}"]
        return "\n".join(lines) + "\n"


def _resolve_delay(g: Interferogram, tau: Optional[float], spec: Optional[FilterSpec],
                   report: ReconstructionReport):
    if tau is None:
        report.sideband, tau = locate_sideband(g)
    else:
        report.sideband = (-float(tau), float(tau))
    spec = default_filter(tau) if spec is None else spec
    report.tau, report.filter = float(tau), spec
    return tau, spec


def _cross_sections(h: Interferogram, reference: SpectralMode, tau: float, spec: FilterSpec,
                    threshold: float, reference_phase, min_slice_fraction: float,
                    report: ReconstructionReport, workers: int = 1) -> np.ndarray:
    _check_same_grid(h.grid1, reference.grid, "interferogram and reference grids")
    gam = fourier_filter(h, spec)
    x = estimate_signal_intensity(h, reference, tau)
    totals = h.counts.sum(axis=(0, 1))
    live = [j for j in range(h.herald_grid.n_bins) if totals[j] > min_slice_fraction * totals.max()]
    report.slices_skipped += h.herald_grid.n_bins - len(live)

    def one(j):
        est = remove_reference(gam[:, :, j], reference, tau, threshold, reference_phase, x)
        try:
            return est, est.decomposition
        except ValueError:
            return est, None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, live))
    else:
        results = [one(j) for j in live]
    out = np.zeros((h.grid1.n_bins, h.herald_grid.n_bins), dtype=complex)
    # reduce in slice order so the report does not depend on scheduling
    for j, (est, m) in zip(live, results):
        if m is None:
            report.slices_skipped += 1
            continue
        out[:, j] = m.leading_amplitude()
        report.slices_used += 1
        report.hermiticity_residual = max(report.hermiticity_residual, est.hermiticity_residual)
        report.masked_fraction = max(report.masked_fraction, est.masked_fraction)
        report.clipped_mass = max(report.clipped_mass, m.clipped_mass)
        report.min_purity = min(report.min_purity, m.purity)
    return out


def reconstruct_heralded(h_a: Interferogram, reference_a: SpectralMode,
                         h_b: Optional[Interferogram] = None,
                         reference_b: Optional[SpectralMode] = None,
                         tau: Optional[float] = None, spec: Optional[FilterSpec] = None,
                         threshold: float = DEFAULT_THRESHOLD,
                         reference_phase=None, min_slice_fraction: float = 1e-3,
                         workers: int = 1):
    """Complex JSA from heralded histograms.

    ``h_a`` interferes photon 1 heralded on photon 2 and gives the columns;
    ``h_b`` is the swapped measurement (photon 2 interfered, photon 1 heralds)
    and gives the rows. Without ``h_b`` the per-column phases stay unresolved.

    Returns ``(Jsa, ReconstructionReport)``.
    """
    if not h_a.is_heralded:
        raise ValueError("heralded reconstruction needs a 3D histogram")
    report = ReconstructionReport()
    tau, spec = _resolve_delay(h_a, tau, spec, report)
    cols = _cross_sections(h_a, reference_a, tau, spec, threshold, reference_phase,
                           min_slice_fraction, report, workers)
    rows = None
    if h_b is not None:
        if not h_b.is_heralded:
            raise ValueError("swapped measurement must be a 3D histogram")
        rb = reference_a if reference_b is None else reference_b
        rows = _cross_sections(h_b, rb, tau, spec, threshold, reference_phase,
                               min_slice_fraction, report, workers).T
    jsa, stitch = assemble_jsa(h_a.grid1, h_a.herald_grid, cols, rows)
    report.stitch = stitch
    return jsa, report


def reconstruct_mode(g: Interferogram, reference: SpectralMode, tau: Optional[float] = None,
                     spec: Optional[FilterSpec] = None, threshold: float = DEFAULT_THRESHOLD,
                     reference_phase=None):
    """Unheralded 2D interferogram -> :class:`ModeEstimate` (pure or mixed)."""
    report = ReconstructionReport()
    tau, spec = _resolve_delay(g, tau, spec, report)
    x = estimate_signal_intensity(g, reference, tau)
    est = remove_reference(fourier_filter(g, spec), reference, tau, threshold, reference_phase, x)
    m = est.decomposition
    report.slices_used = 1
    report.hermiticity_residual = est.hermiticity_residual
    report.masked_fraction = est.masked_fraction
    report.clipped_mass = m.clipped_mass
    report.min_purity = m.purity
    return est, report


def reconstruct_seeded(g_by_seed: Mapping[float, Interferogram], reference: SpectralMode,
                       seed_grid: FrequencyGrid, tau: Optional[float] = None,
                       spec: Optional[FilterSpec] = None, threshold: float = DEFAULT_THRESHOLD,
                       reference_phase=None):
    """Cross-sections f(·, ω_s) from seeded (coherent) interferograms.

    Seeds are keyed by detuning on ``seed_grid``; each fills the nearest
    column. Columns keep independent phases, so the result is stitched only
    trivially. Returns ``(Jsa, ReconstructionReport, {seed: SpectralMode})``.
    """
    if not g_by_seed:
        raise ValueError("no seeded interferograms given")
    first = next(iter(g_by_seed.values()))
    report = ReconstructionReport()
    cols = np.zeros((first.grid1.n_bins, seed_grid.n_bins), dtype=complex)
    modes: Dict[float, SpectralMode] = {}
    for ws, g in g_by_seed.items():
        est, r = reconstruct_mode(g, reference, tau, spec, threshold, reference_phase)
        j = int(seed_grid.index_of(ws))
        if not 0 <= j < seed_grid.n_bins:
            raise ValueError(f"seed detuning {ws} lies outside the seed grid")
        m = est.decomposition
        modes[ws] = m.modes[0]
        cols[:, j] = m.leading_amplitude()
        report.tau, report.sideband, report.filter = r.tau, r.sideband, r.filter
        report.slices_used += 1
        report.hermiticity_residual = max(report.hermiticity_residual, r.hermiticity_residual)
        report.masked_fraction = max(report.masked_fraction, r.masked_fraction)
        report.clipped_mass = max(report.clipped_mass, r.clipped_mass)
        report.min_purity = min(report.min_purity, r.min_purity)
    jsa, stitch = assemble_jsa(first.grid1, seed_grid, cols)
    report.stitch = stitch
    return jsa, report, modes
