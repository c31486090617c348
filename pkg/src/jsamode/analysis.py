"""Derived quantities: Schmidt decomposition, g2 prediction, chirp fit,
fringe visibility and state overlap."""

from __future__ import annotations

import heapq
import io
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import FrequencyGrid, Interferogram, Jsa, SpectralMode
from .reconstruction import NoSidebandError, locate_sideband

UNWRAP_LEVEL = 0.05


@dataclass(frozen=True)
class SchmidtResult:
    """Schmidt coefficients λₖ (Σλₖ² = 1, descending) and mode pairs."""

    coefficients: np.ndarray
    modes1: Tuple[SpectralMode, ...]
    modes2: Tuple[SpectralMode, ...]

    @property
    def K(self) -> float:
        return float(1.0 / np.sum(self.coefficients**4))

    @property
    def entropy(self) -> float:
        p = self.coefficients**2
        p = p[p > 0]
        return float(-np.sum(p * np.log2(p)))


def schmidt(jsa: Jsa, n_modes: Optional[int] = None) -> SchmidtResult:
    """SVD of f with the grid measure, so K is stable under grid refinement."""
    if not np.any(jsa.f):
        raise ValueError("cannot decompose a zero JSA")
    d1, d2 = jsa.grid1.step, jsa.grid2.step
    u, s, vh = np.linalg.svd(jsa.f * math.sqrt(d1 * d2), full_matrices=False)
    lam = s / math.sqrt(np.sum(s**2))
    k = len(lam) if n_modes is None else min(n_modes, len(lam))
    m1 = tuple(SpectralMode(jsa.grid1, u[:, i] / math.sqrt(d1)) for i in range(k))
    m2 = tuple(SpectralMode(jsa.grid2, vh[i] / math.sqrt(d2)) for i in range(k))
    return SchmidtResult(lam, m1, m2)


def schmidt_number(jsa: Jsa) -> float:
    return schmidt(jsa, n_modes=0).K


def g2_predicted(K: float) -> float:
    """Heralding-arm autocorrelation of a K-mode pair source, 1 + 1/K."""
    if not K >= 1:
        raise ValueError(f"Schmidt number must be >= 1, got {K}")
    return 1.0 + 1.0 / K


def overlap(a: Jsa, b: Jsa) -> float:
    """|⟨a|b⟩|² / (‖a‖²‖b‖²), blind to a global phase."""
    if a.grid1 != b.grid1 or a.grid2 != b.grid2:
        raise ValueError("overlap needs JSAs on identical grids")
    num = abs(np.vdot(a.f, b.f)) ** 2
    den = np.vdot(a.f, a.f).real * np.vdot(b.f, b.f).real
    if den == 0:
        raise ValueError("overlap of a zero JSA")
    return float(num / den)


def mode_overlap(a: SpectralMode, b: SpectralMode) -> float:
    if a.grid != b.grid:
        raise ValueError("overlap needs modes on identical grids")
    num = abs(np.vdot(a.amp, b.amp)) ** 2
    den = np.vdot(a.amp, a.amp).real * np.vdot(b.amp, b.amp).real
    if den == 0:
        raise ValueError("overlap of a zero mode")
    return float(num / den)


# ---------------------------------------------------------------- chirp

class UnwrapError(ArithmeticError):
    pass


def unwrap_phase_2d(f: np.ndarray, level: float = UNWRAP_LEVEL):
    """Quality-guided 2D unwrap seeded at max |f|.

    Bins below ``level`` of the peak amplitude are rejected. Returns
    ``(phase, accepted_mask)``; raises :class:`UnwrapError` if two accepted
    neighbours still differ by more than π.
    """
    amp = np.abs(f)
    raw = np.angle(f)
    ok = amp >= level * amp.max()
    n1, n2 = f.shape
    out = np.zeros(f.shape)
    done = np.zeros(f.shape, bool)
    seed = np.unravel_index(np.argmax(amp), f.shape)
    out[seed] = raw[seed]
    done[seed] = True
    heap = []

    def push(i, j):
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < n1 and 0 <= b < n2 and ok[a, b] and not done[a, b]:
                heapq.heappush(heap, (-amp[a, b], a, b, i, j))

    push(*seed)
    while heap:
        _, a, b, i, j = heapq.heappop(heap)
        if done[a, b]:
            continue
        ref = out[i, j]
        out[a, b] = raw[a, b] + 2 * np.pi * np.round((ref - raw[a, b]) / (2 * np.pi))
        done[a, b] = True
        push(a, b)
    for axis in (0, 1):
        both = done & np.roll(done, -1, axis=axis)
        if axis == 0:
            both[-1, :] = False
        else:
            both[:, -1] = False
        jump = np.abs(np.roll(out, -1, axis=axis) - out)[both]
        if jump.size and jump.max() > np.pi:
            raise UnwrapError(f"phase unwrap failed: jump of {jump.max():.2f} rad between accepted bins")
    return out, done


@dataclass(frozen=True)
class ChirpFit:
    beta: float  # fs²
    stderr: float
    coefficients: np.ndarray  # c0, c1, c2, c11, c22, -beta
    rms_residual: float  # rad, |f|²-weighted
    n_bins: int


def fit_chirp(jsa: Jsa, level: float = UNWRAP_LEVEL) -> ChirpFit:
    """Weighted fit of arg f to c₀ + c₁ω₁ + c₂ω₂ + c₁₁ω₁² + c₂₂ω₂² − βω₁ω₂.

    Weights are |f|²; the separable quadratic terms absorb pump-like chirp so
    only the correlated term is reported as β. ``stderr`` is the formal
    least-squares error; it treats bins as independent and so understates
    the scatter of reconstructions whose bins were correlated by filtering.
    """
    phase, acc = unwrap_phase_2d(jsa.f, level)
    w1, w2 = np.meshgrid(jsa.grid1.detunings, jsa.grid2.detunings, indexing="ij")
    x1, x2, y = w1[acc], w2[acc], phase[acc]
    wt = np.abs(jsa.f[acc]) ** 2
    X = np.column_stack([np.ones_like(x1), x1, x2, x1**2, x2**2, -x1 * x2])
    p = X.shape[1]
    if y.size <= p:
        raise ValueError("too few bins above the amplitude threshold for a chirp fit")
    sw = np.sqrt(wt / wt.max())
    # column scaling keeps the normal equations well conditioned
    cs = np.max(np.abs(X), axis=0)
    A = X / cs * sw[:, None]
    coef, *_ = np.linalg.lstsq(A, y * sw, rcond=None)
    r = y * sw - A @ coef
    s2 = float(r @ r) / (y.size - p)
    cov = s2 * np.linalg.inv(A.T @ A)
    coef = coef / cs
    se = np.sqrt(np.diag(cov)) / cs
    rms = float(np.sqrt(np.sum(wt * (y - X @ coef) ** 2) / wt.sum()))
    return ChirpFit(float(coef[5]), float(se[5]), coef, rms, int(y.size))


# ---------------------------------------------------------------- visibility

class InsufficientFringesError(ValueError):
    pass


def antidiagonal_profile(g: Interferogram) -> np.ndarray:
    """Counts along ω₂ − ω₁ through the intensity centroid of the pattern."""
    c = g.marginal().counts
    tot = c.sum()
    if tot <= 0:
        raise InsufficientFringesError("interferogram is empty")
    i0 = int(round(np.sum(np.arange(c.shape[0]) * c.sum(axis=1)) / tot))
    j0 = int(round(np.sum(np.arange(c.shape[1]) * c.sum(axis=0)) / tot))
    ks = np.arange(-min(i0, c.shape[1] - 1 - j0), min(c.shape[0] - 1 - i0, j0) + 1)
    return c[i0 + ks, j0 - ks]


def fringe_visibility(g: Interferogram, tau: Optional[float] = None, pad: int = 8) -> float:
    """Fringe contrast of the antidiagonal profile.

    The profile ``E(u)(1 + V cos(2τu))`` is split in its spectrum into the
    envelope lobe and the fringe lobe; ``V = 2·sqrt(E_fringe / E_envelope)``
    with one-sided lobe energies. This is the contrast (max−min)/(max+min)
    of the envelope-normalized fringes.
    """
    if tau is None:
        try:
            _, tau = locate_sideband(g)
        except NoSidebandError as e:
            raise InsufficientFringesError(f"insufficient fringes: {e}") from e
    tau = abs(float(tau))
    prof = antidiagonal_profile(g)
    step = g.grid1.step
    lit = np.nonzero(prof > 0.01 * prof.max())[0]
    extent = (lit[-1] - lit[0]) * step if lit.size else 0.0
    # fringe period along u is π/τ
    if tau == 0 or extent * tau / np.pi < 2:
        raise InsufficientFringesError("insufficient fringes: fewer than two periods in the profile")
    n = pad * prof.size
    P = np.fft.rfft(prof, n)
    k = 2 * np.pi * np.fft.rfftfreq(n, d=step)
    kf = 2 * tau
    if kf >= k[-1]:
        raise InsufficientFringesError("fringe frequency beyond the sampling limit")
    e = np.abs(P) ** 2
    env = e[0] + 2 * e[(k > 0) & (k < kf / 2)].sum()
    side = e[k >= kf / 2].sum()
    return float(min(1.0, 2 * math.sqrt(side / env)))


# ---------------------------------------------------------------- reports

@dataclass
class AnalysisReport:
    schmidt: SchmidtResult
    K_amplitude: float
    chirp: Optional[ChirpFit]
    chirp_error: Optional[str] = None
    visibility: Optional[float] = None

    @property
    def K(self) -> float:
        return self.schmidt.K

    def text(self, n_coeffs: int = 10) -> str:
        lines = [f"schmidt_number_complex: {self.K:.6f}",
                 f"schmidt_number_amplitude_only: {self.K_amplitude:.6f}",
                 f"g2_predicted: {g2_predicted(self.K):.6f}",
                 f"entanglement_entropy_bits: {self.schmidt.entropy:.6f}"]
        if self.chirp is not None:
            lines += [f"beta_fs2: {self.chirp.beta:.6g}",
                      f"beta_stderr_fs2: {self.chirp.stderr:.3g}",
                      f"phase_fit_rms_rad: {self.chirp.rms_residual:.4g}"]
        else:
            lines.append(f"beta_fs2: unavailable ({self.chirp_error})")
        if self.visibility is not None:
            lines.append(f"fringe_visibility: {self.visibility:.6f}")
        lam = self.schmidt.coefficients[:n_coeffs]
        lines.append("schmidt_coefficients: " + " ".join(f"{x:.6g}" for x in lam))
        return "\n".join(lines) + "\n"

    def coefficients_csv(self, config_hash: Optional[str] = None) -> str:
        out = io.StringIO()
        if config_hash:
            out.write(f"# config_hash={config_hash}\n")
        out.write("k,lambda,lambda_squared\n")
        for i, x in enumerate(self.schmidt.coefficients):
            out.write(f"{i},{x:.17g},{x * x:.17g}\n")
        return out.getvalue()


def analyze(jsa: Jsa, interferogram: Optional[Interferogram] = None) -> AnalysisReport:
    res = schmidt(jsa)
    K_abs = schmidt(jsa.abs()).K
    chirp, err = None, None
    try:
        chirp = fit_chirp(jsa)
    except (UnwrapError, ValueError) as e:
        err = str(e)
    vis = fringe_visibility(interferogram) if interferogram is not None else None
    return AnalysisReport(res, K_abs, chirp, err, vis)


def fourier_magnitude(counts: np.ndarray, grid1: FrequencyGrid, grid2: FrequencyGrid):
    """Centered |2D FT| with its time axes (fs), for plotting."""
    F = np.fft.fftshift(np.abs(np.fft.fft2(counts)))
    t1 = np.fft.fftshift(grid1.time_axis(counts.shape[0]))
    t2 = np.fft.fftshift(grid2.time_axis(counts.shape[1]))
    return t1, t2, F
