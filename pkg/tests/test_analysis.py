import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jsamode.analysis import (
    InsufficientFringesError,
    UnwrapError,
    analyze,
    antidiagonal_profile,
    fit_chirp,
    fourier_magnitude,
    fringe_visibility,
    g2_predicted,
    mode_overlap,
    overlap,
    schmidt,
    schmidt_number,
    unwrap_phase_2d,
)
from jsamode.core import FrequencyGrid, Interferogram, Jsa, SpectralMode, gaussian_mode
from jsamode.forward import (
    Coherent,
    DetectorModel,
    SinglePhoton,
    Thermal,
    apply_detector_blur,
    expected_heralded_histogram,
    expected_interferogram,
    sample_counts,
)
from jsamode.reconstruction import reconstruct_heralded

from conftest import N_REF, REF_WIDTH, SPAN, TAU, heralded_setup

# overlap of f with f·exp(-iβω₁ω₂) at β = 1.69e5 fs² on the preset grid, frozen from direct evaluation
CHIRP_OVERLAP_GOLDEN = 0.9553425984116193


def correlated(jsa, beta):
    w1, w2 = np.meshgrid(jsa.grid1.detunings, jsa.grid2.detunings, indexing="ij")
    return Jsa(jsa.grid1, jsa.grid2, jsa.f * np.exp(-1j * beta * w1 * w2))


# ---------------------------------------------------------------- Schmidt

def test_separable_jsa_has_unit_schmidt_number(unchirped):
    _, jsa, _ = unchirped
    res = schmidt(jsa)
    assert res.K == pytest.approx(1.0, abs=1e-6)
    assert res.coefficients[0] == pytest.approx(1.0, abs=1e-9)
    assert np.sum(res.coefficients**2) == pytest.approx(1.0)
    assert res.entropy == pytest.approx(0.0, abs=1e-6)


def test_two_equal_modes_give_k_two(small_grid):
    a = gaussian_mode(small_grid, 1.5e-3).amp
    b = a * small_grid.detunings
    b = b / np.sqrt(np.sum(np.abs(b) ** 2) * small_grid.step)
    f = np.outer(a, a) + np.outer(b, b)
    res = schmidt(Jsa(small_grid, small_grid, f))
    assert res.K == pytest.approx(2.0, abs=1e-12)
    assert res.entropy == pytest.approx(1.0, abs=1e-9)
    assert res.coefficients[:2] == pytest.approx([2**-0.5, 2**-0.5])


def test_schmidt_modes_reconstruct_jsa(chirped):
    _, jsa, _ = chirped
    res = schmidt(jsa, n_modes=10)
    f = sum(c * np.outer(m1.amp, m2.amp) for c, m1, m2 in zip(res.coefficients, res.modes1, res.modes2))
    f = f / np.sqrt(np.sum(np.abs(f) ** 2) * jsa.measure)
    assert overlap(Jsa(jsa.grid1, jsa.grid2, f), jsa) == pytest.approx(1.0, abs=1e-10)
    for m in res.modes1:
        assert m.norm2 == pytest.approx(1.0)


def test_schmidt_number_is_grid_stable():
    vals = []
    for n in (64, 128, 192):
        _, jsa, _ = heralded_setup(2e5, n_bins=n)
        vals.append(schmidt_number(jsa))
    # differences shrink with the grid step; a bare SVD without the measure would not converge
    assert max(vals) - min(vals) < 1e-4
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0])


def test_zero_jsa_rejected(small_grid):
    with pytest.raises(ValueError):
        schmidt(Jsa(small_grid, small_grid, np.zeros((48, 48))))


@settings(max_examples=20, deadline=None)
@given(st.floats(-np.pi, np.pi), st.integers(0, 2**31))
def test_schmidt_number_ignores_separable_phases(theta, seed):
    _, jsa, _ = heralded_setup(1.5e5, n_bins=48)
    rng = np.random.default_rng(seed)
    phi = rng.uniform(-np.pi, np.pi, 48)
    chi = rng.uniform(-np.pi, np.pi, 48)
    g = Jsa(jsa.grid1, jsa.grid2, jsa.f * np.exp(1j * (theta + phi[:, None] + chi[None, :])))
    assert schmidt(g).K == pytest.approx(schmidt(jsa).K, rel=1e-10)


def test_schmidt_number_grows_with_correlated_chirp(unchirped):
    _, jsa, _ = unchirped
    ks = [schmidt(correlated(jsa, b)).K for b in np.linspace(0, 4e5, 9)]
    assert ks[0] == pytest.approx(1.0, abs=1e-9)
    assert np.all(np.diff(ks) > 0)
    neg = [schmidt(correlated(jsa, -b)).K for b in np.linspace(0, 4e5, 9)]
    np.testing.assert_allclose(neg, ks, rtol=1e-9)


def test_complex_schmidt_number_exceeds_amplitude_only(chirped):
    _, jsa, _ = chirped
    assert schmidt(jsa).K - schmidt(jsa.abs()).K > 0.1


# ---------------------------------------------------------------- g2

def test_g2_prediction():
    assert g2_predicted(1.0) == 2.0
    assert g2_predicted(1.02) == pytest.approx(1.980, abs=5e-4)
    assert g2_predicted(1.26) == pytest.approx(1.794, abs=5e-4)
    assert g2_predicted(1e12) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        g2_predicted(0.9)


@given(st.floats(1.0, 1e6))
def test_g2_formula(k):
    assert g2_predicted(k) == 1.0 + 1.0 / k


# ---------------------------------------------------------------- overlap

def test_overlap_properties(chirped):
    _, jsa, _ = chirped
    assert overlap(jsa, jsa) == pytest.approx(1.0)
    assert overlap(jsa, Jsa(jsa.grid1, jsa.grid2, jsa.f * np.exp(2.1j))) == pytest.approx(1.0)
    g = jsa.grid1
    a = np.zeros((128, 128))
    b = np.zeros((128, 128))
    a[:10, :10] = 1.0
    b[50:60, 50:60] = 1.0
    assert overlap(Jsa(g, g, a), Jsa(g, g, b)) == 0.0
    with pytest.raises(ValueError):
        overlap(jsa, heralded_setup(0.0, n_bins=48)[1])


def test_chirped_overlap_golden(unchirped):
    _, jsa, _ = unchirped
    assert overlap(jsa, correlated(jsa, 1.69e5)) == pytest.approx(CHIRP_OVERLAP_GOLDEN, abs=1e-12)


def test_mode_overlap(small_grid):
    a = gaussian_mode(small_grid, 1.5e-3)
    assert mode_overlap(a, a.scaled(-3j)) == pytest.approx(1.0)
    b = SpectralMode(small_grid, a.amp * small_grid.detunings)
    assert mode_overlap(a, b) == pytest.approx(0.0, abs=1e-20)


# ---------------------------------------------------------------- chirp fit

def test_unwrap_recovers_smooth_phase(chirped):
    _, jsa, _ = chirped
    w1, w2 = np.meshgrid(jsa.grid1.detunings, jsa.grid2.detunings, indexing="ij")
    true = -0.5 * 2e5 * (w1 + w2) ** 2
    phase, acc = unwrap_phase_2d(jsa.f)
    d = (phase - true)[acc]
    np.testing.assert_allclose(d - d[0], 0.0, atol=1e-9)


def test_unwrap_failure_is_reported(small_grid):
    f = np.ones((48, 48), complex)
    # a phase vortex cannot be unwrapped consistently
    w1, w2 = np.meshgrid(np.arange(48) - 23.5, np.arange(48) - 23.5, indexing="ij")
    f = f * np.exp(1j * np.arctan2(w2, w1))
    with pytest.raises(UnwrapError):
        unwrap_phase_2d(f)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3e5, 3e5), st.floats(-4e4, 4e4), st.floats(-4e4, 4e4),
       st.floats(-200, 200), st.floats(-200, 200))
def test_chirp_fit_exact_in_model_class(beta, c11, c22, c1, c2):
    _, jsa, _ = heralded_setup(0.0, n_bins=64)
    w1, w2 = np.meshgrid(jsa.grid1.detunings, jsa.grid2.detunings, indexing="ij")
    ph = 0.3 + c1 * w1 + c2 * w2 + c11 * w1**2 + c22 * w2**2 - beta * w1 * w2
    fit = fit_chirp(Jsa(jsa.grid1, jsa.grid2, np.abs(jsa.f) * np.exp(1j * ph)))
    assert fit.beta == pytest.approx(beta, abs=1e-6 * 3e5)
    np.testing.assert_allclose(fit.coefficients[3:5], [c11, c22], atol=1e-6 * 4e4)
    assert fit.rms_residual < 1e-9


def test_pump_chirp_recovered(chirped):
    _, jsa, _ = chirped
    fit = fit_chirp(jsa)
    assert fit.beta == pytest.approx(2e5, rel=1e-9)
    # pump GDD maps onto equal separable terms of β/2
    np.testing.assert_allclose(fit.coefficients[3:5], [-1e5, -1e5], rtol=1e-9)


@pytest.fixture(scope="module")
def unchirped_pair():
    _, jsa, ref = heralded_setup(0.0, n_bins=64)
    rb = gaussian_mode(jsa.grid2, REF_WIDTH).scaled(np.sqrt(N_REF))
    ha = expected_heralded_histogram(jsa, ref, TAU)
    hb = expected_heralded_histogram(jsa.transpose(), rb, TAU)
    return ref, rb, ha, hb


def test_null_chirp_noiseless(unchirped_pair):
    ref, rb, ha, hb = unchirped_pair
    rec, _ = reconstruct_heralded(ha, ref, hb, rb, TAU)
    fit = fit_chirp(rec)
    assert abs(fit.beta) < 2 * fit.stderr
    assert abs(fit.beta) < 1e-6


def test_null_chirp_sampled(unchirped_pair):
    # the formal stderr ignores bin-to-bin correlation from Fourier filtering,
    # so the sampled null case is bounded on the physical scale instead
    ref, rb, ha, hb = unchirped_pair
    det = DetectorModel()
    ha, hb = apply_detector_blur(ha, det), apply_detector_blur(hb, det)
    for seed in range(6):
        rec, _ = reconstruct_heralded(sample_counts(ha, 100_000, seed), ref,
                                      sample_counts(hb, 100_000, 1000 + seed), rb, TAU)
        assert abs(fit_chirp(rec).beta) < 1e4


# ---------------------------------------------------------------- visibility

@pytest.fixture(scope="module")
def balanced(grid):
    psi = gaussian_mode(grid, REF_WIDTH)
    return {
        "single": expected_interferogram(psi, psi.scaled(np.sqrt(N_REF)), TAU, SinglePhoton()),
        "coherent": expected_interferogram(psi, psi, TAU, Coherent(1.0)),
        "thermal": expected_interferogram(psi, psi, TAU, Thermal(1.0)),
    }


def test_visibility_values(balanced):
    assert fringe_visibility(balanced["single"]) == pytest.approx(2 / (2 + N_REF), abs=1e-4)
    assert fringe_visibility(balanced["coherent"]) == pytest.approx(0.5, abs=1e-4)
    # coherent reference with a thermal signal: (1 + 1 + 1 + 2) baseline against 2 in the fringe
    assert fringe_visibility(balanced["thermal"]) == pytest.approx(0.4, abs=1e-4)


def test_visibility_ordering(balanced):
    v = [fringe_visibility(balanced[k], TAU) for k in ("single", "coherent", "thermal")]
    assert v[0] >= v[1] >= v[2]


def test_visibility_needs_fringes(grid):
    psi = gaussian_mode(grid, REF_WIDTH)
    with pytest.raises(InsufficientFringesError):
        fringe_visibility(expected_interferogram(psi, psi, 0.0, Coherent(1.0)))
    with pytest.raises(InsufficientFringesError):
        fringe_visibility(expected_interferogram(psi, psi, 100.0, Coherent(1.0)), 100.0)
    with pytest.raises(InsufficientFringesError):
        fringe_visibility(Interferogram(grid, grid, np.zeros((128, 128))), TAU)


def test_antidiagonal_profile_runs_through_center(grid):
    c = np.zeros((128, 128))
    c[64, 64] = 1.0
    c[60, 68] = 0.5
    prof = antidiagonal_profile(Interferogram(grid, grid, c))
    assert prof.max() == 1.0 and 0.5 in prof


# ---------------------------------------------------------------- report

def test_analyze_report(chirped):
    _, jsa, ref = chirped
    g = expected_interferogram(jsa.column(64).normalize(), ref, TAU)
    rep = analyze(jsa, g)
    text = rep.text()
    assert "schmidt_number_complex" in text and "beta_fs2" in text
    assert rep.K > rep.K_amplitude
    assert rep.chirp.beta == pytest.approx(2e5, rel=1e-6)
    assert rep.visibility > 0.95
    lines = rep.coefficients_csv("abc").splitlines()
    assert lines[0] == "# config_hash=abc" and lines[1].startswith("k,lambda")


def test_fourier_magnitude_axes(grid):
    psi = gaussian_mode(grid, REF_WIDTH)
    g = expected_interferogram(psi, psi.scaled(0.3), TAU)
    t1, t2, F = fourier_magnitude(g.counts, grid, grid)
    assert F.shape == (128, 128)
    assert t1[0] < 0 < t1[-1]
    k1, k2 = np.unravel_index(np.argmax(np.where(np.abs(t1[:, None]) > 3000, F, 0)), F.shape)
    assert abs(abs(t1[k1]) - TAU) < 2 * (t1[1] - t1[0])
