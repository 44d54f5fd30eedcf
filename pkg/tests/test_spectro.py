import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scmkit import spectro
from scmkit.errors import DegenerateJacobian, GridOutsideBaseline, InputError, NoOverlap, WindowTooShort
from scmkit.model import EmissionBudget, DetectionCoeffs, Spectrum, TimeTrace, omega_from_wavelength

MEASURED_MODES = [spectro.ModeLine(643.0, 610.0, 5.3), spectro.ModeLine(667.3, 550.0, 0.7)]


def test_lorentzian_values():
    assert spectro.lorentzian(5.0, 5.0, 2.0) == 1
    assert abs(spectro.lorentzian(7.0, 5.0, 2.0)) ** 2 == pytest.approx(0.5)
    assert abs(spectro.lorentzian(1e9, 5.0, 2.0)) < 1e-8
    with pytest.raises(InputError):
        spectro.lorentzian(1.0, 1.0, 0.0)


def test_peak_and_far_field_values():
    coeffs = DetectionCoeffs(c_nv=1.2, c_cav=0.9)
    mode = spectro.ModeLine(650.0, 500.0, 3.0)
    s = spectro.detected_spectrum(coeffs, [mode], None, [mode.omega_c, mode.omega_c + 1e6])
    assert s.y[0] == pytest.approx(1.2 + 0.9 * 3.0, rel=1e-14)
    assert s.y[1] == pytest.approx(1.2, rel=1e-6)


def test_measured_peak_to_background_ratios():
    wl = np.arange(600.0, 720.0, 0.01)
    coeffs = DetectionCoeffs()
    s = spectro.detected_spectrum_nm(coeffs, MEASURED_MODES, None, wl)
    assert spectro.peak_to_background(s, 643.0, coeffs) == pytest.approx(6.3, abs=0.01)
    assert spectro.peak_to_background(s, 667.3, coeffs) == pytest.approx(1.7, abs=0.01)


def test_baseline_multiplies_and_must_cover_grid():
    base = spectro.nv_phonon_sideband(np.arange(600.0, 800.0, 0.1), peak=1000.0)
    wl = np.arange(640.0, 660.0, 0.05)
    with_base = spectro.detected_spectrum_nm(DetectionCoeffs(), MEASURED_MODES, base, wl)
    flat = spectro.detected_spectrum_nm(DetectionCoeffs(), MEASURED_MODES, None, wl)
    assert np.allclose(with_base.y, flat.y * base.interp(wl), rtol=1e-12)
    with pytest.raises(GridOutsideBaseline):
        spectro.detected_spectrum_nm(DetectionCoeffs(), MEASURED_MODES, base, [590.0, 650.0])


@given(st.floats(-10, 10))
def test_no_interference_no_phase_dependence(dphi):
    wl = np.linspace(640, 670, 301)
    a = spectro.detected_spectrum_nm(DetectionCoeffs(1, 1, 0, 0), MEASURED_MODES, None, wl)
    b = spectro.detected_spectrum_nm(DetectionCoeffs(1, 1, 0, dphi), MEASURED_MODES, None, wl)
    assert np.array_equal(a.y, b.y)


def _measured_data(rng, noise=0.01, baseline=None):
    wl = np.arange(630.0, 680.0, 0.02)
    clean = spectro.detected_spectrum_nm(DetectionCoeffs(), MEASURED_MODES, baseline, wl)
    y = clean.y * (1 + noise * rng.standard_normal(wl.size)) if noise else clean.y
    return clean.with_y(np.clip(y, 0, None))


def _measured_init():
    return spectro.SpectrumFit(
        [spectro.ModeLine(642.8, 560.0, 4.0), spectro.ModeLine(667.5, 600.0, 1.0)], DetectionCoeffs(c_nv=0.9)
    )


def test_noise_free_recovery_is_exact():
    data = _measured_data(None, noise=0)
    fit = spectro.fit_spectrum(data, None, _measured_init())
    assert fit.converged
    assert fit.residual_rms < 1e-9 * data.y.max()
    for got, want in zip(fit.modes, MEASURED_MODES):
        assert got.f_c == pytest.approx(want.f_c, rel=1e-6)
        assert got.q_factor == pytest.approx(want.q_factor, rel=1e-6)


def test_objective_is_monotone_and_fit_is_deterministic():
    rng = np.random.default_rng(5)
    data = _measured_data(rng)
    fit = spectro.fit_spectrum(data, None, _measured_init())
    hist = np.array(fit.cost_history)
    assert np.all(np.diff(hist) <= 0)
    again = spectro.fit_spectrum(data, None, _measured_init())
    assert again.to_dict() == fit.to_dict()


def test_fit_with_counts_baseline_and_poisson_weights():
    rng = np.random.default_rng(6)
    base = spectro.nv_phonon_sideband(np.arange(600.0, 720.0, 0.05), peak=2e4)
    wl = np.arange(630.0, 680.0, 0.02)
    clean = spectro.detected_spectrum_nm(DetectionCoeffs(), MEASURED_MODES, base, wl)
    data = clean.with_y(rng.poisson(clean.y).astype(float))
    fit = spectro.fit_spectrum(data, base, _measured_init())
    assert fit.modes[0].f_c == pytest.approx(5.3, abs=0.2)
    assert fit.modes[1].f_c == pytest.approx(0.7, abs=0.1)


def test_randomized_round_trip():
    rng = np.random.default_rng(7)
    passed = 0
    for _ in range(50):
        fc, q = rng.uniform(0.1, 10), rng.uniform(200, 5000)
        truth = DetectionCoeffs(1.0, 1.0, rng.uniform(0, 0.8), rng.uniform(-math.pi, math.pi))
        fwhm = 650.0 / q
        wl = np.linspace(650.0 - 10 * fwhm, 650.0 + 10 * fwhm, 801)
        clean = spectro.detected_spectrum_nm(truth, [spectro.ModeLine(650.0, q, fc)], None, wl)
        data = clean.with_y(np.clip(clean.y * (1 + 0.01 * rng.standard_normal(wl.size)), 0, None))
        guess = spectro.ModeLine(650.0 + 0.2 * fwhm * rng.standard_normal(), q * rng.uniform(0.8, 1.25),
                                 fc * rng.uniform(0.7, 1.4))
        fit = spectro.fit_spectrum(data, None, spectro.SpectrumFit([guess], truth), weighting="uniform")
        ok = abs(fit.modes[0].f_c - fc) <= 0.1 * fc and abs(fit.modes[0].q_factor - q) <= 0.05 * q
        passed += ok
        if not ok:
            assert not fit.converged
    assert passed >= 45


@pytest.mark.parametrize("dphi", [math.pi / 2, -math.pi / 2])
def test_fano_round_trip(dphi):
    rng = np.random.default_rng(8)
    mode = spectro.ModeLine(667.3, 550.0, 0.7)
    truth = DetectionCoeffs(c_nv=1.0, c_cav=1.0, c_int=0.6, delta_phi=dphi)
    wl = np.arange(660.0, 675.0, 0.01)
    clean = spectro.detected_spectrum_nm(truth, [mode], None, wl)
    data = clean.with_y(clean.y * (1 + 0.01 * rng.standard_normal(wl.size)))
    # asymmetry in frequency: the high-frequency (blue) flank is raised when sin(dphi) > 0
    off = 2 * 667.3 / 550.0
    blue, red = spectro.detected_spectrum_nm(truth, [mode], None, [667.3 - off, 667.3 + off]).y
    assert np.sign(blue - red) == np.sign(math.sin(dphi))
    init = spectro.SpectrumFit([spectro.ModeLine(667.4, 520.0, 0.7)], DetectionCoeffs(1.0, 1.0, 0.3, 0.0))
    fit = spectro.fit_spectrum(data, None, init, {"c_cav", "f_c[0]"})
    ratio = fit.coeffs.c_int / fit.coeffs.c_nv
    assert ratio == pytest.approx(0.6, abs=0.05)
    assert np.sign(math.sin(fit.coeffs.delta_phi)) == np.sign(math.sin(dphi))


def test_fully_free_single_mode_is_degenerate():
    wl = np.linspace(660, 675, 500)
    data = spectro.detected_spectrum_nm(DetectionCoeffs(1, 1, 0.5, 1.0), [spectro.ModeLine(667.3, 550, 2.0)], None, wl)
    init = spectro.SpectrumFit([spectro.ModeLine(667.3, 560, 2.2)], DetectionCoeffs(1, 1, 0.3, 0.4))
    with pytest.raises(DegenerateJacobian):
        spectro.fit_spectrum(data, None, init, {"c_cav"})


def test_iteration_cap_is_soft():
    data = _measured_data(np.random.default_rng(9))
    fit = spectro.fit_spectrum(data, None, _measured_init(), max_iter=1)
    assert not fit.converged and fit.n_iter == 1


def test_fit_requires_overlap_and_nm():
    data = _measured_data(None, noise=0)
    base = spectro.nv_phonon_sideband(np.arange(700.0, 800.0, 0.1))
    with pytest.raises(NoOverlap):
        spectro.fit_spectrum(data, base, _measured_init())


def test_spectrum_fit_json_round_trip():
    fit = spectro.fit_spectrum(_measured_data(None, noise=0), None, _measured_init())
    back = spectro.SpectrumFit.from_dict(fit.to_dict())
    assert back.to_dict() == fit.to_dict()


@pytest.mark.parametrize("tau", [16.4, 12.7])
def test_lifetime_recovery(tau):
    t = np.arange(-5.0, 150.0, 0.1)
    errs = []
    for seed in range(20):
        trace = spectro.synthetic_decay(tau, t, peak_counts=1e4, background=2.0, rng=np.random.default_rng(seed))
        fit = spectro.fit_lifetime(trace)
        assert fit.converged
        errs.append(fit.tau - tau)
    assert np.max(np.abs(errs)) < 0.5


def test_lifetime_window_and_degenerate_trace():
    t = np.arange(0.0, 20.0, 0.1)
    with pytest.raises(WindowTooShort):
        spectro.fit_lifetime(spectro.synthetic_decay(16.4, t))
    flat = TimeTrace(np.arange(0.0, 200.0, 1.0), np.full(200, 50.0), "ns", "counts")
    try:
        fit = spectro.fit_lifetime(flat)
    except WindowTooShort:
        return
    assert not fit.converged


def test_purcell_spectrum_examples():
    wl = np.linspace(600, 700, 101)
    bare = Spectrum(wl, np.full(101, 10.0))
    f = spectro.purcell_spectrum(bare, bare, 16.4, 16.4)
    assert np.allclose(f.y, 1.0)
    f = spectro.purcell_spectrum(bare.with_y(np.full(101, 20.0)), bare, 12.7, 16.4)
    assert np.allclose(f.y, 2 * 16.4 / 12.7)
    assert f.y[0] == pytest.approx(2.58, abs=0.005)


def test_purcell_mask_scale_invariance_and_overlap():
    wl = np.linspace(600, 700, 101)
    bare = Spectrum(wl, np.linspace(0.0, 10.0, 101))
    coupled = Spectrum(wl, np.linspace(0.0, 30.0, 101) + 1)
    f1 = spectro.purcell_spectrum(coupled, bare, 12.7, 16.4)
    assert f1.metadata["mask"][0] and f1.y[0] == 0
    f2 = spectro.purcell_spectrum(coupled.with_y(coupled.y * 7), bare.with_y(bare.y * 7), 12.7, 16.4)
    assert np.allclose(f1.y, f2.y, rtol=1e-14)
    with pytest.raises(NoOverlap):
        spectro.purcell_spectrum(Spectrum(wl + 500, coupled.y), bare, 1, 1)


def test_branching_fractions():
    b, nr = spectro.branching_fractions(EmissionBudget([3.0]))
    assert b[0] == 1 and nr == 0
    b, nr = spectro.branching_fractions(EmissionBudget([2.0] * 4))
    assert np.allclose(b, 0.25)
    b, nr = spectro.branching_fractions(EmissionBudget([1.0, 3.0], nonradiative_rate=1.0))
    assert np.allclose(b, [0.2, 0.6]) and nr == pytest.approx(0.2)
    assert b.sum() + nr == pytest.approx(1.0, abs=1e-15)


def test_intensity_model_properties():
    budget = EmissionBudget([1.0, 2.0], collection_eff=[0.0, 0.5], pump_rate=2.0, proportionality=3.0)
    i = spectro.intensity_model(budget)
    assert i[0] == 0
    doubled = spectro.intensity_model(EmissionBudget([1.0, 2.0], [0.0, 0.5], 4.0, 3.0))
    assert np.allclose(doubled, 2 * i)


def test_intensity_ratio_collapses_to_rate_ratio():
    rng = np.random.default_rng(10)
    for _ in range(20):
        g0 = rng.uniform(0.1, 2, 3)
        gc = g0 * rng.uniform(0.5, 8, 3)
        eta = rng.uniform(0.1, 1, 3)
        nr0, nrc = rng.uniform(0, 1), rng.uniform(0, 1)
        b0 = EmissionBudget(g0, eta, 1.3, 2.0, nr0)
        bc = EmissionBudget(gc, eta, 1.3, 2.0, nrc)
        ratio = spectro.intensity_model(bc) / spectro.intensity_model(b0)
        expect = gc * b0.total_rate / (g0 * bc.total_rate)
        assert np.allclose(ratio, expect, rtol=1e-13)


def test_modeline_matches_cavity_convention():
    m = spectro.ModeLine(667.3, 550.0, 1.0)
    assert m.kappa_hwhm == pytest.approx(omega_from_wavelength(667.3) / 1100.0)
