import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scmkit import scanfield
from scmkit.errors import DegenerateJacobian, GridMismatch, InputError, ZeroResponse
from scmkit.model import CavityMode, DetectionCoeffs, Emitter, Spectrum, omega_from_wavelength, write_matrix_csv

MODE1 = CavityMode(667.3, 550.0)
THETA = math.radians(20.0)


def field1(f_c_max=1.0):
    return scanfield.FieldModel(MODE1, f_c_max)


def test_intensity_normalization_and_bounds():
    f = field1()
    assert scanfield.mode_intensity(f, (0.0, 0.0, 0.0)) == 1.0
    xs, ys = np.meshgrid(np.linspace(-600, 600, 1201), np.linspace(-400, 400, 161))
    surf = scanfield.mode_intensity(f, (xs, ys, 0.0))
    assert abs(surf.max() - 1.0) < 1e-9
    deep = scanfield.mode_intensity(f, (xs, ys, np.abs(xs) / 3))
    assert deep.min() >= 0 and deep.max() <= 1


def test_periodicity_and_decay_length():
    f = field1()
    a = MODE1.lattice_a
    x = np.linspace(-5, 5, 11)
    # envelope divided out, the standing wave repeats with period a
    base = f.intensity(x, 0, 0) / np.exp(-2 * x**2 / MODE1.envelope_wx**2)
    shifted = f.intensity(x + a, 0, 0) / np.exp(-2 * (x + a) ** 2 / MODE1.envelope_wx**2)
    assert np.allclose(base, shifted, rtol=1e-12)
    ratio = f.intensity(10.0, 20.0, MODE1.z_decay) / f.intensity(10.0, 20.0, 0.0)
    assert ratio == pytest.approx(math.exp(-1), rel=1e-12)


def test_fc_projection():
    f = scanfield.FieldModel(CavityMode(667.3, 550.0, polarization_angle=0.3), 2.5)
    assert scanfield.fc_at(f, (0, 0, 0), 0.3) == pytest.approx(2.5)
    assert scanfield.fc_at(f, (0, 0, 0), 0.3 + math.pi / 2) == pytest.approx(0.0, abs=1e-15)


@given(st.floats(-10, 10), st.floats(-300, 300), st.floats(-200, 200), st.floats(0, 300))
def test_fc_dipole_sign_symmetry(theta, x, y, z):
    f = field1(3.0)
    assert scanfield.fc_at(f, (x, y, z), theta) == pytest.approx(scanfield.fc_at(f, (x, y, z), theta + math.pi), abs=1e-12)


def test_calibration_hits_target():
    f = scanfield.calibrate_fc_max(field1(), y=70.0, z=98.0, dipole_angle=THETA, target=0.7)
    _, peak = scanfield.peak_over_x(f, 70.0, 98.0, THETA)
    assert peak == pytest.approx(0.7, rel=1e-9)


def test_gridded_field_from_csv(tmp_path):
    f = field1()
    xs = np.arange(-400.0, 400.1, 4.0)
    ys = np.arange(-200.0, 200.1, 4.0)
    X, Y = np.meshgrid(xs, ys)
    write_matrix_csv(tmp_path / "field.csv", f.intensity(X, Y, 0.0), 4.0, 4.0)
    g = scanfield.GriddedFieldModel.from_csv(tmp_path / "field.csv", MODE1)
    assert g.intensity(0.0, 0.0, 0.0) == pytest.approx(1.0, rel=1e-9)
    assert g.intensity(8.0, 12.0, 50.0) == pytest.approx(f.intensity(8.0, 12.0, 50.0), rel=1e-9)
    assert g.intensity(1e4, 0.0, 0.0) == 0.0


def test_track_json_round_trip():
    t = scanfield.apply_slip(scanfield.line_track(-100, 100, 3.4), 0.5, seed=2)
    back = scanfield.ScanTrack.from_dict(t.to_dict())
    assert np.array_equal(back.positions, t.positions)
    assert back.commanded_step == 3.4


def test_slip_is_seeded_and_cumulative():
    t = scanfield.line_track(0, 100, 1.0)
    a = scanfield.apply_slip(t, 0.3, seed=1)
    b = scanfield.apply_slip(t, 0.3, seed=1)
    assert np.array_equal(a.positions, b.positions)
    assert np.all(a.positions[0] == t.positions[0])
    assert scanfield.apply_slip(t, 0.0) is t


def _scan(track, emitter, peak_counts=None, threads=1, seed=0):
    omega = np.sort(omega_from_wavelength(np.linspace(660.0, 675.0, 301)))
    return scanfield.simulate_scan([field1(2.9)], emitter, DetectionCoeffs(), track, omega,
                                   peak_counts=peak_counts, seed=seed, threads=threads)


def test_far_track_gives_uncoupled_spectra():
    em = Emitter(position=(0.0, 70.0, 98.0), dipole_angle=THETA)
    res = _scan(scanfield.line_track(5000.0, 5100.0, 10.0), em)
    assert np.allclose(res.spectra, 1.0, atol=1e-12)


def test_translation_consistency():
    em = Emitter(position=(0.0, 70.0, 98.0), dipole_angle=THETA)
    track = scanfield.line_track(-200.0, 200.0, 3.4)
    shift = np.array([37.0, -12.0, 0.0])
    moved = Emitter(position=tuple(np.array(em.position) + shift), dipole_angle=THETA)
    a = _scan(track, em)
    b = _scan(track.shifted(shift), moved)
    assert np.allclose(a.spectra, b.spectra, rtol=1e-12, atol=0)


def test_threads_do_not_change_output():
    em = Emitter(position=(0.0, 70.0, 98.0), dipole_angle=THETA)
    track = scanfield.line_track(-200.0, 200.0, 3.4)
    a = _scan(track, em, peak_counts=1e3, threads=1, seed=4)
    b = _scan(track, em, peak_counts=1e3, threads=4, seed=4)
    assert np.array_equal(a.spectra, b.spectra)


def test_scan_result_round_trip():
    em = Emitter(position=(0.0, 70.0, 98.0), dipole_angle=THETA)
    res = _scan(scanfield.line_track(-50.0, 50.0, 10.0), em)
    back = scanfield.ScanResult.from_dict(res.to_dict())
    assert np.array_equal(back.spectra, res.spectra) and np.array_equal(back.fc, res.fc)


def test_period_and_lobe_width():
    field = scanfield.calibrate_fc_max(field1(), y=70.0, z=98.0, dipole_angle=THETA, target=0.7)
    em = Emitter(position=(0.0, 70.0, 98.0), dipole_angle=THETA)
    track = scanfield.line_track(-300.0, 300.0, 3.4)
    omega = np.sort(omega_from_wavelength(np.linspace(660.0, 675.0, 301)))
    res = scanfield.simulate_scan([field], em, DetectionCoeffs(), track, omega)
    peaks = scanfield.peak_intensity_series(res, MODE1.omega_c)
    assert abs(scanfield.autocorrelation_period(peaks, 3.4) - 176.0) <= 3.4
    assert 73.0 <= scanfield.lobe_fwhm(track.positions[:, 0], res.fc[:, 0]) <= 103.0


def test_lobe_fwhm_of_cos_squared():
    x = np.linspace(-80, 80, 16001)
    assert scanfield.lobe_fwhm(x, np.cos(np.pi * x / 176.0) ** 2) == pytest.approx(88.0, abs=1e-3)


def _raster_setup():
    f1 = scanfield.calibrate_fc_max(field1(), y=70.0, z=98.0, dipole_angle=THETA, target=0.7)
    mode2 = CavityMode(643.0, 610.0, polarization_angle=math.pi / 2, envelope_wy=220.0, z_decay=90.0)
    f2 = scanfield.calibrate_fc_max(scanfield.FieldModel(mode2, 1.0), y=70.0, z=98.0, dipole_angle=THETA, target=5.3)
    track = scanfield.raster_track(-300.0, 300.0, 3.4, [-80.0, -40.0, 0.0, 40.0, 80.0])
    truth = {"x_offset": 0.0, "y": 70.0, "z": 98.0, "theta": THETA, "f_c_max": f1.f_c_max}
    return [f1, f2], track, truth


def test_track_fit_noise_free_exact():
    fields, track, truth = _raster_setup()
    fc = scanfield.track_model(fields, track, truth)
    measured = scanfield.ScanResult(track, fc)
    fit = scanfield.fit_track(measured, fields, init={"y": 40.0, "z": 80.0, "theta": 0.2, "x_offset": 5.0})
    assert fit.converged
    assert fit.values["z"] == pytest.approx(98.0, abs=1e-5)
    assert fit.values["y"] == pytest.approx(70.0, abs=1e-5)
    assert fit.values["theta"] == pytest.approx(THETA, abs=1e-7)


def test_track_fit_degenerate_and_short_inputs():
    fields, track, _ = _raster_setup()
    zero = scanfield.ScanResult(track, np.zeros((len(track), 2)))
    with pytest.raises(DegenerateJacobian):
        scanfield.fit_track(zero, fields)
    short = scanfield.line_track(0.0, 10.0, 2.0)
    with pytest.raises(InputError):
        scanfield.fit_track(scanfield.ScanResult(short, np.ones((len(short), 2))), fields)


def test_single_mode_line_scan_is_degenerate():
    # one mode on one line: z, y and theta only set a common amplitude
    f1 = scanfield.calibrate_fc_max(field1(), y=70.0, z=98.0, dipole_angle=THETA, target=0.7)
    track = scanfield.line_track(-300.0, 300.0, 3.4)
    fc = scanfield.track_model([f1], track, {"x_offset": 0.0, "y": 70.0, "z": 98.0, "theta": THETA, "f_c_max": f1.f_c_max})
    with pytest.raises(DegenerateJacobian):
        scanfield.fit_track(scanfield.ScanResult(track, fc), [f1], init={"y": 50.0, "z": 90.0, "theta": 0.3})


# -- imaging -------------------------------------------------------------------

def test_delta_sample_reproduces_response():
    rng = np.random.default_rng(0)
    s = 2.0
    R = rng.random(21)
    e = np.zeros(101)
    e[40] = 1.0 / s
    pl = scanfield.convolve_sample(e, R, s)
    expected = np.zeros(101)
    expected[30:51] = R
    expected[30] *= 0.5
    expected[50] *= 0.5
    assert np.allclose(pl, expected, atol=1e-15)
    assert np.all(scanfield.convolve_sample(np.zeros(50), R, s) == 0)


def test_two_deltas_superpose():
    rng = np.random.default_rng(1)
    R = rng.random(15)
    e1 = np.zeros(80)
    e1[20] = 1
    e2 = np.zeros(80)
    e2[60] = 2
    both = scanfield.convolve_sample(e1 + e2, R, 1.0)
    assert np.allclose(both, scanfield.convolve_sample(e1, R, 1.0) + scanfield.convolve_sample(e2, R, 1.0), rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5, allow_subnormal=False), st.floats(-5, 5, allow_subnormal=False), st.integers(0, 2**31))
def test_convolution_linearity(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    e1, e2, R = rng.random(64), rng.random(64), rng.random(9)
    lhs = scanfield.convolve_sample(alpha * e1 + beta * e2, R, 3.4)
    rhs = alpha * scanfield.convolve_sample(e1, R, 3.4) + beta * scanfield.convolve_sample(e2, R, 3.4)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(rhs).max())


def test_spectral_and_2d_convolution():
    rng = np.random.default_rng(2)
    e = rng.random(30)
    R = rng.random((7, 4))
    out = scanfield.convolve_sample(e, R, 1.5)
    assert out.shape == (30, 4)
    for k in range(4):
        assert np.allclose(out[:, k], scanfield.convolve_sample(e, R[:, k], 1.5))
    img = scanfield.convolve_sample(rng.random((20, 25)), rng.random((5, 7)), (1.0, 2.0))
    assert img.shape == (20, 25)


def test_grid_mismatch():
    with pytest.raises(GridMismatch):
        scanfield.convolve_sample(np.ones(10), np.ones(3), 1.0, response_spacing=2.0)
    with pytest.raises(GridMismatch):
        scanfield.deconvolve(np.ones(10), np.ones((3, 3)), 1.0)


def test_delta_response_deconvolution_is_identity():
    rng = np.random.default_rng(3)
    pl = rng.random(100)
    est = scanfield.deconvolve(pl, np.array([1.0 / 3.4]), 3.4)
    # only the regularization bias 1 / (1 + 1e-3) remains
    assert np.allclose(est, pl / (1 + 1e-3), rtol=1e-12)


def test_zero_response_rejected():
    with pytest.raises(ZeroResponse):
        scanfield.deconvolve(np.ones(10), np.zeros(5), 1.0)


@pytest.mark.parametrize("eps", [1e-2, 1.0, 100.0])
def test_regularized_output_power_bound(eps):
    rng = np.random.default_rng(4)
    R = rng.random(31)
    noise = rng.standard_normal(500)
    est = scanfield.deconvolve(noise, R, 1.0, epsilon=eps)
    # |conj(R)/(|R|^2 + eps)| <= 1 / (2 sqrt(eps))
    assert np.sum(est**2) <= np.sum(noise**2) / (4 * eps) * (1 + 1e-12)


def test_richardson_lucy_round_trip():
    field = field1()
    em = Emitter(position=(0.0, 70.0, 98.0), dipole_angle=THETA)
    _, R = scanfield.point_response(field, em, 700.0, 3.4)
    x = 3.4 * (np.arange(801) - 400)
    e = np.exp(-0.5 * ((x + 340) / 250) ** 2) + 0.6 * np.exp(-0.5 * ((x - 410) / 200) ** 2)
    pl = scanfield.convolve_sample(e, R, 3.4)
    est = scanfield.deconvolve(pl, R, 3.4, method="richardson_lucy", iterations=300)
    assert np.all(est >= 0)
    assert np.linalg.norm(est - e) / np.linalg.norm(e) < 0.05
    with pytest.raises(GridMismatch):
        scanfield.deconvolve(pl, R[:-1], 3.4, method="richardson_lucy")


def test_point_response_is_odd_and_centered():
    em = Emitter(position=(0.0, 0.0, 50.0), dipole_angle=0.0)
    offs, R = scanfield.point_response(field1(), em, 300.0, 3.0)
    assert offs.size % 2 == 1 and offs[offs.size // 2] == 0
    assert np.argmax(R) == offs.size // 2
