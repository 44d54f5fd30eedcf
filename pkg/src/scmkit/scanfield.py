"""Cavity field model, position-dependent coupling and scan imaging.

Positions are in nm in the cavity frame: x along the cavity axis, y in the
slab plane, z the height of the emitter below the slab surface.  A scan
track lists cavity positions in the sample frame; the emitter position
relative to the cavity is ``emitter.position - track_point``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import minimize_scalar
from scipy.signal import convolve

from .errors import DegenerateJacobian, GridMismatch, InputError, ValidationError, ZeroResponse
from .lsq import levenberg_marquardt
from .model import (
    CavityMode,
    DetectionCoeffs,
    Emitter,
    Spectrum,
    kappa_of,
    omega_from_wavelength,
    read_matrix_csv,
    wavelength_from_omega,
)
from .spectro import ModeLine, SpectrumFit, detected_spectrum, fit_spectrum


@dataclass(frozen=True)
class FieldModel:
    """Parametric stand-in for the cavity-mode energy density.

    ``I(x, y, z) = cos^2(pi x / a) exp(-2 x^2 / wx^2) exp(-2 y^2 / wy^2) exp(-z / z_decay)``,
    equal to 1 at the on-surface antinode.  ``f_c_max`` is the coupling
    enhancement of an aligned dipole sitting at that antinode.
    """

    mode: CavityMode
    f_c_max: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.f_c_max) and self.f_c_max >= 0):
            raise ValidationError("FieldModel", [("f_c_max", "must be finite and >= 0")])

    def intensity(self, x, y, z):
        m = self.mode
        x, y, z = (np.asarray(v, dtype=float) for v in (x, y, z))
        return (
            np.cos(np.pi * x / m.lattice_a) ** 2
            * np.exp(-2.0 * x**2 / m.envelope_wx**2)
            * np.exp(-2.0 * y**2 / m.envelope_wy**2)
            * np.exp(-z / m.z_decay)
        )

    def to_dict(self) -> dict:
        return {"mode": self.mode.to_dict(), "f_c_max": self.f_c_max}

    @classmethod
    def from_dict(cls, raw: dict) -> "FieldModel":
        return cls(CavityMode.from_dict(raw["mode"]), float(raw.get("f_c_max", 1.0)))


@dataclass(frozen=True)
class GriddedFieldModel(FieldModel):
    """Field model backed by a sampled surface map of ``|E|^2``.

    The map (rows along y, columns along x, centred on the cavity) is
    normalized to a maximum of 1; height dependence keeps the exponential
    decay of the parametric model.  Outside the map the intensity is 0.
    """

    surface: np.ndarray = field(default=None, repr=False)
    dx: float = 1.0
    dy: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        grid = np.asarray(self.surface, dtype=float)
        if grid.ndim != 2 or grid.max() <= 0 or np.any(grid < 0):
            raise ValidationError("GriddedFieldModel", [("surface", "must be a nonnegative 2-D map with a positive maximum")])
        ny, nx = grid.shape
        xs = (np.arange(nx) - (nx - 1) / 2) * self.dx
        ys = (np.arange(ny) - (ny - 1) / 2) * self.dy
        interp = RegularGridInterpolator((ys, xs), grid / grid.max(), bounds_error=False, fill_value=0.0)
        object.__setattr__(self, "_interp", interp)

    def intensity(self, x, y, z):
        x, y, z = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, z)))
        pts = np.stack([y.ravel(), x.ravel()], axis=-1)
        surf = self._interp(pts).reshape(x.shape)
        return surf * np.exp(-z / self.mode.z_decay)

    @classmethod
    def from_csv(cls, path, mode: CavityMode, f_c_max: float = 1.0) -> "GriddedFieldModel":
        grid, dx, dy = read_matrix_csv(path)
        return cls(mode, f_c_max, grid, dx, dy)


def mode_intensity(field: FieldModel, r) -> np.ndarray:
    """Normalized mode energy density at ``r = (x, y, z)`` (arrays broadcast)."""
    x, y, z = r
    return field.intensity(x, y, z)


def fc_at(field: FieldModel, r, dipole_angle) -> np.ndarray:
    """Cavity emission-rate enhancement for an in-plane dipole at ``r``."""
    proj = np.cos(np.asarray(dipole_angle, dtype=float) - field.mode.polarization_angle) ** 2
    return field.f_c_max * mode_intensity(field, r) * proj


def peak_over_x(field: FieldModel, y: float, z: float, dipole_angle: float) -> tuple[float, float]:
    """``(x, f_c)`` of the largest coupling along a line at fixed ``y, z``."""
    m = field.mode
    half = 3.0 * max(m.envelope_wx, m.lattice_a)
    step = m.lattice_a / 64.0
    xs = np.arange(-half, half + step / 2, step)
    vals = fc_at(field, (xs, y, z), dipole_angle)
    i = int(np.argmax(vals))
    res = minimize_scalar(
        lambda x: -float(fc_at(field, (x, y, z), dipole_angle)),
        bounds=(xs[max(i - 1, 0)], xs[min(i + 1, xs.size - 1)]), method="bounded",
        options={"xatol": 1e-9},
    )
    best = max((float(vals[i]), float(xs[i])), (-float(res.fun), float(res.x)))
    return best[1], best[0]


def calibrate_fc_max(field: FieldModel, *, y: float, z: float, dipole_angle: float, target: float) -> FieldModel:
    """Return ``field`` rescaled so the peak coupling along x at ``(y, z)`` is ``target``."""
    unit = replace(field, f_c_max=1.0)
    _, peak = peak_over_x(unit, y, z, dipole_angle)
    if peak <= 0:
        raise InputError("field vanishes along the requested line; cannot calibrate")
    return replace(field, f_c_max=target / peak)


# -- tracks and scans ---------------------------------------------------------

@dataclass(frozen=True)
class ScanTrack:
    positions: np.ndarray
    commanded_step: float | None = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float, copy=True)
        problems = []
        if pos.ndim != 2 or pos.shape[1] != 3:
            problems.append(("positions", "must have shape (n, 3)"))
        elif pos.shape[0] < 2:
            problems.append(("positions", "need at least 2 points"))
        elif not np.all(np.isfinite(pos)):
            problems.append(("positions", "must be finite"))
        if problems:
            raise ValidationError("ScanTrack", problems)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return self.positions.shape[0]

    @property
    def step_index(self) -> np.ndarray:
        return np.arange(len(self))

    def shifted(self, offset) -> "ScanTrack":
        return ScanTrack(self.positions + np.asarray(offset, dtype=float), self.commanded_step)

    def to_dict(self) -> dict:
        return {
            "positions": self.positions.tolist(),
            "step_index": self.step_index.tolist(),
            "commanded_step": self.commanded_step,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ScanTrack":
        return cls(np.array(raw["positions"], dtype=float), raw.get("commanded_step"))


def line_track(x_start: float, x_stop: float, step: float, *, y: float = 0.0, z: float = 0.0) -> ScanTrack:
    """Cavity positions along x from ``x_start`` to ``x_stop`` (inclusive when commensurate)."""
    if not step > 0:
        raise InputError("step must be > 0")
    n = int(math.floor((x_stop - x_start) / step + 1e-9)) + 1
    xs = x_start + step * np.arange(n)
    pos = np.column_stack([xs, np.full(n, y), np.full(n, z)])
    return ScanTrack(pos, step)


def raster_track(x_start: float, x_stop: float, step: float, y_values, *, z: float = 0.0) -> ScanTrack:
    """Consecutive x lines, one per entry of ``y_values``."""
    lines = [line_track(x_start, x_stop, step, y=float(yv), z=z).positions for yv in y_values]
    return ScanTrack(np.vstack(lines), step)


def apply_slip(track: ScanTrack, sigma: float, seed: int = 0) -> ScanTrack:
    """Add cumulative in-plane Gaussian jitter (``sigma`` nm per step)."""
    if sigma <= 0:
        return track
    rng = np.random.default_rng(seed)
    jitter = np.zeros_like(track.positions)
    jitter[1:, :2] = np.cumsum(rng.normal(0.0, sigma, size=(len(track) - 1, 2)), axis=0)
    return ScanTrack(track.positions + jitter, track.commanded_step)


@dataclass
class ScanResult:
    """Per-position scan output.

    ``fc`` has shape ``(n_positions, n_modes)``.  ``spectra`` (shape
    ``(n_positions, n_omega)``) is present for simulated scans; ``fits`` for
    scans whose spectra were fitted.
    """

    track: ScanTrack
    fc: np.ndarray
    omega: np.ndarray | None = None
    spectra: np.ndarray | None = None
    fits: list[SpectrumFit] | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.fc = np.atleast_2d(np.asarray(self.fc, dtype=float))
        if self.fc.shape[0] != len(self.track):
            raise ValidationError("ScanResult", [("fc", "length must equal track length")])
        if self.spectra is not None and np.shape(self.spectra)[0] != len(self.track):
            raise ValidationError("ScanResult", [("spectra", "length must equal track length")])

    def spectrum(self, k: int) -> Spectrum:
        return Spectrum(self.omega, self.spectra[k], "rad/ns", "counts")

    def to_dict(self) -> dict:
        out = {"track": self.track.to_dict(), "fc": self.fc.tolist(), "metadata": dict(self.metadata)}
        if self.omega is not None:
            out["omega"] = np.asarray(self.omega).tolist()
        if self.spectra is not None:
            out["spectra"] = np.asarray(self.spectra).tolist()
        if self.fits is not None:
            out["fits"] = [f.to_dict() for f in self.fits]
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ScanResult":
        return cls(
            track=ScanTrack.from_dict(raw["track"]),
            fc=np.array(raw["fc"], dtype=float),
            omega=None if raw.get("omega") is None else np.array(raw["omega"], dtype=float),
            spectra=None if raw.get("spectra") is None else np.array(raw["spectra"], dtype=float),
            fits=None if raw.get("fits") is None else [SpectrumFit.from_dict(f) for f in raw["fits"]],
            metadata=dict(raw.get("metadata", {})),
        )


def relative_positions(emitter: Emitter, track: ScanTrack) -> np.ndarray:
    return np.asarray(emitter.position, dtype=float)[None, :] - track.positions


def simulate_scan(
    fields,
    emitter: Emitter,
    coeffs: DetectionCoeffs,
    track: ScanTrack,
    omega_grid,
    *,
    peak_counts: float | None = None,
    seed: int = 0,
    threads: int = 1,
) -> ScanResult:
    """Detected spectra at every track position.

    Each position is computed independently and assembled in track order, so
    the output does not depend on ``threads``.  With ``peak_counts`` the
    spectra are scaled so the brightest sample of the scan has that mean and
    then Poisson sampled, each position drawing from its own child seed.
    """
    fields = [fields] if isinstance(fields, FieldModel) else list(fields)
    if not fields:
        raise InputError("at least one field model is required")
    omega = np.asarray(omega_grid, dtype=float)
    rel = relative_positions(emitter, track)
    fc = np.column_stack([fc_at(f, (rel[:, 0], rel[:, 1], rel[:, 2]), emitter.dipole_angle) for f in fields])
    rates = [(f.mode.omega_c, kappa_of(f.mode)) for f in fields]

    def one(k):
        modes = [(w, kap, float(fc[k, j])) for j, (w, kap) in enumerate(rates)]
        return detected_spectrum(coeffs, modes, emitter.bare_spectrum, omega).y

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(len(track))))
    else:
        rows = [one(k) for k in range(len(track))]
    spectra = np.vstack(rows)
    meta = {"seed": seed, "peak_counts": peak_counts}
    if peak_counts is not None:
        scale = peak_counts / spectra.max()
        children = np.random.SeedSequence(seed).spawn(len(track))
        spectra = np.vstack([
            np.random.default_rng(children[k]).poisson(spectra[k] * scale).astype(float)
            for k in range(len(track))
        ])
        meta["count_scale"] = scale
    return ScanResult(track, fc, omega, spectra, None, meta)


def peak_intensity_series(result: ScanResult, omega_c: float) -> np.ndarray:
    """Detected signal at the grid sample nearest ``omega_c`` for every position."""
    i = int(np.argmin(np.abs(result.omega - omega_c)))
    return result.spectra[:, i]


def autocorrelation_period(series, step: float) -> float:
    """Lag (in the units of ``step``) of the first autocorrelation maximum after lag 0.

    The series is mean-subtracted before correlating.
    """
    s = np.asarray(series, dtype=float)
    s = s - s.mean()
    ac = np.correlate(s, s, mode="full")[s.size - 1:]
    for k in range(1, ac.size - 1):
        if ac[k] >= ac[k - 1] and ac[k] > ac[k + 1] and np.any(ac[:k] < 0):
            return k * step
    raise InputError("no autocorrelation maximum found; scan too short")


def lobe_fwhm(x, values) -> float:
    """FWHM of the lobe containing the maximum, with linear interpolation at the edges."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(values, dtype=float)
    i = int(np.argmax(v))
    half = 0.5 * v[i]
    lo = i
    while lo > 0 and v[lo - 1] > half:
        lo -= 1
    hi = i
    while hi < v.size - 1 and v[hi + 1] > half:
        hi += 1
    if lo == 0 or hi == v.size - 1:
        raise InputError("lobe is not resolved inside the scan")
    left = x[lo - 1] + (half - v[lo - 1]) * (x[lo] - x[lo - 1]) / (v[lo] - v[lo - 1])
    right = x[hi] + (half - v[hi]) * (x[hi + 1] - x[hi]) / (v[hi + 1] - v[hi])
    return float(right - left)


def fit_scan_spectra(result: ScanResult, nv_baseline, init: SpectrumFit, fixed, **kwargs) -> ScanResult:
    """Fit the detected spectrum at every position; ``fc`` becomes the fitted values.

    Each fit starts from ``init`` so the results do not depend on order.
    """
    wl = wavelength_from_omega(result.omega)
    order = np.argsort(wl)
    fits = []
    for k in range(len(result.track)):
        data = Spectrum(wl[order], result.spectra[k][order], "nm", "counts")
        fits.append(fit_spectrum(data, nv_baseline, init, fixed, **kwargs))
    fc = np.array([[m.f_c for m in f.modes] for f in fits])
    return ScanResult(result.track, fc, result.omega, result.spectra, fits, dict(result.metadata))


# -- track fitting ------------------------------------------------------------

TRACK_PARAMS = ("x_offset", "y", "z", "theta", "f_c_max")


@dataclass
class TrackFit:
    values: dict[str, float]
    stderr: dict[str, float]
    converged: bool
    n_iter: int
    residual_rms: float

    def to_dict(self) -> dict:
        return {
            "values": dict(self.values), "stderr": dict(self.stderr), "converged": self.converged,
            "n_iter": self.n_iter, "residual_rms": self.residual_rms,
        }


def track_model(fields, track: ScanTrack, values: dict) -> np.ndarray:
    """Predicted ``f_c`` per position and mode for an emitter at ``(x_offset, y, z)``.

    ``values['f_c_max']`` multiplies the first field's ``f_c_max``; other
    fields keep their ratio to it.
    """
    fields = [fields] if isinstance(fields, FieldModel) else list(fields)
    scale = values["f_c_max"] / fields[0].f_c_max if fields[0].f_c_max > 0 else 0.0
    rx = values["x_offset"] - track.positions[:, 0]
    ry = values["y"] - track.positions[:, 1]
    rz = values["z"] - track.positions[:, 2]
    cols = [scale * fc_at(f, (rx, ry, rz), values["theta"]) for f in fields]
    return np.column_stack(cols)


def fit_track(
    measured: ScanResult,
    fields,
    free=("x_offset", "y", "z", "theta"),
    init: dict | None = None,
    *,
    max_iter: int = 200,
) -> TrackFit:
    """Recover emitter geometry from per-position coupling values.

    ``measured.fc`` column ``j`` must correspond to ``fields[j]``.  Parameters
    not in ``free`` stay at their ``init`` values (defaults: x_offset 0,
    y 0, z 100 nm, theta 0, f_c_max of the first field).  ``theta`` is
    confined to ``[-pi/2, pi/2]`` and ``z`` to ``z >= 0``.
    """
    fields = [fields] if isinstance(fields, FieldModel) else list(fields)
    data = np.asarray(measured.fc, dtype=float)
    if data.shape[1] != len(fields):
        raise GridMismatch(f"{data.shape[1]} coupling columns for {len(fields)} field models")
    if len(measured.track) < 10:
        raise InputError("track fit needs at least 10 positions")
    if not np.any(np.abs(data) > 0):
        raise DegenerateJacobian("coupling series is identically zero; geometry is unconstrained")
    unknown = set(free) - set(TRACK_PARAMS)
    if unknown:
        raise InputError(f"unknown track parameters {sorted(unknown)}")
    values = {"x_offset": 0.0, "y": 0.0, "z": 100.0, "theta": 0.0, "f_c_max": fields[0].f_c_max}
    values.update(init or {})
    names = [p for p in TRACK_PARAMS if p in free]
    lower = {"x_offset": -np.inf, "y": -np.inf, "z": 0.0, "theta": -np.pi / 2, "f_c_max": 0.0}
    upper = {"x_offset": np.inf, "y": np.inf, "z": np.inf, "theta": np.pi / 2, "f_c_max": np.inf}
    # per-mode scale so weak and strong modes weigh comparably
    col_scale = 1.0 / np.maximum(np.abs(data).max(axis=0), 1e-300)

    def residuals(p):
        v = dict(values)
        v.update(zip(names, p))
        return ((track_model(fields, measured.track, v) - data) * col_scale).ravel()

    res = levenberg_marquardt(
        residuals, [values[n] for n in names],
        lower=[lower[n] for n in names], upper=[upper[n] for n in names], max_iter=max_iter,
    )
    best = dict(values)
    best.update({n: float(x) for n, x in zip(names, res.x)})
    rms = float(np.sqrt(np.mean((track_model(fields, measured.track, best) - data) ** 2)))
    return TrackFit(best, {n: float(s) for n, s in zip(names, res.stderr)}, res.converged, res.n_iter, rms)


# -- imaging: convolution and deconvolution -----------------------------------

def _trapezoid_kernel(response: np.ndarray, spacing) -> np.ndarray:
    k = np.array(response, dtype=float, copy=True)
    spacing = np.atleast_1d(np.asarray(spacing, dtype=float))
    for axis in range(len(spacing)):
        if k.shape[axis] < 2:
            continue
        idx = [slice(None)] * k.ndim
        for end in (0, -1):
            idx[axis] = end
            k[tuple(idx)] *= 0.5
    return k * float(np.prod(spacing))


def _check_spacing(spacing, response_spacing, ndim):
    s = np.atleast_1d(np.asarray(spacing, dtype=float))
    if s.size == 1 and ndim == 2:
        s = np.repeat(s, 2)
    if s.size != ndim or np.any(s <= 0):
        raise GridMismatch(f"spacing must give {ndim} positive step(s)")
    if response_spacing is not None:
        r = np.atleast_1d(np.asarray(response_spacing, dtype=float))
        if r.size == 1 and ndim == 2:
            r = np.repeat(r, 2)
        if r.shape != s.shape or not np.allclose(r, s, rtol=1e-12, atol=0):
            raise GridMismatch(f"sample spacing {s.tolist()} differs from response spacing {r.tolist()}")
    return s


def _same_slice(n, m):
    c = (m - 1) // 2
    return slice(c, c + n)


def convolve_sample(sample, response, spacing, *, response_spacing=None) -> np.ndarray:
    """Scan image of an extended sample: ``PL(r) = integral e(r - r') S(r') dl'``.

    1-D mode: ``sample`` has shape ``(n,)`` and ``response`` ``(m,)`` or
    ``(m, n_omega)`` (one spectrum per path sample); the output has the
    sample's length (plus the spectral axis).  2-D raster mode: both arrays
    are ``(ny, nx)`` maps and ``spacing`` is ``(dy, dx)``.  The response is
    centred on its middle sample, weighted with the trapezoidal rule and
    the sample is zero padded outside its grid.
    """
    e = np.asarray(sample, dtype=float)
    R = np.asarray(response, dtype=float)
    if e.ndim == 1:
        s = _check_spacing(spacing, response_spacing, 1)
        # trapezoid weights along the path axis only
        K = np.array(R, dtype=float) * s[0]
        if K.shape[0] > 1:
            K[0] *= 0.5
            K[-1] *= 0.5
        full = convolve(e if R.ndim == 1 else e[:, None], K, mode="full", method="direct")
        return full[_same_slice(e.size, R.shape[0])]
    if e.ndim == 2:
        if R.ndim != 2:
            raise GridMismatch("2-D sample needs a 2-D response map")
        s = _check_spacing(spacing, response_spacing, 2)
        K = _trapezoid_kernel(R, s)
        full = convolve(e, K, mode="full", method="auto")
        return full[_same_slice(e.shape[0], R.shape[0]), _same_slice(e.shape[1], R.shape[1])]
    raise GridMismatch("sample must be 1-D or 2-D")


def default_epsilon(response, spacing) -> float:
    """Default regularization: ``1e-3 * max |R_hat|^2``."""
    K = _trapezoid_kernel(np.asarray(response, dtype=float), spacing)
    return 1e-3 * float(np.max(np.abs(np.fft.fftn(K)) ** 2))


def _regularized_inverse(pl, R, s, epsilon):
    K = _trapezoid_kernel(R, s)
    shape = tuple(n + m - 1 for n, m in zip(pl.shape, K.shape))
    kernel = np.zeros(shape)
    kernel[tuple(slice(0, m) for m in K.shape)] = K
    kernel = np.roll(kernel, [-((m - 1) // 2) for m in K.shape], axis=tuple(range(K.ndim)))
    R_hat = np.fft.fftn(kernel)
    if np.max(np.abs(R_hat)) == 0:
        raise ZeroResponse("response is identically zero")
    if epsilon is None:
        epsilon = 1e-3 * float(np.max(np.abs(R_hat) ** 2))
    P_hat = np.fft.fftn(pl, s=shape, axes=tuple(range(pl.ndim)))
    est = np.fft.ifftn(P_hat * np.conj(R_hat) / (np.abs(R_hat) ** 2 + epsilon)).real
    return est[tuple(slice(0, n) for n in pl.shape)]


def _richardson_lucy(pl, R, s, iterations):
    if any(m % 2 == 0 for m in R.shape):
        raise GridMismatch("multiplicative deconvolution needs an odd-length (centred) response")
    if np.any(R < 0):
        raise InputError("multiplicative deconvolution needs a nonnegative response")
    flipped = R[tuple(slice(None, None, -1) for _ in R.shape)]
    norm = convolve_sample(np.ones_like(pl), flipped, s)
    norm = np.where(norm > 0, norm, np.inf)
    data = np.clip(pl, 0.0, None)
    total = float(np.sum(_trapezoid_kernel(R, s)))
    est = np.full(pl.shape, max(float(data.mean()), 1e-300) / total)
    tiny = 1e-12 * max(float(data.max()), 1e-300)
    for _ in range(iterations):
        blurred = convolve_sample(est, R, s)
        ratio = data / np.maximum(blurred, tiny)
        est = est * convolve_sample(ratio, flipped, s) / norm
    return est


def deconvolve(pl, response, spacing, *, method: str = "regularized", epsilon: float | None = None,
               iterations: int = 200, response_spacing=None) -> np.ndarray:
    """Estimate the sample profile ``e`` from a scan image ``pl``.

    ``method='regularized'`` divides by ``|R_hat|^2 + epsilon`` in the
    frequency domain (default ``epsilon = 1e-3 max |R_hat|^2``).
    ``method='richardson_lucy'`` runs a fixed number of multiplicative
    updates that keep the estimate nonnegative.
    """
    pl = np.asarray(pl, dtype=float)
    R = np.asarray(response, dtype=float)
    if pl.ndim not in (1, 2) or R.ndim != pl.ndim:
        raise GridMismatch("pl and response must both be 1-D or both 2-D")
    s = _check_spacing(spacing, response_spacing, pl.ndim)
    if not np.any(R != 0):
        raise ZeroResponse("response is identically zero")
    if method == "regularized":
        return _regularized_inverse(pl, R, s, epsilon)
    if method == "richardson_lucy":
        return _richardson_lucy(pl, R, s, iterations)
    raise InputError(f"unknown deconvolution method {method!r}")


def point_response(field: FieldModel, emitter: Emitter, half_width: float, step: float, *, axis: str = "x") -> tuple[np.ndarray, np.ndarray]:
    """Coupling profile of a point emitter along a centred scan line (odd length).

    Returns ``(offsets, f_c)``; the cavity-enhanced part of the detected
    signal, which is the compactly supported response used for imaging.
    """
    n = int(round(half_width / step))
    offs = step * np.arange(-n, n + 1)
    ex, ey, ez = emitter.position
    if axis == "x":
        r = (ex - offs, np.full_like(offs, ey), np.full_like(offs, ez))
    else:
        r = (np.full_like(offs, ex), ey - offs, np.full_like(offs, ez))
    return offs, fc_at(field, r, emitter.dipole_angle)
