"""Detected-spectrum model, spectral and lifetime fitting, Purcell extraction.

The detected spectrum of an emitter near one or more cavity modes is

    S(w) = I0(w) * [C_nv + sum_m (C_cav f_m |L_m(w)|^2
                                  + 2 C_int Re(exp(i dphi) sqrt(f_m) L_m(w)))]

with ``L_m(w) = 1 / (1 + i (w - w_m) / k_m)`` and ``k_m = w_m / (2 Q_m)``.
Modes are assumed spectrally separated, so they add without cross terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DegenerateJacobian,
    GridOutsideBaseline,
    InputError,
    NoOverlap,
    ValidationError,
    WindowTooShort,
)
from .lsq import levenberg_marquardt
from .model import (
    C_NM_PER_NS,
    CavityMode,
    DetectionCoeffs,
    EmissionBudget,
    Series,
    Spectrum,
    TimeTrace,
    omega_from_wavelength,
    wavelength_from_omega,
)


def lorentzian(omega, omega_c, kappa_hwhm):
    """Complex cavity response ``1 / (1 + i (omega - omega_c) / kappa_hwhm)``."""
    if not kappa_hwhm > 0:
        raise InputError("kappa_hwhm must be > 0")
    return 1.0 / (1.0 + 1j * (np.asarray(omega, dtype=float) - omega_c) / kappa_hwhm)


@dataclass(frozen=True)
class ModeLine:
    """One resonance entering the detected spectrum."""

    lambda_c: float
    q_factor: float
    f_c: float

    def __post_init__(self):
        bad = [(n, "must be finite and > 0") for n in ("lambda_c", "q_factor")
               if not (math.isfinite(getattr(self, n)) and getattr(self, n) > 0)]
        if not (math.isfinite(self.f_c) and self.f_c >= 0):
            bad.append(("f_c", "must be finite and >= 0"))
        if bad:
            raise ValidationError("ModeLine", bad)

    @property
    def omega_c(self) -> float:
        return float(omega_from_wavelength(self.lambda_c))

    @property
    def kappa_hwhm(self) -> float:
        return self.omega_c / (2.0 * self.q_factor)

    def as_rates(self) -> tuple[float, float, float]:
        return self.omega_c, self.kappa_hwhm, self.f_c

    @classmethod
    def from_mode(cls, mode: CavityMode, f_c: float) -> "ModeLine":
        return cls(mode.lambda_c, mode.q_factor, f_c)


def _as_rate_triples(modes) -> list[tuple[float, float, float]]:
    out = []
    for m in modes:
        if isinstance(m, ModeLine):
            out.append(m.as_rates())
        else:
            omega_c, kappa, f_c = m
            out.append((float(omega_c), float(kappa), float(f_c)))
    if not out:
        raise InputError("at least one cavity mode is required")
    return out


def spectral_bracket(coeffs: DetectionCoeffs, modes, omega) -> np.ndarray:
    """The bracketed factor of the detected spectrum (no baseline)."""
    omega = np.asarray(omega, dtype=float)
    total = np.full(omega.shape, float(coeffs.c_nv))
    phase = np.exp(1j * coeffs.delta_phi)
    for omega_c, kappa, f_c in _as_rate_triples(modes):
        L = lorentzian(omega, omega_c, kappa)
        total += coeffs.c_cav * f_c * np.abs(L) ** 2
        if coeffs.c_int != 0.0:
            total += 2.0 * coeffs.c_int * np.real(phase * math.sqrt(max(f_c, 0.0)) * L)
    return total


def _baseline_on(nv_baseline: Series | None, omega: np.ndarray) -> np.ndarray:
    if nv_baseline is None:
        return np.ones_like(omega)
    if nv_baseline.x_unit == "nm":
        x = wavelength_from_omega(omega)
    else:
        x = omega
    if not nv_baseline.spans(x):
        raise GridOutsideBaseline(
            f"grid [{x.min():.6g}, {x.max():.6g}] {nv_baseline.x_unit} not covered by baseline "
            f"[{nv_baseline.x[0]:.6g}, {nv_baseline.x[-1]:.6g}]"
        )
    return nv_baseline.interp(x)


def detected_spectrum(coeffs: DetectionCoeffs, modes, nv_baseline: Series | None, omega_grid) -> Spectrum:
    """Detected spectrum on an angular-frequency grid (rad/ns).

    ``modes`` holds ``ModeLine`` objects or ``(omega_c, kappa_hwhm, f_c)``
    triples.  ``nv_baseline`` is the bare emitter spectrum (x in nm or
    rad/ns), linearly interpolated; ``None`` means a flat unit baseline.
    """
    omega = np.asarray(omega_grid, dtype=float)
    s = _baseline_on(nv_baseline, omega) * spectral_bracket(coeffs, modes, omega)
    return Spectrum(omega, s, "rad/ns", "counts" if nv_baseline is not None else "normalized")


def detected_spectrum_nm(coeffs: DetectionCoeffs, modes, nv_baseline: Series | None, wavelength_grid) -> Spectrum:
    """Same as :func:`detected_spectrum` but sampled on a wavelength grid (nm)."""
    wl = np.asarray(wavelength_grid, dtype=float)
    omega = omega_from_wavelength(wl)
    s = _baseline_on(nv_baseline, omega) * spectral_bracket(coeffs, modes, omega)
    return Spectrum(wl, s, "nm", "counts" if nv_baseline is not None else "normalized")


def nv_phonon_sideband(wavelength_nm, peak: float = 1.0) -> Spectrum:
    """Smooth synthetic room-temperature NV emission profile (nm grid).

    A weak zero-phonon line at 637.8 nm on top of a broad sideband running
    from about 640 to 800 nm.  A stand-in for a measured bare spectrum.
    """
    wl = np.asarray(wavelength_nm, dtype=float)

    def gauss(c, w, amp):
        return amp * np.exp(-0.5 * ((wl - c) / w) ** 2)

    s = gauss(637.8, 1.2, 0.12) + gauss(662.0, 14.0, 0.55) + gauss(690.0, 22.0, 1.0) + gauss(735.0, 30.0, 0.6)
    s = s * peak / s.max()
    return Spectrum(wl, s, "nm", "counts", {"source": "synthetic NV sideband"})


# -- spectral fit -------------------------------------------------------------

GLOBAL_PARAMS = ("c_nv", "c_cav", "c_int", "delta_phi")
MODE_PARAMS = ("lambda_c", "q_factor", "f_c")
DEFAULT_FIXED = frozenset({"c_cav", "c_int", "delta_phi"})


@dataclass
class SpectrumFit:
    modes: list[ModeLine]
    coeffs: DetectionCoeffs
    residual_rms: float = 0.0
    covariance: np.ndarray | None = None
    param_names: list[str] = field(default_factory=list)
    stderr: dict[str, float] = field(default_factory=dict)
    n_iter: int = 0
    converged: bool = False
    message: str = ""
    cost_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if any(m.f_c < 0 for m in self.modes) or any(m.q_factor <= 0 for m in self.modes):
            raise InputError("SpectrumFit needs f_c >= 0 and q_factor > 0")
        if self.residual_rms < 0:
            raise InputError("residual_rms must be >= 0")

    def to_dict(self) -> dict:
        return {
            "modes": [{"lambda_c": m.lambda_c, "q_factor": m.q_factor, "f_c": m.f_c} for m in self.modes],
            "coeffs": self.coeffs.to_dict(),
            "residual_rms": self.residual_rms,
            "covariance": None if self.covariance is None else np.asarray(self.covariance).tolist(),
            "param_names": list(self.param_names),
            "stderr": dict(self.stderr),
            "n_iter": self.n_iter,
            "converged": self.converged,
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SpectrumFit":
        modes = [ModeLine(float(m["lambda_c"]), float(m["q_factor"]), float(m["f_c"])) for m in raw["modes"]]
        cov = raw.get("covariance")
        return cls(
            modes=modes,
            coeffs=DetectionCoeffs.from_dict(raw.get("coeffs", {})),
            residual_rms=float(raw.get("residual_rms", 0.0)),
            covariance=None if cov is None else np.array(cov, dtype=float),
            param_names=list(raw.get("param_names", [])),
            stderr={k: float(v) for k, v in raw.get("stderr", {}).items()},
            n_iter=int(raw.get("n_iter", 0)),
            converged=bool(raw.get("converged", False)),
            message=str(raw.get("message", "")),
        )

    def model(self, wavelength_grid, nv_baseline: Series | None = None) -> Spectrum:
        return detected_spectrum_nm(self.coeffs, self.modes, nv_baseline, wavelength_grid)


def parameter_names(n_modes: int) -> list[str]:
    names = list(GLOBAL_PARAMS)
    for i in range(n_modes):
        names += [f"{p}[{i}]" for p in MODE_PARAMS]
    return names


def _pack(modes, coeffs) -> np.ndarray:
    vals = [coeffs.c_nv, coeffs.c_cav, coeffs.c_int, coeffs.delta_phi]
    for m in modes:
        vals += [m.lambda_c, m.q_factor, m.f_c]
    return np.array(vals, dtype=float)


def _unpack(vec) -> tuple[list[ModeLine], DetectionCoeffs]:
    c_nv, c_cav, c_int, dphi = vec[:4]
    modes = [ModeLine(*map(float, vec[4 + 3 * i: 7 + 3 * i])) for i in range((len(vec) - 4) // 3)]
    return modes, DetectionCoeffs(float(c_nv), float(c_cav), float(c_int), float(dphi))


def _spectral_fit_weights(y, weighting: str) -> np.ndarray:
    if weighting == "poisson":
        return 1.0 / np.sqrt(np.maximum(y, 1.0))
    if weighting == "uniform":
        return np.ones_like(y)
    raise InputError(f"unknown weighting {weighting!r}")


def fit_spectrum(
    data: Series,
    nv_baseline: Series | None,
    init: SpectrumFit,
    fixed=DEFAULT_FIXED,
    *,
    weighting: str = "poisson",
    max_iter: int = 200,
) -> SpectrumFit:
    """Least-squares fit of the detected-spectrum model to ``data`` (x in nm).

    ``fixed`` names parameters held at their ``init`` values: any of
    ``c_nv, c_cav, c_int, delta_phi`` or per-mode ``lambda_c[i]``,
    ``q_factor[i]``, ``f_c[i]`` (a bare mode-parameter name fixes it for all
    modes).  Since only the products ``c_cav * f_c`` and ``c_int * sqrt(f_c)``
    are observable, ``c_cav`` is fixed by default.
    """
    if data.x_unit != "nm":
        raise InputError(f"spectral data must be on a wavelength axis (nm), got {data.x_unit!r}")
    if nv_baseline is not None:
        lo, hi = max(data.x[0], nv_baseline.x[0]), min(data.x[-1], nv_baseline.x[-1])
        if not lo < hi:
            raise NoOverlap("data and baseline do not overlap")
        keep = (data.x >= lo) & (data.x <= hi)
        wl, y = data.x[keep], data.y[keep]
    else:
        wl, y = data.x, data.y
    omega = omega_from_wavelength(wl)
    base = _baseline_on(nv_baseline, omega)
    weights = _spectral_fit_weights(y, weighting)

    n_modes = len(init.modes)
    names = parameter_names(n_modes)
    fixed = set(fixed)
    free = [
        i for i, name in enumerate(names)
        if name not in fixed and name.split("[")[0] not in fixed
    ]
    full0 = _pack(init.modes, init.coeffs)

    lo_full = np.full(full0.size, -np.inf)
    hi_full = np.full(full0.size, np.inf)
    lo_full[0] = lo_full[1] = 0.0
    for i in range(n_modes):
        lo_full[4 + 3 * i] = wl[0]
        hi_full[4 + 3 * i] = wl[-1]
        lo_full[5 + 3 * i] = 1.0
        lo_full[6 + 3 * i] = 0.0

    def expand(p):
        full = full0.copy()
        full[free] = p
        return full

    def residuals(p):
        full = expand(p)
        c_nv, c_cav, c_int, dphi = full[:4]
        total = np.full(omega.shape, c_nv)
        phase = np.exp(1j * dphi)
        for i in range(n_modes):
            lam, q, f_c = full[4 + 3 * i: 7 + 3 * i]
            omega_c = 2.0 * np.pi * C_NM_PER_NS / lam
            L = 1.0 / (1.0 + 1j * (omega - omega_c) / (omega_c / (2.0 * q)))
            total = total + c_cav * f_c * (L.real**2 + L.imag**2)
            if c_int != 0.0:
                total = total + 2.0 * c_int * math.sqrt(max(f_c, 0.0)) * np.real(phase * L)
        return (base * total - y) * weights

    def project(p):
        full = expand(p)
        bound = math.sqrt(max(full[0], 0.0) * max(full[1], 0.0))
        full[2] = min(max(full[2], -bound), bound)
        return full[free]

    result = levenberg_marquardt(
        residuals, full0[free], lower=lo_full[free], upper=hi_full[free],
        project=project, max_iter=max_iter,
    )
    best = expand(result.x)
    best[3] = math.remainder(best[3], 2.0 * math.pi)
    modes, coeffs = _unpack(best)
    resid = (detected_spectrum_nm(coeffs, modes, None, wl).y * base - y)
    free_names = [names[i] for i in free]
    return SpectrumFit(
        modes=modes,
        coeffs=coeffs,
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        covariance=result.covariance,
        param_names=free_names,
        stderr={n: float(s) for n, s in zip(free_names, result.stderr)},
        n_iter=result.n_iter,
        converged=result.converged,
        message=result.message,
        cost_history=result.cost_history,
    )


def peak_to_background(spectrum: Spectrum, wavelength: float, coeffs: DetectionCoeffs, nv_baseline: Series | None = None) -> float:
    """Ratio of the spectrum at the sample nearest ``wavelength`` to ``C_nv * I0`` there."""
    x = spectrum.x
    if spectrum.x_unit != "nm":
        x = wavelength_from_omega(spectrum.x)
    i = int(np.argmin(np.abs(x - wavelength)))
    base = 1.0 if nv_baseline is None else float(nv_baseline.interp(x[i]))
    return float(spectrum.y[i] / (coeffs.c_nv * base))


# -- lifetime fit -------------------------------------------------------------

@dataclass(frozen=True)
class LifetimeFit:
    tau: float
    amplitude: float
    baseline: float
    tau_stderr: float
    converged: bool = True
    n_iter: int = 0

    def __post_init__(self):
        if not self.tau > 0:
            raise InputError("LifetimeFit.tau must be > 0")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau, "amplitude": self.amplitude, "baseline": self.baseline,
            "tau_stderr": self.tau_stderr, "converged": self.converged, "n_iter": self.n_iter,
        }


def fit_lifetime(
    trace: TimeTrace,
    *,
    window: tuple[float, float] | None = None,
    tau_guess: float | None = None,
    weighting: str = "poisson",
    max_iter: int = 200,
) -> LifetimeFit:
    """Fit ``A exp(-(t - t0)/tau) + B`` to a decay histogram.

    The window defaults to the peak bin through the end of the trace; ``t0``
    is the window start.  A degenerate trace (no decay signal) gives
    ``converged=False`` with ``tau = inf``.
    """
    t, y = trace.x, trace.y
    if np.any(y < 0):
        raise InputError("decay histogram counts must be >= 0")
    if window is None:
        start, stop = t[int(np.argmax(y))], t[-1]
    else:
        start, stop = window
    keep = (t >= start) & (t <= stop)
    tw, yw = t[keep], y[keep]
    if tw.size < 4:
        raise WindowTooShort(f"fit window holds only {tw.size} bins")
    t0 = tw[0]
    tail = yw[-max(3, yw.size // 10):]
    b0 = float(np.median(tail))
    a0 = float(yw[0] - b0)
    if tau_guess is None:
        if a0 > 0:
            # 1/e crossing of the background-subtracted decay
            below = np.nonzero(yw - b0 <= a0 / math.e)[0]
            tau_guess = float(tw[below[0]] - t0) if below.size else float(tw[-1] - t0)
            tau_guess = max(tau_guess, tw[1] - tw[0])
        else:
            tau_guess = float(tw[-1] - t0)
    if tw[-1] - t0 < 3.0 * tau_guess:
        raise WindowTooShort(
            f"window spans {tw[-1] - t0:.4g} ns, need at least 3 * tau_guess = {3 * tau_guess:.4g} ns"
        )
    if a0 <= 0:
        return LifetimeFit(math.inf, 0.0, b0, math.inf, converged=False)

    w = _spectral_fit_weights(yw, weighting)
    dt = tw - t0

    def residuals(p):
        A, tau, B = p
        return (A * np.exp(-dt / tau) + B - yw) * w

    def jac(p):
        A, tau, B = p
        e = np.exp(-dt / tau)
        return np.column_stack([e, A * e * dt / tau**2, np.ones_like(dt)]) * w[:, None]

    try:
        res = levenberg_marquardt(
            residuals, [a0, tau_guess, b0], jac=jac,
            lower=[0.0, 1e-6 * tau_guess, -np.inf], max_iter=max_iter,
        )
    except DegenerateJacobian:
        return LifetimeFit(math.inf, 0.0, b0, math.inf, converged=False)
    A, tau, B = res.x
    converged = res.converged and A > 0 and tau < 1e3 * (tw[-1] - t0)
    return LifetimeFit(float(tau), float(A), float(B), float(res.stderr[1]), converged, res.n_iter)


# -- rate algebra -------------------------------------------------------------

def purcell_spectrum(i_coupled: Series, i_bare: Series, tau_c: float, tau_0: float, *, floor: float = 0.01) -> Spectrum:
    """Spectrally resolved emission-rate enhancement ``I_c tau_0 / (I_0 tau_c)``.

    ``i_coupled`` is resampled linearly onto the bare-spectrum grid within the
    overlap of the two.  Bins where the bare spectrum is below ``floor`` times
    its maximum are masked: their value is 0 and ``metadata['mask']`` is True.
    """
    if not (tau_c > 0 and tau_0 > 0):
        raise InputError("lifetimes must be > 0")
    lo, hi = max(i_coupled.x[0], i_bare.x[0]), min(i_coupled.x[-1], i_bare.x[-1])
    keep = (i_bare.x >= lo) & (i_bare.x <= hi)
    if not lo < hi or keep.sum() == 0:
        raise NoOverlap("coupled and bare spectra share no support")
    x = i_bare.x[keep]
    bare = i_bare.y[keep]
    coupled = i_coupled.interp(x)
    mask = bare < floor * i_bare.y.max()
    ratio = np.zeros_like(x)
    ok = ~mask
    ratio[ok] = coupled[ok] * tau_0 / (bare[ok] * tau_c)
    return Spectrum(x, ratio, i_bare.x_unit, "dimensionless",
                    {"mask": mask.tolist(), "tau_c": tau_c, "tau_0": tau_0, "floor": floor})


def branching_fractions(budget: EmissionBudget) -> tuple[np.ndarray, float]:
    """Per-channel branching ratios ``gamma_j / Gamma`` and the nonradiative fraction."""
    total = budget.total_rate
    return budget.channel_rates / total, budget.nonradiative_rate / total


def intensity_model(budget: EmissionBudget) -> np.ndarray:
    """Per-channel detected intensity ``c p eta_j gamma_j / Gamma``."""
    beta, _ = branching_fractions(budget)
    return budget.proportionality * budget.pump_rate * budget.collection_eff * beta


def with_enhancement(budget: EmissionBudget, enhancement, nonradiative_rate: float | None = None) -> EmissionBudget:
    """Budget with every radiative channel multiplied by ``enhancement``."""
    rates = budget.channel_rates * np.asarray(enhancement, dtype=float)
    nr = budget.nonradiative_rate if nonradiative_rate is None else nonradiative_rate
    return replace(budget, channel_rates=rates, nonradiative_rate=nr)


def synthetic_decay(tau: float, t_grid, *, peak_counts: float = 1e4, background: float = 0.0,
                    t_pulse: float = 0.0, rng: np.random.Generator | None = None) -> TimeTrace:
    """Single-exponential decay histogram, Poisson sampled when ``rng`` is given."""
    t = np.asarray(t_grid, dtype=float)
    mean = np.where(t >= t_pulse, peak_counts * np.exp(-(t - t_pulse) / tau), 0.0) + background
    y = rng.poisson(mean).astype(float) if rng is not None else mean
    return TimeTrace(t, y, "ns", "counts", {"tau": tau, "peak_counts": peak_counts})
