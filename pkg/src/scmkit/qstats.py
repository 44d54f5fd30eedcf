"""Photon statistics of a shelving three-level emitter and NV spin readout.

Three-level kinetics: ground --k_p--> excited --k_d--> ground (photon),
excited --k_s--> shelf --k_r--> ground.  Rates in 1/ns.

The default shelving rates are a plausibility profile for a room-temperature
NV, not measured values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import InputError, SingularRateMatrix, ValidationError
from .model import SPIN_ZERO_FIELD_SPLIT_GHZ, Spectrum, TimeTrace, _Validated

GROUND, EXCITED, SHELF = 0, 1, 2


@dataclass(frozen=True)
class ThreeLevelRates(_Validated):
    k_p: float = 0.05
    k_d: float = 1.0 / 16.4
    k_s: float = 0.02
    k_r: float = 0.003

    def _violations(self):
        out = []
        for name in ("k_p", "k_d", "k_s", "k_r"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                out.append((name, "must be finite and >= 0"))
        if not self.k_d > 0:
            out.append(("k_d", "must be > 0"))
        return out

    def rate_matrix(self) -> np.ndarray:
        """Generator ``M`` with ``dp/dt = M p``; columns sum to zero."""
        kp, kd, ks, kr = self.k_p, self.k_d, self.k_s, self.k_r
        return np.array([
            [-kp, kd, kr],
            [kp, -(kd + ks), 0.0],
            [0.0, ks, -kr],
        ])


def steady_state(rates: ThreeLevelRates) -> np.ndarray:
    """Stationary populations; raises if there is no emitting steady state."""
    if rates.k_p <= 0:
        raise SingularRateMatrix("no pump: the emitter never leaves the ground state")
    if rates.k_s > 0 and rates.k_r <= 0:
        raise SingularRateMatrix("shelf has no exit: population is trapped")
    kp, kd, ks, kr = rates.k_p, rates.k_d, rates.k_s, rates.k_r
    # balance of the cycle ground -> excited -> (ground | shelf -> ground)
    if ks > 0:
        p = np.array([(kd + ks) * kr, kp * kr, kp * ks])
    else:
        p = np.array([kd, kp, 0.0])
    return p / p.sum()


def populations(rates: ThreeLevelRates, tau_grid, p0=(1.0, 0.0, 0.0)) -> np.ndarray:
    """Populations at each ``|tau|`` starting from ``p0``; shape ``(len(tau), 3)``."""
    M = rates.rate_matrix()
    taus = np.abs(np.asarray(tau_grid, dtype=float))
    p0 = np.asarray(p0, dtype=float)
    w, V = np.linalg.eig(M)
    if np.linalg.cond(V) < 1e4:
        coef = np.linalg.solve(V, p0.astype(complex))
        out = ((np.exp(np.outer(taus, w)) * coef[None, :]) @ V.T).real
        out[taus == 0] = p0
        # rounding can leave populations a few ulp below zero
        return np.clip(out, 0.0, 1.0)
    # near-degenerate eigenvalues: fall back to expm per point
    out = np.empty((taus.size, 3))
    cache: dict[float, np.ndarray] = {}
    for i, t in enumerate(taus):
        if t not in cache:
            cache[t] = expm(M * t) @ p0
        out[i] = cache[t]
    return out


def g2_rate_model(rates: ThreeLevelRates, tau_grid) -> TimeTrace:
    """``g2(tau) = p_e(|tau|) / p_e(inf)`` after a detection resets the emitter to ground."""
    tau = np.asarray(tau_grid, dtype=float)
    pss = steady_state(rates)
    pe = populations(rates, tau)[:, EXCITED]
    return TimeTrace(tau, pe / pss[EXCITED], "ns", "g2", {"rates": rates.to_dict()})


def emission_rate(rates: ThreeLevelRates) -> float:
    """Stationary photon emission rate ``k_d p_e`` (1/ns)."""
    return rates.k_d * float(steady_state(rates)[EXCITED])


def emission_intervals(rates: ThreeLevelRates, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` waiting times between consecutive photon emissions.

    Every emission returns the emitter to the ground state, so the intervals
    are independent; each one is built by running pump / decay / shelving
    cycles until a radiative decay happens.
    """
    kp, kd, ks, kr = rates.k_p, rates.k_d, rates.k_s, rates.k_r
    total = np.zeros(n)
    active = np.arange(n)
    while active.size:
        m = active.size
        wait = rng.exponential(1.0 / kp, m) + rng.exponential(1.0 / (kd + ks), m)
        radiative = rng.random(m) * (kd + ks) < kd
        shelf = ~radiative
        if ks > 0:
            wait[shelf] += rng.exponential(1.0 / kr, int(shelf.sum()))
        total[active] += wait
        active = active[shelf]
    return total


def _pair_delays(start: np.ndarray, stop: np.ndarray, tau_max: float) -> np.ndarray:
    lo = np.searchsorted(stop, start - tau_max, side="left")
    hi = np.searchsorted(stop, start + tau_max, side="right")
    counts = hi - lo
    if counts.sum() == 0:
        return np.empty(0)
    owner = np.repeat(np.arange(start.size), counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    return stop[np.repeat(lo, counts) + offsets] - start[owner]


def hbt_histogram(
    rates: ThreeLevelRates,
    total_time: float,
    bin_width: float,
    seed: int = 0,
    *,
    tau_max: float | None = None,
    dark_count_rate: float = 0.0,
    efficiency: float = 1.0,
) -> TimeTrace:
    """Simulated two-detector coincidence histogram.

    Photons are split 50/50 onto two detectors (each detected with
    ``efficiency``); the histogram collects all delays ``t_stop - t_start``
    within ``+/- tau_max`` between detector-1 and detector-2 clicks
    (multi-stop time tagging).  ``metadata`` carries the click totals needed
    to normalize it (see :func:`normalize_histogram`).
    """
    if not bin_width > 0 or not total_time > 0:
        raise InputError("bin_width and total_time must be > 0")
    if tau_max is None:
        tau_max = 200.0 * bin_width
    nbins = int(round(tau_max / bin_width))
    edges = bin_width * np.arange(-nbins, nbins + 2) - bin_width / 2
    centers = 0.5 * (edges[:-1] + edges[1:])
    rng = np.random.default_rng(seed)
    times = np.empty(0)
    if rates.k_p > 0:
        mean_interval = 1.0 / emission_rate(rates)
        chunk = int(total_time / mean_interval * 1.05) + 16
        pieces, t_end = [], 0.0
        while t_end < total_time:
            t = t_end + np.cumsum(emission_intervals(rates, chunk, rng))
            pieces.append(t)
            t_end = t[-1]
        times = np.concatenate(pieces)
        times = times[times < total_time]
    detector = rng.random(times.size) < 0.5
    detected = rng.random(times.size) < efficiency
    d1 = times[detector & detected]
    d2 = times[~detector & detected]
    if dark_count_rate > 0:
        d1 = np.sort(np.concatenate([d1, rng.uniform(0, total_time, rng.poisson(dark_count_rate * total_time))]))
        d2 = np.sort(np.concatenate([d2, rng.uniform(0, total_time, rng.poisson(dark_count_rate * total_time))]))
    delays = _pair_delays(d1, d2, edges[-1])
    counts, _ = np.histogram(delays, bins=edges)
    meta = {
        "n_emitted": int(times.size), "n_start": int(d1.size), "n_stop": int(d2.size),
        "total_time": total_time, "bin_width": bin_width, "seed": seed,
        "dark_count_rate": dark_count_rate, "efficiency": efficiency,
    }
    return TimeTrace(centers, counts.astype(float), "ns", "coincidences", meta)


def normalize_histogram(hist: TimeTrace) -> TimeTrace:
    """Divide by the uncorrelated coincidence level ``N1 N2 bin / T``."""
    m = hist.metadata
    level = m["n_start"] * m["n_stop"] * m["bin_width"] / m["total_time"]
    if level <= 0:
        return hist.with_y(np.zeros_like(hist.y))
    return TimeTrace(hist.x, hist.y / level, "ns", "g2", dict(m))


def expected_histogram(rates: ThreeLevelRates, hist: TimeTrace, subsamples: int = 8) -> np.ndarray:
    """Model coincidences per bin: uncorrelated level times the bin-averaged g2."""
    m = hist.metadata
    w = m["bin_width"]
    offs = (np.arange(subsamples) + 0.5) / subsamples - 0.5
    taus = (hist.x[:, None] + w * offs[None, :]).ravel()
    g2 = g2_rate_model(rates, np.sort(np.unique(np.abs(taus))))
    g2_avg = np.interp(np.abs(taus), g2.x, g2.y).reshape(hist.x.size, subsamples).mean(axis=1)
    level = m["n_start"] * m["n_stop"] * w / m["total_time"]
    if m.get("dark_count_rate", 0.0) > 0:
        # dark clicks are uncorrelated: mix signal g2 with a flat floor
        sig = emission_rate(rates) * m.get("efficiency", 1.0) / 2.0
        frac = sig / (sig + m["dark_count_rate"])
        g2_avg = 1.0 + frac**2 * (g2_avg - 1.0)
    return level * g2_avg


# -- spin -----------------------------------------------------------------------

@dataclass(frozen=True)
class SpinParams(_Validated):
    zero_field_split: float = SPIN_ZERO_FIELD_SPLIT_GHZ
    zeeman_split: float = 0.0
    linewidth: float = 0.01
    contrast: float = 0.3
    rabi_freq: float = 2.0 * np.pi * 0.01
    t2_star: float | None = None

    def _violations(self):
        out = []
        if not self.zero_field_split > 0:
            out.append(("zero_field_split", "must be > 0"))
        if not (math.isfinite(self.zeeman_split) and self.zeeman_split >= 0):
            out.append(("zeeman_split", "must be finite and >= 0"))
        if not self.linewidth > 0:
            out.append(("linewidth", "must be > 0"))
        if not (math.isfinite(self.contrast) and 0 <= self.contrast <= 1):
            out.append(("contrast", "must lie in [0, 1]"))
        if not (math.isfinite(self.rabi_freq) and self.rabi_freq >= 0):
            out.append(("rabi_freq", "must be finite and >= 0"))
        if self.t2_star is not None and not self.t2_star > 0:
            out.append(("t2_star", "must be > 0"))
        return out


def esr_spectrum(spin: SpinParams, nu_grid) -> Spectrum:
    """Relative fluorescence versus microwave frequency (GHz).

    Two Lorentzian dips of FWHM ``linewidth`` at ``D -/+ zeeman_split / 2``.
    """
    nu = np.asarray(nu_grid, dtype=float)
    hw2 = (0.5 * spin.linewidth) ** 2
    dips = sum(
        hw2 / ((nu - c) ** 2 + hw2)
        for c in (spin.zero_field_split - 0.5 * spin.zeeman_split, spin.zero_field_split + 0.5 * spin.zeeman_split)
    )
    return Spectrum(nu, 1.0 - spin.contrast * dips, "GHz", "relative")


def rabi_trace(spin: SpinParams, pulse_durations, *, decay: bool = False) -> TimeTrace:
    """Fluorescence after a resonant microwave pulse of each duration (ns).

    ``1 - contrast sin^2(Omega t / 2)``; with ``decay`` the oscillating part
    is damped by ``exp(-t / t2_star)``.
    """
    if not spin.rabi_freq > 0:
        raise InputError("rabi_freq must be > 0")
    t = np.asarray(pulse_durations, dtype=float)
    if decay:
        if spin.t2_star is None:
            raise InputError("decay=True needs t2_star")
        env = np.exp(-t / spin.t2_star)
        y = 1.0 - spin.contrast * 0.5 * (1.0 - env * np.cos(spin.rabi_freq * t))
    else:
        y = 1.0 - spin.contrast * np.sin(0.5 * spin.rabi_freq * t) ** 2
    return TimeTrace(t, y, "ns", "relative")


def rabi_extrema(spin: SpinParams, t_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Analytic ``(maxima, minima)`` pulse durations up to ``t_max``."""
    period = 2.0 * np.pi / spin.rabi_freq
    maxima = np.arange(0.0, t_max + 1e-12, period)
    minima = np.arange(0.5 * period, t_max + 1e-12, period)
    return maxima, minima
