"""Emitter-cavity dynamics restricted to zero or one excitation.

Basis ordering for density matrices: ``|e,0>``, ``|g,1>``, ``|g,0>``.
All rates are in rad/ns and times in ns.

The coherent amplitudes obey

    d<a>/dt = c1 <a> + g <sigma>
    d<sigma>/dt = c2 <sigma> - g <a>

with ``c1 = -i*detuning/2 - kappa/2`` and ``c2 = i*detuning/2 - gamma/2 - gamma_d``,
whose eigenvalues are ``(c1 + c2 +/- D) / 2`` with ``D = sqrt((c1 - c2)**2 - 4 g**2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DivergentIntegral, NonMonotonicGrid, ToleranceNotMet, ValidationError, ZeroRate
from .model import CoupledSystemParams, DetectionCoeffs, Spectrum

E0, G1, G0 = 0, 1, 2

DEGENERATE_THRESHOLD = 1e-8


@dataclass(frozen=True)
class EigenRates:
    c1: complex
    c2: complex
    lambda_plus: complex
    lambda_minus: complex
    discriminant_root: complex


def _principal_root(z: complex) -> complex:
    r = complex(np.sqrt(complex(z)))
    # np.sqrt(-x - 0j) lands on -i*sqrt(x); break the tie toward Im >= 0
    if r.real == 0.0 and r.imag < 0:
        r = -r
    return r


def eigenrates(params: CoupledSystemParams) -> EigenRates:
    c1 = complex(-params.kappa / 2.0, -params.detuning / 2.0)
    c2 = complex(-params.gamma / 2.0 - params.gamma_d, params.detuning / 2.0)
    D = _principal_root((c1 - c2) ** 2 - 4.0 * params.g**2)
    return EigenRates(c1, c2, (c1 + c2 + D) / 2.0, (c1 + c2 - D) / 2.0, D)


def _check_grid(t):
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise NonMonotonicGrid("time grid must be a non-empty 1-D array")
    if t[0] < 0:
        raise NonMonotonicGrid("time grid must start at t >= 0")
    if t.size > 1 and not np.all(np.diff(t) > 0):
        raise NonMonotonicGrid("time grid must be strictly increasing")
    return t


def amplitude_trajectory(params: CoupledSystemParams, t_grid):
    """Closed-form ``(a(t), sigma(t))`` for ``a(0) = 0``, ``sigma(0) = 1``.

    Written as ``exp(lambda_plus t) * psi(t)`` with
    ``psi = (1 - exp(-D t)) / D``, which never overflows for ``Re D >= 0`` and
    reduces smoothly to ``t`` in the degenerate limit.
    """
    t = _check_grid(t_grid)
    er = eigenrates(params)
    D = er.discriminant_root
    if abs(D) * t[-1] < DEGENERATE_THRESHOLD:
        psi = t.astype(complex)
    else:
        psi = -np.expm1(-D * t) / D
        psi[t == 0] = 0.0
    growth = np.exp(er.lambda_plus * t)
    a = params.g * growth * psi
    sigma = growth * (1.0 - 0.5 * psi * (er.c1 - er.c2 + D))
    return a, sigma


# -- master equation ----------------------------------------------------------

def _ket_bra(i, j):
    m = np.zeros((3, 3), dtype=complex)
    m[i, j] = 1.0
    return m


def operators():
    """Matrix forms of ``a``, ``sigma`` and ``sigma_z`` on the 3-state basis."""
    a = _ket_bra(G0, G1)
    sigma = _ket_bra(G0, E0)
    sigma_z = np.diag([1.0, -1.0, -1.0]).astype(complex)
    return a, sigma, sigma_z


def hamiltonian(params: CoupledSystemParams) -> np.ndarray:
    """Frame Hamiltonian with the cavity at +detuning/2 and the emitter at -detuning/2.

    The emitter term is written ``-(detuning/2) sigma^dag sigma`` (i.e.
    ``-(detuning/4) sigma_z`` up to a constant) so that the free rotation of
    ``<sigma>`` is ``+i detuning/2``, matching ``c2``.
    """
    a, sigma, _ = operators()
    ad, sd = a.conj().T, sigma.conj().T
    # sigma a^dag and a sigma^dag have to be formed on the full two-excitation
    # space; restricted to the basis they are single transitions
    s_ad = _ket_bra(G1, E0)
    a_sd = _ket_bra(E0, G1)
    d = params.detuning
    return 0.5 * d * (ad @ a) - 0.5 * d * (sd @ sigma) + 1j * params.g * (s_ad - a_sd)


def liouvillian(params: CoupledSystemParams) -> np.ndarray:
    """9x9 generator acting on row-major vectorized density matrices."""
    a, sigma, sigma_z = operators()
    H = hamiltonian(params)
    eye = np.eye(3)

    def left(op):
        return np.kron(op, eye)

    def right(op):
        return np.kron(eye, op.T)

    def dissipator(op):
        opd_op = op.conj().T @ op
        return left(op) @ right(op.conj().T) - 0.5 * (left(opd_op) + right(opd_op))

    L = -1j * (left(H) - right(H))
    L = L + params.kappa * dissipator(a) + params.gamma * dissipator(sigma)
    L = L + 0.5 * params.gamma_d * (left(sigma_z) @ right(sigma_z) - np.eye(9))
    return L


def check_density_matrix(rho, tol: float = 1e-9) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    problems = []
    if rho.shape != (3, 3):
        raise ValidationError("DensityMatrix", [("shape", "must be 3x3")])
    if not np.allclose(rho, rho.conj().T, atol=tol, rtol=0):
        problems.append(("rho", "must be Hermitian"))
    if abs(np.trace(rho) - 1.0) > tol:
        problems.append(("rho", "trace must equal 1"))
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -tol:
        problems.append(("rho", "must be positive semidefinite"))
    if problems:
        raise ValidationError("DensityMatrix", problems)
    return rho


def lindblad_evolve(params: CoupledSystemParams, rho0, t_grid, *, rtol: float = 1e-9, atol: float = 1e-12):
    """Integrate the master equation; returns an array of shape ``(len(t), 3, 3)``.

    Uses an adaptive 8th-order Runge-Kutta scheme with local error control.
    """
    t = _check_grid(t_grid)
    rho0 = check_density_matrix(rho0)
    L = liouvillian(params)
    if t[-1] == t[0]:
        return np.repeat(rho0[None], t.size, axis=0)

    def rhs(_, y):
        return L @ y

    sol = solve_ivp(
        rhs, (t[0], t[-1]), rho0.reshape(-1), method="DOP853", t_eval=t,
        rtol=rtol, atol=atol,
    )
    if not sol.success:
        raise ToleranceNotMet(f"integrator failed at rtol={rtol}: {sol.message}")
    return sol.y.T.reshape(-1, 3, 3)


def expectation(rho_series, op) -> np.ndarray:
    """``Tr(rho op)`` along a series of density matrices."""
    return np.einsum("tij,ji->t", np.asarray(rho_series), op)


# -- spectra -----------------------------------------------------------------

def amplitude_transforms(params: CoupledSystemParams, omega):
    """One-sided Fourier transforms ``int_0^inf (a, sigma) exp(i omega t) dt``."""
    er = eigenrates(params)
    if max(er.lambda_plus.real, er.lambda_minus.real) >= 0:
        raise DivergentIntegral("amplitudes do not decay (Re lambda >= 0)")
    w = 1j * np.asarray(omega, dtype=float)
    denom = (er.lambda_plus + w) * (er.lambda_minus + w)
    a_hat = params.g / denom
    sigma_hat = -(er.c1 + w) / denom
    return a_hat, sigma_hat


def field_amplitude(params: CoupledSystemParams, coeffs: DetectionCoeffs, t_grid):
    """Detected positive-frequency field ``sqrt(c_nv gamma) sigma + e^{i dphi} sqrt(c_cav kappa) a``."""
    a, sigma = amplitude_trajectory(params, t_grid)
    return np.sqrt(coeffs.c_nv * params.gamma) * sigma + np.exp(1j * coeffs.delta_phi) * np.sqrt(
        coeffs.c_cav * params.kappa
    ) * a


def spectrum_normalization(params: CoupledSystemParams) -> float:
    """Scale making the uncoupled emitter line peak at ``c_nv``."""
    if params.gamma <= 0:
        raise ZeroRate("emitter decay rate gamma must be > 0")
    return (0.5 * params.gamma + params.gamma_d) ** 2 / params.gamma


def emission_spectrum_numeric(params: CoupledSystemParams, coeffs: DetectionCoeffs, omega_grid) -> Spectrum:
    """Emission spectrum ``|int_0^inf E(t) exp(i omega t) dt|^2`` after a single excitation.

    ``omega_grid`` is the angular frequency offset (rad/ns) from the frame
    frequency midway between emitter and cavity: the emitter sits at
    ``-detuning/2`` and the cavity at ``+detuning/2``.  The transforms of the
    exponential amplitudes are evaluated in closed form.
    """
    omega = np.asarray(omega_grid, dtype=float)
    a_hat, sigma_hat = amplitude_transforms(params, omega)
    field_hat = np.sqrt(coeffs.c_nv * params.gamma) * sigma_hat + np.exp(1j * coeffs.delta_phi) * np.sqrt(
        coeffs.c_cav * params.kappa
    ) * a_hat
    s = spectrum_normalization(params) * np.abs(field_hat) ** 2
    return Spectrum(omega, s, "rad/ns", "normalized", {"source": "numeric"})


def purcell_factor(params: CoupledSystemParams) -> float:
    """``g**2 / (kappa * gamma)`` with ``kappa`` the cavity energy decay rate."""
    if params.kappa <= 0 or params.gamma <= 0:
        raise ZeroRate("purcell factor needs kappa > 0 and gamma > 0")
    return params.g**2 / (params.kappa * params.gamma)
