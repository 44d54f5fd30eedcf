"""Domain value types, unit conventions and (de)serialization.

Units throughout the package: wavelengths in nm, times in ns, angular rates
in rad/ns, spin frequencies in GHz.  Every type validates itself on
construction and is immutable afterwards.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, ClassVar

import numpy as np

from .errors import InputError, ValidationError

#: Speed of light in nm/ns.
C_NM_PER_NS = 299792.458

SPIN_ZERO_FIELD_SPLIT_GHZ = 2.87


def omega_from_wavelength(wavelength_nm):
    """Angular optical frequency (rad/ns) of a vacuum wavelength (nm)."""
    return 2.0 * np.pi * C_NM_PER_NS / np.asarray(wavelength_nm, dtype=float)


def wavelength_from_omega(omega):
    return 2.0 * np.pi * C_NM_PER_NS / np.asarray(omega, dtype=float)


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _finite(x) -> bool:
    return bool(np.all(np.isfinite(np.asarray(x, dtype=float))))


class _Validated:
    """Mixin: run ``_violations`` after construction and raise on failure."""

    def __post_init__(self):
        self._normalize()
        problems = self._violations()
        if problems:
            raise ValidationError(type(self).__name__, problems)

    def _normalize(self) -> None:
        pass

    def _violations(self) -> list[tuple[str, str]]:
        return []

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            out[f.name] = _to_jsonable(getattr(self, f.name))
        return out

    @classmethod
    def from_dict(cls, raw: dict[str, Any]):
        if not isinstance(raw, dict):
            raise ValidationError(cls.__name__, [("<root>", "expected a JSON object")])
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValidationError(cls.__name__, [(k, "unknown field") for k in unknown])
        return cls(**cls._decode_fields(dict(raw)))

    @classmethod
    def _decode_fields(cls, raw: dict[str, Any]) -> dict[str, Any]:
        return raw


def _to_jsonable(value):
    if isinstance(value, _Validated):
        return value.to_dict()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _positive(name, value, out):
    if not (_finite(value) and value > 0):
        out.append((name, "must be finite and > 0"))


def _nonneg(name, value, out):
    if not (_finite(value) and value >= 0):
        out.append((name, "must be finite and >= 0"))


@dataclass(frozen=True)
class Series(_Validated):
    """Sampled (x, y) series: the common currency of fits and simulations."""

    x: np.ndarray
    y: np.ndarray
    x_unit: str = "nm"
    y_unit: str = "counts"
    metadata: dict = field(default_factory=dict, compare=False)

    allow_negative: ClassVar[bool] = False

    def _normalize(self):
        object.__setattr__(self, "x", _frozen_array(self.x))
        object.__setattr__(self, "y", _frozen_array(self.y))
        object.__setattr__(self, "metadata", dict(self.metadata))

    def _violations(self):
        out = []
        if self.x.ndim != 1 or self.y.ndim != 1:
            out.append(("x/y", "must be one-dimensional"))
            return out
        if self.x.shape != self.y.shape:
            out.append(("x/y", f"lengths differ ({self.x.size} vs {self.y.size})"))
        if not _finite(self.x):
            out.append(("x", "must be finite"))
        elif self.x.size > 1 and not np.all(np.diff(self.x) > 0):
            out.append(("x", "must be strictly increasing"))
        if not _finite(self.y):
            out.append(("y", "must be finite"))
        elif not self.allow_negative and np.any(self.y < 0):
            out.append(("y", "must be >= 0"))
        return out

    def __len__(self):
        return int(self.x.size)

    def with_y(self, y, **metadata) -> "Series":
        meta = dict(self.metadata)
        meta.update(metadata)
        return type(self)(self.x, y, self.x_unit, self.y_unit, meta)

    def interp(self, x_new) -> np.ndarray:
        """Linear interpolation of ``y`` onto ``x_new`` (no extrapolation check)."""
        return np.interp(np.asarray(x_new, dtype=float), self.x, self.y)

    def spans(self, x_new) -> bool:
        x_new = np.asarray(x_new, dtype=float)
        return bool(x_new.min() >= self.x[0] and x_new.max() <= self.x[-1])


@dataclass(frozen=True)
class Spectrum(Series):
    pass


@dataclass(frozen=True)
class TimeTrace(Series):
    x_unit: str = "ns"


@dataclass(frozen=True)
class ScanProfile(Series):
    """Signal against scan position; background-subtracted data may dip below zero."""

    allow_negative: ClassVar[bool] = True


@dataclass(frozen=True)
class CavityMode(_Validated):
    """One photonic-crystal cavity resonance plus its parametric field shape.

    ``mode_volume`` is metadata only, in units of (lambda/n)^3.
    """

    lambda_c: float
    q_factor: float
    lattice_a: float = 176.0
    envelope_wx: float = 352.0
    envelope_wy: float = 176.0
    z_decay: float = 100.0
    polarization_angle: float = 0.0
    mode_volume: float | None = None
    n_slab: float = 3.4

    def _violations(self):
        out = []
        for name in ("lambda_c", "q_factor", "lattice_a", "envelope_wx", "envelope_wy", "z_decay", "n_slab"):
            _positive(name, getattr(self, name), out)
        if not _finite(self.polarization_angle):
            out.append(("polarization_angle", "must be finite"))
        if self.mode_volume is not None:
            _positive("mode_volume", self.mode_volume, out)
        if not out and not kappa_of(self) > 0:
            out.append(("q_factor", "derived linewidth must be > 0"))
        return out

    @property
    def omega_c(self) -> float:
        return float(omega_from_wavelength(self.lambda_c))


def kappa_of(mode: CavityMode) -> float:
    """Half-width cavity linewidth ``omega_c / (2 Q)`` in rad/ns.

    This is the rate that appears in the cavity Lorentzian of the detected
    spectrum.  The energy decay rate used by the master equation is twice
    this, see :func:`kappa_energy`.
    """
    return float(omega_from_wavelength(mode.lambda_c)) / (2.0 * mode.q_factor)


def kappa_energy(mode: CavityMode) -> float:
    """Cavity energy (population) decay rate ``omega_c / Q`` in rad/ns."""
    return 2.0 * kappa_of(mode)


def fwhm_wavelength(mode: CavityMode) -> float:
    """Full width at half maximum of the resonance in nm (``lambda_c / Q``)."""
    return mode.lambda_c / mode.q_factor


@dataclass(frozen=True)
class Emitter(_Validated):
    bare_spectrum: Spectrum | None = None
    tau0: float = 16.4
    position: tuple = (0.0, 0.0, 0.0)
    dipole_angle: float = 0.0
    zero_field_split: float = SPIN_ZERO_FIELD_SPLIT_GHZ
    gyromagnetic_ratio: float = 28.0
    contrast: float = 0.3

    def _normalize(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))

    def _violations(self):
        out = []
        _positive("tau0", self.tau0, out)
        if len(self.position) != 3 or not _finite(self.position):
            out.append(("position", "must be three finite coordinates"))
        if not _finite(self.dipole_angle):
            out.append(("dipole_angle", "must be finite"))
        _positive("zero_field_split", self.zero_field_split, out)
        _positive("gyromagnetic_ratio", self.gyromagnetic_ratio, out)
        if not (_finite(self.contrast) and 0 < self.contrast <= 1):
            out.append(("contrast", "must lie in (0, 1]"))
        if self.bare_spectrum is not None and not isinstance(self.bare_spectrum, Series):
            out.append(("bare_spectrum", "must be a Spectrum"))
        return out

    @classmethod
    def _decode_fields(cls, raw):
        if isinstance(raw.get("bare_spectrum"), dict):
            raw["bare_spectrum"] = Spectrum.from_dict(raw["bare_spectrum"])
        if "position" in raw:
            raw["position"] = tuple(raw["position"])
        return raw


@dataclass(frozen=True)
class CoupledSystemParams(_Validated):
    """Emitter-cavity rate set, all in rad/ns.

    ``kappa`` is the cavity energy decay rate and ``gamma`` the emitter
    population decay rate, as they enter the master equation.  ``detuning``
    is cavity minus emitter frequency.
    """

    detuning: float = 0.0
    g: float = 0.0
    kappa: float = 1.0
    gamma: float = 1.0
    gamma_d: float = 0.0

    def _violations(self):
        out = []
        if not _finite(self.detuning):
            out.append(("detuning", "must be finite"))
        for name in ("g", "kappa", "gamma", "gamma_d"):
            _nonneg(name, getattr(self, name), out)
        return out


@dataclass(frozen=True)
class DetectionCoeffs(_Validated):
    c_nv: float = 1.0
    c_cav: float = 1.0
    c_int: float = 0.0
    delta_phi: float = 0.0

    def _violations(self):
        out = []
        _nonneg("c_nv", self.c_nv, out)
        _nonneg("c_cav", self.c_cav, out)
        if not _finite(self.c_int):
            out.append(("c_int", "must be finite"))
        if not _finite(self.delta_phi):
            out.append(("delta_phi", "must be finite"))
        if not out:
            bound = math.sqrt(self.c_nv * self.c_cav)
            # small relative slack so values projected onto the bound by a fit stay valid
            if abs(self.c_int) > bound * (1 + 1e-12) + 1e-300:
                out.append(("c_int", f"|c_int| must be <= sqrt(c_nv*c_cav) = {bound:.6g}"))
        return out


@dataclass(frozen=True)
class EmissionBudget(_Validated):
    """Pump, collection and decay-channel rates of one emitter position."""

    channel_rates: np.ndarray
    collection_eff: np.ndarray | None = None
    pump_rate: float = 1.0
    proportionality: float = 1.0
    nonradiative_rate: float = 0.0

    def _normalize(self):
        rates = _frozen_array(np.atleast_1d(self.channel_rates))
        object.__setattr__(self, "channel_rates", rates)
        eta = np.ones_like(rates) if self.collection_eff is None else np.atleast_1d(self.collection_eff)
        object.__setattr__(self, "collection_eff", _frozen_array(eta))

    def _violations(self):
        out = []
        if self.channel_rates.ndim != 1 or self.channel_rates.size == 0:
            out.append(("channel_rates", "must be a non-empty 1-D array"))
            return out
        if not _finite(self.channel_rates) or np.any(self.channel_rates < 0):
            out.append(("channel_rates", "must be finite and >= 0"))
        if self.collection_eff.shape != self.channel_rates.shape:
            out.append(("collection_eff", "must match channel_rates in length"))
        elif not _finite(self.collection_eff) or np.any((self.collection_eff < 0) | (self.collection_eff > 1)):
            out.append(("collection_eff", "must lie in [0, 1]"))
        _nonneg("pump_rate", self.pump_rate, out)
        _nonneg("proportionality", self.proportionality, out)
        _nonneg("nonradiative_rate", self.nonradiative_rate, out)
        if not out and not self.total_rate > 0:
            out.append(("channel_rates", "total decay rate must be > 0"))
        return out

    @property
    def total_rate(self) -> float:
        return float(np.sum(self.channel_rates) + self.nonradiative_rate)


def validate(value):
    """Re-check every invariant of a domain value and return it.

    Accepts either a constructed value or a ``(cls, raw_dict)`` pair; raises
    :class:`ValidationError` listing every violated invariant.
    """
    if isinstance(value, tuple) and len(value) == 2 and isinstance(value[0], type):
        cls, raw = value
        return cls.from_dict(raw)
    if not isinstance(value, _Validated):
        raise InputError(f"cannot validate object of type {type(value).__name__}")
    problems = value._violations()
    if problems:
        raise ValidationError(type(value).__name__, problems)
    return value


# -- serialization ---------------------------------------------------------

def dumps(value, **kwargs) -> str:
    """JSON text for a domain value (or plain data containing them)."""
    return json.dumps(_to_jsonable(value), sort_keys=True, allow_nan=False, **kwargs)


def loads(cls, text: str):
    return cls.from_dict(json.loads(text))


def _unit_token(unit: str) -> str:
    return unit.replace(",", "_")


def format_float(v: float) -> str:
    return repr(float(v))


def series_to_csv(series: Series) -> str:
    buf = io.StringIO()
    buf.write(f"x_{_unit_token(series.x_unit)},y_{_unit_token(series.y_unit)}\n")
    for xv, yv in zip(series.x, series.y):
        buf.write(f"{format_float(xv)},{format_float(yv)}\n")
    return buf.getvalue()


def write_series_csv(path, series: Series) -> None:
    Path(path).write_text(series_to_csv(series), encoding="utf-8", newline="\n")


def read_series_csv(path, cls: type[Series] = Spectrum) -> Series:
    """Read a two-column ``x_<unit>,y_<unit>`` CSV file."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    return parse_series_csv(path.read_text(encoding="utf-8"), cls, source=str(path))


def parse_series_csv(text: str, cls: type[Series] = Spectrum, source: str = "<string>") -> Series:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise InputError(f"{source}: empty CSV")
    header = [h.strip() for h in rows[0]]
    if len(header) != 2 or not header[0].startswith("x_") or not header[1].startswith("y_"):
        raise InputError(f"{source}: header must be 'x_<unit>,y_<unit>', got {rows[0]!r}")
    xs, ys = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise InputError(f"{source}:{lineno}: expected 2 columns")
        try:
            xs.append(float(row[0]))
            ys.append(float(row[1]))
        except ValueError as exc:
            raise InputError(f"{source}:{lineno}: {exc}") from None
    return cls(np.array(xs), np.array(ys), header[0][2:], header[1][2:])


def write_matrix_csv(path, matrix: np.ndarray, dx_nm: float, dy_nm: float) -> None:
    """2-D field as CSV with a ``# nx ny dx_nm dy_nm`` header line.

    Rows run along y, columns along x.
    """
    matrix = np.asarray(matrix, dtype=float)
    ny, nx = matrix.shape
    lines = [f"# {nx} {ny} {format_float(dx_nm)} {format_float(dy_nm)}"]
    lines += [",".join(format_float(v) for v in row) for row in matrix]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_matrix_csv(path) -> tuple[np.ndarray, float, float]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise InputError(f"{path}: missing '# nx ny dx_nm dy_nm' header")
    try:
        nx, ny, dx, dy = lines[0][1:].split()
        nx, ny, dx, dy = int(nx), int(ny), float(dx), float(dy)
        data = np.array([[float(v) for v in line.split(",")] for line in lines[1:] if line.strip()])
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if data.shape != (ny, nx):
        raise InputError(f"{path}: header says {ny}x{nx}, found {data.shape}")
    return data, dx, dy
