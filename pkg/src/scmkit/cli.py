"""Command-line front end.

Every subcommand reads an optional JSON config (``--config``), applies
``--set key.path=value`` overrides, writes its outputs into ``--out`` and
records a ``manifest.json`` holding the fully resolved config, the seed,
input and output hashes and the tool version.  Passing a manifest back as
``--config`` reproduces the run byte for byte.

Exit codes: 0 success (a fit that hit its iteration cap still counts), 2 bad
input or validation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from . import dynamics, qstats, scanfield, spectro
from .errors import InputError, NumericalError, ScmError
from .model import (
    CavityMode,
    CoupledSystemParams,
    DetectionCoeffs,
    Emitter,
    ScanProfile,
    Spectrum,
    format_float,
    omega_from_wavelength,
    read_series_csv,
    series_to_csv,
    wavelength_from_omega,
)

SCHEMA_VERSION = "1"

MEASURED_MODES = [
    {"lambda_c": 643.0, "q_factor": 610.0, "f_c": 5.3},
    {"lambda_c": 667.3, "q_factor": 550.0, "f_c": 0.7},
]

DEFAULTS: dict[str, dict[str, Any]] = {
    "spectrum": {
        "model": "lineshape",
        "grid": {"start_nm": 600.0, "stop_nm": 720.0, "step_nm": 0.01},
        "baseline": "flat",
        "coeffs": {"c_nv": 1.0, "c_cav": 1.0, "c_int": 0.0, "delta_phi": 0.0},
        "modes": MEASURED_MODES,
        "noise": {"relative": 0.0},
        "dynamics": {"detuning": 0.0, "g": 0.5, "kappa": 2.0, "gamma": 0.1, "gamma_d": 50.0},
        "omega_grid": {"start": -20.0, "stop": 20.0, "num": 2001},
    },
    "fit": {
        "data": None,
        "baseline": "flat",
        "init": {"modes": MEASURED_MODES, "coeffs": {"c_nv": 1.0, "c_cav": 1.0, "c_int": 0.0, "delta_phi": 0.0}},
        "fixed": ["c_cav", "c_int", "delta_phi"],
        "weighting": "poisson",
        "max_iter": 200,
    },
    "scan": {
        "modes": [
            {"lambda_c": 667.3, "q_factor": 550.0, "polarization_angle_deg": 0.0,
             "calibrate": {"y": 70.0, "z": 98.0, "theta_deg": 20.0, "target": 0.7}},
            {"lambda_c": 643.0, "q_factor": 610.0, "polarization_angle_deg": 90.0, "envelope_wy": 220.0,
             "z_decay": 90.0, "calibrate": {"y": 70.0, "z": 98.0, "theta_deg": 20.0, "target": 5.3}},
        ],
        "emitter": {"position": [0.0, 70.0, 98.0], "dipole_angle_deg": 20.0},
        "coeffs": {"c_nv": 1.0, "c_cav": 1.0, "c_int": 0.0, "delta_phi": 0.0},
        "track": {"x_start": -300.0, "x_stop": 300.0, "step": 3.4, "y": 0.0, "z": 0.0,
                  "y_lines": None, "slip_sigma": 0.0},
        "grid": {"start_nm": 630.0, "stop_nm": 680.0, "step_nm": 0.05},
        "baseline": "flat",
        "peak_counts": None,
    },
    "deconvolve": {
        "pl": None,
        "response": None,
        "spacing_nm": 3.4,
        "method": "regularized",
        "epsilon": None,
        "iterations": 200,
        "synthetic": {
            "n": 801,
            "features": [{"center": -340.0, "width": 250.0, "amp": 1.0}, {"center": 410.0, "width": 200.0, "amp": 0.6}],
            "noise": 0.001,
            "response_half_width": 700.0,
            "mode": {"lambda_c": 667.3, "q_factor": 550.0},
            "emitter": {"position": [0.0, 70.0, 98.0], "dipole_angle_deg": 20.0},
            "f_c_max": 1.0,
        },
    },
    "g2": {
        "rates": {"k_p": 0.05, "k_d": 1.0 / 16.4, "k_s": 0.02, "k_r": 0.003},
        "tau": {"max": 300.0, "step": 0.5},
        "hbt": None,
    },
    "spin": {
        "spin": {"zero_field_split": 2.87, "zeeman_split": 0.0, "linewidth": 0.01, "contrast": 0.3,
                 "rabi_freq": 2.0 * math.pi * 0.01, "t2_star": None},
        "nu": {"start": 2.70, "stop": 3.05, "step": 0.0005},
        "rabi": {"t_max": 500.0, "step": 0.5, "decay": False},
    },
}


# -- config handling ------------------------------------------------------------

def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config: dict, assignment: str) -> None:
    """Apply one ``a.b.0.c=value`` override in place (value parsed as JSON if possible)."""
    if "=" not in assignment:
        raise InputError(f"--set expects KEY=VALUE, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node: Any = config
    for i, part in enumerate(parts[:-1]):
        nxt = node[int(part)] if isinstance(node, list) else node.get(part)
        if nxt is None:
            nxt = {}
            if isinstance(node, list):
                node[int(part)] = nxt
            else:
                node[part] = nxt
        node = nxt
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = _parse_value(raw)
    else:
        node[last] = _parse_value(raw)


def load_config(command: str, path: str | None, overrides: list[str], seed: int | None) -> dict:
    config = copy.deepcopy(DEFAULTS[command])
    config["seed"] = 0
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise InputError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{p}: invalid JSON ({exc})") from None
        if isinstance(raw, dict) and "config" in raw and "tool_version" in raw:
            if raw.get("command") not in (None, command):
                raise InputError(f"{p}: manifest is for '{raw.get('command')}', not '{command}'")
            raw = raw["config"]
        if not isinstance(raw, dict):
            raise InputError(f"{p}: config must be a JSON object")
        config = _deep_merge(config, raw)
    for assignment in overrides:
        apply_override(config, assignment)
    if seed is not None:
        config["seed"] = seed
    unknown = sorted(set(config) - set(DEFAULTS[command]) - {"seed", "version"})
    if unknown:
        raise InputError(f"unknown config key(s) for '{command}': {', '.join(unknown)}")
    version = config.pop("version", SCHEMA_VERSION)
    if str(version) != SCHEMA_VERSION:
        raise InputError(f"config version {version!r} does not match schema version {SCHEMA_VERSION}")
    if not isinstance(config["seed"], int) or config["seed"] < 0:
        raise InputError("seed must be a nonnegative integer")
    return config


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class RunContext:
    def __init__(self, command: str, config: dict, out: Path, threads: int):
        self.command = command
        self.config = config
        self.out = out
        self.threads = threads
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}

    def input_path(self, value) -> Path:
        p = Path(value)
        if not p.is_file():
            raise InputError(f"input file not found: {p}")
        self.inputs[str(value)] = _sha256(p)
        return p

    def write_text(self, name: str, text: str) -> None:
        path = self.out / name
        path.write_text(text, encoding="utf-8", newline="\n")
        self.outputs[name] = hashlib.sha256(text.encode("utf-8")).hexdigest()

    def write_json(self, name: str, payload) -> None:
        self.write_text(name, _json_text(payload))

    def write_manifest(self) -> None:
        manifest = {
            "tool": "scmkit",
            "tool_version": __version__,
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "seed": self.config["seed"],
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }
        (self.out / "manifest.json").write_text(_json_text(manifest), encoding="utf-8", newline="\n")


def _clean(value):
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def _json_text(payload) -> str:
    return json.dumps(_clean(payload), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _table_csv(header: list[str], columns: list) -> str:
    lines = [",".join(header)]
    cols = [np.asarray(c) for c in columns]
    for row in zip(*cols):
        lines.append(",".join(format_float(v) if not isinstance(v, (np.integer, int)) else str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


# -- shared builders ------------------------------------------------------------

def _wavelength_grid(spec: dict) -> np.ndarray:
    start, stop, step = float(spec["start_nm"]), float(spec["stop_nm"]), float(spec["step_nm"])
    if not (step > 0 and stop > start):
        raise InputError("grid needs start_nm < stop_nm and step_nm > 0")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def _baseline(ctx: RunContext, value, grid_nm: np.ndarray | None = None) -> Spectrum | None:
    if value in (None, "flat"):
        return None
    if value == "synthetic":
        lo = 500.0 if grid_nm is None else min(500.0, float(grid_nm.min()) - 1.0)
        hi = 850.0 if grid_nm is None else max(850.0, float(grid_nm.max()) + 1.0)
        return spectro.nv_phonon_sideband(np.arange(lo, hi + 0.025, 0.05), peak=1.0e4)
    return read_series_csv(ctx.input_path(value), Spectrum)


def _coeffs(raw: dict) -> DetectionCoeffs:
    return DetectionCoeffs.from_dict(raw)


def _mode_lines(raw: list) -> list[spectro.ModeLine]:
    if not raw:
        raise InputError("at least one mode is required")
    try:
        return [spectro.ModeLine(float(m["lambda_c"]), float(m["q_factor"]), float(m["f_c"])) for m in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad mode entry: {exc}") from None


def _emitter(raw: dict, bare: Spectrum | None = None) -> Emitter:
    raw = dict(raw)
    if "dipole_angle_deg" in raw:
        raw["dipole_angle"] = math.radians(raw.pop("dipole_angle_deg"))
    raw["bare_spectrum"] = bare
    return Emitter.from_dict(raw)


def _field(raw: dict) -> scanfield.FieldModel:
    raw = dict(raw)
    calib = raw.pop("calibrate", None)
    f_c_max = float(raw.pop("f_c_max", 1.0))
    if "polarization_angle_deg" in raw:
        raw["polarization_angle"] = math.radians(raw.pop("polarization_angle_deg"))
    field = scanfield.FieldModel(CavityMode.from_dict(raw), f_c_max)
    if calib:
        field = scanfield.calibrate_fc_max(
            field, y=float(calib["y"]), z=float(calib["z"]),
            dipole_angle=math.radians(float(calib["theta_deg"])), target=float(calib["target"]),
        )
    return field


# -- subcommands ----------------------------------------------------------------

def cmd_spectrum(ctx: RunContext) -> None:
    cfg = ctx.config
    model = cfg["model"]
    if model not in ("lineshape", "numeric", "both"):
        raise InputError(f"model must be lineshape, numeric or both, got {model!r}")
    summary: dict[str, Any] = {}
    if model in ("lineshape", "both"):
        wl = _wavelength_grid(cfg["grid"])
        base = _baseline(ctx, cfg["baseline"], wl)
        coeffs = _coeffs(cfg["coeffs"])
        modes = _mode_lines(cfg["modes"])
        spec = spectro.detected_spectrum_nm(coeffs, modes, base, wl)
        rel = float(cfg.get("noise", {}).get("relative", 0.0) or 0.0)
        if rel > 0:
            rng = np.random.default_rng(cfg["seed"])
            spec = spec.with_y(np.clip(spec.y * (1.0 + rel * rng.standard_normal(spec.y.size)), 0.0, None))
        ctx.write_text("spectrum.csv", series_to_csv(spec))
        summary["peak_to_background"] = {
            format_float(m.lambda_c): spectro.peak_to_background(spec, m.lambda_c, coeffs, base) for m in modes
        }
    if model in ("numeric", "both"):
        params = CoupledSystemParams.from_dict(cfg["dynamics"])
        og = cfg["omega_grid"]
        omega = np.linspace(float(og["start"]), float(og["stop"]), int(og["num"]))
        num = dynamics.emission_spectrum_numeric(params, _coeffs(cfg["coeffs"]), omega)
        ctx.write_text("spectrum_numeric.csv", series_to_csv(num))
        if params.kappa > 0 and params.gamma > 0:
            summary["purcell_factor"] = dynamics.purcell_factor(params)
    ctx.write_json("summary.json", summary)


def cmd_fit(ctx: RunContext) -> None:
    cfg = ctx.config
    if not cfg.get("data"):
        raise InputError("fit needs 'data' (path to a spectrum CSV)")
    data = read_series_csv(ctx.input_path(cfg["data"]), Spectrum)
    base = _baseline(ctx, cfg["baseline"], data.x)
    init = spectro.SpectrumFit(_mode_lines(cfg["init"]["modes"]), _coeffs(cfg["init"]["coeffs"]))
    fit = spectro.fit_spectrum(
        data, base, init, set(cfg["fixed"]), weighting=cfg["weighting"], max_iter=int(cfg["max_iter"]),
    )
    payload = fit.to_dict()
    payload["provenance"] = {
        "inputs": dict(ctx.inputs), "init": cfg["init"], "fixed": sorted(cfg["fixed"]),
        "weighting": cfg["weighting"], "max_iter": cfg["max_iter"], "tool_version": __version__,
    }
    ctx.write_json("fit.json", payload)
    keep = (data.x >= (base.x[0] if base is not None else -np.inf)) & (data.x <= (base.x[-1] if base is not None else np.inf))
    wl = data.x[keep]
    model = fit.model(wl, base)
    ctx.write_text("residuals.csv", _table_csv(["x_nm", "y_residual"], [wl, data.y[keep] - model.y]))


def cmd_scan(ctx: RunContext) -> None:
    cfg = ctx.config
    fields = [_field(m) for m in cfg["modes"]]
    wl = _wavelength_grid(cfg["grid"])
    base = _baseline(ctx, cfg["baseline"], wl)
    emitter = _emitter(cfg["emitter"], base)
    t = cfg["track"]
    if t.get("y_lines"):
        track = scanfield.raster_track(float(t["x_start"]), float(t["x_stop"]), float(t["step"]),
                                       [float(v) for v in t["y_lines"]], z=float(t["z"]))
    else:
        track = scanfield.line_track(float(t["x_start"]), float(t["x_stop"]), float(t["step"]),
                                     y=float(t["y"]), z=float(t["z"]))
    track = scanfield.apply_slip(track, float(t.get("slip_sigma") or 0.0), seed=cfg["seed"])
    omega = np.sort(omega_from_wavelength(wl))
    result = scanfield.simulate_scan(
        fields, emitter, _coeffs(cfg["coeffs"]), track, omega,
        peak_counts=cfg["peak_counts"], seed=cfg["seed"], threads=ctx.threads,
    )
    wl_sorted = wavelength_from_omega(result.omega)[::-1]
    spectra = result.spectra[:, ::-1]
    header = ["x_nm"] + [f"pos_{k:05d}" for k in range(len(track))]
    ctx.write_text("spectra.csv", _table_csv(header, [wl_sorted] + [spectra[k] for k in range(len(track))]))
    peaks = [scanfield.peak_intensity_series(result, f.mode.omega_c) for f in fields]
    pos = track.positions
    header = ["index", "x_nm", "y_nm", "z_nm"] + [f"fc_{j}" for j in range(len(fields))] + [f"peak_{j}" for j in range(len(fields))]
    cols = [np.arange(len(track)), pos[:, 0], pos[:, 1], pos[:, 2]] + list(result.fc.T) + peaks
    ctx.write_text("fc_track.csv", _table_csv(header, cols))
    ctx.write_json("track.json", track.to_dict())
    light = scanfield.ScanResult(track, result.fc, result.omega, None, None, dict(result.metadata))
    ctx.write_json("scan_result.json", light.to_dict())
    summary = {"fields": [f.to_dict() for f in fields]}
    if not t.get("y_lines"):
        try:
            summary["peak_period_nm"] = scanfield.autocorrelation_period(peaks[0], float(t["step"]))
            summary["fc_lobe_fwhm_nm"] = scanfield.lobe_fwhm(pos[:, 0], result.fc[:, 0])
        except InputError as exc:
            summary["analysis_note"] = str(exc)
    ctx.write_json("summary.json", summary)


def _gaussians(x, features):
    out = np.zeros_like(x)
    for f in features:
        out += float(f["amp"]) * np.exp(-0.5 * ((x - float(f["center"])) / float(f["width"])) ** 2)
    return out


def cmd_deconvolve(ctx: RunContext) -> None:
    cfg = ctx.config
    spacing = float(cfg["spacing_nm"])
    truth = None
    if cfg.get("pl") or cfg.get("response"):
        if not (cfg.get("pl") and cfg.get("response")):
            raise InputError("deconvolve needs both 'pl' and 'response' files (or neither for the synthetic demo)")
        pl_series = read_series_csv(ctx.input_path(cfg["pl"]), ScanProfile)
        resp_series = read_series_csv(ctx.input_path(cfg["response"]), ScanProfile)
        x = pl_series.x
        pl = pl_series.y
        response = resp_series.y
        for name, s in (("pl", pl_series.x), ("response", resp_series.x)):
            if s.size > 1 and not np.allclose(np.diff(s), spacing, rtol=1e-9, atol=0):
                raise InputError(f"{name} grid spacing does not match spacing_nm={spacing}")
    else:
        syn = cfg["synthetic"]
        n = int(syn["n"])
        x = spacing * (np.arange(n) - (n - 1) / 2)
        truth = _gaussians(x, syn["features"])
        field = scanfield.FieldModel(CavityMode.from_dict(syn["mode"]), float(syn["f_c_max"]))
        emitter = _emitter(syn["emitter"])
        _, response = scanfield.point_response(field, emitter, float(syn["response_half_width"]), spacing)
        clean = scanfield.convolve_sample(truth, response, spacing)
        rng = np.random.default_rng(cfg["seed"])
        pl = clean + float(syn["noise"]) * np.abs(clean).max() * rng.standard_normal(clean.size)
        ctx.write_text("truth.csv", _table_csv(["x_nm", "y_sample"], [x, truth]))
        offs = spacing * (np.arange(response.size) - (response.size - 1) / 2)
        ctx.write_text("response.csv", _table_csv(["x_nm", "y_response"], [offs, response]))
        ctx.write_text("pl.csv", _table_csv(["x_nm", "y_pl"], [x, pl]))
    est = scanfield.deconvolve(pl, response, spacing, method=cfg["method"], epsilon=cfg["epsilon"],
                               iterations=int(cfg["iterations"]))
    ctx.write_text("estimate.csv", _table_csv(["x_nm", "y_estimate"], [x, est]))
    summary: dict[str, Any] = {"method": cfg["method"]}
    if truth is not None:
        summary["relative_l2_error"] = float(np.linalg.norm(est - truth) / np.linalg.norm(truth))
    ctx.write_json("summary.json", summary)


def cmd_g2(ctx: RunContext) -> None:
    cfg = ctx.config
    rates = qstats.ThreeLevelRates.from_dict(cfg["rates"])
    tmax, step = float(cfg["tau"]["max"]), float(cfg["tau"]["step"])
    n = int(round(tmax / step))
    tau = step * np.arange(-n, n + 1)
    g2 = qstats.g2_rate_model(rates, tau)
    ctx.write_text("g2.csv", series_to_csv(g2))
    summary: dict[str, Any] = {"emission_rate_per_ns": qstats.emission_rate(rates), "g2_max": float(g2.y.max())}
    hbt = cfg.get("hbt")
    if hbt:
        hist = qstats.hbt_histogram(
            rates, float(hbt["total_time"]), float(hbt["bin_width"]), cfg["seed"],
            tau_max=hbt.get("tau_max"), dark_count_rate=float(hbt.get("dark_count_rate", 0.0)),
        )
        norm = qstats.normalize_histogram(hist)
        ctx.write_text("hbt.csv", _table_csv(["x_ns", "y_coincidences", "y_normalized"], [hist.x, hist.y, norm.y]))
        summary["hbt"] = hist.metadata
    ctx.write_json("summary.json", summary)


def cmd_spin(ctx: RunContext) -> None:
    cfg = ctx.config
    spin = qstats.SpinParams.from_dict(cfg["spin"])
    nu = cfg["nu"]
    n = int(math.floor((float(nu["stop"]) - float(nu["start"])) / float(nu["step"]) + 1e-9)) + 1
    grid = float(nu["start"]) + float(nu["step"]) * np.arange(n)
    ctx.write_text("esr.csv", series_to_csv(qstats.esr_spectrum(spin, grid)))
    r = cfg["rabi"]
    m = int(math.floor(float(r["t_max"]) / float(r["step"]) + 1e-9)) + 1
    t = float(r["step"]) * np.arange(m)
    ctx.write_text("rabi.csv", series_to_csv(qstats.rabi_trace(spin, t, decay=bool(r["decay"]))))


COMMANDS = {
    "spectrum": (cmd_spectrum, "detected lineshape model and/or master-equation spectrum"),
    "fit": (cmd_fit, "fit the detected-spectrum model to a spectrum CSV"),
    "scan": (cmd_scan, "simulate a cavity scan over an emitter"),
    "deconvolve": (cmd_deconvolve, "deconvolve a scan image by the point response"),
    "g2": (cmd_g2, "photon correlation model and HBT histogram"),
    "spin": (cmd_spin, "ESR spectrum and Rabi oscillation traces"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (or a previous manifest.json)")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, dotted path; repeatable")
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for parallel sections")
    parser = argparse.ArgumentParser(prog="scmkit", description="Scanning cavity microscope toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.command, args.config, args.overrides, args.seed)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise InputError(f"cannot create output directory {out}: {exc}") from None
        ctx = RunContext(args.command, config, out, max(1, args.threads))
        COMMANDS[args.command][0](ctx)
        ctx.write_manifest()
    except InputError as exc:
        print(f"scmkit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"scmkit {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 3
    except ScmError as exc:
        print(f"scmkit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (KeyError, TypeError, ValueError) as exc:
        print(f"scmkit {args.command}: bad configuration: {exc!r}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
