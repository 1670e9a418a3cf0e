"""Run configuration and file formats.

Everything on disk is in ordinary frequency (Hz, nu = kappa / 2 pi) and
seconds; :func:`load_config` converts to angular units once.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .model import Configuration, ModeLabel, ModeSpec, SystemConfig, validate_config
from .response import Spectrum
from .timedomain import DetectionSpec, PulseShape, PulseSpec, TimeTrace, TraceKind

TWO_PI = 2.0 * math.pi
OUTPUT_ENV = "CAVITYEO_OUTPUT_DIR"
DATA_DIR = Path(__file__).with_name("data")


class ConfigError(ValueError):
    """Configuration could not be parsed or failed validation; ``errors`` lists every problem."""

    def __init__(self, message, errors=()):
        super().__init__(message)
        self.errors = list(errors) or [message]


_rate = {"type": "number", "minimum": 0}
_mode = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kappa_hz", "kappa_ext_hz"],
    "properties": {
        "kappa_hz": {"type": "number", "exclusiveMinimum": 0},
        "kappa_ext_hz": _rate,
        "detuning_hz": {"type": ["number", "null"]},
    },
}
SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system"],
    "properties": {
        "description": {"type": "string"},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["configuration", "g0_hz", "modes"],
            "properties": {
                "configuration": {"enum": [c.value for c in Configuration]},
                "g0_hz": _rate,
                "j_s_hz": _rate,
                "j_as_hz": _rate,
                "fsr_hz": {"type": "number", "exclusiveMinimum": 0},
                "pump_wavelength_m": {"type": "number", "exclusiveMinimum": 0},
                "modes": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["stokes", "pump", "anti_stokes", "microwave"],
                    "properties": {m.value: _mode for m in ModeLabel},
                },
            },
        },
        "pulse": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "properties": {
                "duration_s": {"type": "number", "exclusiveMinimum": 0},
                "peak_power_w": _rate,
                "rise_time_s": _rate,
                "shape": {"enum": [s.value for s in PulseShape]},
                "t_start_s": {"type": "number"},
                "record_before_s": _rate,
                "record_after_s": _rate,
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "probe": {"enum": ["stokes", "anti_stokes", "microwave"]},
                "span_hz": {"type": "number", "exclusiveMinimum": 0},
                "center_hz": {"type": "number"},
                "n_points": {"type": "integer", "minimum": 2},
                "c_values": {"type": "array", "items": _rate},
                "powers_w": {"type": "array", "items": _rate},
                "method": {"enum": ["matrix", "closed"]},
            },
        },
        "detection": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "if_freq_hz": {"type": "number", "exclusiveMinimum": 0},
                "sample_rate_hz": {"type": "number", "exclusiveMinimum": 0},
                "window_s": {"type": "number", "exclusiveMinimum": 0},
                "n_repeats": {"type": "integer", "minimum": 1},
                "gain": {"type": "number", "exclusiveMinimum": 0},
                "noise_std": _rate,
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "prefix": {"type": "string", "minLength": 1},
            },
        },
    },
}


@dataclass(frozen=True)
class SweepConfig:
    probe: ModeLabel = ModeLabel.MICROWAVE
    span: float = 0.0  # rad/s, full width; 0 means 6 probe linewidths
    center: float = 0.0
    n_points: int = 201
    c_values: tuple[float, ...] = ()
    powers: tuple[float, ...] = ()
    method: str = "matrix"


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig
    pulse: PulseSpec | None = None
    sweep: SweepConfig = SweepConfig()
    detection: DetectionSpec = DetectionSpec()
    record_before: float = 500e-9
    record_after: float = 1e-6
    fsr: float | None = None
    pump_wavelength: float = 1550e-9
    output_dir: str | None = None
    prefix: str = "run"
    digest: str = ""
    source: str | None = None
    raw: dict = field(default_factory=dict)

    def probe_grid(self, probe=None) -> np.ndarray:
        """Probe detunings (rad/s) from the sweep section."""
        label = ModeLabel(probe or self.sweep.probe)
        mode = {ModeLabel.STOKES: self.system.stokes, ModeLabel.ANTI_STOKES: self.system.anti_stokes,
                ModeLabel.MICROWAVE: self.system.microwave}[label]
        span = self.sweep.span or 6 * mode.kappa_total
        return self.sweep.center + np.linspace(-span / 2, span / 2, self.sweep.n_points)

    def output_directory(self, override=None) -> Path:
        for cand in (override, self.output_dir, os.environ.get(OUTPUT_ENV)):
            if cand:
                return Path(cand)
        return Path.cwd()


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_digest(path) -> str:
    return digest_bytes(Path(path).read_bytes())


def _mode(raw, label, fallback=None):
    if raw is None:
        return ModeSpec(fallback.kappa_total, 0.0, None, label)
    det = raw.get("detuning_hz", 0.0 if fallback is None else None)
    return ModeSpec(TWO_PI * raw["kappa_hz"], TWO_PI * raw["kappa_ext_hz"],
                    None if det is None else TWO_PI * det, label)


def system_from_dict(raw: dict) -> SystemConfig:
    modes = raw["modes"]
    stokes = _mode(modes["stokes"], ModeLabel.STOKES)
    anti = _mode(modes["anti_stokes"], ModeLabel.ANTI_STOKES)
    return SystemConfig(
        stokes=stokes,
        pump_mode=_mode(modes["pump"], ModeLabel.PUMP),
        anti_stokes=anti,
        stokes_tm=_mode(modes.get("stokes_tm"), ModeLabel.STOKES_TM, stokes),
        anti_stokes_tm=_mode(modes.get("anti_stokes_tm"), ModeLabel.ANTI_STOKES_TM, anti),
        microwave=_mode(modes["microwave"], ModeLabel.MICROWAVE),
        g0=TWO_PI * raw["g0_hz"],
        j_s=TWO_PI * raw.get("j_s_hz", 0.0),
        j_as=TWO_PI * raw.get("j_as_hz", 0.0),
        configuration=Configuration(raw["configuration"]),
    )


_FIELD_PATHS = {"pump_mode": "system.modes.pump", "g0": "system.g0_hz", "j_s": "system.j_s_hz",
                "j_as": "system.j_as_hz", "configuration": "system.configuration"}


def parse_config(text: str, source: str | None = None) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source or 'config'}: JSON parse error at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(SCHEMA)
    problems = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if problems:
        errors = [f"{'.'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in problems]
        raise ConfigError(f"{len(errors)} schema error(s) in {source or 'config'}", errors)

    system = system_from_dict(raw["system"])
    issues = validate_config(system)
    errors = [f"{_FIELD_PATHS.get(i.field, 'system.modes.' + i.field)}: {i.message}"
              for i in issues if i.severity == "error"]
    if errors:
        raise ConfigError(f"{len(errors)} validation error(s) in {source or 'config'}", errors)

    pulse = None
    before, after = 500e-9, 1e-6
    praw = raw.get("pulse") or {}
    if praw:
        try:
            pulse = PulseSpec(praw["duration_s"], praw["peak_power_w"], praw.get("rise_time_s", 30e-9),
                              PulseShape(praw.get("shape", PulseShape.SMOOTHED_RECTANGULAR.value)),
                              praw.get("t_start_s", 0.0))
        except KeyError as exc:
            raise ConfigError(f"pulse.{exc.args[0]}: required when a pulse is given") from exc
        except ValueError as exc:
            raise ConfigError(f"pulse: {exc}") from exc
        before = praw.get("record_before_s", before)
        after = praw.get("record_after_s", after)

    sraw = raw.get("sweep", {})
    sweep = SweepConfig(ModeLabel(sraw.get("probe", "microwave")), TWO_PI * sraw.get("span_hz", 0.0),
                        TWO_PI * sraw.get("center_hz", 0.0), sraw.get("n_points", 201),
                        tuple(sraw.get("c_values", ())), tuple(sraw.get("powers_w", ())),
                        sraw.get("method", "matrix"))
    draw = raw.get("detection", {})
    det = DetectionSpec(TWO_PI * draw.get("if_freq_hz", 40e6), draw.get("sample_rate_hz", 1e9),
                        draw.get("window_s", 100e-9), draw.get("n_repeats", 1), draw.get("gain", 1.0),
                        draw.get("noise_std", 0.0), draw.get("seed", 0))
    if det.sample_rate < 10 * det.if_freq / TWO_PI:
        raise ConfigError("detection.sample_rate_hz: must be at least 10x detection.if_freq_hz")
    if det.window < TWO_PI / det.if_freq:
        raise ConfigError("detection.window_s: must cover at least one IF period")
    oraw = raw.get("outputs", {})
    sysraw = raw["system"]
    return RunConfig(system, pulse, sweep, det, before, after,
                     TWO_PI * sysraw["fsr_hz"] if "fsr_hz" in sysraw else None,
                     sysraw.get("pump_wavelength_m", 1550e-9), oraw.get("directory"),
                     oraw.get("prefix", "run"), digest_bytes(text.encode()), source, raw)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def bundled_config(name="device_paper.json") -> Path:
    return DATA_DIR / name


def check_writable(directory: Path) -> str | None:
    """None if files can be created under ``directory``, else a reason."""
    d = Path(directory).resolve()
    probe = d
    while not probe.exists():
        probe = probe.parent
    if not probe.is_dir():
        return f"{probe} is not a directory"
    if not os.access(probe, os.W_OK):
        return f"{probe} is not writable"
    return None


# --- CSV ---------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def _header(meta: dict) -> list[str]:
    lines = [f"# cavityeo {__version__}"]
    for key, val in meta.items():
        lines.append(f"# {key}: {val}")
    return lines


def _write(path, header_lines, columns, rows):
    buf = _io.StringIO()
    for line in header_lines:
        buf.write(line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def _read(path):
    meta, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            text = line[1:].strip()
            if ": " in text:
                k, v = text.split(": ", 1)
                meta[k] = v
        elif line.strip():
            body.append(line)
    reader = csv.reader(body)
    columns = next(reader)
    data = np.array([[float(x) for x in row] for row in reader], dtype=float).reshape(-1, len(columns))
    return meta, columns, data


def write_spectrum_csv(path, spectrum: Spectrum, config_digest="", **meta):
    """Columns freq_hz, R, S_re, S_im (and sigma if present); freq_hz = omega / 2 pi."""
    cols = ["freq_hz", "R", "S_re", "S_im"]
    r = spectrum.r_values if spectrum.r_values is not None else spectrum.power
    s = spectrum.s_complex if spectrum.s_complex is not None else np.full(len(spectrum), np.nan, complex)
    arrays = [spectrum.frequencies / TWO_PI, r, s.real, s.imag]
    if spectrum.sigma is not None:
        cols.append("sigma")
        arrays.append(spectrum.sigma)
    info = {"config_sha256": config_digest, "frame": spectrum.frame.value,
            "units": "freq_hz is the probe offset (omega/2pi) in its rotating frame; R = |S_on/S_off|^2"}
    info.update({k: v for k, v in spectrum.meta.items()})
    info.update(meta)
    return _write(path, _header(info), cols, zip(*arrays))


def read_spectrum_csv(path) -> Spectrum:
    meta, cols, data = _read(path)
    idx = {c: i for i, c in enumerate(cols)}
    if "freq_hz" not in idx or "R" not in idx:
        raise ValueError(f"{path}: spectrum CSV needs freq_hz and R columns")
    s = None
    if "S_re" in idx and "S_im" in idx and not np.all(np.isnan(data[:, idx["S_re"]])):
        s = data[:, idx["S_re"]] + 1j * data[:, idx["S_im"]]
    sigma = data[:, idx["sigma"]] if "sigma" in idx else None
    return Spectrum(TWO_PI * data[:, idx["freq_hz"]], s, data[:, idx["R"]], sigma=sigma, meta=meta)


def write_trace_csv(path, trace: TimeTrace, config_digest="", **meta):
    """Columns t_s, value (and value_im for complex traces)."""
    info = {"config_sha256": config_digest, "kind": trace.kind.value}
    info.update(meta)
    if np.iscomplexobj(trace.samples):
        cols = ["t_s", "value", "value_im"]
        rows = zip(trace.times, trace.samples.real, trace.samples.imag)
    else:
        cols = ["t_s", "value"]
        rows = zip(trace.times, trace.samples)
    return _write(path, _header(info), cols, rows)


def read_trace_csv(path) -> TimeTrace:
    meta, cols, data = _read(path)
    t = data[:, 0]
    vals = data[:, 1] + 1j * data[:, 2] if len(cols) > 2 else data[:, 1]
    dt = float(np.mean(np.diff(t))) if t.size > 1 else 1.0
    kind = TraceKind(meta.get("kind", TraceKind.COMPLEX_ENVELOPE.value))
    return TimeTrace(dt, float(t[0]), vals, kind, meta)


def write_matrix_csv(path, times, freqs_hz, matrix, config_digest="", **meta):
    """R(omega, t): one row per time, one column per probe offset (header ``R@<freq_hz>``)."""
    info = {"config_sha256": config_digest}
    info.update(meta)
    cols = ["t_s"] + [f"R@{_fmt(f)}" for f in freqs_hz]
    rows = (np.concatenate([[t], row]) for t, row in zip(times, matrix))
    return _write(path, _header(info), cols, rows)


def read_matrix_csv(path):
    """Returns (times_s, freqs_hz, matrix, meta)."""
    meta, cols, data = _read(path)
    freqs = np.array([float(c.split("@", 1)[1]) for c in cols[1:]])
    return data[:, 0], freqs, data[:, 1:], meta


def write_dba_summary_csv(path, rows, config_digest="", **meta):
    """Columns C, dOmega_hz, dKappa_hz (shifts divided by 2 pi)."""
    info = {"config_sha256": config_digest}
    info.update(meta)
    return _write(path, _header(info), ["C", "dOmega_hz", "dKappa_hz"], rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if hasattr(obj, "value") and not isinstance(obj, (str, int)):
        return obj.value
    return obj


def dumps_report(report: dict) -> str:
    """Deterministic JSON (sorted keys, non-finite numbers as null)."""
    return json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"


def write_report(path, report: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_report(report))
    return path
