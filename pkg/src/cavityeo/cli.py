"""Command line: ``cavityeo {simulate,sweep,pulse,fit,validate} CONFIG ...``.

Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 fit did not converge.
Errors are printed to stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, recipes, response
from . import io as cio
from .fitting import FitError, FitStatus
from .model import DomainError, ModeLabel, PumpDrive, validate_config
from .timedomain import ConfigurationError, InstabilityError, TimeTrace, TraceKind, simulate_pulse_measurement

TWO_PI = 2.0 * math.pi
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_NOFIT = 0, 1, 2, 3
RECIPES = ("lorentzian", "split_mode", "joint_microwave", "joint_optical", "transient", "delayed")


class CliError(Exception):
    def __init__(self, code, kind, message, details=()):
        super().__init__(message)
        self.code, self.kind, self.details = code, kind, list(details)


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _g_for(run: cio.RunConfig, c=None, power=None):
    cfg = run.system
    if power is not None:
        return PumpDrive.from_power(cfg, power, run.pump_wavelength).g_enhanced
    if c is None:
        if run.sweep.c_values:
            c = run.sweep.c_values[0]
        elif run.sweep.powers:
            return PumpDrive.from_power(cfg, run.sweep.powers[0], run.pump_wavelength).g_enhanced
        else:
            c = 0.0
    return cfg.g_for_cooperativity(c)


def _out(run, args, name):
    return run.output_directory(args.out_dir) / f"{run.prefix}_{name}"


def cmd_simulate(run, args):
    probe = ModeLabel(args.probe or run.sweep.probe)
    g = _g_for(run, args.c_value, args.power)
    spec = response.spectrum_sweep(run.system, g, run.probe_grid(probe), probe, args.method or run.sweep.method)
    path = Path(args.out) if args.out else _out(run, args, f"spectrum_{probe.value}.csv")
    cio.write_spectrum_csv(path, spec, run.digest)
    return {"spectrum": str(path), "C": float(run.system.cooperativity(g))}


def cmd_sweep(run, args):
    probe = ModeLabel(args.probe or run.sweep.probe)
    cs = args.c_list if args.c_list is not None else list(run.sweep.c_values)
    if not cs:
        raise CliError(EXIT_INVALID, "validation", "no cooperativities given (--c-list or sweep.c_values)")
    grid = run.probe_grid(probe)
    files, rows = [], []
    for c in cs:
        g = run.system.g_for_cooperativity(c)
        spec = response.spectrum_sweep(run.system, g, grid, probe, run.sweep.method)
        path = _out(run, args, f"spectrum_{probe.value}_C{c:.6g}.csv")
        cio.write_spectrum_csv(path, spec, run.digest)
        files.append(str(path))
        shift = response.dba_shifts_from_config(run.system, g)
        rows.append((c, shift.delta_omega_e / TWO_PI, shift.delta_kappa_e / TWO_PI))
    summary = _out(run, args, "dba_summary.csv")
    cio.write_dba_summary_csv(summary, rows, run.digest, configuration=run.system.configuration.value)
    return {"spectra": files, "summary": str(summary)}


def cmd_pulse(run, args):
    if run.pulse is None:
        raise CliError(EXIT_INVALID, "validation", "config has no pulse section")
    probe = ModeLabel(args.probe or run.sweep.probe)
    grid = run.probe_grid(probe)
    if args.n_probe:
        grid = np.linspace(grid[0], grid[-1], args.n_probe) if args.n_probe > 1 else np.array([run.sweep.center])
    meas = simulate_pulse_measurement(run.system, run.pulse, grid, probe, run.detection,
                                      run.record_before, run.record_after, run.pump_wavelength)
    dt = float(meas.times[1] - meas.times[0])
    photons = TimeTrace(dt, float(meas.times[0]), meas.photon_number, TraceKind.PHOTON_NUMBER)
    p1 = cio.write_trace_csv(_out(run, args, "pump_photons.csv"), photons, run.digest)
    p2 = cio.write_matrix_csv(_out(run, args, f"R_{probe.value}_t.csv"), meas.r_times, grid / TWO_PI,
                              meas.r_matrix, run.digest, probe=probe.value)
    return {"photons": str(p1), "reflection": str(p2)}


def _fit_report(name, run, paths, result, values):
    report = {"tool": "cavityeo", "version": __version__, "recipe": name,
              "config_sha256": run.digest if run else None,
              "inputs": [{"path": str(p), "sha256": cio.file_digest(p)} for p in paths],
              "values_hz": values, "fit": result.to_dict() if result is not None else None}
    return report


def cmd_fit(run, args):
    paths = [Path(p) for p in args.data]
    for p in paths:
        if not p.is_file():
            raise CliError(EXIT_INVALID, "validation", f"data file not found: {p}")
    name = args.recipe
    need_run = name in ("joint_microwave", "joint_optical", "transient")
    if need_run and run is None:
        raise CliError(EXIT_INVALID, "validation", f"recipe {name} needs --config")
    result, values = None, {}
    if name == "lorentzian":
        fit = recipes.lorentzian_reflection_fit(cio.read_spectrum_csv(paths[0]))
        result = fit.result
        values = {"kappa_hz": fit.mode.kappa_total / TWO_PI, "kappa_ext_hz": fit.mode.kappa_ext / TWO_PI,
                  "center_hz": fit.center / TWO_PI, "scale": fit.scale}
    elif name == "split_mode":
        fit = recipes.split_mode_fit(cio.read_spectrum_csv(paths[0]))
        result = fit.result
        values = {"kappa_o_hz": fit.te.kappa_total / TWO_PI, "kappa_o_ext_hz": fit.te.kappa_ext / TWO_PI,
                  "delta_o_hz": fit.te.detuning / TWO_PI, "kappa_tm_hz": fit.tm.kappa_total / TWO_PI,
                  "delta_tm_hz": fit.tm.detuning / TWO_PI, "j_hz": fit.j / TWO_PI}
    elif name == "joint_microwave":
        mw = run.system.microwave
        fit = recipes.joint_stationary_microwave_fit([cio.read_spectrum_csv(p) for p in paths],
                                                     mw.kappa_total, mw.kappa_ext)
        result = fit.result
        values = {"kappa_e_hz": fit.kappa_e / TWO_PI, "kappa_e_ext_hz": fit.kappa_e_ext / TWO_PI,
                  "dOmega_hz": fit.delta_omega_e / TWO_PI, "dKappa_hz": fit.delta_kappa_e / TWO_PI}
    elif name == "joint_optical":
        probe = ModeLabel(args.probe or run.sweep.probe)
        powers = list(run.sweep.powers) or None
        if powers is not None and len(powers) != len(paths):
            powers = None
        fit = recipes.joint_stationary_optical_fit([cio.read_spectrum_csv(p) for p in paths],
                                                   run.system, probe, powers)
        result = fit.result
        values = {"kappa_o_hz": fit.kappa_o / TWO_PI, "kappa_o_ext_hz": fit.kappa_o_ext / TWO_PI,
                  "delta_s_hz": fit.delta_s / TWO_PI, "delta_as_hz": fit.delta_as / TWO_PI,
                  "C": fit.cooperativities}
    elif name == "transient":
        probe = ModeLabel(args.probe or run.sweep.probe)
        times, freqs, matrix, _ = cio.read_matrix_csv(paths[0])
        fit = recipes.transient_fit(matrix, times, TWO_PI * freqs, run.system, probe)
        values = {"t_s": fit.times, "C": fit.cooperativity, "delta_hz": fit.delta / TWO_PI,
                  "C_stderr": fit.c_stderr, "delta_stderr_hz": fit.delta_stderr / TWO_PI,
                  "status": fit.status}
        if np.all(fit.flagged):
            raise CliError(EXIT_NOFIT, "fit", "every time slice failed to fit")
    elif name == "delayed":
        if args.pulse_end is None:
            raise CliError(EXIT_INVALID, "validation", "recipe delayed needs --pulse-end")
        fit = recipes.delayed_backaction_fit(cio.read_trace_csv(paths[0]), args.pulse_end)
        result = fit.result
        values = {"status": fit.status, "t_ex_s": fit.t_ex, "tau_ex_s": fit.tau_ex,
                  "amplitude": fit.amplitude, "t_bounce_s": fit.t_bounce}
    report = _fit_report(name, run, paths, result, values)
    text = cio.dumps_report(report)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if result is not None and result.status is FitStatus.MAX_ITER:
        raise CliError(EXIT_NOFIT, "fit", "fit did not converge", [result.message])
    return None


def cmd_validate(run, args):
    issues = validate_config(run.system)
    problem = cio.check_writable(run.output_directory(args.out_dir))
    errors = [str(i) for i in issues if i.severity == "error"]
    if problem:
        errors.append(f"outputs.directory: {problem}")
    report = {"valid": not errors, "errors": errors,
              "warnings": [str(i) for i in issues if i.severity == "warning"],
              "config_sha256": run.digest, "version": __version__}
    sys.stdout.write(cio.dumps_report(report))
    return EXIT_OK if not errors else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cavityeo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cavityeo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("config", help="JSON run configuration (Hz units)")
        p.add_argument("--out-dir", help=f"output directory (default: config, ${cio.OUTPUT_ENV}, cwd)")
        return p

    p = common(sub.add_parser("simulate", help="stationary spectrum of one probe"))
    p.add_argument("--probe", choices=["stokes", "anti_stokes", "microwave"])
    grp = p.add_mutually_exclusive_group()
    grp.add_argument("--c-value", type=float, help="cooperativity")
    grp.add_argument("--power", type=float, help="pump power in W")
    p.add_argument("--method", choices=["matrix", "closed"])
    p.add_argument("--out", help="output CSV path")

    p = common(sub.add_parser("sweep", help="spectra per cooperativity plus a DBA summary"))
    p.add_argument("--probe", choices=["stokes", "anti_stokes", "microwave"])
    p.add_argument("--c-list", type=_floats, help="comma-separated cooperativities")

    p = common(sub.add_parser("pulse", help="pulsed-pump simulation through the heterodyne chain"))
    p.add_argument("--probe", choices=["stokes", "anti_stokes", "microwave"])
    p.add_argument("--n-probe", type=int, help="number of probe tones (default: sweep.n_points)")

    p = sub.add_parser("fit", help="fit a recipe to data files")
    p.add_argument("recipe", choices=RECIPES)
    p.add_argument("data", nargs="+", help="CSV data files")
    p.add_argument("--config", help="run configuration for recipes that need device values")
    p.add_argument("--probe", choices=["stokes", "anti_stokes", "microwave"])
    p.add_argument("--pulse-end", type=float, help="pulse end time in s (delayed recipe)")
    p.add_argument("--out", help="report path (default stdout)")
    p.add_argument("--out-dir", help=argparse.SUPPRESS)

    common(sub.add_parser("validate", help="check a configuration"))
    return parser


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "pulse": cmd_pulse, "fit": cmd_fit,
            "validate": cmd_validate}


def _fail(code, kind, message, details=()):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "details": list(details),
                                 "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config_path = getattr(args, "config", None)
        run = cio.load_config(config_path) if config_path else None
        outcome = COMMANDS[args.command](run, args)
        if isinstance(outcome, dict):
            sys.stdout.write(cio.dumps_report(outcome))
            return EXIT_OK
        return EXIT_OK if outcome is None else int(outcome)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc), exc.details)
    except cio.ConfigError as exc:
        return _fail(EXIT_INVALID, "validation", str(exc), exc.errors)
    except (DomainError, ConfigurationError) as exc:
        return _fail(EXIT_INVALID, "validation", str(exc))
    except FitError as exc:
        return _fail(EXIT_NOFIT, "fit", str(exc))
    except (InstabilityError, response.SingularityError, ArithmeticError, OSError, ValueError) as exc:
        return _fail(EXIT_RUNTIME, "runtime", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
