import json
import math
import subprocess
import sys

import numpy as np
import pytest

from cavityeo import io as cio
from cavityeo import recipes as rc
from cavityeo import response as r
from cavityeo.cli import EXIT_INVALID, EXIT_NOFIT, EXIT_OK, main
from cavityeo.model import ModeLabel
from cavityeo.timedomain import TimeTrace, TraceKind

TWO_PI = 2.0 * math.pi
MHZ = TWO_PI * 1e6


def _raw():
    return json.loads(cio.bundled_config().read_text())


def _write_config(tmp_path, raw, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw, indent=2))
    return path


def _stokes_raw(tmp_path, j_hz=1e11):
    raw = _raw()
    raw["system"]["configuration"] = "stokes"
    raw["system"]["j_as_hz"] = j_hz
    raw["outputs"] = {"directory": str(tmp_path / "out")}
    return raw


# --- configuration -----------------------------------------------------------

def test_bundled_config_values():
    run = cio.load_config(cio.bundled_config())
    cfg = run.system
    assert cfg.kappa_o == pytest.approx(26 * MHZ)
    assert cfg.stokes.kappa_ext == pytest.approx(10 * MHZ)
    assert cfg.kappa_e == pytest.approx(10 * MHZ)
    assert cfg.microwave.kappa_ext == pytest.approx(4 * MHZ)
    assert run.fsr == pytest.approx(TWO_PI * 8.799e9)
    assert run.pulse.duration == pytest.approx(250e-9)
    assert run.sweep.c_values == (0.1, 0.2, 0.3, 0.4, 0.5)


def test_hz_converted_once():
    raw = _raw()
    run = cio.parse_config(json.dumps(raw))
    assert run.system.microwave.kappa_total == TWO_PI * raw["system"]["modes"]["microwave"]["kappa_hz"]
    assert run.probe_grid()[-1] - run.probe_grid()[0] == pytest.approx(TWO_PI * 60e6)


@pytest.mark.parametrize("pulse", [None, {}])
def test_empty_pulse_section_is_stationary(pulse):
    raw = _raw()
    raw["pulse"] = pulse
    assert cio.parse_config(json.dumps(raw)).pulse is None


def test_negative_rate_names_the_field():
    raw = _raw()
    raw["system"]["modes"]["microwave"]["kappa_ext_hz"] = -1.0
    with pytest.raises(cio.ConfigError) as err:
        cio.parse_config(json.dumps(raw))
    assert any(e.startswith("system.modes.microwave.kappa_ext_hz") for e in err.value.errors)


def test_misspelled_key_rejected():
    raw = _raw()
    raw["sweep"]["n_point"] = 11
    with pytest.raises(cio.ConfigError) as err:
        cio.parse_config(json.dumps(raw))
    assert any("n_point" in e for e in err.value.errors)


def test_all_errors_listed():
    raw = _raw()
    raw["system"]["modes"]["stokes"]["kappa_hz"] = -5.0
    raw["detection"]["n_repeats"] = 0
    raw["bogus"] = 1
    with pytest.raises(cio.ConfigError) as err:
        cio.parse_config(json.dumps(raw))
    assert len(err.value.errors) == 3


def test_physical_validation_after_schema():
    raw = _raw()
    raw["system"]["modes"]["pump"]["kappa_ext_hz"] = 30e6
    with pytest.raises(cio.ConfigError) as err:
        cio.parse_config(json.dumps(raw))
    assert err.value.errors[0].startswith("system.modes.pump")


def test_parse_error_reports_position():
    with pytest.raises(cio.ConfigError, match="line 2, column"):
        cio.parse_config('{\n  "system": ,\n}')


def test_missing_config_file(tmp_path):
    with pytest.raises(cio.ConfigError, match="not found"):
        cio.load_config(tmp_path / "nope.json")


def test_detection_sampling_checked():
    raw = _raw()
    raw["detection"]["sample_rate_hz"] = 200e6
    with pytest.raises(cio.ConfigError, match="sample_rate_hz"):
        cio.parse_config(json.dumps(raw))


def test_output_directory_precedence(tmp_path, monkeypatch):
    run = cio.load_config(cio.bundled_config())
    monkeypatch.setenv(cio.OUTPUT_ENV, str(tmp_path / "env"))
    assert run.output_directory() == tmp_path / "env"
    assert run.output_directory(tmp_path / "flag") == tmp_path / "flag"
    monkeypatch.delenv(cio.OUTPUT_ENV)
    assert cio.check_writable(tmp_path / "new" / "dir") is None
    (tmp_path / "file").write_text("")
    assert "not a directory" in cio.check_writable(tmp_path / "file" / "sub")


# --- file formats -------------------------------------------------------------

def test_spectrum_csv_round_trip(tmp_path, stokes_device):
    spec = r.spectrum_sweep(stokes_device, stokes_device.g_for_cooperativity(0.3),
                            np.linspace(-50, 50, 31) * MHZ, "stokes")
    path = cio.write_spectrum_csv(tmp_path / "s.csv", spec, "abc")
    back = cio.read_spectrum_csv(path)
    assert np.allclose(back.frequencies, spec.frequencies, rtol=1e-15, atol=0)
    assert np.array_equal(back.r_values, spec.r_values)
    assert np.array_equal(back.s_complex, spec.s_complex)
    assert back.meta["config_sha256"] == "abc"
    text = path.read_text()
    assert text.startswith("# cavityeo ") and "freq_hz,R,S_re,S_im" in text


def test_spectrum_csv_with_sigma(tmp_path):
    spec = r.Spectrum(np.array([0.0, 1.0, 2.0]), None, np.array([1.0, 0.5, 1.0]), sigma=np.full(3, 0.01))
    back = cio.read_spectrum_csv(cio.write_spectrum_csv(tmp_path / "s.csv", spec))
    assert back.s_complex is None
    assert np.array_equal(back.sigma, spec.sigma)


@pytest.mark.parametrize("complex_", [True, False])
def test_trace_csv_round_trip(tmp_path, complex_):
    rng = np.random.default_rng(0)
    vals = rng.standard_normal(50) + (1j * rng.standard_normal(50) if complex_ else 0)
    kind = TraceKind.COMPLEX_ENVELOPE if complex_ else TraceKind.DETECTOR_CURRENT
    tr = TimeTrace(1e-9, -2e-8, vals, kind)
    back = cio.read_trace_csv(cio.write_trace_csv(tmp_path / "t.csv", tr))
    assert np.array_equal(back.samples, tr.samples)
    assert back.kind is kind
    assert back.dt == pytest.approx(1e-9, rel=1e-12) and back.t0 == tr.t0


def test_matrix_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    times, freqs, m = np.arange(4) * 1e-8, np.array([-1e6, 0.0, 2.5e6]), rng.random((4, 3))
    t2, f2, m2, meta = cio.read_matrix_csv(cio.write_matrix_csv(tmp_path / "m.csv", times, freqs, m, "d"))
    assert np.array_equal(t2, times) and np.array_equal(f2, freqs) and np.array_equal(m2, m)
    assert meta["config_sha256"] == "d"


def test_report_is_deterministic_json():
    text = cio.dumps_report({"b": np.array([1.0, np.nan]), "a": np.float64(2.0), "c": ModeLabel.STOKES})
    assert json.loads(text) == {"a": 2.0, "b": [1.0, None], "c": "stokes"}
    assert text.index('"a"') < text.index('"b"')


# --- command line -------------------------------------------------------------

def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_validate_ok(capsys):
    code, out, _ = _run(["validate", cio.bundled_config()], capsys)
    assert code == EXIT_OK and json.loads(out)["valid"] is True


def test_validate_bad_config(tmp_path, capsys):
    raw = _raw()
    raw["system"]["modes"]["stokes"]["kappa_hz"] = -1
    code, _, err = _run(["validate", _write_config(tmp_path, raw)], capsys)
    assert code == EXIT_INVALID
    payload = json.loads(err)
    assert payload["exit_code"] == EXIT_INVALID and payload["error"] == "validation"
    assert any("system.modes.stokes.kappa_hz" in d for d in payload["details"])


def test_simulate_symmetric_is_flat(tmp_path, capsys):
    code, out, _ = _run(["simulate", cio.bundled_config(), "--c-value", "0.5", "--out-dir", tmp_path], capsys)
    assert code == EXIT_OK
    spec = cio.read_spectrum_csv(json.loads(out)["spectrum"])
    assert np.max(np.abs(spec.r_values - 1)) < 1e-12
    assert spec.meta["config_sha256"] == cio.load_config(cio.bundled_config()).digest


def test_simulate_power_sets_cooperativity(tmp_path, capsys):
    code, out, _ = _run(["simulate", cio.bundled_config(), "--power", "0.5", "--out-dir", tmp_path], capsys)
    assert code == EXIT_OK and json.loads(out)["C"] == pytest.approx(0.77, abs=0.01)


def test_sweep_summary_follows_linear_law(tmp_path, capsys):
    path = _write_config(tmp_path, _stokes_raw(tmp_path))
    code, out, _ = _run(["sweep", path], capsys)
    assert code == EXIT_OK
    res = json.loads(out)
    assert len(res["spectra"]) == 5
    _, cols, data = cio._read(res["summary"])
    assert cols == ["C", "dOmega_hz", "dKappa_hz"]
    assert np.allclose(data[:, 2], -data[:, 0] * 10e6, rtol=1e-6)


def test_sweep_needs_cooperativities(tmp_path, capsys):
    raw = _stokes_raw(tmp_path)
    del raw["sweep"]["c_values"]
    code, _, err = _run(["sweep", _write_config(tmp_path, raw)], capsys)
    assert code == EXIT_INVALID and "c-list" in json.loads(err)["message"]


def test_outputs_are_byte_identical(tmp_path, capsys):
    raw = _stokes_raw(tmp_path, j_hz=26e6)
    raw["pulse"]["record_after_s"] = 200e-9
    raw["detection"]["noise_std"] = 0.05
    path = _write_config(tmp_path, raw)
    first = {}
    for run in ("a", "b"):
        for cmd in (["sweep", path, "--c-list", "0.1,0.2"], ["pulse", path, "--n-probe", "3"]):
            code, out, _ = _run(cmd + ["--out-dir", tmp_path / run], capsys)
            assert code == EXIT_OK
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
        first[f.name] = True
    assert "run_pump_photons.csv" in first and "run_dba_summary.csv" in first


def test_pulse_outputs(tmp_path, capsys):
    raw = _stokes_raw(tmp_path, j_hz=26e6)
    raw["pulse"]["record_after_s"] = 200e-9
    code, out, _ = _run(["pulse", _write_config(tmp_path, raw), "--n-probe", "1"], capsys)
    assert code == EXIT_OK
    res = json.loads(out)
    photons = cio.read_trace_csv(res["photons"])
    assert photons.kind is TraceKind.PHOTON_NUMBER and photons.samples.max() > 1e10
    times, freqs, matrix, _ = cio.read_matrix_csv(res["reflection"])
    assert matrix.shape == (times.size, 1)


def test_pulse_needs_pulse_section(tmp_path, capsys):
    raw = _raw()
    raw["pulse"] = None
    code, _, err = _run(["pulse", _write_config(tmp_path, raw)], capsys)
    assert code == EXIT_INVALID and "pulse" in json.loads(err)["message"]


def test_fit_lorentzian(tmp_path, capsys):
    omega = np.linspace(-100, 100, 401) * MHZ
    spec = rc.synthetic_spectrum(omega, rc.lorentzian_reflection(omega, 26 * MHZ, 10 * MHZ))
    data = cio.write_spectrum_csv(tmp_path / "mode1.csv", spec)
    report_path = tmp_path / "fit.json"
    code, _, _ = _run(["fit", "lorentzian", data, "--out", report_path], capsys)
    assert code == EXIT_OK
    report = json.loads(report_path.read_text())
    assert report["values_hz"]["kappa_hz"] == pytest.approx(26e6, rel=0.005)
    assert report["values_hz"]["kappa_ext_hz"] == pytest.approx(10e6, rel=0.005)
    assert report["inputs"][0]["sha256"] == cio.file_digest(data)
    assert report["fit"]["status"] == "converged"


def test_fit_joint_microwave_from_sweep(tmp_path, capsys):
    path = _write_config(tmp_path, _stokes_raw(tmp_path))
    code, out, _ = _run(["sweep", path, "--c-list", "0.1,0.3"], capsys)
    files = json.loads(out)["spectra"]
    code, out, _ = _run(["fit", "joint_microwave", *files, "--config", path], capsys)
    assert code == EXIT_OK
    values = json.loads(out)["values_hz"]
    mw = cio.load_config(path).system.microwave
    direct = rc.joint_stationary_microwave_fit([cio.read_spectrum_csv(f) for f in files], mw.kappa_total, mw.kappa_ext)
    assert np.allclose(values["dKappa_hz"], direct.delta_kappa_e / TWO_PI, rtol=1e-12)
    assert values["dKappa_hz"][1] < values["dKappa_hz"][0] < 0


def test_fit_errors(tmp_path, capsys):
    code, _, err = _run(["fit", "lorentzian", tmp_path / "missing.csv"], capsys)
    assert code == EXIT_INVALID and "not found" in json.loads(err)["message"]
    data = cio.write_spectrum_csv(tmp_path / "s.csv", rc.synthetic_spectrum(np.linspace(0, 1, 20), np.ones(20)))
    code, _, err = _run(["fit", "joint_microwave", data], capsys)
    assert code == EXIT_INVALID and "--config" in json.loads(err)["message"]
    code, _, err = _run(["fit", "delayed", data], capsys)
    assert code == EXIT_INVALID and "--pulse-end" in json.loads(err)["message"]
    flat = cio.write_spectrum_csv(tmp_path / "flat.csv", rc.synthetic_spectrum(np.linspace(0, 1, 4), np.ones(4)))
    code, _, err = _run(["fit", "lorentzian", flat], capsys)
    assert code == EXIT_NOFIT and json.loads(err)["error"] == "fit"


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cavityeo", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("cavityeo ")
