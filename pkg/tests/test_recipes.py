import math

import numpy as np
import pytest

from cavityeo import recipes as rc
from cavityeo import response as r
from cavityeo import timedomain as td
from cavityeo.fitting import FitError, FitStatus, Role
from cavityeo.model import ModeLabel, SystemConfig, reference_device

TWO_PI = 2.0 * math.pi
MHZ = TWO_PI * 1e6


# --- synthetic data ----------------------------------------------------------

def test_synthetic_dataset_is_deterministic(stokes_device):
    sweep = rc.SweepSpec("microwave", np.linspace(-30, 30, 41) * MHZ, (0.1, 0.3))
    a = rc.generate_synthetic_dataset(stokes_device, sweep, rc.NoiseSpec(snr_db=20), seed=11)
    b = rc.generate_synthetic_dataset(stokes_device, sweep, rc.NoiseSpec(snr_db=20), seed=11)
    c = rc.generate_synthetic_dataset(stokes_device, sweep, rc.NoiseSpec(snr_db=20), seed=12)
    for x, y, z in zip(a.spectra, b.spectra, c.spectra):
        assert np.array_equal(x.r_values, y.r_values)
        assert not np.array_equal(x.r_values, z.r_values)
    assert a.truth["C"] == [0.1, 0.3]


def _suppressed(case):
    """Device values with the unwanted sideband fully suppressed by a very strong TE/TM coupling."""
    return SystemConfig.build(case, 26 * MHZ, 10 * MHZ, 10 * MHZ, 4 * MHZ, g0=TWO_PI * 37, j=1e5 * 26 * MHZ)


def test_synthetic_dataset_truth_matches_shifts():
    cfg = _suppressed("stokes")
    sweep = rc.SweepSpec("microwave", np.linspace(-30, 30, 41) * MHZ, (0.2,), method="lorentzian")
    ds = rc.generate_synthetic_dataset(cfg, sweep)
    assert ds.truth["delta_kappa_e"][0] == pytest.approx(-0.2 * cfg.kappa_e, rel=1e-6)
    mw = cfg.microwave
    expected = r.shifted_microwave_R(sweep.omega, mw.kappa_total, mw.kappa_ext, ds.truth["delta_omega_e"][0],
                                     ds.truth["delta_kappa_e"][0])
    assert np.array_equal(ds.spectra[0].r_values, expected)
    with pytest.raises(ValueError):
        rc.generate_synthetic_dataset(cfg, rc.SweepSpec("stokes", sweep.omega, (0.2,), "lorentzian"))


def test_noise_level_from_snr():
    assert rc.NoiseSpec(snr_db=20).sigma == pytest.approx(0.1)
    x = rc.NoiseSpec(snr_db=20).apply(np.ones(200_000), np.random.default_rng(0))
    assert np.std(x) == pytest.approx(0.1, rel=0.01)
    assert np.array_equal(rc.NoiseSpec().apply(np.ones(3), None), np.ones(3))


# --- single-mode fits --------------------------------------------------------

OMEGA = np.linspace(-100, 100, 401) * MHZ


def test_lorentzian_round_trip():
    clean = rc.lorentzian_reflection(OMEGA, 26 * MHZ, 10 * MHZ, center=2 * MHZ, scale=0.8)
    fit = rc.lorentzian_reflection_fit(rc.synthetic_spectrum(OMEGA, clean))
    assert fit.mode.kappa_total == pytest.approx(26 * MHZ, rel=1e-6)
    assert fit.mode.kappa_ext == pytest.approx(10 * MHZ, rel=1e-6)
    assert fit.center == pytest.approx(2 * MHZ, rel=1e-6)
    assert fit.scale == pytest.approx(0.8, rel=1e-6)


def test_coupling_branches_are_degenerate_in_power():
    under = rc.lorentzian_reflection(OMEGA, 26 * MHZ, 10 * MHZ)
    over = rc.lorentzian_reflection(OMEGA, 26 * MHZ, 16 * MHZ)
    assert np.max(np.abs(under - over)) < 1e-12
    fit = rc.lorentzian_reflection_fit(rc.synthetic_spectrum(OMEGA, over))
    assert fit.mode.kappa_ext == pytest.approx(10 * MHZ, rel=1e-6)


def test_phase_resolves_overcoupling():
    chi = r.bare_susceptibility(26 * MHZ, OMEGA)
    s = 0.9 * np.exp(0.4j) * (1 - 16 * MHZ * chi)
    fit = rc.lorentzian_reflection_fit(r.Spectrum(OMEGA, s), use_phase=True)
    assert fit.mode.kappa_ext == pytest.approx(16 * MHZ, rel=1e-6)
    assert fit.mode.kappa_total == pytest.approx(26 * MHZ, rel=1e-6)


def test_resonance_fits_use_reflection_over_normalized_ratio(symmetric_device):
    # simulated spectra carry both S and R; a bare-resonance fit must model |S|^2
    spec = r.spectrum_sweep(symmetric_device, symmetric_device.g_for_cooperativity(0.3), OMEGA, "microwave")
    assert np.allclose(spec.r_values, 1.0)
    fit = rc.lorentzian_reflection_fit(spec)
    assert fit.mode.kappa_total == pytest.approx(10 * MHZ, rel=1e-6)
    assert fit.mode.eta == pytest.approx(0.4, rel=1e-6)


def test_lorentzian_needs_points():
    with pytest.raises(FitError):
        rc.lorentzian_reflection_fit(rc.synthetic_spectrum(OMEGA[:5], np.ones(5)))


# Split-mode table rows (Hz): kappa_o, kappa_ext, delta_o, kappa_tm, delta_tm, J
SPLIT_ROWS = {
    4: (34.6e6, 8.9e6, -17.8e6, 7.6e6, -18.5e6, 26e6),
    5: (24.7e6, 9.8e6, 5.0e6, 17.4e6, 28.3e6, 13e6),
}


@pytest.mark.parametrize("row", sorted(SPLIT_ROWS))
def test_split_mode_round_trip(row):
    vals = [TWO_PI * v for v in SPLIT_ROWS[row]]
    omega = np.linspace(-150, 150, 601) * MHZ
    fit = rc.split_mode_fit(rc.synthetic_spectrum(omega, rc.split_mode_reflection(omega, *vals)))
    got = (fit.te.kappa_total, fit.te.kappa_ext, fit.te.detuning, fit.tm.kappa_total, fit.tm.detuning, fit.j)
    for g, v in zip(got, vals):
        assert g == pytest.approx(v, rel=0.02)


def test_split_mode_without_coupling_is_lorentzian():
    clean = rc.split_mode_reflection(OMEGA, 26 * MHZ, 10 * MHZ, 3 * MHZ, 8 * MHZ, -5 * MHZ, 0.0)
    assert np.array_equal(clean, rc.lorentzian_reflection(OMEGA, 26 * MHZ, 10 * MHZ, 3 * MHZ))
    spec = rc.synthetic_spectrum(OMEGA, clean)
    split = rc.split_mode_fit(spec)
    single = rc.lorentzian_reflection_fit(spec)
    assert split.j < 1e-3 * MHZ
    assert split.te.kappa_total == pytest.approx(single.mode.kappa_total, rel=1e-3)
    assert split.te.kappa_ext == pytest.approx(single.mode.kappa_ext, rel=1e-3)


# --- joint microwave fit -----------------------------------------------------

MW_OMEGA = np.linspace(-30, 30, 121) * MHZ


@pytest.mark.parametrize("case,sign", [("stokes", -1), ("anti_stokes", 1)])
def test_joint_microwave_round_trip(case, sign):
    cfg = _suppressed(case)
    cs = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    ds = rc.generate_synthetic_dataset(cfg, rc.SweepSpec("microwave", MW_OMEGA, cs, "lorentzian"))
    fit = rc.joint_stationary_microwave_fit(ds.spectra, 1.1 * cfg.kappa_e, 0.9 * cfg.microwave.kappa_ext)
    assert fit.kappa_e == pytest.approx(cfg.kappa_e, rel=1e-6)
    assert fit.kappa_e_ext == pytest.approx(cfg.microwave.kappa_ext, rel=1e-6)
    assert np.allclose(fit.delta_kappa_e, ds.truth["delta_kappa_e"], rtol=1e-5, atol=1e-9 * cfg.kappa_e)
    assert np.allclose(fit.delta_omega_e, ds.truth["delta_omega_e"], rtol=1e-5, atol=1e-9 * cfg.kappa_e)
    # zero-power spectrum gives no shift; the law is linear in C
    assert abs(fit.delta_kappa_e[0]) < 1e-9 * cfg.kappa_e
    assert np.allclose(fit.delta_kappa_e, sign * np.array(cs) * cfg.kappa_e, rtol=1e-5, atol=1e-9 * cfg.kappa_e)


def test_joint_microwave_on_full_model_spectra(stokes_device):
    # the full model is close to, but not exactly, a shifted Lorentzian; R is
    # referenced to the unpumped spectrum, so the linewidths come from there
    cfg = stokes_device
    ds = rc.generate_synthetic_dataset(cfg, rc.SweepSpec("microwave", MW_OMEGA, (0.0, 0.05, 0.1)))
    fit = rc.joint_stationary_microwave_fit(ds.spectra, cfg.kappa_e, cfg.microwave.kappa_ext, Role.FIXED)
    width = cfg.kappa_e + fit.delta_kappa_e
    assert np.allclose(width, cfg.kappa_e + np.array(ds.truth["delta_kappa_e"]), rtol=0.01)


def test_joint_microwave_symmetric_sweep_consistent_with_zero(symmetric_device):
    cfg = symmetric_device
    sweep = rc.SweepSpec("microwave", MW_OMEGA, (0.1, 0.3, 0.5))
    ds = rc.generate_synthetic_dataset(cfg, sweep, rc.NoiseSpec(snr_db=20), seed=4)
    fit = rc.joint_stationary_microwave_fit(ds.spectra, cfg.kappa_e, cfg.microwave.kappa_ext)
    for name in ("d_kappa", "d_omega"):
        for lo, hi in fit.intervals(name):
            assert lo <= 0.0 <= hi


def test_joint_microwave_fixed_linewidth(stokes_device):
    cfg = stokes_device
    ds = rc.generate_synthetic_dataset(cfg, rc.SweepSpec("microwave", MW_OMEGA, (0.1, 0.2), "lorentzian"))
    fit = rc.joint_stationary_microwave_fit(ds.spectra, cfg.kappa_e, cfg.microwave.kappa_ext, Role.FIXED)
    assert fit.result.names == ["d_omega_0", "d_kappa_0", "d_omega_1", "d_kappa_1"]
    assert np.allclose(fit.delta_kappa_e, ds.truth["delta_kappa_e"], rtol=1e-6)


def test_joint_fit_needs_two_spectra(stokes_device):
    ds = rc.generate_synthetic_dataset(stokes_device, rc.SweepSpec("microwave", MW_OMEGA, (0.1,)))
    with pytest.raises(FitError):
        rc.joint_stationary_microwave_fit(ds.spectra, stokes_device.kappa_e, stokes_device.microwave.kappa_ext)
    with pytest.raises(FitError):
        rc.joint_stationary_optical_fit(ds.spectra, stokes_device, "stokes")


def test_joint_microwave_duplicated_spectra(anti_stokes_device):
    cfg = anti_stokes_device
    ds = rc.generate_synthetic_dataset(cfg, rc.SweepSpec("microwave", MW_OMEGA, (0.2, 0.4)),
                                       rc.NoiseSpec(snr_db=20), seed=2)
    once = rc.joint_stationary_microwave_fit(ds.spectra, cfg.kappa_e, cfg.microwave.kappa_ext)
    twice = rc.joint_stationary_microwave_fit(ds.spectra * 2, cfg.kappa_e, cfg.microwave.kappa_ext)
    assert twice.kappa_e == pytest.approx(once.kappa_e, rel=1e-6)
    assert np.allclose(twice.delta_kappa_e[:2], once.delta_kappa_e, rtol=1e-5)
    assert np.allclose(twice.delta_kappa_e[2:], once.delta_kappa_e, rtol=1e-5)


# --- joint optical fit -------------------------------------------------------

OPT_OMEGA_UNITS = np.linspace(-3, 3, 121)


def test_joint_optical_round_trip(stokes_device):
    cfg = stokes_device
    omega = OPT_OMEGA_UNITS * cfg.kappa_o
    cs = (0.0, 0.2, 0.4)
    ds = rc.generate_synthetic_dataset(cfg, rc.SweepSpec("stokes", omega, cs))
    start = rc.with_optical(cfg, 1.05 * cfg.kappa_o, 0.95 * cfg.stokes.kappa_ext, 0.0, 0.0)
    fit = rc.joint_stationary_optical_fit(ds.spectra, start, "stokes", powers=[0.0, 1.0, 2.0],
                                          fixed=("delta_as",))
    assert fit.kappa_o == pytest.approx(cfg.kappa_o, rel=1e-5)
    assert fit.kappa_o_ext == pytest.approx(cfg.stokes.kappa_ext, rel=1e-5)
    assert abs(fit.cooperativities[0]) < 1e-6
    assert np.allclose(fit.cooperativities[1:], cs[1:], rtol=1e-5)


def test_joint_optical_matrix_and_closed_agree(anti_stokes_device):
    cfg = anti_stokes_device
    omega = np.linspace(-3, 3, 41) * cfg.kappa_o
    ds = rc.generate_synthetic_dataset(cfg, rc.SweepSpec("anti_stokes", omega, (0.5, 1.5)))
    a = rc.joint_stationary_optical_fit(ds.spectra, cfg, "anti_stokes", c_max_init=2.0, method="matrix")
    b = rc.joint_stationary_optical_fit(ds.spectra, cfg, "anti_stokes", c_max_init=2.0)
    assert np.allclose(a.cooperativities, [0.5, 1.5], rtol=1e-5)
    assert np.allclose(a.cooperativities, b.cooperativities, rtol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_joint_optical_stokes_snr30(stokes_device, seed):
    # R is referenced to the unpumped spectrum, so it pins the linewidths only
    # through the back-action; with them taken from a bare-mode fit C is tight
    cfg = stokes_device
    omega = OPT_OMEGA_UNITS * cfg.kappa_o
    cs = (0.2, 0.3, 0.4, 0.5)
    ds = rc.generate_synthetic_dataset(cfg, rc.SweepSpec("stokes", omega, cs), rc.NoiseSpec(snr_db=30), seed)
    fit = rc.joint_stationary_optical_fit(ds.spectra, cfg, "stokes", fixed=("delta_as", "kappa_o", "kappa_o_ext"))
    assert np.allclose(fit.cooperativities, cs, rtol=0.02)
    free = rc.joint_stationary_optical_fit(ds.spectra, cfg, "stokes", fixed=("delta_as",))
    for k, c in enumerate(cs):
        assert abs(free.cooperativities[k] - c) < 3 * free.result.stderr[f"C_{k}"]


def test_absorption_zero_from_fitted_coupling(stokes_device):
    # the on-resonance Stokes dip closes where C = 1 - 2 eta_o of the fitted mode
    cfg = stokes_device
    omega = OPT_OMEGA_UNITS * cfg.kappa_o
    ds = rc.generate_synthetic_dataset(cfg, rc.SweepSpec("stokes", omega, (0.1, 0.3, 0.5)),
                                       rc.NoiseSpec(snr_db=30), seed=1)
    fit = rc.joint_stationary_optical_fit(ds.spectra, cfg, "stokes", fixed=("delta_as",))
    res = fit.result
    eta = fit.kappa_o_ext / fit.kappa_o
    c_zero = 1 - 2 * eta
    # delta method on eta = kappa_ext / kappa
    i, j = res.names.index("kappa_o"), res.names.index("kappa_o_ext")
    grad = np.array([-2 * eta * -1 / fit.kappa_o, -2 / fit.kappa_o])
    sub = res.covariance[np.ix_([i, j], [i, j])]
    err = math.sqrt(grad @ sub @ grad)
    truth = 1 - 2 * cfg.stokes.eta
    assert abs(c_zero - truth) <= 3 * err


def test_optical_fit_rejects_unknown_fixed(stokes_device):
    omega = OPT_OMEGA_UNITS * stokes_device.kappa_o
    ds = rc.generate_synthetic_dataset(stokes_device, rc.SweepSpec("stokes", omega, (0.1, 0.2)))
    with pytest.raises(FitError):
        rc.joint_stationary_optical_fit(ds.spectra, stokes_device, "stokes", fixed=("kappa_e",))


# --- transient fit -----------------------------------------------------------

PULSE = td.PulseSpec(duration=1e-6, peak_power=0.3)


def _transient(cfg, times, noise=rc.NoiseSpec(), seed=0, excess=None):
    omega = np.linspace(-3, 3, 61) * cfg.kappa_o
    tl, rm = rc.synthetic_pulse_spectra(cfg, PULSE, times, omega, "stokes", noise, seed, excess)
    return tl, rc.transient_fit(rm, times, omega, cfg, "stokes")


def test_transient_tracks_loading(stokes_device):
    cfg = stokes_device
    times = np.linspace(-0.2e-6, 1.2e-6, 15)
    tl, fit = _transient(cfg, times)
    c_true = cfg.cooperativity(tl.g)
    on = c_true > 0.01
    assert np.allclose(fit.cooperativity[on], c_true[on], rtol=0.03)
    assert np.all(np.abs(fit.cooperativity[times < 0]) < 1e-6)
    assert not np.any(fit.flagged)


def test_transient_recovers_edge_detuning(stokes_device):
    cfg = stokes_device

    def jiggle(t):
        return MHZ * (np.exp(-(t / 60e-9) ** 2) - np.exp(-((t - 1e-6) / 60e-9) ** 2))

    times = np.linspace(-0.2e-6, 1.2e-6, 15)
    tl, fit = _transient(cfg, times, rc.NoiseSpec(snr_db=30), seed=3, excess={"delta_detuning": jiggle})
    assert np.max(np.abs(fit.delta - tl.delta_detuning)) < 0.2 * MHZ


def test_transient_without_detuning(stokes_device):
    cfg = stokes_device
    times = np.linspace(0.2e-6, 0.8e-6, 3)
    omega = np.linspace(-3, 3, 61) * cfg.kappa_o
    tl, rm = rc.synthetic_pulse_spectra(cfg, PULSE, times, omega, "stokes")
    fit = rc.transient_fit(rm, times, omega, cfg, "stokes", fit_detuning=False)
    assert np.all(np.isnan(fit.delta))
    assert np.allclose(fit.cooperativity, cfg.cooperativity(tl.g), rtol=1e-5)


# --- delayed back-action -----------------------------------------------------

T_END = 1.25e-6


def _delayed_trace(t_ex=6e-6, tau_ex=1.6e-6, peak=0.05, t_stop=25e-6, dt=5e-9):
    cfg = reference_device("symmetric")
    times = td.uniform_grid(0, t_stop, dt)
    tl = td.Timeline(times, np.zeros(times.size))
    if peak:
        prof = td.delayed_excess_profile(times, T_END, t_ex, tau_ex, peak * cfg.kappa_e)
        tl = td.inject_excess_backaction(cfg, tl, delta_omega_e=prof)
    return td.TimeTrace(dt, 0.0, td.quasi_static_R(cfg, tl, 0.0, "microwave")[:, 0])


def test_delayed_bounce_recovered():
    fit = rc.delayed_backaction_fit(_delayed_trace(), T_END)
    assert fit.status == "bounce"
    assert fit.t_ex == pytest.approx(6e-6, rel=0.05)
    assert fit.tau_ex == pytest.approx(1.6e-6, rel=0.05)
    assert fit.result.status is FitStatus.CONVERGED


def test_delayed_flat_trace():
    fit = rc.delayed_backaction_fit(_delayed_trace(peak=0.0), T_END)
    assert fit.status == "no_bounce" and fit.t_ex is None and fit.tau_ex is None


def test_delayed_monotone_decay_fits_tau_only():
    times = td.uniform_grid(0, 15e-6, 5e-9)
    y = 1 + 0.02 * np.exp(-np.clip(times - T_END, 0, None) / 1.6e-6)
    fit = rc.delayed_backaction_fit(td.TimeTrace(5e-9, 0.0, y), T_END)
    assert fit.status == "no_bounce" and fit.t_ex is None
    assert fit.tau_ex == pytest.approx(1.6e-6, rel=1e-6)


def test_delayed_needs_post_pulse_samples():
    with pytest.raises(FitError):
        rc.delayed_backaction_fit(td.TimeTrace(5e-9, 0.0, np.ones(50)), T_END)
