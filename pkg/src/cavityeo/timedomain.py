"""Pulsed-pump simulation and the heterodyne measurement chain.

The pump is solved on its own (undepleted, first-order loading) and enters the
probe dynamics only through g(t) = g0 sqrt(n_p(t)).  The probe dynamics are the
mean-field Langevin equations dD/dt = -M(0; t) D + L u(t) integrated with a
fixed-step RK4, so repeated runs are bit-identical.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants

from . import response
from .model import ModeLabel, SystemConfig, require_valid
from .response import PROBE_PORT, PROBE_ROW, build_input_matrix, probe_mode

TWO_PI = 2.0 * math.pi
IF_FREQ = TWO_PI * 40e6
SAMPLE_RATE = 1e9


class ConfigurationError(ValueError):
    """Sampling or grid settings cannot resolve the requested dynamics."""


class InstabilityError(RuntimeError):
    """The propagated amplitudes diverged (e.g. Stokes case above C = 1)."""


class PulseShape(str, enum.Enum):
    RECTANGULAR = "rectangular"
    SMOOTHED_RECTANGULAR = "smoothed_rectangular"


class TraceKind(str, enum.Enum):
    DETECTOR_CURRENT = "detector_current"
    COMPLEX_ENVELOPE = "complex_envelope"
    PHOTON_NUMBER = "photon_number"
    POWER = "power"
    NORMALIZED_REFLECTION = "normalized_reflection"


@dataclass(frozen=True)
class PulseSpec:
    """Optical pump pulse; ``duration`` includes both raised-cosine edges."""

    duration: float
    peak_power: float
    rise_time: float = 30e-9
    shape: PulseShape = PulseShape.SMOOTHED_RECTANGULAR
    t_start: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "shape", PulseShape(self.shape))
        if not self.duration > 0:
            raise ValueError("pulse duration must be positive")
        if self.rise_time < 0:
            raise ValueError("rise_time must be non-negative")
        if self.shape is PulseShape.SMOOTHED_RECTANGULAR and not self.rise_time < self.duration / 2:
            raise ValueError("rise_time must be shorter than half the pulse duration")
        if self.peak_power < 0:
            raise ValueError("peak_power must be non-negative")

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration

    def envelope(self, t) -> np.ndarray:
        """Relative power envelope in [0, 1]."""
        t = np.asarray(t, dtype=float) - self.t_start
        inside = (t >= 0) & (t < self.duration)
        if self.shape is PulseShape.RECTANGULAR or self.rise_time == 0:
            return inside.astype(float)
        rt = self.rise_time
        rise = 0.5 * (1 - np.cos(np.pi * np.clip(t, 0, rt) / rt))
        fall = 0.5 * (1 - np.cos(np.pi * np.clip(self.duration - t, 0, rt) / rt))
        return np.where(inside, np.minimum(rise, fall), 0.0)

    def power(self, t) -> np.ndarray:
        return self.peak_power * self.envelope(t)


@dataclass(frozen=True)
class TimeTrace:
    dt: float
    t0: float
    samples: np.ndarray
    kind: TraceKind = TraceKind.COMPLEX_ENVELOPE
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        s = np.asarray(self.samples)
        if s.size == 0:
            raise ValueError("trace has no samples")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "kind", TraceKind(self.kind))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.shape[0])

    def __len__(self):
        return self.samples.shape[0]

    def window_mask(self, start=None, stop=None):
        t = self.times
        lo = -np.inf if start is None else start
        hi = np.inf if stop is None else stop
        return (t >= lo) & (t < hi)


def uniform_grid(t_start, t_stop, dt) -> np.ndarray:
    n = int(round((t_stop - t_start) / dt)) + 1
    return t_start + dt * np.arange(n)


def _grid_step(times) -> float:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ConfigurationError("time grid needs at least two samples")
    steps = np.diff(times)
    dt = float(steps.mean())
    if not dt > 0 or np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise ConfigurationError("time grid must be uniform and increasing")
    return dt


# --- pump --------------------------------------------------------------------

def pump_loading(cfg: SystemConfig, pulse: PulseSpec, times, wavelength=1550e-9) -> TimeTrace:
    """Intracavity pump photon number n_p(t) for a resonantly driven pump mode."""
    dt = _grid_step(times)
    mode = cfg.pump_mode
    if dt > 0.05 / mode.kappa_total:
        raise ConfigurationError(
            f"grid step {dt:.3g} s does not resolve the pump loading (need <= {0.05 / mode.kappa_total:.3g} s)")
    hbar_omega = constants.hbar * TWO_PI * constants.c / wavelength
    k = mode.kappa_total
    drive = math.sqrt(mode.kappa_ext / hbar_omega)

    def rhs(t, a):
        return -0.5 * k * a + drive * math.sqrt(float(pulse.power(t)))

    times = np.asarray(times, dtype=float)
    amp = np.empty(times.size)
    a = 0.0
    for i, t in enumerate(times):
        amp[i] = a
        k1 = rhs(t, a)
        k2 = rhs(t + dt / 2, a + dt / 2 * k1)
        k3 = rhs(t + dt / 2, a + dt / 2 * k2)
        k4 = rhs(t + dt, a + dt * k3)
        a = a + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return TimeTrace(dt, float(times[0]), amp**2, TraceKind.PHOTON_NUMBER)


# --- timelines ---------------------------------------------------------------

@dataclass(frozen=True)
class Timeline:
    """Time-dependent parameters on a uniform grid.

    ``delta_detuning`` is a change of Omega_e - FSR; it shifts delta_s and
    delta_as together.  ``delta_omega_e``/``delta_kappa_e`` are excess
    microwave frequency/linewidth perturbations.
    """

    times: np.ndarray
    g: np.ndarray
    delta_omega_e: np.ndarray | None = None
    delta_kappa_e: np.ndarray | None = None
    delta_detuning: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        _grid_step(t)
        object.__setattr__(self, "times", t)
        for name in ("g", "delta_omega_e", "delta_kappa_e", "delta_detuning"):
            val = getattr(self, name)
            if val is None:
                val = np.zeros_like(t)
            val = np.broadcast_to(np.asarray(val, dtype=float), t.shape).copy()
            if not np.all(np.isfinite(val)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, val)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def at(self, t):
        """Linearly interpolated (g, d_omega_e, d_kappa_e, d_detuning) at time ``t``."""
        x = (t - self.times[0]) / self.dt
        i = min(max(int(math.floor(x)), 0), self.times.size - 2)
        f = min(max(x - i, 0.0), 1.0)
        return tuple(arr[i] + f * (arr[i + 1] - arr[i])
                     for arr in (self.g, self.delta_omega_e, self.delta_kappa_e, self.delta_detuning))

    def cooperativity(self, cfg: SystemConfig) -> np.ndarray:
        return cfg.cooperativity(self.g)


def timeline_from_pulse(cfg: SystemConfig, pulse: PulseSpec, times, wavelength=1550e-9) -> Timeline:
    """g(t) = g0 sqrt(n_p(t)) with the pump loading solved on a refined grid."""
    dt = _grid_step(times)
    sub = max(1, math.ceil(dt / (0.05 / cfg.pump_mode.kappa_total)))
    fine = times[0] + (dt / sub) * np.arange((len(times) - 1) * sub + 1)
    n_p = pump_loading(cfg, pulse, fine, wavelength).samples[::sub]
    return Timeline(np.asarray(times, dtype=float), cfg.g0 * np.sqrt(n_p))


def timeline_from_cooperativity(cfg: SystemConfig, times, c_of_t) -> Timeline:
    c = np.broadcast_to(np.asarray(c_of_t, dtype=float), np.shape(times))
    return Timeline(times, np.sqrt(c * cfg.kappa_o * cfg.kappa_e / 4.0))


def inject_excess_backaction(cfg: SystemConfig, timeline: Timeline, delta_omega_e=None,
                             delta_kappa_e=None, delta_detuning=None) -> Timeline:
    """Add phenomenological microwave frequency/linewidth and detuning perturbations.

    Each perturbation may be an array on the timeline grid or a callable of time.
    """
    def ev(x):
        if x is None:
            return 0.0
        return np.asarray(x(timeline.times) if callable(x) else x, dtype=float)

    out = replace(timeline,
                  delta_omega_e=timeline.delta_omega_e + ev(delta_omega_e),
                  delta_kappa_e=timeline.delta_kappa_e + ev(delta_kappa_e),
                  delta_detuning=timeline.delta_detuning + ev(delta_detuning))
    if np.any(cfg.microwave.kappa_total + out.delta_kappa_e <= 0):
        raise ValueError("kappa_e + delta_kappa_e(t) must stay positive")
    return out


def delayed_excess_profile(times, t_pulse_end, t_ex, tau_ex, peak):
    """Frequency excursion that peaks ``t_ex`` after the pulse and then relaxes.

    Rises as sin^2 from the pulse end to the bounce, then decays with time
    constant 2 tau_ex so that R - 1 (quadratic in a small shift) relaxes with tau_ex.
    """
    t = np.asarray(times, dtype=float) - t_pulse_end
    rise = peak * np.sin(0.5 * np.pi * np.clip(t, 0, t_ex) / t_ex) ** 2
    decay = peak * np.exp(-(t - t_ex) / (2 * tau_ex))
    return np.where(t < 0, 0.0, np.where(t < t_ex, rise, decay))


# --- propagation -------------------------------------------------------------

def _patterns(cfg: SystemConfig):
    a0, gpat = response._static_parts(cfg)
    pk = np.zeros_like(a0)
    pk[8, 8] = pk[9, 9] = 0.5
    po = np.zeros_like(a0)
    po[8, 8], po[9, 9] = 1j, -1j
    pd = np.diag([1j, -1j, -1j, 1j, 1j, -1j, -1j, 1j, 0, 0]).astype(complex)
    return a0, gpat, pk, po, pd


def max_rate(cfg: SystemConfig, timeline: Timeline) -> float:
    """Upper bound on the magnitude of the generator's eigenvalues over the timeline."""
    a0, gpat, pk, po, pd = _patterns(cfg)
    worst = (np.abs(a0) + np.max(np.abs(timeline.g)) * np.abs(gpat)
             + np.max(np.abs(timeline.delta_kappa_e)) * np.abs(pk)
             + np.max(np.abs(timeline.delta_omega_e)) * np.abs(po)
             + np.max(np.abs(timeline.delta_detuning)) * np.abs(pd))
    return float(np.max(worst.sum(axis=1)))


def max_step(cfg: SystemConfig, timeline: Timeline, omega) -> float:
    w = float(np.max(np.abs(np.atleast_1d(omega))))
    limit = 0.02 / max_rate(cfg, timeline)
    if w > 0:
        limit = min(limit, 1.0 / (40.0 * w / TWO_PI))
    return limit


@dataclass(frozen=True)
class Propagation:
    """Mode envelopes in the sideband rotating frames, shape (n_t, 10, n_omega)."""

    times: np.ndarray
    omega: np.ndarray
    envelopes: np.ndarray
    probe: ModeLabel
    probe_amplitude: complex
    kappa_ext: float

    @property
    def probe_envelope(self) -> np.ndarray:
        return self.envelopes[:, PROBE_ROW[self.probe], :]

    def reflection(self) -> np.ndarray:
        """Output over input amplitude in the probe frame, shape (n_t, n_omega)."""
        phase = np.exp(1j * np.outer(self.times, self.omega))
        a = self.probe_envelope * phase
        return 1.0 - math.sqrt(self.kappa_ext) * a / self.probe_amplitude

    def output_envelope(self, k: int = 0) -> TimeTrace:
        """Reflected field of probe tone ``k`` in its own frame."""
        dt = float(self.times[1] - self.times[0])
        return TimeTrace(dt, float(self.times[0]), self.probe_amplitude * self.reflection()[:, k],
                         TraceKind.COMPLEX_ENVELOPE, {"omega": float(self.omega[k])})


def propagate(cfg: SystemConfig, timeline: Timeline, probe_detuning, probe_amplitude=1.0,
              probe=ModeLabel.MICROWAVE, dt=None, initial="steady") -> Propagation:
    """Integrate the driven mean-field equations over ``timeline``.

    ``probe_detuning`` may be an array; all probe tones are propagated together
    (they are independent, the system being linear).  The integration step is
    the largest divisor of the timeline step below :func:`max_step` (or ``dt``).
    ``initial`` is ``"steady"`` (the driven steady state at the first sample),
    ``"empty"`` or an explicit (10, n_omega) array.
    """
    require_valid(cfg)
    label = ModeLabel(probe)
    omega = np.atleast_1d(np.asarray(probe_detuning, dtype=float))
    mode = probe_mode(cfg, label)
    if mode.kappa_ext <= 0:
        raise ConfigurationError("probe mode has no external coupling")
    limit = max_step(cfg, timeline, omega) if dt is None else dt
    sub = max(1, math.ceil(timeline.dt / limit * (1 - 1e-12)))
    h = timeline.dt / sub

    a0, gpat, pk, po, pd = _patterns(cfg)
    b_vec = build_input_matrix(cfg)[:, PROBE_PORT[label]] * probe_amplitude
    scale = abs(probe_amplitude) * 2 * math.sqrt(mode.kappa_ext) / mode.kappa_total
    bound = 1e6 * max(scale, 1e-300)

    def generator(t):
        g, dw, dk, dd = timeline.at(t)
        return a0 + g * gpat + dk * pk + dw * po + dd * pd

    def drive(t):
        return b_vec[:, None] * np.exp(-1j * omega * t)[None, :]

    n_t = timeline.times.size
    out = np.empty((n_t, 10, omega.size), dtype=complex)
    t = float(timeline.times[0])
    if isinstance(initial, str) and initial == "steady":
        d = np.empty((10, omega.size), dtype=complex)
        m0 = generator(t)
        if np.min(np.linalg.eigvals(m0).real) <= 0:
            raise InstabilityError("no stable steady state to start from at the first sample")
        for k, w in enumerate(omega):
            d[:, k] = np.linalg.solve(m0 - 1j * w * np.eye(10), b_vec) * np.exp(-1j * w * t)
    elif isinstance(initial, str) and initial == "empty":
        d = np.zeros((10, omega.size), dtype=complex)
    else:
        d = np.array(initial, dtype=complex).reshape(10, omega.size)
    out[0] = d
    for i in range(1, n_t):
        for _ in range(sub):
            m1 = generator(t)
            mh = generator(t + h / 2)
            m2 = generator(t + h)
            dh = drive(t + h / 2)
            k1 = -m1 @ d + drive(t)
            k2 = -mh @ (d + h / 2 * k1) + dh
            k3 = -mh @ (d + h / 2 * k2) + dh
            k4 = -m2 @ (d + h * k3) + drive(t + h)
            d = d + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        t = float(timeline.times[i])
        if not np.all(np.isfinite(d)) or np.max(np.abs(d)) > bound:
            raise InstabilityError(f"mode amplitudes diverged at t = {t:.4g} s")
        out[i] = d
    return Propagation(timeline.times, omega, out, label, complex(probe_amplitude), mode.kappa_ext)


def settle_time(cfg: SystemConfig, g: float, tol=1e-6) -> float:
    """Time for the slowest mode of M(0) to decay by ``tol``."""
    rates = np.linalg.eigvals(response.build_system_matrix(cfg, g, 0.0)).real
    if np.min(rates) <= 0:
        raise InstabilityError("no stable steady state (a mode has non-positive decay rate)")
    return math.log(1 / tol) / float(np.min(rates))


def quasi_static_R(cfg: SystemConfig, timeline: Timeline, omega, probe) -> np.ndarray:
    """Frequency-domain R(t, Omega) evaluated at each instant's parameters."""
    label = ModeLabel(probe)
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    mode = probe_mode(cfg, label)
    s_off = response.reflection(response.effective_susceptibility_matrix(cfg, 0.0, omega, label),
                                mode.kappa_total, mode.kappa_ext)
    d = cfg.detunings()
    out = np.empty((timeline.times.size, omega.size))
    for i in range(timeline.times.size):
        c = cfg.with_detunings(delta_s=d["s"] + timeline.delta_detuning[i],
                               delta_as=d["as"] + timeline.delta_detuning[i])
        chi = response.effective_susceptibility_matrix(
            c, timeline.g[i], omega, label,
            delta_kappa_e=timeline.delta_kappa_e[i], delta_omega_e=timeline.delta_omega_e[i])
        out[i] = np.abs(response.reflection(chi, mode.kappa_total, mode.kappa_ext) / s_off) ** 2
    return out


# --- detection ---------------------------------------------------------------

def noise_std_for_snr(amplitude, snr_db, gain=1.0) -> float:
    """Per-sample Gaussian sigma giving ``snr_db`` against a tone of envelope ``amplitude``."""
    return gain * abs(amplitude) / math.sqrt(2.0 * 10 ** (snr_db / 10.0))


def heterodyne_signal(envelope: TimeTrace, if_freq=IF_FREQ, gain=1.0, noise_std=0.0, seed=None) -> TimeTrace:
    """Detector current gain * Re[a_out(t) exp(-i w_IF t)] plus white Gaussian noise."""
    if 1.0 / envelope.dt < 10 * if_freq / TWO_PI:
        raise ConfigurationError(
            f"sample rate {1 / envelope.dt:.3g} S/s is below 10x the IF ({if_freq / TWO_PI:.3g} Hz)")
    t = envelope.times
    current = gain * np.real(envelope.samples * np.exp(-1j * if_freq * t))
    if noise_std > 0:
        current = current + np.random.default_rng(seed).normal(0.0, noise_std, size=current.shape)
    return TimeTrace(envelope.dt, envelope.t0, current, TraceKind.DETECTOR_CURRENT, dict(envelope.meta))


def _moving_average(x, n):
    c = np.cumsum(np.concatenate([[0.0], x]))
    return (c[n:] - c[:-n]) / n


def digital_downconvert(traces, if_freq=IF_FREQ, window=100e-9) -> TimeTrace:
    """Averaged RF power from one or more detector traces.

    Each trace is mixed down by exp(+i w_IF t), box-car averaged over ``window``
    and converted to mean power 2|z|^2 (A^2/2 for a tone of amplitude A); powers
    are averaged over traces.  Output samples sit at the window centres, so
    the result is shorter than the input by the window length.
    """
    if isinstance(traces, TimeTrace):
        traces = [traces]
    traces = list(traces)
    first = traces[0]
    if window < TWO_PI / if_freq:
        raise ConfigurationError("DDC window must cover at least one IF period")
    n = int(round(window / first.dt))
    if n > len(first):
        raise ConfigurationError("DDC window longer than the trace")
    total = None
    for tr in traces:
        if tr.dt != first.dt or tr.t0 != first.t0 or len(tr) != len(first):
            raise ValueError("all traces must share one time grid")
        mixed = tr.samples * np.exp(1j * if_freq * tr.times)
        z = _moving_average(mixed.real, n) + 1j * _moving_average(mixed.imag, n)
        p = 2.0 * np.abs(z) ** 2
        total = p if total is None else total + p
    t0 = first.t0 + 0.5 * (n - 1) * first.dt
    return TimeTrace(first.dt, t0, total / len(traces), TraceKind.POWER, {"n_repeats": len(traces)})


def measure_power(envelope: TimeTrace, n_repeats=1, if_freq=IF_FREQ, window=100e-9, gain=1.0,
                  noise_std=0.0, seed=0) -> TimeTrace:
    """Heterodyne + DDC over ``n_repeats`` independently seeded noise realisations."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = root.spawn(n_repeats)
    traces = [heterodyne_signal(envelope, if_freq, gain, noise_std, np.random.default_rng(s))
              for s in seeds]
    return digital_downconvert(traces, if_freq, window)


def temporal_normalized_reflection(power: TimeTrace, baseline_stop=None, baseline_start=None,
                                   baseline=None) -> TimeTrace:
    """R(t) = P(t) / mean pre-pulse power."""
    if baseline is None:
        mask = power.window_mask(baseline_start, baseline_stop)
        if not np.any(mask):
            raise ValueError("baseline window contains no samples")
        baseline = float(np.mean(power.samples[mask]))
    if not baseline > 0:
        raise ValueError("baseline power must be positive")
    return TimeTrace(power.dt, power.t0, power.samples / baseline, TraceKind.NORMALIZED_REFLECTION,
                     dict(power.meta, baseline=baseline))


@dataclass(frozen=True)
class DetectionSpec:
    if_freq: float = IF_FREQ
    sample_rate: float = SAMPLE_RATE
    window: float = 100e-9
    n_repeats: int = 1
    gain: float = 1.0
    noise_std: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class PulseMeasurement:
    times: np.ndarray
    omega: np.ndarray
    photon_number: np.ndarray
    r_matrix: np.ndarray  # (n_t_ddc, n_omega)
    r_times: np.ndarray
    propagation: Propagation


def simulate_pulse_measurement(cfg: SystemConfig, pulse: PulseSpec, omega, probe=ModeLabel.MICROWAVE,
                               detection: DetectionSpec = DetectionSpec(), t_before=500e-9, t_after=1e-6,
                               wavelength=1550e-9, excess: dict | None = None,
                               probe_amplitude=1.0) -> PulseMeasurement:
    """Propagate -> heterodyne -> DDC -> normalise for each probe tone."""
    dt = 1.0 / detection.sample_rate
    times = uniform_grid(pulse.t_start - t_before, pulse.t_end + t_after, dt)
    timeline = timeline_from_pulse(cfg, pulse, times, wavelength)
    if excess:
        timeline = inject_excess_backaction(cfg, timeline, **excess)
    prop = propagate(cfg, timeline, omega, probe_amplitude, probe)
    n_p = (timeline.g / cfg.g0) ** 2 if cfg.g0 > 0 else np.zeros_like(times)
    rows = []
    r_times = None
    seeds = np.random.SeedSequence(detection.seed).spawn(prop.omega.size)
    for k in range(prop.omega.size):
        env = prop.output_envelope(k)
        p = measure_power(env, detection.n_repeats, detection.if_freq, detection.window, detection.gain,
                          detection.noise_std, seeds[k])
        r = temporal_normalized_reflection(p, baseline_stop=pulse.t_start,
                                           baseline_start=pulse.t_start - 0.8 * t_before)
        rows.append(r.samples)
        r_times = r.times
    return PulseMeasurement(times, prop.omega, n_p, np.array(rows).T, r_times, prop)
