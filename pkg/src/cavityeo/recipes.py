"""Fit recipes for the device's spectra and traces, and synthetic data to test them.

All spectra carry multiplicative noise, so the residuals are divided by the
model value from the previous pass (a few reweighting passes).  That keeps
the estimating equations unbiased and the linearised confidence intervals
calibrated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import response
from .fitting import FitError, FitProblem, FitResult, FitStatus, Parameter, Role, least_squares, multistart
from .model import Configuration, ModeLabel, ModeSpec, SystemConfig
from .response import Spectrum
from .timedomain import PulseSpec, TimeTrace, Timeline, inject_excess_backaction, quasi_static_R, timeline_from_pulse


def _values(spec: Spectrum) -> np.ndarray:
    return spec.r_values if spec.r_values is not None else spec.power


def _reflection_power(spec: Spectrum) -> np.ndarray:
    """|S|^2 for single-resonance fits; falls back to the stored real values."""
    return spec.power if spec.s_complex is not None else spec.r_values


def weighted_fit(model, data, parameters, sigma=None, passes=3, starts=None, max_iter=200,
                 probe_iter=8) -> FitResult:
    """Fit ``model(values) -> array`` to ``data`` with relative (or given) weights.

    Without ``sigma`` the residual is (data - model) / w with w refreshed from
    the fitted model between passes; ``starts`` are only used on the first pass,
    each screened with ``probe_iter`` iterations.
    """
    data = np.asarray(data, dtype=float)
    floor = 1e-3 * max(float(np.max(np.abs(data))), 1e-300)
    if sigma is not None:
        w = np.asarray(sigma, dtype=float)
        passes = 1
    else:
        w = np.maximum(np.abs(data), floor)
    params = list(parameters)
    result = None
    for k in range(passes):
        problem = FitProblem(lambda v, w=w: (data - model(v)) / w, params)
        if k == 0 and starts:
            result = multistart(problem, starts, probe_iter=probe_iter, max_iter=max_iter)
        else:
            result = least_squares(problem, max_iter=max_iter)
        params = [replace(p, initial=float(np.clip(result.estimates[p.name], p.lower, p.upper)))
                  for p in params]
        if sigma is not None:
            break
        new_w = np.maximum(np.abs(model(result.estimates)), floor)
        if np.allclose(new_w, w, rtol=1e-9, atol=0):
            break
        w = new_w
    return result


# --- noise and synthetic data ------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Multiplicative Gaussian noise on R; ``snr_db`` overrides ``relative_sigma``."""

    relative_sigma: float = 0.0
    snr_db: float | None = None

    @property
    def sigma(self) -> float:
        if self.snr_db is not None:
            return 10 ** (-self.snr_db / 20.0)
        return self.relative_sigma

    def apply(self, values, rng) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if self.sigma == 0:
            return values.copy()
        return values * (1.0 + self.sigma * rng.standard_normal(values.shape))


@dataclass(frozen=True)
class SweepSpec:
    """Stationary sweep: one spectrum of ``probe`` per cooperativity.

    ``method`` is ``"matrix"``/``"closed"`` for the full model or ``"lorentzian"``
    (microwave probe only) for a Lorentzian with the analytic shifts applied.
    """

    probe: ModeLabel
    omega: np.ndarray
    c_values: tuple[float, ...]
    method: str = "matrix"


@dataclass(frozen=True)
class SyntheticDataset:
    spectra: list[Spectrum]
    truth: dict
    seed: int | None
    noise: NoiseSpec


def generate_synthetic_dataset(cfg: SystemConfig, sweep: SweepSpec, noise: NoiseSpec = NoiseSpec(),
                               seed: int | None = 0) -> SyntheticDataset:
    rng = np.random.default_rng(seed)
    probe = ModeLabel(sweep.probe)
    omega = np.asarray(sweep.omega, dtype=float)
    spectra, gs, shifts = [], [], []
    for c in sweep.c_values:
        g = cfg.g_for_cooperativity(c)
        gs.append(g)
        shift = response.dba_shifts_from_config(cfg, g) if probe is ModeLabel.MICROWAVE else None
        shifts.append(shift)
        if sweep.method == "lorentzian":
            if probe is not ModeLabel.MICROWAVE:
                raise ValueError("the Lorentzian generator only models the microwave probe")
            mw = cfg.microwave
            clean = response.shifted_microwave_R(omega, mw.kappa_total, mw.kappa_ext,
                                                 shift.delta_omega_e, shift.delta_kappa_e)
            s = None
        else:
            spec = response.spectrum_sweep(cfg, g, omega, probe, sweep.method)
            clean, s = spec.r_values, spec.s_complex
        spectra.append(Spectrum(omega, s if noise.sigma == 0 else None, noise.apply(clean, rng),
                                meta={"probe": probe.value, "C": float(c), "g": float(g)}))
    truth = {"C": [float(c) for c in sweep.c_values], "g": gs}
    if probe is ModeLabel.MICROWAVE:
        truth["delta_omega_e"] = [s.delta_omega_e for s in shifts]
        truth["delta_kappa_e"] = [s.delta_kappa_e for s in shifts]
    return SyntheticDataset(spectra, truth, seed, noise)


def lorentzian_reflection(omega, kappa, kappa_ext, center=0.0, scale=1.0):
    chi = 1.0 / (kappa / 2 - 1j * (np.asarray(omega, dtype=float) - center))
    return scale * np.abs(1.0 - kappa_ext * chi) ** 2


def split_mode_reflection(omega, kappa_o, kappa_ext, delta_o, kappa_tm, delta_tm, j, scale=1.0):
    """|S|^2 of an externally coupled TE mode hybridised with a dark TM mode."""
    w = np.asarray(omega, dtype=float)
    chi = 1.0 / (kappa_o / 2 - 1j * (w - delta_o))
    chi_tm = 1.0 / (kappa_tm / 2 - 1j * (w - delta_tm))
    return scale * np.abs(1.0 - kappa_ext * chi / (1.0 + j**2 * chi * chi_tm)) ** 2


def synthetic_spectrum(omega, clean, noise: NoiseSpec = NoiseSpec(), seed=0, **meta) -> Spectrum:
    rng = np.random.default_rng(seed)
    return Spectrum(np.asarray(omega, dtype=float), None, noise.apply(clean, rng), meta=meta)


# --- single-mode fits --------------------------------------------------------

@dataclass(frozen=True)
class LorentzianFit:
    mode: ModeSpec
    center: float
    scale: float
    result: FitResult


def _dip_guess(omega, r):
    base = float(np.percentile(r, 90))
    i = int(np.argmin(r))
    depth = max(min(r[i] / base, 1.0), 0.0)
    half = (base + r[i]) / 2
    below = np.flatnonzero(r <= half)
    width = float(omega[below[-1]] - omega[below[0]]) if below.size > 1 else float(np.ptp(omega)) / 20
    width = max(width, 3 * float(np.min(np.diff(omega))))
    return base, float(omega[i]), depth, width


def lorentzian_reflection_fit(spectrum: Spectrum, use_phase=False, label=ModeLabel.STOKES) -> LorentzianFit:
    """Fit |1 - kappa_ext chi(omega - omega0)|^2 times a background scale.

    |S|^2 alone cannot tell eta from 1 - eta; the under-coupled branch
    (eta <= 1/2) is returned unless ``use_phase`` and complex data are given.
    """
    omega = spectrum.frequencies
    if len(spectrum) < 8:
        raise FitError("spectrum too short for a Lorentzian fit")
    r = _reflection_power(spectrum)
    base, center, depth, width = _dip_guess(omega, r)
    eta0 = float(np.clip((1 - math.sqrt(depth)) / 2, 0.02, 0.48))
    span = float(np.ptp(omega))
    if use_phase and spectrum.s_complex is not None:
        s = spectrum.s_complex
        edge = s[np.argmax(np.abs(omega - center))]
        params = [Parameter("kappa", width, 1e-6 * width, 10 * span),
                  Parameter("eta", 0.3, 1e-6, 1.0),
                  Parameter("omega0", center, omega[0], omega[-1], scale=width),
                  Parameter("amp", abs(edge), 0.0, 10 * abs(edge) + 1e-300),
                  Parameter("phase", float(np.angle(edge)), -4.0, 4.0, scale=1.0)]

        def model_c(v):
            chi = 1.0 / (v["kappa"] / 2 - 1j * (omega - v["omega0"]))
            return v["amp"] * np.exp(1j * v["phase"]) * (1 - v["eta"] * v["kappa"] * chi)

        problem = FitProblem(lambda v: np.concatenate([(model_c(v) - s).real, (model_c(v) - s).imag]), params)
        res = multistart(problem, [{"eta": 0.25}, {"eta": 0.75}])
        est = res.estimates
        mode = ModeSpec(est["kappa"], est["eta"] * est["kappa"], est["omega0"], ModeLabel(label))
        return LorentzianFit(mode, est["omega0"], est["amp"] ** 2, res)

    params = [Parameter("kappa", width, 1e-6 * width, 10 * span),
              Parameter("eta", eta0, 1e-9, 0.5),
              Parameter("omega0", center, omega[0], omega[-1], scale=width),
              Parameter("scale", base, 0.0, 10 * base + 1e-300)]

    def model(v):
        return lorentzian_reflection(omega, v["kappa"], v["eta"] * v["kappa"], v["omega0"], v["scale"])

    res = weighted_fit(model, r, params, spectrum.sigma)
    est = res.estimates
    mode = ModeSpec(est["kappa"], est["eta"] * est["kappa"], est["omega0"], ModeLabel(label))
    return LorentzianFit(mode, est["omega0"], est["scale"], res)


@dataclass(frozen=True)
class SplitModeFit:
    te: ModeSpec
    tm: ModeSpec
    j: float
    scale: float
    result: FitResult


def split_mode_fit(spectrum: Spectrum) -> SplitModeFit:
    """Fit a TE mode (externally coupled) hybridised with a dark TM mode by coupling J.

    Multi-start over J and the sign of the TE/TM offset from the dip.
    """
    omega = spectrum.frequencies
    r = _reflection_power(spectrum)
    base, center, depth, width = _dip_guess(omega, r)
    span = float(np.ptp(omega))
    eta0 = float(np.clip((1 - math.sqrt(depth)) / 2, 0.05, 0.45))
    params = [Parameter("kappa_o", width, 1e-4 * width, 10 * span),
              Parameter("eta", eta0, 1e-9, 0.5),
              Parameter("delta_o", center, omega[0], omega[-1], scale=width),
              Parameter("kappa_tm", width / 2, 1e-4 * width, 10 * span),
              Parameter("delta_tm", center, omega[0], omega[-1], scale=width),
              Parameter("j", width / 2, 0.0, span, scale=width),
              Parameter("scale", base, 0.0, 10 * base + 1e-300)]

    def model(v):
        return split_mode_reflection(omega, v["kappa_o"], v["eta"] * v["kappa_o"], v["delta_o"],
                                     v["kappa_tm"], v["delta_tm"], v["j"], v["scale"])

    starts = []
    for jf in (0.25, 0.6, 1.2):
        for off in (0.0, 0.5, -0.5):
            for kf in (0.3, 1.0):
                starts.append({"j": jf * width, "delta_o": center + off * width,
                               "delta_tm": center - off * width, "kappa_tm": kf * width})
    starts.append({"j": 0.0})  # an uncoupled TM mode has no gradient in j to pull it away from zero
    # hybridised branches take longer to separate, so screen starts for longer
    res = weighted_fit(model, r, params, spectrum.sigma, starts=starts, probe_iter=20)
    e = res.estimates
    te = ModeSpec(e["kappa_o"], e["eta"] * e["kappa_o"], e["delta_o"], ModeLabel.STOKES)
    tm = ModeSpec(e["kappa_tm"], 0.0, e["delta_tm"], ModeLabel.STOKES_TM)
    return SplitModeFit(te, tm, e["j"], e["scale"], res)


# --- joint stationary fits ---------------------------------------------------

@dataclass(frozen=True)
class JointMicrowaveFit:
    kappa_e: float
    kappa_e_ext: float
    delta_omega_e: np.ndarray
    delta_kappa_e: np.ndarray
    result: FitResult

    def intervals(self, name) -> np.ndarray:
        ci = self.result.confidence_intervals
        return np.array([ci[f"{name}_{k}"] for k in range(len(self.delta_omega_e))])


def _grid_init_shift(omega, r, kappa_e, kappa_e_ext):
    dk = np.linspace(-0.9, 3.0, 79) * kappa_e
    dw = np.linspace(-1.0, 1.0, 41) * kappa_e
    best, arg = math.inf, (0.0, 0.0)
    for a in dk:
        pred = response.shifted_microwave_R(omega[None, :], kappa_e, kappa_e_ext, dw[:, None], a)
        cost = np.sum(((pred - r[None, :]) / np.maximum(r, 1e-3)) ** 2, axis=1)
        i = int(np.argmin(cost))
        if cost[i] < best:
            best, arg = float(cost[i]), (float(dw[i]), float(a))
    return arg


def joint_stationary_microwave_fit(spectra: Sequence[Spectrum], kappa_e: float, kappa_e_ext: float,
                                   linewidth_role=Role.SHARED) -> JointMicrowaveFit:
    """Shared (kappa_e, kappa_e_ext) and per-spectrum (delta_omega_e, delta_kappa_e).

    ``kappa_e``/``kappa_e_ext`` are initial values (or the held values when
    ``linewidth_role`` is fixed).
    """
    if len(spectra) < 2:
        raise FitError("the joint fit needs at least two spectra")
    role = Role(linewidth_role)
    data = np.concatenate([_values(s) for s in spectra])
    omegas = [s.frequencies for s in spectra]
    params = [Parameter("kappa_e", kappa_e, 0.05 * kappa_e, 20 * kappa_e, role),
              Parameter("kappa_e_ext", kappa_e_ext, 0.0, 20 * kappa_e, role, scale=kappa_e)]
    for k, s in enumerate(spectra):
        dw, dk = _grid_init_shift(s.frequencies, _values(s), kappa_e, kappa_e_ext)
        params.append(Parameter(f"d_omega_{k}", dw, -10 * kappa_e, 10 * kappa_e, scale=kappa_e))
        params.append(Parameter(f"d_kappa_{k}", dk, -0.999 * kappa_e, 10 * kappa_e, scale=kappa_e))

    def model(v):
        if v["kappa_e_ext"] > v["kappa_e"]:
            return np.full(data.shape, np.nan)
        parts = []
        for k, w in enumerate(omegas):
            if v["kappa_e"] + v[f"d_kappa_{k}"] <= 0:
                return np.full(data.shape, np.nan)
            parts.append(response.shifted_microwave_R(w, v["kappa_e"], v["kappa_e_ext"],
                                                      v[f"d_omega_{k}"], v[f"d_kappa_{k}"]))
        return np.concatenate(parts)

    sigma = None
    if all(s.sigma is not None for s in spectra):
        sigma = np.concatenate([s.sigma for s in spectra])
    res = weighted_fit(model, data, params, sigma)
    # |S|^2 cannot tell kappa_e + d_kappa from its mirror about critical
    # coupling (2 kappa_e_ext).  Check the mirror branch spectrum by spectrum
    # with the shared linewidths held, and refit jointly if any branch wins.
    e = dict(res.estimates)
    flips = {}
    offsets = np.cumsum([0] + [len(o) for o in omegas])
    for k, w in enumerate(omegas):
        d_k = data[offsets[k]:offsets[k + 1]]
        weight = np.maximum(np.abs(model(e)[offsets[k]:offsets[k + 1]]), 1e-3 * np.max(np.abs(data)))
        if sigma is not None:
            weight = sigma[offsets[k]:offsets[k + 1]]

        def sub(v, w=w, d_k=d_k, weight=weight):
            if e["kappa_e"] + v["dk"] <= 0:
                return np.full(d_k.shape, np.nan)
            return (d_k - response.shifted_microwave_R(w, e["kappa_e"], e["kappa_e_ext"], v["dw"], v["dk"])) / weight

        here = sub({"dw": e[f"d_omega_{k}"], "dk": e[f"d_kappa_{k}"]})
        crit = 2 * e["kappa_e_ext"] - e["kappa_e"]
        flipped = 2 * crit - e[f"d_kappa_{k}"]
        if not -0.999 * kappa_e < flipped < 10 * kappa_e or abs(flipped - e[f"d_kappa_{k}"]) < 1e-9 * kappa_e:
            continue
        try:
            alt = least_squares(FitProblem(sub, [
                Parameter("dw", e[f"d_omega_{k}"], -10 * kappa_e, 10 * kappa_e, scale=kappa_e),
                Parameter("dk", flipped, -0.999 * kappa_e, 10 * kappa_e, scale=kappa_e)]), max_iter=40)
        except FitError:
            continue
        if alt.cost < float(here @ here) * (1 - 1e-6):
            flips[k] = alt.estimates
    if flips:
        start = []
        for p in params:
            val = e[p.name]
            for k, est in flips.items():
                if p.name == f"d_omega_{k}":
                    val = est["dw"]
                elif p.name == f"d_kappa_{k}":
                    val = est["dk"]
            start.append(replace(p, initial=float(np.clip(val, p.lower, p.upper))))
        alt = weighted_fit(model, data, start, sigma)
        if alt.cost < res.cost:
            res = alt
    e = res.estimates
    n = len(spectra)
    return JointMicrowaveFit(e["kappa_e"], e["kappa_e_ext"],
                             np.array([e[f"d_omega_{k}"] for k in range(n)]),
                             np.array([e[f"d_kappa_{k}"] for k in range(n)]), res)


def with_optical(cfg: SystemConfig, kappa_o, kappa_o_ext, delta_s, delta_as) -> SystemConfig:
    """Replace the TE triplet's loss rates and the sideband detunings."""
    te = dict(kappa_total=kappa_o, kappa_ext=kappa_o_ext)
    return replace(cfg, stokes=replace(cfg.stokes, detuning=delta_s, **te),
                   pump_mode=replace(cfg.pump_mode, **te),
                   anti_stokes=replace(cfg.anti_stokes, detuning=delta_as, **te))


def _c_upper(cfg):
    return 0.999 if cfg.configuration is Configuration.STOKES else 20.0


def _c_grid_init(cfg, omega, r, probe, c_max, method="closed"):
    grid = np.linspace(0, c_max, 41)
    costs = []
    for c in grid:
        pred = response.normalized_reflection(cfg, cfg.g_for_cooperativity(c), omega, probe, method)
        costs.append(np.sum(((pred - r) / np.maximum(r, 1e-3)) ** 2))
    return float(grid[int(np.argmin(costs))])


@dataclass(frozen=True)
class JointOpticalFit:
    kappa_o: float
    kappa_o_ext: float
    delta_s: float
    delta_as: float
    cooperativities: np.ndarray
    result: FitResult
    config: SystemConfig


def joint_stationary_optical_fit(spectra: Sequence[Spectrum], cfg: SystemConfig, probe,
                                 powers: Sequence[float] | None = None, c_max_init=1.0,
                                 fixed: Sequence[str] = (), method="closed") -> JointOpticalFit:
    """Per-spectrum C with shared kappa_o, kappa_o_ext, delta_s, delta_as through the full matrix model.

    ``cfg`` supplies the initial optical values and everything held fixed
    (microwave mode, TM modes, J).  With ``powers`` the initial C scale
    linearly with power from a grid search on the highest-power spectrum.
    Names in ``fixed`` (e.g. ``"delta_as"``, which a Stokes probe barely sees
    when the anti-Stokes branch is suppressed) are held at their ``cfg`` values.
    ``method`` selects the forward model: the closed form (default, same
    result as the matrix solve to rounding and several times faster) or
    ``"matrix"``.
    """
    if len(spectra) < 2:
        raise FitError("the joint fit needs at least two spectra")
    probe = ModeLabel(probe)
    c_hi = _c_upper(cfg)
    c_max_init = min(c_max_init, c_hi)
    if powers is not None:
        top = int(np.argmax(powers))
        c_top = _c_grid_init(cfg, spectra[top].frequencies, _values(spectra[top]), probe, c_max_init, method)
        c0 = [c_top * p / powers[top] for p in powers]
    else:
        c0 = [_c_grid_init(cfg, s.frequencies, _values(s), probe, c_max_init, method) for s in spectra]
    ko = cfg.kappa_o
    d = cfg.detunings()
    params = [Parameter("kappa_o", ko, 0.1 * ko, 10 * ko),
              Parameter("kappa_o_ext", cfg.stokes.kappa_ext, 1e-3 * ko, 10 * ko, scale=ko),
              Parameter("delta_s", d["s"], -5 * ko, 5 * ko, scale=0.01 * ko),
              Parameter("delta_as", d["as"], -5 * ko, 5 * ko, scale=0.01 * ko)]
    params += [Parameter(f"C_{k}", float(np.clip(c, 0, c_hi)), 0.0, c_hi, scale=max(c_max_init, 0.1))
               for k, c in enumerate(c0)]
    unknown = set(fixed) - {p.name for p in params}
    if unknown:
        raise FitError(f"unknown parameter(s) to fix: {sorted(unknown)}")
    params = [replace(p, role=Role.FIXED) if p.name in fixed else p for p in params]
    data = np.concatenate([_values(s) for s in spectra])

    def model(v):
        if v["kappa_o_ext"] >= v["kappa_o"]:
            return np.full(data.shape, np.nan)
        c_fit = with_optical(cfg, v["kappa_o"], v["kappa_o_ext"], v["delta_s"], v["delta_as"])
        try:
            return np.concatenate([
                response.normalized_reflection(c_fit, c_fit.g_for_cooperativity(v[f"C_{k}"]), s.frequencies, probe,
                                               method)
                for k, s in enumerate(spectra)])
        except (response.SingularityError, ValueError):
            return np.full(data.shape, np.nan)

    sigma = None
    if all(s.sigma is not None for s in spectra):
        sigma = np.concatenate([s.sigma for s in spectra])
    res = weighted_fit(model, data, params, sigma)
    e = res.estimates
    fitted = with_optical(cfg, e["kappa_o"], e["kappa_o_ext"], e["delta_s"], e["delta_as"])
    cs = np.array([e[f"C_{k}"] for k in range(len(spectra))])
    return JointOpticalFit(e["kappa_o"], e["kappa_o_ext"], e["delta_s"], e["delta_as"], cs, res, fitted)


# --- time-resolved fits ------------------------------------------------------

@dataclass(frozen=True)
class TransientFit:
    times: np.ndarray
    cooperativity: np.ndarray
    delta: np.ndarray
    c_stderr: np.ndarray
    delta_stderr: np.ndarray
    status: list[str]

    @property
    def flagged(self) -> np.ndarray:
        """Slices whose fit failed outright (singular pre-pulse slices are not failures)."""
        return np.array([s in (FitStatus.MAX_ITER.value, "failed") for s in self.status])


def transient_fit(r_matrix, times, omega, cfg: SystemConfig, probe, fit_detuning=True,
                  c_max=None, method="closed") -> TransientFit:
    """Per-slice C(t) (and a common detuning change delta(t)) from R(omega, t).

    ``r_matrix`` has shape (n_times, n_omega).  Static parameters come from
    ``cfg`` (typically a prior stationary fit).  Each slice starts from the
    previous estimate, from (previous C, 0) and from a grid search in C,
    keeping the best.
    """
    probe = ModeLabel(probe)
    r_matrix = np.asarray(r_matrix, dtype=float)
    omega = np.asarray(omega, dtype=float)
    c_hi = _c_upper(cfg) if c_max is None else c_max
    d = cfg.detunings()
    ko = cfg.kappa_o
    n = r_matrix.shape[0]
    c_out, d_out = np.full(n, np.nan), np.full(n, np.nan)
    c_err, d_err = np.full(n, np.nan), np.full(n, np.nan)
    status = []
    prev = {"C": 0.0, "delta": 0.0}
    # R is referenced to the pre-pulse spectrum, which a detuning change does not move
    s_off = response.probe_reflection(cfg, 0.0, omega, probe, method)
    for i in range(n):
        data = r_matrix[i]

        def model(v):
            c = cfg.with_detunings(d["s"] + v.get("delta", 0.0), d["as"] + v.get("delta", 0.0))
            try:
                s_on = response.probe_reflection(c, c.g_for_cooperativity(v["C"]), omega, probe, method)
            except (response.SingularityError, ValueError):
                return np.full(data.shape, np.nan)
            return np.abs(s_on / s_off) ** 2

        params = [Parameter("C", float(np.clip(prev["C"], 0, c_hi)), 0.0, c_hi, scale=max(0.1, c_hi / 10))]
        if fit_detuning:
            params.append(Parameter("delta", float(np.clip(prev["delta"], -ko, ko)), -ko, ko, scale=0.01 * ko))
        starts = [{"C": prev["C"], "delta": prev["delta"]}, {"C": prev["C"], "delta": 0.0}]
        starts.append({"C": _c_grid_init(cfg, omega, data, probe, min(c_hi, 1.0), method), "delta": 0.0})
        try:
            res = weighted_fit(model, data, params, starts=starts)
        except FitError:
            status.append("failed")
            continue
        c_out[i] = res.estimates["C"]
        c_err[i] = res.stderr["C"]
        if fit_detuning:
            d_out[i] = res.estimates["delta"]
            d_err[i] = res.stderr["delta"]
        status.append(res.status.value)
        prev = {"C": c_out[i], "delta": d_out[i] if fit_detuning else 0.0}
    return TransientFit(np.asarray(times, dtype=float), c_out, d_out, c_err, d_err, status)


@dataclass(frozen=True)
class DelayedFit:
    status: str  # "bounce" or "no_bounce"; a flat trace is "no_bounce" without tau_ex
    t_ex: float | None
    tau_ex: float | None
    amplitude: float | None
    t_bounce: float | None
    result: FitResult | None


def _smooth(y, n):
    if n <= 1:
        return y.copy()
    kernel = np.ones(n) / n
    pad = n // 2
    ext = np.concatenate([np.full(pad, y[0]), y, np.full(n - 1 - pad, y[-1])])
    return np.convolve(ext, kernel, mode="valid")


def delayed_backaction_fit(trace: TimeTrace, t_pulse_end: float, smoothing=100e-9,
                           guard=200e-9) -> DelayedFit:
    """Bounce time t_ex and recovery constant tau_ex of R(t) after the pulse.

    The bounce is the largest |R - 1| of the smoothed trace after
    ``t_pulse_end + guard`` that passes a 5-point local-extremum test (points
    spaced by the smoothing window).  After it R - 1 = A exp(-(t - t_b)/tau_ex)
    is fitted to the unsmoothed data.
    """
    t = trace.times
    y = np.real(trace.samples) - 1.0
    n = max(1, int(round(smoothing / trace.dt)))
    ys = _smooth(y, n)
    idx = np.flatnonzero(t >= t_pulse_end + guard)
    if idx.size < 10:
        raise FitError("trace too short after the pulse")
    post = ys[idx]
    tail = post[int(0.8 * post.size):]
    noise = float(np.std(tail)) if tail.size > 2 else 0.0
    peak = int(np.argmax(np.abs(post)))
    if abs(post[peak]) <= max(6 * noise, 1e-9):
        return DelayedFit("no_bounce", None, None, None, None, None)

    def is_extremum(k):
        pts = [k + m * n for m in (-2, -1, 1, 2)]
        if pts[0] < 0 or pts[-1] >= post.size:
            return False
        return all(abs(post[k]) >= abs(post[p]) for p in pts)

    bounce = is_extremum(peak)
    start = idx[peak] if bounce else idx[0]
    tt = t[start:] - t[start]
    yy = y[start:]
    a0 = float(ys[start])
    target = abs(a0) / math.e
    below = np.flatnonzero(np.abs(ys[start:]) <= target)
    tau0 = float(tt[below[0]]) if below.size else float(tt[-1]) / 5
    tau0 = max(tau0, 5 * trace.dt)
    params = [Parameter("amplitude", a0, -10 * abs(a0), 10 * abs(a0), scale=abs(a0)),
              Parameter("tau", tau0, trace.dt, 100 * float(tt[-1]) + trace.dt)]
    res = least_squares(FitProblem(lambda v: v["amplitude"] * np.exp(-tt / v["tau"]) - yy, params))
    t_b = float(t[start])
    return DelayedFit("bounce" if bounce else "no_bounce", t_b - t_pulse_end if bounce else None,
                      res.estimates["tau"], res.estimates["amplitude"], t_b if bounce else None, res)


def synthetic_pulse_spectra(cfg: SystemConfig, pulse: PulseSpec, times, omega, probe,
                            noise: NoiseSpec = NoiseSpec(), seed=0, excess: dict | None = None,
                            wavelength=1550e-9):
    """Quasi-static R(omega, t) for a pulse, with optional excess perturbations and noise.

    Returns (timeline, r_matrix) with r_matrix of shape (n_times, n_omega).
    """
    timeline: Timeline = timeline_from_pulse(cfg, pulse, times, wavelength)
    if excess:
        timeline = inject_excess_backaction(cfg, timeline, **excess)
    clean = quasi_static_R(cfg, timeline, omega, probe)
    return timeline, noise.apply(clean, np.random.default_rng(seed))


@dataclass
class RecipeReport:
    """Serializable summary attached to fit outputs."""

    recipe: str
    values: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
