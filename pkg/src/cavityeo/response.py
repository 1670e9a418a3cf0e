"""Frequency-domain linear response of the pumped multimode device.

Two independent routes to the effective susceptibilities are provided: a dense
solve of the 10x10 Langevin system (:func:`effective_susceptibility_matrix`)
and nested closed forms obtained by eliminating the TM modes and the idler
(:func:`closed_form_chi_e`, :func:`closed_form_chi_o`).  Tests hold them
against each other.

Convention: chi(Omega) = 1/(kappa/2 - i Omega), S = 1 - kappa_ext chi_eff.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .model import Configuration, DomainError, ModeLabel, ModeSpec, SystemConfig, require_valid

# state vector: a_s, a_s+, a_as, a_as+, a_stm, a_stm+, a_astm, a_astm+, b, b+
N_MODES = 10
# input vector: a_s,in a_s,in+ a_s,0 a_s,0+ a_as,in .. a_as,0+ stm_vac+.. astm_vac+.. b_in b_in+ b_0 b_0+
N_INPUTS = 16

PROBE_ROW = {ModeLabel.STOKES: 0, ModeLabel.ANTI_STOKES: 2, ModeLabel.MICROWAVE: 8}
PROBE_PORT = {ModeLabel.STOKES: 0, ModeLabel.ANTI_STOKES: 4, ModeLabel.MICROWAVE: 12}

# condition number above which the Langevin matrix is treated as singular
SINGULAR_COND = 1e12


class SingularityError(ArithmeticError):
    """The linear system has no unique steady state at the requested point."""


class Frame(str, enum.Enum):
    ROTATING_PROBE = "rotating_probe"
    LAB = "lab"


@dataclass(frozen=True)
class Spectrum:
    """Sampled response on a strictly increasing angular-frequency axis."""

    frequencies: np.ndarray
    s_complex: np.ndarray | None = None
    r_values: np.ndarray | None = None
    frame: Frame = Frame.ROTATING_PROBE
    sigma: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        object.__setattr__(self, "frequencies", f)
        if f.ndim != 1 or f.size == 0:
            raise ValueError("frequencies must be a non-empty 1-d array")
        if f.size > 1 and not np.all(np.diff(f) > 0):
            raise ValueError("frequencies must be strictly increasing")
        for name, dtype in (("s_complex", complex), ("r_values", float), ("sigma", float)):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=dtype)
                if val.shape != f.shape:
                    raise ValueError(f"{name} length {val.shape} does not match frequencies {f.shape}")
                object.__setattr__(self, name, val)

    def __len__(self):
        return self.frequencies.size

    @property
    def power(self) -> np.ndarray:
        """|S|^2 when the complex response is present, else the stored real values."""
        if self.s_complex is not None:
            return np.abs(self.s_complex) ** 2
        return self.r_values

    def to_lab(self, center: float) -> "Spectrum":
        if self.frame is Frame.LAB:
            return self
        return Spectrum(self.frequencies + center, self.s_complex, self.r_values, Frame.LAB,
                        self.sigma, dict(self.meta, center=center))


@dataclass(frozen=True)
class DbaShift:
    delta_omega_e: float
    delta_kappa_e: float


def bare_susceptibility(kappa, omega):
    """chi(Omega) = 1/(kappa/2 - i Omega)."""
    return 1.0 / (kappa / 2.0 - 1j * np.asarray(omega))


def _label(probe) -> ModeLabel:
    label = ModeLabel(probe)
    if label not in PROBE_ROW:
        raise DomainError(f"probe must be stokes, anti_stokes or microwave (got {label.value})")
    return label


# --- matrix route ----------------------------------------------------------

def _static_parts(cfg: SystemConfig, delta_kappa_e=0.0, delta_omega_e=0.0):
    """Return (A0 at g=0 and Omega=0, unit-g coupling pattern G)."""
    d = cfg.detunings()
    ks, kas = cfg.stokes.kappa_total, cfg.anti_stokes.kappa_total
    kstm, kastm = cfg.stokes_tm.kappa_total, cfg.anti_stokes_tm.kappa_total
    ke = cfg.microwave.kappa_total + delta_kappa_e
    de = d["e"] + delta_omega_e
    # Stokes rows carry -delta_s: the stored delta_s is mode minus sideband
    diag = np.array([
        ks / 2 + 1j * d["s"], ks / 2 - 1j * d["s"],
        kas / 2 - 1j * d["as"], kas / 2 + 1j * d["as"],
        kstm / 2 + 1j * d["s_tm"], kstm / 2 - 1j * d["s_tm"],
        kastm / 2 - 1j * d["as_tm"], kastm / 2 + 1j * d["as_tm"],
        ke / 2 + 1j * de, ke / 2 - 1j * de,
    ])
    a0 = np.diag(diag).astype(complex)
    js, jas = cfg.j_s, cfg.j_as
    for (r, c), v in {(0, 4): -1j * js, (1, 5): 1j * js, (2, 6): -1j * jas, (3, 7): 1j * jas,
                      (4, 0): -1j * js, (5, 1): 1j * js, (6, 2): -1j * jas, (7, 3): 1j * jas}.items():
        a0[r, c] = v
    gpat = np.zeros((N_MODES, N_MODES), dtype=complex)
    for (r, c), v in {(0, 9): 1j, (1, 8): -1j, (2, 8): 1j, (3, 9): -1j,
                      (8, 1): 1j, (8, 2): 1j, (9, 0): -1j, (9, 3): -1j}.items():
        gpat[r, c] = v
    return a0, gpat


def build_system_matrix(cfg: SystemConfig, g: float, omega, *, delta_kappa_e=0.0, delta_omega_e=0.0):
    """Inverse-susceptibility matrix of the Langevin system, M(Omega) = M(0) - i Omega I.

    Scalar ``omega`` gives a (10, 10) array, an array of shape (n,) gives (n, 10, 10).
    ``delta_kappa_e``/``delta_omega_e`` perturb the microwave mode (excess back-action).
    """
    require_valid(cfg)
    a0, gpat = _static_parts(cfg, delta_kappa_e, delta_omega_e)
    m0 = a0 + g * gpat
    w = np.asarray(omega, dtype=float)
    eye = np.eye(N_MODES)
    if w.ndim == 0:
        return m0 - 1j * float(w) * eye
    return m0[None, :, :] - 1j * w[:, None, None] * eye[None, :, :]


def build_input_matrix(cfg: SystemConfig) -> np.ndarray:
    """Coupling of the 16 bath inputs onto the 10 mode amplitudes."""
    require_valid(cfg)
    lmat = np.zeros((N_MODES, N_INPUTS), dtype=complex)
    s, a, e = cfg.stokes, cfg.anti_stokes, cfg.microwave
    for row, (ex, int_), cols in (
        (0, (s.kappa_ext, s.kappa_int), (0, 2)), (1, (s.kappa_ext, s.kappa_int), (1, 3)),
        (2, (a.kappa_ext, a.kappa_int), (4, 6)), (3, (a.kappa_ext, a.kappa_int), (5, 7)),
        (8, (e.kappa_ext, e.kappa_int), (12, 14)), (9, (e.kappa_ext, e.kappa_int), (13, 15)),
    ):
        lmat[row, cols[0]] = np.sqrt(ex)
        lmat[row, cols[1]] = np.sqrt(max(int_, 0.0))
    for row, col, kappa in ((4, 8, cfg.stokes_tm.kappa_total), (5, 9, cfg.stokes_tm.kappa_total),
                            (6, 10, cfg.anti_stokes_tm.kappa_total), (7, 11, cfg.anti_stokes_tm.kappa_total)):
        lmat[row, col] = np.sqrt(kappa)
    return lmat


def probe_mode(cfg: SystemConfig, probe) -> ModeSpec:
    label = _label(probe)
    return {ModeLabel.STOKES: cfg.stokes, ModeLabel.ANTI_STOKES: cfg.anti_stokes,
            ModeLabel.MICROWAVE: cfg.microwave}[label]


def _check_conditioning(mats, inverses, omega, label):
    """Reject grid points whose 1-norm condition number exceeds SINGULAR_COND."""
    norm = np.abs(mats).sum(axis=-2).max(axis=-1)
    norm_inv = np.abs(inverses).sum(axis=-2).max(axis=-1)
    cond = norm * norm_inv
    bad = ~np.isfinite(cond) | (cond > SINGULAR_COND)
    if np.any(bad):
        i = int(np.flatnonzero(np.atleast_1d(bad))[0])
        w = np.atleast_1d(omega)[i]
        raise SingularityError(
            f"Langevin matrix singular for {label.value} probe at Omega = {w:.6g} rad/s "
            f"(grid index {i}, condition number {np.atleast_1d(cond)[i]:.3g})")


def effective_susceptibility_matrix(cfg: SystemConfig, g: float, omega, probe, *,
                                    delta_kappa_e=0.0, delta_omega_e=0.0):
    """chi_eff of the probed mode from a dense solve with unit input on its external port."""
    label = _label(probe)
    mode = probe_mode(cfg, label)
    if mode.kappa_ext <= 0:
        raise DomainError(f"{label.value} mode has no external coupling to probe through")
    mats = build_system_matrix(cfg, g, omega, delta_kappa_e=delta_kappa_e, delta_omega_e=delta_omega_e)
    rhs = build_input_matrix(cfg)[:, PROBE_PORT[label]]
    scalar = mats.ndim == 2
    if scalar:
        mats = mats[None]
    try:
        inverses = np.linalg.inv(mats)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"Langevin matrix singular for {label.value} probe: {exc}") from exc
    _check_conditioning(mats, inverses, omega, label)
    sol = inverses @ rhs
    chi = sol[:, PROBE_ROW[label]] / np.sqrt(mode.kappa_ext)
    return chi[0] if scalar else chi


# --- closed forms ----------------------------------------------------------

def _dressed(kappa, kappa_tm, j, x, x_tm):
    chi = bare_susceptibility(kappa, x)
    return chi / (1.0 + j**2 * chi * bare_susceptibility(kappa_tm, x_tm))


def _closed(label, omega, g, p):
    w = np.asarray(omega, dtype=float)
    x_s_minus = _dressed(p["ks"], p["kstm"], p["js"], w + p["ds"], w + p["dstm"])
    x_s_plus = _dressed(p["ks"], p["kstm"], p["js"], w - p["ds"], w - p["dstm"])
    x_as_plus = _dressed(p["kas"], p["kastm"], p["jas"], w + p["das"], w + p["dastm"])
    x_as_minus = _dressed(p["kas"], p["kastm"], p["jas"], w - p["das"], w - p["dastm"])
    inv_e_plus = p["ke"] / 2 - 1j * (w - p["de"])
    inv_e_minus = p["ke"] / 2 - 1j * (w + p["de"])
    g2 = g * g
    if label is ModeLabel.MICROWAVE:
        return 1.0 / (inv_e_plus - g2 * x_s_minus + g2 * x_as_plus)
    if label is ModeLabel.STOKES:
        return 1.0 / (1.0 / x_s_plus - g2 / (inv_e_minus + g2 * x_as_minus))
    return 1.0 / (1.0 / x_as_plus + g2 / (inv_e_plus - g2 * x_s_minus))


def _case_params(case, kappa_e, kappa_o, j, kappa_tm, delta_s, delta_as, delta_tm, delta_e):
    case = Configuration(case)
    if min(kappa_e, kappa_o) <= 0:
        raise DomainError("loss rates must be positive")
    kappa_tm = kappa_o if kappa_tm is None else kappa_tm
    js = j if case is Configuration.ANTI_STOKES else 0.0
    jas = j if case is Configuration.STOKES else 0.0
    dstm = delta_tm if (delta_tm is not None and case is Configuration.ANTI_STOKES) else delta_s
    dastm = delta_tm if (delta_tm is not None and case is Configuration.STOKES) else delta_as
    return dict(ks=kappa_o, kas=kappa_o, kstm=kappa_tm, kastm=kappa_tm, js=js, jas=jas,
                ds=delta_s, das=delta_as, dstm=dstm, dastm=dastm, ke=kappa_e, de=delta_e)


def closed_form_chi_e(case, omega, g, kappa_e, kappa_o, j=0.0, kappa_tm=None,
                      delta_s=0.0, delta_as=0.0, delta_tm=None, delta_e=0.0):
    """Effective microwave susceptibility with the TM partner and idler eliminated.

    ``j``/``kappa_tm``/``delta_tm`` describe the TM mode switched on by ``case``.
    With g=0 this is the bare chi_e; with j -> infinity it tends to
    1/(chi_e^-1 -/+ g^2 chi_o) for the Stokes/anti-Stokes case.
    """
    p = _case_params(case, kappa_e, kappa_o, j, kappa_tm, delta_s, delta_as, delta_tm, delta_e)
    return _closed(ModeLabel.MICROWAVE, omega, g, p)


def closed_form_chi_o(case, probe, omega, g, kappa_e, kappa_o, j=0.0, kappa_tm=None,
                      delta_s=0.0, delta_as=0.0, delta_tm=None, delta_e=0.0):
    """Effective susceptibility of the Stokes or anti-Stokes TE mode."""
    label = _label(probe)
    if label is ModeLabel.MICROWAVE:
        raise DomainError("use closed_form_chi_e for the microwave probe")
    p = _case_params(case, kappa_e, kappa_o, j, kappa_tm, delta_s, delta_as, delta_tm, delta_e)
    return _closed(label, omega, g, p)


def closed_form_from_config(cfg: SystemConfig, g: float, omega, probe):
    """Closed-form chi_eff using every per-mode value of ``cfg``."""
    require_valid(cfg)
    d = cfg.detunings()
    p = dict(ks=cfg.stokes.kappa_total, kas=cfg.anti_stokes.kappa_total,
             kstm=cfg.stokes_tm.kappa_total, kastm=cfg.anti_stokes_tm.kappa_total,
             js=cfg.j_s, jas=cfg.j_as, ds=d["s"], das=d["as"], dstm=d["s_tm"], dastm=d["as_tm"],
             ke=cfg.microwave.kappa_total, de=d["e"])
    return _closed(_label(probe), omega, g, p)


# --- reflections -----------------------------------------------------------

def reflection(chi_eff, kappa_total, kappa_ext):
    """Amplitude reflection S = 1 - eta kappa chi_eff with eta = kappa_ext/kappa_total."""
    eta = kappa_ext / kappa_total
    return 1.0 - eta * kappa_total * np.asarray(chi_eff)


def _chi(cfg, g, omega, probe, method):
    if method == "matrix":
        return effective_susceptibility_matrix(cfg, g, omega, probe)
    if method == "closed":
        return closed_form_from_config(cfg, g, omega, probe)
    raise ValueError(f"unknown method {method!r}")


def probe_reflection(cfg: SystemConfig, g: float, omega, probe, method="matrix"):
    mode = probe_mode(cfg, probe)
    return reflection(_chi(cfg, g, omega, probe, method), mode.kappa_total, mode.kappa_ext)


def normalized_reflection(cfg: SystemConfig, g: float, omega, probe, method="matrix"):
    """R = |S_on/S_off|^2 with the off state evaluated from the same model at g=0."""
    s_on = probe_reflection(cfg, g, omega, probe, method)
    s_off = probe_reflection(cfg, 0.0, omega, probe, method)
    small = np.abs(s_off) < 1e-12
    if np.any(small):
        i = int(np.flatnonzero(np.atleast_1d(small))[0])
        raise DomainError(f"off-state reflection vanishes at grid index {i} "
                          "(critically coupled probe): R is undefined")
    return np.abs(s_on / s_off) ** 2


def spectrum_sweep(cfg: SystemConfig, g: float, omega_grid, probe, method="matrix") -> Spectrum:
    """S and R of ``probe`` over ``omega_grid`` in the rotating probe frame."""
    grid = np.asarray(omega_grid, dtype=float)
    s_on = probe_reflection(cfg, g, grid, probe, method)
    s_off = probe_reflection(cfg, 0.0, grid, probe, method)
    small = np.abs(s_off) < 1e-12
    if np.any(small):
        i = int(np.flatnonzero(small)[0])
        raise DomainError(f"off-state reflection vanishes at grid index {i}: R is undefined")
    return Spectrum(grid, s_on, np.abs(s_on / s_off) ** 2,
                    meta={"probe": _label(probe).value, "g": float(g), "C": float(cfg.cooperativity(g))})


# --- dynamical back-action -------------------------------------------------

def dba_shifts(case, g, kappa_o, kappa_o_tm, j, delta_s=0.0, delta_as=0.0) -> DbaShift:
    """Microwave optical-spring shift and linewidth change.

    Both terms are kept: the resonant TE branch and the TM-suppressed branch.
    The symmetric case is the Stokes expression with no TM coupling, where
    the two sideband contributions cancel at equal detunings.
    """
    case = Configuration(case)
    if case is Configuration.SYMMETRIC:
        return dba_shifts(Configuration.STOKES, g, kappa_o, kappa_o, 0.0, delta_s, delta_as)
    g2, ko, kt = g * g, kappa_o, kappa_o_tm
    if case is Configuration.STOKES:
        d = delta_as
        den = 8 * j**2 * (ko * kt - 4 * d**2) + (4 * d**2 + ko**2) * (kt**2 + 4 * d**2) + 16 * j**4
        d_omega = (-4 * g2 * delta_s / (ko**2 + 4 * delta_s**2)
                   + 4 * d * g2 * (kt**2 - 4 * j**2 + 4 * d**2) / den)
        d_kappa = (-4 * g2 * ko / (ko**2 + 4 * delta_s**2)
                   + 4 * g2 * (kt * (ko * kt + 4 * j**2) + 4 * d**2 * ko) / den)
    elif case is Configuration.ANTI_STOKES:
        d = delta_s
        den = 8 * j**2 * (ko * kt - 4 * d**2) + (ko**2 + 4 * d**2) * (kt**2 + 4 * d**2) + 16 * j**4
        d_omega = (4 * g2 * delta_as / (4 * delta_as**2 + ko**2)
                   - 4 * g2 * d * (kt**2 - 4 * j**2 + 4 * d**2) / den)
        d_kappa = (4 * g2 * ko / (4 * delta_as**2 + ko**2)
                   - 4 * g2 * (kt * (ko * kt + 4 * j**2) + 4 * ko * d**2) / den)
    return DbaShift(float(d_omega), float(d_kappa))


def dba_shifts_from_config(cfg: SystemConfig, g: float) -> DbaShift:
    d = cfg.detunings()
    if cfg.configuration is Configuration.SYMMETRIC:
        return dba_shifts("symmetric", g, cfg.kappa_o, cfg.kappa_o, 0.0, d["s"], d["as"])
    if cfg.configuration is Configuration.STOKES:
        return dba_shifts("stokes", g, cfg.kappa_o, cfg.anti_stokes_tm.kappa_total, cfg.j_as, d["s"], d["as"])
    return dba_shifts(cfg.configuration, g, cfg.kappa_o, cfg.stokes_tm.kappa_total, cfg.j_s, d["s"], d["as"])


def onres_microwave_R(delta_omega_e, delta_kappa_e, kappa_e, kappa_e_ext):
    """On-resonance normalized microwave reflection for given frequency/linewidth shifts."""
    k_eff = kappa_e + np.asarray(delta_kappa_e, dtype=float)
    if np.any(k_eff <= 0):
        raise SingularityError("effective microwave linewidth kappa_e + delta_kappa_e must be positive")
    off = 1.0 - 2.0 * kappa_e_ext / kappa_e
    if off == 0:
        raise DomainError("critically coupled microwave mode: R is undefined")
    on = 1.0 - kappa_e_ext / (k_eff / 2.0 + 1j * np.asarray(delta_omega_e))
    return np.abs(on / off) ** 2


def shifted_microwave_reflection(omega, kappa_e, kappa_e_ext, delta_omega_e=0.0, delta_kappa_e=0.0):
    """S_ee for a Lorentzian microwave mode whose centre and width are shifted."""
    chi = 1.0 / ((kappa_e + delta_kappa_e) / 2.0 - 1j * (np.asarray(omega) - delta_omega_e))
    return 1.0 - kappa_e_ext * chi


def shifted_microwave_R(omega, kappa_e, kappa_e_ext, delta_omega_e=0.0, delta_kappa_e=0.0):
    """Off-resonance generalisation of :func:`onres_microwave_R` used by the joint microwave fit."""
    on = shifted_microwave_reflection(omega, kappa_e, kappa_e_ext, delta_omega_e, delta_kappa_e)
    off = shifted_microwave_reflection(omega, kappa_e, kappa_e_ext)
    return np.abs(on / off) ** 2
