"""Domain types and derived quantities for a multimode cavity electro-optic device.

All rates and frequencies are angular (rad/s) once inside the package.
Files and the command line speak ordinary frequency (Hz, i.e. kappa/2pi)
and are converted exactly once on load, see :mod:`cavityeo.io`.

Detuning sign conventions
-------------------------
``stokes.detuning`` (delta_s) is the Stokes mode frequency minus the Stokes
sideband frequency, so a change of the microwave frequency relative to the
FSR (delta = Omega_e - FSR) moves it one-for-one.  ``anti_stokes.detuning``
(delta_as) is the anti-Stokes sideband minus the anti-Stokes mode, which again
moves one-for-one with Omega_e - FSR.  These are the signs under which the
analytic optical-spring expressions in :func:`cavityeo.response.dba_shifts`
hold.  ``microwave.detuning`` is the microwave mode frequency offset from the
microwave rotating frame.  TM modes carry their own detuning in the same sign
convention as their TE partner; ``None`` means "same as partner".
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import constants

TWO_PI = 2.0 * math.pi


class DomainError(ValueError):
    """A physical quantity is outside the domain where the model is defined."""


class ModeLabel(str, enum.Enum):
    STOKES = "stokes"
    PUMP = "pump"
    ANTI_STOKES = "anti_stokes"
    STOKES_TM = "stokes_tm"
    ANTI_STOKES_TM = "anti_stokes_tm"
    MICROWAVE = "microwave"


class Configuration(str, enum.Enum):
    SYMMETRIC = "symmetric"
    STOKES = "stokes"
    ANTI_STOKES = "anti_stokes"


@dataclass(frozen=True)
class ModeSpec:
    """One resonator mode.

    ``kappa_total`` and ``kappa_ext`` are energy decay rates in rad/s.  The
    prism overlap factor is assumed already folded into ``kappa_ext``.
    """

    kappa_total: float
    kappa_ext: float
    detuning: float | None = 0.0
    label: ModeLabel = ModeLabel.STOKES

    @property
    def kappa_int(self) -> float:
        return self.kappa_total - self.kappa_ext

    @property
    def eta(self) -> float:
        return self.kappa_ext / self.kappa_total

    def problems(self) -> list[str]:
        name = self.label.value
        out = []
        if not (self.kappa_total > 0 and math.isfinite(self.kappa_total)):
            out.append(f"{name}.kappa_total must be positive and finite (got {self.kappa_total!r})")
        if not (self.kappa_ext >= 0 and math.isfinite(self.kappa_ext)):
            out.append(f"{name}.kappa_ext must be non-negative and finite (got {self.kappa_ext!r})")
        elif self.kappa_ext > self.kappa_total:
            out.append(f"{name}.kappa_ext ({self.kappa_ext:g}) exceeds kappa_total ({self.kappa_total:g})")
        if self.detuning is not None and not math.isfinite(self.detuning):
            out.append(f"{name}.detuning must be finite")
        return out

    @classmethod
    def from_hz(cls, kappa_hz, kappa_ext_hz, detuning_hz=0.0, label=ModeLabel.STOKES):
        det = None if detuning_hz is None else TWO_PI * detuning_hz
        return cls(TWO_PI * kappa_hz, TWO_PI * kappa_ext_hz, det, ModeLabel(label))


@dataclass(frozen=True)
class SystemConfig:
    """The Stokes/pump/anti-Stokes TE triplet, two TM partners and the microwave mode."""

    stokes: ModeSpec
    pump_mode: ModeSpec
    anti_stokes: ModeSpec
    stokes_tm: ModeSpec
    anti_stokes_tm: ModeSpec
    microwave: ModeSpec
    g0: float
    j_s: float = 0.0
    j_as: float = 0.0
    configuration: Configuration = Configuration.SYMMETRIC

    @property
    def kappa_o(self) -> float:
        """Loss rate of the optical mode that sets the cooperativity."""
        if self.configuration is Configuration.ANTI_STOKES:
            return self.anti_stokes.kappa_total
        return self.stokes.kappa_total

    @property
    def kappa_e(self) -> float:
        return self.microwave.kappa_total

    def detunings(self) -> dict[str, float]:
        """Resolved detunings, TM ones falling back to their TE partner."""
        d_s = self.stokes.detuning or 0.0
        d_as = self.anti_stokes.detuning or 0.0
        d_stm = d_s if self.stokes_tm.detuning is None else self.stokes_tm.detuning
        d_astm = d_as if self.anti_stokes_tm.detuning is None else self.anti_stokes_tm.detuning
        return {"s": d_s, "as": d_as, "s_tm": d_stm, "as_tm": d_astm,
                "e": self.microwave.detuning or 0.0}

    def cooperativity(self, g: float) -> float:
        return cooperativity(g, self.kappa_o, self.kappa_e)

    def g_for_cooperativity(self, c: float) -> float:
        if c < 0:
            raise DomainError("cooperativity must be non-negative")
        return math.sqrt(c * self.kappa_o * self.kappa_e / 4.0)

    def with_detunings(self, delta_s=None, delta_as=None, delta_e=None) -> "SystemConfig":
        cfg = self
        if delta_s is not None:
            cfg = replace(cfg, stokes=replace(cfg.stokes, detuning=delta_s))
        if delta_as is not None:
            cfg = replace(cfg, anti_stokes=replace(cfg.anti_stokes, detuning=delta_as))
        if delta_e is not None:
            cfg = replace(cfg, microwave=replace(cfg.microwave, detuning=delta_e))
        return cfg

    @classmethod
    def build(cls, configuration, kappa_o, kappa_o_ext, kappa_e, kappa_e_ext, g0=0.0, j=0.0,
              kappa_tm=None, delta_s=0.0, delta_as=0.0, delta_tm=None, delta_e=0.0):
        """Shorthand for the common case of one shared optical TE loss.

        ``j`` and ``kappa_tm`` apply to the TM partner that the configuration
        switches on (anti-Stokes TM for the Stokes case and vice versa).
        """
        configuration = Configuration(configuration)
        kappa_tm = kappa_o if kappa_tm is None else kappa_tm
        j_s = j if configuration is Configuration.ANTI_STOKES else 0.0
        j_as = j if configuration is Configuration.STOKES else 0.0
        d_stm = delta_tm if configuration is Configuration.ANTI_STOKES else None
        d_astm = delta_tm if configuration is Configuration.STOKES else None
        return cls(
            stokes=ModeSpec(kappa_o, kappa_o_ext, delta_s, ModeLabel.STOKES),
            pump_mode=ModeSpec(kappa_o, kappa_o_ext, 0.0, ModeLabel.PUMP),
            anti_stokes=ModeSpec(kappa_o, kappa_o_ext, delta_as, ModeLabel.ANTI_STOKES),
            stokes_tm=ModeSpec(kappa_tm, 0.0, d_stm, ModeLabel.STOKES_TM),
            anti_stokes_tm=ModeSpec(kappa_tm, 0.0, d_astm, ModeLabel.ANTI_STOKES_TM),
            microwave=ModeSpec(kappa_e, kappa_e_ext, delta_e, ModeLabel.MICROWAVE),
            g0=g0, j_s=j_s, j_as=j_as, configuration=configuration,
        )


@dataclass(frozen=True)
class PumpDrive:
    peak_power: float
    wavelength: float
    photon_number: float
    g_enhanced: float

    @classmethod
    def from_power(cls, cfg: SystemConfig, power: float, wavelength: float = 1550e-9):
        n = intracavity_pump_photons(power, wavelength, cfg.pump_mode.kappa_total, cfg.pump_mode.kappa_ext)
        return cls(power, wavelength, n, cfg.g0 * math.sqrt(n))

    @classmethod
    def from_photons(cls, cfg: SystemConfig, photon_number: float, wavelength: float = 1550e-9):
        if photon_number < 0:
            raise DomainError("photon_number must be non-negative")
        return cls(float("nan"), wavelength, photon_number, cfg.g0 * math.sqrt(photon_number))


@dataclass(frozen=True)
class Issue:
    severity: str  # "error" or "warning"
    field: str
    message: str

    def __str__(self):
        return f"{self.severity}: {self.field}: {self.message}"


def cooperativity(g, kappa_o, kappa_e):
    """Multiphoton cooperativity 4 g^2 / (kappa_o kappa_e) for pump-enhanced coupling ``g``."""
    if not (np.all(np.asarray(kappa_o) > 0) and np.all(np.asarray(kappa_e) > 0)):
        raise DomainError("loss rates must be positive")
    return 4.0 * np.square(g) / (kappa_o * kappa_e)


def intracavity_pump_photons(power, wavelength, kappa_total, kappa_ext):
    """Steady-state photon number of a resonantly driven mode.

    n = 4 kappa_ext P / (hbar omega_p kappa_total^2), omega_p = 2 pi c / lambda.
    """
    if wavelength <= 0:
        raise DomainError("wavelength must be positive")
    if kappa_total <= 0:
        raise DomainError("kappa_total must be positive")
    if np.any(np.asarray(power) < 0):
        raise DomainError("power must be non-negative")
    omega_p = TWO_PI * constants.c / wavelength
    return 4.0 * kappa_ext * np.asarray(power, dtype=float) / (constants.hbar * omega_p * kappa_total**2)


def validate_config(cfg: SystemConfig, g: float | None = None) -> list[Issue]:
    """Report invariant violations; an empty list means the configuration is usable."""
    issues: list[Issue] = []
    for name in ("stokes", "pump_mode", "anti_stokes", "stokes_tm", "anti_stokes_tm", "microwave"):
        mode = getattr(cfg, name)
        for msg in mode.problems():
            issues.append(Issue("error", name, msg))
    for name in ("g0", "j_s", "j_as"):
        val = getattr(cfg, name)
        if not (math.isfinite(val) and val >= 0):
            issues.append(Issue("error", name, f"must be non-negative and finite (got {val!r})"))

    case = cfg.configuration
    if case is Configuration.SYMMETRIC and (cfg.j_s != 0 or cfg.j_as != 0):
        issues.append(Issue("error", "configuration", "symmetric case requires j_s = j_as = 0"))
    elif case is Configuration.STOKES and (cfg.j_s != 0 or not cfg.j_as > 0):
        issues.append(Issue("error", "configuration", "Stokes case requires j_s = 0 and j_as > 0"))
    elif case is Configuration.ANTI_STOKES and (cfg.j_as != 0 or not cfg.j_s > 0):
        issues.append(Issue("error", "configuration", "anti-Stokes case requires j_as = 0 and j_s > 0"))

    if g is not None and not any(i.severity == "error" for i in issues):
        if g < 0:
            issues.append(Issue("error", "g", "must be non-negative"))
        elif case is Configuration.STOKES:
            c = cfg.cooperativity(g)
            if c >= 1.0:
                issues.append(Issue("warning", "g",
                                    f"C = {c:.3g} >= 1 in the Stokes case: parametric instability"))
    return issues


def is_valid(cfg: SystemConfig, g: float | None = None) -> bool:
    return not any(i.severity == "error" for i in validate_config(cfg, g))


def require_valid(cfg: SystemConfig) -> None:
    errors = [i for i in validate_config(cfg) if i.severity == "error"]
    if errors:
        raise DomainError("invalid configuration: " + "; ".join(str(e) for e in errors))


def reference_device(configuration="symmetric", j_hz=26e6, kappa_tm_hz=7.6e6) -> SystemConfig:
    """Device values quoted for the experiment (kappa_o/2pi=26 MHz, kappa_e/2pi=10 MHz)."""
    configuration = Configuration(configuration)
    j = 0.0 if configuration is Configuration.SYMMETRIC else TWO_PI * j_hz
    return SystemConfig.build(configuration, TWO_PI * 26e6, TWO_PI * 10e6, TWO_PI * 10e6, TWO_PI * 4e6,
                              g0=TWO_PI * 37.0, j=j, kappa_tm=TWO_PI * kappa_tm_hz)
