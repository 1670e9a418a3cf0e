"""Bounded nonlinear least squares with linearised uncertainties."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import optimize, stats


class Role(str, enum.Enum):
    FREE = "free"
    SHARED = "shared"  # free, but used by several datasets
    FIXED = "fixed"


class FitStatus(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    SINGULAR = "singular"


class FitError(RuntimeError):
    """A fit could not be set up or evaluated."""


@dataclass(frozen=True)
class Parameter:
    name: str
    initial: float
    lower: float = -math.inf
    upper: float = math.inf
    role: Role = Role.FREE
    scale: float | None = None  # typical magnitude; defaults from initial/bounds

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        if not self.lower <= self.initial <= self.upper:
            raise FitError(f"initial value of {self.name} ({self.initial:g}) outside bounds "
                           f"[{self.lower:g}, {self.upper:g}]")

    @property
    def is_free(self) -> bool:
        return self.role is not Role.FIXED

    def typical_scale(self) -> float:
        if self.scale:
            return abs(self.scale)
        if self.initial != 0:
            return abs(self.initial)
        width = self.upper - self.lower
        if math.isfinite(width) and width > 0:
            return width / 10
        return 1.0


@dataclass
class FitProblem:
    """``residual`` maps a dict of all parameter values to a residual vector."""

    residual: Callable[[Mapping[str, float]], np.ndarray]
    parameters: Sequence[Parameter]
    absolute_sigma: bool = False  # residuals already divided by known noise sigma

    def __post_init__(self):
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise FitError("parameter names must be unique")
        if not any(p.is_free for p in self.parameters):
            raise FitError("at least one parameter must be free")

    @property
    def free(self) -> list[Parameter]:
        return [p for p in self.parameters if p.is_free]

    def values(self, free_values) -> dict[str, float]:
        out = {p.name: p.initial for p in self.parameters}
        for p, v in zip(self.free, free_values):
            out[p.name] = float(v)
        return out

    def evaluate(self, free_values) -> np.ndarray:
        r = np.asarray(self.residual(self.values(free_values)), dtype=float).ravel()
        return r


@dataclass(frozen=True)
class FitResult:
    names: list[str]
    estimates: dict[str, float]
    stderr: dict[str, float]
    confidence_intervals: dict[str, tuple[float, float]]
    covariance: np.ndarray
    cost: float
    status: FitStatus
    cost_trace: list[float]
    n_iter: int
    n_residuals: int
    n_eval: int = 0
    null_directions: list[dict[str, float]] = field(default_factory=list)
    message: str = ""

    @property
    def dof(self) -> int:
        return self.n_residuals - len(self.names)

    @property
    def converged(self) -> bool:
        return self.status is FitStatus.CONVERGED

    def __getitem__(self, name):
        return self.estimates[name]

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "message": self.message,
            "estimates": self.estimates,
            "stderr": self.stderr,
            "confidence_intervals_95": {k: list(v) for k, v in self.confidence_intervals.items()},
            "covariance": {"names": self.names, "matrix": self.covariance.tolist()},
            "cost": self.cost,
            "cost_trace": self.cost_trace,
            "n_iter": self.n_iter,
            "n_eval": self.n_eval,
            "n_residuals": self.n_residuals,
            "null_directions": self.null_directions,
        }


def _jacobian(fun, u, r0, lo, hi, rel_step):
    """Central differences in scaled coordinates, one-sided against a bound."""
    jac = np.empty((r0.size, u.size))
    for k in range(u.size):
        h = rel_step * max(1.0, abs(u[k]))
        up, dn = u.copy(), u.copy()
        up[k] = u[k] + h
        dn[k] = u[k] - h
        if up[k] > hi[k]:
            up[k] = u[k]
        if dn[k] < lo[k]:
            dn[k] = u[k]
        span = up[k] - dn[k]
        if span == 0:
            jac[:, k] = 0.0
            continue
        r_up = r0 if up[k] == u[k] else fun(up)
        r_dn = r0 if dn[k] == u[k] else fun(dn)
        jac[:, k] = (r_up - r_dn) / span
    return jac


def least_squares(problem: FitProblem, max_iter=200, ftol=1e-12, xtol=1e-12, gtol=1e-12,
                  rel_step=1e-6, singular_rcond=1e-10, confidence=0.95) -> FitResult:
    """Minimise the sum of squared residuals of ``problem``.

    The iterations are scipy's trust-region reflective solver on parameters
    scaled by their typical magnitude, with a central-difference Jacobian
    (relative step ``rel_step``).  ``max_iter`` bounds the number of
    trial steps.  The covariance is s^2 (J^T J)^-1 with s^2 = cost / dof
    (or 1 with ``absolute_sigma``).
    """
    free = problem.free
    scale = np.array([p.typical_scale() for p in free])
    lo = np.array([p.lower for p in free]) / scale
    hi = np.array([p.upper for p in free]) / scale
    u0 = np.array([p.initial for p in free]) / scale

    def raw(uu):
        r = problem.evaluate(uu * scale)
        return r if np.all(np.isfinite(r)) else None

    r0 = raw(u0)
    if r0 is None:
        raise FitError("residual is not finite at the initial point")
    if r0.size < u0.size:
        raise FitError(f"{r0.size} residuals for {u0.size} free parameters")
    trace = [float(r0 @ r0)]
    penalty = np.full_like(r0, 1e100)

    def fun(uu):
        r = raw(uu)
        if r is None:
            return penalty
        cost = float(r @ r)
        if cost < trace[-1]:  # a trial step is accepted exactly when it lowers the cost
            trace.append(cost)
        return r

    def safe(uu):
        r = raw(uu)
        return penalty if r is None else r

    def jac(uu):
        return _jacobian(safe, uu, safe(uu), lo, hi, rel_step)

    sol = optimize.least_squares(fun, np.clip(u0, lo, hi), jac=jac, bounds=(lo, hi), method="trf",
                                 x_scale=1.0, ftol=ftol, xtol=xtol, gtol=gtol, max_nfev=max_iter)
    u = sol.x
    r = safe(u)
    cost = float(r @ r)
    if sol.status == 0:
        status, message = FitStatus.MAX_ITER, "iteration limit reached"
    elif sol.status < 0:
        raise FitError(f"optimizer failed: {sol.message}")
    else:
        status, message = FitStatus.CONVERGED, sol.message
    out = _summarise(problem, free, u * scale, scale, r, cost, jac(u), status, message, trace,
                     len(trace) - 1, singular_rcond, confidence)
    return replace(out, n_eval=int(sol.nfev))


def _summarise(problem, free, p, scale, r, cost, jac, status, message, trace, n_iter, rcond, confidence):
    names = [q.name for q in free]
    m, n = jac.shape
    dof = m - n
    s2 = 1.0 if problem.absolute_sigma else (cost / dof if dof > 0 else math.nan)
    _, sv, vt = np.linalg.svd(jac, full_matrices=False)
    null = []
    if sv[0] == 0 or sv[-1] < rcond * sv[0]:
        status = FitStatus.SINGULAR
        message = "Jacobian is rank deficient"
        for s, v in zip(sv, vt):
            if sv[0] == 0 or s < rcond * sv[0]:
                vec = v * scale
                vec = vec / np.linalg.norm(vec)
                null.append({nm: float(x) for nm, x in zip(names, vec)})
    keep = sv > rcond * sv[0] if sv[0] > 0 else np.zeros(sv.shape, bool)
    inv = (vt[keep].T / sv[keep] ** 2) @ vt[keep]
    cov = s2 * inv * np.outer(scale, scale)
    err = np.sqrt(np.maximum(np.diag(cov), 0.0))
    if null:
        for d in null:
            for i, nm in enumerate(names):
                if abs(d[nm]) > 1e-6:
                    err[i] = math.inf
    tq = stats.t.ppf(0.5 + confidence / 2, dof) if dof > 0 else math.nan
    estimates = problem.values(p)
    cis = {nm: (float(p[i] - tq * err[i]), float(p[i] + tq * err[i])) for i, nm in enumerate(names)}
    return FitResult(names, estimates, {nm: float(e) for nm, e in zip(names, err)}, cis, cov, cost,
                     status, trace, n_iter, m, null_directions=null, message=message)


def multistart(problem: FitProblem, starts: Sequence[Mapping[str, float]], probe_iter=8, **options) -> FitResult:
    """Short runs of :func:`least_squares` from every start, then a full run from the best."""
    best, best_params = None, None
    for start in starts:
        params = []
        for p in problem.parameters:
            init = float(np.clip(start.get(p.name, p.initial), p.lower, p.upper))
            params.append(Parameter(p.name, init, p.lower, p.upper, p.role, p.scale or p.typical_scale()))
        try:
            res = least_squares(FitProblem(problem.residual, params, problem.absolute_sigma),
                                **dict(options, max_iter=probe_iter))
        except FitError:
            continue
        if best is None or res.cost < best.cost:
            best, best_params = res, params
    if best is None:
        raise FitError("no start point produced a finite residual")
    if best.status is FitStatus.CONVERGED:
        return best
    params = [replace(p, initial=float(np.clip(best.estimates[p.name], p.lower, p.upper)))
              for p in best_params]
    return least_squares(FitProblem(problem.residual, params, problem.absolute_sigma), **options)


def joint_residual(blocks: Sequence[Callable[[Mapping[str, float]], np.ndarray]]):
    """Concatenate per-dataset residual functions that read from one parameter dict."""
    def residual(values):
        return np.concatenate([np.asarray(b(values), dtype=float).ravel() for b in blocks])
    return residual
