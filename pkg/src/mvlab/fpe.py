"""Conservative 1-D finite-volume solver for nonlinear Fokker-Planck
equations of the form

    du/dt = 1/2 d^2/dx^2 (a(t,x,mu) u) - d/dx (v(t,x,mu) u)

with a = sigma sigma^T and v = b evaluated on the current density
(Nemytskii or mean-field), plus the frozen linear variant where the
coefficients see a stored flow instead of the evolving state.

The scheme is flux-form with no-flux boundaries: differences of
A = a*u for the diffusion term (conservative for porous-medium
nonlinearities, where A = beta(u)) and upwinding for the transport term.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .coefficients import CoefficientSet
from .measures import GridDensity1D, InnerTest

__all__ = [
    "DensityPath",
    "SolverConfig",
    "ConservationLog",
    "CFLError",
    "NonlinearSolveError",
    "solve_nonlinear_fpe",
    "solve_frozen_fpe",
    "fpe_weak_residual",
    "total_clipped_mass",
]

MASS_STEP_TOL = 1e-12
CLIP_FLOOR = -1e-13
CLIP_BUDGET = 1e-6

_total_clipped = 0.0


def total_clipped_mass() -> float:
    """Cumulative density mass clipped by every solve in this process."""
    return _total_clipped


class CFLError(RuntimeError):
    pass


class NonlinearSolveError(RuntimeError):
    pass


@dataclass
class ConservationLog:
    max_mass_drift: float = 0.0
    clipped_mass: float = 0.0
    worst_undershoot: float = 0.0
    picard_iterations_max: int = 0

    def to_dict(self) -> dict:
        return {
            "max_mass_drift": self.max_mass_drift,
            "clipped_mass": self.clipped_mass,
            "worst_undershoot": self.worst_undershoot,
            "picard_iterations_max": self.picard_iterations_max,
        }


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    scheme: str = "semi_implicit"  # or "explicit"
    cfl_safety: float = 0.9
    boundary: str = "no_flux"
    max_picard: int = 20
    picard_tol: float = 1e-10

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.scheme not in ("explicit", "semi_implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not (0 < self.cfl_safety <= 1):
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.boundary != "no_flux":
            raise ValueError("only no_flux boundaries are supported")


@dataclass
class DensityPath:
    """Solution path on a shared grid, sampled at strictly increasing times."""

    times: np.ndarray
    states: list[GridDensity1D]
    log: ConservationLog = field(default_factory=ConservationLog)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.states):
            raise ValueError("times/states length mismatch")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def state_at(self, t: float, tol: float | None = None) -> GridDensity1D:
        """State at the recorded time nearest to t."""
        i = int(np.argmin(np.abs(self.times - t)))
        if tol is not None and abs(self.times[i] - t) > tol:
            raise ValueError(f"no recorded state within {tol} of t={t}")
        return self.states[i]

    def covers(self, s: float, t: float, slack: float = 1e-9) -> bool:
        return self.t_start <= s + slack and t <= self.t_end + slack

    def to_csv(self) -> str:
        lines = ["t,x,u"]
        for t, st in zip(self.times, self.states):
            for x, u in zip(st.centers, st.values):
                lines.append(f"%.17g,%.17g,%.17g" % (t, x, u))
        return "\n".join(lines) + "\n"

    def manifest(self) -> dict:
        g = self.states[0]
        return {
            "x_min": g.x_min,
            "dx": g.dx,
            "n_cells": g.n_cells,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "n_records": len(self.states),
            "conservation": self.log.to_dict(),
        }


def _unchecked_grid(x_min: float, dx: float, values: np.ndarray) -> GridDensity1D:
    # intermediate iterates can carry tiny negative values / mass drift that
    # the public constructor rejects; coefficients still need a density view
    g = object.__new__(GridDensity1D)
    object.__setattr__(g, "x_min", x_min)
    object.__setattr__(g, "dx", dx)
    object.__setattr__(g, "values", values)
    return g


def _interface_coeffs(a: np.ndarray, v: np.ndarray, dx: float):
    """Flux G_{i+1/2} = p_i u_i + q_i u_{i+1} for interfaces i = 0..M-2."""
    vi = 0.5 * (v[:-1] + v[1:])
    vp = np.maximum(vi, 0.0)
    vm = np.minimum(vi, 0.0)
    p = vp + a[:-1] / (2 * dx)
    q = vm - a[1:] / (2 * dx)
    return p, q


def _explicit_step(u, a, v, dx, dt):
    p, q = _interface_coeffs(a, v, dx)
    G = p * u[:-1] + q * u[1:]
    out = u.copy()
    out[:-1] -= dt / dx * G
    out[1:] += dt / dx * G
    return out


def _implicit_step(u_old, a, v, dx, dt):
    M = u_old.shape[0]
    p, q = _interface_coeffs(a, v, dx)
    c = dt / dx
    diag = np.ones(M)
    diag[:-1] += c * p
    diag[1:] -= c * q
    upper = np.zeros(M)
    upper[1:] = c * q  # solve_banded layout: upper[j] multiplies u_j in row j-1
    lower = np.zeros(M)
    lower[:-1] = -c * p
    ab = np.vstack([upper, diag, lower])
    return solve_banded((1, 1), ab, u_old)


def _check_cfl(a, v, dx, dt, safety):
    amax = float(np.max(a))
    vmax = float(np.max(np.abs(v)))
    limit = np.inf
    if amax > 0:
        limit = min(limit, dx * dx / amax)
    if vmax > 0:
        limit = min(limit, dx / vmax)
    if dt > safety * limit:
        raise CFLError(
            f"explicit step dt={dt:g} violates the CFL bound {safety * limit:g} "
            f"(max diffusion {amax:g}, max drift {vmax:g}, dx={dx:g})"
        )


def _eval_fields(coeffs: CoefficientSet, t: float, centers2d: np.ndarray, mu, bar: bool):
    bfun = coeffs.b_bar if bar else coeffs.b
    sfun = coeffs.sigma_bar if bar else coeffs.sigma
    v = np.asarray(bfun(t, centers2d, mu), dtype=float)[:, 0]
    s = np.asarray(sfun(t, centers2d, mu), dtype=float)
    a = np.einsum("nij,nij->n", s, s)
    return a, v


def _clip_and_log(u, log: ConservationLog) -> np.ndarray:
    global _total_clipped
    neg = u < 0
    if np.any(neg):
        undershoot = float(u[neg].min())
        log.worst_undershoot = min(log.worst_undershoot, undershoot)
        clipped = float(-u[neg].sum())
        log.clipped_mass += clipped
        _total_clipped += clipped
        if log.clipped_mass > CLIP_BUDGET:
            raise NonlinearSolveError(
                f"cumulative clipped mass {log.clipped_mass:.3e} exceeds budget {CLIP_BUDGET:g}"
            )
        u = np.maximum(u, 0.0)
        u = u * (1.0 + clipped / max(u.sum(), 1e-300))
    return u


def _march(
    u0: GridDensity1D,
    s: float,
    t_end: float,
    cfg: SolverConfig,
    fields_at: Callable,
    record_every: int = 1,
) -> DensityPath:
    """Shared time loop; ``fields_at(t, u_view) -> (a, v)`` supplies the
    per-step diffusion and drift fields on cell centers."""
    dx = u0.dx
    u = u0.values * dx  # work with cell masses; conservation is then telescoping
    mass0 = u.sum()
    n_steps = max(int(round((t_end - s) / cfg.dt)), 0)
    if abs(s + n_steps * cfg.dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        n_steps = int(np.ceil((t_end - s) / cfg.dt - 1e-12))
    log = ConservationLog()
    times = [s]
    states = [u0]
    t = s
    for k in range(n_steps):
        dt = min(cfg.dt, t_end - t)
        view = _unchecked_grid(u0.x_min, dx, u / dx)
        a, v = fields_at(t, view)
        if cfg.scheme == "explicit":
            _check_cfl(a, v, dx, dt, cfg.cfl_safety)
            u_new = _explicit_step(u, a, v, dx, dt)
        else:
            u_new = _implicit_step(u, a, v, dx, dt)
            for it in range(cfg.max_picard):
                a2, v2 = fields_at(t + dt, _unchecked_grid(u0.x_min, dx, u_new / dx))
                resid = u_new - u + dt / dx * _flux_divergence(u_new, a2, v2, dx)
                log.picard_iterations_max = max(log.picard_iterations_max, it + 1)
                if float(np.max(np.abs(resid))) <= cfg.picard_tol:
                    break
                u_new = _implicit_step(u, a2, v2, dx, dt)
            else:
                a2, v2 = fields_at(t + dt, _unchecked_grid(u0.x_min, dx, u_new / dx))
                resid = u_new - u + dt / dx * _flux_divergence(u_new, a2, v2, dx)
                resid_norm = float(np.max(np.abs(resid)))
                if resid_norm > 1e3 * cfg.picard_tol:
                    raise NonlinearSolveError(
                        f"Picard iteration did not converge at t={t:g} "
                        f"(residual {resid_norm:.3e} after {cfg.max_picard} iterations)"
                    )
        drift = abs(u_new.sum() - mass0)
        log.max_mass_drift = max(log.max_mass_drift, drift)
        if drift > MASS_STEP_TOL:
            raise NonlinearSolveError(f"mass drift {drift:.3e} exceeds {MASS_STEP_TOL:g} at t={t:g}")
        if float(u_new.min()) < CLIP_FLOOR:
            # genuine scheme failure, not roundoff
            raise NonlinearSolveError(
                f"undershoot {float(u_new.min()):.3e} below {CLIP_FLOOR:g} at t={t:g}"
            )
        u = _clip_and_log(u_new, log)
        t = s + (k + 1) * cfg.dt if k + 1 < n_steps else t_end
        if (k + 1) % record_every == 0 or k + 1 == n_steps:
            times.append(t)
            states.append(GridDensity1D(u0.x_min, dx, (u / u.sum()) / dx))
    path = DensityPath(np.asarray(times), states)
    path.log = log
    return path


def _flux_divergence(u, a, v, dx):
    p, q = _interface_coeffs(a, v, dx)
    G = p * u[:-1] + q * u[1:]
    out = np.zeros_like(u)
    out[:-1] += G
    out[1:] -= G
    return out


def solve_nonlinear_fpe(
    u0: GridDensity1D,
    coeffs: CoefficientSet,
    s: float,
    t_end: float,
    cfg: SolverConfig,
    record_every: int = 1,
) -> DensityPath:
    """March the nonlinear equation: coefficients see the evolving density."""
    if t_end < s:
        raise ValueError("t_end must be >= s")

    centers2d = u0.centers[:, None]

    def fields_at(t, view):
        return _eval_fields(coeffs, t, centers2d, view, bar=False)

    return _march(u0, s, t_end, cfg, fields_at, record_every)


def solve_frozen_fpe(
    nu0: GridDensity1D,
    flow: DensityPath,
    coeffs_bar: CoefficientSet,
    cfg: SolverConfig,
    s: float | None = None,
    t_end: float | None = None,
    record_every: int = 1,
) -> DensityPath:
    """March the linear equation whose coefficients see the stored flow."""
    s = flow.t_start if s is None else s
    t_end = flow.t_end if t_end is None else t_end
    if not flow.covers(s, t_end):
        raise ValueError(f"flow covers [{flow.t_start}, {flow.t_end}], not [{s}, {t_end}]")
    ref = flow.states[0]
    if ref.n_cells != nu0.n_cells or abs(ref.x_min - nu0.x_min) > 1e-12 or abs(ref.dx - nu0.dx) > 1e-15:
        raise ValueError("nu0 grid does not match the flow grid")

    centers2d = nu0.centers[:, None]

    def fields_at(t, view):
        frozen = flow.state_at(t)
        return _eval_fields(coeffs_bar, t, centers2d, frozen, bar=True)

    return _march(nu0, s, t_end, cfg, fields_at, record_every)


def fpe_weak_residual(
    path: DensityPath,
    coeffs: CoefficientSet,
    h: InnerTest,
    flow: DensityPath | None = None,
    bar: bool = False,
) -> np.ndarray:
    """Residual of the weak formulation at each recorded time:

        mu_t(h) - mu_s(h) - int_s^t int (1/2 a h'' + v h') dmu_r dr

    by trapezoidal quadrature over the recorded times. For frozen paths pass
    the driving flow so coefficients are evaluated on it.
    """
    centers2d = path.states[0].centers[:, None]
    hp = np.asarray(h.grad(centers2d), dtype=float)[:, 0]
    hpp = np.asarray(h.hess(centers2d), dtype=float)[:, 0, 0]

    def generator_integral(t, state):
        mu_for_coeffs = flow.state_at(t) if flow is not None else state
        a, v = _eval_fields(coeffs, t, centers2d, mu_for_coeffs, bar=bar)
        integrand = 0.5 * a * hpp + v * hp
        return float(state.dx * np.dot(state.values, integrand))

    hv = np.asarray(h.h(centers2d), dtype=float)
    mu_h = np.array([float(st.dx * np.dot(st.values, hv)) for st in path.states])
    gen = np.array([generator_integral(t, st) for t, st in zip(path.times, path.states)])
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (gen[1:] + gen[:-1]) * np.diff(path.times))])
    return mu_h - mu_h[0] - integral
