"""Lifted Markov dynamics on pair space (point, probability measure).

The mean-field flow mu_t together with its frozen linearization nu_t defines
a two-parameter Markov kernel on R^d x P whose laws are product measures
nu x delta_{mu}: the point coordinate follows the linearized dynamics driven
by the measure coordinate, which moves deterministically along the nonlinear
flow. This module evaluates that kernel with the grid PDE backend, applies
the generator of the measure coordinate to cylindrical test functions, and
measures Chapman-Kolmogorov and Ito-type consistency residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientSet
from .fpe import DensityPath, SolverConfig, solve_frozen_fpe, solve_nonlinear_fpe
from .measures import CylindricalFunction, GridDensity1D, InnerTest

__all__ = [
    "LiftedTestFunction",
    "ProductLaw",
    "apply_measure_generator",
    "apply_lifted_generator",
    "delta_on_grid",
    "kernel_law",
    "kernel_evaluate",
    "chapman_kolmogorov_residual",
    "heat_semigroup_ck_residual",
    "measure_flow_derivative_residual",
]


@dataclass(frozen=True)
class LiftedTestFunction:
    """Product test function G(x, mu) = g(x) * F(mu)."""

    point_part: InnerTest
    measure_part: CylindricalFunction

    def evaluate(self, x: np.ndarray, mu) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self.point_part.h(x), dtype=float) * self.measure_part.evaluate(mu)


@dataclass(frozen=True)
class ProductLaw:
    """Law nu x delta_mu on pair space: point marginal nu, measure atom mu."""

    point_law: GridDensity1D
    measure_atom: object

    def integrate(self, G) -> float:
        """int G d(nu x delta_mu) = int G(y, mu) nu(dy)."""
        centers = self.point_law.centers[:, None]
        vals = np.asarray(_eval_pair(G, centers, self.measure_atom), dtype=float)
        return float(self.point_law.dx * np.dot(self.point_law.values, vals))


def _eval_pair(G, x, mu):
    if isinstance(G, LiftedTestFunction):
        return G.evaluate(x, mu)
    return G(x, mu)


def apply_measure_generator(F: CylindricalFunction, coeffs: CoefficientSet, t: float, mu) -> float:
    """Generator of the measure coordinate on a cylindrical function
    F(mu) = f(mu(h_1), ..., mu(h_n)):

        sum_i d_i f(...) * int [ 1/2 sigma sigma^T : hess h_i + b . grad h_i ] dmu
    """
    levels = np.array([mu.integrate(h.h) for h in F.inner])
    partials = np.atleast_1d(np.asarray(F.outer_grad(levels), dtype=float))
    total = 0.0
    for dfi, h in zip(partials, F.inner):
        if dfi == 0.0:
            continue

        def Lh(X, h=h):
            X = np.atleast_2d(X)
            b = np.asarray(coeffs.b(t, X, mu), dtype=float)
            a = coeffs.diffusion_matrix(t, X, mu)
            grad = np.asarray(h.grad(X), dtype=float)
            hess = np.asarray(h.hess(X), dtype=float)
            return 0.5 * np.einsum("nij,nij->n", a, hess) + np.einsum("ni,ni->n", b, grad)

        total += dfi * mu.integrate(Lh)
    return total


def apply_lifted_generator(
    G: LiftedTestFunction, coeffs: CoefficientSet, t: float, x, mu
) -> float:
    """Sum of the frozen point generator acting on g and the measure
    generator acting on F, for G(x, mu) = g(x) F(mu)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    g = G.point_part
    b = np.asarray(coeffs.b_bar(t, x, mu), dtype=float)
    s = np.asarray(coeffs.sigma_bar(t, x, mu), dtype=float)
    a = np.einsum("nik,njk->nij", s, s)
    grad = np.asarray(g.grad(x), dtype=float)
    hess = np.asarray(g.hess(x), dtype=float)
    point_term = float(
        (0.5 * np.einsum("nij,nij->n", a, hess) + np.einsum("ni,ni->n", b, grad))[0]
    )
    Fval = G.measure_part.evaluate(mu)
    gval = float(np.asarray(g.h(x), dtype=float)[0])
    return point_term * Fval + gval * apply_measure_generator(G.measure_part, coeffs, t, mu)


def delta_on_grid(x: float, like: GridDensity1D) -> GridDensity1D:
    """Point mass at x as a two-cell density whose mean is exactly x."""
    c = like.centers
    if not (c[0] <= x <= c[-1]):
        raise ValueError(f"x={x} outside grid centers [{c[0]}, {c[-1]}]")
    i = int(np.clip(np.searchsorted(c, x) - 1, 0, like.n_cells - 2))
    theta = (c[i + 1] - x) / like.dx
    theta = float(np.clip(theta, 0.0, 1.0))
    v = np.zeros(like.n_cells)
    v[i] = theta / like.dx
    v[i + 1] = (1.0 - theta) / like.dx
    return GridDensity1D(like.x_min, like.dx, v)


def kernel_law(
    coeffs: CoefficientSet,
    s: float,
    t: float,
    x: float,
    zeta: GridDensity1D,
    cfg: SolverConfig,
    flow: DensityPath | None = None,
) -> ProductLaw:
    """Kernel value at (s, x, zeta) over horizon t as a product law.

    The measure coordinate moves to the nonlinear flow started from zeta at
    time s; the point coordinate law is the frozen linear flow started from
    a point mass at x. Pass a precomputed ``flow`` (covering [s, t], started
    from zeta) to share it across evaluations.
    """
    if flow is None:
        flow = solve_nonlinear_fpe(zeta, coeffs, s, t, cfg)
    elif not flow.covers(s, t):
        raise ValueError("provided flow does not cover [s, t]")
    nu0 = delta_on_grid(x, zeta)
    nu = solve_frozen_fpe(nu0, flow, coeffs, cfg, s=s, t_end=t)
    return ProductLaw(point_law=nu.states[-1], measure_atom=flow.state_at(t))


def kernel_evaluate(
    G,
    coeffs: CoefficientSet,
    s: float,
    t: float,
    x: float,
    zeta: GridDensity1D,
    cfg: SolverConfig,
    flow: DensityPath | None = None,
) -> float:
    return kernel_law(coeffs, s, t, x, zeta, cfg, flow=flow).integrate(G)


def _stratified_nodes(nu: GridDensity1D, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Split a density into equal-mass nodes at stratum-median quantiles."""
    p = (np.arange(n_nodes) + 0.5) / n_nodes
    return nu.quantile(p), np.full(n_nodes, 1.0 / n_nodes)


def chapman_kolmogorov_residual(
    G,
    coeffs: CoefficientSet,
    s: float,
    r: float,
    t: float,
    x: float,
    zeta: GridDensity1D,
    cfg: SolverConfig,
    quad_points: int = 64,
) -> float:
    """| P_{s,t} G(x, zeta) - int P_{r,t} G(y, mu_{s,r}) P_{s,r}(x, zeta; dy) |.

    The intermediate point law is split into equal-mass quadrature nodes;
    each node restarts the frozen flow at time r along the shared nonlinear
    flow (the measure coordinate is deterministic, so its restart is exact).
    """
    if not (s < r < t):
        raise ValueError("need s < r < t")
    flow = solve_nonlinear_fpe(zeta, coeffs, s, t, cfg)
    direct = kernel_evaluate(G, coeffs, s, t, x, zeta, cfg, flow=flow)

    mid = kernel_law(coeffs, s, r, x, zeta, cfg, flow=flow)
    ys, ws = _stratified_nodes(mid.point_law, quad_points)
    composed = 0.0
    for y, w in zip(ys, ws):
        composed += w * kernel_evaluate(G, coeffs, r, t, float(y), zeta, cfg, flow=flow)
    return abs(direct - composed)


def heat_semigroup_ck_residual(
    h,
    s: float,
    r: float,
    t: float,
    x: float,
    diffusion: float = 1.0,
    n_quad: int = 80,
) -> float:
    """Chapman-Kolmogorov defect of the exact Gaussian semigroup,

        | N(x, a(t-s))(h) - int N(y, a(t-r))(h) N(x, a(r-s))(dy) |,

    by Gauss-Hermite quadrature. For smooth h this is pure quadrature error.
    """
    if not (s < r < t):
        raise ValueError("need s < r < t")
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_quad)
    weights = weights / np.sqrt(2 * np.pi)

    def semigroup(y, tau):
        return float(np.dot(weights, h(y + np.sqrt(diffusion * tau) * nodes)))

    direct = semigroup(x, t - s)
    inner = np.array([semigroup(x + np.sqrt(diffusion * (r - s)) * z, t - r) for z in nodes])
    composed = float(np.dot(weights, inner))
    return abs(direct - composed)


def measure_flow_derivative_residual(
    F: CylindricalFunction,
    coeffs: CoefficientSet,
    path: DensityPath,
    t: float,
    dt_fd: float,
) -> tuple[float, float, float]:
    """Compare the central-difference time derivative of t -> F(mu_t) along a
    stored flow with the measure generator. Returns (fd, generator, residual).
    """
    mu_m = path.state_at(t - dt_fd, tol=dt_fd * 0.51)
    mu_p = path.state_at(t + dt_fd, tol=dt_fd * 0.51)
    fd = (F.evaluate(mu_p) - F.evaluate(mu_m)) / (2 * dt_fd)
    gen = apply_measure_generator(F, coeffs, t, path.state_at(t, tol=dt_fd * 0.51))
    return fd, gen, abs(fd - gen)
