"""Shared numerical primitives: periodic quadrature, root finding, ODE integration,
and periodic interpolation.

Every routine here is pure: configuration objects are frozen and results depend
only on the arguments, so concurrent use is safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .errors import (
    NonFiniteIntegrand,
    NonFiniteState,
    NonUniformGrid,
    NoConvergence,
    SingularJacobian,
    StepSizeUnderflow,
)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre rule over [0, 2*pi).

    Panels localise steep features of near-singular integrands; the rule is
    refined by panel doubling until successive estimates agree to abs_tol.
    """

    panels: int = 64
    points_per_panel: int = 8
    abs_tol: float = 1e-10

    def __post_init__(self):
        if self.panels < 8:
            raise ValueError("panels must be >= 8")
        if self.points_per_panel < 4:
            raise ValueError("points_per_panel must be >= 4")
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")


@dataclass(frozen=True)
class RootFindConfig:
    max_iters: int = 60
    step_tol: float = 1e-13
    residual_tol: float = 1e-10
    damping: float = 1.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not self.residual_tol > 0:
            raise ValueError("residual_tol must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")


@dataclass(frozen=True)
class OdeConfig:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    max_step: float = np.inf
    dense_output: bool = False

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")


def _gauss_nodes_weights(order):
    # leggauss is cached by numpy for repeated orders; scaling done per panel
    return np.polynomial.legendre.leggauss(order)


def integrate_segment(h, a, b, spec=None):
    """Integral of ``h`` over [a, b] by composite Gauss panels with doubling.

    The panel count starts proportional to the segment's share of the circle
    and doubles until two successive estimates agree to abs_tol.
    """
    spec = spec or QuadratureSpec()
    if b <= a:
        return 0.0
    frac = (b - a) / TWO_PI
    panels = max(4, int(np.ceil(spec.panels * frac)))
    x, w = _gauss_nodes_weights(spec.points_per_panel)

    def estimate(n_panels):
        edges = np.linspace(a, b, n_panels + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        vals = np.asarray(h(nodes), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise NonFiniteIntegrand("integrand is not finite at a quadrature node")
        return float(np.sum(vals.reshape(n_panels, -1) * w[None, :] * half[:, None]))

    result = estimate(panels)
    for _ in range(8):
        panels *= 2
        refined = estimate(panels)
        if abs(refined - result) <= spec.abs_tol:
            return refined
        result = refined
    return result


def integrate_periodic(h, spec=None):
    """Integral of a phase function ``h`` over one full cycle [0, 2*pi)."""
    return integrate_segment(h, 0.0, TWO_PI, spec)


def find_root_2d(F, x0, cfg=None):
    """Damped Newton iteration for a two-dimensional residual map.

    The Jacobian comes from central differences with step 1e-6*(1+|x|);
    steps that fail to reduce the residual norm (or that make F raise) are
    halved before being accepted.
    """
    cfg = cfg or RootFindConfig()
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (2,):
        raise ValueError("x0 must have exactly two components")

    fx = np.asarray(F(x), dtype=float)
    if not np.all(np.isfinite(fx)):
        raise NonFiniteState("residual is not finite at the initial point")
    norm = np.max(np.abs(fx))

    for _ in range(cfg.max_iters):
        if norm <= cfg.residual_tol:
            return x
        jac = np.empty((2, 2))
        for j in range(2):
            step = 1e-6 * (1.0 + abs(x[j]))
            xp = x.copy()
            xm = x.copy()
            xp[j] += step
            xm[j] -= step
            jac[:, j] = (np.asarray(F(xp), float) - np.asarray(F(xm), float)) / (2 * step)
        if not np.all(np.isfinite(jac)):
            raise SingularJacobian("finite-difference Jacobian is not finite")
        try:
            delta = np.linalg.solve(jac, -fx)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian("Jacobian is singular at the current iterate") from exc

        alpha = cfg.damping
        accepted = False
        for _ in range(30):
            trial = x + alpha * delta
            try:
                f_trial = np.asarray(F(trial), dtype=float)
            except Exception:
                alpha *= 0.5
                continue
            trial_norm = np.max(np.abs(f_trial))
            if np.isfinite(trial_norm) and trial_norm < norm:
                x, fx, norm = trial, f_trial, trial_norm
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if norm <= cfg.residual_tol:
                return x
            raise NoConvergence(
                "backtracking stalled without reducing the residual",
                best=x, residual=norm,
            )
        if np.max(np.abs(alpha * delta)) <= cfg.step_tol * (1.0 + np.max(np.abs(x))):
            break

    if norm <= cfg.residual_tol:
        return x
    raise NoConvergence("iteration budget exhausted", best=x, residual=norm)


def integrate_ode(rhs, y0, t_span, cfg=None, events=None, t_eval=None):
    """Adaptive RK45 propagation with dense output and event support.

    Thin wrapper over scipy's embedded 5(4) pair that maps failures onto the
    package's error types and rejects non-finite states.
    """
    cfg = cfg or OdeConfig()
    sol = solve_ivp(
        rhs,
        t_span,
        np.asarray(y0, dtype=float),
        method="RK45",
        rtol=cfg.rel_tol,
        atol=cfg.abs_tol,
        max_step=cfg.max_step,
        dense_output=cfg.dense_output,
        events=events,
        t_eval=t_eval,
    )
    if not sol.success and sol.status == -1:
        if np.all(np.isfinite(sol.y)):
            raise StepSizeUnderflow(sol.message)
        raise NonFiniteState(sol.message)
    if not np.all(np.isfinite(sol.y)):
        raise NonFiniteState("integration produced a non-finite state")
    return sol


class PeriodicSpline:
    """C2 cubic interpolant of uniform samples on [0, 2*pi), 2*pi-periodic."""

    def __init__(self, theta, values):
        theta = np.asarray(theta, dtype=float)
        values = np.asarray(values, dtype=float)
        if theta.ndim != 1 or theta.size < 16:
            raise NonUniformGrid("need at least 16 samples on a 1-D grid")
        if values.shape != theta.shape:
            raise NonUniformGrid("theta and value arrays must match")
        step = np.diff(theta)
        target = TWO_PI / theta.size
        if theta[0] != 0.0 or np.max(np.abs(step - target)) > 1e-9 * target:
            raise NonUniformGrid("grid must be uniform starting at 0, excluding 2*pi")
        closed_t = np.append(theta, TWO_PI)
        closed_v = np.append(values, values[0])
        self._spline = CubicSpline(closed_t, closed_v, bc_type="periodic")
        self._deriv = self._spline.derivative()
        self.theta = theta
        self.values = values

    def __call__(self, theta):
        return self._spline(np.mod(theta, TWO_PI))

    def derivative(self, theta):
        return self._deriv(np.mod(theta, TWO_PI))


def periodic_interpolant(theta, values):
    """Periodic cubic interpolant through uniform samples; exact at the samples."""
    return PeriodicSpline(theta, values)
